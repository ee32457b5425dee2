"""Small cohort builders shared by the unit tests."""

import numpy as np

from psmatch.cohort import BINARY, CONTINUOUS, OUTCOME, TREATMENT, Cohort, CovariateSpec


def small_schema(n_binary=1, n_continuous=1):
    cols = [CovariateSpec(f"b{i}", BINARY) for i in range(n_binary)]
    cols += [CovariateSpec(f"x{i}", CONTINUOUS) for i in range(n_continuous)]
    cols += [CovariateSpec("t", BINARY, TREATMENT), CovariateSpec("y", BINARY, OUTCOME)]
    return tuple(cols)


def random_cohort(rng, n=40, n_binary=1, n_continuous=1):
    schema = small_schema(n_binary, n_continuous)
    b = (rng.random((n, n_binary)) < 0.4).astype(float)
    x = rng.normal(size=(n, n_continuous))
    t = np.zeros(n)
    t[: n // 2] = 1
    rng.shuffle(t)
    y = (rng.random(n) < 0.5).astype(float)
    y[:2] = [0, 1]
    return Cohort(schema, np.column_stack([b, x, t, y]))
