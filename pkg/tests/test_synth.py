import hashlib
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from psmatch.balance import balance_rows
from psmatch.cohort import BINARY, CONTINUOUS
from psmatch.synth import (
    CovariateDraw,
    GeneratorConfig,
    InvalidConfig,
    bias_study,
    confounded_config,
    generate,
    glioma_like_config,
    naive_difference,
)

# Naive treated-minus-control outcome difference for confounded_config(strength
# 1.5, no effect): X ~ N(0,1), P(T=1|x) = P(Y=1|x) = expit(1.5 x). Frozen from an
# independent computation before the generator was written:
# quadrature of E[Y|T=1] - E[Y|T=0] gives 0.29309, a 10^6-draw numpy
# simulation gives 0.29128.
STRONG_CONFOUNDING_NAIVE_BIAS = 0.29309


def checksum(cohort):
    return hashlib.sha256(cohort.to_csv().encode()).hexdigest()


def test_regeneration_is_identical():
    cfg = glioma_like_config(seed=42)
    (a, ta), (b, tb) = generate(cfg), generate(cfg)
    assert checksum(a) == checksum(b)
    assert ta == tb
    assert checksum(generate(replace(cfg, seed=43))[0]) != checksum(a)


def test_randomised_design():
    cfg = GeneratorConfig(
        n=20_000,
        covariates=(CovariateDraw("x", CONTINUOUS, mean=3.0, sd=2.0), CovariateDraw("b", BINARY, 0.2)),
        confounding_coefficients=(0.0, 0.0),
        outcome_coefficients=(0.7, -0.4),
        true_effect=0.1,
        treatment_intercept=-0.5,
        effect_scale="risk",
        seed=1,
    )
    cohort, truth = generate(cfg)
    p = expit(-0.5)
    t = cohort.treated_mask()
    assert abs(t.mean() - p) <= 3 * math.sqrt(p * (1 - p) / cfg.n)
    y = cohort.column("outcome")
    se = math.sqrt(y[t].var(ddof=1) / t.sum() + y[~t].var(ddof=1) / (~t).sum())
    assert abs(naive_difference(cohort) - truth) <= 3 * se


def test_strong_confounding_bias_matches_monte_carlo_oracle():
    cohort, truth = generate(confounded_config(n=200_000, seed=7))
    assert truth == 0.0
    assert naive_difference(cohort) == pytest.approx(STRONG_CONFOUNDING_NAIVE_BIAS, abs=0.01)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.floats(0.02, 0.98))
def test_binary_prevalence_converges(seed, p):
    n = 5000
    cfg = GeneratorConfig(n=n, covariates=(CovariateDraw("b", BINARY, p),),
                          confounding_coefficients=(0.5,), outcome_coefficients=(0.5,), seed=seed)
    cohort, _ = generate(cfg)
    assert abs(cohort.column("b").mean() - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_truth_uses_potential_outcomes():
    cfg = confounded_config(n=500, seed=3, true_effect=0.8)
    _, truth = generate(cfg)
    # independent recomputation of the sample-average risk difference
    rng = np.random.default_rng(3)
    x = rng.normal(0.0, 1.0, 500)
    rng.random(500)                        # the binary covariate draw
    expected = np.mean(expit(1.5 * x + 0.8) - expit(1.5 * x))
    assert truth == pytest.approx(expected, abs=1e-12)


def test_unconfounded_cohorts_are_balanced_before_matching():
    balanced = 0
    seeds = 40
    for s in range(seeds):
        cohort, _ = generate(confounded_config(n=2000, seed=s, strength=0.0))
        balanced += all(r.abs_smd < 0.1 for r in balance_rows(cohort))
    assert balanced / seeds >= 0.95


@pytest.mark.parametrize("kwargs", [
    dict(n=10),
    dict(covariates=(CovariateDraw("b", BINARY, 1.0),)),
    dict(covariates=(CovariateDraw("b", BINARY, None),)),
    dict(covariates=(CovariateDraw("x", CONTINUOUS, sd=0.0),)),
    dict(confounding_coefficients=(1.0, 2.0)),
    dict(effect_scale="probit"),
    dict(treatment_name="b"),
])
def test_invalid_configs(kwargs):
    base = dict(n=100, covariates=(CovariateDraw("b", BINARY, 0.5),),
                confounding_coefficients=(1.0,), outcome_coefficients=(1.0,))
    base.update(kwargs)
    with pytest.raises(InvalidConfig):
        GeneratorConfig(**base)


def test_bias_study_needs_ten_seeds():
    with pytest.raises(InvalidConfig):
        bias_study(confounded_config(200), 9)


def test_no_confounding_means_no_systematic_reduction():
    study = bias_study(confounded_config(n=600, seed=300, strength=0.0), 30, replicates=100)
    d = np.abs(study.psm - study.truth) - np.abs(study.naive - study.truth)
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / math.sqrt(d.size)


def test_glioma_like_shape():
    cfg = glioma_like_config(n=839, seed=0)
    cohort, truth = generate(cfg)
    assert cohort.names[:2] == ["Age", "IDH1"]
    assert cohort.treatment.name == "Gender" and cohort.outcome.name == "Grade"
    assert cohort.n == 839 and truth == 0.0
    assert cohort.column("Age").mean() == pytest.approx(50.94, abs=3 * 15.7 / math.sqrt(839))
