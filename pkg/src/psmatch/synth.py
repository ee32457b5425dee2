"""Synthetic observational cohorts with known effects.

:func:`generate` draws covariates, a confounded treatment and a binary
outcome, and reports the true marginal risk difference. :func:`bias_study`
runs the naive and matched estimators over many seeds against that truth.
:func:`glioma_marginals_cohort` builds a deterministic 839-record cohort whose
per-grade and per-gender marginals equal the reference glioma tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .cohort import BINARY, CONTINUOUS, COVARIATE, OUTCOME, TREATMENT, Cohort, CovariateSpec, glioma_schema
from .effects import BootstrapConfig, att
from .errors import ValidationError
from .matching import RANDOM, TREATED_TO_CONTROL, Caliper, estimate_propensity, match

LOGIT_EFFECT = "logit"
RISK_EFFECT = "risk"


class InvalidConfig(ValidationError):
    pass


@dataclass(frozen=True)
class CovariateDraw:
    """Binary covariate with ``prevalence`` or normal covariate with ``mean``/``sd``."""

    name: str
    kind: str = BINARY
    prevalence: float | None = None
    mean: float = 0.0
    sd: float = 1.0


@dataclass(frozen=True)
class GeneratorConfig:
    """Data-generating process.

    Treatment log-odds: ``treatment_intercept + confounding_coefficients . z``;
    outcome log-odds: ``outcome_intercept + outcome_coefficients . z``, where
    ``z`` holds binary covariates as drawn and continuous covariates
    standardised by their configured mean and SD. ``true_effect`` is added to
    the outcome log-odds of treated units (``effect_scale='logit'``) or to their
    outcome probability (``'risk'``, clipped to [0, 1]).
    """

    n: int
    covariates: tuple[CovariateDraw, ...]
    confounding_coefficients: tuple[float, ...]
    outcome_coefficients: tuple[float, ...]
    true_effect: float = 0.0
    treatment_intercept: float = 0.0
    outcome_intercept: float = 0.0
    effect_scale: str = LOGIT_EFFECT
    seed: int = 0
    treatment_name: str = "treatment"
    outcome_name: str = "outcome"

    def __post_init__(self):
        k = len(self.covariates)
        if self.n < 20:
            raise InvalidConfig("n must be at least 20")
        if len(self.confounding_coefficients) != k or len(self.outcome_coefficients) != k:
            raise InvalidConfig("one confounding and one outcome coefficient per covariate")
        for c in self.covariates:
            if c.kind == BINARY:
                if c.prevalence is None or not 0 < c.prevalence < 1:
                    raise InvalidConfig(f"{c.name}: prevalence must lie in (0, 1)")
            elif c.kind == CONTINUOUS:
                if not c.sd > 0:
                    raise InvalidConfig(f"{c.name}: sd must be positive")
            else:
                raise InvalidConfig(f"{c.name}: unknown kind {c.kind!r}")
        if self.effect_scale not in (LOGIT_EFFECT, RISK_EFFECT):
            raise InvalidConfig(f"unknown effect scale {self.effect_scale!r}")
        names = [c.name for c in self.covariates] + [self.treatment_name, self.outcome_name]
        if len(set(names)) != len(names):
            raise InvalidConfig("column names must be unique")

    def schema(self) -> tuple[CovariateSpec, ...]:
        cols = [CovariateSpec(c.name, c.kind, COVARIATE) for c in self.covariates]
        cols.append(CovariateSpec(self.treatment_name, BINARY, TREATMENT))
        cols.append(CovariateSpec(self.outcome_name, BINARY, OUTCOME))
        return tuple(cols)


def _draw(config: GeneratorConfig):
    rng = np.random.default_rng(config.seed)
    n = config.n
    x = np.empty((n, len(config.covariates)))
    z = np.empty_like(x)
    for j, c in enumerate(config.covariates):
        if c.kind == BINARY:
            x[:, j] = (rng.random(n) < c.prevalence).astype(float)
            z[:, j] = x[:, j]
        else:
            x[:, j] = rng.normal(c.mean, c.sd, n)
            z[:, j] = (x[:, j] - c.mean) / c.sd
    t_lp = config.treatment_intercept + z @ np.asarray(config.confounding_coefficients, dtype=float)
    y_lp = config.outcome_intercept + z @ np.asarray(config.outcome_coefficients, dtype=float)
    if config.effect_scale == LOGIT_EFFECT:
        p0, p1 = expit(y_lp), expit(y_lp + config.true_effect)
    else:
        p0 = expit(y_lp)
        p1 = np.clip(p0 + config.true_effect, 0.0, 1.0)
    t = (rng.random(n) < expit(t_lp)).astype(float)
    u = rng.random(n)
    y = np.where(t == 1, u < p1, u < p0).astype(float)
    return x, t, y, p0, p1


def generate(config: GeneratorConfig) -> tuple[Cohort, float]:
    """Draw a cohort; ``truth`` is the sample average of ``P(Y=1|do(T=1)) - P(Y=1|do(T=0))``."""
    x, t, y, p0, p1 = _draw(config)
    data = np.column_stack([x, t, y])
    truth = math.fsum((p1 - p0).tolist()) / config.n
    return Cohort(config.schema(), data), truth


def naive_difference(cohort: Cohort) -> float:
    t = cohort.treated_mask()
    y = cohort.column(cohort.outcome.name)
    return float(y[t].mean() - y[~t].mean())


@dataclass(frozen=True, eq=False)
class BiasStudy:
    truth: np.ndarray
    naive: np.ndarray
    psm: np.ndarray
    psm_se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    pairs: np.ndarray = field(repr=False)

    @property
    def naive_mean_abs_bias(self) -> float:
        return float(np.mean(np.abs(self.naive - self.truth)))

    @property
    def psm_mean_abs_bias(self) -> float:
        return float(np.mean(np.abs(self.psm - self.truth)))

    @property
    def bias_reduction(self) -> float:
        """Fraction of the naive mean absolute bias removed by matching."""
        return 1.0 - self.psm_mean_abs_bias / self.naive_mean_abs_bias

    @property
    def coverage(self) -> float:
        """Share of seeds whose matched 95% interval contains the truth."""
        return float(np.mean((self.ci_low <= self.truth) & (self.truth <= self.ci_high)))

    def within_k_se(self, k: float = 3.0) -> float:
        return float(np.mean(np.abs(self.psm - self.truth) <= k * self.psm_se))

    def to_dict(self) -> dict:
        return {
            "seeds": int(self.truth.size),
            "naive_mean_abs_bias": self.naive_mean_abs_bias,
            "psm_mean_abs_bias": self.psm_mean_abs_bias,
            "bias_reduction": self.bias_reduction,
            "coverage": self.coverage,
        }


def bias_study(config: GeneratorConfig, seeds: int, *, caliper_multiplier: float = 0.25,
               order: str = RANDOM, replicates: int = 200) -> BiasStudy:
    """Naive vs propensity-matched ATT over ``seeds`` generator draws.

    Seed ``i`` regenerates with ``config.seed + i`` and reuses that value for
    the matching order and the pair bootstrap.
    """
    if seeds < 10:
        raise InvalidConfig("bias_study needs at least 10 seeds")
    rows = []
    for i in range(seeds):
        s = config.seed + i
        cohort, truth = generate(replace(config, seed=s))
        ps, _ = estimate_propensity(cohort)
        sample = match(ps, Caliper.from_scores(ps, caliper_multiplier), order, s, TREATED_TO_CONTROL)
        est = att(sample, cohort.column(cohort.outcome.name), BootstrapConfig(replicates=replicates, seed=s))
        rows.append((truth, naive_difference(cohort), est.point, est.standard_error,
                     est.ci_low, est.ci_high, sample.n_pairs))
    a = np.array(rows)
    return BiasStudy(a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4], a[:, 5], a[:, 6].astype(int))



def confounded_config(n: int = 2000, seed: int = 0, strength: float = 1.5,
                      true_effect: float = 0.0, effect_scale: str = LOGIT_EFFECT) -> GeneratorConfig:
    """One standard-normal covariate driving treatment and outcome with equal log-odds slopes.

    ``strength=0`` gives a randomised design.
    """
    return GeneratorConfig(
        n=n,
        covariates=(CovariateDraw("x", CONTINUOUS, mean=0.0, sd=1.0),
                    CovariateDraw("b", BINARY, prevalence=0.3)),
        confounding_coefficients=(strength, 0.0),
        outcome_coefficients=(strength, 0.0),
        true_effect=true_effect,
        effect_scale=effect_scale,
        seed=seed,
    )

# -- glioma-shaped fixtures ---------------------------------------------------

N_MALE, N_FEMALE = 351, 488
N_LGG, N_GBM = 487, 352
# cell sizes (gender x grade)
MALE_LGG, MALE_GBM = 216, 135
FEMALE_LGG, FEMALE_GBM = N_LGG - MALE_LGG, N_GBM - MALE_GBM

# covariate -> (count mutated in LGG, count in GBM, count among males)
GLIOMA_MUTATION_COUNTS = {
    "IDH1": (381, 23, 179),
    "ATRX": (183, 34, 101),
    "PTEN": (25, 116, 54),
    "EGFR": (31, 81, 42),
    "CIC": (107, 4, 55),
    "BCOR": (17, 12, 18),
    "MUC16": (41, 57, 43),
    "PIK3R1": (21, 33, 17),
    "PDGFRA": (6, 16, 11),
    "CSMD3": (12, 15, 14),
    "IDH2": (21, 2, 11),
    "FAT4": (11, 12, 14),
}

# age mean / sample SD per (gender, grade) cell; pooled they give overall
# 50.94 (15.70), male 50.63 (15.57), female 51.15 (15.81), LGG 43.87 (13.26),
# GBM 60.70 (13.43) at two decimals
_AGE_CELLS = {
    (1, 0): (44.168551, 14.427635),
    (1, 1): (60.978718, 11.135178),
    (0, 0): (43.640171, 12.271003),
    (0, 1): (60.534029, 14.699431),
}


def _uniform_block(size: int, mean: float, sd: float) -> np.ndarray:
    u = (np.arange(size) + 0.5) / size
    z = (u - u.mean()) / u.std(ddof=1)
    return mean + sd * z


def glioma_marginals_cohort(seed: int = 20231) -> Cohort:
    """839 records reproducing the glioma cohort's reference marginals.

    Per-grade counts and age summaries, per-gender counts and age summaries
    match the reference descriptive and balance tables. Within each
    gender x grade cell mutations are placed at random and ages follow an
    evenly spaced (uniform-shaped) grid, so joint structure beyond those
    marginals is synthetic.
    """
    rng = np.random.default_rng(seed)
    schema = glioma_schema()
    names = [s.name for s in schema]
    cells = [(1, 0, MALE_LGG), (1, 1, MALE_GBM), (0, 0, FEMALE_LGG), (0, 1, FEMALE_GBM)]
    blocks = []
    for gender, grade, size in cells:
        block = np.zeros((size, len(names)))
        block[:, names.index("Gender")] = gender
        block[:, names.index("Grade")] = grade
        mean, sd = _AGE_CELLS[(gender, grade)]
        block[:, names.index("Age")] = rng.permutation(_uniform_block(size, mean, sd))
        blocks.append(block)
    for gene, (lgg, gbm, male) in GLIOMA_MUTATION_COUNTS.items():
        lo = max(0, male - MALE_LGG, gbm - FEMALE_GBM, male - lgg)
        hi = min(MALE_GBM, male, gbm, FEMALE_LGG - lgg + male)
        a = min(max(round(male * gbm / (lgg + gbm)), lo), hi)
        counts = {(1, 1): a, (1, 0): male - a, (0, 1): gbm - a, (0, 0): lgg - male + a}
        j = names.index(gene)
        for (gender, grade, size), block in zip(cells, blocks):
            ones = rng.permutation(size)[:counts[(gender, grade)]]
            block[ones, j] = 1.0
    data = np.vstack(blocks)
    return Cohort(schema, data[rng.permutation(len(data))])


def glioma_like_config(n: int = 839, seed: int = 0, true_effect: float = 0.0,
                       effect_scale: str = LOGIT_EFFECT) -> GeneratorConfig:
    """Generator with the glioma cohort's shape: 12 mutation indicators plus age.

    Prevalences and age moments are the overall reference values; the
    confounding and outcome slopes are the marginal log odds ratios of each
    mutation with gender and with grade in the reference tables.
    """
    total = N_LGG + N_GBM
    covs = [CovariateDraw("Age", CONTINUOUS, mean=50.94, sd=15.70)]
    conf = [-0.033]
    outc = [1.25]
    for gene, (lgg, gbm, male) in GLIOMA_MUTATION_COUNTS.items():
        k = lgg + gbm
        covs.append(CovariateDraw(gene, BINARY, prevalence=k / total))
        female = k - male
        conf.append(_log_or(male, N_MALE - male, female, N_FEMALE - female))
        outc.append(_log_or(gbm, N_GBM - gbm, lgg, N_LGG - lgg))
    return GeneratorConfig(
        n=n,
        covariates=tuple(covs),
        confounding_coefficients=tuple(conf),
        outcome_coefficients=tuple(outc),
        true_effect=true_effect,
        treatment_intercept=float(logit(N_MALE / total)),
        outcome_intercept=float(logit(N_GBM / total)),
        effect_scale=effect_scale,
        seed=seed,
        treatment_name="Gender",
        outcome_name="Grade",
    )


def _log_or(a: int, b: int, c: int, d: int) -> float:
    # Haldane correction keeps sparse cells finite
    return math.log((a + 0.5) * (d + 0.5) / ((b + 0.5) * (c + 0.5)))
