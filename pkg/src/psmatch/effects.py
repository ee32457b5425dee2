"""Treatment-effect estimation on matched samples.

Odds ratio from an intercept + treatment logistic model (Wald interval), and
ATT / ATC / ATE as mean outcome differences with percentile-bootstrap
standard errors, intervals and p-values.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import logit as logit_engine
from .cohort import Cohort
from .errors import DegenerateTable, EmptySample, MismatchedInputs, ValidationError
from .matching import (
    CONTROL_TO_TREATED,
    RANDOM,
    TREATED_TO_CONTROL,
    Caliper,
    MatchedSample,
    PropensityScores,
    match,
    matched_cohort,
)

OR, ATE, ATT, ATC = "OR", "ATE", "ATT", "ATC"
PAIR, RECORD = "pair", "record"
WEIGHTED, MATCHED_DIFFERENCE = "weighted", "matched_difference"


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 2000
    seed: int = 0
    unit: str = PAIR
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 100:
            raise ValidationError("bootstrap needs at least 100 replicates")
        if self.unit not in (PAIR, RECORD):
            raise ValidationError(f"unknown bootstrap unit {self.unit!r}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


@dataclass(frozen=True, eq=False)
class EffectEstimate:
    estimand: str
    point: float
    standard_error: float
    ci_low: float
    ci_high: float
    p_value: float
    replicates: int = 0
    method: str = ""
    n_pairs: int | None = None
    draws: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {
            "estimand": self.estimand,
            "estimate": self.point,
            "standard_error": self.standard_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "replicates": self.replicates,
            "method": self.method,
        }
        if self.n_pairs is not None:
            d["n_pairs"] = self.n_pairs
        return d


def replicate_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Independent per-replicate substreams; replicate i always gets the same stream."""
    return np.random.SeedSequence(seed).spawn(count)


def tail_p_value(draws: np.ndarray, null: float = 0.0) -> float:
    """Two-sided bootstrap tail probability of ``null``."""
    if draws.size == 0:
        return math.nan
    below = np.count_nonzero(draws <= null) / draws.size
    above = np.count_nonzero(draws >= null) / draws.size
    return min(1.0, 2.0 * min(below, above))


def _summarise(estimand: str, point: float, draws: np.ndarray, method: str,
               n_pairs: int | None = None) -> EffectEstimate:
    draws = draws[np.isfinite(draws)]
    if draws.size < 2:
        raise EmptySample(f"no usable bootstrap replicates for {estimand}")
    srt = np.sort(draws)
    lo, hi = np.quantile(srt, [0.025, 0.975])
    return EffectEstimate(
        estimand=estimand,
        point=point,
        standard_error=float(np.std(srt, ddof=1)),
        ci_low=float(lo),
        ci_high=float(hi),
        p_value=tail_p_value(srt),
        replicates=int(draws.size),
        method=method,
        n_pairs=n_pairs,
        draws=srt,
    )


def _mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / x.size


def pair_differences(sample: MatchedSample, outcomes) -> np.ndarray:
    """Outcome of the treated unit minus outcome of the control unit, per pair."""
    y = np.asarray(outcomes, dtype=float)
    if sample.n_pairs == 0:
        raise EmptySample("matched sample has no pairs")
    return y[sample.treated_indices] - y[sample.control_indices]


def _pair_bootstrap(diffs: np.ndarray, config: BootstrapConfig) -> np.ndarray:
    m = diffs.size
    out = np.empty(config.replicates)
    for i, ss in enumerate(replicate_seeds(config.seed, config.replicates)):
        rng = np.random.default_rng(ss)
        out[i] = diffs[rng.integers(0, m, m)].mean()
    return out


def _pair_effect(estimand: str, sample: MatchedSample, outcomes, config: BootstrapConfig) -> EffectEstimate:
    diffs = pair_differences(sample, outcomes)
    point = _mean(diffs)
    draws = _pair_bootstrap(diffs, config)
    return _summarise(estimand, point, draws, "percentile bootstrap over matched pairs", sample.n_pairs)


def att(matched_t2c: MatchedSample, outcomes, config: BootstrapConfig = BootstrapConfig()) -> EffectEstimate:
    """Mean treated-minus-control outcome over pairs formed by visiting treated units."""
    if matched_t2c.direction != TREATED_TO_CONTROL:
        raise MismatchedInputs("ATT needs a treated_to_control matching pass")
    return _pair_effect(ATT, matched_t2c, outcomes, config)


def atc(matched_c2t: MatchedSample, outcomes, config: BootstrapConfig = BootstrapConfig()) -> EffectEstimate:
    """Mean treated-minus-control outcome over pairs formed by visiting control units."""
    if matched_c2t.direction != CONTROL_TO_TREATED:
        raise MismatchedInputs("ATC needs a control_to_treated matching pass")
    return _pair_effect(ATC, matched_c2t, outcomes, config)


def ate(att_est: EffectEstimate, atc_est: EffectEstimate, n_treated: int, n_control: int,
        replicates: np.ndarray | None = None) -> EffectEstimate:
    """Arm-size weighted combination ``(n_t*ATT + n_c*ATC) / (n_t + n_c)``.

    ``replicates`` holds per-replicate ATE values from :func:`pipeline_bootstrap`;
    without them the SE assumes independent ATT and ATC estimates and the
    interval and p-value are normal approximations.
    """
    if att_est.estimand != ATT or atc_est.estimand != ATC:
        raise MismatchedInputs("ate() takes an ATT and an ATC estimate")
    if n_treated <= 0 or n_control <= 0:
        raise MismatchedInputs("arm sizes must be positive")
    wt = n_treated / (n_treated + n_control)
    wc = 1.0 - wt
    point = wt * att_est.point + wc * atc_est.point
    if replicates is not None:
        return _summarise(ATE, point, np.asarray(replicates, dtype=float),
                          "percentile bootstrap over the matching pipeline")
    se = math.sqrt((wt * att_est.standard_error) ** 2 + (wc * atc_est.standard_error) ** 2)
    w = logit_engine.wald(point, se)
    return EffectEstimate(ATE, point, se, w.ci_low, w.ci_high, w.p_value, 0,
                          "normal approximation from ATT and ATC standard errors")


def matched_difference(y: np.ndarray, t2c: MatchedSample, c2t: MatchedSample) -> float:
    """Difference in mean outcome between treated and control units matched in either pass."""
    treated = np.union1d(t2c.treated_indices, c2t.treated_indices)
    control = np.union1d(t2c.control_indices, c2t.control_indices)
    if treated.size == 0 or control.size == 0:
        return math.nan
    return _mean(y[treated]) - _mean(y[control])


# -- odds ratio ---------------------------------------------------------------

def outcome_table(cohort: Cohort) -> list[list[int]]:
    """[[treated & y=1, treated & y=0], [control & y=1, control & y=0]]."""
    t = cohort.treated_mask()
    y = cohort.column(cohort.outcome.name) == 1
    return [[int(np.sum(t & y)), int(np.sum(t & ~y))],
            [int(np.sum(~t & y)), int(np.sum(~t & ~y))]]


def odds_ratio(matched: Cohort) -> EffectEstimate:
    """Exponentiated treatment coefficient of ``outcome ~ 1 + treatment``.

    ``standard_error`` is on the log-odds scale; the interval is the
    exponentiated Wald interval.
    """
    table = outcome_table(matched)
    if min(min(r) for r in table) == 0:
        raise DegenerateTable(table)
    design = logit_engine.design_matrix(
        matched.column(matched.treatment.name), matched.column(matched.outcome.name),
        [matched.treatment.name])
    fitted = logit_engine.fit(design)
    w = logit_engine.wald_test(fitted, 1)
    return EffectEstimate(
        estimand=OR,
        point=math.exp(w.estimate),
        standard_error=w.standard_error,
        ci_low=math.exp(w.ci_low),
        ci_high=math.exp(w.ci_high),
        p_value=w.p_value,
        replicates=0,
        method="logistic regression, Wald interval",
    )


# -- full-pipeline bootstrap --------------------------------------------------

@dataclass(frozen=True)
class _PipelineSpec:
    scores: np.ndarray
    treated: np.ndarray
    outcomes: np.ndarray
    caliper_multiplier: float | None
    caliper_width: float
    caliper_scale: str
    order: str


def _match_pair(ps: PropensityScores, spec: _PipelineSpec, seed: int | None):
    if spec.caliper_multiplier is None:
        cal = Caliper.absolute(spec.caliper_width, spec.caliper_scale)
    else:
        cal = Caliper.from_scores(ps, spec.caliper_multiplier, spec.caliper_scale)
    t2c = match(ps, cal, spec.order, seed, TREATED_TO_CONTROL)
    c2t = match(ps, cal, spec.order, seed, CONTROL_TO_TREATED)
    return t2c, c2t


def _mean_diff(y: np.ndarray, sample: MatchedSample) -> float:
    if sample.n_pairs == 0:
        return math.nan
    return float(np.mean(y[sample.treated_indices] - y[sample.control_indices]))


def _run_replicates(spec: _PipelineSpec, seeds: list[np.random.SeedSequence]) -> np.ndarray:
    t_idx = np.flatnonzero(spec.treated)
    c_idx = np.flatnonzero(~spec.treated)
    n_t, n_c = t_idx.size, c_idx.size
    out = np.empty((len(seeds), 4))
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        rows = np.concatenate([t_idx[rng.integers(0, n_t, n_t)], c_idx[rng.integers(0, n_c, n_c)]])
        match_seed = int(rng.integers(0, 2**63 - 1)) if spec.order == RANDOM else None
        ps = PropensityScores(spec.scores[rows], spec.treated[rows])
        y = spec.outcomes[rows]
        t2c, c2t = _match_pair(ps, spec, match_seed)
        a_t, a_c = _mean_diff(y, t2c), _mean_diff(y, c2t)
        out[i] = (a_t, a_c, (n_t * a_t + n_c * a_c) / (n_t + n_c), matched_difference(y, t2c, c2t))
    return out


def pipeline_bootstrap(ps: PropensityScores, outcomes, caliper: Caliper, order: str,
                       config: BootstrapConfig) -> dict[str, np.ndarray]:
    """Resample records within each arm and rerun both matching passes per replicate.

    Scores are held at their full-sample estimates. Returns per-replicate
    arrays keyed ``ATT``, ``ATC``, ``ATE`` (weighted) and
    ``matched_difference``; replicates where a pass finds no pair are NaN.
    """
    spec = _PipelineSpec(ps.scores, ps.treated, np.asarray(outcomes, dtype=float),
                         caliper.multiplier, caliper.absolute_width, caliper.scale, order)
    seeds = replicate_seeds(config.seed, config.replicates)
    if config.workers == 1:
        out = _run_replicates(spec, seeds)
    else:
        chunks = np.array_split(np.arange(len(seeds)), config.workers)
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            parts = pool.map(_run_replicates, [spec] * len(chunks),
                             [[seeds[i] for i in c] for c in chunks])
            out = np.concatenate(list(parts))
    return {ATT: out[:, 0], ATC: out[:, 1], ATE: out[:, 2], MATCHED_DIFFERENCE: out[:, 3]}


@dataclass(frozen=True, eq=False)
class EffectsResult:
    att: EffectEstimate
    atc: EffectEstimate
    ate: EffectEstimate
    odds_ratio: EffectEstimate | None
    t2c: MatchedSample
    c2t: MatchedSample
    ate_method: str

    def estimates(self) -> list[EffectEstimate]:
        out = [self.ate, self.atc, self.att]
        if self.odds_ratio is not None:
            out.append(self.odds_ratio)
        return out


def estimate_effects(cohort: Cohort, ps: PropensityScores, caliper: Caliper, *,
                     order: str = RANDOM, seed: int | None = 0,
                     config: BootstrapConfig = BootstrapConfig(),
                     ate_method: str = WEIGHTED,
                     t2c: MatchedSample | None = None) -> EffectsResult:
    """ATT, ATC, ATE and odds ratio for one cohort.

    ATT/ATC intervals come from pair resampling (``config.unit='pair'``) or
    from the record-level pipeline bootstrap (``'record'``); ATE always uses
    the pipeline bootstrap. The odds ratio is fitted on the treated-to-control
    matched cohort.
    """
    if ate_method not in (WEIGHTED, MATCHED_DIFFERENCE):
        raise ValidationError(f"unknown ATE method {ate_method!r}")
    y = cohort.column(cohort.outcome.name)
    if t2c is None:
        t2c = match(ps, caliper, order, seed, TREATED_TO_CONTROL)
    c2t = match(ps, caliper, order, seed, CONTROL_TO_TREATED)
    if t2c.n_pairs == 0 or c2t.n_pairs == 0:
        raise EmptySample("a matching pass produced no pairs")
    draws = pipeline_bootstrap(ps, y, caliper, order, config)
    if config.unit == PAIR:
        att_est = att(t2c, y, config)
        atc_est = atc(c2t, y, config)
    else:
        method = "percentile bootstrap over the matching pipeline"
        att_est = _summarise(ATT, _mean(pair_differences(t2c, y)), draws[ATT], method, t2c.n_pairs)
        atc_est = _summarise(ATC, _mean(pair_differences(c2t, y)), draws[ATC], method, c2t.n_pairs)
    n_t, n_c = len(ps.treated_indices), len(ps.control_indices)
    if ate_method == WEIGHTED:
        ate_est = ate(att_est, atc_est, n_t, n_c, replicates=draws[ATE])
    else:
        ate_est = _summarise(ATE, matched_difference(y, t2c, c2t), draws[MATCHED_DIFFERENCE],
                             "percentile bootstrap over the matching pipeline; difference in means")
    odds = odds_ratio(matched_cohort(cohort, t2c))
    return EffectsResult(att_est, atc_est, ate_est, odds, t2c, c2t, ate_method)
