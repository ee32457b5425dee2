"""Propensity scores and greedy 1:1 caliper matching without replacement."""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import IO

import numpy as np
from scipy.special import logit as _logit

from . import logit as logit_engine
from .cohort import Cohort
from .errors import DimensionMismatch, EmptyCohort, EmptyGroup, IndexOutOfRange, ValidationError

RANDOM = "random"
DESCENDING = "descending_ps"
ORDERS = (RANDOM, DESCENDING)

TREATED_TO_CONTROL = "treated_to_control"
CONTROL_TO_TREATED = "control_to_treated"
DIRECTIONS = (TREATED_TO_CONTROL, CONTROL_TO_TREATED)

PS_SCALE = "ps"
LOGIT_SCALE = "logit"


def _sample_sd(x: np.ndarray) -> float:
    n = len(x)
    if n < 2:
        return 0.0
    mean = math.fsum(x.tolist()) / n
    return math.sqrt(math.fsum(((x - mean) ** 2).tolist()) / (n - 1))


@dataclass(frozen=True, eq=False)
class PropensityScores:
    scores: np.ndarray
    treated: np.ndarray  # boolean mask

    def __post_init__(self):
        s = np.array(self.scores, dtype=float)
        t = np.array(self.treated, dtype=bool)
        if s.ndim != 1 or t.shape != s.shape:
            raise DimensionMismatch("scores and treatment mask must be equal-length vectors")
        if not np.all((s > 0) & (s < 1)):
            raise ValidationError("propensity scores must lie strictly inside (0, 1)")
        s.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "treated", t)

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def sd(self) -> float:
        return _sample_sd(self.scores)

    @property
    def treated_indices(self) -> np.ndarray:
        return np.flatnonzero(self.treated)

    @property
    def control_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.treated)


def propensity_design(cohort: Cohort) -> logit_engine.DesignMatrix:
    """Covariates (schema order) predicting the treatment indicator."""
    names = [s.name for s in cohort.covariates]
    return logit_engine.design_matrix(cohort.covariate_matrix(), cohort.column(cohort.treatment.name), names)


def score(cohort: Cohort, fit: logit_engine.LogisticFit) -> PropensityScores:
    x = cohort.covariate_matrix()
    if x.shape[1] != fit.k:
        raise DimensionMismatch(
            f"fit has {fit.k} covariates but cohort declares {x.shape[1]}")
    return PropensityScores(fit.predict_many(x), cohort.treated_mask())


def estimate_propensity(cohort: Cohort, **fit_options) -> tuple[PropensityScores, logit_engine.LogisticFit]:
    fitted = logit_engine.fit(propensity_design(cohort), **fit_options)
    return score(cohort, fitted), fitted


@dataclass(frozen=True)
class Caliper:
    """Maximum admissible score distance for a match.

    ``multiplier`` is ``None`` when the width was given directly rather than
    as a multiple of the score SD. ``scale='logit'`` measures distances on the
    logit of the score.
    """

    multiplier: float | None
    absolute_width: float
    scale: str = PS_SCALE

    def __post_init__(self):
        if self.multiplier is not None and not self.multiplier >= 0:
            raise ValidationError("caliper multiplier must be >= 0")
        if not self.absolute_width >= 0:
            raise ValidationError("caliper width must be >= 0")
        if self.scale not in (PS_SCALE, LOGIT_SCALE):
            raise ValidationError(f"unknown caliper scale {self.scale!r}")

    @classmethod
    def from_scores(cls, ps: PropensityScores, multiplier: float = 0.25, scale: str = PS_SCALE) -> "Caliper":
        if not multiplier >= 0:
            raise ValidationError("caliper multiplier must be >= 0")
        values = ps.scores if scale == PS_SCALE else _logit(ps.scores)
        return cls(multiplier, multiplier * _sample_sd(values), scale)

    @classmethod
    def absolute(cls, width: float, scale: str = PS_SCALE) -> "Caliper":
        return cls(None, width, scale)


@dataclass(frozen=True, eq=False)
class MatchedSample:
    """Disjoint (treated, control) index pairs, listed in matching order."""

    pairs: np.ndarray  # shape (m, 2): treated index, control index
    unmatched_treated: int
    unmatched_control: int
    caliper: Caliper
    seed: int | None
    order: str
    direction: str
    scores: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def treated_indices(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def control_indices(self) -> np.ndarray:
        return self.pairs[:, 1]

    @property
    def distances(self) -> np.ndarray:
        s = self._match_scale_scores()
        return np.abs(s[self.pairs[:, 0]] - s[self.pairs[:, 1]])

    def _match_scale_scores(self) -> np.ndarray:
        return self.scores if self.caliper.scale == PS_SCALE else _logit(self.scores)

    def summary(self) -> dict:
        return {
            "pairs": self.n_pairs,
            "unmatched_treated": self.unmatched_treated,
            "unmatched_control": self.unmatched_control,
            "caliper_multiplier": self.caliper.multiplier,
            "caliper_width": self.caliper.absolute_width,
            "caliper_scale": self.caliper.scale,
            "order": self.order,
            "direction": self.direction,
            "seed": self.seed,
        }

    def to_csv(self, stream: IO[str] | None = None) -> str | None:
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["pair_id", "treated_row", "control_row", "ps_treated", "ps_control", "distance"])
        dist = self.distances
        for i, (t, c) in enumerate(self.pairs.tolist()):
            w.writerow([i, t, c, repr(float(self.scores[t])), repr(float(self.scores[c])), repr(float(dist[i]))])
        return out.getvalue() if stream is None else None


def _find(parent: list[int], i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def greedy_pairs(
    source_values: np.ndarray,
    source_order: np.ndarray,
    candidate_values: np.ndarray,
    width: float,
) -> list[tuple[int, int]]:
    """Greedy nearest-available matching.

    Source units are visited in ``source_order`` (positions into
    ``source_values``); each takes the unused candidate with the smallest
    absolute distance, ties going to the lowest candidate position, provided
    the distance is at most ``width``. Returns (source position, candidate
    position) pairs in visiting order.

    Candidates are kept sorted with two skip-pointer forests over used slots,
    so each lookup costs a bisection plus near-constant amortised skips.
    """
    m = len(candidate_values)
    order = np.lexsort((np.arange(m), candidate_values))
    vals = candidate_values[order].tolist()
    cpos = order.tolist()
    nxt = list(range(m + 1))   # nxt: next unused slot >= i (m = none)
    prv = list(range(m + 1))   # prv, offset by one: slot i lives at i + 1, 0 = none
    inf = math.inf
    pairs = []
    src = source_values.tolist()
    for s in source_order.tolist():
        v = src[s]
        k = bisect_left(vals, v)
        r = _find(nxt, k)
        l = _find(prv, k) - 1
        d_r = abs(vals[r] - v) if r < m else inf
        d_l = abs(vals[l] - v) if l >= 0 else inf
        d = min(d_l, d_r)
        if d == inf or not d <= width:
            continue
        best_slot, best_pos = -1, m
        if d_r == d:
            q = r
            while q < m and abs(vals[q] - v) == d:
                if cpos[q] < best_pos:
                    best_slot, best_pos = q, cpos[q]
                q = _find(nxt, q + 1)
        if d_l == d:
            q = l
            while q >= 0 and abs(vals[q] - v) == d:
                if cpos[q] < best_pos:
                    best_slot, best_pos = q, cpos[q]
                q = _find(prv, q) - 1
        nxt[best_slot] = best_slot + 1
        prv[best_slot + 1] = best_slot
        pairs.append((s, best_pos))
    return pairs


def processing_order(values: np.ndarray, order: str, seed: int | None) -> np.ndarray:
    n = len(values)
    if order == RANDOM:
        if seed is None:
            raise ValidationError("random processing order requires a seed")
        return np.random.default_rng(seed).permutation(n)
    if order in (DESCENDING, "descending"):
        return np.lexsort((np.arange(n), -values))
    raise ValidationError(f"unknown matching order {order!r}")


def match(
    ps: PropensityScores,
    caliper: Caliper,
    order: str = RANDOM,
    seed: int | None = None,
    direction: str = TREATED_TO_CONTROL,
) -> MatchedSample:
    """1:1 greedy nearest-neighbour matching without replacement within ``caliper``.

    ``direction`` selects the source group whose units are visited one at a
    time; the other group supplies candidates. Pairs are always reported as
    (treated index, control index).
    """
    if direction not in DIRECTIONS:
        raise ValidationError(f"unknown matching direction {direction!r}")
    if order == "descending":
        order = DESCENDING
    treated, control = ps.treated_indices, ps.control_indices
    if len(treated) == 0 or len(control) == 0:
        raise EmptyGroup("matching needs both treated and control units")
    values = ps.scores if caliper.scale == PS_SCALE else _logit(ps.scores)
    src, cand = (treated, control) if direction == TREATED_TO_CONTROL else (control, treated)
    src_vals = values[src]
    visit = processing_order(src_vals, order, seed)
    raw = greedy_pairs(src_vals, visit, values[cand], caliper.absolute_width)
    if raw:
        a = np.array(raw, dtype=np.int64)
        s_idx, c_idx = src[a[:, 0]], cand[a[:, 1]]
    else:
        s_idx = c_idx = np.empty(0, dtype=np.int64)
    pairs = np.column_stack([s_idx, c_idx]) if direction == TREATED_TO_CONTROL else np.column_stack([c_idx, s_idx])
    pairs = pairs.astype(np.int64).reshape(-1, 2)
    pairs.setflags(write=False)
    return MatchedSample(
        pairs=pairs,
        unmatched_treated=len(treated) - len(pairs),
        unmatched_control=len(control) - len(pairs),
        caliper=caliper,
        seed=seed if order == RANDOM else None,
        order=order,
        direction=direction,
        scores=ps.scores,
    )


def matched_cohort(cohort: Cohort, sample: MatchedSample) -> Cohort:
    """Rows of every pair, treated then control, tagged with their pair id."""
    if sample.n_pairs == 0:
        raise EmptyCohort("matched sample has no pairs")
    rows = sample.pairs.reshape(-1)
    if rows.min() < 0 or rows.max() >= cohort.n:
        raise IndexOutOfRange(f"pair index outside 0..{cohort.n - 1}")
    return cohort.take(rows, pair_ids=np.repeat(np.arange(sample.n_pairs), 2))
