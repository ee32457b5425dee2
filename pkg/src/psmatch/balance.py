"""Covariate balance: standardized mean differences and score histograms."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .cohort import BINARY, Cohort
from .errors import EmptyGroup, SchemaMismatch, ValidationError, ZeroVarianceUnequalMeans
from .matching import MatchedSample, PropensityScores

POOLED = "pooled"
AVERAGE = "average"


def _mean_ss(x: np.ndarray) -> tuple[float, float]:
    # exactly rounded sums: results do not depend on record order
    values = x.tolist()
    mean = math.fsum(values) / len(values)
    return mean, math.fsum([(v - mean) ** 2 for v in values])


def smd(treated_values, control_values, kind: str = "continuous", *,
        pooling: str = POOLED, ddof: int = 1) -> float:
    """Signed standardized mean difference, treated minus control.

    ``pooling='pooled'`` (default) standardises by the pooled two-sample SD,
    ``sqrt((SS_t + SS_c) / (n_t + n_c - 2*ddof))``; for 0/1 data the sum of
    squares is ``n p (1 - p)``. ``pooling='average'`` uses
    ``sqrt((v_t + v_c) / 2)`` with ``v = p (1 - p)`` for binary data and
    ``SS / (n - ddof)`` for continuous data.

    Returns 0 when both groups are constant at the same value.
    """
    t = np.asarray(treated_values, dtype=float)
    c = np.asarray(control_values, dtype=float)
    if t.size == 0 or c.size == 0:
        raise EmptyGroup("SMD needs values in both groups")
    if kind == BINARY and not (np.all((t == 0) | (t == 1)) and np.all((c == 0) | (c == 1))):
        raise ValidationError("binary SMD requires 0/1 values")
    mt, sst = _mean_ss(t)
    mc, ssc = _mean_ss(c)
    nt, nc = t.size, c.size
    if pooling == POOLED:
        dof = nt + nc - 2 * ddof
        var = (sst + ssc) / dof if dof > 0 else 0.0
    elif pooling == AVERAGE:
        if kind == BINARY:
            vt, vc = mt * (1 - mt), mc * (1 - mc)
        else:
            vt = sst / (nt - ddof) if nt > ddof else 0.0
            vc = ssc / (nc - ddof) if nc > ddof else 0.0
        var = (vt + vc) / 2
    else:
        raise ValidationError(f"unknown pooling {pooling!r}")
    diff = mt - mc
    if var == 0:
        if diff == 0:
            return 0.0
        raise ZeroVarianceUnequalMeans(f"means differ ({mt!r} vs {mc!r}) with zero pooled variance")
    return diff / math.sqrt(var)


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    kind: str
    treated: float           # percent for binary, mean for continuous
    control: float
    smd: float               # signed
    treated_sd: float | None = None
    control_sd: float | None = None

    @property
    def abs_smd(self) -> float:
        return abs(self.smd)

    def to_dict(self) -> dict:
        d = {"covariate": self.covariate, "kind": self.kind,
             "treated": self.treated, "control": self.control,
             "smd": self.smd, "abs_smd": self.abs_smd}
        if self.kind != BINARY:
            d["treated_sd"] = self.treated_sd
            d["control_sd"] = self.control_sd
        return d


def balance_rows(cohort: Cohort, *, pooling: str = POOLED, ddof: int = 1) -> list[BalanceRow]:
    """One row per covariate comparing treated and control records."""
    treated = cohort.treated_mask()
    rows = []
    for spec in cohort.covariates:
        col = cohort.column(spec.name)
        t, c = col[treated], col[~treated]
        s = smd(t, c, spec.kind, pooling=pooling, ddof=ddof)
        mt, sst = _mean_ss(t)
        mc, ssc = _mean_ss(c)
        if spec.kind == BINARY:
            rows.append(BalanceRow(spec.name, spec.kind, 100 * mt, 100 * mc, s))
        else:
            sd_t = math.sqrt(sst / (len(t) - 1)) if len(t) > 1 else math.nan
            sd_c = math.sqrt(ssc / (len(c) - 1)) if len(c) > 1 else math.nan
            rows.append(BalanceRow(spec.name, spec.kind, mt, mc, s, sd_t, sd_c))
    return rows


@dataclass(frozen=True)
class BalanceReport:
    before: tuple[BalanceRow, ...]
    after: tuple[BalanceRow, ...]
    threshold: float = 0.1
    n_before: tuple[int, int] = (0, 0)
    n_after: tuple[int, int] = (0, 0)
    balanced: bool = field(init=False)
    max_after_smd: float | None = field(init=False)

    def __post_init__(self):
        if self.after:
            mx = max(r.abs_smd for r in self.after)
            object.__setattr__(self, "max_after_smd", mx)
            object.__setattr__(self, "balanced", mx <= self.threshold)
        else:
            object.__setattr__(self, "max_after_smd", None)
            object.__setattr__(self, "balanced", False)

    @property
    def max_before_smd(self) -> float:
        return max(r.abs_smd for r in self.before)

    def row(self, covariate: str, panel: str = "before") -> BalanceRow:
        for r in getattr(self, panel):
            if r.covariate == covariate:
                return r
        raise KeyError(covariate)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "balanced": self.balanced,
            "max_before_smd": self.max_before_smd,
            "max_after_smd": self.max_after_smd,
            "n_before": {"treated": self.n_before[0], "control": self.n_before[1]},
            "n_after": {"treated": self.n_after[0], "control": self.n_after[1]},
            "before": [r.to_dict() for r in self.before],
            "after": [r.to_dict() for r in self.after],
        }

    def to_csv(self, stream: IO[str] | None = None) -> str | None:
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["panel", "covariate", "kind", "treated", "treated_sd",
                    "control", "control_sd", "smd", "abs_smd"])
        for panel in ("before", "after"):
            for r in getattr(self, panel):
                w.writerow([panel, r.covariate, r.kind, _cell(r.treated), _cell(r.treated_sd),
                            _cell(r.control), _cell(r.control_sd), _cell(r.smd), _cell(r.abs_smd)])
        return out.getvalue() if stream is None else None

    def loveplot_csv(self, stream: IO[str] | None = None) -> str | None:
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["covariate", "smd_before", "smd_after", "threshold"])
        after = {r.covariate: r.smd for r in self.after}
        for r in self.before:
            w.writerow([r.covariate, _cell(r.smd), _cell(after.get(r.covariate)), _cell(self.threshold)])
        return out.getvalue() if stream is None else None


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _arm_sizes(cohort: Cohort) -> tuple[int, int]:
    t = int(cohort.treated_mask().sum())
    return t, cohort.n - t


def balance_report(before: Cohort, after: Cohort | None, threshold: float = 0.1, *,
                   pooling: str = POOLED, ddof: int = 1) -> BalanceReport:
    """Before/after SMD panels. ``after=None`` yields an empty after-panel."""
    if after is not None and after.schema != before.schema:
        raise SchemaMismatch("before and after cohorts have different schemas")
    rows_after = balance_rows(after, pooling=pooling, ddof=ddof) if after is not None else []
    return BalanceReport(
        before=tuple(balance_rows(before, pooling=pooling, ddof=ddof)),
        after=tuple(rows_after),
        threshold=threshold,
        n_before=_arm_sizes(before),
        n_after=_arm_sizes(after) if after is not None else (0, 0),
    )


# -- propensity score histograms ---------------------------------------------

GROUPS = ("treated", "control")
PANELS = ("before", "after")


def bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    """Bin ``i`` covers ``[i/bins, (i+1)/bins)``; the top bin also takes 1.0."""
    return np.minimum(np.floor(np.asarray(values, dtype=float) * bins).astype(np.int64), bins - 1)


@dataclass(frozen=True, eq=False)
class PSHistograms:
    bins: int
    counts: dict  # (group, panel) -> int array of length bins

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.bins + 1) / self.bins

    def total_variation(self, panel: str) -> float:
        """Total-variation distance between treated and control score distributions."""
        t = self.counts[("treated", panel)].astype(float)
        c = self.counts[("control", panel)].astype(float)
        if t.sum() == 0 or c.sum() == 0:
            return math.nan
        return 0.5 * float(np.abs(t / t.sum() - c / c.sum()).sum())

    def to_csv(self, stream: IO[str] | None = None) -> str | None:
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["group", "panel", "bin", "bin_low", "bin_high", "count"])
        for panel in PANELS:
            for group in GROUPS:
                for i, n in enumerate(self.counts[(group, panel)].tolist()):
                    w.writerow([group, panel, i, repr(i / self.bins), repr((i + 1) / self.bins), n])
        return out.getvalue() if stream is None else None

    def to_dict(self) -> dict:
        return {
            "bins": self.bins,
            "total_variation": {p: _json_nan(self.total_variation(p)) for p in PANELS},
            "counts": {f"{g}/{p}": self.counts[(g, p)].tolist() for p in PANELS for g in GROUPS},
        }


def _json_nan(v: float):
    return None if math.isnan(v) else v


def ps_histograms(ps: PropensityScores, sample: MatchedSample | None, bins: int = 20) -> PSHistograms:
    """Equal-width score histograms over [0, 1] by group, before and after matching."""
    if bins < 2:
        raise ValidationError("need at least 2 bins")
    idx = bin_index(ps.scores, bins)
    counts = {}
    for group, members in (("treated", ps.treated_indices), ("control", ps.control_indices)):
        counts[(group, "before")] = np.bincount(idx[members], minlength=bins)
    if sample is not None and sample.n_pairs:
        t_after, c_after = sample.treated_indices, sample.control_indices
    else:
        t_after = c_after = np.empty(0, dtype=np.int64)
    counts[("treated", "after")] = np.bincount(idx[t_after], minlength=bins)
    counts[("control", "after")] = np.bincount(idx[c_after], minlength=bins)
    return PSHistograms(bins, counts)
