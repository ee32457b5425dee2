"""Command-line front end.

``psmatch run`` executes ingest -> propensity fit -> matching -> balance ->
effects and writes the JSON report plus any requested tables and figures.
``psmatch fixture`` writes bundled or synthetic cohorts with their schema.

Exit codes: 0 success, 2 validation error, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import balance as bal
from . import plots
from . import report as rep
from .cohort import BINARY, describe, glioma_schema, load_cohort, load_schema, schema_to_json
from .effects import BootstrapConfig, WEIGHTED, estimate_effects
from .errors import EstimationError, PSMError, SingleArm, ValidationError
from .matching import (
    DESCENDING,
    RANDOM,
    TREATED_TO_CONTROL,
    Caliper,
    estimate_propensity,
    match,
    matched_cohort,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("psmatch")

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION = 0, 2, 3
OUTPUT_ENV = "PSMATCH_OUTPUT_DIR"

EMIT_CHOICES = ("report_json", "report_txt", "balance_csv", "pairs_csv",
                "histograms_csv", "loveplot_csv", "loveplot_svg", "figures")
FILES = {
    "report_json": "report.json",
    "report_txt": "report.txt",
    "balance_csv": "balance.csv",
    "pairs_csv": "pairs.csv",
    "histograms_csv": "ps_histograms.csv",
    "loveplot_csv": "loveplot.csv",
    "loveplot_svg": "loveplot.svg",
}


@dataclass(frozen=True)
class RunConfig:
    input_path: str
    schema_path: str | None = None
    treatment_column: str | None = None
    outcome_column: str | None = None
    caliper_multiplier: float = 0.25
    caliper_scale: str = "ps"
    match_order: str = RANDOM
    seed: int | None = None
    replicates: int = 2000
    bootstrap_unit: str = "pair"
    ate_method: str = WEIGHTED
    bins: int = 20
    threshold: float = 0.1
    workers: int = 1
    output_directory: str = field(default_factory=lambda: os.environ.get(OUTPUT_ENV, "psmatch-out"))
    emit: tuple[str, ...] = EMIT_CHOICES

    def problems(self) -> list[str]:
        out = []
        if not self.caliper_multiplier >= 0:
            out.append("caliper_multiplier must be >= 0")
        if self.match_order not in (RANDOM, DESCENDING, "descending"):
            out.append(f"match_order must be 'random' or 'descending', got {self.match_order!r}")
        if self.match_order == RANDOM and self.seed is None:
            out.append("seed is required when match_order is random")
        if self.replicates < 100:
            out.append("replicates must be >= 100")
        if self.bins < 2:
            out.append("bins must be >= 2")
        unknown = sorted(set(self.emit) - set(EMIT_CHOICES))
        if unknown:
            out.append(f"unknown emit entries: {', '.join(unknown)}")
        return out

    def echo(self) -> dict:
        d = asdict(self)
        # execution details that cannot change results live under provenance.runtime
        d.pop("output_directory")
        d.pop("workers")
        d["emit"] = sorted(self.emit)
        return d


@dataclass(frozen=True)
class Finding:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def _load(config: RunConfig):
    schema = load_schema(config.schema_path) if config.schema_path else glioma_schema()
    cohort = load_cohort(config.input_path, schema)
    if config.treatment_column or config.outcome_column:
        cohort = cohort.with_roles(config.treatment_column, config.outcome_column)
    return cohort


def validate(config: RunConfig) -> list[Finding]:
    """Dry-run checks of paths, schema/CSV consistency and group sizes."""
    findings = [Finding("InvalidConfig", p) for p in config.problems()]
    if not Path(config.input_path).is_file():
        findings.append(Finding("MissingInput", f"cannot read {config.input_path}"))
    if config.schema_path and not Path(config.schema_path).is_file():
        findings.append(Finding("MissingSchema", f"cannot read {config.schema_path}"))
    out = Path(config.output_directory)
    parent = out if out.exists() else out.parent
    if not os.access(parent if str(parent) else ".", os.W_OK):
        findings.append(Finding("OutputNotWritable", f"cannot write to {config.output_directory}"))
    if any(f.code in ("MissingInput", "MissingSchema") for f in findings):
        return findings
    try:
        cohort = _load(config)
    except SingleArm as exc:
        findings.append(Finding("SingleArm", str(exc)))
        return findings
    except PSMError as exc:
        findings.append(Finding(type(exc).__name__, str(exc)))
        return findings
    y = cohort.column(cohort.outcome.name)
    if y.min() == y.max():
        findings.append(Finding("SingleOutcome", f"outcome {cohort.outcome.name!r} takes one value"))
    n_t = int(cohort.treated_mask().sum())
    if n_t < 2 or cohort.n - n_t < 2:
        findings.append(Finding("SmallArm", f"arms of size {n_t} and {cohort.n - n_t}"))
    return findings


def _versions() -> dict:
    return {
        "psmatch": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run(config: RunConfig) -> tuple[dict | None, int]:
    """Execute the pipeline and write outputs; returns (report, exit code)."""
    started = datetime.now(timezone.utc).isoformat()
    problems = config.problems()
    if problems:
        for p in problems:
            log.error("invalid configuration: %s", p)
        return None, EXIT_VALIDATION
    try:
        cohort = _load(config)
    except (ValidationError, OSError) as exc:
        log.error("%s", exc)
        return None, EXIT_VALIDATION

    exit_code = EXIT_OK
    try:
        ps, fit = estimate_propensity(cohort)
    except PSMError as exc:
        log.error("propensity model failed: %s", exc)
        return None, EXIT_ESTIMATION
    order = DESCENDING if config.match_order in (DESCENDING, "descending") else RANDOM
    caliper = Caliper.from_scores(ps, config.caliper_multiplier, config.caliper_scale)
    sample = match(ps, caliper, order, config.seed, TREATED_TO_CONTROL)
    matched = matched_cohort(cohort, sample) if sample.n_pairs else None
    balance = bal.balance_report(cohort, matched, config.threshold)
    hist = bal.ps_histograms(ps, sample, config.bins)

    effects: dict
    if sample.n_pairs == 0:
        effects = {"computed": False, "reason": "no matched pairs within the caliper"}
    else:
        try:
            res = estimate_effects(
                cohort, ps, caliper, order=order, seed=config.seed,
                config=BootstrapConfig(config.replicates, config.seed or 0, config.bootstrap_unit, config.workers),
                ate_method=config.ate_method, t2c=sample)
            effects = {
                "computed": True,
                "ate_method": res.ate_method,
                "atc_pairs": res.c2t.n_pairs,
                "estimates": [e.to_dict() for e in res.estimates()],
            }
        except EstimationError as exc:
            log.error("effect estimation failed: %s", exc)
            effects = {"computed": False, "reason": f"{type(exc).__name__}: {exc}"}
            exit_code = EXIT_ESTIMATION

    report = {
        "descriptive": describe(cohort, cohort.outcome.name).to_dict(),
        "propensity_model": fit.to_dict(),
        "matching": {**sample.summary(), "ps_sd": ps.sd,
                     "treated": int(len(ps.treated_indices)), "control": int(len(ps.control_indices))},
        "balance": balance.to_dict(),
        "histograms": hist.to_dict(),
        "effects": effects,
        "provenance": {
            "config": config.echo(),
            "seed": config.seed,
            "input_sha256": _sha256(config.input_path),
            "schema": [s.to_dict() for s in cohort.schema],
            "versions": _versions(),
            "runtime": {
                "started_at": started,
                "finished_at": datetime.now(timezone.utc).isoformat(),
                "output_directory": str(Path(config.output_directory).resolve()),
                "workers": config.workers,
            },
        },
    }
    report = rep.finalize(report)
    _emit(config, report, balance, sample, hist)
    return report, exit_code


def _emit(config: RunConfig, report: dict, balance, sample, hist) -> None:
    out = Path(config.output_directory)
    emit = set(config.emit)
    writers = {
        "report_json": lambda: rep.canonical_json(report),
        "report_txt": lambda: rep.render_text(report),
        "balance_csv": balance.to_csv,
        "pairs_csv": sample.to_csv,
        "histograms_csv": hist.to_csv,
        "loveplot_csv": balance.loveplot_csv,
        "loveplot_svg": lambda: plots.loveplot_svg(_love_rows(report), config.threshold),
    }
    for key, write in writers.items():
        if key in emit:
            rep.atomic_write(out / FILES[key], write())
    if "figures" in emit:
        out.mkdir(parents=True, exist_ok=True)
        for name, draw in (("loveplot.png", lambda p: plots.render_loveplot(_love_rows(report), config.threshold, p)),
                           ("ps_histograms.png", lambda p: plots.render_ps_histograms(report["histograms"], p))):
            tmp = out / f".{name}.tmp.png"
            draw(tmp)
            os.replace(tmp, out / name)


def _love_rows(report: dict) -> list[dict]:
    after = {r["covariate"]: r["smd"] for r in report["balance"]["after"]}
    return [{"covariate": r["covariate"], "smd_before": r["smd"], "smd_after": after.get(r["covariate"])}
            for r in report["balance"]["before"]]


# -- argument handling ---------------------------------------------------------

_FLAG_TO_FIELD = {
    "input": "input_path", "schema": "schema_path", "treatment": "treatment_column",
    "outcome": "outcome_column", "caliper": "caliper_multiplier", "caliper_scale": "caliper_scale",
    "order": "match_order", "seed": "seed", "replicates": "replicates",
    "bootstrap_unit": "bootstrap_unit", "ate_method": "ate_method", "bins": "bins",
    "threshold": "threshold", "workers": "workers", "out": "output_directory", "emit": "emit",
}


def _parse_emit(value) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    return tuple(value)


def load_config_file(path) -> dict:
    """Flat TOML key/value file; keys are RunConfig field names or CLI flag names."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in raw.items():
        name = _FLAG_TO_FIELD.get(key.replace("-", "_"), key.replace("-", "_"))
        if name not in known:
            raise ValidationError(f"{path}: unknown configuration key {key!r}")
        out[name] = value
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = load_config_file(args.config) if args.config else {}
    for flag, name in _FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if "input_path" not in values:
        raise ValidationError("an input CSV is required (--input or 'input' in the config file)")
    if "emit" in values:
        values["emit"] = _parse_emit(values["emit"])
    if values.get("match_order") == "descending":
        values["match_order"] = DESCENDING
    return RunConfig(**values)


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat TOML file with run settings (flags override it)")
    p.add_argument("--input", help="cohort CSV")
    p.add_argument("--schema", help="schema file (JSON or 'name: kind, role' lines); default: bundled glioma schema")
    p.add_argument("--treatment", help="treatment column (overrides the schema)")
    p.add_argument("--outcome", help="outcome column (overrides the schema)")
    p.add_argument("--caliper", type=float, help="caliper as a multiple of the score SD (default 0.25)")
    p.add_argument("--caliper-scale", dest="caliper_scale", choices=("ps", "logit"))
    p.add_argument("--order", choices=("random", "descending"))
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int, help="bootstrap replicates (default 2000)")
    p.add_argument("--bootstrap-unit", dest="bootstrap_unit", choices=("pair", "record"))
    p.add_argument("--ate-method", dest="ate_method", choices=("weighted", "matched_difference"))
    p.add_argument("--bins", type=int, help="histogram bins over [0, 1] (default 20)")
    p.add_argument("--threshold", type=float, help="balance threshold for |SMD| (default 0.1)")
    p.add_argument("--workers", type=int, help="processes for the bootstrap (default 1)")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./psmatch-out)")
    p.add_argument("--emit", help="comma-separated subset of: " + ", ".join(EMIT_CHOICES))
    p.add_argument("--validate-only", action="store_true", help="check inputs without running the pipeline")


def _cmd_run(args) -> int:
    try:
        config = build_config(args)
    except (ValidationError, TypeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    if args.validate_only:
        findings = validate(config)
        for f in findings:
            print(f)
        if not findings:
            print("ok")
        return EXIT_VALIDATION if findings else EXIT_OK
    report, code = run(config)
    if report is not None:
        sys.stdout.write(rep.render_text(report))
    return code


def _cmd_fixture(args) -> int:
    from . import synth

    out = Path(args.out)
    if args.kind == "glioma-marginals":
        cohort = synth.glioma_marginals_cohort()
    else:
        cohort, truth = synth.generate(synth.glioma_like_config(
            n=args.n, seed=args.seed, true_effect=args.effect, effect_scale="risk"))
        log.info("true risk difference: %.6f", truth)
    rep.atomic_write(out / "cohort.csv", cohort.to_csv())
    rep.atomic_write(out / "schema.json", schema_to_json(cohort.schema))
    print(out / "cohort.csv")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psmatch", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_args(sub.add_parser("run", help="run the matching pipeline"))
    fx = sub.add_parser("fixture", help="write a bundled or synthetic cohort and its schema")
    fx.add_argument("--kind", choices=("glioma-marginals", "glioma-like"), default="glioma-marginals")
    fx.add_argument("--n", type=int, default=839)
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--effect", type=float, default=0.0, help="additive risk difference (glioma-like only)")
    fx.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="psmatch: %(levelname)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_fixture(args)
    except (ValidationError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except EstimationError as exc:
        log.error("%s", exc)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
