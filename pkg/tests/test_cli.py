import csv
import json

import numpy as np
import pytest

from psmatch import report as rep
from psmatch.cli import FILES, RunConfig, main, run, validate
from psmatch.cohort import glioma_schema, load_cohort, load_schema, schema_to_json


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    assert main(["fixture", "--out", str(out)]) == 0
    return out


def run_cli(fixture_dir, out, *extra):
    return main(["run", "--input", str(fixture_dir / "cohort.csv"), "--seed", "11",
                 "--replicates", "100", "--out", str(out), *extra])


@pytest.fixture(scope="module")
def full_run(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run_cli(fixture_dir, out, "--emit", ",".join(list(FILES) + ["figures"]))
    return code, out


def test_fixture_round_trips_through_reader(fixture_dir):
    schema = load_schema(fixture_dir / "schema.json")
    assert schema == glioma_schema()
    cohort = load_cohort(fixture_dir / "cohort.csv", schema)
    assert cohort.n == 839


def test_full_run_emits_everything(full_run):
    code, out = full_run
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(list(FILES.values()) + ["loveplot.png", "ps_histograms.png"])
    report = json.loads((out / "report.json").read_text())
    assert set(report) == {"descriptive", "propensity_model", "matching", "balance", "histograms",
                           "effects", "provenance", rep.HASH_KEY}
    assert report["propensity_model"]["converged"]
    assert report["effects"]["computed"]
    assert [e["estimand"] for e in report["effects"]["estimates"]] == ["ATE", "ATC", "ATT", "OR"]
    assert report[rep.HASH_KEY] == rep.determinism_hash(report)
    assert (out / "report.txt").read_text() == rep.render_text(report)
    assert (out / "loveplot.svg").read_text().startswith("<svg")
    assert (out / "loveplot.png").read_bytes()[:4] == b"\x89PNG"


def test_emitted_csvs_reparse(full_run):
    _, out = full_run
    report = json.loads((out / "report.json").read_text())
    pairs = rep.read_emitted_csv(out / "pairs.csv")
    assert len(pairs) == report["matching"]["pairs"]
    width = report["matching"]["caliper_width"]
    assert all(abs(p["ps_treated"] - p["ps_control"]) <= width for p in pairs)
    balance = rep.read_emitted_csv(out / "balance.csv")
    assert len(balance) == 2 * 13
    hist = rep.read_emitted_csv(out / "ps_histograms.csv")
    assert sum(h["count"] for h in hist if h["panel"] == "before") == 839
    love = rep.read_emitted_csv(out / "loveplot.csv")
    assert [r["covariate"] for r in love] == [r["covariate"] for r in report["balance"]["before"]]


def test_runs_are_deterministic(fixture_dir, tmp_path, full_run):
    _, first = full_run
    assert run_cli(fixture_dir, tmp_path) == 0
    a = json.loads((first / "report.json").read_text())
    b = json.loads((tmp_path / "report.json").read_text())
    assert a[rep.HASH_KEY] == b[rep.HASH_KEY]
    assert rep.canonical_json(rep.deterministic_view(a)) == rep.canonical_json(rep.deterministic_view(b))
    for name in ("pairs.csv", "balance.csv", "ps_histograms.csv", "loveplot.csv", "loveplot.svg"):
        assert (first / name).read_bytes() == (tmp_path / name).read_bytes()


def test_emit_subset_and_no_temp_files(fixture_dir, tmp_path):
    assert run_cli(fixture_dir, tmp_path, "--emit", "report_json,pairs_csv") == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["pairs.csv", "report.json"]


def test_zero_caliper_skips_effects(fixture_dir, tmp_path):
    assert run_cli(fixture_dir, tmp_path, "--caliper", "0", "--emit", "report_json") == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["matching"]["pairs"] == 0
    assert report["effects"]["computed"] is False
    assert report["balance"]["after"] == []


def test_output_directory_from_environment(fixture_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("PSMATCH_OUTPUT_DIR", str(tmp_path / "env-out"))
    code = main(["run", "--input", str(fixture_dir / "cohort.csv"), "--seed", "1",
                 "--replicates", "100", "--emit", "report_json"])
    assert code == 0
    assert (tmp_path / "env-out" / "report.json").is_file()


def test_config_file_with_flag_override(fixture_dir, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        f'input = "{fixture_dir / "cohort.csv"}"\n'
        f'out = "{tmp_path / "from-file"}"\n'
        'seed = 5\nreplicates = 100\norder = "descending"\ncaliper = 0.1\nemit = ["report_json"]\n')
    assert main(["run", "--config", str(cfg), "--caliper", "0.2"]) == 0
    report = json.loads((tmp_path / "from-file" / "report.json").read_text())
    echo = report["provenance"]["config"]
    assert echo["caliper_multiplier"] == 0.2
    assert echo["match_order"] == "descending_ps"
    assert report["matching"]["seed"] is None

    bad = tmp_path / "bad.toml"
    bad.write_text('input = "x.csv"\ncolour = "red"\n')
    assert main(["run", "--config", str(bad)]) == 2


def test_validation_exit_codes(fixture_dir, tmp_path):
    base = ["run", "--input", str(fixture_dir / "cohort.csv"), "--out", str(tmp_path)]
    assert main(base) == 2                                  # random order without a seed
    assert main(base + ["--seed", "1", "--replicates", "10"]) == 2
    assert main(base + ["--seed", "1", "--outcome", "Nope"]) == 2
    assert main(["run", "--input", str(tmp_path / "missing.csv"), "--seed", "1"]) == 2


def write_cohort(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_validate_findings(fixture_dir, tmp_path):
    ok = RunConfig(str(fixture_dir / "cohort.csv"), seed=1, output_directory=str(tmp_path))
    assert validate(ok) == []

    schema = tmp_path / "schema.txt"
    schema.write_text("Age: continuous\nShoeSize: continuous\nGender: binary, treatment\nGrade: binary, outcome\n")
    missing = RunConfig(str(fixture_dir / "cohort.csv"), schema_path=str(schema), seed=1,
                        output_directory=str(tmp_path))
    assert [f.code for f in validate(missing)] == ["MissingColumn"]

    single = tmp_path / "single.csv"
    names = [s.name for s in glioma_schema()]
    rows = [[40 + i] + [0] * (len(names) - 2) + [i % 2] for i in range(6)]
    write_cohort(single, rows, names)
    findings = validate(RunConfig(str(single), seed=1, output_directory=str(tmp_path)))
    assert [f.code for f in findings] == ["SingleArm"]
    assert main(["run", "--input", str(single), "--seed", "1", "--validate-only"]) == 2
    assert main(["run", "--input", str(fixture_dir / "cohort.csv"), "--seed", "1", "--out", str(tmp_path),
                 "--validate-only"]) == 0


def test_degenerate_table_is_an_estimation_failure(tmp_path):
    # every treated record has the outcome, so the matched 2x2 table has an empty cell
    rng = np.random.default_rng(0)
    names = [s.name for s in glioma_schema()]
    rows = []
    for i in range(200):
        g = int(i % 2)
        muts = (rng.random(len(names) - 3) < 0.3).astype(int).tolist()
        rows.append([round(float(rng.uniform(20, 80)), 3), g] + muts + [1 if g else int(rng.random() < 0.5)])
    path = tmp_path / "degenerate.csv"
    write_cohort(path, rows, names)
    report, code = run(RunConfig(str(path), seed=2, replicates=100, output_directory=str(tmp_path / "o"),
                                 emit=("report_json",)))
    assert code == 3
    assert report["effects"]["computed"] is False
    assert "DegenerateTable" in report["effects"]["reason"]
    assert (tmp_path / "o" / "report.json").is_file()


def test_known_truth_is_recovered(tmp_path):
    out = tmp_path / "fx"
    assert main(["fixture", "--kind", "glioma-like", "--n", "3000", "--seed", "4",
                 "--effect", "0.3", "--out", str(out)]) == 0
    report, code = run(RunConfig(str(out / "cohort.csv"), schema_path=str(out / "schema.json"), seed=4,
                                 replicates=200, output_directory=str(tmp_path / "o"), emit=()))
    assert code == 0
    est = {e["estimand"]: e for e in report["effects"]["estimates"]}["ATT"]
    assert abs(est["estimate"] - 0.3) <= 3 * est["standard_error"]


def test_schema_json_writer_round_trip(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(schema_to_json(glioma_schema()))
    assert load_schema(p) == glioma_schema()
