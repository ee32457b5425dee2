import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psmatch.cohort import (
    BINARY,
    CONTINUOUS,
    OUTCOME,
    TREATMENT,
    Cohort,
    CovariateSpec,
    describe,
    glioma_schema,
    load_cohort,
    load_schema,
    parse_schema,
    schema_to_json,
)
from psmatch.errors import (
    BadValue,
    EmptyCohort,
    MissingColumn,
    SchemaError,
    SingleArm,
    UnknownColumn,
)

from .helpers import random_cohort, small_schema

SCHEMA = (
    CovariateSpec("Age", CONTINUOUS, minimum=18),
    CovariateSpec("IDH1", BINARY),
    CovariateSpec("Gender", BINARY, TREATMENT),
    CovariateSpec("Grade", BINARY, OUTCOME),
)

FIVE_ROWS = """Age,IDH1,Gender,Grade
45.5,1,1,0
62,0,0,1
18,0,1,1
33.25,1,0,0
71.125,0,0,1
"""


def test_five_row_csv_matches_hand_parse():
    cohort = load_cohort(FIVE_ROWS.encode(), SCHEMA)
    expected = [
        (45.5, 1.0, 1.0, 0.0),
        (62.0, 0.0, 0.0, 1.0),
        (18.0, 0.0, 1.0, 1.0),
        (33.25, 1.0, 0.0, 0.0),
        (71.125, 0.0, 0.0, 1.0),
    ]
    assert cohort.n == 5
    assert cohort.records == expected


def test_column_order_in_file_does_not_matter_and_extras_are_ignored():
    text = "Grade,Note,Gender,IDH1,Age\n0,a,1,1,45.5\n1,b,0,0,62\n"
    cohort = load_cohort(io.StringIO(text), SCHEMA)
    assert cohort.records == [(45.5, 1.0, 1.0, 0.0), (62.0, 0.0, 0.0, 1.0)]


def test_accepts_path_and_bom(tmp_path):
    p = tmp_path / "c.csv"
    p.write_bytes(b"\xef\xbb\xbf" + FIVE_ROWS.encode())
    assert load_cohort(p, SCHEMA) == load_cohort(FIVE_ROWS.encode(), SCHEMA)


@pytest.mark.parametrize("cell, column, line", [
    ("45.5,2,1,0", "IDH1", 2),
    ("17,1,1,0", "Age", 2),
    ("abc,1,1,0", "Age", 2),
    (",1,1,0", "Age", 2),
    ("45,1,1,NA", "Grade", 2),
])
def test_bad_values_report_line_and_column(cell, column, line):
    text = "Age,IDH1,Gender,Grade\n" + cell + "\n62,0,0,1\n"
    with pytest.raises(BadValue) as info:
        load_cohort(text.encode(), SCHEMA)
    assert info.value.row == line
    assert info.value.column == column


def test_missing_column():
    with pytest.raises(MissingColumn) as info:
        load_cohort(b"Age,Gender,Grade\n40,1,0\n50,0,1\n", SCHEMA)
    assert info.value.name == "IDH1"


def test_empty_and_single_arm():
    with pytest.raises(EmptyCohort):
        load_cohort(b"Age,IDH1,Gender,Grade\n", SCHEMA)
    with pytest.raises(SingleArm):
        load_cohort(b"Age,IDH1,Gender,Grade\n40,1,1,0\n50,0,1,1\n", SCHEMA)


def test_schema_invariants():
    with pytest.raises(SchemaError):
        CovariateSpec("t", CONTINUOUS, TREATMENT)
    with pytest.raises(SchemaError):
        parse_schema("a: binary, treatment\nb: binary, treatment\ny: binary, outcome\n")
    with pytest.raises(SchemaError):
        parse_schema("a: binary\na: continuous\nt: binary, treatment\ny: binary, outcome\n")
    with pytest.raises(SchemaError):
        parse_schema("a: binary\nt: binary, treatment\n")


def test_text_and_json_schema_agree(tmp_path):
    text = "# glioma subset\nAge: continuous, min=18\nIDH1: binary\nGender: binary, treatment\nGrade: binary, outcome\n"
    assert parse_schema(text) == SCHEMA
    p = tmp_path / "s.json"
    p.write_text(schema_to_json(SCHEMA))
    assert load_schema(p) == SCHEMA


def test_bundled_schema_order():
    names = [s.name for s in glioma_schema()]
    assert names == ["Age", "Gender", "IDH1", "ATRX", "PTEN", "EGFR", "CIC", "BCOR", "MUC16",
                     "PIK3R1", "PDGFRA", "CSMD3", "IDH2", "FAT4", "Grade"]
    roles = {s.name: s.role for s in glioma_schema() if s.role != "covariate"}
    assert roles == {"Gender": TREATMENT, "Grade": OUTCOME}


def test_data_is_read_only():
    cohort = load_cohort(FIVE_ROWS.encode(), SCHEMA)
    with pytest.raises(ValueError):
        cohort.data[0, 0] = 99.0


def test_with_roles_swaps_treatment():
    cohort = load_cohort(FIVE_ROWS.encode(), SCHEMA).with_roles(treatment="IDH1")
    assert cohort.treatment.name == "IDH1"
    assert cohort.spec("Gender").role == "covariate"


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(4, 60))
def test_csv_round_trip(seed, n):
    cohort = random_cohort(np.random.default_rng(seed), n=n, n_binary=2, n_continuous=2)
    again = load_cohort(cohort.to_csv().encode(), cohort.schema)
    assert again == cohort


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(4, 60))
def test_describe_is_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    cohort = random_cohort(rng, n=n, n_binary=2, n_continuous=2)
    shuffled = cohort.take(rng.permutation(n))
    assert describe(cohort, "y").to_dict() == describe(shuffled, "y").to_dict()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_strata_counts_sum_to_overall(seed):
    cohort = random_cohort(np.random.default_rng(seed), n=30, n_binary=3)
    summary = describe(cohort, "y")
    for entry in summary.entries:
        if entry.kind != BINARY:
            continue
        overall, s0, s1 = entry.stats
        assert overall.count == s0.count + s1.count
        for s in entry.stats:
            assert 0 <= s.percent <= 100
    assert summary.sizes[0] == summary.sizes[1] + summary.sizes[2]


def test_identical_records_give_degenerate_summary():
    row = [1.0, 42.0, 1.0, 0.0]
    data = np.array([row, row, row, [1.0, 42.0, 0.0, 0.0]])
    summary = describe(Cohort(small_schema(), data), "t")
    assert summary.get("x0").sd == 0.0
    assert summary.get("b0").percent == 100.0
    assert summary.get("y").percent == 0.0


def test_describe_sample_sd():
    cohort = load_cohort(FIVE_ROWS.encode(), SCHEMA)
    age = np.array([45.5, 62, 18, 33.25, 71.125])
    stats = describe(cohort, "Grade").get("Age")
    assert stats.mean == pytest.approx(age.mean(), abs=1e-12)
    assert stats.sd == pytest.approx(age.std(ddof=1), abs=1e-12)


def test_describe_unknown_or_continuous_stratifier():
    cohort = load_cohort(FIVE_ROWS.encode(), SCHEMA)
    with pytest.raises(UnknownColumn):
        describe(cohort, "Nope")
    with pytest.raises(SchemaError):
        describe(cohort, "Age")


# Reference descriptive table (overall / LGG / GBM).
REFERENCE_DESCRIPTIVES = {
    "Gender": [(351, 41.84), (216, 44.35), (135, 38.35)],
    "IDH1": [(404, 48.15), (381, 78.23), (23, 6.53)],
    "ATRX": [(217, 25.86), (183, 37.58), (34, 9.66)],
    "PTEN": [(141, 16.81), (25, 5.13), (116, 32.95)],
    "EGFR": [(112, 13.35), (31, 6.37), (81, 23.01)],
    "CIC": [(111, 13.23), (107, 21.97), (4, 1.14)],
    "MUC16": [(98, 11.68), (41, 8.42), (57, 16.19)],
    "PIK3R1": [(54, 6.44), (21, 4.31), (33, 9.38)],
    "PDGFRA": [(22, 2.62), (6, 1.23), (16, 4.55)],
    "FAT4": [(23, 2.74), (11, 2.26), (12, 3.41)],
}


def test_fixture_reproduces_reference_descriptives(glioma):
    summary = describe(glioma, "Grade")
    assert summary.sizes == (839, 487, 352)
    for name, cells in REFERENCE_DESCRIPTIVES.items():
        for stats, (count, pct) in zip(summary.entry(name).stats, cells):
            assert stats.count == count
            assert round(stats.percent, 2) == pytest.approx(pct, abs=0.01)
    age = summary.entry("Age").stats
    assert (round(age[0].mean, 2), round(age[0].sd, 2)) == (50.94, 15.70)
    assert (round(age[2].mean, 2), round(age[2].sd, 2)) == (60.70, 13.43)
