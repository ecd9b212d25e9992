"""Records, datasets, block summaries, and CSV round-tripping."""

import io
import math
import os

import numpy as np
import pytest

from strata_bounds import (
    BlockSummary,
    Dataset,
    DesignError,
    ParseError,
    UnitRecord,
    ValidationError,
    block_design,
    dataset_from_arrays,
    dataset_to_csv_text,
    parse_csv,
    write_csv,
)

from conftest import build_dataset, hand_arrays

from frozen_values import DESIGN_ETAS, DESIGN_P_HAT


# ---------------------------------------------------------------------------
# UnitRecord
# ---------------------------------------------------------------------------

def test_record_accepts_observed_and_missing():
    obs = UnitRecord(y=1.5, s=1, d=0, block="a")
    miss = UnitRecord(y=None, s=0, d=1, block="a")
    assert obs.y == 1.5 and miss.y is None


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(y=1.0, s=2, d=0, block="a"),
        dict(y=1.0, s=1, d=-1, block="a"),
        dict(y=None, s=1, d=0, block="a"),
        dict(y=float("nan"), s=1, d=0, block="a"),
        dict(y=float("inf"), s=1, d=0, block="a"),
        dict(y=1.0, s=0, d=0, block="a"),
        dict(y=1.0, s=1, d=0, block=""),
        dict(y=1.0, s=1, d=0, block="   "),
        dict(y=1.0, s=1, d=0, block="a", x=(1.0, float("nan"))),
    ],
)
def test_record_rejects_invalid(kwargs):
    with pytest.raises(ValidationError):
        UnitRecord(**kwargs)


def test_record_trims_block_label_and_drops_empty_x():
    rec = UnitRecord(y=1.0, s=1, d=0, block="  b1  ", x=())
    assert rec.block == "b1"
    assert rec.x is None


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

def test_dataset_columns_cached_and_missing_outcomes_are_nan(hand_dataset):
    assert hand_dataset.n == 20
    assert hand_dataset.y.shape == (20,)
    assert np.isnan(hand_dataset.y[hand_dataset.s == 0]).all()
    assert hand_dataset.d.sum() == 10
    assert hand_dataset.blocks == ("a",) * 20


def test_dataset_columns_are_read_only(hand_dataset):
    with pytest.raises(ValueError):
        hand_dataset.y[0] = 99.0


def test_dataset_needs_two_units():
    with pytest.raises(ValidationError, match="at least 2"):
        Dataset(records=(UnitRecord(y=1.0, s=1, d=1, block="a"),))


def test_dataset_needs_both_arms():
    recs = tuple(UnitRecord(y=1.0, s=1, d=1, block="a") for _ in range(4))
    with pytest.raises(ValidationError, match="treated and one control"):
        Dataset(records=recs)


def test_dataset_rejects_singleton_block():
    recs = (
        UnitRecord(y=1.0, s=1, d=1, block="a"),
        UnitRecord(y=2.0, s=1, d=0, block="a"),
        UnitRecord(y=3.0, s=1, d=0, block="lonely"),
    )
    with pytest.raises(ValidationError, match="lonely"):
        Dataset(records=recs)


def test_dataset_rejects_mixed_covariate_arity():
    recs = (
        UnitRecord(y=1.0, s=1, d=1, block="a", x=(1.0,)),
        UnitRecord(y=2.0, s=1, d=0, block="a", x=(1.0, 2.0)),
    )
    with pytest.raises(ValidationError, match="arity"):
        Dataset(records=recs)


def test_dataset_from_arrays_ignores_y_where_unselected():
    data = dataset_from_arrays(
        y=[1.0, 999.0, 2.0, 3.0],
        s=[1, 0, 1, 1],
        d=[1, 1, 0, 0],
        block=["a", "a", "a", "a"],
    )
    assert data.records[1].y is None
    assert math.isnan(data.y[1])


# ---------------------------------------------------------------------------
# block_design
# ---------------------------------------------------------------------------

def test_block_design_frozen_two_block_values(two_block_dataset):
    design = block_design(two_block_dataset)
    assert tuple(b.eta_g for b in design.blocks) == DESIGN_ETAS
    assert design.p_hat == DESIGN_P_HAT
    assert [b.label for b in design.blocks] == ["a", "b"]
    assert [b.n_g for b in design.blocks] == [4, 6]
    assert [b.t_g for b in design.blocks] == [1, 3]
    assert [b.n1s_g for b in design.blocks] == [1, 3]
    assert [b.n0s_g for b in design.blocks] == [3, 3]
    assert design.index_of("b") == 1


def test_block_design_codes_follow_dataset_order(two_block_dataset):
    design = block_design(two_block_dataset)
    assert design.codes.tolist() == [0] * 4 + [1] * 6


def test_block_design_sorts_labels_not_input_order():
    data = build_dataset(
        y=[1.0, 2.0, 3.0, 4.0],
        s=[1, 1, 1, 1],
        d=[1, 0, 1, 0],
        blocks=["zz", "zz", "aa", "aa"],
    )
    design = block_design(data)
    assert [b.label for b in design.blocks] == ["aa", "zz"]
    assert design.codes.tolist() == [1, 1, 0, 0]


def test_block_design_covariate_means():
    x = np.array([[1.0], [3.0], [10.0], [20.0]])
    data = build_dataset(
        y=[1.0, 2.0, 3.0, 4.0],
        s=[1, 1, 1, 1],
        d=[1, 0, 1, 0],
        blocks=["a", "a", "b", "b"],
        x=x,
    )
    design = block_design(data)
    assert design.blocks[0].x_mean == (2.0,)
    assert design.blocks[1].x_mean == (15.0,)


def test_block_design_rejects_one_armed_block_by_name():
    data = build_dataset(
        y=[1.0, 2.0, 3.0, 4.0],
        s=[1, 1, 1, 1],
        d=[1, 1, 1, 0],
        blocks=["bad", "bad", "ok", "ok"],
    )
    with pytest.raises(DesignError, match="bad"):
        block_design(data)


def test_block_summary_rejects_degenerate_counts():
    with pytest.raises(DesignError):
        BlockSummary(
            label="g", n_g=3, t_g=3, eta_g=1.0, m_g=0.0,
            n1s_g=0, n0s_g=0, x_mean=None,
        )


# ---------------------------------------------------------------------------
# parse_csv
# ---------------------------------------------------------------------------

HAND_CSV = (
    "y,s,d,block\n"
    "1,1,1,a\n2,1,1,a\n3,1,1,a\n4,1,1,a\n5,1,1,a\n6,1,1,a\n7,1,1,a\n8,1,1,a\n"
    "NA,0,1,a\n,0,1,a\n"
    "1,1,0,a\n2,1,0,a\n3,1,0,a\n4,1,0,a\n5,1,0,a\n6,1,0,a\n"
    "NA,0,0,a\n,0,0,a\nNA,0,0,a\n,0,0,a\n"
)


def test_parse_csv_hand_text_matches_fixture(hand_dataset):
    parsed = parse_csv(io.StringIO(HAND_CSV))
    assert parsed.records == hand_dataset.records


def test_parse_csv_skips_blank_lines_and_trims_header():
    text = "y , s , d , block\n\n1,1,1,a\n   \n2,1,0,a\n"
    data = parse_csv(io.StringIO(text))
    assert data.n == 2


def test_parse_csv_reads_covariates_in_declared_order():
    text = "x2,y,s,d,block,x1\n5.0,1,1,1,a,7.0\n6.0,2,1,0,a,8.0\n"
    data = parse_csv(io.StringIO(text))
    assert data.records[0].x == (7.0, 5.0)
    assert data.x.tolist() == [[7.0, 5.0], [8.0, 6.0]]


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("", "empty file"),
        ("y,s,d\n1,1,1\n", "missing required columns: block"),
        ("y,s,d,block,y\n1,1,1,a,1\n", "duplicate column"),
        ("y,s,d,block,z\n1,1,1,a,2\n", "x1..xk"),
        ("y,s,d,block,x1,x3\n1,1,1,a,2,3\n", "x1..xk"),
        ("y,s,d,block\n", "no data rows"),
        ("y,s,d,block\n1,1,1\n", "row 1: expected 4 cells"),
        ("y,s,d,block\n1,1,1,a\n1,2,1,a\n", "row 2: s must be 0 or 1"),
        ("y,s,d,block\n1,1,yes,a\n", "row 1: d must be 0 or 1"),
        ("y,s,d,block\nNA,1,1,a\n", "row 1: y is missing but s = 1"),
        ("y,s,d,block\n3,0,1,a\n", "row 1: y is present but s = 0"),
        ("y,s,d,block\nabc,1,1,a\n", "row 1: y must be numeric"),
        ("y,s,d,block\ninf,1,1,a\n", "row 1: y must be finite"),
        ("y,s,d,block\n1,1,1,\n", "row 1: block label is empty"),
        ("y,s,d,block,x1\n1,1,1,a,oops\n", "row 1: x1 must be numeric"),
        ("y,s,d,block,x1\n1,1,1,a,nan\n", "row 1: x1 must be finite"),
    ],
)
def test_parse_csv_reports_row_nummed_errors(text, fragment):
    with pytest.raises(ParseError, match=fragment.replace("(", "\\(")):
        parse_csv(io.StringIO(text))


def test_parse_csv_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(ParseError, match="cannot read"):
        parse_csv(str(tmp_path / "nope.csv"))


def test_parse_csv_accepts_lowercase_na_only_as_uppercase_alias():
    data = parse_csv(io.StringIO("y,s,d,block\nna,0,1,a\n1,1,0,a\n"))
    assert data.records[0].y is None


# ---------------------------------------------------------------------------
# CSV writing
# ---------------------------------------------------------------------------

def test_csv_round_trip_preserves_records_exactly():
    rng = np.random.default_rng(42)
    y = rng.normal(size=8) / 3.0  # non-terminating binary fractions
    s = np.array([1, 1, 0, 1, 1, 1, 0, 1])
    d = np.array([1, 0, 1, 0, 1, 0, 0, 1])
    x = rng.normal(size=(8, 2))
    data = build_dataset(y, s, d, ["a"] * 4 + ["b"] * 4, x=x)
    back = parse_csv(io.StringIO(dataset_to_csv_text(data)))
    assert back.records == data.records


def test_write_csv_to_path_is_atomic(tmp_path, hand_dataset):
    path = tmp_path / "data.csv"
    write_csv(hand_dataset, str(path))
    assert parse_csv(str(path)).records == hand_dataset.records
    leftovers = [p for p in os.listdir(tmp_path) if ".tmp." in p]
    assert leftovers == []


def test_write_csv_header_includes_covariates():
    data = build_dataset(
        y=[1.0, 2.0], s=[1, 1], d=[1, 0], blocks=["a", "a"],
        x=np.array([[1.0, 2.0], [3.0, 4.0]]),
    )
    text = dataset_to_csv_text(data)
    assert text.splitlines()[0] == "y,s,d,block,x1,x2"


def test_hand_arrays_agree_with_hand_fixture(hand_dataset):
    y, s, d, blocks = hand_arrays()
    rebuilt = build_dataset(y, s, d, blocks)
    assert rebuilt.records == hand_dataset.records
