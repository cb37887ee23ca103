import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catcast import core
from catcast.errors import DataError, FormatError
from catcast.ingest import (
    Dataset,
    GeneratorSpec,
    RawTable,
    bayes_accuracy,
    filter_years,
    ingest,
    make_folds,
    make_split,
    parse_csv,
    preprocess,
    raw_to_table,
    read_csv_text,
    synth_generate,
    synth_raw,
    write_csv,
)

HEADER = ",".join(core.RAW_COLUMNS)


def _row(**over):
    values = {c: "x" for c in core.RAW_COLUMNS}
    values.update(NUMBER="1", REF="2020.0001", DATE_CASE="13/11/2019")
    values.update(over)
    return ",".join(values[c] for c in core.RAW_COLUMNS)


# parse_csv -------------------------------------------------------------------

def test_minimal_parse():
    raw = read_csv_text("TYPE\nfood\nfeed\n")
    assert raw.header == ["TYPE"]
    assert raw.cells == [["food"], ["feed"]]


def test_quoted_comma_kept_in_one_cell():
    text = HEADER + "\n" + _row(SUBJECT='"aflatoxins, in pistachios"') + "\n"
    raw = read_csv_text(text)
    assert raw.column("SUBJECT") == ["aflatoxins, in pistachios"]


def test_ragged_row_reports_row_number():
    short = ",".join(["a"] * 16)
    text = HEADER + "\n" + _row() + "\n" + short + "\n"
    with pytest.raises(FormatError, match="row 3"):
        read_csv_text(text)


def test_missing_header():
    with pytest.raises(FormatError):
        parse_csv(io.StringIO(""))


def test_write_then_parse(tmp_path):
    raw = RawTable(["A", "B"], [["1", "x, y"], ["2", 'say "hi"']])
    write_csv(raw, tmp_path / "t.csv")
    assert parse_csv(tmp_path / "t.csv").cells == raw.cells


# preprocess ------------------------------------------------------------------

def test_case_and_whitespace_folded():
    raw = RawTable(["TYPE"], [[" Food"], ["food"]])
    assert preprocess(raw).cells == [["food"]]


def test_nan_like_becomes_blank():
    raw = RawTable(["TYPE"], [[""], ["NaN"], ["nan "]])
    assert preprocess(raw).cells == [[core.BLANK]]


def test_duplicates_removed_first_kept():
    raw = RawTable(["TYPE", "RISK_DECISION"], [["food", "a"], ["feed", "b"], ["food", "a"]])
    assert preprocess(raw).cells == [["food", "a"], ["feed", "b"]]


def test_number_and_ref_ignored_for_dedupe():
    raw = read_csv_text("\n".join([HEADER, _row(NUMBER="1", REF="r1"), _row(NUMBER="2", REF="r2")]))
    clean = preprocess(raw)
    assert len(clean) == 1
    assert core.NUMBER not in clean.header and core.REF not in clean.header


def test_date_gives_month_and_year():
    raw = RawTable(["DATE_CASE", "TYPE"], [["13/11/2019", "food"]])
    clean = preprocess(raw)
    row = dict(zip(clean.header, clean.cells[0]))
    assert row["MONTH"] == "11" and row["YEAR"] == "2019"


def test_bad_dates_dropped_and_counted(caplog):
    raw = RawTable(["DATE_CASE", "TYPE"], [["31/02/2019", "a"], ["garbage", "b"], ["01/01/2010", "c"]])
    clean = preprocess(raw)
    assert len(clean) == 1 and clean.dropped_rows == 2
    assert "unparseable" in caplog.text


def test_rename_map_merges_categories():
    raw = RawTable(["TYPE", "RISK_DECISION"], [["Food", "x"], ["foodstuff", "x"], ["feed", "y"]])
    clean = preprocess(raw, rename={"TYPE": {"FoodStuff": "food"}})
    assert clean.cells == [["food", "x"], ["feed", "y"]]


cells = st.sampled_from(["Food", " food", "feed", "", "NaN", "fcm ", "<BLANK>", "FCM"])


@given(st.lists(st.tuples(cells, cells, st.sampled_from(["01/02/2010", "3/4/2011", "bad", "29/02/2012"])),
                max_size=25))
def test_preprocess_idempotent(rows):
    raw = RawTable(["TYPE", "SUBJECT", "DATE_CASE"], [list(r) for r in rows])
    rename = {"*": {"fcm": "feed"}}
    once = preprocess(raw, rename)
    twice = preprocess(once, rename)
    assert twice.header == once.header
    assert twice.cells == once.cells


# years, splits, folds --------------------------------------------------------

def _year_table(years):
    return core.build_table({"TYPE": ["food"] * len(years)}, years)


def test_filter_years():
    t = filter_years(_year_table([2003, 2004, 2019]), 2004, 2019)
    assert sorted(t.year.tolist()) == [2004, 2019]
    full = _year_table([2005, 2006])
    assert filter_years(full, 2004, 2019).year.tolist() == [2005, 2006]
    with pytest.raises(DataError):
        filter_years(full, 2019, 2004)
    with pytest.raises(DataError):
        filter_years(full, 2010, 2012)


def test_split_small_exact_ratio():
    t = _year_table([2010] * 10 + [2019] * 3)
    for seed in range(5):
        plan = make_split(t, 2019, seed)
        assert (plan.train.size, plan.validation.size, plan.test.size) == (8, 2, 3)


def test_split_paper_sizes():
    # 47,627 non-test rows must split 38,102 / 9,525
    n = 38102 + 9525
    t = _year_table([2010] * n + [2019] * 2789)
    plan = make_split(t, 2019, 0)
    assert (plan.train.size, plan.validation.size, plan.test.size) == (38102, 9525, 2789)


def test_split_requires_test_rows():
    with pytest.raises(DataError):
        make_split(_year_table([2010, 2011]), 2019)


def test_split_deterministic():
    t = _year_table([2010 + i % 10 for i in range(100)])
    a, b = make_split(t, 2019, 7), make_split(t, 2019, 7)
    assert np.array_equal(a.train, b.train) and np.array_equal(a.validation, b.validation)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 120), st.integers(2, 6))
def test_fold_partition_law(seed, n, k):
    idx = np.arange(100, 100 + n)
    plan = make_folds(idx, k, seed)
    joined = np.concatenate(plan.folds)
    assert sorted(joined.tolist()) == idx.tolist()
    sizes = [f.size for f in plan.folds]
    assert max(sizes) - min(sizes) <= 1
    for i in range(k):
        assert sorted(np.concatenate([plan.train_indices(i), plan.folds[i]]).tolist()) == idx.tolist()


def test_fold_examples():
    assert [f.size for f in make_folds(np.arange(4), 2, 0).folds] == [2, 2]
    assert [f.size for f in make_folds(np.arange(10), 3, 0).folds] == [4, 3, 3]
    with pytest.raises(DataError):
        make_folds(np.arange(3), 4)


# synthetic generator -----------------------------------------------------------

def _mapped(spec, table):
    ids = {v: table.column(v) - 1 for v in table.schema.names}
    product = spec.product_map[ids["COUNTRY_ORIGIN"], ids["MONTH"]]
    hazard = spec.hazard_map[ids["PRODUCT_CATEGORY"], ids["COUNTRY_ORIGIN"]]
    action = spec.action_map[ids["HAZARD_CATEGORY"]]
    return [(ids["PRODUCT_CATEGORY"], product), (ids["HAZARD_CATEGORY"], hazard), (ids["ACTION_TAKEN"], action)]


def test_noiseless_rows_follow_mappings():
    spec = GeneratorSpec.uniform(6, 0.0, seed=2)
    for got, want in _mapped(spec, synth_generate(spec, 500)):
        assert np.array_equal(got, want)


def test_generator_deterministic():
    spec = GeneratorSpec.uniform(6, 0.2, seed=9)
    a, b = synth_generate(spec, 300), synth_generate(spec, 300)
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.year, b.year)


def test_violation_rate_matches_noise():
    k, eps = 10, 0.1
    spec = GeneratorSpec.uniform(k, eps, seed=4)
    expected = eps * (k - 1) / k
    for got, want in _mapped(spec, synth_generate(spec, 100_000)):
        assert abs(np.mean(got != want) - expected) <= 0.01


def test_bayes_accuracy_formula():
    assert bayes_accuracy(GeneratorSpec.uniform(10, 0.0, 0), 1) == 1.0
    assert bayes_accuracy(GeneratorSpec.uniform(10, 0.1, 0), 2) == pytest.approx(0.91)


def test_spec_validation():
    with pytest.raises(DataError):
        GeneratorSpec.uniform(5, 1.0, 0)
    with pytest.raises(DataError):
        GeneratorSpec.uniform(13, 0.0, 0)


def test_spec_file_round_trip(tmp_path):
    spec = GeneratorSpec.uniform(4, 0.05, seed=8)
    spec.save(tmp_path / "s.json")
    again = GeneratorSpec.load(tmp_path / "s.json")
    assert np.array_equal(again.hazard_map, spec.hazard_map)
    # mappings may be omitted: they are then drawn from the seed
    doc = json.loads((tmp_path / "s.json").read_text())
    del doc["mappings"]
    assert np.array_equal(GeneratorSpec.from_dict(doc).product_map, spec.product_map)


def test_raw_dump_ingests_to_same_records():
    spec = GeneratorSpec.uniform(4, 0.3, seed=5)
    table = synth_generate(spec, 50)
    raw = synth_raw(spec, 50)
    again = raw_to_table(preprocess(raw), schema=table.schema, provenance="synthetic")
    # dedupe may only remove rows; every surviving row is one of the originals
    originals = {tuple(r) for r in table.rows.tolist()}
    assert {tuple(r) for r in again.rows.tolist()} <= originals


def test_dataset_save_load(tmp_path):
    spec = GeneratorSpec.uniform(4, 0.1, seed=1)
    data = ingest(synth_raw(spec, 400), provenance="synthetic")
    data.save(tmp_path / "ds")
    back = Dataset.load(tmp_path / "ds")
    assert np.array_equal(back.table.rows, data.table.rows)
    assert np.array_equal(back.split.validation, data.split.validation)
    assert set(back.part("test").year.tolist()) == {2019}
    with pytest.raises(FormatError):
        Dataset.load(tmp_path / "missing")
