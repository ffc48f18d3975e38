import csv
import io

import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, make_center
from rrforensics.errors import DataValidationError
from rrforensics.ingest import (COMPUTERIZED, MANUAL, Dataset, EventTally, Filter, GeoPath,
                                dumps_centers, join_events, match_signatures, mixed_townships,
                                parse_centers, read_centers, read_person_file, stratify)

HEADER = "code,state,county,township,channel,consular,hamlet,signatures,rep_apr,rep_jul,in20,sel192,aud26,coldaud"
RR_COLS = ",RR2004_fav,RR2004_unf,RR2004_null"


def _row(code, sig=10, fav=12, unf=8, null=0, channel="C", hamlet="0", flags="0,0,0,0"):
    return f"{code},S,C,T,{channel},0,{hamlet},{sig},100,110,{flags},{fav},{unf},{null}"


def _read(text, **kw):
    return read_centers(io.StringIO(text), **kw)


def test_three_rows_sorted_by_code():
    text = "\n".join([HEADER + RR_COLS, _row("01.01.003"), _row("01.01.001"), _row("01.01.002")]) + "\n"
    ds = _read(text)
    assert ds.codes() == ["01.01.001", "01.01.002", "01.01.003"]


def test_duplicate_code_names_the_code():
    text = "\n".join([HEADER + RR_COLS, _row("01.01.001"), _row("01.01.002"), _row("01.01.001")])
    with pytest.raises(DataValidationError, match=r"01\.01\.001") as exc:
        _read(text)
    assert "row 4" in str(exc.value) and "row 2" in str(exc.value)


@pytest.mark.parametrize("cell, kind", [("-5", "negative"), ("7x", "malformed"), ("", "malformed")])
def test_bad_count_reports_row(cell, kind):
    text = "\n".join([HEADER + RR_COLS, _row("a"), _row("b", sig=cell)])
    with pytest.raises(DataValidationError, match=rf"row 3: .*{kind}"):
        _read(text)


def test_unknown_column_rejected():
    with pytest.raises(DataValidationError, match="unknown column 'turnout'"):
        _read(HEADER + RR_COLS + ",turnout\n" + _row("a") + ",5\n")


def test_incomplete_event_block_rejected():
    with pytest.raises(DataValidationError, match="E1998_null"):
        _read(HEADER + RR_COLS + ",E1998_fav,E1998_unf\n" + _row("a") + ",1,2\n")


def test_wrong_field_count_rejected():
    with pytest.raises(DataValidationError, match="row 2: expected"):
        _read(HEADER + RR_COLS + "\n" + _row("a") + ",9\n")


def test_missing_rr_tally_rejected():
    with pytest.raises(DataValidationError, match="row 2: .*RR2004"):
        _read(HEADER + RR_COLS + "\na,S,C,T,C,0,0,10,100,110,0,0,0,0,,,\n")


def test_partially_blank_block_rejected():
    with pytest.raises(DataValidationError, match="partially blank"):
        _read(HEADER + RR_COLS + "\na,S,C,T,C,0,0,10,100,110,0,0,0,0,5,,0\n")


def test_optional_event_absent_not_zero():
    text = HEADER + RR_COLS + ",E1998_fav,E1998_unf,E1998_null\n" + _row("a") + ",,,\n" + _row("b") + ",0,0,0\n"
    ds = _read(text)
    a, b = ds.centers
    assert a.tally("E1998") is None
    assert b.tally("E1998") == EventTally("E1998", 0, 0, 0)


@pytest.mark.parametrize("flags, msg", [("1,0,1,0", "aud26 set without sel192"),
                                        ("0,1,0,0", "sel192 requires in20")])
def test_record_invariants(flags, msg):
    with pytest.raises(DataValidationError, match=msg):
        _read(HEADER + RR_COLS + "\n" + _row("a", flags=flags) + "\n")


def test_selected_manual_center_rejected():
    with pytest.raises(DataValidationError, match="sel192 requires"):
        _read(HEADER + RR_COLS + "\n" + _row("a", channel="M", flags="1,1,0,0") + "\n")


def test_computerized_null_votes_rejected():
    with pytest.raises(DataValidationError, match="null votes"):
        _read(HEADER + RR_COLS + "\n" + _row("a", null=3) + "\n")
    ds = _read(HEADER + RR_COLS + "\n" + _row("a", null=3, channel="M") + "\n")
    assert ds.centers[0].tally().total == 23


def test_schema_mismatch_rejected():
    with pytest.raises(DataValidationError, match="do not match"):
        _read(HEADER + RR_COLS + "\n" + _row("a") + "\n", schema={"RR2004", "E1998"})


def test_hamlet_from_address():
    text = HEADER + RR_COLS + ",address\n" + _row("a", hamlet="") + ",Caserío El Pozo\n" \
        + _row("b", hamlet="") + ",Calle 5\n" + _row("c", hamlet="1") + ",Calle 6\n"
    ds = _read(text)
    assert [c.hamlet for c in ds] == [True, False, True]


def test_empty_file_rejected():
    with pytest.raises(DataValidationError, match="row 1"):
        _read("")


def test_mini50_rr_totals_match_column_sum(mini50, mini50_path):
    with open(mini50_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    col_sum = sum(int(r["RR2004_fav"]) + int(r["RR2004_unf"]) + int(r["RR2004_null"]) for r in rows)
    assert len(mini50) == 50
    assert sum(c.tally().total for c in mini50) == col_sum


def test_mini50_hamlet_stratum_has_seven(mini50):
    assert len(stratify(mini50, hamlet=True)) == 7


def test_provenance_records_digest(mini50_path):
    import hashlib
    ds = parse_centers(mini50_path)
    assert hashlib.sha256(mini50_path.read_bytes()).hexdigest() in ds.provenance


def test_round_trip_is_byte_identical(mini50_path):
    text = mini50_path.read_text()
    assert dumps_centers(_read(text)) == text
    assert dumps_centers(_read(dumps_centers(_read(text)))) == text


# -- joins --------------------------------------------------------------------

def _codes_ds(codes, event="RR2004"):
    return Dataset(tuple(make_center(c) for c in codes))


def test_join_counts_shared_codes():
    base = _codes_ds([f"c{i:02d}" for i in range(10)])
    other = _codes_ds([f"c{i:02d}" for i in range(2, 12)])
    joined, rep = join_events(base, other, "E1998", source_event="RR2004")
    assert rep.matched == 8 and rep.base_only == 2 and rep.other_only == 2 and rep.attached == 8
    assert sum(c.tally("E1998") is not None for c in joined) == 8
    assert joined.by_code()["c00"].tally("E1998") is None


def test_self_join_matches_everything(mini50):
    _, rep = join_events(mini50, mini50, "GOV2004", source_event="RR2004")
    assert rep.matched == len(mini50)


def test_join_refuses_to_overwrite(mini50):
    with pytest.raises(DataValidationError, match="already populated"):
        join_events(mini50, mini50, "RR2004")


def test_join_reports_geo_mismatch():
    base = Dataset((make_center("a"), make_center("b")))
    other = Dataset((make_center("a", geo=("S", "C", "T2")), make_center("b")))
    _, rep = join_events(base, other, "E2000", source_event="RR2004")
    assert rep.geo_mismatches == ("a",)


def test_national_scale_join_replica():
    shared = [f"s{i:05d}" for i in range(8328)]
    base = _codes_ds(shared + [f"b{i:05d}" for i in range(8394 - 8328)])
    other = _codes_ds(shared + [f"o{i:05d}" for i in range(8431 - 8328)])
    _, rep = join_events(base, other, "E1998", source_event="RR2004")
    assert (len(base), len(other), rep.matched) == (8394, 8431, 8328)


@settings(max_examples=40, deadline=None)
@given(st.sets(st.integers(0, 40)), st.sets(st.integers(0, 40)))
def test_join_match_count_commutes(a, b):
    da, db = _codes_ds([f"c{i}" for i in a]), _codes_ds([f"c{i}" for i in b])
    assert join_events(da, db, "E1998", "RR2004")[1].matched == join_events(db, da, "E1998", "RR2004")[1].matched


# -- signatures ---------------------------------------------------------------

def test_five_signers_one_center():
    m = match_signatures([f"p{i}" for i in range(5)], {f"p{i}": "X" for i in range(8)})
    assert m.counts == {"X": 5} and m.unmatched == ()


def test_unmatched_signer_reported():
    reg = {"p1": "X", "p2": "X"}
    m = match_signatures(["p1", "p2", "ghost"], reg)
    assert m.counts == {"X": 2} and m.unmatched == ("ghost",)


def test_duplicate_signer_counted_once():
    m = match_signatures(["p1", "p1"], {"p1": "X"})
    assert m.counts == {"X": 1} and m.duplicates == ("p1",)


def test_duplicate_registry_entry_rejected():
    with pytest.raises(DataValidationError, match="duplicate person_id"):
        match_signatures(["p1"], [("p1", "X"), ("p1", "Y")])


def test_signature_fixture_matches_groupby():
    with open(FIXTURES / "registry.csv", newline="") as fh:
        where = {r["person_id"]: r["center_code"] for r in csv.DictReader(fh)}
    with open(FIXTURES / "signers.csv", newline="") as fh:
        signer_ids = [r["person_id"] for r in csv.DictReader(fh)]
    expected = {}
    for pid in signer_ids:
        expected[where[pid]] = expected.get(where[pid], 0) + 1
    m = match_signatures(FIXTURES / "signers.csv", FIXTURES / "registry.csv")
    assert m.counts == expected
    assert len(m.counts) == 10 and m.matched == 200


def test_person_file_needs_person_id(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("id,center_code\n1,A\n")
    with pytest.raises(DataValidationError, match="person_id"):
        read_person_file(p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 30), max_size=60), st.dictionaries(st.integers(0, 30), st.sampled_from("ABC")))
def test_signature_total_equals_matched_signers(signers, registry):
    m = match_signatures([f"p{i}" for i in signers], {f"p{k}": v for k, v in registry.items()})
    assert m.matched == len({i for i in signers if i in registry})
    assert m.matched + len(m.unmatched) + len(m.duplicates) == len(signers)


# -- stratification -----------------------------------------------------------

def test_mixed_predicate_on_all_computerized_is_empty(mini50):
    comp = Dataset(tuple(c for c in mini50 if c.computerized))
    assert len(stratify(comp, mixed_township=True)) == 0


def test_national_scale_mixed_township_replica():
    centers = []
    # 200 mixed townships holding 2538 manual and 2911 computerized centers
    for i in range(2538):
        centers.append(make_center(f"m{i:05d}", channel=MANUAL, geo=("S", "C", f"mix{i % 200}")))
    for i in range(2911):
        centers.append(make_center(f"c{i:05d}", geo=("S", "C", f"mix{i % 200}")))
    # single-channel townships
    for i in range(1000):
        centers.append(make_center(f"x{i:05d}", channel=MANUAL, geo=("S", "C", f"man{i % 80}")))
    for i in range(1500):
        centers.append(make_center(f"y{i:05d}", geo=("S", "C", f"com{i % 90}")))
    ds = Dataset(tuple(centers))
    mixed = stratify(ds, mixed_township=True)
    assert len(mixed) == 5449
    assert len(stratify(mixed, channel=MANUAL)) == 2538
    assert len(stratify(mixed, channel=COMPUTERIZED)) == 2911
    assert len(mixed_townships(ds)) == 200


def test_mixed_status_survives_channel_filter():
    ds = Dataset((make_center("a", channel=MANUAL), make_center("b"), make_center("c", geo=("S", "C", "U"))))
    comp = stratify(ds, channel=COMPUTERIZED)
    assert stratify(comp, mixed_township=True).codes() == ["b"]


def test_s_bounds_partition(mini50):
    low = stratify(mini50, s_at_most=0.5)
    high = stratify(mini50, s_above=0.5)
    assert len(low) + len(high) == len(mini50)
    assert not set(low.codes()) & set(high.codes())


def test_geo_filter():
    ds = Dataset((make_center("a", geo=("S1", "C", "T")), make_center("b", geo=("S2", "C", "T"))))
    assert stratify(ds, state="S2").codes() == ["b"]
    assert ds.centers[0].geo.at("county") == ("S1", "C")


_filters = st.builds(
    Filter,
    channel=st.sampled_from([None, COMPUTERIZED, MANUAL]),
    hamlet=st.sampled_from([None, True, False]),
    in20=st.sampled_from([None, True, False]),
    mixed_township=st.sampled_from([None, True, False]),
    s_above=st.sampled_from([None, 0.3, 0.5]),
    s_at_most=st.sampled_from([None, 0.6, 0.8]),
)


@settings(max_examples=80, deadline=None)
@given(_filters, _filters)
def test_sequential_stratify_equals_conjunction(mini50, p1, p2):
    assert stratify(stratify(mini50, p1), p2).codes() == stratify(mini50, p1 & p2).codes()


def test_dataset_rejects_duplicates():
    with pytest.raises(DataValidationError, match="dup"):
        Dataset((make_center("dup"), make_center("dup")))


def test_geopath_requires_all_levels():
    with pytest.raises((DataValidationError, ValueError)):
        GeoPath("S", "", "T")
