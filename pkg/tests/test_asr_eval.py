import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reference_tables import TABLES
from speechforge.asr_eval import (
    TranscriptPair,
    WerCounts,
    aggregate,
    edit_distance,
    normalize_transcript,
    pair_transcripts,
    read_condition_table,
    read_transcripts,
    relative_improvement,
    table_average,
    wer,
    write_wer_tables,
)
from wer_oracle import all_sequences, brute_alignments, brute_distance

SEQS = list(all_sequences())


def test_normalize_examples():
    assert normalize_transcript("Hello, world.") == ["HELLO", "WORLD"]
    assert normalize_transcript("") == []
    assert normalize_transcript("DON'T  stop") == ["DON'T", "STOP"]


@given(st.text())
def test_normalize_fixed_point(text):
    once = normalize_transcript(text)
    assert normalize_transcript(" ".join(once)) == once


def test_wer_examples():
    assert wer("abc", "abc").wer_pct == 0.0
    c = wer("a b c".split(), "a x c".split())
    assert (c.S, c.D, c.I) == (1, 0, 0) and c.wer_pct == pytest.approx(33.3333, abs=1e-4)
    c = wer(["a"], "a b c".split())
    assert (c.S, c.D, c.I, c.N) == (0, 0, 2, 1) and c.wer_pct == 200.0


def test_wer_empty_reference():
    with pytest.raises(ValueError):
        wer([], ["a"])


def test_wer_matches_brute_force_exhaustively():
    for ref in SEQS:
        for hyp in SEQS:
            best = brute_distance(ref, hyp)
            assert edit_distance(ref, hyp) == best
            if ref:
                c = wer(ref, hyp)
                assert c.errors == best
                assert (c.S, c.D, c.I) in brute_alignments(ref, hyp)


def test_metric_axioms_exhaustively():
    small = [s for s in SEQS if len(s) <= 3]
    for a in SEQS:
        assert edit_distance(a, a) == 0
        for b in SEQS:
            d = edit_distance(a, b)
            assert d == edit_distance(b, a)
            assert (d == 0) == (a == b)
    for a in small:
        for b in small:
            for c in small:
                assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


def test_tie_break_prefers_substitution():
    # "a b" vs "b c": two substitutions or one deletion plus one insertion.
    c = wer("ab", "bc")
    assert (c.S, c.D, c.I) == (2, 0, 0)


@given(st.lists(st.tuples(st.lists(st.sampled_from("abc"), min_size=3, max_size=3),
                          st.lists(st.sampled_from("abc"), max_size=5)), min_size=1, max_size=6))
def test_pooled_between_min_and_max(pairs):
    tp = [TranscriptPair(f"u{i}", tuple(r), tuple(h)) for i, (r, h) in enumerate(pairs)]
    rep = aggregate(tp)
    rates = [c.wer_pct for c in rep.utterances.values()]
    assert min(rates) - 1e-9 <= rep.conditions["all"] <= max(rates) + 1e-9


def test_aggregate_grouping_and_modes():
    pairs = [
        TranscriptPair("a", ("X",), ("Y",), {"snr_db": "-6"}),
        TranscriptPair("b", ("X", "Y", "Z"), ("X", "Y", "Z"), {"snr_db": "-6"}),
        TranscriptPair("c", ("X",), ("X",), {"snr_db": "9"}),
    ]
    pooled = aggregate(pairs, "snr_db")
    assert list(pooled.conditions) == ["-6", "9"]
    assert pooled.conditions["-6"] == 25.0
    assert pooled.average == 12.5
    assert aggregate(pairs, "snr_db", mode="mean").conditions["-6"] == 50.0
    with pytest.raises(ValueError, match="grouping"):
        aggregate(pairs, "noise")
    with pytest.raises(ValueError):
        aggregate([])


def test_single_condition_average():
    assert table_average([7.25]) == 7.25


def test_table_i_unprocessed():
    cells, avg = TABLES["I"]["unprocessed"]
    assert table_average(cells) == pytest.approx(avg, abs=0.005)


def test_table_ii_row_one():
    cells, avg = TABLES["II"]["row1"]
    assert table_average(cells) == pytest.approx(avg, abs=0.005)


# Printed averages that are not the rounded mean of their printed cells.
INCONSISTENT = {("I", "row4"), ("III", "t1_arn_pcm"), ("III", "t4_noisy160k"),
                ("IV", "row8"), ("IV", "row11")}
# Exact half-way means (e.g. 7.775) sit on the boundary; allow float error only.
FLOAT_SLACK = 1e-9


def table_rows():
    for table, rows in TABLES.items():
        for name, (cells, avg) in rows.items():
            marks = ()
            if (table, name) in INCONSISTENT:
                marks = pytest.mark.xfail(strict=True, reason="printed Avg disagrees with its cells")
            yield pytest.param(cells, avg, id=f"{table}-{name}", marks=marks)


@pytest.mark.parametrize("cells,avg", list(table_rows()))
def test_every_table_average(cells, avg):
    assert abs(table_average(cells) - avg) <= 0.005 + FLOAT_SLACK


def test_relative_improvement():
    assert relative_improvement(7.78, 5.57) == pytest.approx(28.406, abs=1e-3)
    assert round(relative_improvement(7.78, 5.57), 2) == 28.41
    assert relative_improvement(10, 5) == 50.0
    assert relative_improvement(4.2, 4.2) == 0.0
    with pytest.raises(ValueError):
        relative_improvement(0.0, 1.0)


def test_counts_add():
    assert WerCounts(1, 2, 3, 10) + WerCounts(0, 1, 0, 5) == WerCounts(1, 3, 3, 15)


def test_files_roundtrip(tmp_path):
    (tmp_path / "ref.txt").write_text("u1 the cat sat\nu2 on the mat\n")
    (tmp_path / "hyp.txt").write_text("u1 The cat, sat.\n")
    pairs = pair_transcripts(read_transcripts(tmp_path / "ref.txt"), read_transcripts(tmp_path / "hyp.txt"),
                             {"u1": {"snr_db": "0"}, "u2": {"snr_db": "3"}})
    rep = aggregate(pairs, "snr_db")
    paths = write_wer_tables(rep, tmp_path / "out", "sys")
    table = read_condition_table(paths["conditions"])
    assert table == {"sys": {"0": 0.0, "3": 100.0}}
    data = json.loads(paths["json"].read_text())
    assert data["average"] == 50.0 and data["utterances"]["u2"]["D"] == 3
