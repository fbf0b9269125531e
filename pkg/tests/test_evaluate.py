import csv
import itertools
import json
import logging
import random
import sys
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficbench.evaluate import (
    GeneratedReport,
    MissingKeywordMap,
    etc,
    evaluate_reports,
    extract_class_accuracy,
    has_quant,
    json_validity,
    lcs_length,
    mentions_protocol,
    pmr,
    qcr,
    rouge_l,
    rouge_l_tokens,
    tokenize,
)

KW = {"has_tls:true": ["tls"], "entropy:low": ["low entropy"], "ascii:low": ["low ascii"]}


def lcs_recursive(a, b):
    sys.setrecursionlimit(10000)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def lcs_exhaustive(a, b):
    subs = {tuple(c) for r in range(len(a) + 1) for c in itertools.combinations(a, r)}
    return max(len(s) for s in subs if _is_subseq(s, b))


def _is_subseq(s, b):
    it = iter(b)
    return all(x in it for x in s)


def report(cls="CHAT", traits=None, evidence=("x",), description="d", notes="n", rid=None):
    obj = {"class": cls, "traits": traits or {}, "evidence": list(evidence), "description": description, "notes": notes}
    if rid is not None:
        obj = {"id": rid, **obj}
    return json.dumps(obj)


def test_tokenize():
    assert tokenize("TLS 1.3, HTTP/1.1 -- 84.2%!") == ["tls", "1", "3", "http", "1", "1", "84", "2"]


def test_rouge_pinned():
    assert lcs_length("a b c d".split(), "a c d e".split()) == 3
    assert rouge_l("a b c d", "a c d e") == pytest.approx(0.75)


@pytest.mark.parametrize("c,r,v", [("same text here", "Same TEXT here", 1.0), ("alpha beta", "gamma delta", 0.0), ("", "x", 0.0), ("x", "", 0.0), ("!!", "x", 0.0)])
def test_rouge_fixtures(c, r, v):
    assert rouge_l(c, r) == v


def test_lcs_oracles_small_exhaustive():
    rng = random.Random(2)
    for _ in range(300):
        a = [rng.choice("abc") for _ in range(rng.randint(0, 7))]
        b = [rng.choice("abc") for _ in range(rng.randint(0, 7))]
        assert lcs_length(a, b) == lcs_recursive(a, b) == lcs_exhaustive(a, b)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from("abcde"), max_size=25), st.lists(st.sampled_from("abcde"), max_size=25))
def test_lcs_matches_recursive_oracle(a, b):
    n = lcs_length(a, b)
    assert n == lcs_recursive(a, b) == lcs_length(b, a)
    assert 0 <= n <= min(len(a), len(b))
    f = rouge_l_tokens(a, b)
    assert 0.0 <= f <= 1.0 and f == rouge_l_tokens(b, a)


def test_json_validity_and_accuracy():
    reps = [report("CHAT"), "not json", json.dumps({"class": "CHAT"}), "[1]"]
    assert json_validity(reps) == 0.25
    assert extract_class_accuracy(reps, ["CHAT"] * 4) == 0.25
    assert extract_class_accuracy([report(" CHAT ")], ["CHAT"]) == 1.0
    assert extract_class_accuracy([report("chat")], ["CHAT"]) == 0.0
    assert GeneratedReport.from_text("not json").valid is False
    with pytest.raises(ValueError):
        extract_class_accuracy([report()], [])


def test_etc_fixtures():
    good = report(traits={"has_tls": True}, evidence=["TLS record header detected"])
    bad = report(traits={"has_tls": False, "entropy": "low"}, evidence=["High throughput (49.8 MB/s)"])
    assert etc([good], KW) == 1.0
    assert etc([bad], KW) == 0.0
    assert etc([good, bad, "garbage"], KW) == 0.5


def test_etc_requires_map():
    with pytest.raises(MissingKeywordMap):
        etc([report()], None)


def test_etc_phrase_must_be_contiguous():
    r = report(traits={"entropy": "low"}, evidence=["low packet entropy"])
    assert etc([r], KW) == 0.0


def test_empty_rates_warn(caplog):
    with caplog.at_level(logging.WARNING):
        assert etc([], KW) == 0.0 and qcr(["x"]) == 0.0 and pmr([]) == 0.0
    assert "no valid reports" in caplog.text


@pytest.mark.parametrize(
    "text,expected",
    [
        ("High throughput (49.8 MB/s)", True),
        ("encrypted session observed", False),
        ("entropy is high", True),
        ("84.2% of packets", True),
        ("1400 bytes", True),
        ("512B frames", True),
        ("a ratio was seen", True),
        ("version 7 only", False),
        ("highest score", False),
    ],
)
def test_has_quant(text, expected):
    assert has_quant(text) is expected


@pytest.mark.parametrize(
    "text,expected",
    [
        ("Dominant protocol: TLS (100%)", True),
        ("nothing relevant", False),
        ("served by HTTPD", False),
        ("over http/1.1", True),
        ("Tor circuit", True),
    ],
)
def test_mentions_protocol(text, expected):
    assert mentions_protocol(text) is expected


def test_qcr_pmr_use_evidence_and_description():
    r = report(evidence=["nothing"], description="Dominant protocol: TLS (100%).")
    assert qcr([r]) == 1.0 and pmr([r]) == 1.0


def test_evaluate_self_and_corruption(tmp_path):
    refs = [
        report("A", {"has_tls": True}, ["TLS seen", "TCP dominant (100%)."], "One. Two.", rid="r1"),
        report("B", {"entropy": "low"}, ["Low entropy payload"], "Plain UDP text.", rid="r2"),
    ]
    m = evaluate_reports(refs, refs, KW)
    assert (m.json_valid_pct, m.jclsacc, m.rouge_l_evidence, m.rouge_l_description, m.etc, m.qcr, m.pmr) == (1, 1, 1, 1, 1, 1, 1)

    preds = [refs[1], "{broken"]
    m = evaluate_reports(preds, refs, KW)
    # id alignment finds r2; r1 is missing and scores zero
    assert m.json_valid_pct == 0.5 and m.jclsacc == 0.5
    assert m.rouge_l_evidence == 0.5 and m.n_valid == 1
    assert m.etc == 1.0  # only the valid prediction is in the denominator

    m.write_json(tmp_path / "m.json")
    m.write_radar_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["metric", "value"] and len(rows) == 8
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["rouge_l_macro"] == pytest.approx((d["rouge_l_evidence"] + d["rouge_l_description"]) / 2)


def test_positional_alignment_without_ids():
    refs = [report("A"), report("B")]
    assert evaluate_reports([report("A"), report("X")], refs, KW).jclsacc == 0.5
    with pytest.raises(ValueError):
        evaluate_reports([report("A")], refs, KW)


def test_invalid_reference_rejected():
    with pytest.raises(ValueError):
        evaluate_reports([report()], ["nope"], KW)


class ConstantScorer:
    def score(self, candidates, references):
        return [0.25 for _ in candidates]


def test_pluggable_scorer():
    refs = [report("A"), report("B")]
    m = evaluate_reports(refs, refs, KW, scorers={"const": ConstantScorer()})
    assert m.extra == {"const_evidence": 0.25, "const_description": 0.25}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.text(max_size=30), st.builds(report, st.sampled_from(["A", "B"]))), max_size=10))
def test_metrics_in_unit_interval(raw):
    refs = [report("A") for _ in raw]
    m = evaluate_reports(raw, refs, KW)
    for v in (m.json_valid_pct, m.jclsacc, m.rouge_l_evidence, m.rouge_l_description, m.etc, m.qcr, m.pmr):
        assert 0.0 <= v <= 1.0
