"""Report scoring: JSON validity, class accuracy, ROUGE-L and the
reference-free structural metrics (ETC, QCR, PMR)."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .targets import TARGET_KEYS
from .validation import check_same_length

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[a-z0-9]+")
_PERCENT = re.compile(r"\d+(?:\.\d+)?\s*%")
_BYTE_QTY = re.compile(r"\d+(?:\.\d+)?\s*(?:bytes|[KMG]?B(?:/s)?)(?![A-Za-z])")
_MULTI_DIGIT = re.compile(r"(?<![0-9])\d{2,}(?![0-9])")
ORDINALS = frozenset({"high", "mid", "low"})


class MissingKeywordMap(ValueError):
    pass


def _default_keywords() -> dict:
    return json.loads((Path(__file__).parent / "data" / "keywords.json").read_text())


DEFAULT_KEYWORDS = _default_keywords()
DEFAULT_TRAIT_KEYWORDS: dict[str, list[str]] = DEFAULT_KEYWORDS["trait_keywords"]
DEFAULT_PROTOCOLS: list[str] = DEFAULT_KEYWORDS["protocols"]


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class GeneratedReport:
    raw_text: str
    parsed: dict | None = None

    @classmethod
    def from_text(cls, raw_text: str) -> "GeneratedReport":
        try:
            obj = json.loads(raw_text)
        except (json.JSONDecodeError, TypeError):
            return cls(raw_text, None)
        if not isinstance(obj, dict) or any(k not in obj for k in TARGET_KEYS):
            return cls(raw_text, None)
        return cls(raw_text, obj)

    @property
    def valid(self) -> bool:
        return self.parsed is not None

    @property
    def report_id(self):
        return self.parsed.get("id") if self.parsed else None

    @property
    def evidence_text(self) -> str:
        if not self.parsed:
            return ""
        ev = self.parsed["evidence"]
        if isinstance(ev, list):
            return " ".join(str(e) for e in ev)
        return str(ev)

    @property
    def description_text(self) -> str:
        return str(self.parsed["description"]) if self.parsed else ""


def _as_reports(reports) -> list[GeneratedReport]:
    return [r if isinstance(r, GeneratedReport) else GeneratedReport.from_text(r) for r in reports]


def _rate(hits: int, n: int, name: str) -> float:
    if n == 0:
        logger.warning("%s: no valid reports, rate defined as 0.0", name)
        return 0.0
    return hits / n


# --------------------------------------------------------------------------
# classification


def json_validity(reports) -> float:
    reports = _as_reports(reports)
    if not reports:
        return 0.0
    return sum(r.valid for r in reports) / len(reports)


def extract_class_accuracy(reports, gold_labels: Sequence[str]) -> float:
    """Exact (trimmed, case-sensitive) class match over all reports; invalid JSON counts as wrong."""
    reports = _as_reports(reports)
    check_same_length(reports, gold_labels, "reports and gold labels")
    if not reports:
        return 0.0
    hits = sum(
        r.valid and str(r.parsed["class"]).strip() == str(g).strip()
        for r, g in zip(reports, gold_labels)
    )
    return hits / len(reports)


# --------------------------------------------------------------------------
# ROUGE-L


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_tokens(cand: Sequence[str], ref: Sequence[str]) -> float:
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 over lowercase alphanumeric tokens."""
    return rouge_l_tokens(tokenize(candidate), tokenize(reference))


class TextSimilarity(Protocol):
    """Extension point for embedding-based scorers (e.g. BERTScore).

    Implementations return one score per (candidate, reference) pair.
    """

    def score(self, candidates: Sequence[str], references: Sequence[str]) -> list[float]: ...


# --------------------------------------------------------------------------
# structural metrics


def _contains_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    if not phrase:
        return False
    n = len(phrase)
    return any(list(tokens[i : i + n]) == list(phrase) for i in range(len(tokens) - n + 1))


def _trait_key(name: str, value) -> str:
    if isinstance(value, bool):
        value = "true" if value else "false"
    return f"{name}:{str(value).lower()}"


def trait_keywords(traits, keyword_map: Mapping[str, Sequence[str]]) -> list[list[str]]:
    if not isinstance(traits, dict):
        return []
    out = []
    for name, value in traits.items():
        for kw in keyword_map.get(_trait_key(name, value), ()):
            toks = tokenize(kw)
            if toks:
                out.append(toks)
    return out


def evidence_trait_consistent(report: GeneratedReport, keyword_map: Mapping[str, Sequence[str]]) -> bool:
    tokens = tokenize(report.evidence_text)
    return any(_contains_phrase(tokens, kw) for kw in trait_keywords(report.parsed.get("traits"), keyword_map))


def etc(reports, keyword_map: Mapping[str, Sequence[str]] | None) -> float:
    """Share of valid reports whose evidence mentions a keyword of their own predicted traits."""
    if keyword_map is None:
        raise MissingKeywordMap("ETC needs a trait keyword map")
    valid = [r for r in _as_reports(reports) if r.valid]
    return _rate(sum(evidence_trait_consistent(r, keyword_map) for r in valid), len(valid), "ETC")


def has_quant(text: str) -> bool:
    if _PERCENT.search(text) or _BYTE_QTY.search(text) or _MULTI_DIGIT.search(text):
        return True
    tokens = set(tokenize(text))
    return bool(tokens & ORDINALS) or "ratio" in tokens


def _combined(r: GeneratedReport) -> str:
    return f"{r.evidence_text} {r.description_text}"


def qcr(reports) -> float:
    valid = [r for r in _as_reports(reports) if r.valid]
    return _rate(sum(has_quant(_combined(r)) for r in valid), len(valid), "QCR")


def mentions_protocol(text: str, protocols: Sequence[str] = DEFAULT_PROTOCOLS) -> bool:
    tokens = tokenize(text)
    return any(_contains_phrase(tokens, tokenize(p)) for p in protocols)


def pmr(reports, protocols: Sequence[str] = DEFAULT_PROTOCOLS) -> float:
    valid = [r for r in _as_reports(reports) if r.valid]
    return _rate(sum(mentions_protocol(_combined(r), protocols) for r in valid), len(valid), "PMR")


# --------------------------------------------------------------------------
# corpus-level


@dataclass
class ReportMetrics:
    json_valid_pct: float
    jclsacc: float
    rouge_l_evidence: float
    rouge_l_description: float
    etc: float
    qcr: float
    pmr: float
    n_reports: int = 0
    n_valid: int = 0
    extra: dict[str, float] = field(default_factory=dict)

    RADAR = ("jclsacc", "json_valid_pct", "rouge_l_evidence", "rouge_l_description", "etc", "qcr", "pmr")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rouge_l_macro"] = (self.rouge_l_evidence + self.rouge_l_description) / 2
        return d

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_radar_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for name in self.RADAR:
                w.writerow([name, f"{getattr(self, name):.6f}"])
            for name, value in sorted(self.extra.items()):
                w.writerow([name, f"{value:.6f}"])


def _align(preds: list[GeneratedReport], refs: list[GeneratedReport]) -> list[GeneratedReport | None]:
    """Match predictions to references by ``id`` when references carry ids, else by position."""
    ref_ids = [r.report_id for r in refs]
    if all(i is not None for i in ref_ids) and len(set(ref_ids)) == len(ref_ids):
        by_id = {p.report_id: p for p in preds if p.report_id is not None}
        if by_id:
            return [by_id.get(i) for i in ref_ids]
    check_same_length(preds, refs, "predictions and references")
    return list(preds)


def evaluate_reports(
    predictions,
    references,
    keyword_map: Mapping[str, Sequence[str]] | None = None,
    protocols: Sequence[str] = DEFAULT_PROTOCOLS,
    scorers: Mapping[str, TextSimilarity] | None = None,
) -> ReportMetrics:
    """Score predictions against references.

    Missing or invalid predictions score 0 for accuracy and ROUGE-L and are left
    out of the ETC/QCR/PMR denominators.
    """
    refs = _as_reports(references)
    bad = [i for i, r in enumerate(refs) if not r.valid]
    if bad:
        raise ValueError(f"reference rows {bad[:5]} are not valid target records")
    aligned = _align(_as_reports(predictions), refs)
    preds = [p if p is not None else GeneratedReport("", None) for p in aligned]
    keyword_map = DEFAULT_TRAIT_KEYWORDS if keyword_map is None else keyword_map

    n = len(refs)
    ev = [rouge_l(p.evidence_text, r.evidence_text) if p.valid else 0.0 for p, r in zip(preds, refs)]
    desc = [rouge_l(p.description_text, r.description_text) if p.valid else 0.0 for p, r in zip(preds, refs)]
    extra: dict[str, float] = {}
    for name, scorer in (scorers or {}).items():
        for field_name, getter in (("evidence", lambda x: x.evidence_text), ("description", lambda x: x.description_text)):
            scores = scorer.score([getter(p) for p in preds], [getter(r) for r in refs])
            extra[f"{name}_{field_name}"] = sum(scores) / n if n else 0.0

    return ReportMetrics(
        json_valid_pct=json_validity(preds),
        jclsacc=extract_class_accuracy(preds, [r.parsed["class"] for r in refs]),
        rouge_l_evidence=sum(ev) / n if n else 0.0,
        rouge_l_description=sum(desc) / n if n else 0.0,
        etc=etc(preds, keyword_map),
        qcr=qcr(preds),
        pmr=pmr(preds, protocols),
        n_reports=n,
        n_valid=sum(p.valid for p in preds),
        extra=extra,
    )
