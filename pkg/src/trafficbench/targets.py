"""Five-field structured targets and JSONL serialization.

Evidence is rendered from a fixed template inventory. Each template has a
trigger over (traits, stats); the highest-priority triggered templates
(at most four) become the evidence list, so every statement can be checked
against the sample it describes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .features import GlobalStats, TraitVector, volume_phrase
from .knowledge import KnowledgeEntry
from .npyio import IoFailure

MAX_EVIDENCE = 4
MIN_EVIDENCE = 2
HIGH_THROUGHPUT_BPS = 1_000_000
TARGET_KEYS = ("class", "traits", "evidence", "description", "notes")


def format_pct(ratio: float) -> str:
    """84.2% style; whole numbers lose the decimal (100%)."""
    text = f"{ratio * 100:.1f}"
    return text[:-2] if text.endswith(".0") else text


def format_rate(bps: float) -> str:
    if bps >= 1e6:
        return f"{bps / 1e6:.1f} MB/s"
    if bps >= 1e3:
        return f"{bps / 1e3:.1f} KB/s"
    return f"{bps:.0f} B/s"


def _slots(traits: TraitVector, stats: GlobalStats) -> dict:
    return {
        "proto": stats.dominant_protocol,
        "pct": format_pct(stats.dominant_ratio),
        "avg_len": f"{stats.avg_packet_len:.0f}",
        "n_packets": stats.n_packets,
        "rate": format_rate(stats.throughput_bps),
        "volume": volume_phrase(stats.avg_packet_len) or "",
    }


@dataclass(frozen=True)
class EvidenceTemplate:
    name: str
    trigger: Callable[[TraitVector, GlobalStats], bool]
    text_pattern: str
    priority: int

    def render(self, traits: TraitVector, stats: GlobalStats) -> str:
        return self.text_pattern.format(**_slots(traits, stats))


T = EvidenceTemplate
DEFAULT_TEMPLATES: tuple[EvidenceTemplate, ...] = (
    T("tls_header", lambda t, s: t.has_tls,
      "TLS record header detected, indicating an encrypted TLS session.", 100),
    T("http_tokens", lambda t, s: t.has_http,
      "HTTP tokens (GET/POST) indicate plaintext HTTP requests.", 95),
    T("encrypted_payload", lambda t, s: t.entropy_bucket == "high" and t.ascii_bucket == "low",
      "Low ASCII with high entropy: encrypted or compressed payload.", 90),
    T("high_entropy", lambda t, s: t.entropy_bucket == "high" and t.ascii_bucket != "low",
      "High Shannon entropy: encrypted or compressed payload.", 85),
    T("high_ascii", lambda t, s: t.ascii_bucket == "high",
      "High ASCII: plaintext application-layer content.", 80),
    T("low_entropy", lambda t, s: t.entropy_bucket == "low",
      "Low Shannon entropy: structured or repetitive payload.", 75),
    T("low_zero_pad", lambda t, s: t.zero_pad_bucket == "low",
      "Low zero-padding: sustained bulk data transfer.", 70),
    T("high_zero_pad", lambda t, s: t.zero_pad_bucket == "high",
      "High zero-padding: short flow with small payload.", 70),
    T("large_packets", lambda t, s: volume_phrase(s.avg_packet_len) is not None,
      "Large avg. packet ({avg_len} bytes): {volume}.", 60),
    T("protocol_dominance", lambda t, s: True,
      "{proto} dominant ({pct}%).", 55),
    T("mid_entropy", lambda t, s: t.entropy_bucket == "mid",
      "Mid Shannon entropy: mixed binary and text payload.", 50),
    T("mid_ascii", lambda t, s: t.ascii_bucket == "mid",
      "Mid ASCII ratio: partially readable payload.", 45),
    T("low_ascii", lambda t, s: t.ascii_bucket == "low" and t.entropy_bucket != "high",
      "Low ASCII ratio: binary payload content.", 42),
    T("mid_zero_pad", lambda t, s: t.zero_pad_bucket == "mid",
      "Mid zero-padding: variable packet sizes.", 40),
    T("high_throughput", lambda t, s: s.throughput_bps >= HIGH_THROUGHPUT_BPS,
      "High throughput ({rate}) indicates active data exchange.", 30),
)
del T

# always true; used only when fewer than MIN_EVIDENCE templates fire
FALLBACK_TEMPLATES: tuple[EvidenceTemplate, ...] = (
    EvidenceTemplate("fallback_dominance", lambda t, s: True, "{proto} dominant ({pct}%).", 0),
    EvidenceTemplate("fallback_packet_size", lambda t, s: True,
                     "Average packet size {avg_len} bytes across {n_packets} packets.", 0),
)


@dataclass(frozen=True)
class TargetRecord:
    class_name: str
    traits: TraitVector
    evidence: tuple[str, ...]
    description: str
    notes: str

    def to_dict(self) -> dict:
        return {
            "class": self.class_name,
            "traits": self.traits.to_dict(),
            "evidence": list(self.evidence),
            "description": self.description,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetRecord":
        return cls(d["class"], TraitVector.from_dict(d["traits"]), tuple(d["evidence"]), d["description"], d["notes"])


def select_evidence(
    traits: TraitVector, stats: GlobalStats, templates: Sequence[EvidenceTemplate] = DEFAULT_TEMPLATES
) -> list[EvidenceTemplate]:
    fired = [(-t.priority, i, t) for i, t in enumerate(templates) if t.trigger(traits, stats)]
    chosen = [t for _, _, t in sorted(fired, key=lambda x: (x[0], x[1]))][:MAX_EVIDENCE]
    if len(chosen) < MIN_EVIDENCE:
        rendered = {t.render(traits, stats) for t in chosen}
        for fb in FALLBACK_TEMPLATES:
            if len(chosen) >= MIN_EVIDENCE:
                break
            if fb.render(traits, stats) not in rendered:
                chosen.append(fb)
    return chosen


def byte_observation(traits: TraitVector) -> str:
    if traits.has_tls and traits.entropy_bucket == "high":
        return "TLS record headers alongside high-entropy payload confirm encrypted communication."
    if traits.has_tls:
        return "TLS record headers present, indicating encrypted transport."
    if traits.has_http:
        return "HTTP method tokens and readable ASCII confirm plaintext application traffic."
    if traits.entropy_bucket == "high":
        return "High-entropy payload indicates encrypted or compressed content."
    if traits.ascii_bucket == "high":
        return "Readable ASCII payload indicates plaintext application content."
    return "Mixed entropy and ASCII characteristics."


def _sentence(text: str) -> str:
    text = text.strip()
    return text if text.endswith((".", "!", "?")) else text + "."


def _lower_first(text: str) -> str:
    if len(text) > 1 and text[0].isupper() and text[1].islower():
        return text[0].lower() + text[1:]
    return text


_SENTENCE_END = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")


def first_sentence(text: str) -> str:
    return _sentence(_SENTENCE_END.split(text.strip(), maxsplit=1)[0])


def synthesize_target(
    traits: TraitVector,
    stats: GlobalStats,
    kb: KnowledgeEntry,
    templates: Sequence[EvidenceTemplate] = DEFAULT_TEMPLATES,
) -> TargetRecord:
    evidence = tuple(t.render(traits, stats) for t in select_evidence(traits, stats, templates))
    behaviour = _lower_first(kb.behavioral_characteristics[0].rstrip("."))
    description = " ".join(
        (
            byte_observation(traits),
            _sentence(f"{kb.protocol_hint.rstrip('.')}, {behaviour}"),
            f"Dominant protocol: {stats.dominant_protocol} ({format_pct(stats.dominant_ratio)}%).",
        )
    )
    return TargetRecord(kb.class_name, traits, evidence, description, first_sentence(kb.security_context))


def ungrounded_evidence(
    record: TargetRecord,
    stats: GlobalStats,
    templates: Sequence[EvidenceTemplate] = DEFAULT_TEMPLATES,
) -> list[str]:
    """Evidence strings that no triggered template renders for these traits and stats."""
    grounded = {
        t.render(record.traits, stats)
        for t in (*templates, *FALLBACK_TEMPLATES)
        if t.trigger(record.traits, stats)
    }
    return [e for e in record.evidence if e not in grounded]


# --------------------------------------------------------------------------
# JSONL


def record_line(sample_ref: str, record: TargetRecord) -> str:
    obj = {"id": sample_ref, **record.to_dict()}
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(records: Iterable[tuple[str, TargetRecord]], path: str | Path) -> int:
    n = 0
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for ref, rec in records:
                fh.write(record_line(ref, rec) + "\n")
                n += 1
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return n


def read_jsonl(path: str | Path) -> list[str]:
    """Raw lines (without newline); parsing is the caller's concern."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]
