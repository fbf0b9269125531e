"""Byte-level traits and flow statistics.

Traits come from the tensor's payload zone: two pattern detectors (TLS
record header, plaintext HTTP token) and three continuous measures (printable
ASCII ratio, entropy of non-zero bytes, zero ratio) bucketed into low/mid/high
at corpus-level 33rd/66th nearest-rank percentiles.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .capture import FlowSession
from .tensorize import HEADER_ZONE, TensorSample
from .validation import check_tensor_batch

LEVELS = ("low", "mid", "high")
TLS_CONTENT_TYPES = frozenset((0x14, 0x15, 0x16, 0x17))
HTTP_TOKENS = (b"GET ", b"POST ", b"PUT ", b"HEAD ", b"DELETE ", b"OPTIONS ", b"HTTP/1.")
THROUGHPUT_MIN_DURATION = 1e-6
LARGE_PACKET_BYTES = 800
METRICS = ("ascii", "entropy", "zero_pad")


class TooFewValues(ValueError):
    pass


@dataclass(frozen=True)
class BucketThresholds:
    p33: float
    p66: float

    def __post_init__(self):
        if self.p33 > self.p66:
            raise ValueError("p33 must not exceed p66")


@dataclass(frozen=True)
class TraitVector:
    has_tls: bool
    has_http: bool
    ascii_bucket: str
    entropy_bucket: str
    zero_pad_bucket: str
    raw_ascii_ratio: float = 0.0
    raw_entropy_bits: float = 0.0
    raw_zero_ratio: float = 0.0

    def to_dict(self) -> dict:
        """The five serialized attributes, in the order they appear in targets."""
        return {
            "has_tls": self.has_tls,
            "has_http": self.has_http,
            "ascii": self.ascii_bucket,
            "entropy": self.entropy_bucket,
            "zero_pad": self.zero_pad_bucket,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraitVector":
        return cls(
            has_tls=bool(d["has_tls"]),
            has_http=bool(d["has_http"]),
            ascii_bucket=d["ascii"],
            entropy_bucket=d["entropy"],
            zero_pad_bucket=d["zero_pad"],
        )


@dataclass(frozen=True)
class GlobalStats:
    duration_s: float
    avg_packet_len: float
    throughput_bps: float
    dominant_protocol: str
    dominant_ratio: float
    n_packets: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalStats":
        return cls(**d)


# --------------------------------------------------------------------------
# raw measures


def _as_bytes(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.astype(np.uint8, copy=False).reshape(-1)
    return np.frombuffer(bytes(data), dtype=np.uint8)


def shannon_entropy_nonzero(payload) -> float:
    """Entropy in bits of the byte histogram, ignoring zero bytes."""
    counts = np.bincount(_as_bytes(payload), minlength=256)[1:]
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    h = float(-(p * np.log2(p)).sum())
    return max(h, 0.0)


def ascii_ratio(payload) -> float:
    arr = _as_bytes(payload)
    if arr.size == 0:
        return 0.0
    return float(np.count_nonzero((arr >= 0x20) & (arr <= 0x7E)) / arr.size)


def _payload_zone(sample) -> np.ndarray:
    arr = sample.bytes if isinstance(sample, TensorSample) else np.asarray(sample)
    return arr[:, HEADER_ZONE:]


def zero_ratio(sample) -> float:
    zone = _payload_zone(sample)
    return float(np.count_nonzero(zone == 0) / zone.size)


def payload_bytes(sample) -> bytes:
    """Concatenated payload-zone bytes with each row's trailing zero padding removed."""
    return b"".join(bytes(row).rstrip(b"\x00") for row in _payload_zone(sample))


def is_tls_record_start(payload: bytes) -> bool:
    return len(payload) >= 2 and payload[0] in TLS_CONTENT_TYPES and payload[1] == 0x03


def is_http_start(payload: bytes) -> bool:
    return any(payload.startswith(tok) for tok in HTTP_TOKENS)


def detect_tls(sample) -> bool:
    return any(is_tls_record_start(bytes(row[:2])) for row in _payload_zone(sample))


def detect_http(sample) -> bool:
    return any(is_http_start(bytes(row[:8])) for row in _payload_zone(sample))


# --------------------------------------------------------------------------
# bucketing


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    n = len(sorted_values)
    # exact rational rank so float rounding cannot push it up by one
    rank = max(1, math.ceil(Fraction(pct) * n / 100))
    return float(sorted_values[rank - 1])


def compute_thresholds(values: Sequence[float]) -> BucketThresholds:
    if len(values) < 3:
        raise TooFewValues(f"need at least 3 values, got {len(values)}")
    ordered = sorted(float(v) for v in values)
    return BucketThresholds(nearest_rank(ordered, 33), nearest_rank(ordered, 66))


def bucketize(value: float, thresholds: BucketThresholds) -> str:
    if value < thresholds.p33:
        return "low"
    if value < thresholds.p66:
        return "mid"
    return "high"


def raw_traits(sample) -> dict[str, float]:
    payload = payload_bytes(sample)
    return {
        "ascii": ascii_ratio(payload),
        "entropy": shannon_entropy_nonzero(payload),
        "zero_pad": zero_ratio(sample),
    }


# --------------------------------------------------------------------------
# flow statistics


def packet_protocol_name(pkt) -> str:
    return "TLS" if is_tls_record_start(pkt.l4_payload[:2]) else pkt.protocol_name


def global_stats(flow: FlowSession) -> GlobalStats:
    if not flow.packets:
        raise ValueError("global_stats needs a non-empty flow")
    ts = [p.ts_seconds for p in flow.packets]
    sizes = [p.total_len for p in flow.packets]
    duration = max(ts) - min(ts)
    names = Counter(packet_protocol_name(p) for p in flow.packets)
    proto, count = min(names.items(), key=lambda kv: (-kv[1], kv[0]))
    return GlobalStats(
        duration_s=duration,
        avg_packet_len=sum(sizes) / len(sizes),
        throughput_bps=sum(sizes) / max(duration, THROUGHPUT_MIN_DURATION),
        dominant_protocol=proto,
        dominant_ratio=count / len(flow.packets),
        n_packets=len(flow.packets),
    )


def volume_phrase(avg_packet_len: float) -> str | None:
    if avg_packet_len > LARGE_PACKET_BYTES:
        return "large-volume data transmission characteristics"
    return None


# --------------------------------------------------------------------------
# estimator


class ByteTraitExtractor(BaseEstimator, TransformerMixin):
    """Learns corpus percentiles in ``fit``, emits :class:`TraitVector` in ``transform``.

    ``X`` is an ``(N, k, 160)`` / ``(N, k*160)`` uint8 array or a list of
    :class:`TensorSample`.
    """

    def __init__(self, n_packets: int = 10):
        self.n_packets = n_packets

    def _raw(self, X) -> list[dict[str, float]]:
        batch = check_tensor_batch(X, self.n_packets)
        return [raw_traits(s) for s in batch]

    def fit(self, X, y=None):
        raws = self._raw(X)
        self.thresholds_ = {m: compute_thresholds([r[m] for r in raws]) for m in METRICS}
        return self

    def transform(self, X) -> list[TraitVector]:
        check_is_fitted(self, "thresholds_")
        batch = check_tensor_batch(X, self.n_packets)
        out = []
        for s in batch:
            r = raw_traits(s)
            out.append(
                TraitVector(
                    has_tls=detect_tls(s),
                    has_http=detect_http(s),
                    ascii_bucket=bucketize(r["ascii"], self.thresholds_["ascii"]),
                    entropy_bucket=bucketize(r["entropy"], self.thresholds_["entropy"]),
                    zero_pad_bucket=bucketize(r["zero_pad"], self.thresholds_["zero_pad"]),
                    raw_ascii_ratio=r["ascii"],
                    raw_entropy_bits=r["entropy"],
                    raw_zero_ratio=r["zero_pad"],
                )
            )
        return out

    def save_thresholds(self, path: str | Path) -> None:
        check_is_fitted(self, "thresholds_")
        data = {m: asdict(t) for m, t in self.thresholds_.items()}
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_thresholds(cls, path: str | Path, n_packets: int = 10) -> "ByteTraitExtractor":
        est = cls(n_packets=n_packets)
        data = json.loads(Path(path).read_text())
        est.thresholds_ = {m: BucketThresholds(**data[m]) for m in METRICS}
        return est
