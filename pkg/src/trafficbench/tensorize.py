"""Fixed-shape byte tensors from variable-length flows.

Each flow becomes ``n_packets`` rows of ``row_bytes`` unsigned bytes:

    byte 0        IP protocol number of the packet
    bytes 1..63   L3 header then L4 header, IP addresses zeroed, ports bucketed
    bytes 64..159 leading L4 payload bytes

Rows are chosen by :func:`plan_sampling`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .capture import FlowSession, PacketRecord
from .npyio import IoFailure, read_npy, write_npy

N_PACKETS = 10
ROW_BYTES = 160
HEADER_ZONE = 64  # protocol byte + 63 header bytes
PAYLOAD_ZONE = ROW_BYTES - HEADER_ZONE

PORT_PRIVILEGED = 1
PORT_REGISTERED = 2
PORT_DYNAMIC = 3


class EmptyFlow(ValueError):
    pass


class InvalidPlan(ValueError):
    pass


@dataclass
class SamplingPlan:
    indices: list[int]

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


@dataclass
class TensorSample:
    bytes: np.ndarray  # (n_packets, row_bytes) uint8
    label: str
    flow_id: str

    @property
    def payload_zone(self) -> np.ndarray:
        return self.bytes[:, HEADER_ZONE:]

    def flat(self) -> np.ndarray:
        return self.bytes.reshape(-1)


def bucket_port(port: int) -> int:
    """IANA range code: 1 well-known, 2 registered, 3 dynamic/private."""
    if not 0 <= port <= 0xFFFF:
        raise ValueError(f"port out of range: {port}")
    if port <= 1023:
        return PORT_PRIVILEGED
    if port <= 49151:
        return PORT_REGISTERED
    return PORT_DYNAMIC


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _fill_deficit(selected: list[int], n: int, deficit: int) -> list[int]:
    if deficit <= 0:
        return list(selected)
    extra = _round_half_away(np.linspace(0, n - 1, deficit)).astype(int).tolist()
    return list(selected) + extra


def plan_sampling(payload_lengths: Sequence[int], k: int = N_PACKETS) -> SamplingPlan:
    """Pick exactly ``k`` packet indices from a flow of ``n`` packets.

    For ``n >= k`` the first two and last two packets are always kept and the
    remaining slots go to middle packets with the largest payloads (ties to
    the earlier packet); the result is in temporal order. Shorter flows are
    repeated cyclically so position ``j`` holds packet ``j mod n``.
    """
    n = len(payload_lengths)
    if n == 0:
        raise EmptyFlow("cannot sample an empty flow")
    if k < 5:
        raise ValueError("k must be at least 5")
    if n < k:
        return SamplingPlan([j % n for j in range(k)])

    anchors = [0, 1, n - 2, n - 1]
    middle = sorted(range(2, n - 2), key=lambda i: (-payload_lengths[i], i))
    chosen = anchors + middle[: k - 4]
    # unreachable while n >= k, kept so the quota rule is total
    chosen = _fill_deficit(chosen, n, k - len(chosen))
    return SamplingPlan(sorted(chosen))


def anonymize_header(pkt: PacketRecord, width: int = HEADER_ZONE - 1) -> bytes:
    """Header bytes with IP addresses zeroed and ports replaced by (0, bucket)."""
    hdr = bytearray(pkt.l3l4_header_bytes)
    if pkt.ip_version == 4:
        hdr[12:20] = bytes(min(8, max(0, len(hdr) - 12)))
    else:
        hdr[8:40] = bytes(min(32, max(0, len(hdr) - 8)))
    if pkt.has_ports:
        off = pkt.l3_header_len
        hdr[off : off + 2] = bytes((0, bucket_port(pkt.src_port)))
        hdr[off + 2 : off + 4] = bytes((0, bucket_port(pkt.dst_port)))
    hdr = hdr[:width]
    return bytes(hdr) + bytes(width - len(hdr))


def packet_row(pkt: PacketRecord, row_bytes: int = ROW_BYTES, header_zone: int = HEADER_ZONE) -> np.ndarray:
    row = np.zeros(row_bytes, dtype=np.uint8)
    row[0] = pkt.ip_protocol
    row[1:header_zone] = np.frombuffer(anonymize_header(pkt, header_zone - 1), dtype=np.uint8)
    payload = pkt.l4_payload[: row_bytes - header_zone]
    row[header_zone : header_zone + len(payload)] = np.frombuffer(payload, dtype=np.uint8)
    return row


def tensorize_flow(flow: FlowSession, plan: SamplingPlan | None = None, k: int = N_PACKETS) -> TensorSample:
    if plan is None:
        plan = plan_sampling([len(p.l4_payload) for p in flow.packets], k)
    n = len(flow.packets)
    if any(not 0 <= i < n for i in plan.indices):
        raise InvalidPlan(f"plan {plan.indices} out of range for flow of {n} packets")
    rows = np.stack([packet_row(flow.packets[i]) for i in plan.indices])
    return TensorSample(rows, flow.label, flow.flow_id)


class FlowTensorizer(BaseEstimator, TransformerMixin):
    """Transformer mapping a list of :class:`FlowSession` to an ``(N, k, 160)`` uint8 array.

    Stateless; ``fit`` only validates parameters.
    """

    def __init__(self, n_packets: int = N_PACKETS):
        self.n_packets = n_packets

    def fit(self, X, y=None):
        if self.n_packets < 5:
            raise ValueError("n_packets must be at least 5")
        self.n_features_out_ = self.n_packets * ROW_BYTES
        return self

    def samples(self, X: Sequence[FlowSession]) -> list[TensorSample]:
        return [tensorize_flow(f, k=self.n_packets) for f in X]

    def transform(self, X: Sequence[FlowSession]) -> np.ndarray:
        samples = self.samples(X)
        if not samples:
            return np.zeros((0, self.n_packets, ROW_BYTES), dtype=np.uint8)
        return np.stack([s.bytes for s in samples])


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".index.json")


def write_npy_batch(samples: Sequence[TensorSample], path: str | Path) -> Path:
    """Write samples as one ``(N, 1600)`` uint8 NPY file plus a row-index sidecar."""
    if not samples:
        raise ValueError("write_npy_batch needs at least one sample")
    batch = np.stack([s.flat() for s in samples])
    write_npy(path, batch)
    index = [{"row": i, "flow_id": s.flow_id, "label": s.label} for i, s in enumerate(samples)]
    side = sidecar_path(path)
    try:
        side.write_text(json.dumps(index, indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {side}: {exc}") from exc
    return side


def read_npy_batch(path: str | Path, k: int = N_PACKETS) -> list[TensorSample]:
    arr = read_npy(path)
    index = json.loads(sidecar_path(path).read_text())
    return [
        TensorSample(arr[e["row"]].reshape(k, -1), e["label"], e["flow_id"])
        for e in index
    ]
