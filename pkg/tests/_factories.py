"""Small builders shared by the tests."""

from trafficbench.capture import FiveTuple, FlowSession, PacketRecord

_A = bytes((10, 0, 0, 1))
_B = bytes((10, 0, 0, 2))


def packet(payload=b"", ts=0.0, proto=6, sport=1234, dport=443, total_len=None):
    hdr_len = 20 if proto == 6 else 8
    l4 = bytes(hdr_len)
    ip_hdr = bytes((0x45, 0, 0, 0, 0, 0, 0, 0, 64, proto, 0, 0)) + _A + _B
    return PacketRecord(
        ts_seconds=ts,
        src_ip=_A,
        dst_ip=_B,
        src_port=sport,
        dst_port=dport,
        ip_protocol=proto,
        l4_payload=payload,
        l3l4_header_bytes=ip_hdr + l4,
        total_len=total_len if total_len is not None else 34 + hdr_len + len(payload),
        l4_header_len=hdr_len,
    )


def flow(payloads, label="c", proto=6, sport=1234, dport=443, dt=0.01, source_file=""):
    pkts = [packet(p, ts=i * dt, proto=proto, sport=sport, dport=dport) for i, p in enumerate(payloads)]
    return FlowSession(FiveTuple.from_packet(pkts[0]), pkts, label, source_file)


def labelled_sessions(counts: dict[str, int]):
    """Lightweight sessions: one packet each, distinct ports for identity."""
    out = []
    for label, n in counts.items():
        for i in range(n):
            out.append(flow([b"x"], label=label, sport=1 + i % 60000, source_file=f"{label}/{i}"))
    return out
