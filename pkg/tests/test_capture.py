import logging
import struct

import dpkt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficbench.capture import (
    FiveTuple,
    PacketRecord,
    TruncatedHeader,
    UnknownMagic,
    assemble_sessions,
    decode_frame,
    parse_pcap,
    read_capture,
)
from trafficbench.synth import arp_frame, ethernet, ipv4, ipv6, tcp, udp, vlan, write_pcap

A = bytes((10, 0, 0, 1))
B = bytes((10, 0, 0, 2))

# One Ethernet/IPv4/UDP frame carrying "AB", typed out field by field.
GOLDEN_UDP_PCAP = bytes.fromhex(
    "d4c3b2a1" "0200" "0400" "00000000" "00000000" "ffff0000" "01000000"  # global header
    "01000000" "00000000" "2c000000" "2c000000"  # record: ts=1.0, 44/44 bytes
    "020000000002" "020000000001" "0800"  # ethernet
    "4500001e" "00000000" "4011" "0000" "0a000001" "0a000002"  # ipv4, len 30, proto 17
    "04d2" "0035" "000a" "0000"  # udp 1234 -> 53, len 10
    "4142"
)


def _write(tmp_path, name, data):
    p = tmp_path / name
    p.write_bytes(data)
    return p


def test_golden_udp_packet(tmp_path):
    pkts = parse_pcap(_write(tmp_path, "udp.pcap", GOLDEN_UDP_PCAP))
    assert len(pkts) == 1
    p = pkts[0]
    assert p.ip_protocol == 17
    assert p.l4_payload == b"AB"
    assert (p.src_ip, p.dst_ip, p.src_port, p.dst_port) == (A, B, 1234, 53)
    assert p.ts_seconds == 1.0
    assert p.total_len == 44


def test_golden_file_agrees_with_dpkt(tmp_path):
    path = _write(tmp_path, "udp.pcap", GOLDEN_UDP_PCAP)
    with open(path, "rb") as fh:
        (ts, buf), = list(dpkt.pcap.Reader(fh))
    ip = dpkt.ethernet.Ethernet(buf).data
    assert (ip.p, ip.data.sport, ip.data.dport, bytes(ip.data.data)) == (17, 1234, 53, b"AB")


def test_empty_pcap(tmp_path):
    assert parse_pcap(_write(tmp_path, "e.pcap", GOLDEN_UDP_PCAP[:24])) == []


@pytest.mark.parametrize("head", [b"\x00\x00\x00\x00", b"\x7fELF", b"ab"])
def test_bad_magic(tmp_path, head):
    with pytest.raises(UnknownMagic):
        parse_pcap(_write(tmp_path, "bad.pcap", head + bytes(40)))


def test_truncated_record(tmp_path, caplog):
    frames = [(1.0, ethernet(ipv4(A, B, 17, udp(1, 2, b"x")))), (2.0, ethernet(ipv4(A, B, 17, udp(1, 2, b"y"))))]
    path = tmp_path / "t.pcap"
    write_pcap(path, frames)
    path.write_bytes(path.read_bytes()[:-5])
    with caplog.at_level(logging.WARNING):
        pkts = parse_pcap(path)
    assert len(pkts) == 1 and "truncated" in caplog.text
    with pytest.raises(TruncatedHeader) as exc:
        parse_pcap(path, strict=True)
    assert len(exc.value.packets) == 1


def _classic(endian: str, magic: int, records):
    out = struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 65535, 1)
    for sec, frac, frame in records:
        out += struct.pack(endian + "IIII", sec, frac, len(frame), len(frame)) + frame
    return out


@pytest.mark.parametrize("endian", ["<", ">"])
@pytest.mark.parametrize("magic,frac,expected", [(0xA1B2C3D4, 250_000, 5.25), (0xA1B23C4D, 500_000_000, 5.5)])
def test_classic_variants(tmp_path, endian, magic, frac, expected):
    frame = ethernet(ipv4(A, B, 6, tcp(443, 50000, b"hi")))
    pkts = parse_pcap(_write(tmp_path, "v.pcap", _classic(endian, magic, [(5, frac, frame)])))
    assert len(pkts) == 1
    assert pkts[0].ts_seconds == pytest.approx(expected)
    assert (pkts[0].src_port, pkts[0].dst_port, pkts[0].l4_payload) == (443, 50000, b"hi")


def _block(btype: int, body: bytes) -> bytes:
    body += bytes(-len(body) % 4)
    n = 12 + len(body)
    return struct.pack("<II", btype, n) + body + struct.pack("<I", n)


def test_pcapng_with_tsresol(tmp_path):
    shb = _block(0x0A0D0D0A, struct.pack("<IHHq", 0x1A2B3C4D, 1, 0, -1))
    idb = _block(1, struct.pack("<HHI", 1, 0, 65535) + struct.pack("<HHB3x", 9, 1, 9) + struct.pack("<HH", 0, 0))
    frame = ethernet(ipv4(A, B, 17, udp(5000, 53, b"q")))
    ts = 3_250_000_000  # ns
    epb = _block(6, struct.pack("<IIIII", 0, ts >> 32, ts & 0xFFFFFFFF, len(frame), len(frame)) + frame)
    res = read_capture(_write(tmp_path, "x.pcapng", shb + idb + epb))
    assert len(res.packets) == 1
    assert res.packets[0].ts_seconds == pytest.approx(3.25)
    assert res.packets[0].l4_payload == b"q"
    assert res.linktypes == {1}


def test_vlan_and_qinq():
    ip = ipv4(A, B, 17, udp(1, 2, b"v"))
    single = decode_frame(1, ethernet(vlan(ip, 0x0800), 0x8100), 0.0)
    double = decode_frame(1, ethernet(vlan(vlan(ip, 0x0800), 0x8100), 0x88A8), 0.0)
    assert single.l4_payload == double.l4_payload == b"v"


def test_non_ip_frame_counted(tmp_path):
    path = tmp_path / "arp.pcap"
    write_pcap(path, [(0.0, arp_frame()), (1.0, ethernet(ipv4(A, B, 17, udp(1, 2))))])
    res = read_capture(path)
    assert res.non_ip_frames == 1 and len(res.packets) == 1


def test_ipv6_extension_header_walk():
    src, dst = bytes(15) + b"\x01", bytes(15) + b"\x02"
    hop_by_hop = bytes((6, 0)) + bytes(6)  # next header TCP, 8 bytes
    p = decode_frame(1, ethernet(ipv6(src, dst, 0, hop_by_hop + tcp(80, 40000, b"data")), 0x86DD), 0.0)
    assert p.ip_version == 6 and p.ip_protocol == 6
    assert (p.src_port, p.dst_port, p.l4_payload) == (80, 40000, b"data")
    assert p.l3_header_len == 48


def test_ipv4_fragments():
    seg = udp(1000, 2000, b"z" * 16)
    first = decode_frame(101, ipv4(A, B, 17, seg[:16], frag=0x2000), 0.0)
    second = decode_frame(101, ipv4(A, B, 17, seg[16:], frag=2), 0.0)
    assert (first.src_port, first.dst_port) == (1000, 2000)
    assert (second.src_port, second.dst_port, second.l4_header_len) == (0, 0, 0)
    assert second.l4_payload == seg[16:]


def test_linux_sll():
    ip = ipv4(A, B, 17, udp(7, 9, b"s"))
    frame = struct.pack("!HHH8sH", 0, 1, 6, bytes(8), 0x0800) + ip
    assert decode_frame(113, frame, 0.0).l4_payload == b"s"


def test_ethernet_trailer_padding_dropped():
    frame = ethernet(ipv4(A, B, 17, udp(1, 2, b"p"))) + bytes(20)
    assert decode_frame(1, frame, 0.0).l4_payload == b"p"


def test_matches_dpkt_on_minicorpus(minicorpus):
    for path in sorted((minicorpus["root"] / "pcaps").rglob("*.pcap")):
        ours = parse_pcap(path)
        theirs = []
        with open(path, "rb") as fh:
            for ts, buf in dpkt.pcap.Reader(fh):
                eth = dpkt.ethernet.Ethernet(buf)
                if not isinstance(eth.data, dpkt.ip.IP):
                    continue
                ip = eth.data
                theirs.append((ts, ip.src, ip.dst, ip.data.sport, ip.data.dport, ip.p, bytes(ip.data.data), len(buf)))
        got = [(p.ts_seconds, p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.ip_protocol, p.l4_payload, p.total_len) for p in ours]
        assert len(got) == len(theirs)
        for g, t in zip(got, theirs):
            assert g[0] == pytest.approx(t[0], abs=1e-6)
            assert g[1:] == t[1:]


def _pkt(src, dst, sport, dport, proto=6, ts=0.0):
    return PacketRecord(ts, src, dst, sport, dport, proto, b"", b"", 60, l4_header_len=20)


def test_directions_merge():
    s = assemble_sessions([_pkt(A, B, 1, 2), _pkt(B, A, 2, 1, ts=1.0)], "x")
    assert len(s) == 1 and len(s[0]) == 2


def test_distinct_ports_split():
    s = assemble_sessions([_pkt(A, B, 1, 2), _pkt(A, B, 1, 3)], "x")
    assert len(s) == 2


def test_empty_input():
    assert assemble_sessions([], "x") == []


ips = st.sampled_from([A, B, bytes((10, 0, 0, 3))])
packets = st.lists(
    st.builds(_pkt, ips, ips, st.integers(0, 3), st.integers(0, 3), st.sampled_from([6, 17]), st.floats(0, 10)),
    max_size=40,
)


@settings(max_examples=200, deadline=None)
@given(packets)
def test_session_partition_properties(pkts):
    sessions = assemble_sessions(pkts, "c")
    assert sum(len(s) for s in sessions) == len(pkts)
    assert len({s.key for s in sessions}) == len(sessions)
    for s in sessions:
        assert s.packets
        assert s.key.endpoint_a <= s.key.endpoint_b
        assert all(FiveTuple.from_packet(p) == s.key for p in s.packets)
        ts = [p.ts_seconds for p in s.packets]
        assert ts == sorted(ts)
    firsts = [s.packets[0].ts_seconds for s in sessions]
    assert firsts == sorted(firsts)


@settings(max_examples=100, deadline=None)
@given(packets)
def test_session_assembly_deterministic(pkts):
    a = assemble_sessions(pkts, "c")
    b = assemble_sessions(list(pkts), "c")
    assert [(s.key, s.packets) for s in a] == [(s.key, s.packets) for s in b]


@pytest.mark.parametrize(
    "linktype,wrap",
    [
        (1, lambda ip: ethernet(struct.pack("!BBHHH", 0x11, 0, 1, len(ip) + 2, 0x0021) + ip, 0x8864)),  # PPPoE
        (1, lambda ip: ethernet(struct.pack("!I", (16 << 12) | 0x100 | 64) + ip, 0x8847)),  # MPLS, one label
        (1, lambda ip: ethernet(struct.pack("!II", 16 << 12, (17 << 12) | 0x100) + ip, 0x8847)),  # MPLS stack
        (0, lambda ip: struct.pack("<I", 2) + ip),  # BSD loopback
        (276, lambda ip: struct.pack("!HHIHBB8s", 0x0800, 0, 1, 1, 0, 6, bytes(8)) + ip),  # SLL2
        (228, lambda ip: ip),
    ],
)
def test_encapsulations(linktype, wrap):
    ip = ipv4(A, B, 17, udp(5353, 5353, b"enc"))
    p = decode_frame(linktype, wrap(ip), 0.0)
    assert p is not None and p.l4_payload == b"enc"


def test_unknown_linktype_is_non_ip():
    assert decode_frame(147, ipv4(A, B, 17, udp(1, 2)), 0.0) is None
