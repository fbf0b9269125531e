"""Capture decoding and bidirectional session assembly.

Reads classic pcap (µs and ns variants, either byte order) and pcapng,
decodes IPv4/IPv6 over Ethernet, raw-IP, Linux cooked and loopback link
types, and groups packets into canonical five-tuple sessions.
"""

from __future__ import annotations

import ipaddress
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

logger = logging.getLogger(__name__)

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
PCAPNG_SHB = 0x0A0D0D0A
PCAPNG_BOM = 0x1A2B3C4D

LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LOOP = 108
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229
LINKTYPE_LINUX_SLL2 = 276
# DLT_RAW on some BSDs
_RAW_ALIASES = {12, 14, LINKTYPE_RAW}

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
_VLAN_TYPES = {0x8100, 0x88A8, 0x9100}
ETH_PPPOE_SESSION = 0x8864
ETH_MPLS_UC = 0x8847
ETH_MPLS_MC = 0x8848

IPPROTO_TCP = 6
IPPROTO_UDP = 17
_IPV6_EXT_HEADERS = {0, 43, 60, 44, 51}

PROTOCOL_NAMES = {
    1: "ICMP",
    2: "IGMP",
    6: "TCP",
    17: "UDP",
    47: "GRE",
    50: "ESP",
    51: "AH",
    58: "ICMPv6",
    132: "SCTP",
}


class CaptureError(Exception):
    """Base class for capture decoding failures."""


class UnknownMagic(CaptureError):
    pass


class TruncatedHeader(CaptureError):
    """A record header or body extends past end of file.

    ``packets`` holds everything decoded before the truncation point.
    """

    def __init__(self, message: str, packets: list["PacketRecord"] | None = None):
        super().__init__(message)
        self.packets = packets or []


@dataclass(frozen=True)
class PacketRecord:
    ts_seconds: float
    src_ip: bytes
    dst_ip: bytes
    src_port: int
    dst_port: int
    ip_protocol: int
    l4_payload: bytes
    l3l4_header_bytes: bytes
    total_len: int
    ip_version: int = 4
    l3_header_len: int = 20
    # 0 when the transport header is absent (non-first fragment, truncated, portless)
    l4_header_len: int = 0

    @property
    def protocol_name(self) -> str:
        return PROTOCOL_NAMES.get(self.ip_protocol, f"IP-{self.ip_protocol}")

    @property
    def has_ports(self) -> bool:
        return self.ip_protocol in (IPPROTO_TCP, IPPROTO_UDP) and self.l4_header_len > 0


@dataclass(frozen=True, order=True)
class FiveTuple:
    endpoint_a: tuple[bytes, int]
    endpoint_b: tuple[bytes, int]
    ip_protocol: int

    @classmethod
    def from_packet(cls, pkt: PacketRecord) -> "FiveTuple":
        a = (pkt.src_ip, pkt.src_port)
        b = (pkt.dst_ip, pkt.dst_port)
        if b < a:
            a, b = b, a
        return cls(a, b, pkt.ip_protocol)

    def __str__(self) -> str:
        def fmt(ep):
            return f"{ipaddress.ip_address(ep[0])}:{ep[1]}"

        return f"{fmt(self.endpoint_a)}-{fmt(self.endpoint_b)}/{self.ip_protocol}"


@dataclass
class FlowSession:
    key: FiveTuple
    packets: list[PacketRecord]
    label: str
    source_file: str = ""

    @property
    def flow_id(self) -> str:
        return f"{self.source_file or self.label}#{self.key}"

    def __len__(self) -> int:
        return len(self.packets)


@dataclass
class CaptureReadResult:
    packets: list[PacketRecord] = field(default_factory=list)
    linktypes: set[int] = field(default_factory=set)
    non_ip_frames: int = 0
    malformed_frames: int = 0
    truncated: bool = False


# --------------------------------------------------------------------------
# link / network layer decoding


def _strip_link(linktype: int, frame: bytes) -> tuple[int, bytes] | None:
    """Return (ethertype-ish, network-layer bytes) or None for non-IP frames."""
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            return None
        etype = struct.unpack_from("!H", frame, 12)[0]
        off = 14
        # up to two stacked VLAN tags (802.1Q / QinQ)
        for _ in range(2):
            if etype in _VLAN_TYPES and len(frame) >= off + 4:
                etype = struct.unpack_from("!H", frame, off + 2)[0]
                off += 4
        return _strip_encapsulation(etype, frame[off:])
    if linktype in _RAW_ALIASES:
        return _guess_ip(frame)
    if linktype == LINKTYPE_IPV4:
        return ETH_IPV4, frame
    if linktype == LINKTYPE_IPV6:
        return ETH_IPV6, frame
    if linktype in (LINKTYPE_NULL, LINKTYPE_LOOP):
        if len(frame) < 4:
            return None
        return _guess_ip(frame[4:])
    if linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            return None
        etype = struct.unpack_from("!H", frame, 14)[0]
        return _strip_encapsulation(etype, frame[16:])
    if linktype == LINKTYPE_LINUX_SLL2:
        if len(frame) < 20:
            return None
        etype = struct.unpack_from("!H", frame, 0)[0]
        return _strip_encapsulation(etype, frame[20:])
    return None


def _guess_ip(data: bytes) -> tuple[int, bytes] | None:
    if not data:
        return None
    version = data[0] >> 4
    if version == 4:
        return ETH_IPV4, data
    if version == 6:
        return ETH_IPV6, data
    return None


def _strip_encapsulation(etype: int, data: bytes) -> tuple[int, bytes] | None:
    if etype in (ETH_IPV4, ETH_IPV6):
        return etype, data
    if etype == ETH_PPPOE_SESSION:
        if len(data) < 8:
            return None
        ppp_proto = struct.unpack_from("!H", data, 6)[0]
        if ppp_proto == 0x0021:
            return ETH_IPV4, data[8:]
        if ppp_proto == 0x0057:
            return ETH_IPV6, data[8:]
        return None
    if etype in (ETH_MPLS_UC, ETH_MPLS_MC):
        off = 0
        while len(data) >= off + 4:
            label = struct.unpack_from("!I", data, off)[0]
            off += 4
            if label & 0x100:  # bottom of stack
                return _guess_ip(data[off:])
        return None
    return None


def _decode_l4(proto: int, data: bytes) -> tuple[int, int, int]:
    """Return (src_port, dst_port, header_len) for the transport segment."""
    if proto == IPPROTO_TCP and len(data) >= 20:
        sport, dport = struct.unpack_from("!HH", data, 0)
        hlen = (data[12] >> 4) * 4
        if hlen < 20 or hlen > len(data):
            hlen = min(max(hlen, 20), len(data))
        return sport, dport, hlen
    if proto == IPPROTO_UDP and len(data) >= 8:
        sport, dport = struct.unpack_from("!HH", data, 0)
        return sport, dport, 8
    return 0, 0, 0


def _decode_ipv4(data: bytes, ts: float, wire_len: int) -> PacketRecord | None:
    if len(data) < 20 or data[0] >> 4 != 4:
        return None
    ihl = (data[0] & 0x0F) * 4
    if ihl < 20 or len(data) < ihl:
        return None
    total_length = struct.unpack_from("!H", data, 2)[0]
    if total_length >= ihl:
        # drop link-layer trailer padding
        data = data[:total_length]
    frag = struct.unpack_from("!H", data, 6)[0]
    proto = data[9]
    src, dst = data[12:16], data[16:20]
    seg = data[ihl:]
    if frag & 0x1FFF:
        sport = dport = hlen = 0
    else:
        sport, dport, hlen = _decode_l4(proto, seg)
    return PacketRecord(
        ts_seconds=ts,
        src_ip=bytes(src),
        dst_ip=bytes(dst),
        src_port=sport,
        dst_port=dport,
        ip_protocol=proto,
        l4_payload=bytes(seg[hlen:]),
        l3l4_header_bytes=bytes(data[: ihl + hlen]),
        total_len=wire_len,
        ip_version=4,
        l3_header_len=ihl,
        l4_header_len=hlen,
    )


def _decode_ipv6(data: bytes, ts: float, wire_len: int) -> PacketRecord | None:
    if len(data) < 40 or data[0] >> 4 != 6:
        return None
    payload_length = struct.unpack_from("!H", data, 4)[0]
    if payload_length:
        data = data[: 40 + payload_length]
    nxt = data[6]
    off = 40
    first_fragment = True
    # walk extension headers only far enough to find the transport protocol
    for _ in range(8):
        if nxt not in _IPV6_EXT_HEADERS or len(data) < off + 8:
            break
        if nxt == 44:
            frag_off = struct.unpack_from("!H", data, off + 2)[0] >> 3
            first_fragment = frag_off == 0
            nxt, ext_len = data[off], 8
        elif nxt == 51:
            nxt, ext_len = data[off], (data[off + 1] + 2) * 4
        else:
            nxt, ext_len = data[off], (data[off + 1] + 1) * 8
        off = min(off + ext_len, len(data))
        if not first_fragment:
            break
    seg = data[off:]
    if first_fragment:
        sport, dport, hlen = _decode_l4(nxt, seg)
    else:
        sport = dport = hlen = 0
    return PacketRecord(
        ts_seconds=ts,
        src_ip=bytes(data[8:24]),
        dst_ip=bytes(data[24:40]),
        src_port=sport,
        dst_port=dport,
        ip_protocol=nxt,
        l4_payload=bytes(seg[hlen:]),
        l3l4_header_bytes=bytes(data[: off + hlen]),
        total_len=wire_len,
        ip_version=6,
        l3_header_len=off,
        l4_header_len=hlen,
    )


def decode_frame(linktype: int, frame: bytes, ts: float, wire_len: int | None = None) -> PacketRecord | None:
    """Decode one link-layer frame; None when it does not carry IP."""
    if wire_len is None:
        wire_len = len(frame)
    stripped = _strip_link(linktype, frame)
    if stripped is None:
        return None
    etype, net = stripped
    if etype == ETH_IPV4:
        return _decode_ipv4(net, ts, wire_len)
    return _decode_ipv6(net, ts, wire_len)


# --------------------------------------------------------------------------
# file formats


def _iter_classic(buf: bytes, result: CaptureReadResult) -> Iterator[tuple[int, bytes, float, int]]:
    magic_le = struct.unpack_from("<I", buf, 0)[0]
    if magic_le in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
        endian = "<"
    else:
        endian = ">"
    magic = struct.unpack_from(endian + "I", buf, 0)[0]
    divisor = 1e9 if magic == PCAP_MAGIC_NS else 1e6
    if len(buf) < 24:
        result.truncated = True
        return
    linktype = struct.unpack_from(endian + "I", buf, 20)[0] & 0x0FFFFFFF
    result.linktypes.add(linktype)
    off = 24
    while off < len(buf):
        if off + 16 > len(buf):
            result.truncated = True
            return
        sec, frac, incl, orig = struct.unpack_from(endian + "IIII", buf, off)
        off += 16
        if off + incl > len(buf):
            result.truncated = True
            return
        yield linktype, buf[off : off + incl], sec + frac / divisor, orig
        off += incl


def _tsresol_divisor(opt_value: int) -> float:
    if opt_value & 0x80:
        return float(2 ** (opt_value & 0x7F))
    return float(10 ** opt_value)


def _iter_pcapng(buf: bytes, result: CaptureReadResult) -> Iterator[tuple[int, bytes, float, int]]:
    off = 0
    endian = "<"
    interfaces: list[tuple[int, float, int]] = []  # (linktype, divisor, snaplen)
    while off < len(buf):
        if off + 12 > len(buf):
            result.truncated = True
            return
        btype = struct.unpack_from(endian + "I", buf, off)[0]
        if btype == PCAPNG_SHB:
            bom = buf[off + 8 : off + 12]
            endian = "<" if struct.unpack("<I", bom)[0] == PCAPNG_BOM else ">"
            interfaces = []
        blen = struct.unpack_from(endian + "I", buf, off + 4)[0]
        if blen < 12 or off + blen > len(buf):
            result.truncated = True
            return
        body = buf[off + 8 : off + blen - 4]
        off += blen

        if btype == 1 and len(body) >= 8:  # interface description
            linktype, _, snaplen = struct.unpack_from(endian + "HHI", body, 0)
            divisor = 1e6
            opt = 8
            while opt + 4 <= len(body):
                code, olen = struct.unpack_from(endian + "HH", body, opt)
                if code == 0:
                    break
                if code == 9 and olen >= 1:
                    divisor = _tsresol_divisor(body[opt + 4])
                opt += 4 + ((olen + 3) & ~3)
            interfaces.append((linktype, divisor, snaplen))
            result.linktypes.add(linktype)
        elif btype == 6 and len(body) >= 20:  # enhanced packet
            if_id, ts_hi, ts_lo, cap_len, orig_len = struct.unpack_from(endian + "IIIII", body, 0)
            if if_id >= len(interfaces) or 20 + cap_len > len(body):
                result.malformed_frames += 1
                continue
            linktype, divisor, _ = interfaces[if_id]
            ts = ((ts_hi << 32) | ts_lo) / divisor
            yield linktype, body[20 : 20 + cap_len], ts, orig_len
        elif btype == 3 and len(body) >= 4:  # simple packet, no timestamp
            if not interfaces:
                result.malformed_frames += 1
                continue
            orig_len = struct.unpack_from(endian + "I", body, 0)[0]
            linktype, _, snaplen = interfaces[0]
            cap_len = min(orig_len, snaplen) if snaplen else orig_len
            yield linktype, body[4 : 4 + cap_len], 0.0, orig_len
        elif btype == 2 and len(body) >= 20:  # obsolete packet block
            if_id, _, ts_hi, ts_lo, cap_len, orig_len = struct.unpack_from(endian + "HHIIII", body, 0)
            if if_id >= len(interfaces):
                result.malformed_frames += 1
                continue
            linktype, divisor, _ = interfaces[if_id]
            ts = ((ts_hi << 32) | ts_lo) / divisor
            yield linktype, body[20 : 20 + cap_len], ts, orig_len


def read_capture(path: str | Path) -> CaptureReadResult:
    """Decode a capture file, reporting skipped and malformed frames."""
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise UnknownMagic(f"{path}: too short to be a capture file")
    head_le = struct.unpack_from("<I", buf, 0)[0]
    head_be = struct.unpack_from(">I", buf, 0)[0]
    result = CaptureReadResult()
    if head_le == PCAPNG_SHB:
        frames = _iter_pcapng(buf, result)
    elif head_le in (PCAP_MAGIC_US, PCAP_MAGIC_NS) or head_be in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
        frames = _iter_classic(buf, result)
    else:
        raise UnknownMagic(f"{path}: unrecognised magic 0x{head_be:08x}")

    for linktype, frame, ts, wire_len in frames:
        pkt = decode_frame(linktype, frame, ts, wire_len)
        if pkt is None:
            result.non_ip_frames += 1
        else:
            result.packets.append(pkt)
    return result


def parse_pcap(path: str | Path, strict: bool = False) -> list[PacketRecord]:
    """Return every IP packet in *path*, in file order.

    A truncated trailing record stops parsing. With ``strict=False`` the
    packets decoded so far are returned and a warning is logged; with
    ``strict=True`` :class:`TruncatedHeader` is raised carrying them.
    """
    result = read_capture(path)
    if result.non_ip_frames:
        logger.debug("%s: skipped %d non-IP frames", path, result.non_ip_frames)
    if result.truncated:
        msg = f"{path}: truncated record, kept {len(result.packets)} packets"
        if strict:
            raise TruncatedHeader(msg, result.packets)
        logger.warning(msg)
    return result.packets


def assemble_sessions(packets: list[PacketRecord], label: str, source_file: str = "") -> list[FlowSession]:
    """Group packets into bidirectional sessions keyed by canonical five-tuple.

    Sessions come out in order of their first packet; packets inside a session
    are sorted by timestamp with ties broken by original position.
    """
    groups: dict[FiveTuple, list[tuple[float, int, PacketRecord]]] = {}
    for idx, pkt in enumerate(packets):
        groups.setdefault(FiveTuple.from_packet(pkt), []).append((pkt.ts_seconds, idx, pkt))

    sessions = []
    for key, members in groups.items():
        members.sort(key=lambda m: (m[0], m[1]))
        sessions.append((members[0][0], members[0][1], FlowSession(key, [m[2] for m in members], label, source_file)))
    sessions.sort(key=lambda s: (s[0], s[1]))
    return [s[2] for s in sessions]
