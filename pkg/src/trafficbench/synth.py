"""Packet builders, a classic-pcap writer and the bundled three-class mini-corpus.

The mini-corpus is generated, not stored: ``make_minicorpus`` writes a
class-per-directory pcap tree, a matching knowledge base and a pipeline config.
"""

from __future__ import annotations

import json
import random
import struct
from pathlib import Path
from typing import Iterable

import yaml

LINKTYPE_ETHERNET = 1

TCP_FIN, TCP_SYN, TCP_RST, TCP_PSH, TCP_ACK = 0x01, 0x02, 0x04, 0x08, 0x10


def checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def ipv4(src: bytes, dst: bytes, proto: int, payload: bytes, ident: int = 0, ttl: int = 64, frag: int = 0) -> bytes:
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(payload), ident, frag, ttl, proto, 0, src, dst)
    return hdr[:10] + struct.pack("!H", checksum(hdr)) + hdr[12:] + payload


def ipv6(src: bytes, dst: bytes, next_header: int, payload: bytes, hop_limit: int = 64) -> bytes:
    return struct.pack("!IHBB16s16s", 6 << 28, len(payload), next_header, hop_limit, src, dst) + payload


def tcp(sport: int, dport: int, payload: bytes = b"", seq: int = 0, ack: int = 0, flags: int = TCP_ACK, window: int = 65535) -> bytes:
    return struct.pack("!HHIIBBHHH", sport, dport, seq, ack, 5 << 4, flags, window, 0, 0) + payload


def udp(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def ethernet(payload: bytes, ethertype: int = 0x0800, src: bytes = b"\x02\x00\x00\x00\x00\x01",
             dst: bytes = b"\x02\x00\x00\x00\x00\x02") -> bytes:
    return dst + src + struct.pack("!H", ethertype) + payload


def vlan(payload: bytes, ethertype: int, vid: int = 10) -> bytes:
    """Body of an 802.1Q-tagged frame (use with ``ethernet(..., 0x8100)``)."""
    return struct.pack("!HH", vid & 0x0FFF, ethertype) + payload


def arp_frame() -> bytes:
    body = struct.pack("!HHBBH6s4s6s4s", 1, 0x0800, 6, 4, 1, b"\x02" * 6, b"\x0a\x00\x00\x01", b"\x00" * 6, b"\x0a\x00\x00\x02")
    return ethernet(body, 0x0806, dst=b"\xff" * 6)


def write_pcap(path: str | Path, frames: Iterable[tuple[float, bytes]], linktype: int = LINKTYPE_ETHERNET,
               snaplen: int = 65535) -> None:
    """Little-endian microsecond pcap."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, snaplen, linktype))
        for ts, frame in frames:
            sec = int(ts)
            usec = int(round((ts - sec) * 1e6))
            if usec == 1_000_000:
                sec, usec = sec + 1, 0
            cap = frame[:snaplen]
            fh.write(struct.pack("<IIII", sec, usec, len(cap), len(frame)))
            fh.write(cap)


# --------------------------------------------------------------------------
# mini-corpus


def _addr(rng: random.Random, net: int) -> bytes:
    return bytes((10, net, rng.randrange(1, 255), rng.randrange(1, 255)))


class _Flow:
    def __init__(self, rng, client, server, cport, sport, t0):
        self.rng, self.client, self.server = rng, client, server
        self.cport, self.sport = cport, sport
        self.t = t0
        self.frames: list[tuple[float, bytes]] = []
        self.cseq, self.sseq = rng.randrange(1 << 31), rng.randrange(1 << 31)

    def _tick(self):
        self.t += self.rng.uniform(0.0005, 0.05)
        return round(self.t, 6)

    def tcp(self, from_client: bool, payload: bytes = b"", flags: int = TCP_ACK | TCP_PSH):
        if from_client:
            seg = tcp(self.cport, self.sport, payload, self.cseq, self.sseq, flags)
            pkt = ipv4(self.client, self.server, 6, seg)
            self.cseq = (self.cseq + max(len(payload), 1)) & 0xFFFFFFFF
        else:
            seg = tcp(self.sport, self.cport, payload, self.sseq, self.cseq, flags)
            pkt = ipv4(self.server, self.client, 6, seg)
            self.sseq = (self.sseq + max(len(payload), 1)) & 0xFFFFFFFF
        self.frames.append((self._tick(), ethernet(pkt)))

    def udp(self, from_client: bool, payload: bytes):
        if from_client:
            pkt = ipv4(self.client, self.server, 17, udp(self.cport, self.sport, payload))
        else:
            pkt = ipv4(self.server, self.client, 17, udp(self.sport, self.cport, payload))
        self.frames.append((self._tick(), ethernet(pkt)))

    def handshake(self):
        self.tcp(True, flags=TCP_SYN)
        self.tcp(False, flags=TCP_SYN | TCP_ACK)
        self.tcp(True, flags=TCP_ACK)


def _tls_record(rng: random.Random, ctype: int, size: int, version: bytes = b"\x03\x03") -> bytes:
    body = bytes(rng.getrandbits(8) for _ in range(size))
    return bytes((ctype,)) + version + struct.pack("!H", size) + body


def _tls_flow(rng, t0) -> _Flow:
    f = _Flow(rng, _addr(rng, 1), _addr(rng, 2), rng.randrange(49152, 65536), 443, t0)
    f.handshake()
    f.tcp(True, _tls_record(rng, 0x16, rng.randrange(180, 300), b"\x03\x01"))
    f.tcp(False, _tls_record(rng, 0x16, rng.randrange(900, 1400)))
    f.tcp(True, _tls_record(rng, 0x14, 1) + _tls_record(rng, 0x16, 40))
    for _ in range(rng.randrange(0, 14)):
        f.tcp(rng.random() < 0.3, _tls_record(rng, 0x17, rng.randrange(60, 1400)))
    f.tcp(True, flags=TCP_FIN | TCP_ACK)
    return f


_PATHS = ["/", "/index.html", "/api/items", "/static/app.js", "/login", "/images/logo.png"]
_HOSTS = ["example.org", "intranet.local", "shop.example.com", "news.example.net"]
_WORDS = "the quick brown fox jumps over lazy dog lorem ipsum dolor sit amet service status page".split()


def _http_flow(rng, t0) -> _Flow:
    f = _Flow(rng, _addr(rng, 3), _addr(rng, 4), rng.randrange(32768, 61000), rng.choice([80, 8080]), t0)
    f.handshake()
    for _ in range(rng.randrange(1, 4)):
        method = rng.choice(["GET", "GET", "POST", "HEAD"])
        req = f"{method} {rng.choice(_PATHS)} HTTP/1.1\r\nHost: {rng.choice(_HOSTS)}\r\nUser-Agent: curl/8.0\r\nAccept: */*\r\n\r\n"
        f.tcp(True, req.encode())
        body = " ".join(rng.choice(_WORDS) for _ in range(rng.randrange(20, 120)))
        resp = f"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: {len(body)}\r\n\r\n<html><body>{body}</body></html>"
        f.tcp(False, resp.encode())
        f.tcp(True, flags=TCP_ACK)
    f.tcp(True, flags=TCP_FIN | TCP_ACK)
    return f


def _dns_name(rng) -> bytes:
    labels = [rng.choice(["www", "api", "mail", "cdn"]), rng.choice(["example", "corp", "svc"]), rng.choice(["com", "net", "org"])]
    return b"".join(bytes((len(x),)) + x.encode() for x in labels) + b"\x00"


def _dns_flow(rng, t0) -> _Flow:
    f = _Flow(rng, _addr(rng, 5), bytes((10, 5, 0, 53)), rng.randrange(1024, 65536), 53, t0)
    for _ in range(rng.randrange(1, 6)):
        txid = rng.randrange(1 << 16)
        q = struct.pack("!HHHHHH", txid, 0x0100, 1, 0, 0, 0) + _dns_name(rng) + struct.pack("!HH", 1, 1)
        f.udp(True, q)
        ans = struct.pack("!HHHHHH", txid, 0x8180, 1, 1, 0, 0) + q[12:] + struct.pack("!HHHIH4s", 0xC00C, 1, 1, 300, 4, _addr(rng, 9))
        f.udp(False, ans)
    return f


MINICORPUS_CLASSES = {
    "TLS_WEB": (_tls_flow, 14),
    "HTTP_PLAIN": (_http_flow, 12),
    "DNS_LOOKUP": (_dns_flow, 10),
}

MINICORPUS_KB = {
    "classes": [
        {
            "class_name": "TLS_WEB",
            "protocol_hint": "Encrypted web browsing over HTTPS",
            "behavioral_characteristics": [
                "Short TLS handshake followed by bursts of application data records",
                "Server-to-client volume dominates after the handshake",
                "Destination port 443 with ephemeral client ports",
            ],
            "security_context": "Content is opaque to inspection; rely on SNI, certificate and timing metadata to separate benign browsing from tunnelled command-and-control.",
        },
        {
            "class_name": "HTTP_PLAIN",
            "protocol_hint": "Cleartext HTTP/1.1 web requests",
            "behavioral_characteristics": [
                "Request and response headers readable as ASCII",
                "Request-response turns on one TCP connection",
                "HTML and text bodies of moderate size",
            ],
            "security_context": "Plaintext HTTP exposes credentials and content to on-path observers and should be flagged on networks that mandate encryption.",
        },
        {
            "class_name": "DNS_LOOKUP",
            "protocol_hint": "DNS name resolution over UDP",
            "behavioral_characteristics": [
                "Small query and answer datagrams on port 53",
                "Paired request-response exchanges with matching transaction ids",
                "Low payload volume and short flow duration",
            ],
            "security_context": "Unusually long names or high query rates to one domain can indicate DNS tunnelling or exfiltration.",
        },
    ]
}


def minicorpus_config(seed: int = 7) -> dict:
    return {
        "input": {"pcap_root": "pcaps"},
        "output_dir": "out",
        "curation": {"n_min": 4, "n_max": 12, "split_ratio": "4/5", "seed": seed},
        "sampling": {"k": 10},
        "layout": {"row_bytes": 160, "header_bytes": 64},
        "knowledge_base": "kb.json",
    }


def make_minicorpus(root: str | Path, seed: int = 7) -> Path:
    """Write the three-class corpus, knowledge base and config under ``root``; return the config path."""
    root = Path(root)
    rng = random.Random(seed)
    for label, (builder, n_flows) in MINICORPUS_CLASSES.items():
        class_dir = root / "pcaps" / label
        class_dir.mkdir(parents=True, exist_ok=True)
        # two capture files per class, flows interleaved in time within a file
        halves = (n_flows // 2, n_flows - n_flows // 2)
        t_base = 1_700_000_000.0
        for part, count in enumerate(halves):
            frames: list[tuple[float, bytes]] = []
            for i in range(count):
                frames.extend(builder(rng, t_base + i * 0.37).frames)
            if part == 0:
                frames.append((t_base + 0.001, arp_frame()))
            frames.sort(key=lambda fr: fr[0])
            write_pcap(class_dir / f"{label.lower()}_{part}.pcap", frames)
            t_base += 100.0
    (root / "kb.json").write_text(json.dumps(MINICORPUS_KB, indent=2) + "\n")
    cfg_path = root / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(minicorpus_config(seed), sort_keys=False))
    return cfg_path
