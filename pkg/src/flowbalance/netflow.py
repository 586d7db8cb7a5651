"""NetFlow v5 encoding, source attribution and datagram sinks."""

from __future__ import annotations

import logging
import socket
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

from .topology import SwitchId, ip, ip_str

log = logging.getLogger(__name__)

HEADER = struct.Struct("!HHIIIIBBH")
RECORD = struct.Struct("!IIIHHIIIIHHBBBBHHBBH")
assert HEADER.size == 24 and RECORD.size == 48

VERSION = 5
MAX_RECORDS = 30
ENGINE_TYPE = 4
ENGINE_ID = 4
DEFAULT_PORT = 9996
ICMP = 1
MGMT_NET = "192.168.100.0"


@dataclass(frozen=True)
class StatsRecord:
    src_ip: int
    dst_ip: int
    packets: int
    bytes: int
    first_s: float
    last_s: float
    home_switch: SwitchId
    eligible_obs: frozenset[SwitchId] = frozenset()
    input_port: int = 0
    output_port: int = 0


class V5Record(NamedTuple):
    srcaddr: int
    dstaddr: int
    nexthop: int = 0
    input: int = 0
    output: int = 0
    dPkts: int = 0
    dOctets: int = 0
    first: int = 0
    last: int = 0
    srcport: int = 0
    dstport: int = 0
    pad1: int = 0
    tcp_flags: int = 0
    prot: int = ICMP
    tos: int = 0
    src_as: int = 0
    dst_as: int = 0
    src_mask: int = 32
    dst_mask: int = 32
    pad2: int = 0


class V5Header(NamedTuple):
    version: int
    count: int
    sys_uptime: int
    unix_secs: int
    unix_nsecs: int
    flow_sequence: int
    engine_type: int
    engine_id: int
    sampling_interval: int


def _ms(seconds: float) -> int:
    return int(round(seconds * 1000)) & 0xFFFFFFFF


def to_record(s: StatsRecord, boot_s: float = 0.0) -> V5Record:
    return V5Record(
        srcaddr=s.src_ip,
        dstaddr=s.dst_ip,
        input=s.input_port,
        output=s.output_port,
        dPkts=s.packets,
        dOctets=s.bytes,
        first=_ms(s.first_s - boot_s),
        last=_ms(s.last_s - boot_s),
    )


def encode_record(r: V5Record) -> bytes:
    return RECORD.pack(*r)


def encode_header(h: V5Header) -> bytes:
    return HEADER.pack(*h)


def build_datagram(
    records: list[V5Record],
    flow_sequence: int,
    sys_uptime_ms: int = 0,
    unix_secs: int = 0,
    unix_nsecs: int = 0,
) -> bytes:
    if not 1 <= len(records) <= MAX_RECORDS:
        raise ValueError(f"a v5 datagram carries 1..{MAX_RECORDS} records, got {len(records)}")
    header = V5Header(VERSION, len(records), sys_uptime_ms & 0xFFFFFFFF, unix_secs, unix_nsecs,
                      flow_sequence & 0xFFFFFFFF, ENGINE_TYPE, ENGINE_ID, 0)
    return encode_header(header) + b"".join(encode_record(r) for r in records)


def decode_datagram(data: bytes) -> tuple[V5Header, list[V5Record]]:
    if len(data) < HEADER.size:
        raise ValueError("truncated NetFlow header")
    header = V5Header(*HEADER.unpack_from(data, 0))
    if header.version != VERSION:
        raise ValueError(f"not a NetFlow v5 datagram (version {header.version})")
    expected = HEADER.size + RECORD.size * header.count
    if len(data) != expected:
        raise ValueError(f"datagram length {len(data)} != {expected}")
    records = [V5Record(*RECORD.unpack_from(data, HEADER.size + i * RECORD.size)) for i in range(header.count)]
    return header, records


def management_ip(switch: SwitchId) -> int:
    """Synthetic management address of a switch."""
    return ip(MGMT_NET) + switch


def attribute_source(s: StatsRecord, mode: str) -> int:
    if mode == "transparent":
        assert s.eligible_obs, "transparent export needs at least one OBS for the flow"
        return management_ip(min(s.eligible_obs))
    if mode == "actual":
        return management_ip(s.home_switch)
    raise ValueError(f"unknown attribution mode {mode!r}")


# --- sinks --------------------------------------------------------------------

class Sink:
    sent = 0

    def send(self, exporter: int, datagram: bytes) -> None:
        self.sent += 1

    def close(self) -> None:
        pass


class NullSink(Sink):
    pass


class FileSink(Sink):
    """Appends datagrams with a 2-byte big-endian length prefix."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "wb")

    def send(self, exporter: int, datagram: bytes) -> None:
        self._fh.write(struct.pack("!H", len(datagram)) + datagram)
        self.sent += 1

    def close(self) -> None:
        self._fh.close()


class UdpSink(Sink):
    """Fire-and-forget UDP; the exporter address cannot be spoofed, so it is only logged."""

    def __init__(self, host: str, port: int = DEFAULT_PORT):
        self.addr = (host, port)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def send(self, exporter: int, datagram: bytes) -> None:
        self._sock.sendto(datagram, self.addr)
        self.sent += 1

    def close(self) -> None:
        self._sock.close()


def parse_sink(spec: Optional[str]) -> Sink:
    """``udp:host[:port]``, ``file:path`` or ``none``."""
    if spec is None or spec == "none":
        return NullSink()
    kind, _, rest = spec.partition(":")
    if kind == "file" and rest:
        return FileSink(rest)
    if kind == "udp" and rest:
        host, _, port = rest.partition(":")
        return UdpSink(host, int(port) if port else DEFAULT_PORT)
    raise ValueError(f"bad export sink {spec!r}")


def read_datagram_file(path: str | Path) -> list[bytes]:
    data = Path(path).read_bytes()
    out = []
    pos = 0
    while pos < len(data):
        (n,) = struct.unpack_from("!H", data, pos)
        pos += 2
        out.append(data[pos:pos + n])
        pos += n
    return out


@dataclass
class Exporter:
    """Buffers stats records and flushes them as per-exporter v5 datagrams."""

    sink: Sink = field(default_factory=NullSink)
    mode: str = "transparent"
    boot_s: float = 0.0
    epoch_s: float = 1_400_000_000.0
    pending: list[StatsRecord] = field(default_factory=list)
    sequences: dict[int, int] = field(default_factory=dict)
    records_exported: int = 0
    records_received: int = 0
    datagrams: int = 0
    io_errors: int = 0
    history: Optional[list[tuple[int, bytes]]] = None
    exported_packets: dict[tuple[int, int], int] = field(default_factory=dict)

    def add(self, s: StatsRecord) -> None:
        self.records_received += 1
        if s.packets >= 1:
            self.pending.append(s)

    def flush(self, now: float) -> None:
        if not self.pending:
            return
        groups: dict[int, list[StatsRecord]] = {}
        for s in self.pending:
            groups.setdefault(attribute_source(s, self.mode), []).append(s)
        self.pending = []
        wall = self.epoch_s + now
        secs = int(wall)
        nsecs = int(round((wall - secs) * 1e9))
        for exporter in sorted(groups):
            recs = [to_record(s, self.boot_s) for s in groups[exporter]]
            for r in recs:
                k = (r.srcaddr, r.dstaddr)
                self.exported_packets[k] = self.exported_packets.get(k, 0) + r.dPkts
            for i in range(0, len(recs), MAX_RECORDS):
                chunk = recs[i:i + MAX_RECORDS]
                seq = self.sequences.get(exporter, 0)
                dgram = build_datagram(chunk, seq, _ms(now - self.boot_s), secs, nsecs)
                self.sequences[exporter] = seq + len(chunk)
                self.records_exported += len(chunk)
                self.datagrams += 1
                if self.history is not None:
                    self.history.append((exporter, dgram))
                try:
                    self.sink.send(exporter, dgram)
                except OSError as exc:
                    self.io_errors += 1
                    log.warning("export to %s failed: %s", ip_str(exporter), exc)

    def close(self) -> None:
        self.sink.close()
