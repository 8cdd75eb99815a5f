"""In-band telemetry: header embedding, per-hop records, sink cloning, aggregation."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

MAX_HOPS = 8
U32 = 2**32

_FIXED = struct.Struct(">BBBBI")
_RECORD = struct.Struct(">III")
HEADER_BYTES = _FIXED.size
RECORD_BYTES = _RECORD.size

FLAG_PROBE = 0x01


class TelemetryError(ValueError):
    pass


class PacketKind(Enum):
    DATA = "data"
    PROBE = "probe"
    CONTROL = "control"
    REPORT = "report"


@dataclass(frozen=True)
class HopRecord:
    switch_id: int
    queue_length: int
    dequeue_delay: int


@dataclass
class IntHeader:
    path_index: int
    is_probe: bool = False
    packet_seq: int = 0
    records: list[HopRecord] = field(default_factory=list)

    @property
    def hop_count(self) -> int:
        return len(self.records)


@dataclass
class TelemetryReport:
    domain_id: int
    path_index: int
    is_probe: bool
    packet_seq: int
    records: list[HopRecord]
    sink_timestamp: int


@dataclass(frozen=True)
class SegmentMetrics:
    queue: float
    delay: float


@dataclass
class TelemetryCounters:
    overflow: int = 0
    passthrough: int = 0


class Packet:
    __slots__ = ("id", "kind", "flow", "src", "dst", "payload_size", "created_at",
                 "int_header", "enqueue_times", "path_index", "payload", "report",
                 "directive", "domain_id")

    def __init__(self, id, kind=PacketKind.DATA, flow="main", src=0, dst=0,
                 payload_size=1000, created_at=0, payload: bytes | None = None):
        self.id = id
        self.kind = kind
        self.flow = flow
        self.src = src
        self.dst = dst
        self.payload_size = payload_size
        self.created_at = created_at
        self.int_header: IntHeader | None = None
        self.enqueue_times: dict[int, int] = {}
        self.path_index: int | None = None
        self.payload = payload
        self.report: TelemetryReport | None = None
        self.directive = None
        self.domain_id: int | None = None

    def __repr__(self):
        return f"Packet(id={self.id}, kind={self.kind.value}, flow={self.flow!r})"


def embed_header(packet: Packet, path_index: int, is_probe: bool = False, seq: int = 0) -> Packet:
    if packet.int_header is not None:
        raise TelemetryError(f"packet {packet.id} already carries an INT header")
    if packet.kind in (PacketKind.CONTROL, PacketKind.REPORT):
        raise TelemetryError(f"{packet.kind.value} packets never carry an INT header")
    packet.int_header = IntHeader(path_index, bool(is_probe), seq % U32)
    return packet


def append_hop(header: IntHeader, switch_id: int, queue_length: int, dequeue_delay: int,
               counters: TelemetryCounters | None = None) -> IntHeader:
    """Push one hop record. A full stack leaves the header as is and bumps ``counters.overflow``."""
    if header.hop_count >= MAX_HOPS:
        if counters is not None:
            counters.overflow += 1
        return header
    header.records.append(HopRecord(switch_id, queue_length, dequeue_delay))
    return header


def extract_and_clone(packet: Packet, sink_timestamp: int, domain_id: int = 1,
                      counters: TelemetryCounters | None = None
                      ) -> tuple[Packet, TelemetryReport | None]:
    """Strip the header at the sink; return the packet and a report built from it.

    Packets without a header pass through untouched and produce no report.
    """
    h = packet.int_header
    if h is None:
        if counters is not None:
            counters.passthrough += 1
        return packet, None
    if not h.records:
        raise TelemetryError(f"packet {packet.id} reached the sink with no hop records")
    packet.int_header = None
    report = TelemetryReport(domain_id, h.path_index, h.is_probe, h.packet_seq,
                             list(h.records), sink_timestamp)
    return packet, report


def aggregate(report: TelemetryReport, how: str = "sum") -> SegmentMetrics:
    """Segment-level queue and delay from per-hop records (sum, or max as alternative)."""
    if not report.records:
        raise TelemetryError("report has no records")
    qs = [r.queue_length for r in report.records]
    ds = [r.dequeue_delay for r in report.records]
    if how == "sum":
        return SegmentMetrics(sum(qs), sum(ds))
    if how == "max":
        return SegmentMetrics(max(qs), max(ds))
    raise ValueError(f"unknown aggregation {how!r}")


def serialize_header(header: IntHeader) -> bytes:
    n = header.hop_count
    if n > MAX_HOPS:
        raise TelemetryError(f"hop_count {n} exceeds {MAX_HOPS}")
    if not 0 <= header.path_index < 256:
        raise TelemetryError(f"path_index {header.path_index} does not fit in 8 bits")
    if not 0 <= header.packet_seq < U32:
        raise TelemetryError(f"packet_seq {header.packet_seq} does not fit in 32 bits")
    out = bytearray(_FIXED.pack(n, header.path_index, FLAG_PROBE if header.is_probe else 0, 0,
                                header.packet_seq))
    for r in header.records:
        for v in (r.switch_id, r.queue_length, r.dequeue_delay):
            if not 0 <= v < U32:
                raise TelemetryError(f"hop record field {v} does not fit in 32 bits")
        out += _RECORD.pack(r.switch_id, r.queue_length, r.dequeue_delay)
    return bytes(out)


def unpack_header(data: bytes) -> tuple[IntHeader, int]:
    """Parse a header at the start of ``data``; return it and the bytes consumed."""
    if len(data) < HEADER_BYTES:
        raise TelemetryError(f"truncated header: {len(data)} < {HEADER_BYTES} bytes")
    n, path_index, flags, reserved, seq = _FIXED.unpack_from(data)
    if reserved != 0:
        raise TelemetryError(f"reserved byte is {reserved:#04x}, expected 0")
    if flags & ~FLAG_PROBE:
        raise TelemetryError(f"unknown flag bits {flags:#04x}")
    if n > MAX_HOPS:
        raise TelemetryError(f"hop_count {n} exceeds {MAX_HOPS}")
    size = HEADER_BYTES + n * RECORD_BYTES
    if len(data) < size:
        raise TelemetryError(f"truncated header: {len(data)} < {size} bytes for {n} records")
    records = [HopRecord(*_RECORD.unpack_from(data, HEADER_BYTES + i * RECORD_BYTES))
               for i in range(n)]
    return IntHeader(path_index, bool(flags & FLAG_PROBE), seq, records), size


def parse_header(data: bytes) -> IntHeader:
    header, size = unpack_header(data)
    if size != len(data):
        raise TelemetryError(f"{len(data) - size} trailing bytes after header")
    return header


def packet_to_wire(packet: Packet) -> bytes:
    """Header (if any) followed by the payload bytes."""
    body = packet.payload or b""
    if packet.int_header is None:
        return body
    return serialize_header(packet.int_header) + body


def packet_from_wire(data: bytes, has_int: bool, id: int = 0) -> Packet:
    header = None
    if has_int:
        header, size = unpack_header(data)
        data = data[size:]
    pkt = Packet(id, payload=bytes(data), payload_size=len(data))
    pkt.int_header = header
    return pkt


REPORT_CSV_COLUMNS = ("domain_id", "path_index", "is_probe", "seq", "sink_timestamp_us",
                      "queue_pkts", "delay_us")


def report_csv_row(report: TelemetryReport, how: str = "sum") -> tuple:
    m = aggregate(report, how)
    return (report.domain_id, report.path_index, int(report.is_probe), report.packet_seq,
            report.sink_timestamp, m.queue, m.delay)


def reports_to_csv(reports: Iterable[TelemetryReport], how: str = "sum") -> str:
    lines = [",".join(REPORT_CSV_COLUMNS)]
    lines += [",".join(str(v) for v in report_csv_row(r, how)) for r in reports]
    return "\n".join(lines) + "\n"
