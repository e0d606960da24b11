"""Base network traces: ``timestamp,direction,size`` lines.

Timestamps are nanoseconds since the start of the trace, direction is
``s`` (sent) or ``r`` (received) from the client's point of view, and size
is in bytes. Lines are separated by ``\\n``; a single trailing newline is
accepted, empty lines are not.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Union

from .framework import (
    NonPaddingRecv,
    NonPaddingSent,
    PaddingRecv,
    PaddingSent,
    TriggerEvent,
)

__all__ = [
    "NegativeSendTime",
    "ParseError",
    "SimEvent",
    "SimQueue",
    "TraceRecord",
    "TraceStats",
    "format_records",
    "parse_records",
    "parse_trace",
    "records_to_queue",
    "trace_stats",
    "write_trace",
]

_LINE = re.compile(r"(\d+),([sr]),(\d+)", re.ASCII)
_U64_MAX = 2**64 - 1
_U16_MAX = 0xFFFF


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class NegativeSendTime(ParseError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    timestamp: int  # ns
    sent: bool
    size: int

    @property
    def direction(self) -> str:
        return "s" if self.sent else "r"

    def __str__(self) -> str:
        return f"{self.timestamp},{self.direction},{self.size}"


@dataclass(frozen=True)
class SimEvent:
    """A framework event at a simulated time (ns) on the client or server."""

    event: TriggerEvent
    time: int
    client: bool


@dataclass
class SimQueue:
    """Base events per side, each list sorted by time."""

    client: List[SimEvent] = field(default_factory=list)
    server: List[SimEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.client) + len(self.server)

    def merged(self) -> List[SimEvent]:
        """All events in time order; client before server on ties."""
        return sorted(self.client + self.server, key=lambda e: (e.time, not e.client))


def parse_records(text: str) -> List[TraceRecord]:
    if text == "":
        return []
    if text.endswith("\n"):
        text = text[:-1]
    records = []
    last = 0
    for lineno, line in enumerate(text.split("\n"), start=1):
        m = _LINE.fullmatch(line)
        if m is None:
            raise ParseError(lineno, f"malformed line {line!r}")
        ts, direction, size = int(m[1]), m[2], int(m[3])
        if ts > _U64_MAX:
            raise ParseError(lineno, f"timestamp {ts} out of range")
        if not 0 < size <= _U16_MAX:
            raise ParseError(lineno, f"size {size} not in [1, {_U16_MAX}]")
        if ts < last:
            raise ParseError(lineno, f"timestamp {ts} goes backwards")
        last = ts
        records.append(TraceRecord(ts, direction == "s", size))
    return records


def records_to_queue(records: Iterable[TraceRecord], delay: int) -> SimQueue:
    """Sent records become client sends; received records become server
    sends ``delay`` ns earlier, so they arrive at the recorded time."""
    q = SimQueue()
    for lineno, r in enumerate(records, start=1):
        if r.sent:
            q.client.append(SimEvent(NonPaddingSent(r.size), r.timestamp, True))
        else:
            t = r.timestamp - delay
            if t < 0:
                raise NegativeSendTime(
                    lineno, f"received at {r.timestamp} ns is earlier than the delay {delay} ns"
                )
            q.server.append(SimEvent(NonPaddingSent(r.size), t, False))
    return q


def parse_trace(text: str, delay: int) -> SimQueue:
    """Parse a trace into per-side event queues; ``delay`` is in ns."""
    if delay < 0:
        raise ValueError("delay must be non-negative")
    return records_to_queue(parse_records(text), delay)


def format_records(records: Iterable[TraceRecord]) -> str:
    return "\n".join(str(r) for r in records)


def events_to_records(events: Iterable[SimEvent]) -> List[TraceRecord]:
    """Client-side packet events as trace records, rebased to start at 0."""
    out = []
    start = None
    for e in events:
        if not e.client:
            continue
        ev = e.event
        if isinstance(ev, (NonPaddingSent, PaddingSent)):
            sent, size = True, ev.bytes_sent
        elif isinstance(ev, (NonPaddingRecv, PaddingRecv)):
            sent, size = False, ev.bytes_recv
        else:
            continue
        if start is None:
            start = e.time
        out.append(TraceRecord(e.time - start, sent, size))
    return out


def write_trace(events: Iterable[SimEvent]) -> str:
    """Render the client's view of ``events``; padding looks like any packet."""
    return format_records(events_to_records(events))


@dataclass(frozen=True)
class TraceStats:
    padding_overhead: float
    delay_overhead: float
    duration_ratio: float
    base_bytes: int
    defended_bytes: int
    base_duration: int
    defended_duration: int
    base_sent: int
    base_recv: int
    defended_sent: int
    defended_recv: int


def _duration(records: Sequence[TraceRecord]) -> int:
    if len(records) < 2:
        return 0
    return records[-1].timestamp - records[0].timestamp


def trace_stats(
    base: Union[str, Sequence[TraceRecord]],
    defended: Union[str, Sequence[TraceRecord]],
) -> TraceStats:
    """Overheads of ``defended`` relative to ``base``.

    Plain traces do not mark padding, so padding bytes are taken as the
    byte surplus of the defended trace over the base trace.
    """
    if isinstance(base, str):
        base = parse_records(base)
    if isinstance(defended, str):
        defended = parse_records(defended)
    base_bytes = sum(r.size for r in base)
    defended_bytes = sum(r.size for r in defended)
    padding = max(0, defended_bytes - base_bytes)
    bd, dd = _duration(base), _duration(defended)
    if bd > 0:
        ratio = dd / bd
    else:
        ratio = 1.0 if dd == 0 else math.inf
    return TraceStats(
        padding_overhead=padding / base_bytes if base_bytes else 0.0,
        delay_overhead=max(0.0, ratio - 1.0),
        duration_ratio=ratio,
        base_bytes=base_bytes,
        defended_bytes=defended_bytes,
        base_duration=bd,
        defended_duration=dd,
        base_sent=sum(1 for r in base if r.sent),
        base_recv=sum(1 for r in base if not r.sent),
        defended_sent=sum(1 for r in defended if r.sent),
        defended_recv=sum(1 for r in defended if not r.sent),
    )
