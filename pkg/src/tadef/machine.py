"""Defense machines: states, transitions, validation and hex serialization.

A machine with ``n`` states has transition probability lists of length
``n + 2``: indices ``0..n-1`` address states, index ``n`` is the cancel
meta-target and index ``n + 1`` ends the machine.

Binary layout (little-endian, then lowercase hex)::

    version          u8   (0x01)
    padding budget   u64
    max padding frac f64
    blocking budget  u64  (microseconds)
    max block frac   f64
    small packets    u8
    num states       u16
    per state:
        timeout, action, limit distributions (33 bytes each)
        flags        u8   bit0 block, bit1 bypass, bit2 replace, bit3 limit_includes_nonpadding
        num events   u8
        per event:   u8 event kind, (n + 2) x f64
"""
from __future__ import annotations

import enum
import math
import random
import struct
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple, Union

from .dist import DIST_SIZE, Distribution, InvalidDistribution, validate

__all__ = [
    "BadEncoding",
    "BadVersion",
    "EventKind",
    "GoTo",
    "InvalidMachine",
    "Machine",
    "MachineError",
    "NO_TRANSITION",
    "STATE_CANCEL",
    "STATE_END",
    "State",
    "TransitionOutcome",
    "Truncated",
    "deserialize",
    "sample_transition",
    "serialize",
    "validate_machine",
]

VERSION = 1
PROB_SLACK = 1e-9
_U64_MAX = 2**64 - 1

_HEADER = struct.Struct("<BQdQdBH")

_FLAG_BLOCK = 0x01
_FLAG_BYPASS = 0x02
_FLAG_REPLACE = 0x04
_FLAG_LIMIT_NONPADDING = 0x08
_FLAGS_ALL = _FLAG_BLOCK | _FLAG_BYPASS | _FLAG_REPLACE | _FLAG_LIMIT_NONPADDING


class MachineError(ValueError):
    pass


class BadEncoding(MachineError):
    pass


class BadVersion(MachineError):
    pass


class Truncated(MachineError):
    pass


class InvalidMachine(MachineError):
    pass


class EventKind(enum.IntEnum):
    NON_PADDING_RECV = 0
    PADDING_RECV = 1
    NON_PADDING_SENT = 2
    PADDING_SENT = 3
    BLOCKING_BEGIN = 4
    BLOCKING_END = 5
    LIMIT_REACHED = 6
    UPDATE_MTU = 7


@dataclass(frozen=True)
class State:
    """One node of a machine.

    ``action`` is padding bytes, or blocking duration in microseconds when
    ``action_is_block`` is set. ``timeout`` is in microseconds and
    ``limit`` is a count (0 means unlimited).
    """

    timeout: Distribution = field(default_factory=Distribution)
    action: Distribution = field(default_factory=Distribution)
    action_is_block: bool = False
    bypass: bool = False
    replace: bool = False
    limit: Distribution = field(default_factory=Distribution)
    limit_includes_nonpadding: bool = False
    next_state: Mapping[EventKind, Sequence[float]] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {EventKind(k): tuple(float(p) for p in v) for k, v in self.next_state.items()}
        object.__setattr__(self, "next_state", frozen)


@dataclass(frozen=True)
class Machine:
    states: Sequence[State]
    allowed_padding_bytes: int = 0
    max_padding_frac: float = 0.0
    allowed_blocked_microsec: int = 0
    max_blocking_frac: float = 0.0
    include_small_packets: bool = False

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))

    def to_hex(self) -> str:
        return serialize(self)

    @classmethod
    def from_hex(cls, s: str) -> "Machine":
        return deserialize(s)


@dataclass(frozen=True)
class GoTo:
    state: int


class _Singleton:
    def __repr__(self):
        return type(self).__name__.lstrip("_")


class _StateCancel(_Singleton):
    pass


class _StateEnd(_Singleton):
    pass


class _NoTransition(_Singleton):
    pass


STATE_CANCEL = _StateCancel()
STATE_END = _StateEnd()
NO_TRANSITION = _NoTransition()
TransitionOutcome = Union[GoTo, _StateCancel, _StateEnd, _NoTransition]


def validate_machine(m: Machine) -> None:
    """Raise :class:`InvalidMachine` naming the first violated constraint."""
    for name in ("allowed_padding_bytes", "allowed_blocked_microsec"):
        v = getattr(m, name)
        if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= _U64_MAX:
            raise InvalidMachine(f"{name} must be an integer in [0, 2^64), got {v!r}")
    for name in ("max_padding_frac", "max_blocking_frac"):
        v = getattr(m, name)
        if not (0.0 <= v <= 1.0):
            raise InvalidMachine(f"{name} must be in [0, 1], got {v!r}")
    n = len(m.states)
    if n == 0:
        raise InvalidMachine("machine has no states")
    if n > 0xFFFF:
        raise InvalidMachine(f"too many states ({n})")
    for i, s in enumerate(m.states):
        for dname in ("timeout", "action", "limit"):
            try:
                validate(getattr(s, dname))
            except InvalidDistribution as e:
                raise InvalidMachine(f"state {i}: {dname} distribution: {e}") from e
        for kind, probs in s.next_state.items():
            where = f"state {i}, event {kind.name}"
            if len(probs) != n + 2:
                raise InvalidMachine(
                    f"{where}: expected {n + 2} probabilities, got {len(probs)}"
                )
            for j, p in enumerate(probs):
                if not (0.0 <= p <= 1.0):
                    raise InvalidMachine(f"{where}: probability {j} = {p} not in [0, 1]")
            total = math.fsum(probs)
            if total > 1.0 + PROB_SLACK:
                raise InvalidMachine(f"{where}: probabilities sum to {total} > 1")


def sample_transition(
    s: State, e: EventKind, n_states: int, rng: random.Random
) -> TransitionOutcome:
    probs = s.next_state.get(e)
    if probs is None:
        return NO_TRANSITION
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if acc > u:
            if i < n_states:
                return GoTo(i)
            if i == n_states:
                return STATE_CANCEL
            return STATE_END
    return NO_TRANSITION


def _flags(s: State) -> int:
    return (
        (_FLAG_BLOCK if s.action_is_block else 0)
        | (_FLAG_BYPASS if s.bypass else 0)
        | (_FLAG_REPLACE if s.replace else 0)
        | (_FLAG_LIMIT_NONPADDING if s.limit_includes_nonpadding else 0)
    )


def serialize(m: Machine) -> str:
    validate_machine(m)
    n = len(m.states)
    out = bytearray(
        _HEADER.pack(
            VERSION,
            m.allowed_padding_bytes,
            m.max_padding_frac,
            m.allowed_blocked_microsec,
            m.max_blocking_frac,
            int(bool(m.include_small_packets)),
            n,
        )
    )
    probs_struct = struct.Struct(f"<{n + 2}d")
    for s in m.states:
        out += s.timeout.to_bytes()
        out += s.action.to_bytes()
        out += s.limit.to_bytes()
        out.append(_flags(s))
        out.append(len(s.next_state))
        for kind in sorted(s.next_state):
            out.append(int(kind))
            out += probs_struct.pack(*s.next_state[kind])
    return out.hex()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated(f"truncated input while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk


def deserialize(s: str) -> Machine:
    if len(s) % 2:
        raise BadEncoding("hex string has odd length")
    try:
        buf = bytes.fromhex(s)
    except ValueError:
        raise BadEncoding("not a hex string") from None
    # bytes.fromhex tolerates whitespace
    if len(buf) * 2 != len(s):
        raise BadEncoding("hex string contains whitespace")

    r = _Reader(buf)
    version = r.take(1, "version")[0]
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    r.pos = 0
    (_, pad_bytes, pad_frac, block_us, block_frac, small, n) = _HEADER.unpack(
        r.take(_HEADER.size, "header")
    )
    if small > 1:
        raise BadEncoding(f"bad include_small_packets byte {small}")
    probs_struct = struct.Struct(f"<{n + 2}d")

    states = []
    for i in range(n):
        dists = []
        for dname in ("timeout", "action", "limit"):
            raw = r.take(DIST_SIZE, f"state {i} {dname}")
            try:
                dists.append(Distribution.from_bytes(raw))
            except InvalidDistribution as e:
                raise BadEncoding(f"state {i} {dname}: {e}") from None
        flags = r.take(1, f"state {i} flags")[0]
        if flags & ~_FLAGS_ALL:
            raise BadEncoding(f"state {i}: unknown flag bits {flags:#04x}")
        n_events = r.take(1, f"state {i} event count")[0]
        next_state: Dict[EventKind, Tuple[float, ...]] = {}
        for _ in range(n_events):
            kind = r.take(1, f"state {i} event kind")[0]
            try:
                kind = EventKind(kind)
            except ValueError:
                raise BadEncoding(f"state {i}: unknown event kind {kind}") from None
            if kind in next_state:
                raise BadEncoding(f"state {i}: duplicate event kind {kind.name}")
            next_state[kind] = probs_struct.unpack(
                r.take(probs_struct.size, f"state {i} {kind.name} probabilities")
            )
        states.append(
            State(
                timeout=dists[0],
                action=dists[1],
                limit=dists[2],
                action_is_block=bool(flags & _FLAG_BLOCK),
                bypass=bool(flags & _FLAG_BYPASS),
                replace=bool(flags & _FLAG_REPLACE),
                limit_includes_nonpadding=bool(flags & _FLAG_LIMIT_NONPADDING),
                next_state=next_state,
            )
        )
    if r.pos != len(buf):
        raise BadEncoding(f"{len(buf) - r.pos} trailing bytes")

    m = Machine(
        states=states,
        allowed_padding_bytes=pad_bytes,
        max_padding_frac=pad_frac,
        allowed_blocked_microsec=block_us,
        max_blocking_frac=block_frac,
        include_small_packets=bool(small),
    )
    validate_machine(m)
    return m
