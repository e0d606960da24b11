"""Per-connection runtime for defense machines.

A :class:`Framework` owns the mutable runtime of each machine. The
integrator reports events with :meth:`Framework.trigger_events` and gets
back at most one action per machine to schedule; performing the actions
(timers, sending padding, blocking) is the integrator's job.

Timestamps passed to the framework are integer nanoseconds on any
monotonic clock (``time.monotonic_ns()`` in live use, simulated time in
the simulator). Action timeouts and blocking durations are microseconds.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple, Union

from .dist import default_rng
from .machine import (
    NO_TRANSITION,
    STATE_CANCEL,
    STATE_END,
    EventKind,
    GoTo,
    Machine,
    State,
    sample_transition,
    validate_machine,
)

__all__ = [
    "Action",
    "Accounting",
    "BlockOutgoing",
    "BlockingBegin",
    "BlockingEnd",
    "Cancel",
    "Framework",
    "InjectPadding",
    "InvalidFraction",
    "InvalidMtu",
    "LimitReached",
    "MachineAccounting",
    "MachineRuntime",
    "NonPaddingRecv",
    "NonPaddingSent",
    "PaddingRecv",
    "PaddingSent",
    "SMALL_PACKET_SIZE",
    "TriggerEvent",
    "UpdateMTU",
    "blocking_merge",
]

# packets of at most this many bytes are ignored for transitions unless
# the machine sets include_small_packets
SMALL_PACKET_SIZE = 52
NS_PER_US = 1000

MachineId = int


class InvalidFraction(ValueError):
    pass


class InvalidMtu(ValueError):
    pass


# -- events ------------------------------------------------------------------


@dataclass(frozen=True)
class NonPaddingRecv:
    bytes_recv: int
    kind: ClassVar[EventKind] = EventKind.NON_PADDING_RECV


@dataclass(frozen=True)
class PaddingRecv:
    bytes_recv: int
    kind: ClassVar[EventKind] = EventKind.PADDING_RECV


@dataclass(frozen=True)
class NonPaddingSent:
    bytes_sent: int
    kind: ClassVar[EventKind] = EventKind.NON_PADDING_SENT


@dataclass(frozen=True)
class PaddingSent:
    bytes_sent: int
    machine: MachineId
    kind: ClassVar[EventKind] = EventKind.PADDING_SENT


@dataclass(frozen=True)
class BlockingBegin:
    machine: MachineId
    kind: ClassVar[EventKind] = EventKind.BLOCKING_BEGIN


@dataclass(frozen=True)
class BlockingEnd:
    kind: ClassVar[EventKind] = EventKind.BLOCKING_END


@dataclass(frozen=True)
class LimitReached:
    machine: MachineId
    kind: ClassVar[EventKind] = EventKind.LIMIT_REACHED


@dataclass(frozen=True)
class UpdateMTU:
    new_mtu: int
    kind: ClassVar[EventKind] = EventKind.UPDATE_MTU


TriggerEvent = Union[
    NonPaddingRecv,
    PaddingRecv,
    NonPaddingSent,
    PaddingSent,
    BlockingBegin,
    BlockingEnd,
    LimitReached,
    UpdateMTU,
]

PACKET_EVENTS = (NonPaddingRecv, PaddingRecv, NonPaddingSent, PaddingSent)


def packet_size(ev: TriggerEvent) -> Optional[int]:
    if isinstance(ev, (NonPaddingRecv, PaddingRecv)):
        return ev.bytes_recv
    if isinstance(ev, (NonPaddingSent, PaddingSent)):
        return ev.bytes_sent
    return None


# -- actions -----------------------------------------------------------------


@dataclass(frozen=True)
class Cancel:
    machine: MachineId


@dataclass(frozen=True)
class InjectPadding:
    timeout: float  # microseconds
    size: int
    bypass: bool
    replace: bool
    machine: MachineId


@dataclass(frozen=True)
class BlockOutgoing:
    timeout: float  # microseconds
    duration: float  # microseconds
    bypass: bool
    replace: bool
    machine: MachineId


Action = Union[Cancel, InjectPadding, BlockOutgoing]


def blocking_merge(
    active_remaining: Optional[float],
    active_bypass: bool,
    new_duration: float,
    new_bypass: bool,
    replace: bool,
) -> Tuple[float, bool]:
    """Combine a firing block action with the active blocking, if any.

    Returns the effective remaining duration and bypass flag. Without
    ``replace`` the longer duration wins, and the bypass flag only changes
    along with the duration.
    """
    if replace or active_remaining is None:
        return new_duration, new_bypass
    if new_duration > active_remaining:
        return new_duration, new_bypass
    return active_remaining, active_bypass


# -- runtime -----------------------------------------------------------------


@dataclass
class MachineRuntime:
    current_state: Optional[int]  # None once the machine has ended
    limit_remaining: int
    limited: bool
    budget_padding_remaining: int
    budget_blocking_remaining_ns: int
    padding_bytes_sent: int = 0
    blocking_caused_ns: int = 0

    @property
    def ended(self) -> bool:
        return self.current_state is None


@dataclass(frozen=True)
class MachineAccounting:
    padding_frac: float
    blocking_frac: float
    padding_bytes_sent: int
    blocking_caused_ns: int
    budget_padding_remaining: int
    budget_blocking_remaining_ns: int
    state: Optional[int]


@dataclass(frozen=True)
class Accounting:
    padding_frac: float
    blocking_frac: float
    nonpadding_bytes_sent: int
    padding_bytes_sent: int
    blocked_ns: int
    elapsed_ns: int
    machines: Tuple[MachineAccounting, ...]


def _ratio(a: float, b: float) -> float:
    return a / b if b > 0 else 0.0


def _round_count(x: float) -> int:
    # x >= 0; sampled values may be inf
    return int(min(x, 2.0**62) + 0.5)


class Framework:
    """Runtime for zero or more machines on one connection.

    Fraction caps of 0.0 disable the cap. Machines are shared read-only;
    all mutable state lives in :attr:`runtimes`.
    """

    def __init__(
        self,
        machines: Sequence[Machine],
        max_padding_frac: float,
        max_blocking_frac: float,
        mtu: int,
        current_time: int,
        rng: Optional[random.Random] = None,
    ):
        for name, frac in (
            ("max_padding_frac", max_padding_frac),
            ("max_blocking_frac", max_blocking_frac),
        ):
            if not 0.0 <= frac <= 1.0:
                raise InvalidFraction(f"{name} must be in [0, 1], got {frac}")
        if not 0 < mtu <= 0xFFFF:
            raise InvalidMtu(f"mtu must be in [1, 65535], got {mtu}")
        machines = tuple(machines)
        for m in machines:
            validate_machine(m)

        self.machines = machines
        self.max_padding_frac = max_padding_frac
        self.max_blocking_frac = max_blocking_frac
        self.mtu = mtu
        self.rng = rng if rng is not None else default_rng()
        self.creation_time = current_time
        self.last_time = current_time

        self.nonpadding_bytes_sent = 0
        self.padding_bytes_sent = 0
        self.blocked_ns = 0  # completed blocking spans
        self.blocking_since: Optional[int] = None
        self.blocking_machine: Optional[MachineId] = None

        self.runtimes: List[MachineRuntime] = []
        for m in machines:
            limit = _round_count(m.states[0].limit.sample(self.rng))
            self.runtimes.append(
                MachineRuntime(
                    current_state=0,
                    limit_remaining=limit,
                    limited=limit > 0,
                    budget_padding_remaining=m.allowed_padding_bytes,
                    budget_blocking_remaining_ns=m.allowed_blocked_microsec * NS_PER_US,
                )
            )

    # -- public API ----------------------------------------------------------

    def trigger_events(self, events: Sequence[TriggerEvent], now: int) -> List[Action]:
        """Process ``events`` in order and return at most one action per machine."""
        now = max(now, self.last_time)
        self.last_time = now
        actions: Dict[MachineId, Action] = {}
        limit_hits: Dict[MachineId, int] = {}

        for ev in events:
            self._process(ev, now, actions, limit_hits)

        # synthesized LimitReached: once per machine per call, and only if
        # the machine is still in the state whose limit ran out
        delivered = set()
        while limit_hits:
            hits = sorted(limit_hits.items())
            limit_hits.clear()
            for mi, state in hits:
                if mi in delivered:
                    continue
                delivered.add(mi)
                if self.runtimes[mi].current_state == state:
                    self._offer(mi, EventKind.LIMIT_REACHED, None, now, actions, limit_hits)

        return [actions[mi] for mi in sorted(actions)]

    def snapshot(self) -> Accounting:
        now = self.last_time
        elapsed = now - self.creation_time
        nonpad = self.nonpadding_bytes_sent
        machines = []
        for mi, rt in enumerate(self.runtimes):
            blocked = rt.blocking_caused_ns + self._in_progress(mi, now)
            machines.append(
                MachineAccounting(
                    padding_frac=_ratio(rt.padding_bytes_sent, rt.padding_bytes_sent + nonpad),
                    blocking_frac=_ratio(blocked, elapsed),
                    padding_bytes_sent=rt.padding_bytes_sent,
                    blocking_caused_ns=blocked,
                    budget_padding_remaining=rt.budget_padding_remaining,
                    budget_blocking_remaining_ns=max(
                        0, rt.budget_blocking_remaining_ns - self._in_progress(mi, now)
                    ),
                    state=rt.current_state,
                )
            )
        blocked = self.blocked_ns + self._in_progress(None, now)
        return Accounting(
            padding_frac=_ratio(self.padding_bytes_sent, self.padding_bytes_sent + nonpad),
            blocking_frac=_ratio(blocked, elapsed),
            nonpadding_bytes_sent=nonpad,
            padding_bytes_sent=self.padding_bytes_sent,
            blocked_ns=blocked,
            elapsed_ns=elapsed,
            machines=tuple(machines),
        )

    # -- event processing ----------------------------------------------------

    def _valid_id(self, mi) -> bool:
        return isinstance(mi, int) and 0 <= mi < len(self.machines)

    def _process(self, ev, now, actions, limit_hits):
        if isinstance(ev, NonPaddingSent):
            self.nonpadding_bytes_sent += ev.bytes_sent
        elif isinstance(ev, PaddingSent):
            if not self._valid_id(ev.machine):
                return
            self.padding_bytes_sent += ev.bytes_sent
            rt = self.runtimes[ev.machine]
            rt.padding_bytes_sent += ev.bytes_sent
            rt.budget_padding_remaining = max(0, rt.budget_padding_remaining - ev.bytes_sent)
        elif isinstance(ev, BlockingBegin):
            if not self._valid_id(ev.machine):
                return
            if self.blocking_since is not None:
                self._close_blocking_span(now)
            self.blocking_since = now
            self.blocking_machine = ev.machine
        elif isinstance(ev, BlockingEnd):
            if self.blocking_since is not None:
                self._close_blocking_span(now)
                self.blocking_since = None
                self.blocking_machine = None
        elif isinstance(ev, LimitReached):
            if self._valid_id(ev.machine):
                self._offer(ev.machine, ev.kind, None, now, actions, limit_hits)
            return
        elif isinstance(ev, UpdateMTU):
            if ev.new_mtu > 0:
                self.mtu = ev.new_mtu

        size = packet_size(ev)
        for mi in range(len(self.machines)):
            self._offer(mi, ev.kind, size, now, actions, limit_hits)

    def _close_blocking_span(self, now: int) -> None:
        span = now - self.blocking_since
        self.blocked_ns += span
        rt = self.runtimes[self.blocking_machine]
        rt.blocking_caused_ns += span
        rt.budget_blocking_remaining_ns = max(0, rt.budget_blocking_remaining_ns - span)

    def _in_progress(self, mi: Optional[MachineId], now: int) -> int:
        """Length of the ongoing blocking span, if caused by ``mi`` (any if None)."""
        if self.blocking_since is None:
            return 0
        if mi is not None and mi != self.blocking_machine:
            return 0
        return now - self.blocking_since

    def _offer(self, mi, kind, size, now, actions, limit_hits):
        rt = self.runtimes[mi]
        if rt.ended:
            return
        m = self.machines[mi]
        if size is not None and not m.include_small_packets and size <= SMALL_PACKET_SIZE:
            return
        state = m.states[rt.current_state]
        if kind is EventKind.NON_PADDING_SENT and state.limit_includes_nonpadding:
            self._decrement_limit(mi, limit_hits)

        outcome = sample_transition(state, kind, len(m.states), self.rng)
        if outcome is NO_TRANSITION:
            return
        if outcome is STATE_CANCEL:
            actions[mi] = Cancel(mi)
            return
        if outcome is STATE_END:
            rt.current_state = None
            return

        assert isinstance(outcome, GoTo)
        target = outcome.state
        self_transition = target == rt.current_state
        if not self_transition:
            rt.current_state = target
            limit = _round_count(m.states[target].limit.sample(self.rng))
            rt.limit_remaining = limit
            rt.limited = limit > 0
        elif rt.limited and rt.limit_remaining == 0:
            return

        action = self._evaluate(mi, m, m.states[target], now)
        if action is None:
            return
        actions[mi] = action
        if self_transition:
            self._decrement_limit(mi, limit_hits)

    def _decrement_limit(self, mi, limit_hits):
        rt = self.runtimes[mi]
        if rt.limited and rt.limit_remaining > 0:
            rt.limit_remaining -= 1
            if rt.limit_remaining == 0:
                limit_hits.setdefault(mi, rt.current_state)

    # -- action gating -------------------------------------------------------

    def _evaluate(self, mi: MachineId, m: Machine, state: State, now: int) -> Optional[Action]:
        timeout = state.timeout.sample(self.rng)
        value = state.action.sample(self.rng)
        if state.action_is_block:
            if not self._blocking_allowed(mi, m, timeout, value, now):
                return None
            return BlockOutgoing(timeout, value, state.bypass, state.replace, mi)
        size = max(1, _round_count(min(value, self.mtu)))
        if not self._padding_allowed(mi, m, size):
            return None
        return InjectPadding(timeout, size, state.bypass, state.replace, mi)

    def _padding_allowed(self, mi: MachineId, m: Machine, size: int) -> bool:
        rt = self.runtimes[mi]
        if rt.budget_padding_remaining > 0:
            return True
        nonpad = self.nonpadding_bytes_sent
        if m.max_padding_frac > 0:
            pad = rt.padding_bytes_sent + size
            if pad / (pad + nonpad) > m.max_padding_frac:
                return False
        if self.max_padding_frac > 0:
            pad = self.padding_bytes_sent + size
            if pad / (pad + nonpad) > self.max_padding_frac:
                return False
        return True

    def _blocking_allowed(self, mi, m, timeout_us, duration_us, now) -> bool:
        rt = self.runtimes[mi]
        if rt.budget_blocking_remaining_ns - self._in_progress(mi, now) > 0:
            return True
        if not (math.isfinite(timeout_us) and math.isfinite(duration_us)):
            return not (m.max_blocking_frac > 0 or self.max_blocking_frac > 0)
        duration = duration_us * NS_PER_US
        horizon = (now - self.creation_time) + timeout_us * NS_PER_US + duration
        if m.max_blocking_frac > 0:
            blocked = rt.blocking_caused_ns + self._in_progress(mi, now) + duration
            if _ratio(blocked, horizon) > m.max_blocking_frac:
                return False
        if self.max_blocking_frac > 0:
            blocked = self.blocked_ns + self._in_progress(None, now) + duration
            if _ratio(blocked, horizon) > self.max_blocking_frac:
                return False
        return True
