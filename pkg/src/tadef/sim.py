"""Discrete-event simulation of machines at the client and server.

The network is a fixed one-way ``delay`` with unlimited capacity and no
loss or reordering. At every step the simulator takes the earliest of
three sources: the network event queue, blocking expiry on either side,
and actions scheduled by machines. Exact ties go to the event queue
first, then blocking expiry, then scheduled actions; within a source the
client goes before the server and lower machine indices first.
"""
from __future__ import annotations

import heapq
import itertools
import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Sequence, Tuple

from .framework import (
    NS_PER_US,
    PACKET_EVENTS,
    Action,
    BlockOutgoing,
    BlockingBegin,
    BlockingEnd,
    Cancel,
    Framework,
    InjectPadding,
    NonPaddingRecv,
    NonPaddingSent,
    PaddingRecv,
    PaddingSent,
    TriggerEvent,
    blocking_merge,
)
from .machine import Machine
from .trace import SimEvent, SimQueue

__all__ = ["NondeterminismError", "replay_deterministically", "side_rngs", "simulate"]

DEFAULT_MTU = 1420


class NondeterminismError(RuntimeError):
    pass


@dataclass
class _Blocking:
    expiry: int
    bypass: bool


@dataclass
class _Queued:
    """A packet held back by blocking."""

    size: int
    padding: bool
    machine: Optional[int] = None


@dataclass(order=True)
class _NetEvent:
    time: int
    seq: int
    client: bool
    sent: bool  # True: base send on this side; False: arrival on this side
    padding: bool
    size: int


class _Side:
    def __init__(self, client: bool, machines: Sequence[Machine], mtu: int, rng: random.Random):
        self.client = client
        self.framework = Framework(machines, 0.0, 0.0, mtu, 0, rng=rng)
        self.pending: List[Optional[Tuple[int, Action]]] = [None] * len(machines)
        self.blocking: Optional[_Blocking] = None
        self.egress: Deque[_Queued] = deque()

    def next_action(self) -> Optional[Tuple[int, int]]:
        best = None
        for mi, p in enumerate(self.pending):
            if p is not None and (best is None or p[0] < best[0]):
                best = (p[0], mi)
        return best


def _us_to_ns(us: float) -> Optional[int]:
    if not math.isfinite(us):
        return None
    return int(round(us * NS_PER_US))


def side_rngs(seed: Optional[int]) -> Tuple[random.Random, random.Random]:
    """Independent client and server random sources for ``seed``."""
    if seed is None:
        return random.SystemRandom(), random.SystemRandom()
    return random.Random(f"{seed}:client"), random.Random(f"{seed}:server")


class _Simulation:
    def __init__(self, client_machines, server_machines, queue, delay, max_events,
                 packets_only, seed, mtu):
        if max_events <= 0:
            raise ValueError("max_events must be positive")
        crng, srng = side_rngs(seed)
        self.client = _Side(True, client_machines, mtu, crng)
        self.server = _Side(False, server_machines, mtu, srng)
        self.delay = delay
        self.max_events = max_events
        self.packets_only = packets_only
        self.emitted = 0
        self.done = False
        self.out: List[SimEvent] = []
        self.seq = itertools.count()
        self.net: List[_NetEvent] = []
        for e in queue.merged():
            size = e.event.bytes_sent
            heapq.heappush(self.net, _NetEvent(e.time, next(self.seq), e.client, True, False, size))

    def side(self, client: bool) -> _Side:
        return self.client if client else self.server

    # -- output --------------------------------------------------------------

    def emit(self, side: _Side, event: TriggerEvent, t: int) -> None:
        if self.done:
            return
        self.emitted += 1
        if self.emitted >= self.max_events:
            self.done = True
        if not self.packets_only or isinstance(event, PACKET_EVENTS):
            self.out.append(SimEvent(event, t, side.client))
        for action in side.framework.trigger_events([event], t):
            mi = action.machine
            if isinstance(action, Cancel):
                side.pending[mi] = None
                continue
            fire = _us_to_ns(action.timeout)
            side.pending[mi] = None if fire is None else (t + fire, action)

    def send(self, side: _Side, t: int, size: int, padding: bool, machine=None) -> None:
        if padding:
            self.emit(side, PaddingSent(size, machine), t)
        else:
            self.emit(side, NonPaddingSent(size), t)
        heapq.heappush(
            self.net,
            _NetEvent(t + self.delay, next(self.seq), not side.client, False, padding, size),
        )

    # -- sources -------------------------------------------------------------

    def run(self) -> List[SimEvent]:
        while not self.done:
            candidates = []
            if self.net:
                candidates.append((self.net[0].time, 0, 0, 0))
            for order, side in enumerate((self.client, self.server)):
                if side.blocking is not None:
                    candidates.append((side.blocking.expiry, 1, order, 0))
            for order, side in enumerate((self.client, self.server)):
                nxt = side.next_action()
                if nxt is not None:
                    candidates.append((nxt[0], 2, order, nxt[1]))
            if not candidates:
                break
            t, source, order, mi = min(candidates)
            if source == 0:
                self.network_event(heapq.heappop(self.net))
            elif source == 1:
                self.block_expiry(self.side(order == 0), t)
            else:
                self.fire_action(self.side(order == 0), mi, t)
        return self.out

    def network_event(self, ne: _NetEvent) -> None:
        side = self.side(ne.client)
        if not ne.sent:
            ev = PaddingRecv(ne.size) if ne.padding else NonPaddingRecv(ne.size)
            self.emit(side, ev, ne.time)
        elif side.blocking is not None:
            side.egress.append(_Queued(ne.size, False))
        else:
            self.send(side, ne.time, ne.size, False)

    def block_expiry(self, side: _Side, t: int) -> None:
        side.blocking = None
        self.emit(side, BlockingEnd(), t)
        while side.egress:
            q = side.egress.popleft()
            # padding held by blocking is stale at expiry
            if not q.padding:
                self.send(side, t, q.size, False)

    def fire_action(self, side: _Side, mi: int, t: int) -> None:
        _, action = side.pending[mi]
        side.pending[mi] = None
        if isinstance(action, InjectPadding):
            self.inject_padding(side, action, t)
        elif isinstance(action, BlockOutgoing):
            self.block_outgoing(side, action, t)

    def inject_padding(self, side: _Side, a: InjectPadding, t: int) -> None:
        b = side.blocking
        if b is None:
            self.send(side, t, a.size, True, a.machine)
        elif b.bypass and a.bypass:
            if a.replace and side.egress:
                q = side.egress.popleft()
                self.send(side, t, q.size, q.padding, q.machine)
            else:
                self.send(side, t, a.size, True, a.machine)
        else:
            side.egress.append(_Queued(a.size, True, a.machine))

    def block_outgoing(self, side: _Side, a: BlockOutgoing, t: int) -> None:
        duration = _us_to_ns(a.duration)
        if duration is None:
            duration = 2**63  # effectively forever
        b = side.blocking
        remaining = None if b is None else b.expiry - t
        active_bypass = False if b is None else b.bypass
        eff, bypass = blocking_merge(remaining, active_bypass, duration, a.bypass, a.replace)
        side.blocking = _Blocking(t + eff, bypass)
        self.emit(side, BlockingBegin(a.machine), t)


def simulate(
    client_machines: Sequence[Machine],
    server_machines: Sequence[Machine],
    queue: SimQueue,
    delay: int,
    max_events: int,
    packets_only: bool = True,
    seed: Optional[int] = None,
    mtu: int = DEFAULT_MTU,
) -> List[SimEvent]:
    """Simulate machines over a parsed base trace.

    ``delay`` is the one-way network delay in ns and must match the delay
    the queue was parsed with. ``queue`` is not modified. Without a
    ``seed`` the machines draw from the OS random source.
    """
    sim = _Simulation(client_machines, server_machines, queue, delay, max_events,
                      packets_only, seed, mtu)
    return sim.run()


def replay_deterministically(
    client_machines: Sequence[Machine],
    server_machines: Sequence[Machine],
    queue: SimQueue,
    delay: int,
    max_events: int,
    packets_only: bool,
    seed: int,
    mtu: int = DEFAULT_MTU,
    runs: int = 2,
) -> List[SimEvent]:
    """Run a seeded simulation ``runs`` times and check the outputs agree."""
    if seed is None:
        raise ValueError("a seed is required for deterministic replay")
    first = simulate(client_machines, server_machines, queue, delay, max_events,
                     packets_only, seed, mtu)
    for i in range(1, runs):
        again = simulate(client_machines, server_machines, queue, delay, max_events,
                         packets_only, seed, mtu)
        if again != first:
            raise NondeterminismError(f"run {i} diverged from run 0")
    return first
