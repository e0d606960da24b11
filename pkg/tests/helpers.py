"""Builders and strategies shared by the test modules."""
import random

from hypothesis import strategies as st

from tadef.dist import DistKind, Distribution
from tadef.framework import InjectPadding, NonPaddingSent, PaddingSent
from tadef.machine import EventKind, Machine, State
from tadef.trace import TraceRecord, format_records

REFERENCE_TRACE = """0,s,52
19714282,r,52
183976147,s,52
243699564,r,52
1696037773,s,40
2047985926,s,52
2055955094,r,52
9401039609,s,73
9401094589,s,73
9420892765,r,191"""

MS = 1_000_000
DELAY = 10 * MS

CANCEL = "cancel"
END = "end"


def const(v):
    return Distribution.constant(v)


def trans(n, targets):
    """Probability list for an ``n``-state machine from ``{target: p}``."""
    probs = [0.0] * (n + 2)
    for t, p in targets.items():
        idx = n if t == CANCEL else n + 1 if t == END else t
        probs[idx] = p
    return probs


def pad_state(n, size=100, timeout=0, limit=0, bypass=False, replace=False,
              limit_includes_nonpadding=False, **next_state):
    return State(
        timeout=const(timeout),
        action=const(size),
        limit=const(limit),
        bypass=bypass,
        replace=replace,
        limit_includes_nonpadding=limit_includes_nonpadding,
        next_state={EventKind[k.upper()]: trans(n, v) for k, v in next_state.items()},
    )


def block_state(n, duration, timeout=0, bypass=False, replace=False, limit=0, **next_state):
    return State(
        timeout=const(timeout),
        action=const(duration),
        action_is_block=True,
        limit=const(limit),
        bypass=bypass,
        replace=replace,
        next_state={EventKind[k.upper()]: trans(n, v) for k, v in next_state.items()},
    )


def one_shot_padding(size=100, timeout_us=1000):
    """Pads once, ``timeout_us`` after the first non-padding send."""
    return Machine(
        states=[
            pad_state(2, non_padding_sent={1: 1.0}),
            pad_state(2, size=size, timeout=timeout_us),
        ],
        include_small_packets=True,
    )


# -- framework scenarios ---------------------------------------------------

def greedy_padder(budget=0, cap=0.0, size=1420):
    return Machine(
        states=[pad_state(1, size=size, padding_sent={0: 1.0}, non_padding_sent={0: 1.0})],
        allowed_padding_bytes=budget,
        max_padding_frac=cap,
    )


def closed_loop(f, steps, nonpadding=1000, burst_cap=10_000):
    """Send ``nonpadding`` bytes per step and perform every padding action at once."""
    t = 0
    for _ in range(steps):
        t += 1000
        pending = f.trigger_events([NonPaddingSent(nonpadding)], t)
        for _ in range(burst_cap):
            pads = [a for a in pending if isinstance(a, InjectPadding)]
            if not pads:
                break
            pending = f.trigger_events([PaddingSent(a.size, a.machine) for a in pads], t)
    return f.snapshot()


# -- simulator scenarios ---------------------------------------------------

def blocker(duration_us, bypass=False):
    """Blocks outgoing traffic right after the first non-padding send."""
    return Machine(
        states=[pad_state(2, non_padding_sent={1: 1.0}), block_state(2, duration_us, bypass=bypass)],
        include_small_packets=True,
    )


def padder(size, timeout_us, bypass=False, replace=False):
    """Pads once, ``timeout_us`` after the first non-padding send."""
    return Machine(
        states=[
            pad_state(2, non_padding_sent={1: 1.0}),
            pad_state(2, size=size, timeout=timeout_us, bypass=bypass, replace=replace),
        ],
        include_small_packets=True,
    )


def constant_rate(period_us, duration_us, pads, size=1000):
    """Bypassable blocking, then bypass+replace padding every ``period_us``."""
    n = 3
    return Machine(
        states=[
            pad_state(n, non_padding_sent={1: 1.0}),
            block_state(n, duration_us, bypass=True, blocking_begin={2: 1.0}),
            pad_state(n, size=size, timeout=period_us, limit=pads, bypass=True, replace=True,
                      padding_sent={2: 1.0}, non_padding_sent={2: 1.0},
                      limit_reached={"end": 1.0}),
        ],
        include_small_packets=True,
    )


def bursty_trace(seed=5):
    """Three bursts of client sends, each answered by one server packet."""
    rng = random.Random(seed)
    recs = []
    for start in (0, 10 * MS, 30 * MS):
        t = start
        for _ in range(rng.randint(4, 10)):
            recs.append(TraceRecord(t, True, rng.randint(40, 1400)))
            t += rng.randint(1, 80_000)
        recs.append(TraceRecord(t + 12 * MS, False, rng.randint(40, 1400)))
    recs.sort(key=lambda r: r.timestamp)
    return format_records(recs), recs


class StubRandom(random.Random):
    """Returns a fixed value from ``random()``."""

    def __init__(self, u):
        super().__init__(0)
        self.u = u

    def random(self):
        return self.u


# -- hypothesis strategies ---------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6)
nonneg = st.floats(min_value=0.0, max_value=1e6, allow_nan=False)
positive = st.floats(min_value=0.05, max_value=50.0, allow_nan=False)


@st.composite
def distributions(draw):
    kind = draw(st.sampled_from(DistKind))
    if kind == DistKind.UNIFORM:
        a, b = sorted((draw(finite), draw(finite)))
        p1, p2 = a, b
    elif kind in (DistKind.NORMAL,):
        p1, p2 = draw(finite), draw(nonneg)
    elif kind == DistKind.LOGNORMAL:
        p1 = draw(st.floats(-5, 10))
        p2 = draw(st.floats(0, 3))
    elif kind == DistKind.BINOMIAL:
        p1 = float(draw(st.integers(0, 10_000)))
        p2 = draw(st.floats(0, 1))
    elif kind == DistKind.POISSON:
        p1, p2 = draw(st.floats(0, 1e4)), 0.0
    elif kind == DistKind.NONE:
        p1, p2 = draw(finite), draw(finite)
    else:
        p1, p2 = draw(positive), draw(positive)
    start = draw(st.one_of(st.just(0.0), nonneg))
    mx = draw(st.one_of(st.just(0.0), nonneg))
    return Distribution(kind, p1, p2, start, mx)


@st.composite
def prob_lists(draw, n):
    raw = draw(st.lists(st.floats(0, 1), min_size=n + 2, max_size=n + 2))
    total = sum(raw)
    scale = draw(st.floats(0, 1))
    if total > 0:
        raw = [p / total * scale for p in raw]
    return [min(1.0, p) for p in raw]


@st.composite
def states(draw, n):
    events = draw(st.sets(st.sampled_from(EventKind), max_size=8))
    return State(
        timeout=draw(distributions()),
        action=draw(distributions()),
        action_is_block=draw(st.booleans()),
        bypass=draw(st.booleans()),
        replace=draw(st.booleans()),
        limit=draw(distributions()),
        limit_includes_nonpadding=draw(st.booleans()),
        next_state={e: draw(prob_lists(n)) for e in events},
    )


@st.composite
def machines(draw, max_states=5):
    n = draw(st.integers(1, max_states))
    return Machine(
        states=[draw(states(n)) for _ in range(n)],
        allowed_padding_bytes=draw(st.integers(0, 2**64 - 1)),
        max_padding_frac=draw(st.floats(0, 1)),
        allowed_blocked_microsec=draw(st.integers(0, 2**64 - 1)),
        max_blocking_frac=draw(st.floats(0, 1)),
        include_small_packets=draw(st.booleans()),
    )


def random_machine(rng, max_states=5):
    """Plain-random valid machine, for loops where hypothesis is too slow."""
    n = rng.randint(1, max_states)

    def dist():
        kind = rng.choice(list(DistKind))
        if kind == DistKind.UNIFORM:
            a, b = sorted((rng.uniform(-100, 1e4), rng.uniform(-100, 1e4)))
        elif kind in (DistKind.NORMAL, DistKind.LOGNORMAL):
            a, b = rng.uniform(-3, 8), rng.uniform(0, 2)
        elif kind == DistKind.BINOMIAL:
            a, b = float(rng.randint(0, 500)), rng.random()
        elif kind == DistKind.POISSON:
            a, b = rng.uniform(0, 100), 0.0
        elif kind == DistKind.NONE:
            a, b = 0.0, 0.0
        else:
            a, b = rng.uniform(0.1, 10), rng.uniform(0.1, 10)
        start = rng.choice([0.0, rng.uniform(0, 5000)])
        mx = rng.choice([0.0, rng.uniform(1, 1e5)])
        return Distribution(kind, a, b, start, mx)

    def probs():
        raw = [rng.random() for _ in range(n + 2)]
        scale = rng.random()
        total = sum(raw)
        return [p / total * scale for p in raw]

    sts = []
    for _ in range(n):
        events = rng.sample(list(EventKind), rng.randint(0, 8))
        sts.append(State(
            timeout=dist(), action=dist(), limit=dist(),
            action_is_block=rng.random() < 0.3,
            bypass=rng.random() < 0.5,
            replace=rng.random() < 0.5,
            limit_includes_nonpadding=rng.random() < 0.5,
            next_state={e: probs() for e in events},
        ))
    return Machine(
        states=sts,
        allowed_padding_bytes=rng.randint(0, 2**64 - 1),
        max_padding_frac=rng.random(),
        allowed_blocked_microsec=rng.randint(0, 2**64 - 1),
        max_blocking_frac=rng.random(),
        include_small_packets=rng.random() < 0.5,
    )
