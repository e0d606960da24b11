"""Traffic-analysis defenses as probabilistic state machines.

Machines react to connection events and schedule padding or blocking;
a trace-driven simulator evaluates them at client and server.
"""
from .dist import DistKind, Distribution, InvalidDistribution
from .framework import (
    BlockingBegin,
    BlockingEnd,
    BlockOutgoing,
    Cancel,
    Framework,
    InjectPadding,
    InvalidFraction,
    InvalidMtu,
    LimitReached,
    NonPaddingRecv,
    NonPaddingSent,
    PaddingRecv,
    PaddingSent,
    UpdateMTU,
    blocking_merge,
)
from .machine import (
    BadEncoding,
    BadVersion,
    EventKind,
    InvalidMachine,
    Machine,
    State,
    Truncated,
    deserialize,
    serialize,
)
from .sim import replay_deterministically, simulate
from .trace import SimEvent, SimQueue, parse_trace, trace_stats, write_trace

__version__ = "0.1.0"
