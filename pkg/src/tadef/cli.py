"""Command-line workbench: validate machines, simulate traces, compare overheads.

Exit status: 0 on success, 1 on a domain error (bad machine, bad trace),
2 on an I/O error.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

from .machine import Machine, MachineError, deserialize, serialize
from .sim import simulate
from .trace import ParseError, parse_records, records_to_queue, trace_stats, write_trace

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2

NS_PER_MS = 1_000_000


class _IOFailure(Exception):
    pass


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="ascii", newline="") as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise _IOFailure(f"{path}: {e}") from e


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="ascii", newline="") as f:
            f.write(text)
    except OSError as e:
        raise _IOFailure(f"{path}: {e}") from e


def expand_machine_args(args: Sequence[str]) -> List[Tuple[str, str]]:
    """Each argument is inline hex or a file with one hex string per line.

    Returns ``(label, hex)`` pairs.
    """
    out = []
    for arg in args:
        if os.path.isfile(arg):
            for i, line in enumerate(_read_text(arg).splitlines(), start=1):
                line = line.strip()
                if line:
                    out.append((f"{arg}:{i}", line))
        else:
            out.append((arg if len(arg) <= 16 else arg[:13] + "...", arg))
    return out


def _load_machines(args: Sequence[str]) -> List[Machine]:
    return [deserialize(h) for _, h in expand_machine_args(args)]


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def cmd_validate(args, out=None) -> int:
    out = out or sys.stdout
    machines = expand_machine_args(args.machines)
    if not machines:
        print("error: no machines given", file=sys.stderr)
        return EXIT_DOMAIN
    status = EXIT_OK
    for label, h in machines:
        try:
            m = deserialize(h)
        except MachineError as e:
            print(f"{label}: error: {type(e).__name__}: {e}", file=out)
            status = EXIT_DOMAIN
            continue
        n = len(m.states)
        events = sorted({k.name for s in m.states for k in s.next_state})
        print(f"{label}: ok, {n} state{'s' if n != 1 else ''}", file=out)
        print(f"  events: {', '.join(events) if events else '(none)'}", file=out)
        print(f"  hex: {serialize(m)}", file=out)
    return status


def _sim_one(trace_text: str, client, server, delay_ns, max_events, packets_only, seed) -> str:
    queue = records_to_queue(parse_records(trace_text), delay_ns)
    events = simulate(client, server, queue, delay_ns, max_events, packets_only, seed)
    text = write_trace(events)
    return text + "\n" if text else ""


def cmd_sim(args) -> int:
    client = _load_machines(args.client_machine)
    server = _load_machines(args.server_machine)
    delay_ns = int(round(args.delay_ms * NS_PER_MS))
    traces = args.trace
    if len(traces) > 1 and not args.output_dir:
        print("error: several traces require --output-dir", file=sys.stderr)
        return EXIT_DOMAIN
    texts = [_read_text(p) for p in traces]
    job = (client, server, delay_ns, args.max_events, args.packets_only, args.seed)

    if args.jobs > 1 and len(texts) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sim_one, texts, *[[a] * len(texts) for a in job]))
    else:
        results = [_sim_one(t, *job) for t in texts]

    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        for path, text in zip(traces, results):
            _write_text(os.path.join(args.output_dir, os.path.basename(path)), text)
    else:
        _write_text(args.output, results[0])
    return EXIT_OK


def cmd_stats(args, out=None) -> int:
    out = out or sys.stdout
    s = trace_stats(_read_text(args.base), _read_text(args.defended))
    rows = [
        ("padding_overhead", f"{s.padding_overhead:.6f}"),
        ("duration_ratio", f"{s.duration_ratio:.6f}"),
        ("delay_overhead", f"{s.delay_overhead:.6f}"),
        ("base_bytes", s.base_bytes),
        ("defended_bytes", s.defended_bytes),
        ("base_sent", s.base_sent),
        ("base_recv", s.base_recv),
        ("defended_sent", s.defended_sent),
        ("defended_recv", s.defended_recv),
    ]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}", file=out)
    print(file=out)
    print(",".join(k for k, _ in rows), file=out)
    print(",".join(str(v) for _, v in rows), file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tadef", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check machines and print canonical hex")
    v.add_argument("machines", nargs="*", help="hex strings or files of hex lines")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sim", help="simulate machines over a base trace")
    s.add_argument("--trace", required=True, nargs="+", help="base trace file(s)")
    s.add_argument("--delay-ms", type=float, default=10.0, help="one-way delay (default: 10)")
    s.add_argument("--client-machine", action="append", default=[], metavar="HEX|FILE")
    s.add_argument("--server-machine", action="append", default=[], metavar="HEX|FILE")
    s.add_argument("--max-events", type=int, default=100_000)
    s.add_argument("--packets-only", type=_parse_bool, default=True, metavar="BOOL")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("-o", "--output", default=None, help="output file (default: stdout)")
    s.add_argument("--output-dir", default=None, help="directory for batch output")
    s.add_argument("--jobs", type=int, default=1, help="parallel simulations in batch mode")
    s.set_defaults(func=cmd_sim)

    st = sub.add_parser("stats", help="overheads of a defended trace")
    st.add_argument("--base", required=True)
    st.add_argument("--defended", required=True)
    st.set_defaults(func=cmd_stats)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "sim" and args.max_events <= 0:
        print("error: --max-events must be positive", file=sys.stderr)
        return EXIT_DOMAIN
    try:
        return args.func(args)
    except _IOFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (MachineError, ParseError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
