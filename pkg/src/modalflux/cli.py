"""Command line front end: check, render, serve, snapshot.

Exit codes: 0 success, 1 validation problem (bad flags, bad file, bad
excitation spec), 2 runtime failure.  Nothing touches the engine until
the whole invocation has validated.
"""
import argparse
import dataclasses
import sys
import time
from pathlib import Path

from . import persistence
from .engine import ConfigError, Excitation, RenderJob, render, run_live
from .scheduler import RateConfig, Scheduler
from .service import serve_tcp


class CliError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    # argparse would exit(2); flag problems are validation errors here
    def error(self, message):
        raise CliError(message)


def parse_excite(spec: str, sample_rate: int) -> Excitation:
    """`strike@<t>,net=<n>,x=<x>,e=<E>,phi=<rad>`; press adds dur=<s>."""
    head, _, rest = spec.partition(",")
    kind, _, at = head.partition("@")
    fields = {}
    for item in rest.split(","):
        if not item:
            continue
        key, eq, raw = item.partition("=")
        if not eq:
            raise CliError(f"--excite: expected key=value, got {item!r}")
        fields[key] = raw
    try:
        t = float(at) if at else 0.0
        net = fields.pop("net")
        x = float(fields.pop("x")) if "x" in fields else None
        node = int(fields.pop("node")) if "node" in fields else None
        energy = float(fields.pop("e", "1"))
        phase = float(fields.pop("phi", "0"))
        dur = float(fields.pop("dur", "0"))
    except KeyError as err:
        raise CliError(f"--excite: missing {err.args[0]}") from None
    except ValueError as err:
        raise CliError(f"--excite: {err}") from None
    if fields:
        raise CliError(f"--excite: unknown keys {sorted(fields)}")
    try:
        return Excitation(
            kind,
            net,
            energy,
            x=x,
            node=node,
            phase=phase,
            time=round(t * sample_rate),
            duration=round(dur * sample_rate),
        )
    except ConfigError as err:
        raise CliError(f"--excite: {err}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _ArgumentParser(prog="modalflux", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("instrument", help="instrument file")
        sp.add_argument("--sample-rate", type=int, help="override file [rates]")
        sp.add_argument("--oversample", type=int, help="override file [rates]")
        sp.add_argument("--seed", type=int, help="reserved")
        sp.add_argument("--verbose", action="store_true")

    sp = sub.add_parser("check", help="validate a file and summarize it")
    common(sp)

    sp = sub.add_parser("render", help="render to a WAV file")
    common(sp)
    sp.add_argument("--out", help="output path (default: instrument stem + .wav)")
    sp.add_argument("--duration", type=float, default=1.0, help="seconds")
    sp.add_argument(
        "--excite",
        action="append",
        default=[],
        metavar="SPEC",
        help="strike@<t>,net=<n>,x=<x>,e=<E>,phi=<rad> (repeatable)",
    )
    sp.add_argument("--format", choices=("float32", "int16"), default="float32")

    sp = sub.add_parser("serve", help="run live with the control socket")
    common(sp)
    sp.add_argument("--port", type=int, default=7770)
    sp.add_argument("--fast", action="store_true", help="no real-time pacing")

    sp = sub.add_parser("snapshot", help="list or extract snapshots")
    common(sp)
    sp.add_argument("--snapshot", metavar="NAME", help="extract one by name")
    return p


def _load(args):
    try:
        text = Path(args.instrument).read_text(encoding="utf-8")
    except OSError as err:
        raise CliError(str(err)) from None
    doc = persistence.parse_instrument(text)
    overrides = {}
    if args.sample_rate is not None:
        if args.sample_rate < 1:
            raise CliError("--sample-rate must be >= 1")
        overrides["sample_rate"] = args.sample_rate
    if args.oversample is not None:
        if args.oversample < 1:
            raise CliError("--oversample must be >= 1")
        overrides["oversample"] = args.oversample
    if overrides:
        doc.rates = dataclasses.replace(doc.rates or RateConfig(), **overrides)
    return doc, persistence.instantiate(doc)


def _cmd_check(args) -> int:
    doc, instr = _load(args)
    nodes = sum(len(net.nodes) for net in instr.networks.values())
    disabled = sum(
        (not node.enabled) for net in instr.networks.values() for node in net.nodes
    )
    print(
        f"networks={len(instr.networks)} nodes={nodes} "
        f"couplings={len(instr.registry.couplings)} pickups={len(instr.pickups)} "
        f"snapshots={len(instr.snapshots)} nyquist_disabled={disabled}"
    )
    return 0


def _cmd_render(args) -> int:
    doc, instr = _load(args)
    rate = instr.rates.sample_rate
    excitations = [parse_excite(s, rate) for s in args.excite]
    if args.duration <= 0:
        raise CliError("--duration must be positive")
    out = args.out or str(Path(args.instrument).with_suffix(".wav").name)
    job = RenderJob(instr, args.duration, out, excitations=excitations, fmt=args.format)
    try:
        report = render(job)
    except Exception as err:
        print(f"render failed: {err}", file=sys.stderr)
        return 2
    print(f"wrote {out}: {report.frames} frames, peak {report.peak:.4g}, clipped {report.clipped}")
    if args.verbose:
        for event in report.events:
            print(event, file=sys.stderr)
    return 0


def serve_loop(sched, server, should_stop, fast=False, block_frames=256):
    """Tick the instrument, pump meters, pace against the wall clock."""
    rate = sched.instrument.rates.sample_rate
    start = time.monotonic()
    produced = [0]

    def sink(block):
        produced[0] += len(block)
        server.pump_meters()
        if not fast:
            ahead = produced[0] / rate - (time.monotonic() - start)
            if ahead > 0:
                time.sleep(ahead)

    return run_live(sched, sink, should_stop, block_frames=block_frames)


def _cmd_serve(args) -> int:
    doc, instr = _load(args)
    sched = Scheduler(instr)
    try:
        server = serve_tcp(sched, port=args.port)
    except OSError as err:
        print(f"cannot listen: {err}", file=sys.stderr)
        return 2
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        serve_loop(sched, server, should_stop=lambda: False, fast=args.fast)
    except KeyboardInterrupt:
        pass
    except Exception as err:
        print(f"serve failed: {err}", file=sys.stderr)
        return 2
    finally:
        server.shutdown()
        server.server_close()
    return 0


def _cmd_snapshot(args) -> int:
    doc, _ = _load(args)
    if args.snapshot is None:
        for name in sorted(doc.snapshots):
            snap = doc.snapshots[name]
            where = f" {snap.target}" if snap.target else ""
            print(f"{name} ({snap.scope}{where}, {len(snap.entries)} entries)")
        return 0
    snap = doc.snapshots.get(args.snapshot)
    if snap is None:
        raise CliError(f"no snapshot {args.snapshot!r}")
    only = persistence.InstrumentFile(snapshots={snap.name: snap})
    text = persistence.serialize_instrument(only)
    # drop the format_version prologue; this is an excerpt, not a file
    print(text.partition("\n\n")[2], end="")
    return 0


_COMMANDS = {
    "check": _cmd_check,
    "render": _cmd_render,
    "serve": _cmd_serve,
    "snapshot": _cmd_snapshot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.cmd](args)
    except (CliError, persistence.FileError, ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
