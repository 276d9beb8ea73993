"""Acceptance suite: one test per shipping requirement.

Each test exercises the public surface end to end, then emits a single
pass/fail line carrying the measured numbers next to their tolerances.
The lines are echoed in the terminal summary (see conftest) so a plain
pytest run doubles as the acceptance report.
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from conftest import ACCEPTANCE_LINES
from modalflux.engine import Excitation, Pickup, RenderJob, excite, render
from modalflux.etf import EtfKind, NodeRef, kernel_deltas
from modalflux.network import build_template, set_node_param
from modalflux.paths import classify, get_value, list_paths, make_edit
from modalflux.persistence import (
    instantiate,
    parse_instrument,
    recall_snapshot,
    save_snapshot,
    serialize_instrument,
)
from modalflux.scheduler import Scheduler, add_coupling, assemble
from modalflux.service import ControlSession, state_hash
from oracles import envelope_rate, spectrum_peak_hz, two_node_diffusion, zero_crossing_freq

RATE = 44100
GOLDEN = Path(__file__).parent / "golden"


def report(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def bank_traces(sched, n, slot=0, names=("m0",)):
    """Per-sample bank columns for one slot, resolved live so rebuilds are safe."""
    out = [np.empty(n) for _ in names]
    k = [0]

    def tap():
        i = k[0]
        for buf, name in zip(out, names):
            buf[i] = getattr(sched, name)[slot]
        k[0] = i + 1

    sched.run(n, inner_hook=tap)
    return out


def test_free_oscillator_holds_pitch_and_energy():
    instr = assemble([build_template("n", "custom", 1, 440.0)])
    sched = Scheduler(instr)
    sched.feed_node("n", 0, 1.0)
    n = 10 * RATE
    m0, m1 = bank_traces(sched, n, names=("m0", "m1"))

    freq = zero_crossing_freq(m0, RATE)
    w = (2.0 * math.pi * 440.0 / RATE) ** 2
    energy = 0.5 * (m1 * m1 + w * (m0 * m0 - m0 * m1))
    period = round(RATE / 440.0)
    by_period = energy[: (n // period) * period].reshape(-1, period).mean(axis=1)
    drift = float(np.max(np.abs(by_period - by_period[0])) / by_period[0])

    ok = abs(freq / 440.0 - 1.0) < 0.005 and drift < 1e-3
    report(
        "free oscillator",
        ok,
        f"zero-crossing {freq:.3f} Hz vs 440 (tol 0.5%); "
        f"period-averaged energy drift over 10 s {drift:.2e} (tol 1e-3)",
    )


def test_damping_sets_the_decay_rate():
    worst = 0.0
    for d_s in (1e-4, 1e-3, 1e-2):
        instr = assemble([build_template("n", "custom", 1, 440.0, global_damping=d_s * RATE)])
        sched = Scheduler(instr)
        sched.feed_node("n", 0, 1.0)
        (trace,) = bank_traces(sched, RATE)
        fitted = envelope_rate(trace)
        worst = max(worst, abs(fitted / (d_s / 2.0) - 1.0))
    ok = worst < 0.02
    report(
        "decay law",
        ok,
        f"fitted envelope rate vs half the per-sample damping, worst error {worst:.2%} "
        f"across 1e-4/1e-3/1e-2 (tol 2%)",
    )


def test_energy_is_conserved_without_damping():
    # a two-network tangle of every zero-sum kernel, pairs plus one group
    a = build_template("a", "custom", 3, 220.0, total_mass=3.0)
    b = build_template("b", "custom", 2, 330.0, total_mass=2.0)
    instr = assemble([a, b])
    reg, nets = instr.registry, instr.networks
    add_coupling(reg, EtfKind("linear", {"k": 0.01}), [NodeRef("a", 0), NodeRef("a", 1)], rate_divisor=2, networks=nets)
    add_coupling(reg, EtfKind("phase", {"k": 0.005}), [NodeRef("a", 1), NodeRef("a", 2)], rate_divisor=4, networks=nets)
    add_coupling(reg, EtfKind("saturate", {"k": 0.02, "saturation_scale": 0.5}), [NodeRef("b", 0), NodeRef("b", 1)], rate_divisor=4, networks=nets)
    add_coupling(reg, EtfKind("oneway", {"k": 0.003}), [NodeRef("a", 2), NodeRef("b", 0)], rate_divisor=8, networks=nets)
    add_coupling(reg, EtfKind("linear", {"k": 0.0005}), [NodeRef("a", 0), NodeRef("a", 2), NodeRef("b", 0)], rate_divisor=16, networks=nets)
    sched = Scheduler(instr)
    sched.feed_node("a", 0, 1.0)
    sched.feed_node("a", 1, 0.25, 1.3)
    sched.feed_node("b", 0, 0.5, 2.1)
    e0 = sched.total_energy()
    drift = 0.0
    for _ in range(100):
        sched.run(4410)
        drift = max(drift, abs(sched.total_energy() / e0 - 1.0))

    rng = np.random.default_rng(0x5EED)
    cases = {
        "linear": {"k": 0.3},
        "phase": {"k": 0.25},
        "detune": {"k": 0.2, "kappa": 1.0},
        "saturate": {"k": 0.4, "saturation_scale": 0.7},
        "oneway": {"k": 0.35},
    }
    worst = 0.0
    for tag, params in cases.items():
        for _ in range(10_000):
            m = int(rng.integers(2, 6))
            energies = rng.exponential(1.0, m).tolist()
            phases = rng.uniform(0.0, 2.0 * math.pi, m).tolist()
            deltas = kernel_deltas(tag, params, int(rng.integers(1, 64)), energies, phases)
            mag = sum(abs(d) for d in deltas)
            if mag:
                worst = max(worst, abs(sum(deltas)) / mag)

    ok = drift < 1e-6 and worst < 1e-12
    report(
        "conservation",
        ok,
        f"undamped instrument energy drift over 10 s {drift:.2e} (tol 1e-6); "
        f"kernel zero-sum worst residual {worst:.1e} over 1e4 randomized states per kind (tol 1e-12)",
    )


def test_coupled_pair_equalizes_and_matches_the_reference():
    net = build_template("s", "custom", 2, 440.0, total_mass=2.0)
    instr = assemble([net])
    add_coupling(
        instr.registry,
        EtfKind("linear", {"k": 0.999}),
        [NodeRef("s", 0), NodeRef("s", 1)],
        networks=instr.networks,
    )
    sched = Scheduler(instr)
    sched.feed_node("s", 0, 1.0, 0.0)
    ea = np.empty(RATE)
    eb = np.empty(RATE)
    for i in range(RATE):
        ea[i] = sched.node_energy("s", 0)
        eb[i] = sched.node_energy("s", 1)
        sched.tick_sample()

    oa, ob = two_node_diffusion(440.0, RATE, 0.999, 1.0, RATE)
    diff = np.concatenate([ea - oa, eb - ob])
    rms = math.sqrt(float(np.mean(diff * diff)))
    ok = float(ea.min()) < 0.05 and rms < 1e-9
    report(
        "two-node diffusion",
        ok,
        f"seeded node energy min {ea.min():.4f} of 1.0 within 1 s (tol < 0.05); "
        f"reference trajectory RMS {rms:.1e} (tol 1e-9)",
    )


def _coupled_duet(order, ids, gain):
    a = build_template("a", "string", 4, 220.0, global_damping=1.0)
    b = build_template("b", "string", 3, 330.0, global_damping=1.0)
    instr = assemble([a, b])
    specs = [
        (EtfKind("linear", {"k": 0.02}), [NodeRef("a", 0), NodeRef("a", 1)]),
        (EtfKind("saturate", {"k": 0.01, "saturation_scale": 0.3}), [NodeRef("a", 1), NodeRef("b", 0)]),
        (EtfKind("phase", {"k": 0.005}), [NodeRef("a", 2), NodeRef("b", 1)]),
    ]
    for pos in order:
        kind, refs = specs[pos]
        add_coupling(instr.registry, kind, refs, networks=instr.networks, cid=ids[pos])
    instr.pickups.append(Pickup("weights", weights=[gain] * 7))
    return instr


def test_renders_are_deterministic_for_a_given_id_assignment(tmp_path):
    hits = [
        Excitation("strike", "a", 0.8, x=0.3),
        Excitation("strike", "b", 0.4, x=0.41, time=977),
    ]
    out = {}
    for tag, order, ids in (
        ("base", [0, 1, 2], [0, 1, 2]),
        ("reordered", [2, 0, 1], [0, 1, 2]),
        ("permuted", [0, 1, 2], [2, 0, 1]),
    ):
        path = tmp_path / f"{tag}.wav"
        render(RenderJob(_coupled_duet(order, ids, 1e-5), 1.0, str(path), excitations=list(hits)))
        out[tag] = path

    identical = out["base"].read_bytes() == out["reordered"].read_bytes()
    x = wavfile.read(str(out["base"]))[1].astype(float)
    y = wavfile.read(str(out["permuted"]))[1].astype(float)
    rms = math.sqrt(float(np.mean((x - y) ** 2)))
    ok = identical and rms <= 1e-12
    report(
        "scheduler determinism",
        ok,
        f"same ids, shuffled insertion: bit-identical={identical}; "
        f"permuted ids: render RMS {rms:.1e} (tol 1e-12)",
    )


def test_level_features_appear_in_order(tmp_path):
    # level 1: network outputs superpose
    def build_pair():
        a = build_template("a", "string", 4, 220.0, global_damping=3.0)
        b = build_template("b", "string", 4, 330.0, global_damping=3.0)
        instr = assemble([a, b])
        # low gain keeps float32 file quantization well under the budget
        instr.pickups.append(Pickup("weights", weights=[1e-5] * 8))
        return instr

    hit_a = Excitation("strike", "a", 1.0, x=0.3)
    hit_b = Excitation("strike", "b", 0.5, x=0.6, time=2000)
    traces = []
    for excitations in ([hit_a], [hit_b], [hit_a, hit_b]):
        job = RenderJob(build_pair(), 0.5, str(tmp_path / "l1.wav"), excitations=excitations)
        render(job)
        traces.append(wavfile.read(job.out_path)[1].astype(float))
    d = traces[0] + traces[1] - traces[2]
    rms1 = math.sqrt(float(np.mean(d * d)))

    # level 2: a strike in perfect opposition deposits nothing
    net = build_template("n", "custom", 1, 330.0)
    set_node_param(net, 0, "level", 2)
    sched = Scheduler(assemble([net]))
    excite(sched, Excitation("strike", "n", 0.5, node=0, phase=0.8))
    before = sched.node_energy("n", 0)
    phi = sched.node_phase("n", 0)
    excite(sched, Excitation("strike", "n", 0.5, node=0, phase=phi + math.pi))
    added = sched.node_energy("n", 0) - before

    # level 3: sustained feed power drags the pitch by kappa
    donor = build_template("d", "custom", 1, 50.0)
    taker = build_template("r", "custom", 1, 440.0)
    set_node_param(taker, 0, "level", 3)
    instr = assemble([donor, taker])
    add_coupling(
        instr.registry,
        EtfKind("detune", {"k": 2e-7, "kappa": 25.0}),
        [NodeRef("d", 0), NodeRef("r", 0)],
        networks=instr.networks,
    )
    sched = Scheduler(instr)
    sched.feed_node("d", 0, 1e4)
    sched.feed_node("r", 0, 1e-3)
    m0, weff = bank_traces(sched, 2 * RATE, slot=1, names=("m0", "weff"))
    window = slice(RATE, 2 * RATE)
    peak3 = spectrum_peak_hz(m0[window], RATE)
    lawful = float(np.mean(weff[window])) * RATE / (2.0 * math.pi)
    err3 = abs(peak3 - lawful)

    # level 4: amplitude bends pitch where the linear node stays put
    peaks = {}
    for beta in (0.0, 1e-4):
        net = build_template("x", "custom", 1, 440.0)
        if beta:
            set_node_param(net, 0, "level", 4)
            set_node_param(net, 0, "beta", beta)
        sched = Scheduler(assemble([net]))
        sched.feed_node("x", 0, 0.5)
        (trace,) = bank_traces(sched, RATE)
        peaks[beta] = spectrum_peak_hz(trace, RATE)
    shift4 = peaks[1e-4] - peaks[0.0]
    linear_still = abs(peaks[0.0] - 440.0) <= 1.0

    ok = rms1 < 1e-9 and added == 0.0 and err3 <= 1.0 and linear_still and shift4 > 2.0
    report(
        "level ladder",
        ok,
        f"L1 superposition RMS {rms1:.1e} (tol 1e-9); L2 opposed strike added {added:+.1e} (exact 0); "
        f"L3 peak {peak3:.0f} Hz vs kappa law {lawful:.1f} Hz, off by {err3:.2f} (tol 1 bin); "
        f"L4 peak shift {shift4:+.0f} Hz at high amplitude, linear at {peaks[0.0]:.0f} (needs > 2 bins)",
    )


def test_eighty_node_render_beats_real_time(tmp_path):
    net = build_template("p", "string", 80, 55.0, stretch_b=2e-4, global_damping=0.5)
    instr = assemble([net], pickups=[Pickup("location", net="p", x=0.137, gain=0.02)])
    job = RenderJob(
        instr, 1.0, str(tmp_path / "p80.wav"), excitations=[Excitation("strike", "p", 1.0, x=0.23)]
    )
    t0 = time.perf_counter()
    rep = render(job)
    wall = time.perf_counter() - t0
    ok = wall < 1.0 and rep.frames == RATE
    report(
        "throughput",
        ok,
        f"80-node stretched string rendered 1.00 s of audio in {wall:.3f} s wall (budget 1.0 s)",
    )


def test_files_canonicalize_and_snapshots_restore_exactly():
    stable = True
    for stem in ("plucked", "duet", "ride"):
        text = (GOLDEN / f"{stem}.mfi").read_text()
        frozen = (GOLDEN / f"{stem}.canon.mfi").read_text()
        canon = serialize_instrument(parse_instrument(text))
        stable = stable and canon == frozen and serialize_instrument(parse_instrument(canon)) == canon

    instr = instantiate(parse_instrument((GOLDEN / "duet.mfi").read_text()))
    sched = Scheduler(instr)
    sched.feed_node("low", 0, 0.4)
    sched.feed_node("high", 1, 0.2, 0.9)
    sched.run(300)
    playable = [p for p in list_paths(instr) if classify(p) == "playable"]
    save_snapshot(instr, "probe")
    want = {p: get_value(instr, p) for p in playable}
    h0 = state_hash(sched)

    for path, value in (
        ("net.low.f0", 123.0),
        ("net.low.node.1.damp", 4.5),
        ("net.high.node.0.mass", 0.31),
        ("coupling.3.e_max", 9.0),
        ("coupling.0.k", 0.125),
    ):
        sched.queue_edit(make_edit(instr, path, value))
    sched.flush_edits()
    touched = sum(1 for p in playable if get_value(instr, p) != want[p])

    edits, stale = recall_snapshot(instr, "probe")
    for _, fn in edits:
        sched.queue_edit(fn)
    sched.flush_edits()
    restored = all(get_value(instr, p) == want[p] for p in playable)
    h1 = state_hash(sched)

    ok = stable and touched >= 5 and restored and not stale and h0 == h1
    report(
        "persistence",
        ok,
        f"3 corpus files byte-stable through canonicalization: {stable}; snapshot recall restored "
        f"{len(playable)} playable values exactly after {touched} drifted, node state hash unchanged: {h0 == h1}",
    )


def test_control_transcript_replays_byte_for_byte():
    lines = (GOLDEN / "session.transcript").read_text().splitlines()
    net = build_template("s", "custom", 3, 100.0)
    sched = Scheduler(assemble([net]))
    pushes = []
    session = ControlSession(sched, push=pushes.append)

    replies = 0
    meter_pushes = 0
    listing_pushes = 0
    mismatch = None
    got = None
    for line in lines:
        if line.startswith("> "):
            before = len(pushes)
            got = session.handle_line(line[2:])
            listing_pushes += len(pushes) - before
        elif line.startswith("< "):
            replies += 1
            if got != line[2:] and mismatch is None:
                mismatch = f"wanted {line[2:]!r} got {got!r}"
        elif line.startswith("! run "):
            sched.run(int(line.split()[2]))
        elif line.startswith("! pump "):
            before = len(pushes)
            session.pump_meters()
            arrived = len(pushes) - before
            meter_pushes += arrived
            if arrived != int(line.split()[2]) and mismatch is None:
                mismatch = f"expected {line.split()[2]} meter pushes, saw {arrived}"

    ok = mismatch is None and replies >= 25 and listing_pushes == 3 and meter_pushes == 10
    report(
        "control protocol",
        ok,
        f"{replies} scripted replies byte-identical; {meter_pushes} meter push lines and "
        f"{listing_pushes} listing pushes arrived on schedule, excluded from the byte check"
        + (f"; first mismatch: {mismatch}" if mismatch else ""),
    )
