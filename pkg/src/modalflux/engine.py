"""Excitation events, output pickups, and rendering.

Strikes distribute one energy delta across a network by spatial weight; on
phase-aware nodes (L2 and up) the share a sounding node receives is scaled
by (1 + cos(phi_node - strike_phase)) / 2, so an in-phase strike reinforces
fully and an anti-phase strike is discarded.  Presses drip energy in per
sample over a duration.

A pickup taps output either at a spatial location (shape-weighted sum of
displacements) or through an explicit per-node weight vector covering all
nodes in canonical order (networks sorted by name, then node index).  With
oversampling, the tap runs at the inner rate through a one-pole lowpass at
0.45x the output sample rate before decimation.

Rendering is offline and deterministic: the same job produces the same
file bytes.  run_live is the real-time seam; it fills fixed-size blocks
through a caller-supplied sink and never stops for control traffic.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .modes import EPS_ENERGY, Level
from .network import injection_weights
from .scheduler import Scheduler

FORMATS = ("float32", "int16")


class UnknownTarget(ValueError):
    pass


class ConfigError(ValueError):
    pass


class SinkUnderrun(RuntimeError):
    """Raised by a sink that missed its deadline; logged, never fatal."""


@dataclass
class Excitation:
    kind: str
    net: str
    energy: float
    x: float | None = None
    node: int | None = None
    phase: float = 0.0
    time: int = 0
    duration: int = 0
    press_rate: float | None = None

    def __post_init__(self):
        if self.kind not in ("strike", "press"):
            raise ConfigError(f"unknown excitation kind {self.kind!r}")
        if self.energy <= 0:
            raise ConfigError("energy must be positive")
        if self.time < 0:
            raise ConfigError("time must be nonnegative")
        if (self.x is None) == (self.node is None):
            raise ConfigError("give exactly one of x or node")
        if self.kind == "press" and self.duration < 1:
            raise ConfigError("press needs duration >= 1")


@dataclass
class Pickup:
    mode: str
    net: str | None = None
    x: float | None = None
    weights: list | None = None
    gain: float = 1.0

    def __post_init__(self):
        if self.mode == "location":
            if self.x is None or self.weights is not None or self.net is None:
                raise ConfigError("location pickup needs net and x, no weights")
        elif self.mode == "weights":
            if self.weights is None or self.x is not None:
                raise ConfigError("weights pickup needs weights, no x")
        else:
            raise ConfigError(f"unknown pickup mode {self.mode!r}")


@dataclass
class RenderJob:
    instrument: object
    duration: float
    out_path: str
    excitations: list = field(default_factory=list)
    fmt: str = "float32"

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.fmt not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")


@dataclass
class RenderReport:
    frames: int
    peak: float
    clipped: int
    events: list


def _inject(sched: Scheduler, ex: Excitation, amount: float):
    """Distribute one delta over the target, phase-weighting live L2+ nodes."""
    net = sched.instrument.networks.get(ex.net)
    if net is None:
        raise UnknownTarget(f"no network {ex.net!r}")
    if ex.node is not None:
        shares = [(ex.node, amount)]
    else:
        weights = injection_weights(net, ex.x)
        shares = [(k, amount * w) for k, w in enumerate(weights) if w != 0.0]
    for k, amt in shares:
        node = net.nodes[k]
        if node.params.level >= Level.L2 and sched.node_energy(ex.net, k) > EPS_ENERGY:
            phi = sched.node_phase(ex.net, k)
            # the out-of-phase remainder is discarded, not reflected
            amt *= (1.0 + math.cos(phi - ex.phase)) / 2.0
        sched.feed_node(ex.net, k, amt, ex.phase)


def excite(sched: Scheduler, ex: Excitation):
    """Apply one excitation now (strikes whole, presses one sample's worth)."""
    if ex.kind == "strike":
        _inject(sched, ex, ex.energy)
    else:
        rate = ex.press_rate if ex.press_rate is not None else ex.energy / ex.duration
        _inject(sched, ex, rate)


def _pickup_vector(sched: Scheduler, pickup: Pickup) -> np.ndarray:
    vec = np.zeros(len(sched.m0))
    nets = sched.instrument.networks
    if pickup.mode == "location":
        net = nets.get(pickup.net)
        if net is None:
            raise UnknownTarget(f"no network {pickup.net!r}")
        for k in range(len(net.nodes)):
            slot = sched.slots.get((pickup.net, k))
            if slot is not None:
                vec[slot] = net.shape(k, pickup.x)
    else:
        if len(pickup.weights) != len(sched.node_order):
            raise ConfigError(
                f"weights cover {len(pickup.weights)} nodes, instrument has {len(sched.node_order)}"
            )
        for (name, k), w in zip(sched.node_order, pickup.weights):
            slot = sched.slots.get((name, k))
            if slot is not None:
                vec[slot] = w
    return vec


def pickup_sample(sched: Scheduler, pickup: Pickup) -> float:
    """One output value; the render loop uses a cached vector instead."""
    return pickup.gain * float(np.dot(_pickup_vector(sched, pickup), sched.m0))


def _default_pickups(instrument) -> list:
    if instrument.pickups:
        return list(instrument.pickups)
    n = sum(len(net.nodes) for net in instrument.networks.values())
    return [Pickup(mode="weights", weights=[1.0] * n)]


class _Taps:
    """Cached pickup vectors plus the decimation filters, one per channel."""

    def __init__(self, sched, pickups):
        self.sched = sched
        self.pickups = pickups
        oversample = sched.instrument.rates.oversample
        self.filtered = oversample > 1
        self.coeff = 1.0 - math.exp(-2.0 * math.pi * 0.45 / oversample)
        self.y = [0.0] * len(pickups)
        self.version = -1
        self.refresh()

    def refresh(self):
        if self.sched.structure_version != self.version:
            self.vectors = [_pickup_vector(self.sched, p) for p in self.pickups]
            self.version = self.sched.structure_version

    def inner_step(self):
        m0 = self.sched.m0
        for j, vec in enumerate(self.vectors):
            x = float(np.dot(vec, m0))
            self.y[j] += self.coeff * (x - self.y[j])

    def frame(self):
        if self.filtered:
            return [p.gain * y for p, y in zip(self.pickups, self.y)]
        m0 = self.sched.m0
        return [p.gain * float(np.dot(vec, m0)) for p, vec in zip(self.pickups, self.vectors)]


def _run_frames(sched, taps, out, excitations):
    """Fill out with frames, firing excitations at their times."""
    strikes = sorted(
        (ex for ex in excitations if ex.kind == "strike"), key=lambda e: e.time
    )
    presses = [ex for ex in excitations if ex.kind == "press"]
    due = 0
    hook = taps.inner_step if taps.filtered else None
    for i in range(out.shape[0]):
        t = sched.sample_index
        while due < len(strikes) and strikes[due].time <= t:
            _inject(sched, strikes[due], strikes[due].energy)
            due += 1
        for ex in presses:
            if ex.time <= t < ex.time + ex.duration:
                rate = ex.press_rate if ex.press_rate is not None else ex.energy / ex.duration
                _inject(sched, ex, rate)
        sched.tick_sample(hook)
        taps.refresh()
        out[i] = taps.frame()
    return out


def render(job: RenderJob) -> RenderReport:
    """Offline render to a RIFF/WAVE file; clipping is reported, not fixed."""
    instrument = job.instrument
    rates = instrument.rates
    frames = round(job.duration * rates.sample_rate)
    pickups = _default_pickups(instrument)
    if not 1 <= len(pickups) <= 2:
        raise ConfigError("renders are mono or stereo: one or two pickups")
    sched = Scheduler(instrument)
    taps = _Taps(sched, pickups)
    out = np.zeros((frames, len(pickups)))
    _run_frames(sched, taps, out, job.excitations)
    sched.sync_states()

    peak = float(np.abs(out).max()) if frames else 0.0
    clipped = int(np.count_nonzero(np.abs(out) > 1.0))
    if job.fmt == "int16":
        data = (np.clip(out, -1.0, 1.0) * 32767.0).astype(np.int16)
    else:
        data = out.astype(np.float32)
    if data.shape[1] == 1:
        data = data[:, 0]
    wavfile.write(job.out_path, rates.sample_rate, data)
    return RenderReport(frames=frames, peak=peak, clipped=clipped, events=list(sched.events))


def run_live(sched: Scheduler, audio_sink, should_stop, block_frames: int = 256):
    """Feed the sink block by block until should_stop() says otherwise.

    Control edits land through the scheduler's own bounded queue; a sink
    that signals SinkUnderrun is logged and the loop carries on.
    """
    taps = _Taps(sched, _default_pickups(sched.instrument))
    produced = 0
    while not should_stop():
        out = np.zeros((block_frames, len(taps.pickups)))
        _run_frames(sched, taps, out, ())
        produced += block_frames
        try:
            audio_sink(out.astype(np.float32))
        except SinkUnderrun:
            sched.events.append(f"[{sched.sample_index}] sink underrun")
    sched.sync_states()
    return produced
