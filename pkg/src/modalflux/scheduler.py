"""Sample loop, coupling registry, and the control-edit boundary.

Every output sample runs three phases, once per oversampled inner step:

    A. against the start-of-sample state, evaluate every coupling whose
       counter fires, in ascending id order; clamp each transfer to its
       donors; accumulate the deltas per node in a side buffer,
    B. fold each node's accumulated delta into its state, then the detune
       feed-power bookkeeping,
    C. advance every enabled node by one step.

Nothing in phase A observes a phase-B or phase-C write from the same
sample, which is what stands in for evaluating all transfers in parallel.
Coupling counters tick on output samples, so transfer strength depends on
rate_divisor only, never on the oversampling factor.

Structural changes never land mid-block: control edits queue until the
next control-block boundary, and registry mutations are picked up there
too.  The boundary does no work when nothing changed, so an uncoupled
render pays nothing per block.

Enabled nodes live in a struct-of-arrays bank in a fixed canonical order
(networks sorted by name, then node index).  The vectorized step uses the
same IEEE expression tree as the scalar node update, so both paths produce
bit-equal trajectories.
"""
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .etf import Coupling, clamp_factor, kernel_deltas, limit_deltas, smooth_feed_power
from .modes import (
    EPS_ENERGY,
    TWO_PI,
    energy_of,
    energy_terms,
    update_effective_frequency,
)
from .network import set_effective_rate

EDIT_QUEUE_LIMIT = 1024


class UnknownParticipant(ValueError):
    pass


class UnknownId(ValueError):
    pass


class ArityMismatch(ValueError):
    pass


@dataclass
class RateConfig:
    """The three-rate hierarchy: audio, oversampled audio, control blocks."""

    sample_rate: int = 44100
    oversample: int = 1
    control_block: int = 64
    default_coupling_divisor: int = 1

    def __post_init__(self):
        for name in ("sample_rate", "oversample", "control_block", "default_coupling_divisor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def effective_rate(self) -> float:
        return float(self.sample_rate * self.oversample)


@dataclass
class CouplingRegistry:
    couplings: dict = field(default_factory=dict)
    next_id: int = 0
    version: int = 0

    def ordered(self):
        return [self.couplings[i] for i in sorted(self.couplings)]


def add_coupling(
    registry, kind, participants, rate_divisor: int = 1, location=None, networks=None, cid=None
) -> int:
    """Insert a coupling; ids are monotone and never reused.

    When the caller passes the instrument's networks, participants are
    checked for existence.  Takes effect at the next control-block
    boundary.  cid pins an explicit id (file loading); fresh ids stay
    above it afterwards.
    """
    participants = list(participants)
    if kind.tag == "limit":
        if len(participants) != 1 or participants[0].node is not None:
            raise ArityMismatch("limit couples one whole network")
    else:
        if len(participants) < 2:
            raise ArityMismatch("pair kernels need at least two participants")
        if any(p.node is None for p in participants):
            raise ArityMismatch("pair kernels address individual nodes")
    if networks is not None:
        for p in participants:
            net = networks.get(p.net)
            if net is None:
                raise UnknownParticipant(f"no network {p.net!r}")
            if p.node is not None and not 0 <= p.node < len(net.nodes):
                raise UnknownParticipant(f"no node {p.node} in {p.net!r}")
    if cid is None:
        cid = registry.next_id
    elif cid in registry.couplings:
        raise ValueError(f"coupling id {cid} already in use")
    c = Coupling(
        id=cid,
        kind=kind,
        participants=participants,
        rate_divisor=rate_divisor,
        location=location,
    )
    registry.couplings[c.id] = c
    registry.next_id = max(registry.next_id, cid + 1)
    registry.version += 1
    return c.id


def remove_coupling(registry, cid: int) -> None:
    if cid not in registry.couplings:
        raise UnknownId(f"no coupling {cid}")
    del registry.couplings[cid]
    registry.version += 1


@dataclass
class Instrument:
    networks: dict
    registry: CouplingRegistry
    rates: RateConfig
    pickups: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)


def assemble(networks, rates=None, pickups=None) -> Instrument:
    """Bind networks to one rate config and materialize template couplings."""
    rates = rates if rates is not None else RateConfig()
    by_name = {}
    for net in networks:
        if net.name in by_name:
            raise ValueError(f"duplicate network name {net.name!r}")
        by_name[net.name] = net
        set_effective_rate(net, rates.effective_rate)
    registry = CouplingRegistry()
    for name in sorted(by_name):
        for kind, refs in by_name[name].default_couplings:
            add_coupling(
                registry,
                kind,
                refs,
                rate_divisor=rates.default_coupling_divisor,
                networks=by_name,
            )
    return Instrument(
        networks=by_name,
        registry=registry,
        rates=rates,
        pickups=list(pickups) if pickups else [],
    )


class Scheduler:
    """Owns the sample clock and the node bank for one instrument."""

    def __init__(self, instrument: Instrument):
        self.instrument = instrument
        self.events = []
        self.edits = deque()
        self.dropped_edits = 0
        self.sample_index = 0
        # bumped on every phase-B/C write; the frozen-snapshot probe reads it
        self.state_version = 0
        self.eval_spy = None
        self.meters_enabled = False
        self._meter_latest = {}
        self._counters = {}
        self._muted = set()
        self._registry_seen = -1
        self._dirty = True
        self._bank_advanced = False
        self.structure_version = 0
        self._active = []
        self._detune_entries = []
        self._boundary()

    # -- bank maintenance ------------------------------------------------

    def _rebuild(self):
        instr = self.instrument
        eff = instr.rates.effective_rate
        self.node_order = []
        slots = {}
        banked = []
        for name in sorted(instr.networks):
            net = instr.networks[name]
            for k, node in enumerate(net.nodes):
                self.node_order.append((name, k))
                if node.state.order != 2:
                    raise ValueError("the sample loop handles order-2 nodes")
                if node.enabled and (name, k) not in self._muted:
                    slots[(name, k)] = len(banked)
                    banked.append(node)
        self.slots = slots
        self._banked = banked
        self.m0 = np.array([b.state.m[0] for b in banked])
        self.m1 = np.array([b.state.m[1] for b in banked])
        self.m2 = np.array([b.state.m[2] for b in banked])
        self.fps = np.array([b.state.feed_power_smoothed for b in banked])
        self.mass = np.array([b.params.mass for b in banked])
        wn = np.array([TWO_PI * b.params.nominal_frequency / eff for b in banked])
        weff = np.array([TWO_PI * b.state.effective_frequency / eff for b in banked])
        self.wn = wn
        self.wn2 = wn * wn
        self.weff = weff
        self.weff2 = weff * weff
        self.ds = np.array([b.params.damping / eff for b in banked])
        # same association as the scalar path: (beta * wn) * wn
        self.bs = np.array([b.params.duffing_beta for b in banked]) * wn * wn
        self.net_slots = {
            name: [slots[(name, k)] for k in range(len(instr.networks[name].nodes)) if (name, k) in slots]
            for name in instr.networks
        }
        self._bank_advanced = False
        self.structure_version += 1

    def sync_states(self):
        """Write bank values back into the node state objects."""
        if not self._bank_advanced:
            return
        for i, node in enumerate(self._banked):
            m = node.state.m
            m[0] = float(self.m0[i])
            m[1] = float(self.m1[i])
            m[2] = float(self.m2[i])
            node.state.feed_power_smoothed = float(self.fps[i])
        self._bank_advanced = False

    # -- control-block boundary -------------------------------------------

    def _boundary(self):
        instr = self.instrument
        if self.edits:
            self.sync_states()
            while self.edits:
                fn = self.edits.popleft()
                try:
                    fn(self)
                except ValueError as err:
                    # a queued edit can be invalidated by one ahead of it;
                    # the stream must keep running
                    self.events.append(f"edit rejected: {err}")
            self._dirty = True
        refresh = False
        if instr.registry.version != self._registry_seen:
            self._registry_seen = instr.registry.version
            refresh = True
        if self._dirty:
            self.sync_states()
            self._rebuild()
            self._dirty = False
            refresh = True
        if refresh:
            self._refresh_active()
        if self._detune_entries:
            self._refresh_detuned()
        if self.meters_enabled:
            self._publish_meters()

    def _refresh_active(self):
        self._active = []
        self._detune_entries = []
        live = set()
        for c in self.instrument.registry.ordered():
            live.add(c.id)
            if c.kind.tag == "limit":
                name = c.participants[0].net
                if name not in self.net_slots or not self.net_slots[name]:
                    continue
                entry = (c, None)
            else:
                idx = tuple(self.slots.get((p.net, p.node)) for p in c.participants)
                if any(i is None for i in idx):
                    continue  # a disabled or muted participant skips the coupling
                entry = (c, idx)
                if c.kind.tag == "detune":
                    self._detune_entries.append(entry)
            self._counters.setdefault(c.id, 1)
            self._active.append(entry)
        for cid in [i for i in self._counters if i not in live]:
            del self._counters[cid]

    def _refresh_detuned(self):
        eff = self.instrument.rates.effective_rate
        for c, idx in self._detune_entries:
            kappa = c.kind.params["kappa"]
            for p, i in zip(c.participants, idx):
                node = self.instrument.networks[p.net].nodes[p.node]
                node.state.feed_power_smoothed = float(self.fps[i])
                update_effective_frequency(node.state, node.params, kappa, eff)
                w = TWO_PI * node.state.effective_frequency / eff
                self.weff[i] = w
                self.weff2[i] = w * w

    def _publish_meters(self):
        out = {}
        slot_of = {}
        for key, i in self.slots.items():
            slot_of[i] = key
        for name, idx in sorted(self.net_slots.items()):
            total = 0.0
            for i in idx:
                e = energy_terms(
                    float(self.m0[i]), float(self.m1[i]), float(self.wn2[i]), float(self.mass[i])
                )
                out[f"net.{name}.node.{slot_of[i][1]}.energy"] = e
                total += e
            out[f"net.{name}.energy"] = total
        self._meter_latest = out

    def read_meters(self) -> dict:
        # replaced wholesale at publish, so a reader never sees a half-write
        return self._meter_latest

    # -- edits --------------------------------------------------------------

    def queue_edit(self, fn):
        """Queue a pre-validated edit closure for the next block boundary."""
        if len(self.edits) >= EDIT_QUEUE_LIMIT:
            self.edits.popleft()
            self.dropped_edits += 1
            self.events.append(f"[{self.sample_index}] edit queue full, oldest dropped")
        self.edits.append(fn)

    def mark_dirty(self):
        """Note a structural change made outside the queue (tests, setup)."""
        self._dirty = True

    def flush_edits(self):
        """Force boundary processing now; for setup and idle control traffic."""
        self._boundary()

    # -- energy access -------------------------------------------------------

    def _feed_slot(self, i: int, amount: float, phase_hint):
        """apply_feed against the bank, same arithmetic as the scalar path."""
        if amount == 0.0:
            return
        m0 = float(self.m0[i])
        m1 = float(self.m1[i])
        mass = float(self.mass[i])
        e = energy_terms(m0, m1, float(self.wn2[i]), mass)
        if e > EPS_ENERGY:
            s = math.sqrt(max(0.0, e + amount) / e)
            self.m0[i] = m0 * s
            self.m1[i] = m1 * s
            self.m2[i] = float(self.m2[i]) * s
        elif amount > 0.0:
            ph = phase_hint if phase_hint is not None else 0.0
            w0 = float(self.wn[i])
            denom = 1.0 + 0.5 * w0 * math.sin(2.0 * ph)
            a = math.sqrt(2.0 * amount / (mass * w0 * w0 * denom))
            self.m0[i] = a * math.cos(ph)
            self.m1[i] = -a * w0 * math.sin(ph)
            self.m2[i] = 0.0
        else:
            self.m0[i] = 0.0
            self.m1[i] = 0.0
            self.m2[i] = 0.0
        self._bank_advanced = True
        self.state_version += 1

    def feed_node(self, name: str, k: int, amount: float, phase_hint=None):
        """Excitation seam; feeds to disabled or muted nodes are discarded."""
        i = self.slots.get((name, k))
        if i is not None:
            self._feed_slot(i, amount, phase_hint)

    def node_energy(self, name: str, k: int) -> float:
        i = self.slots.get((name, k))
        if i is None:
            node = self.instrument.networks[name].nodes[k]
            return energy_of(node.state, node.params, self.instrument.rates.effective_rate)
        return energy_terms(
            float(self.m0[i]), float(self.m1[i]), float(self.wn2[i]), float(self.mass[i])
        )

    def node_phase(self, name: str, k: int) -> float:
        """Phase under the x = A cos(phi) convention; silent nodes read 0."""
        i = self.slots.get((name, k))
        if i is None:
            return 0.0
        if self.node_energy(name, k) <= EPS_ENERGY:
            return 0.0
        phi = math.atan2(-float(self.m1[i]) / float(self.weff[i]), float(self.m0[i]))
        return phi % TWO_PI

    def total_energy(self) -> float:
        total = 0.0
        for i in range(len(self.m0)):
            total += energy_terms(
                float(self.m0[i]), float(self.m1[i]), float(self.wn2[i]), float(self.mass[i])
            )
        return total

    # -- the sample loop ------------------------------------------------------

    def _transfer(self):
        """Phases A and B for one output sample."""
        feeds = {}
        fps_updates = []
        for c, idx in self._active:
            left = self._counters[c.id] - 1
            if left > 0:
                self._counters[c.id] = left
                continue
            self._counters[c.id] = c.rate_divisor
            params = c.kind.params
            tag = c.kind.tag
            if tag == "limit":
                idx = self.net_slots[c.participants[0].net]
                energies = [
                    energy_terms(
                        float(self.m0[i]), float(self.m1[i]), float(self.wn2[i]), float(self.mass[i])
                    )
                    for i in idx
                ]
                deltas = limit_deltas(params, c.rate_divisor, energies, sum(energies))
            else:
                energies = [
                    energy_terms(
                        float(self.m0[i]), float(self.m1[i]), float(self.wn2[i]), float(self.mass[i])
                    )
                    for i in idx
                ]
                if tag == "phase":
                    phases = [
                        0.0
                        if e <= EPS_ENERGY
                        else math.atan2(-float(self.m1[i]) / float(self.weff[i]), float(self.m0[i]))
                        % TWO_PI
                        for i, e in zip(idx, energies)
                    ]
                else:
                    phases = None
                deltas = kernel_deltas(tag, params, c.rate_divisor, energies, phases)
            factor = clamp_factor(deltas, energies)
            if factor < 1.0:
                deltas = [d * factor for d in deltas]
            if self.eval_spy is not None:
                self.eval_spy(c.id, tuple(energies), self.state_version)
            for i, d in zip(idx, deltas):
                feeds[i] = feeds.get(i, 0.0) + d
            if tag == "detune":
                fps_updates.extend(zip(idx, deltas))
        for i, amount in feeds.items():
            self._feed_slot(i, amount, None)
        for i, d in fps_updates:
            self.fps[i] = smooth_feed_power(float(self.fps[i]), d)
        if fps_updates:
            self._bank_advanced = True

    def _step_bank(self):
        """Phase C: the scalar update's expression tree, elementwise."""
        with np.errstate(over="ignore", invalid="ignore"):
            a = -(self.ds * self.m1)
            a -= self.weff2 * self.m0
            a -= self.bs * (self.m0 * self.m0 * self.m0)
            self.m2 = a
            self.m1 += a
            self.m0 += self.m1
        self._bank_advanced = True
        self.state_version += 1
        if not (np.isfinite(self.m0).all() and np.isfinite(self.m1).all()):
            self._mute_overflowed()

    def _mute_overflowed(self):
        bad = np.nonzero(~(np.isfinite(self.m0) & np.isfinite(self.m1)))[0]
        for i in bad:
            self.m0[i] = 0.0
            self.m1[i] = 0.0
            self.m2[i] = 0.0
        by_slot = {v: k for k, v in self.slots.items()}
        for i in bad:
            name, k = by_slot[int(i)]
            self._muted.add((name, k))
            node = self.instrument.networks[name].nodes[k]
            for j in range(len(node.state.m)):
                node.state.m[j] = 0.0
            self.events.append(f"[{self.sample_index}] overflow: {name} node {k} muted")
        self._dirty = True

    def tick_sample(self, inner_hook=None):
        """Advance one output sample; deterministic given the same inputs."""
        if self.sample_index % self.instrument.rates.control_block == 0:
            self._boundary()
        for o in range(self.instrument.rates.oversample):
            if o == 0 and self._active:
                self._transfer()
            self._step_bank()
            if inner_hook is not None:
                inner_hook()
        self.sample_index += 1

    def run(self, n_samples: int, inner_hook=None):
        for _ in range(n_samples):
            self.tick_sample(inner_hook)
        self.sync_states()
