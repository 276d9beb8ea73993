"""Energy-transfer functions.

ETFs are the only interaction mechanism in the system: each one maps a
frozen snapshot of participant states to signed energy deltas, evaluated
every rate_divisor output samples.  Per-window amounts carry the window
length K as a factor so that changing the evaluation rate does not retune
the instrument.

Kernels, by template name:
    linear    q = k*K*(Ea - Eb)
    phase     q = k*K*(Ea - Eb)*cos(phi_a - phi_b)
    detune    as linear; recipients' feed_power_smoothed tracks |q|
    saturate  q = k*K*s*tanh((Ea - Eb)/s)
    oneway    q = k*K*max(0, Ea - Eb)
    limit     proportional drain of a whole network down to e_max

A pair coupling is one ordered-pair evaluation; groups of three or more
apply the pair kernel over every ordered pair and sum per participant.
"""
import math
from dataclasses import dataclass, field

from .modes import EnergyDelta, energy_of, estimate_freq_phase

# template catalog, also the UI menu; maps name -> required params
TEMPLATES = {
    "linear": ("k",),
    "phase": ("k",),
    "detune": ("k", "kappa"),
    "saturate": ("k", "saturation_scale"),
    "oneway": ("k",),
    "limit": ("e_max",),
}

SMOOTH_COEFF = 0.99  # one-pole coefficient per window for detune feed power


class ArityMismatch(ValueError):
    pass


class MissingMacroState(ValueError):
    pass


@dataclass
class EtfKind:
    tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in TEMPLATES:
            raise ValueError(f"unknown ETF template {self.tag!r}")
        if self.params.get("k", 0.0) < 0:
            raise ValueError("k must be nonnegative")
        if "saturation_scale" in self.params and self.params["saturation_scale"] <= 0:
            raise ValueError("saturation_scale must be positive")
        if "e_max" in self.params and self.params["e_max"] <= 0:
            raise ValueError("e_max must be positive")


@dataclass
class NodeRef:
    """Addresses one node, or a whole network when node is None."""

    net: str
    node: int | None = None


@dataclass
class Coupling:
    id: int
    kind: EtfKind
    participants: list
    rate_divisor: int = 1
    location: list | None = None

    def __post_init__(self):
        if self.rate_divisor < 1:
            raise ValueError("rate_divisor must be >= 1")
        if len(set((p.net, p.node) for p in self.participants)) != len(
            self.participants
        ):
            raise ValueError("participants must be distinct")


def pair_kernel(tag, params, window, ea, eb, phi_a=0.0, phi_b=0.0):
    """Per-window transfer from participant a to b, plain floats."""
    k = params.get("k", 0.0) * window
    if tag == "phase":
        return k * (ea - eb) * math.cos(phi_a - phi_b)
    if tag == "saturate":
        s = params["saturation_scale"]
        return k * s * math.tanh((ea - eb) / s)
    if tag == "oneway":
        return k * max(0.0, ea - eb)
    # linear and detune share the diffusive law
    return k * (ea - eb)


def limit_deltas(params, window, energies, total):
    """Proportional drain down to e_max; dissipative by design."""
    e_max = params["e_max"]
    if total <= e_max or total <= 0.0:
        return [0.0] * len(energies)
    drain = total - e_max
    return [-drain * e / total for e in energies]


def smooth_feed_power(fps: float, q: float) -> float:
    return SMOOTH_COEFF * fps + (1.0 - SMOOTH_COEFF) * abs(q)


def kernel_deltas(tag, params, window, energies, phases=None):
    """Pair kernel over every ordered pair, summed per participant.

    Plain-float core shared by eval_etf and the sample loop; two
    participants reduce to one kernel call so the pair case stays exactly
    antisymmetric.
    """
    n = len(energies)
    if phases is None:
        phases = [0.0] * n
    if n == 2:
        q = pair_kernel(tag, params, window, energies[0], energies[1], phases[0], phases[1])
        return [-q, q]
    deltas = [0.0] * n
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            q = pair_kernel(tag, params, window, energies[i], energies[j], phases[i], phases[j])
            deltas[i] -= q
            deltas[j] += q
    return deltas


def eval_etf(coupling: Coupling, states, effective_rate, macro_total=None):
    """Evaluate one coupling against frozen states.

    states is a list of (ModeState, ModeParams) aligned with the coupling's
    participants (for "limit": all nodes of the named network).  Returns one
    EnergyDelta per state.  Pure; the detune feed-power bookkeeping is the
    caller's job (see smooth_feed_power).
    """
    tag = coupling.kind.tag
    params = coupling.kind.params
    window = coupling.rate_divisor

    if tag == "limit":
        if macro_total is None:
            raise MissingMacroState("limit coupling needs the network total")
        energies = [energy_of(s, p, effective_rate) for s, p in states]
        return [
            EnergyDelta(d) for d in limit_deltas(params, window, energies, macro_total)
        ]

    if len(coupling.participants) < 2:
        raise ArityMismatch("pair kernels need at least two participants")
    if len(states) != len(coupling.participants):
        raise ArityMismatch(
            f"{len(coupling.participants)} participants, {len(states)} states"
        )

    energies = [energy_of(s, p, effective_rate) for s, p in states]
    if tag == "phase":
        phases = [estimate_freq_phase(s, p, effective_rate)[1] for s, p in states]
    else:
        phases = None
    return [EnergyDelta(d) for d in kernel_deltas(tag, params, window, energies, phases)]


def clamp_factor(amounts, energies) -> float:
    """Common rescale factor so no donor is drawn below zero."""
    factor = 1.0
    for d, e in zip(amounts, energies):
        if d < 0.0 and e + d < 0.0:
            factor = min(factor, e / -d)
    return factor


def clamp_transfer(deltas, energies):
    """Rescale a coupling's deltas so no donor is drawn below zero.

    One common factor keeps the transfer conservative: the worst-overdrawn
    donor lands exactly at zero and every other delta shrinks with it.
    """
    factor = clamp_factor([d.amount for d in deltas], energies)
    if factor >= 1.0:
        return deltas
    return [EnergyDelta(d.amount * factor, d.phase_hint) for d in deltas]
