"""Single normal mode of vibration.

A node is a damped oscillator in per-sample normalized units, advanced by a
semi-implicit Euler cascade: the top derivative takes the force line, then
each derivative integrates into the next-lower one.  Everything a node
exchanges with the rest of the system is abstract energy: `energy_of` maps
state to an energy value, `apply_feed` folds a signed energy delta back into
the state.

The energy mapping is the conserved quadratic of the undamped update map,
0.5*m*(M1^2 + w*M0^2 - w*M0*M1) with w = omega0^2.  For the plain oscillator
it agrees with the textbook energy up to O(omega0) sampling skew, and under
the cascade it is constant to machine precision, which is what makes exact
conservation accounting across transfers possible at all.
"""
import math
from dataclasses import dataclass, field
from enum import IntEnum

TWO_PI = 2.0 * math.pi

# below this a node counts as silent; far under audio-relevant magnitudes
EPS_ENERGY = 1e-30


class Level(IntEnum):
    """Complexity ladder: linear, phase-aware, feed-detuned linear, nonlinear."""

    L1 = 1
    L2 = 2
    L3 = 3
    L4 = 4


class NumericOverflow(RuntimeError):
    """A state entry left the finite range; the node has been zeroed."""


@dataclass
class ModeParams:
    """Static node parameters.

    Attributes:
        mass: abstract scaling, unitless, > 0.
        nominal_frequency: Hz.
        damping: per-second decay coefficient, >= 0.
        duffing_beta: cubic stiffness coefficient, nonzero only at L4.
        level: complexity level of the node.
    """

    mass: float = 1.0
    nominal_frequency: float = 440.0
    damping: float = 0.0
    duffing_beta: float = 0.0
    level: Level = Level.L1

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")
        if self.duffing_beta != 0.0 and self.level != Level.L4:
            raise ValueError("duffing_beta requires level L4")


@dataclass
class ModeState:
    """Dynamic node state.

    m holds M0 (displacement), M1 (first difference), ... up to order+1
    entries.  effective_frequency tracks the detuned frequency at L3/L4 and
    is identically the nominal at L1/L2.
    """

    m: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    order: int = 2
    effective_frequency: float = 0.0
    phase: float = 0.0
    feed_accumulator: float = 0.0
    feed_power_smoothed: float = 0.0


@dataclass
class EnergyDelta:
    """Signed energy transfer; phase_hint seeds a silent node."""

    amount: float
    phase_hint: float | None = None


def make_state(params: ModeParams, order: int = 2) -> ModeState:
    if order < 2:
        raise ValueError("order must be at least 2")
    return ModeState(
        m=[0.0] * (order + 1),
        order=order,
        effective_frequency=params.nominal_frequency,
    )


def omega0(params: ModeParams, effective_rate: float) -> float:
    return TWO_PI * params.nominal_frequency / effective_rate


def validate_params(params: ModeParams, effective_rate: float) -> None:
    """Configuration-time checks that need to know the rate.

    The undamped recurrence is bounded only for omega0 < 2, i.e.
    f0 < rate/pi; L1-L3 nodes past that are rejected outright.  L4 stability
    is amplitude-dependent, so it is only held to the Nyquist bound and left
    to the overflow guard at runtime.
    """
    f0 = params.nominal_frequency
    if not 0.0 < f0 < effective_rate / 2.0:
        raise ValueError(
            f"nominal_frequency {f0} outside (0, {effective_rate / 2.0})"
        )
    if params.level != Level.L4 and f0 >= effective_rate / math.pi:
        raise ValueError(
            f"nominal_frequency {f0} at or past the stability bound "
            f"{effective_rate / math.pi:.1f}"
        )


def step_node(state: ModeState, params: ModeParams, effective_rate: float):
    """One per-sample update.  Mutates and returns state."""
    w0 = TWO_PI * state.effective_frequency / effective_rate
    w = w0 * w0
    ds = params.damping / effective_rate
    wn = omega0(params, effective_rate)
    bs = params.duffing_beta * wn * wn
    m = state.m
    n = state.order
    m0 = m[0]
    m[n] = -ds * m[1] - w * m0 - bs * (m0 * m0 * m0)
    for i in range(n - 1, -1, -1):
        m[i] = m[i] + m[i + 1]
    if not all(map(math.isfinite, m)):
        for i in range(len(m)):
            m[i] = 0.0
        raise NumericOverflow(f"node at {params.nominal_frequency} Hz diverged")
    return state


def energy_terms(m0: float, m1: float, w: float, mass: float) -> float:
    """The quadratic itself, on plain floats; w is omega0 squared."""
    return 0.5 * mass * (m1 * m1 + w * m0 * m0 - w * m0 * m1)


def energy_of(state: ModeState, params: ModeParams, effective_rate: float) -> float:
    w0 = omega0(params, effective_rate)
    return energy_terms(state.m[0], state.m[1], w0 * w0, params.mass)


def apply_feed(
    state: ModeState,
    params: ModeParams,
    delta: EnergyDelta,
    effective_rate: float,
):
    """Fold an energy delta into the state.

    A live node is scaled uniformly, which changes its energy by exactly the
    delta (clamped at zero) and preserves phase.  A silent node is seeded at
    the hinted phase with amplitude chosen so energy_of equals the delta.
    """
    if delta.amount == 0.0:
        return state
    e = energy_of(state, params, effective_rate)
    m = state.m
    if e > EPS_ENERGY:
        s = math.sqrt(max(0.0, e + delta.amount) / e)
        for i in range(len(m)):
            m[i] *= s
    elif delta.amount > 0.0:
        ph = delta.phase_hint if delta.phase_hint is not None else 0.0
        w0 = omega0(params, effective_rate)
        # amplitude from the quadratic form at this phase
        denom = 1.0 + 0.5 * w0 * math.sin(2.0 * ph)
        a = math.sqrt(2.0 * delta.amount / (params.mass * w0 * w0 * denom))
        for i in range(len(m)):
            m[i] = 0.0
        m[0] = a * math.cos(ph)
        m[1] = -a * w0 * math.sin(ph)
    else:
        for i in range(len(m)):
            m[i] = 0.0
    return state


def estimate_freq_phase(
    state: ModeState, params: ModeParams, effective_rate: float
):
    """(f, phi) under the x = A*cos(phi) convention, phi in [0, 2*pi).

    Silent nodes have no phase; (f, 0.0) by convention.
    """
    f = state.effective_frequency
    if energy_of(state, params, effective_rate) <= EPS_ENERGY:
        return f, 0.0
    w_eff = TWO_PI * f / effective_rate
    phi = math.atan2(-state.m[1] / w_eff, state.m[0])
    return f, phi % TWO_PI


def update_effective_frequency(
    state: ModeState, params: ModeParams, kappa: float, effective_rate: float
):
    """L3/L4 detune law: nominal * (1 + kappa * smoothed feed power)."""
    f = params.nominal_frequency * (1.0 + kappa * state.feed_power_smoothed)
    nyquist = effective_rate / 2.0
    if f >= nyquist:
        f = math.nextafter(nyquist, 0.0)
    if f < 0.0:
        f = 0.0
    state.effective_frequency = f
    return state
