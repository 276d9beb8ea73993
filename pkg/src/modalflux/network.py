"""Networks of modal nodes.

A network owns a list of nodes plus the macro parameters that generate
them: a fundamental, a total mass, a damping law, and a template that fixes
the frequency-ratio table and mode shapes.  Macro edits are translated into
per-node parameter changes with state vectors left untouched; node
frequencies are stored as ratios of the fundamental so retuning preserves
the spectrum's structure exactly.

Spatial behavior comes from the template's mode shapes psi_k(x), x in
[0, 1]: `displacement_at` sums shape-weighted displacements and `inject_at`
splits an energy delta by normalized squared shape weight.  Nodes whose
nominal frequency lands outside the stable region for their level are
disabled rather than rejected, so an instrument can be retuned freely.

Attributes of Network:
    name: identifier used in parameter paths and coupling references.
    template: one of string, bar, membrane, cymbal, custom.
    nodes: list of NetNode (params, state, enabled).
    fundamental: Hz; node k nominal = fundamental * freq_ratios[k].
    total_mass: sum of node masses.
    global_damping: per-second base of the damping ramp 1 + 0.1*k.
    stretch_b: inharmonicity coefficient, used by the string template.
    freq_ratios: ascending ratio table, one entry per node.
    effective_rate: sample_rate * oversample, fixes the stability bound.
    default_couplings: (EtfKind, [NodeRef, NodeRef]) pairs a template asks
        for (cymbal); materialized when an instrument is assembled.
    weight_cache: injection weights per registered location, cleared on
        any parameter edit.
"""
import math
from dataclasses import dataclass, field

from scipy import optimize, special

from .etf import EtfKind, NodeRef
from .modes import Level, ModeParams, energy_of, make_state

TEMPLATE_NAMES = ("string", "bar", "membrane", "cymbal", "custom")


class InvalidTemplateParam(ValueError):
    pass


class UnknownParam(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class NoSpatialModel(ValueError):
    pass


class AllShapesZero(ValueError):
    pass


@dataclass
class NetNode:
    params: ModeParams
    state: object
    enabled: bool = True


@dataclass
class NetworkMacroState:
    total_energy: float
    fundamental: float
    node_count: int


@dataclass
class Network:
    name: str
    template: str
    nodes: list
    fundamental: float
    total_mass: float
    global_damping: float
    stretch_b: float
    freq_ratios: list
    effective_rate: float
    default_couplings: list = field(default_factory=list)
    weight_cache: dict = field(default_factory=dict)
    shape_fn: object = field(default=None, repr=False)

    def shape(self, k: int, x: float) -> float:
        if self.shape_fn is None:
            raise NoSpatialModel(f"network {self.name!r} has no mode shapes")
        return self.shape_fn(k, x)

    @property
    def has_shapes(self) -> bool:
        return self.shape_fn is not None


def _stable_limit(level, rate):
    # L1-L3 must stay inside omega0 < 2; L4 is only held below Nyquist
    return rate / 2.0 if level == Level.L4 else rate / math.pi


def _refresh_enabled(net: Network):
    for node in net.nodes:
        node.enabled = node.params.nominal_frequency < _stable_limit(
            node.params.level, net.effective_rate
        )


def _beam_roots(n):
    """First n roots of cos(x)*cosh(x) = 1, skipping the rigid-body zero."""
    roots = []
    for k in range(1, n + 1):
        center = (2 * k + 1) * math.pi / 2
        if center > 30.0:
            # sech is below root tolerance here; asymptotic root
            roots.append(center)
            continue
        roots.append(
            optimize.brentq(
                lambda x: math.cos(x) - 1.0 / math.cosh(x),
                center - 0.7,
                center + 0.7,
                xtol=1e-13,
            )
        )
    return roots


def _beam_shape_fn(betas):
    """Free-free beam shapes in a cancellation-safe exponential split."""
    coeffs = []
    for bl in betas:
        if bl > 300.0:
            sigma, one_minus = 1.0, 2.0 * (math.cos(bl) - math.sin(bl)) * math.exp(-bl)
        else:
            den = math.sinh(bl) - math.sin(bl)
            sigma = (math.cosh(bl) - math.cos(bl)) / den
            one_minus = (math.cos(bl) - math.sin(bl) - math.exp(-bl)) / den
        coeffs.append((bl, sigma, one_minus))

    def shape(k, x):
        bl, sigma, one_minus = coeffs[k]
        t = bl * x
        return (
            math.cos(t)
            - sigma * math.sin(t)
            + math.exp(-t) * (1.0 + sigma) / 2.0
            + math.exp(min(t, 700.0)) * one_minus / 2.0
        )

    return shape


def _string_shape(k, x):
    # reduce by the period so mode nodes come out exactly zero
    t = (k + 1) * x % 2.0
    if t == 0.0 or t == 1.0:
        return 0.0
    return math.sin(math.pi * t)


def _template_tables(kind, n, stretch_b):
    """(freq_ratios, shape_fn) for a template."""
    if kind == "string":
        ratios = [
            (k + 1) * math.sqrt(1.0 + stretch_b * (k + 1) ** 2) for k in range(n)
        ]
        return ratios, _string_shape
    if kind == "bar":
        betas = _beam_roots(n)
        ratios = [(b / betas[0]) ** 2 for b in betas]
        return ratios, _beam_shape_fn(betas)
    if kind in ("membrane", "cymbal"):
        zeros = special.jn_zeros(0, n)
        ratios = [z / zeros[0] for z in zeros]
        return ratios, lambda k, x: float(special.j0(zeros[k] * x))
    # custom: unit ratios, no spatial model
    return [1.0] * n, None


def build_template(
    name,
    kind,
    n_modes: int,
    fundamental: float,
    total_mass: float = 1.0,
    global_damping: float = 0.0,
    stretch_b: float = 0.0,
    effective_rate: float = 44100.0,
) -> Network:
    if kind not in TEMPLATE_NAMES:
        raise InvalidTemplateParam(f"unknown template {kind!r}")
    if n_modes < 1:
        raise InvalidTemplateParam("n_modes must be >= 1")
    if fundamental <= 0:
        raise InvalidTemplateParam("fundamental must be positive")
    if total_mass <= 0:
        raise InvalidTemplateParam("total_mass must be positive")
    if global_damping < 0:
        raise InvalidTemplateParam("global_damping must be nonnegative")
    if stretch_b < 0:
        raise InvalidTemplateParam("stretch B must be nonnegative")

    ratios, shape_fn = _template_tables(kind, n_modes, stretch_b)
    nodes = []
    for k, ratio in enumerate(ratios):
        params = ModeParams(
            mass=total_mass / n_modes,
            nominal_frequency=fundamental * ratio,
            damping=global_damping * (1.0 + 0.1 * k),
        )
        nodes.append(NetNode(params=params, state=make_state(params)))

    net = Network(
        name=name,
        template=kind,
        nodes=nodes,
        fundamental=fundamental,
        total_mass=total_mass,
        global_damping=global_damping,
        stretch_b=stretch_b,
        freq_ratios=ratios,
        effective_rate=effective_rate,
        shape_fn=shape_fn,
    )
    if kind == "cymbal":
        net.default_couplings = [
            (
                EtfKind("saturate", {"k": 0.001, "saturation_scale": 0.05}),
                [NodeRef(name, i), NodeRef(name, i + 1)],
            )
            for i in range(n_modes - 1)
        ]
    _refresh_enabled(net)
    return net


def _retune(net: Network):
    for k, node in enumerate(net.nodes):
        f = net.fundamental * net.freq_ratios[k]
        node.params.nominal_frequency = f
        # L3/L4 detune is recomputed at the next control block anyway
        node.state.effective_frequency = f


def set_macro_param(net: Network, name: str, value: float):
    """Apply a macro edit, propagating to node parameters, state untouched."""
    if name == "f0":
        if value <= 0:
            raise OutOfRange("f0 must be positive")
        net.fundamental = value
        _retune(net)
    elif name == "mass":
        if value <= 0:
            raise OutOfRange("mass must be positive")
        scale = value / net.total_mass
        for node in net.nodes:
            node.params.mass *= scale
        net.total_mass = value
    elif name == "damp":
        if value < 0:
            raise OutOfRange("damp must be nonnegative")
        net.global_damping = value
        for k, node in enumerate(net.nodes):
            node.params.damping = value * (1.0 + 0.1 * k)
    elif name == "B":
        if value < 0:
            raise OutOfRange("B must be nonnegative")
        net.stretch_b = value
        if net.template == "string":
            net.freq_ratios, _ = _template_tables("string", len(net.nodes), value)
            _retune(net)
    else:
        raise UnknownParam(f"no macro parameter {name!r}")
    net.weight_cache.clear()
    _refresh_enabled(net)
    return net


def set_node_param(net: Network, index: int, name: str, value):
    """Per-node override.  f0 edits update the node's ratio entry."""
    node = net.nodes[index]
    if name == "f0":
        if value <= 0:
            raise OutOfRange("f0 must be positive")
        # keep the requested Hz exact; the ratio entry only guides later
        # macro retunes
        net.freq_ratios[index] = value / net.fundamental
        node.params.nominal_frequency = value
        node.state.effective_frequency = value
    elif name == "mass":
        if value <= 0:
            raise OutOfRange("mass must be positive")
        node.params.mass = value
        net.total_mass = sum(n.params.mass for n in net.nodes)
    elif name == "damp":
        if value < 0:
            raise OutOfRange("damp must be nonnegative")
        node.params.damping = value
    elif name == "beta":
        if value != 0.0 and node.params.level != Level.L4:
            raise OutOfRange("beta requires level L4")
        node.params.duffing_beta = value
    elif name == "level":
        level = Level[value] if isinstance(value, str) else Level(value)
        node.params.level = level
        if level != Level.L4:
            node.params.duffing_beta = 0.0
    else:
        raise UnknownParam(f"no node parameter {name!r}")
    net.weight_cache.clear()
    _refresh_enabled(net)
    return net


def set_effective_rate(net: Network, effective_rate: float):
    """Rebind the network to a new rate; the stability set may change."""
    net.effective_rate = effective_rate
    net.weight_cache.clear()
    _refresh_enabled(net)
    return net


def resize_network(net: Network, n_modes: int):
    """Change the node count; a system-state edit, not a playable one.

    The ratio table is regenerated from the template (hand-edited ratios do
    not survive), surviving node states are kept as-is, new nodes start at
    rest, and masses are redistributed as total_mass / n.
    """
    if n_modes < 1:
        raise InvalidTemplateParam("n_modes must be >= 1")
    ratios, shape_fn = _template_tables(net.template, n_modes, net.stretch_b)
    old = net.nodes
    nodes = []
    for k, ratio in enumerate(ratios):
        params = ModeParams(
            mass=net.total_mass / n_modes,
            nominal_frequency=net.fundamental * ratio,
            damping=net.global_damping * (1.0 + 0.1 * k),
        )
        if k < len(old):
            state = old[k].state
            state.effective_frequency = params.nominal_frequency
            nodes.append(NetNode(params=params, state=state))
        else:
            nodes.append(NetNode(params=params, state=make_state(params)))
    net.nodes = nodes
    net.freq_ratios = ratios
    net.shape_fn = shape_fn
    net.weight_cache.clear()
    _refresh_enabled(net)
    return net


def displacement_at(net: Network, x: float) -> float:
    if not net.has_shapes:
        raise NoSpatialModel(f"network {net.name!r} has no mode shapes")
    total = 0.0
    for k, node in enumerate(net.nodes):
        if node.enabled:
            total += net.shape(k, x) * node.state.m[0]
    return total


def injection_weights(net: Network, x: float):
    """Normalized squared-shape weights over enabled nodes, cached per x."""
    if not net.has_shapes:
        raise NoSpatialModel(f"network {net.name!r} has no mode shapes")
    cached = net.weight_cache.get(x)
    if cached is not None:
        return cached
    raw = [
        net.shape(k, x) ** 2 if node.enabled else 0.0
        for k, node in enumerate(net.nodes)
    ]
    total = sum(raw)
    if total <= 0.0:
        raise AllShapesZero(f"x = {x} is a node of every enabled mode")
    weights = tuple(w / total for w in raw)
    net.weight_cache[x] = weights
    return weights


def inject_at(net: Network, x: float, total):
    """Split an energy delta across nodes by squared-shape weight."""
    weights = injection_weights(net, x)
    from .modes import EnergyDelta

    return [EnergyDelta(total.amount * w, total.phase_hint) for w in weights]


def macro_state(net: Network) -> NetworkMacroState:
    total = 0.0
    for node in net.nodes:
        if node.enabled:
            total += energy_of(node.state, node.params, net.effective_rate)
    return NetworkMacroState(
        total_energy=total,
        fundamental=net.fundamental,
        node_count=len(net.nodes),
    )
