"""Dotted parameter paths over a live instrument.

One flat namespace covers everything a snapshot or a remote client can
touch:

    net.<name>.{f0,mass,damp,B}
    net.<name>.node.<k>.{f0,mass,damp,beta,level}
    net.<name>.{template,modes}
    coupling.<id>.{k,kappa,saturation_scale,e_max,rate_divisor}
    rates.{sample_rate,oversample,control_block}

Paths are partitioned into playable (edits preserve node state) and
system (edits may reconfigure structures).  Writes never touch the
instrument directly; make_edit validates up front and returns a closure
for the scheduler's boundary queue.
"""
import dataclasses

from .modes import Level
from . import network as net_mod

# keys that survive a performance edit with state continuity
PLAYABLE_MACRO = ("f0", "mass", "damp", "B")
PLAYABLE_NODE = ("f0", "mass", "damp", "beta")
PLAYABLE_COUPLING = ("k", "kappa", "saturation_scale", "e_max")

SYSTEM_NET = ("template", "modes")
SYSTEM_NODE = ("level",)
SYSTEM_COUPLING = ("rate_divisor",)
SYSTEM_RATES = ("sample_rate", "oversample", "control_block")

TEMPLATE_NAMES = net_mod.TEMPLATE_NAMES


class BadPath(ValueError):
    pass


class BadValue(ValueError):
    pass


def _net(instrument, name):
    net = instrument.networks.get(name)
    if net is None:
        raise BadPath(f"no network {name!r}")
    return net


def _node(instrument, name, idx):
    net = _net(instrument, name)
    if not 0 <= idx < len(net.nodes):
        raise BadPath(f"no node {idx} in {name!r}")
    return net.nodes[idx]


def _coupling(instrument, cid):
    c = instrument.registry.couplings.get(cid)
    if c is None:
        raise BadPath(f"no coupling {cid}")
    return c


def _split(path):
    parts = path.split(".")
    if parts[0] == "net":
        if len(parts) == 3:
            return ("net_macro", parts[1], parts[2])
        if len(parts) == 5 and parts[2] == "node":
            try:
                idx = int(parts[3])
            except ValueError:
                raise BadPath(f"bad node index in {path!r}") from None
            return ("net_node", parts[1], idx, parts[4])
    elif parts[0] == "coupling" and len(parts) == 3:
        try:
            cid = int(parts[1])
        except ValueError:
            raise BadPath(f"bad coupling id in {path!r}") from None
        return ("coupling", cid, parts[2])
    elif parts[0] == "rates" and len(parts) == 2:
        return ("rates", parts[1])
    raise BadPath(f"unresolvable path {path!r}")


def classify(path) -> str:
    """'playable' or 'system'; raises BadPath for a shape no parameter has."""
    kind = _split(path)
    if kind[0] == "net_macro":
        key = kind[2]
        if key in PLAYABLE_MACRO:
            return "playable"
        if key in SYSTEM_NET:
            return "system"
    elif kind[0] == "net_node":
        key = kind[3]
        if key in PLAYABLE_NODE:
            return "playable"
        if key in SYSTEM_NODE:
            return "system"
    elif kind[0] == "coupling":
        if kind[2] in PLAYABLE_COUPLING:
            return "playable"
        if kind[2] in SYSTEM_COUPLING:
            return "system"
    elif kind[0] == "rates":
        if kind[1] in SYSTEM_RATES:
            return "system"
    raise BadPath(f"no parameter {path!r}")


def list_paths(instrument):
    """Every exposed path, sorted; each resolves via get_value."""
    out = []
    for name in instrument.networks:
        for key in PLAYABLE_MACRO + SYSTEM_NET:
            out.append(f"net.{name}.{key}")
        for k in range(len(instrument.networks[name].nodes)):
            for key in PLAYABLE_NODE + SYSTEM_NODE:
                out.append(f"net.{name}.node.{k}.{key}")
    for cid, c in instrument.registry.couplings.items():
        for key in PLAYABLE_COUPLING:
            if key in c.kind.params:
                out.append(f"coupling.{cid}.{key}")
        out.append(f"coupling.{cid}.rate_divisor")
    for key in SYSTEM_RATES:
        out.append(f"rates.{key}")
    return sorted(out)


def get_value(instrument, path):
    kind = _split(path)
    if kind[0] == "net_macro":
        net, key = _net(instrument, kind[1]), kind[2]
        if key == "f0":
            return net.fundamental
        if key == "mass":
            return net.total_mass
        if key == "damp":
            return net.global_damping
        if key == "B":
            return net.stretch_b
        if key == "template":
            return net.template
        if key == "modes":
            return len(net.nodes)
    elif kind[0] == "net_node":
        node, key = _node(instrument, kind[1], kind[2]), kind[3]
        if key == "f0":
            return node.params.nominal_frequency
        if key == "mass":
            return node.params.mass
        if key == "damp":
            return node.params.damping
        if key == "beta":
            return node.params.duffing_beta
        if key == "level":
            return int(node.params.level)
    elif kind[0] == "coupling":
        c, key = _coupling(instrument, kind[1]), kind[2]
        if key in PLAYABLE_COUPLING:
            if key not in c.kind.params:
                raise BadPath(f"coupling {kind[1]} has no {key!r}")
            return c.kind.params[key]
        if key == "rate_divisor":
            return c.rate_divisor
    elif kind[0] == "rates":
        if kind[1] in SYSTEM_RATES:
            return getattr(instrument.rates, kind[1])
    raise BadPath(f"no parameter {path!r}")


def _check_number(path, value, positive=False, nonneg=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise BadValue(f"{path}: not a number: {value!r}") from None
    if positive and v <= 0:
        raise BadValue(f"{path}: must be positive")
    if nonneg and v < 0:
        raise BadValue(f"{path}: must be nonnegative")
    return v


def _check_int(path, value, minimum=1):
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise BadValue(f"{path}: not an integer: {value!r}") from None
    if v < minimum:
        raise BadValue(f"{path}: must be >= {minimum}")
    return v


def make_edit(instrument, path, value):
    """Validate now, apply later.

    Returns a closure for Scheduler.queue_edit; it lands at the next
    control-block boundary.  Target existence and value ranges are
    checked here so the caller can reply before queueing.
    """
    kind = _split(path)
    classify(path)  # reject paths with no parameter behind them
    # closures re-resolve by name/id at apply time: an edit queued ahead of
    # this one may have swapped the object out from under a captured ref
    if kind[0] == "net_macro":
        name, key = kind[1], kind[2]
        _net(instrument, name)
        if key in ("f0", "mass"):
            v = _check_number(path, value, positive=True)
        elif key in ("damp", "B"):
            v = _check_number(path, value, nonneg=True)
        elif key == "modes":
            v = _check_int(path, value, minimum=1)
            return lambda sched: net_mod.resize_network(_net(sched.instrument, name), v)
        else:  # template
            if value not in TEMPLATE_NAMES:
                raise BadValue(f"{path}: unknown template {value!r}")
            return lambda sched: _swap_template(sched.instrument, name, value)
        return lambda sched: net_mod.set_macro_param(_net(sched.instrument, name), key, v)
    if kind[0] == "net_node":
        name, idx, key = kind[1], kind[2], kind[3]
        node = _node(instrument, name, idx)
        if key in ("f0", "mass"):
            v = _check_number(path, value, positive=True)
        elif key == "damp":
            v = _check_number(path, value, nonneg=True)
        elif key == "beta":
            v = _check_number(path, value)
            if v != 0.0 and node.params.level != Level.L4:
                raise BadValue(f"{path}: beta requires level 4")
        else:  # level
            try:
                v = Level(_check_int(path, value))
            except ValueError:
                raise BadValue(f"{path}: level must be 1..4") from None

        def apply_node(sched):
            net = _net(sched.instrument, name)
            if not 0 <= idx < len(net.nodes):
                raise ValueError(f"node {idx} gone from {name!r}")
            net_mod.set_node_param(net, idx, key, v)

        return apply_node
    if kind[0] == "coupling":
        cid, key = kind[1], kind[2]
        c = _coupling(instrument, cid)
        if key == "rate_divisor":
            v = _check_int(path, value, minimum=1)
        elif key not in c.kind.params:
            raise BadPath(f"coupling {cid} has no {key!r}")
        elif key in ("saturation_scale", "e_max"):
            v = _check_number(path, value, positive=True)
        elif key == "k":
            v = _check_number(path, value, nonneg=True)
        else:
            v = _check_number(path, value)

        def apply_coupling(sched):
            live = _coupling(sched.instrument, cid)
            if key == "rate_divisor":
                live.rate_divisor = v
                sched.instrument.registry.version += 1
            else:
                live.kind.params[key] = v

        return apply_coupling
    # rates
    key = kind[1]
    if key not in SYSTEM_RATES:
        raise BadPath(f"no parameter {path!r}")
    v = _check_int(path, value, minimum=1)

    def apply_rates(sched):
        instr = sched.instrument
        instr.rates = dataclasses.replace(instr.rates, **{key: v})
        for net in instr.networks.values():
            net_mod.set_effective_rate(net, instr.rates.effective_rate)

    return apply_rates


def _swap_template(instrument, name, template):
    old = instrument.networks[name]
    fresh = net_mod.build_template(
        name,
        template,
        len(old.nodes),
        old.fundamental,
        total_mass=old.total_mass,
        global_damping=old.global_damping,
        stretch_b=old.stretch_b if template == "string" else 0.0,
        effective_rate=old.effective_rate,
    )
    instrument.networks[name] = fresh
