"""Instrument files and snapshots: plain text in, plain text out.

Grammar (format_version 1), line oriented, UTF-8, `#` starts a comment:

    format_version = 1

    [rates]
    sample_rate = 44100        # oversample, control_block likewise
    [network <name>]
    template = string          # string | bar | membrane | cymbal | custom
    modes = 6
    f0 = 110                   # network fundamental, Hz
    mass = 1                   # total mass
    damp = 0                   # global damping
    B = 0                      # string stretch
    node.<k>.f0 = 2.5r         # per-node overrides, sparse
    [coupling <id>]
    kind = linear
    nodes = s.0, s.1           # node refs; a bare net name for `limit`
    k = 0.1                    # kappa / saturation_scale / e_max as needed
    [pickup]                   # one or two sections
    mode = location            # or weights
    [snapshot <name>]
    scope = network            # window | network | instrument
    target = s
    net.s.f0 = 110             # captured playable values, canonical Hz

Node frequency values take one of three forms: plain (or `h` suffixed)
absolute Hz, `r` for a ratio of the network fundamental, `d` for a
deviation in Hz from the harmonic partial (k+1)*f0.  Files round-trip:
parsing canonical output reproduces the same structure, and values keep
the representation they were written in.
"""
import io
from dataclasses import dataclass, field

from .engine import Pickup
from . import network as net_mod
from . import paths
from .scheduler import RateConfig, add_coupling, assemble
from .etf import TEMPLATES, EtfKind, NodeRef

FORMAT_VERSION = 1


class FileError(ValueError):
    def __init__(self, msg, line, col=None):
        where = f"line {line}" if col is None else f"line {line}, col {col}"
        super().__init__(f"{where}: {msg}")
        self.line = line
        self.col = col


class SyntaxError(FileError):  # the file grammar's own; shadows the builtin
    pass


class UnknownKey(FileError):
    pass


class RangeError(FileError):
    pass


class UnknownSnapshot(KeyError):
    pass


@dataclass
class FreqSpec:
    """A frequency as written: mode None is Hz, 'r' ratio, 'd' deviation."""

    value: float
    mode: str | None = None

    def resolve(self, fundamental, index) -> float:
        if self.mode == "r":
            return self.value * fundamental
        if self.mode == "d":
            return (index + 1) * fundamental + self.value
        return self.value


@dataclass
class NodeOverride:
    f0: FreqSpec | None = None
    mass: float | None = None
    damp: float | None = None
    beta: float | None = None
    level: int | None = None


@dataclass
class NetworkSpec:
    name: str
    template: str
    modes: int
    f0: float
    mass: float = 1.0
    damp: float = 0.0
    B: float = 0.0
    nodes: dict = field(default_factory=dict)


@dataclass
class CouplingSpec:
    id: int
    kind: str
    nodes: list
    params: dict = field(default_factory=dict)
    rate_divisor: int = 1
    location: list | None = None


@dataclass
class PickupSpec:
    mode: str
    net: str | None = None
    x: float | None = None
    weights: list | None = None
    gain: float = 1.0


@dataclass
class Snapshot:
    name: str
    scope: str = "instrument"
    target: str | None = None
    entries: dict = field(default_factory=dict)


@dataclass
class InstrumentFile:
    format_version: int = FORMAT_VERSION
    networks: dict = field(default_factory=dict)
    couplings: list = field(default_factory=list)
    pickups: list = field(default_factory=list)
    rates: RateConfig | None = None
    snapshots: dict = field(default_factory=dict)


_IDENT = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")

_NET_FLOAT_KEYS = {"f0", "mass", "damp", "B"}
_NODE_KEYS = {"f0", "mass", "damp", "beta", "level"}
_COUPLING_PARAM_KEYS = {"k", "kappa", "saturation_scale", "e_max"}
_RATE_KEYS = {"sample_rate", "oversample", "control_block"}
_PICKUP_KEYS = {"mode", "net", "x", "weights", "gain"}
_SCOPES = {"window", "network", "instrument"}


def _is_ident(s):
    return bool(s) and not s[0].isdigit() and all(ch in _IDENT for ch in s)


def _parse_float(text, line, what="value"):
    try:
        return float(text)
    except ValueError:
        raise SyntaxError(f"bad {what} {text!r}", line) from None


def _parse_int(text, line, what="value"):
    try:
        return int(text)
    except ValueError:
        raise SyntaxError(f"bad {what} {text!r}", line) from None


def _parse_freq(text, line):
    mode = None
    if text and text[-1] in "rdh":
        mode, text = text[-1], text[:-1]
    v = _parse_float(text, line, "frequency")
    if mode == "h":
        mode = None
    if mode == "d" and not text.startswith(("+", "-")):
        raise SyntaxError("deviation values carry an explicit sign", line)
    return FreqSpec(v, mode)


class _Parser:
    def __init__(self, text):
        self.doc = InstrumentFile()
        self.section = None  # (tag, header_line, data)
        self.saw_version = False
        for lineno, raw in enumerate(io.StringIO(text), 1):
            line = raw.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            if line.lstrip().startswith("["):
                self._close()
                self._open(line, lineno)
            else:
                self._pair(line, lineno)
        self._close()

    def _open(self, line, lineno):
        body = line.strip()
        if not body.endswith("]"):
            raise SyntaxError("unterminated section header", lineno, len(line) + 1)
        words = body[1:-1].split()
        tag = words[0] if words else ""
        if tag == "rates":
            if len(words) != 1:
                raise SyntaxError("[rates] takes no name", lineno)
            if self.doc.rates is not None:
                raise RangeError("duplicate [rates] section", lineno)
            self.section = ("rates", lineno, {})
        elif tag == "network":
            if len(words) != 2 or not _is_ident(words[1]):
                raise SyntaxError("expected [network <name>]", lineno)
            if words[1] in self.doc.networks:
                raise RangeError(f"duplicate network {words[1]!r}", lineno)
            self.section = ("network", lineno, {"name": words[1], "keys": {}, "nodes": {}})
        elif tag == "coupling":
            if len(words) != 2:
                raise SyntaxError("expected [coupling <id>]", lineno)
            cid = _parse_int(words[1], lineno, "coupling id")
            if cid < 0:
                raise RangeError("coupling id must be >= 0", lineno)
            if any(c.id == cid for c in self.doc.couplings):
                raise RangeError(f"duplicate coupling {cid}", lineno)
            self.section = ("coupling", lineno, {"id": cid, "keys": {}})
        elif tag == "pickup":
            if len(words) != 1:
                raise SyntaxError("[pickup] takes no name", lineno)
            if len(self.doc.pickups) >= 2:
                raise RangeError("at most two pickups", lineno)
            self.section = ("pickup", lineno, {"keys": {}})
        elif tag == "snapshot":
            if len(words) != 2 or not _is_ident(words[1]):
                raise SyntaxError("expected [snapshot <name>]", lineno)
            if words[1] in self.doc.snapshots:
                raise RangeError(f"duplicate snapshot {words[1]!r}", lineno)
            self.section = ("snapshot", lineno, {"name": words[1], "keys": {}, "entries": {}})
        else:
            raise UnknownKey(f"unknown section {tag!r}", lineno)

    def _pair(self, line, lineno):
        if "=" not in line:
            raise SyntaxError("expected key = value", lineno, len(line.rstrip()) + 1)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise SyntaxError("empty key", lineno, 1)
        if not value:
            raise SyntaxError(f"empty value for {key!r}", lineno, line.index("=") + 2)
        if self.section is None:
            if key != "format_version":
                raise UnknownKey(f"{key!r} outside any section", lineno)
            if self.saw_version:
                raise RangeError("duplicate format_version", lineno)
            self.saw_version = True
            v = _parse_int(value, lineno, "format_version")
            if v != FORMAT_VERSION:
                raise RangeError(f"unsupported format_version {v}", lineno)
            self.doc.format_version = v
            return
        tag, _, data = self.section
        getattr(self, "_pair_" + tag)(key, value, lineno, data)

    # -- per-section key handling --------------------------------------

    def _pair_rates(self, key, value, lineno, data):
        if key not in _RATE_KEYS:
            raise UnknownKey(f"no rates key {key!r}", lineno)
        if key in data:
            raise RangeError(f"duplicate {key!r}", lineno)
        v = _parse_int(value, lineno, key)
        if v < 1:
            raise RangeError(f"{key} must be >= 1", lineno)
        data[key] = v

    def _pair_network(self, key, value, lineno, data):
        keys = data["keys"]
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "node":
            idx = _parse_int(parts[1], lineno, "node index")
            if idx < 0:
                raise RangeError("node index must be >= 0", lineno)
            param = parts[2]
            if param not in _NODE_KEYS:
                raise UnknownKey(f"no node key {param!r}", lineno)
            ov = data["nodes"].setdefault(idx, NodeOverride())
            if getattr(ov, param) is not None:
                raise RangeError(f"duplicate {key!r}", lineno)
            if param == "f0":
                ov.f0 = _parse_freq(value, lineno)
            elif param == "level":
                v = _parse_int(value, lineno, "level")
                if not 1 <= v <= 4:
                    raise RangeError("level must be 1..4", lineno)
                ov.level = v
            else:
                v = _parse_float(value, lineno, param)
                if param in ("mass",) and v <= 0:
                    raise RangeError("mass must be positive", lineno)
                if param == "damp" and v < 0:
                    raise RangeError("damp must be nonnegative", lineno)
                setattr(ov, param, v)
            return
        if len(parts) != 1:
            raise UnknownKey(f"no network key {key!r}", lineno)
        if key in keys:
            raise RangeError(f"duplicate {key!r}", lineno)
        if key == "template":
            if value not in net_mod.TEMPLATE_NAMES:
                raise RangeError(f"unknown template {value!r}", lineno)
            keys[key] = value
        elif key == "modes":
            v = _parse_int(value, lineno, "modes")
            if v < 1:
                raise RangeError("modes must be >= 1", lineno)
            keys[key] = v
        elif key in _NET_FLOAT_KEYS:
            spec = _parse_freq(value, lineno) if key == "f0" else None
            if key == "f0":
                if spec.mode is not None:
                    raise RangeError("network f0 takes absolute Hz", lineno)
                v = spec.value
            else:
                v = _parse_float(value, lineno, key)
            if key in ("f0", "mass") and v <= 0:
                raise RangeError(f"{key} must be positive", lineno)
            if key in ("damp", "B") and v < 0:
                raise RangeError(f"{key} must be nonnegative", lineno)
            keys[key] = v
        else:
            raise UnknownKey(f"no network key {key!r}", lineno)

    def _pair_coupling(self, key, value, lineno, data):
        keys = data["keys"]
        if key in keys:
            raise RangeError(f"duplicate {key!r}", lineno)
        if key == "kind":
            if value not in TEMPLATES:
                raise RangeError(f"unknown coupling kind {value!r}", lineno)
            keys[key] = value
        elif key == "nodes":
            refs = [w.strip() for w in value.split(",")]
            if any(not r for r in refs):
                raise SyntaxError("empty node ref", lineno)
            keys[key] = refs
        elif key == "rate_divisor":
            v = _parse_int(value, lineno, key)
            if v < 1:
                raise RangeError("rate_divisor must be >= 1", lineno)
            keys[key] = v
        elif key == "location":
            keys[key] = [_parse_float(w.strip(), lineno, "location") for w in value.split(",")]
        elif key in _COUPLING_PARAM_KEYS:
            v = _parse_float(value, lineno, key)
            if key == "k" and v < 0:
                raise RangeError("k must be nonnegative", lineno)
            if key in ("saturation_scale", "e_max") and v <= 0:
                raise RangeError(f"{key} must be positive", lineno)
            keys[key] = v
        else:
            raise UnknownKey(f"no coupling key {key!r}", lineno)

    def _pair_pickup(self, key, value, lineno, data):
        keys = data["keys"]
        if key not in _PICKUP_KEYS:
            raise UnknownKey(f"no pickup key {key!r}", lineno)
        if key in keys:
            raise RangeError(f"duplicate {key!r}", lineno)
        if key == "mode":
            if value not in ("location", "weights"):
                raise RangeError(f"unknown pickup mode {value!r}", lineno)
            keys[key] = value
        elif key == "net":
            keys[key] = value
        elif key == "weights":
            keys[key] = [_parse_float(w.strip(), lineno, "weight") for w in value.split(",")]
        else:
            keys[key] = _parse_float(value, lineno, key)

    def _pair_snapshot(self, key, value, lineno, data):
        if key == "scope":
            if value not in _SCOPES:
                raise RangeError(f"unknown scope {value!r}", lineno)
            data["keys"]["scope"] = value
        elif key == "target":
            data["keys"]["target"] = value
        elif key.startswith(("net.", "coupling.")):
            if key in data["entries"]:
                raise RangeError(f"duplicate entry {key!r}", lineno)
            data["entries"][key] = _parse_float(value, lineno, "entry")
        else:
            raise UnknownKey(f"no snapshot key {key!r}", lineno)

    # -- section commit --------------------------------------------------

    def _close(self):
        if self.section is None:
            return
        tag, header, data = self.section
        self.section = None
        if tag == "rates":
            self.doc.rates = RateConfig(
                sample_rate=data.get("sample_rate", 44100),
                oversample=data.get("oversample", 1),
                control_block=data.get("control_block", 64),
            )
        elif tag == "network":
            keys = data["keys"]
            for req in ("template", "modes", "f0"):
                if req not in keys:
                    raise SyntaxError(f"network section missing {req!r}", header)
            spec = NetworkSpec(
                name=data["name"],
                template=keys["template"],
                modes=keys["modes"],
                f0=keys["f0"],
                mass=keys.get("mass", 1.0),
                damp=keys.get("damp", 0.0),
                B=keys.get("B", 0.0),
                nodes=dict(sorted(data["nodes"].items())),
            )
            for idx in spec.nodes:
                if idx >= spec.modes:
                    raise RangeError(f"node {idx} outside modes = {spec.modes}", header)
            self.doc.networks[spec.name] = spec
        elif tag == "coupling":
            keys = data["keys"]
            for req in ("kind", "nodes"):
                if req not in keys:
                    raise SyntaxError(f"coupling section missing {req!r}", header)
            self.doc.couplings.append(
                CouplingSpec(
                    id=data["id"],
                    kind=keys["kind"],
                    nodes=keys["nodes"],
                    params={k: keys[k] for k in _COUPLING_PARAM_KEYS if k in keys},
                    rate_divisor=keys.get("rate_divisor", 1),
                    location=keys.get("location"),
                )
            )
        elif tag == "pickup":
            keys = data["keys"]
            if "mode" not in keys:
                raise SyntaxError("pickup section missing 'mode'", header)
            self.doc.pickups.append(
                PickupSpec(
                    mode=keys["mode"],
                    net=keys.get("net"),
                    x=keys.get("x"),
                    weights=keys.get("weights"),
                    gain=keys.get("gain", 1.0),
                )
            )
        else:  # snapshot
            self.doc.snapshots[data["name"]] = Snapshot(
                name=data["name"],
                scope=data["keys"].get("scope", "instrument"),
                target=data["keys"].get("target"),
                entries=dict(sorted(data["entries"].items())),
            )


def parse_instrument(text) -> InstrumentFile:
    """Parse file text; reports the first problem with its line number."""
    doc = _Parser(text).doc
    doc.couplings.sort(key=lambda c: c.id)
    return doc


# -- canonical serialization ---------------------------------------------


def _num(v) -> str:
    if isinstance(v, float) and v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _freq(spec: FreqSpec) -> str:
    if spec.mode == "r":
        return _num(spec.value) + "r"
    if spec.mode == "d":
        n = _num(spec.value)
        return (n if n.startswith("-") else "+" + n) + "d"
    return _num(spec.value)


def serialize_instrument(doc: InstrumentFile) -> str:
    """Canonical text: fixed section order, sorted names, normalized keys."""
    out = [f"format_version = {doc.format_version}", ""]
    if doc.rates is not None:
        out += [
            "[rates]",
            f"sample_rate = {doc.rates.sample_rate}",
            f"oversample = {doc.rates.oversample}",
            f"control_block = {doc.rates.control_block}",
            "",
        ]
    for name in sorted(doc.networks):
        spec = doc.networks[name]
        out += [
            f"[network {name}]",
            f"template = {spec.template}",
            f"modes = {spec.modes}",
            f"f0 = {_num(spec.f0)}",
            f"mass = {_num(spec.mass)}",
            f"damp = {_num(spec.damp)}",
            f"B = {_num(spec.B)}",
        ]
        for idx in sorted(spec.nodes):
            ov = spec.nodes[idx]
            if ov.f0 is not None:
                out.append(f"node.{idx}.f0 = {_freq(ov.f0)}")
            for key in ("mass", "damp", "beta"):
                if getattr(ov, key) is not None:
                    out.append(f"node.{idx}.{key} = {_num(getattr(ov, key))}")
            if ov.level is not None:
                out.append(f"node.{idx}.level = {ov.level}")
        out.append("")
    for c in sorted(doc.couplings, key=lambda c: c.id):
        out += [f"[coupling {c.id}]", f"kind = {c.kind}", "nodes = " + ", ".join(c.nodes)]
        for key in ("k", "kappa", "saturation_scale", "e_max"):
            if key in c.params:
                out.append(f"{key} = {_num(c.params[key])}")
        if c.rate_divisor != 1:
            out.append(f"rate_divisor = {c.rate_divisor}")
        if c.location is not None:
            out.append("location = " + ", ".join(_num(v) for v in c.location))
        out.append("")
    for p in doc.pickups:
        out += ["[pickup]", f"mode = {p.mode}"]
        if p.net is not None:
            out.append(f"net = {p.net}")
        if p.x is not None:
            out.append(f"x = {_num(p.x)}")
        if p.weights is not None:
            out.append("weights = " + ", ".join(_num(w) for w in p.weights))
        if p.gain != 1.0:
            out.append(f"gain = {_num(p.gain)}")
        out.append("")
    for name in sorted(doc.snapshots):
        snap = doc.snapshots[name]
        out += [f"[snapshot {name}]", f"scope = {snap.scope}"]
        if snap.target is not None:
            out.append(f"target = {snap.target}")
        for path in sorted(snap.entries):
            out.append(f"{path} = {_num(snap.entries[path])}")
        out.append("")
    while out and out[-1] == "":
        out.pop()
    return "\n".join(out) + "\n"


# -- doc -> live instrument ------------------------------------------------


def _node_ref(raw: str) -> NodeRef:
    net, _, idx = raw.partition(".")
    if not idx:
        return NodeRef(net)
    return NodeRef(net, int(idx))


def instantiate(doc: InstrumentFile):
    """Build a live instrument from a parsed file."""
    nets = []
    for spec in doc.networks.values():
        net = net_mod.build_template(
            spec.name,
            spec.template,
            spec.modes,
            spec.f0,
            total_mass=spec.mass,
            global_damping=spec.damp,
            stretch_b=spec.B,
        )
        for idx, ov in spec.nodes.items():
            if ov.level is not None:
                net_mod.set_node_param(net, idx, "level", ov.level)
            if ov.f0 is not None:
                net_mod.set_node_param(net, idx, "f0", ov.f0.resolve(spec.f0, idx))
            if ov.mass is not None:
                net_mod.set_node_param(net, idx, "mass", ov.mass)
            if ov.damp is not None:
                net_mod.set_node_param(net, idx, "damp", ov.damp)
            if ov.beta is not None:
                net_mod.set_node_param(net, idx, "beta", ov.beta)
        if doc.couplings:
            # explicit sections are the whole story; template defaults
            # would collide with ids chosen by the file
            net.default_couplings = []
        nets.append(net)
    pickups = [
        Pickup(mode=p.mode, net=p.net, x=p.x, weights=p.weights, gain=p.gain)
        for p in doc.pickups
    ]
    instr = assemble(nets, rates=doc.rates, pickups=pickups)
    for c in sorted(doc.couplings, key=lambda c: c.id):
        add_coupling(
            instr.registry,
            EtfKind(c.kind, dict(c.params)),
            [_node_ref(r) for r in c.nodes],
            rate_divisor=c.rate_divisor,
            location=c.location,
            networks=instr.networks,
            cid=c.id,
        )
    instr.snapshots.update({s.name: s for s in doc.snapshots.values()})
    return instr


def load_instrument(path):
    with open(path, "r", encoding="utf-8") as fh:
        return instantiate(parse_instrument(fh.read()))


# -- snapshots over a live instrument ---------------------------------------

_FAMILIES = {
    "f0": ("f0", "B"),
    "mass": ("mass",),
    "damp": ("damp",),
    "beta": (),
}


def _window_paths(instrument, target):
    net_name, _, family = (target or "").partition(".")
    if family not in _FAMILIES or net_name not in instrument.networks:
        raise ValueError(f"no window {target!r}")
    picked = []
    for p in paths.list_paths(instrument):
        parts = p.split(".")
        if parts[:2] != ["net", net_name]:
            continue
        if len(parts) == 3 and parts[2] in _FAMILIES[family]:
            picked.append(p)
        elif len(parts) == 5 and parts[4] == family:
            picked.append(p)
    return picked


def save_snapshot(instrument, name, scope="instrument", target=None) -> Snapshot:
    """Capture playable values in scope and store them on the instrument.

    Scopes: instrument (everything), network (target = net name), window
    (target = "<net>.<param family>", one slider window's worth).
    """
    if scope not in _SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    if scope == "instrument":
        picked = paths.list_paths(instrument)
    elif scope == "network":
        if target not in instrument.networks:
            raise ValueError(f"no network {target!r}")
        picked = [p for p in paths.list_paths(instrument) if p.startswith(f"net.{target}.")]
    else:
        picked = _window_paths(instrument, target)
    entries = {}
    for p in picked:
        if paths.classify(p) != "playable":
            continue
        entries[p] = float(paths.get_value(instrument, p))
    assert all(paths.classify(p) == "playable" for p in entries)
    snap = Snapshot(name=name, scope=scope, target=target, entries=entries)
    instrument.snapshots[name] = snap
    return snap


def recall_snapshot(instrument, name):
    """(edits, stale): closures for the boundary queue, plus dead paths.

    Only entries that would change something are returned.  When a
    network macro is being restored, that family's node entries ride
    along even if they look current: the macro edit rescales them.
    """
    snap = instrument.snapshots.get(name)
    if snap is None:
        raise UnknownSnapshot(name)
    live, stale = {}, []
    for path, value in snap.entries.items():
        try:
            current = paths.get_value(instrument, path)
        except paths.BadPath:
            stale.append(path)
            continue
        live[path] = (value, current)
    forced = set()
    for path, (value, current) in live.items():
        parts = path.split(".")
        if len(parts) == 3 and parts[0] == "net" and value != current:
            family = "f0" if parts[2] == "B" else parts[2]
            forced.add((parts[1], family))
    edits = []
    for path in sorted(live):
        value, current = live[path]
        parts = path.split(".")
        riding = (
            len(parts) == 5
            and parts[0] == "net"
            and (parts[1], parts[4]) in forced
        )
        if value == current and not riding:
            continue
        edits.append((path, paths.make_edit(instrument, path, value)))
    return edits, stale
