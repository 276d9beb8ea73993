"""Line protocol for remote control of a running instrument.

Requests are single lines, UTF-8, newline terminated.  Every request
gets exactly one reply line; meter pushes interleave but always start
with their own prefix:

    SET <path> <value>        -> OK
    GET <path>                -> VAL <path> <value>
    LIST <prefix>             -> VAL lines, then OK <count>
    COUPLE ADD <kind> <refs...> [k=.. kappa=.. s=.. e=.. rate=..]
                              -> OK <id>
    COUPLE DEL <id>           -> OK
    SNAP SAVE <name> [scope [target]]   -> OK
    SNAP LOAD <name>          -> OK <applied> <stale>
    SUB meters <hz>           -> OK   (then MTR pushes, hz capped at 60)
    UNSUB meters              -> OK
    PING                      -> OK

Errors come back as `ERR <code> <token...>` with code one of parse,
badpath, badvalue, unknownid.  f0 values accept `r`, `d`, and `h`
suffixes (ratio of the network fundamental, signed deviation from the
harmonic partial, absolute Hz); replies are always canonical Hz.

A meter push is one block: `MTR <n> <dropped>` followed by n lines
`MTR <path> <energy>`.  Push timing derives from the sample clock, so
offline tests are deterministic; drops are counted, never buffered.

ControlSession does no socket work.  serve_tcp adapts it to a real
stream socket, one thread per connection, all edits funneled through
the scheduler's queue.
"""
import hashlib
import socketserver
import threading

from . import paths
from . import persistence
from .etf import ArityMismatch, EtfKind, NodeRef, TEMPLATES
from .scheduler import UnknownId, UnknownParticipant, add_coupling, remove_coupling

METER_CAP_HZ = 60.0

# COUPLE ADD shorthand -> kernel parameter
_COUPLE_PARAMS = {"k": "k", "kappa": "kappa", "s": "saturation_scale", "e": "e_max"}


def state_hash(sched) -> str:
    """Digest of every banked node's full state vector."""
    sched.flush_edits()
    sched.sync_states()
    h = hashlib.blake2b(digest_size=16)
    for name in sorted(sched.instrument.networks):
        for node in sched.instrument.networks[name].nodes:
            for v in node.state.m:
                h.update(repr(v).encode())
            h.update(b"|")
    return h.hexdigest()


def _fmt(v) -> str:
    if isinstance(v, float):
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


class ControlSession:
    """One client's protocol state machine; push goes through `push`."""

    def __init__(self, sched, push=None):
        self.sched = sched
        self.push = push or (lambda line: None)
        self.meter_hz = 0.0
        self._next_meter_sample = 0
        self._dropped = 0

    # -- request handling --------------------------------------------------

    def handle_line(self, line: str) -> str:
        words = line.split()
        if not words:
            return "ERR parse empty"
        verb = words[0]
        try:
            if verb == "PING":
                return "OK"
            if verb == "SET":
                return self._set(words)
            if verb == "GET":
                return self._get(words)
            if verb == "LIST":
                return self._list(words)
            if verb == "COUPLE":
                return self._couple(words)
            if verb == "SNAP":
                return self._snap(words)
            if verb == "SUB":
                return self._sub(words)
            if verb == "UNSUB":
                return self._unsub(words)
            if verb == "MAP":
                return "ERR parse MAP reserved"
        except paths.BadPath as err:
            return f"ERR badpath {err.args[0]}"
        except paths.BadValue as err:
            return f"ERR badvalue {err.args[0]}"
        return f"ERR parse {verb}"

    def _parse_value(self, path, raw):
        if not path.endswith(".f0") or raw[-1] not in "rdh":
            return raw
        body, suffix = raw[:-1], raw[-1]
        try:
            v = float(body)
        except ValueError:
            raise paths.BadValue(f"{raw!r}") from None
        if suffix == "h":
            return v
        parts = path.split(".")
        net = self.sched.instrument.networks.get(parts[1])
        if net is None:
            raise paths.BadPath(f"no network {parts[1]!r}")
        if suffix == "r":
            return v * net.fundamental
        # deviation from the harmonic partial; meaningless for the
        # fundamental itself
        if len(parts) != 5:
            raise paths.BadValue("d applies to node f0")
        try:
            idx = int(parts[3])
        except ValueError:
            raise paths.BadPath(f"bad node index in {path!r}") from None
        return (idx + 1) * net.fundamental + v

    def _set(self, words):
        if len(words) != 3:
            return "ERR parse SET"
        path, raw = words[1], words[2]
        if path == "debug.statehash":
            return "ERR badvalue read-only"
        value = self._parse_value(path, raw)
        edit = paths.make_edit(self.sched.instrument, path, value)
        self.sched.queue_edit(edit)
        return "OK"

    def _get(self, words):
        if len(words) != 2:
            return "ERR parse GET"
        path = words[1]
        if path == "debug.statehash":
            return f"VAL debug.statehash {state_hash(self.sched)}"
        v = paths.get_value(self.sched.instrument, path)
        return f"VAL {path} {_fmt(v)}"

    def _list(self, words):
        if len(words) > 2:
            return "ERR parse LIST"
        prefix = words[1] if len(words) == 2 else ""
        matched = [
            p for p in paths.list_paths(self.sched.instrument) if p.startswith(prefix)
        ]
        for p in matched:
            self.push(f"VAL {p} {_fmt(paths.get_value(self.sched.instrument, p))}")
        return f"OK {len(matched)}"

    def _couple(self, words):
        if len(words) < 2:
            return "ERR parse COUPLE"
        op = words[1]
        if op == "DEL":
            if len(words) != 3:
                return "ERR parse COUPLE"
            try:
                cid = int(words[2])
            except ValueError:
                return f"ERR unknownid {words[2]}"
            try:
                remove_coupling(self.sched.instrument.registry, cid)
            except UnknownId:
                return f"ERR unknownid {words[2]}"
            return "OK"
        if op != "ADD" or len(words) < 3:
            return "ERR parse COUPLE"
        kind_name = words[2]
        if kind_name not in TEMPLATES:
            return f"ERR badvalue {kind_name}"
        refs, params, divisor = [], {}, 1
        for word in words[3:]:
            if "=" in word:
                key, _, raw = word.partition("=")
                try:
                    if key == "rate":
                        divisor = int(raw)
                    elif key in _COUPLE_PARAMS:
                        params[_COUPLE_PARAMS[key]] = float(raw)
                    else:
                        return f"ERR parse {word}"
                except ValueError:
                    return f"ERR badvalue {word}"
            else:
                net, _, idx = word.partition(".")
                try:
                    refs.append(NodeRef(net, int(idx)) if idx else NodeRef(net))
                except ValueError:
                    return f"ERR parse {word}"
        try:
            cid = add_coupling(
                self.sched.instrument.registry,
                EtfKind(kind_name, params),
                refs,
                rate_divisor=divisor,
                networks=self.sched.instrument.networks,
            )
        except (ArityMismatch, UnknownParticipant, ValueError) as err:
            return f"ERR badvalue {err}"
        return f"OK {cid}"

    def _snap(self, words):
        if len(words) < 3:
            return "ERR parse SNAP"
        op, name = words[1], words[2]
        instr = self.sched.instrument
        if op == "SAVE":
            scope = words[3] if len(words) > 3 else "instrument"
            target = words[4] if len(words) > 4 else None
            try:
                persistence.save_snapshot(instr, name, scope, target)
            except ValueError as err:
                return f"ERR badvalue {err}"
            return "OK"
        if op == "LOAD":
            try:
                edits, stale = persistence.recall_snapshot(instr, name)
            except persistence.UnknownSnapshot:
                return f"ERR unknownid {name}"
            for _, fn in edits:
                self.sched.queue_edit(fn)
            return f"OK {len(edits)} {len(stale)}"
        return "ERR parse SNAP"

    def _sub(self, words):
        if len(words) != 3 or words[1] != "meters":
            return "ERR parse SUB"
        try:
            hz = float(words[2])
        except ValueError:
            return f"ERR badvalue {words[2]}"
        if hz <= 0:
            return f"ERR badvalue {words[2]}"
        self.meter_hz = min(hz, METER_CAP_HZ)
        self.sched.meters_enabled = True
        # first frame one period out, like any periodic timer
        period = max(1, int(self.sched.instrument.rates.sample_rate / self.meter_hz))
        self._next_meter_sample = self.sched.sample_index + period
        return "OK"

    def _unsub(self, words):
        if len(words) != 2 or words[1] != "meters":
            return "ERR parse UNSUB"
        self.meter_hz = 0.0
        return "OK"

    # -- pushes --------------------------------------------------------------

    def pump_meters(self):
        """Emit due MTR blocks; call with the current sample clock.

        A push that cannot be delivered (push raises) is dropped whole
        and counted; the next delivered block carries the count.
        """
        if self.meter_hz <= 0.0:
            return
        period = max(1, int(self.sched.instrument.rates.sample_rate / self.meter_hz))
        due = 0
        while self.sched.sample_index >= self._next_meter_sample:
            self._next_meter_sample += period
            due += 1
        if not due:
            return
        self._dropped += due - 1  # a slow pump skips frames, never buffers them
        meters = self.sched.read_meters()
        lines = [f"MTR {len(meters)} {self._dropped}"]
        lines += [f"MTR {p} {_fmt(meters[p])}" for p in sorted(meters)]
        try:
            for line in lines:
                self.push(line)
            self._dropped = 0
        except (OSError, ValueError):
            self._dropped += 1


# -- TCP adapter --------------------------------------------------------------


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        lock = self.server.reply_lock
        session = ControlSession(self.server.sched, push=self._push)
        self.server.sessions.append(session)
        try:
            for raw in self.rfile:
                reply = session.handle_line(raw.decode("utf-8").rstrip("\r\n"))
                with lock:
                    self.wfile.write((reply + "\n").encode())
        finally:
            self.server.sessions.remove(session)

    def _push(self, line):
        with self.server.reply_lock:
            self.wfile.write((line + "\n").encode())


class ControlServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, sched):
        super().__init__(addr, _Handler)
        self.sched = sched
        self.sessions = []
        self.reply_lock = threading.Lock()

    def pump_meters(self):
        for session in list(self.sessions):
            session.pump_meters()


def serve_tcp(sched, host="127.0.0.1", port=7770) -> ControlServer:
    """Start the listener; caller owns the audio loop and meter pumping."""
    server = ControlServer((host, port), sched)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
