"""Protocol semantics against a deterministic offline scheduler."""
import socket
import time

import pytest

from modalflux.network import build_template
from modalflux.scheduler import RateConfig, Scheduler, assemble
from modalflux.service import ControlSession, serve_tcp, state_hash


def make_session(n=3, f0=100.0, damp=0.0, rates=None):
    net = build_template("s", "custom", n, f0, global_damping=damp)
    instr = assemble([net], rates or RateConfig())
    sched = Scheduler(instr)
    pushes = []
    return ControlSession(sched, push=pushes.append), sched, pushes


def test_ping():
    session, _, _ = make_session()
    assert session.handle_line("PING") == "OK"


def test_set_get_coherence_in_canonical_hz():
    session, sched, _ = make_session()
    assert session.handle_line("SET net.s.f0 220h") == "OK"
    sched.run(65)  # the edit lands at the block boundary
    assert session.handle_line("GET net.s.f0") == "VAL net.s.f0 220"


def test_ratio_suffix_converts_against_the_fundamental():
    session, sched, _ = make_session()
    assert session.handle_line("SET net.s.node.2.f0 2.5r") == "OK"
    sched.run(65)
    assert session.handle_line("GET net.s.node.2.f0") == "VAL net.s.node.2.f0 250"


def test_deviation_suffix_converts_against_the_partial():
    session, sched, _ = make_session()
    assert session.handle_line("SET net.s.node.1.f0 +3d") == "OK"
    sched.run(65)
    assert session.handle_line("GET net.s.node.1.f0") == "VAL net.s.node.1.f0 203"


def test_plain_and_h_suffix_are_absolute():
    session, sched, _ = make_session()
    session.handle_line("SET net.s.node.0.f0 333")
    sched.run(65)
    assert session.handle_line("GET net.s.node.0.f0") == "VAL net.s.node.0.f0 333"


@pytest.mark.parametrize(
    "line,code",
    [
        ("GET net.ghost.f0", "badpath"),
        ("GET net.s.sheen", "badpath"),
        ("SET net.s.f0 loud", "badvalue"),
        ("SET net.s.f0 -5", "badvalue"),
        ("SET net.s.node.9.f0 100", "badpath"),
        ("COUPLE DEL 99", "unknownid"),
        ("FROB net.s.f0", "parse"),
        ("SET net.s.f0", "parse"),
        ("SUB meters fast", "badvalue"),
        ("MAP cc1 net.s.f0", "parse"),
    ],
)
def test_errors_carry_code_and_token(line, code):
    session, _, _ = make_session()
    reply = session.handle_line(line)
    assert reply.startswith(f"ERR {code} ")


def test_one_reply_per_request_in_order():
    session, _, _ = make_session()
    script = ["PING", "GET net.s.f0", "NOPE", "GET net.s.node.0.f0", "PING"]
    replies = [session.handle_line(s) for s in script]
    assert len(replies) == 5
    assert replies[0] == "OK"
    assert replies[1] == "VAL net.s.f0 100"
    assert replies[2].startswith("ERR parse")
    assert replies[4] == "OK"


def test_list_pushes_vals_and_counts_them():
    session, _, pushes = make_session(n=2)
    reply = session.handle_line("LIST net.s.node.0.")
    assert reply == "OK 5"
    assert len(pushes) == 5
    assert "VAL net.s.node.0.f0 100" in pushes
    assert all(p.startswith("VAL net.s.node.0.") for p in pushes)


def test_list_covers_every_exposed_path_but_not_the_hash():
    session, _, pushes = make_session()
    reply = session.handle_line("LIST")
    n = int(reply.split()[1])
    assert n == len(pushes)
    assert any(p.startswith("VAL rates.sample_rate") for p in pushes)
    assert not any("statehash" in p for p in pushes)


def test_couple_add_transfers_energy_and_del_stops_it():
    session, sched, _ = make_session(n=2)
    assert session.handle_line("COUPLE ADD linear s.0 s.1 k=0.01") == "OK 0"
    sched.feed_node("s", 0, 1.0, 0.0)
    sched.run(256)
    assert sched.node_energy("s", 1) > 0.0
    assert session.handle_line("COUPLE DEL 0") == "OK"
    assert session.handle_line("COUPLE DEL 0").startswith("ERR unknownid")


def test_couple_add_rejects_bad_forms():
    session, _, _ = make_session(n=2)
    assert session.handle_line("COUPLE ADD linear s.0 k=0.1").startswith("ERR badvalue")
    assert session.handle_line("COUPLE ADD warp s.0 s.1").startswith("ERR badvalue")
    assert session.handle_line("COUPLE ADD linear s.0 s.9 k=0.1").startswith("ERR badvalue")
    assert session.handle_line("COUPLE ADD limit s.0 e=1").startswith("ERR badvalue")


def test_couple_add_limit_takes_a_bare_network():
    session, sched, _ = make_session(n=2)
    assert session.handle_line("COUPLE ADD limit s e=0.5") == "OK 0"
    sched.feed_node("s", 0, 2.0, 0.0)
    sched.run(4410)
    assert sched.total_energy() == pytest.approx(0.5, rel=1e-6)


def test_playable_set_keeps_node_state_bits():
    session, sched, _ = make_session(damp=1.0)
    sched.feed_node("s", 0, 1.0, 0.3)
    sched.run(100)
    h1 = session.handle_line("GET debug.statehash")
    session.handle_line("SET net.s.f0 140")
    session.handle_line("SET net.s.damp 2.5")
    h2 = session.handle_line("GET debug.statehash")
    assert h1.split()[2] == h2.split()[2]
    assert sched.instrument.networks["s"].fundamental == 140.0


def test_system_set_may_reconfigure_state():
    session, sched, _ = make_session()
    sched.feed_node("s", 2, 1.0, 0.0)
    h1 = session.handle_line("GET debug.statehash")
    session.handle_line("SET net.s.modes 2")
    h2 = session.handle_line("GET debug.statehash")
    assert h1 != h2


def test_snap_save_load_round_trip_over_the_wire():
    session, sched, _ = make_session()
    assert session.handle_line("SNAP SAVE base") == "OK"
    session.handle_line("SET net.s.f0 180")
    sched.run(65)
    reply = session.handle_line("SNAP LOAD base")
    applied, stale = int(reply.split()[1]), int(reply.split()[2])
    assert applied >= 1 and stale == 0
    sched.run(64)
    assert session.handle_line("GET net.s.f0") == "VAL net.s.f0 100"


def test_snap_load_unknown_name():
    session, _, _ = make_session()
    assert session.handle_line("SNAP LOAD nope").startswith("ERR unknownid")


# -- meters ---------------------------------------------------------------------


def test_no_subscription_no_pushes():
    session, sched, pushes = make_session()
    sched.run(1000)
    session.pump_meters()
    assert pushes == []


def test_meter_blocks_report_all_nodes_at_the_sample_clock_rate():
    session, sched, pushes = make_session(n=2)
    assert session.handle_line("SUB meters 30") == "OK"
    period = 44100 // 30
    for _ in range(3):
        sched.run(period)
        session.pump_meters()
    blocks = [p for p in pushes if p.split()[1].isdigit()]
    assert len(blocks) == 3
    # 2 node meters + 1 network total
    assert all(b == "MTR 3 0" for b in blocks)
    assert len(pushes) == 3 * 4


def test_silent_instrument_meters_read_zero():
    session, sched, pushes = make_session()
    session.handle_line("SUB meters 60")
    sched.run(735)
    session.pump_meters()
    values = [p for p in pushes if p.startswith("MTR net.")]
    assert values and all(p.split()[2] == "0" for p in values)


def test_struck_damped_node_meter_series_decays():
    session, sched, pushes = make_session(n=1, f0=200.0, damp=6.0)
    sched.feed_node("s", 0, 1.0, 0.0)
    session.handle_line("SUB meters 20")
    series = []
    for _ in range(12):
        sched.run(44100 // 20)
        session.pump_meters()
    for p in pushes:
        if p.startswith("MTR net.s.node.0.energy"):
            series.append(float(p.split()[2]))
    assert len(series) == 12
    assert all(a > b for a, b in zip(series, series[1:]))
    assert series[-1] < series[0] * 0.1


def test_rates_above_the_cap_are_clamped():
    session, _, _ = make_session()
    session.handle_line("SUB meters 500")
    assert session.meter_hz == 60.0


def test_slow_pump_drops_frames_and_reports_the_count():
    session, sched, pushes = make_session()
    session.handle_line("SUB meters 60")
    sched.run(735 * 5 + 1)  # five periods elapse before anyone pumps
    session.pump_meters()
    header = next(p for p in pushes if p.split()[1].isdigit())
    dropped = int(header.split()[2])
    assert dropped == 4  # five frames came due, one was delivered
    blocks = [p for p in pushes if p.split()[1].isdigit()]
    assert len(blocks) == 1


def test_unsub_stops_pushes():
    session, sched, pushes = make_session()
    session.handle_line("SUB meters 60")
    sched.run(800)
    session.pump_meters()
    n = len(pushes)
    assert session.handle_line("UNSUB meters") == "OK"
    sched.run(8000)
    session.pump_meters()
    assert len(pushes) == n


# -- transcript fixture -----------------------------------------------------


def test_frozen_transcript_replies_are_byte_identical():
    from pathlib import Path

    lines = (Path(__file__).parent / "golden" / "session.transcript").read_text().splitlines()
    session, sched, pushes = make_session()
    for line in lines:
        if line.startswith("> "):
            got = session.handle_line(line[2:])
        elif line.startswith("< "):
            assert got == line[2:], f"for request before {line!r}"
        elif line.startswith("! run "):
            sched.run(int(line.split()[2]))
        elif line.startswith("! pump "):
            before = len(pushes)
            session.pump_meters()
            assert len(pushes) - before == int(line.split()[2]), f"at {line!r}"


# -- tcp adapter -------------------------------------------------------------


def _connect(port):
    sock = socket.create_connection(("127.0.0.1", port), timeout=5)
    return sock, sock.makefile("rwb")


def test_tcp_round_trip_and_two_clients():
    _, sched, _ = make_session()
    server = serve_tcp(sched, port=0)
    try:
        port = server.server_address[1]
        s1, f1 = _connect(port)
        s2, f2 = _connect(port)
        f1.write(b"PING\n")
        f1.flush()
        assert f1.readline() == b"OK\n"
        f2.write(b"GET net.s.f0\n")
        f2.flush()
        assert f2.readline() == b"VAL net.s.f0 100\n"
        f1.write(b"SET net.s.f0 150\nGET net.s.f0\n")
        f1.flush()
        assert f1.readline() == b"OK\n"
        sched.run(65)
        f2.write(b"GET net.s.f0\n")
        f2.flush()
        # one reply per request, in order, per connection
        assert f1.readline().startswith(b"VAL net.s.f0 ")
        assert f2.readline() == b"VAL net.s.f0 150\n"
        s1.close()
        s2.close()
    finally:
        server.shutdown()
        server.server_close()


def test_tcp_meter_push_reaches_the_client():
    _, sched, _ = make_session()
    server = serve_tcp(sched, port=0)
    try:
        sock, fh = _connect(server.server_address[1])
        fh.write(b"SUB meters 60\n")
        fh.flush()
        assert fh.readline() == b"OK\n"
        deadline = time.time() + 5
        while not server.sessions and time.time() < deadline:
            time.sleep(0.01)
        sched.run(44100 // 60 + 1)
        server.pump_meters()
        line = fh.readline()
        assert line.startswith(b"MTR ")
        sock.close()
    finally:
        server.shutdown()
        server.server_close()


def test_state_hash_is_stable_for_identical_runs():
    _, sched_a, _ = make_session()
    _, sched_b, _ = make_session()
    for sched in (sched_a, sched_b):
        sched.feed_node("s", 0, 0.5, 1.0)
        sched.run(500)
    assert state_hash(sched_a) == state_hash(sched_b)
