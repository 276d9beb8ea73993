"""Exit codes, flag validation, and end-to-end subcommand behavior."""
import socket
import threading
import time

import numpy as np
import pytest
from scipy.io import wavfile

from modalflux.cli import main, parse_excite, serve_loop, CliError
from modalflux.engine import Excitation
from modalflux.network import build_template
from modalflux.scheduler import Scheduler, assemble
from modalflux.service import serve_tcp

GOLDEN = "tests/golden"

SIMPLE = """\
[network s]
template = string
modes = 4
f0 = 220
damp = 2
[pickup]
mode = location
net = s
x = 0.3
gain = 0.05
"""


@pytest.fixture
def simple_file(tmp_path):
    path = tmp_path / "simple.mfi"
    path.write_text(SIMPLE)
    return str(path)


# -- excite specs ------------------------------------------------------------


def test_parse_excite_full_form():
    ex = parse_excite("strike@0.5,net=s,x=0.3,e=2,phi=1.1", 44100)
    assert ex.kind == "strike" and ex.net == "s"
    assert ex.time == 22050 and ex.x == 0.3 and ex.energy == 2.0 and ex.phase == 1.1


def test_parse_excite_defaults_and_node_form():
    ex = parse_excite("strike,net=s,node=2", 44100)
    assert ex.time == 0 and ex.node == 2 and ex.energy == 1.0


def test_parse_excite_press():
    ex = parse_excite("press@1,net=s,node=0,e=0.5,dur=0.25", 44100)
    assert ex.kind == "press" and ex.duration == 11025


@pytest.mark.parametrize(
    "spec",
    [
        "strike",  # no net
        "strike,net=s",  # neither x nor node
        "strike,net=s,x=0.5,node=1",  # both
        "pluck,net=s,x=0.5",
        "strike,net=s,x=abc",
        "strike,net=s,x=0.5,zeal=9",
        "strike@-1,net=s,x=0.5",
    ],
)
def test_parse_excite_rejects(spec):
    with pytest.raises(CliError):
        parse_excite(spec, 44100)


# -- check -------------------------------------------------------------------


def test_check_reports_counts(simple_file, capsys):
    assert main(["check", simple_file]) == 0
    out = capsys.readouterr().out
    assert "networks=1" in out and "nodes=4" in out and "couplings=0" in out


def test_check_counts_match_golden_duet(capsys):
    assert main(["check", f"{GOLDEN}/duet.mfi"]) == 0
    out = capsys.readouterr().out
    assert "networks=2" in out
    assert "nodes=9" in out
    assert "couplings=3" in out
    assert "pickups=2" in out
    assert "snapshots=1" in out


def test_check_bad_file_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.mfi"
    bad.write_text("[network s]\ntemplate = string\nmodes = zero\nf0 = 100\n")
    assert main(["check", str(bad)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_check_missing_file_exits_1(capsys):
    assert main(["check", "/no/such/file.mfi"]) == 1


def test_unknown_flag_exits_1(simple_file, capsys):
    assert main(["check", simple_file, "--sideways"]) == 1


def test_unknown_subcommand_exits_1(capsys):
    assert main(["warble"]) == 1


# -- render --------------------------------------------------------------------


def test_render_silent_default_duration(simple_file, tmp_path, capsys):
    out = str(tmp_path / "quiet.wav")
    assert main(["render", simple_file, "--out", out, "--duration", "1"]) == 0
    rate, data = wavfile.read(out)
    assert rate == 44100
    assert data.shape == (44100,)
    assert not data.any()


def test_render_excite_produces_sound_and_honors_rate_flags(simple_file, tmp_path):
    out = str(tmp_path / "hit.wav")
    code = main(
        [
            "render",
            simple_file,
            "--out", out,
            "--duration", "0.5",
            "--sample-rate", "32000",
            "--excite", "strike@0.1,net=s,x=0.3,e=1,phi=0",
        ]
    )
    assert code == 0
    rate, data = wavfile.read(out)
    assert rate == 32000
    assert data.shape == (16000,)
    assert not data[:3100].any()  # nothing before the strike lands
    assert np.abs(data[3300:]).max() > 0


def test_render_bad_excite_never_reaches_the_engine(simple_file, tmp_path, capsys):
    out = tmp_path / "no.wav"
    code = main(
        ["render", simple_file, "--out", str(out), "--excite", "strike,net=ghost"]
    )
    assert code == 1
    assert not out.exists()


def test_render_unwritable_path_is_a_runtime_error(simple_file):
    code = main(
        ["render", simple_file, "--out", "/no/such/dir/x.wav", "--duration", "0.1"]
    )
    assert code == 2


def test_render_int16(simple_file, tmp_path):
    out = str(tmp_path / "i.wav")
    code = main(
        [
            "render", simple_file,
            "--out", out,
            "--duration", "0.2",
            "--format", "int16",
            "--excite", "strike,net=s,x=0.4",
        ]
    )
    assert code == 0
    _, data = wavfile.read(out)
    assert data.dtype == np.int16


# -- snapshot ------------------------------------------------------------------


def test_snapshot_lists_names(capsys):
    assert main(["snapshot", f"{GOLDEN}/duet.mfi"]) == 0
    out = capsys.readouterr().out
    assert "warm (network low, 3 entries)" in out


def test_snapshot_extracts_one(capsys):
    assert main(["snapshot", f"{GOLDEN}/duet.mfi", "--snapshot", "warm"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("[snapshot warm]\n")
    assert "net.low.f0 = 98" in out


def test_snapshot_unknown_name(capsys):
    assert main(["snapshot", f"{GOLDEN}/duet.mfi", "--snapshot", "nope"]) == 1


# -- serve --------------------------------------------------------------------


def test_serve_loop_answers_control_traffic_while_running():
    net = build_template("s", "string", 4, 220.0, global_damping=2.0)
    instr = assemble([net])
    sched = Scheduler(instr)
    server = serve_tcp(sched, port=0)
    stop = threading.Event()
    worker = threading.Thread(
        target=serve_loop,
        args=(sched, server, stop.is_set),
        kwargs={"fast": True},
        daemon=True,
    )
    worker.start()
    try:
        sock = socket.create_connection(("127.0.0.1", server.server_address[1]), timeout=5)
        fh = sock.makefile("rwb")
        fh.write(b"SET net.s.f0 330\nPING\n")
        fh.flush()
        assert fh.readline() == b"OK\n"
        assert fh.readline() == b"OK\n"
        deadline = time.time() + 5
        while instr.networks["s"].fundamental != 330.0 and time.time() < deadline:
            time.sleep(0.01)
        assert instr.networks["s"].fundamental == 330.0
        sock.close()
    finally:
        stop.set()
        worker.join(timeout=5)
        server.shutdown()
        server.server_close()
    assert not worker.is_alive()
