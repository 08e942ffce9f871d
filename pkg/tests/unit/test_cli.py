"""Command-line surface: subcommands and exit codes."""

from __future__ import annotations

import json

import pytest

from leotrace import tracefile
from leotrace.cli import EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, main
from leotrace.config import get_config, set_config
from leotrace.tracefile import Direction
from tests.helpers import SCENARIOS, constant_trace


@pytest.fixture
def cli(tmp_path):
    """Run `leotrace` with a throwaway config.toml and output directory."""
    previous = get_config()
    config = tmp_path / "config.toml"
    config.write_text(f'[logging]\nlevel = "WARNING"\n\n[output]\nout_dir = "{(tmp_path / "out").as_posix()}"\n', encoding="utf-8")

    def run(*args: str) -> int:
        return main(["--config", str(config), *args])

    yield run
    set_config(previous)


@pytest.fixture
def traces(tmp_path):
    fwd, ret = tmp_path / "fwd.csv", tmp_path / "ret.csv"
    tracefile.write(constant_trace(records=200), fwd)
    tracefile.write(constant_trace(records=200, direction=Direction.RETURN), ret)
    return fwd, ret


def test_schema(cli, capsys):
    assert cli("schema") == EXIT_OK
    schema = json.loads(capsys.readouterr().out)
    assert "endpoints" in schema["properties"]


def test_trace_info(cli, capsys, traces):
    assert cli("trace-info", str(traces[0])) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("constant (forward, 10 ms, seed 0)")
    assert "records: 200 (2.00s)" in out


def test_trace_info_missing_file(cli, tmp_path):
    assert cli("trace-info", str(tmp_path / "nope.csv")) == EXIT_CONFIG


def test_trace_info_malformed(cli, capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# format=1\nnot,a,header\n", encoding="utf-8")
    assert cli("trace-info", str(path)) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_trace_info_invalid_grid(cli, tmp_path):
    path = tmp_path / "grid.csv"
    path.write_text(
        "# format=1\n# scenario=s\n# direction=forward\n# resolution_ms=10\n# seed=0\n"
        "t_ms,delay_us,rate_bps,queue_capacity_pkts,loss_ratio,route_id,bdp_pkts\n"
        "0,1000,1000000,10,0.000,1,1\n15,1000,1000000,10,0.000,1,1\n",
        encoding="utf-8",
    )
    assert cli("trace-info", str(path)) == EXIT_VALIDATION


def test_virtual_replay_without_scenario(cli, capsys, traces, tmp_path):
    fwd, ret = traces
    code = cli("replay", "--fwd-trace", str(fwd), "--ret-trace", str(ret), "--workload", "ping", "--out", str(tmp_path / "r"))
    assert code == EXIT_OK
    ping = (tmp_path / "r" / "constant" / "replay" / "ping.csv").read_text(encoding="utf-8").splitlines()
    assert ping[0] == "seq,send_ms,rtt_ms"
    assert len(ping) == 5
    assert "Replay complete" in capsys.readouterr().out


def test_replay_offset_out_of_range(cli, traces):
    fwd, ret = traces
    assert cli("replay", "--fwd-trace", str(fwd), "--ret-trace", str(ret), "--delay-offset-us", "-30000") == EXIT_CONFIG


def test_replay_missing_trace(cli, traces, tmp_path):
    assert cli("replay", "--fwd-trace", str(traces[0]), "--ret-trace", str(tmp_path / "x.csv")) == EXIT_CONFIG


def test_flows_gen(cli, tmp_path):
    assert cli("flows", "gen", "--scenario", str(SCENARIOS / "smoke.json")) == EXIT_OK
    directory = tmp_path / "out" / "smoke" / "flows"
    assert len((directory / "flows.csv").read_text(encoding="utf-8").splitlines()) == 21
    assert (directory / "flow_load.csv").exists()


def test_gen_state(cli, capsys, tmp_path):
    assert cli("gen-state", "--scenario", str(SCENARIOS / "smoke.json"), "--out", str(tmp_path / "s")) == EXIT_OK
    assert "20 forwarding states" in capsys.readouterr().out
    assert (tmp_path / "s" / "smoke" / "state" / "forwarding_state.csv").exists()


def test_missing_scenario(cli, tmp_path):
    assert cli("gen-traces", "--scenario", str(tmp_path / "none.json")) == EXIT_CONFIG


def test_usage_errors_exit_through_argparse(cli):
    with pytest.raises(SystemExit) as info:
        cli("teleport")
    assert info.value.code == 2
