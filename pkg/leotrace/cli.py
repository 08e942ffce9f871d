"""Command-line entry point: `leotrace <command> [options]`.

Exit codes: 0 success, 2 configuration or usage error, 3 validation failure,
4 any other runtime error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path

from leotrace import tracefile, workflow
from leotrace.config import get_config, reload_config, setup_logging
from leotrace.errors import ConfigError, OffsetRangeError, TraceFormatError, TraceValidationError, UsageError
from leotrace.relay import Endpoint, parse_address, run_realtime_relay
from leotrace.replay import ChannelConfig, EndPolicy, StartMode, open_pair
from leotrace.scenario import Scenario, WorkloadKind, load_scenario, scenario_schema
from leotrace.topology import NodeId

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


def _common(parser: argparse.ArgumentParser, scenario_required: bool = True) -> None:
    parser.add_argument("--scenario", required=scenario_required, type=Path, help="Scenario JSON file")
    parser.add_argument("--out", type=Path, default=None, help="Output directory (default: [output] out_dir)")
    parser.add_argument("--seed", type=int, default=None, help="Override traffic and loss seeds (u64)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leotrace", description="LEO constellation trace-driven emulation toolkit")
    parser.add_argument("--config", type=Path, default=None, help="Path to config.toml")
    parser.add_argument("--log-level", default=None, help="Override logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-state", help="Compute the forwarding-state timeline")
    _common(p)
    p.add_argument("--workers", type=int, default=1, help="Threads used to compute epochs")

    p = sub.add_parser("simulate", help="Full simulation with background traffic and workloads")
    _common(p)
    p.add_argument("--workload", choices=[k.value for k in WorkloadKind], default=None)

    p = sub.add_parser("gen-traces", help="Generate forward and return Trace Files")
    _common(p)

    p = sub.add_parser("replay", help="Replay a trace pair in virtual time or as a live relay")
    _common(p, scenario_required=False)
    p.add_argument("--fwd-trace", type=Path, required=True)
    p.add_argument("--ret-trace", type=Path, required=True)
    p.add_argument("--mode", choices=["immediate", "trigger"], default="immediate")
    p.add_argument("--delay-offset-us", type=int, default=0)
    p.add_argument("--end-policy", choices=[e.value for e in EndPolicy], default=EndPolicy.HOLD_LAST.value)
    p.add_argument("--bdp-in-queue", action="store_true", help="Add the recorded BDP to the queue capacity")
    p.add_argument("--workload", choices=[k.value for k in WorkloadKind], default=WorkloadKind.BOTH.value)
    p.add_argument("--realtime", action="store_true", help="Run the wall-clock UDP relay instead")
    p.add_argument("--duration", type=float, default=None, help="Seconds to run (default: trace length)")
    p.add_argument("--listen-a", default=None)
    p.add_argument("--listen-b", default=None)
    p.add_argument("--target-a", default=None)
    p.add_argument("--target-b", default=None)

    p = sub.add_parser("validate", help="Compare full simulation against replay")
    _common(p)
    p.add_argument("--repetitions", type=int, default=None, help="Extra replays with different loss seeds")

    flows = sub.add_parser("flows", help="Background flow tools")
    flows_sub = flows.add_subparsers(dest="flows_command", required=True)
    p = flows_sub.add_parser("gen", help="Generate the background flow list")
    _common(p)

    p = sub.add_parser("trace-info", help="Summarize a Trace File")
    p.add_argument("trace", type=Path)

    sub.add_parser("schema", help="Print the scenario JSON schema")
    return parser


def _scenario(args: argparse.Namespace) -> Scenario:
    return workflow.with_seed(load_scenario(args.scenario), args.seed)


def _out(args: argparse.Namespace) -> Path:
    return args.out if args.out is not None else get_config().out_dir


def cmd_gen_state(args: argparse.Namespace) -> int:
    path, epochs = workflow.gen_state(_scenario(args), _out(args), workers=args.workers)
    print(f"✓ {epochs} forwarding states written to {path}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    kind = WorkloadKind(args.workload) if args.workload else None
    m, written = workflow.simulate(_scenario(args), _out(args), kind)
    print(f"✓ Simulation complete: {m.stats}")
    for path in written:
        print(f"  {path}")
    return EXIT_OK


def cmd_gen_traces(args: argparse.Namespace) -> int:
    fwd, ret = workflow.gen_traces(_scenario(args), _out(args))
    print(f"✓ Trace files written:\n  {fwd}\n  {ret}")
    return EXIT_OK


def _endpoint(side: str, listen: str | None, target: str | None) -> Endpoint:
    endpoint = Endpoint.from_config(side)
    if listen:
        endpoint.listen = parse_address(listen)
    if target is not None:
        endpoint.target = parse_address(target)
    return endpoint


def cmd_replay(args: argparse.Namespace) -> int:
    for path in (args.fwd_trace, args.ret_trace):
        if not path.exists():
            raise ConfigError(f"trace file not found: {path}")
    fwd, ret = tracefile.read(args.fwd_trace), tracefile.read(args.ret_trace)
    scenario = _scenario(args) if args.scenario else None
    mode = StartMode(args.mode)
    end_policy = EndPolicy(args.end_policy)
    seed = args.seed if args.seed is not None else (scenario.seeds.loss if scenario else 0)

    if args.realtime:
        common = dict(start_mode=mode, delay_offset_us=args.delay_offset_us, end_policy=end_policy, bdp_in_queue=args.bdp_in_queue)
        pair = open_pair(ChannelConfig(fwd, loss_seed=seed, **common), ChannelConfig(ret, loss_seed=seed + 1, **common))
        endpoint_a = _endpoint("a", args.listen_a, args.target_a)
        endpoint_b = _endpoint("b", args.listen_b, args.target_b)
        duration = args.duration if args.duration is not None else fwd.duration_ms / 1000.0
        stats = asyncio.run(run_realtime_relay(pair, endpoint_a, endpoint_b, duration))
        print(json.dumps(stats.to_dict(), indent=2))
        return EXIT_OK

    if scenario is not None:
        a, b = scenario.endpoint_nodes
        m = workflow.build_measurements(WorkloadKind(args.workload), a, b, scenario.ping, scenario.speedtest)
        bin_s = scenario.validation.goodput_bin_s
        out = workflow.stage_dir(_out(args), scenario, "replay")
    else:
        a, b = NodeId.gs(0), NodeId.gs(1)
        m = workflow.build_measurements(WorkloadKind(args.workload), a, b)
        bin_s = 0.1
        out = _out(args) / fwd.scenario / "replay"
        out.mkdir(parents=True, exist_ok=True)
    duration = args.duration if args.duration is not None else fwd.duration_ms / 1000.0
    workflow.replay_traces(
        fwd, ret, m, a, b,
        start_mode=mode,
        delay_offset_us=args.delay_offset_us,
        loss_seed=seed,
        end_policy=end_policy,
        bdp_in_queue=args.bdp_in_queue,
        duration_s=duration,
    )
    written = workflow.write_measurements(m, out, duration, bin_s)
    print(f"✓ Replay complete: {json.dumps(m.stats)}")
    for path in written:
        print(f"  {path}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    if args.repetitions is not None:
        validation = scenario.validation.model_copy(update={"repetitions": args.repetitions})
        scenario = scenario.model_copy(update={"validation": validation})
    report = workflow.validate(scenario, _out(args))
    print(report.as_text())
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_flows_gen(args: argparse.Namespace) -> int:
    flows_path, load_path, n = workflow.flows_gen(_scenario(args), _out(args))
    print(f"✓ {n} flows written to {flows_path}\n  load profile: {load_path}")
    return EXIT_OK


def cmd_trace_info(args: argparse.Namespace) -> int:
    if not args.trace.exists():
        raise ConfigError(f"trace file not found: {args.trace}")
    tf = tracefile.read(args.trace)
    print(f"{tf.scenario} ({tf.direction.value}, {tf.resolution_ms} ms, seed {tf.seed})")
    print(tracefile.summarize(tf).as_text())
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    print(json.dumps(scenario_schema(), indent=2, default=str))
    return EXIT_OK


COMMANDS = {
    "gen-state": cmd_gen_state,
    "simulate": cmd_simulate,
    "gen-traces": cmd_gen_traces,
    "replay": cmd_replay,
    "validate": cmd_validate,
    "trace-info": cmd_trace_info,
    "schema": cmd_schema,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = reload_config(args.config) if args.config else get_config()
    setup_logging(config, args.log_level)

    handler = cmd_flows_gen if args.command == "flows" else COMMANDS[args.command]
    try:
        return handler(args)
    except (ConfigError, UsageError, TraceFormatError, OffsetRangeError) as e:
        logger.error(f"{e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceValidationError as e:
        logger.error(f"Trace validation failed: {e}")
        print(f"Validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        logger.error(f"Command {args.command} failed: {e}", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
