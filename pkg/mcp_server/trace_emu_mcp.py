#!/usr/bin/env python3
"""MCP Server for the LEO trace-driven emulation workflow.

Exposes the workflow stages (forwarding state, full simulation, trace
generation, replay, validation) as tools over the Model Context Protocol.
"""

from __future__ import annotations

import asyncio
import json
import logging
import sys
from contextlib import asynccontextmanager
from pathlib import Path

from mcp.server.fastmcp import FastMCP
from pydantic import BaseModel, Field, field_validator

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from leotrace import tracefile, workflow
from leotrace.config import get_config, setup_logging
from leotrace.errors import ConfigError, OffsetRangeError, TraceFormatError, TraceValidationError
from leotrace.replay import EndPolicy, StartMode
from leotrace.scenario import Scenario, WorkloadKind, load_scenario

# ============================================================================
# Logging Configuration
# ============================================================================

setup_logging(get_config())
logger = logging.getLogger(__name__)

logger.info("LEO trace emulation MCP Server starting...")
logger.info(f"Python: {sys.version}")

# ============================================================================
# Global State
# ============================================================================

# Stages are CPU-bound; one at a time.
_stage_lock = asyncio.Lock()

# ============================================================================
# Input Models
# ============================================================================


class ScenarioInput(BaseModel):
    """Input naming a scenario file."""
    scenario_path: str = Field(..., min_length=1)
    out_dir: str | None = Field(default=None)
    seed: int | None = Field(default=None, ge=0, lt=2**64)

    @field_validator("scenario_path")
    @classmethod
    def validate_path(cls, v: str) -> str:
        path = Path(v)
        if path.suffix.lower() != ".json":
            raise ValueError("Scenario must be a .json file")
        if not path.exists():
            raise ValueError(f"File not found: {v}")
        return str(path.resolve())


class GenStateInput(ScenarioInput):
    """Input for computing the forwarding-state timeline."""
    workers: int = Field(default=1, ge=1, le=64)


class SimulateInput(ScenarioInput):
    """Input for a full simulation run."""
    workload: WorkloadKind | None = Field(default=None)


class ReplayInput(ScenarioInput):
    """Input for a virtual-time replay."""
    fwd_trace: str = Field(..., min_length=1)
    ret_trace: str = Field(..., min_length=1)
    workload: WorkloadKind | None = Field(default=None)
    start_mode: StartMode | None = Field(default=None)
    delay_offset_us: int | None = Field(default=None)
    end_policy: EndPolicy | None = Field(default=None)

    @field_validator("fwd_trace", "ret_trace")
    @classmethod
    def validate_trace(cls, v: str) -> str:
        if not Path(v).exists():
            raise ValueError(f"File not found: {v}")
        return str(Path(v).resolve())


class ValidateInput(ScenarioInput):
    """Input for a closed-loop validation."""
    repetitions: int | None = Field(default=None, ge=1, le=20)


class TraceInfoInput(BaseModel):
    """Input for summarizing a Trace File."""
    trace_path: str = Field(..., min_length=1)

# ============================================================================
# Helper Functions
# ============================================================================


def format_error(e: Exception) -> str:
    """Format exception as user-friendly error message."""
    msg = str(e)
    if isinstance(e, TraceFormatError):
        return f"Trace format error: {msg}"
    elif isinstance(e, TraceValidationError):
        return f"Trace validation error: {msg}"
    elif isinstance(e, OffsetRangeError):
        return f"Delay offset out of range: {msg}"
    elif isinstance(e, ConfigError):
        return f"Configuration error: {msg}"
    elif "not found" in msg.lower():
        return f"Not found: {msg}"
    return f"Error: {msg}"


def _load(params: ScenarioInput) -> tuple[Scenario, Path]:
    scenario = workflow.with_seed(load_scenario(params.scenario_path), params.seed)
    out = Path(params.out_dir) if params.out_dir else get_config().out_dir
    return scenario, out


async def run_stage(fn, *args):
    """Run a blocking workflow stage in the thread executor."""
    async with _stage_lock:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(None, fn, *args)

# ============================================================================
# Lifespan Management
# ============================================================================


@asynccontextmanager
async def lifespan(app):
    """Log server lifecycle."""
    config = get_config()
    logger.info(f"{config.server_name} v{config.server_version} starting up...")
    logger.info(f"Output directory: {config.out_dir}")
    yield
    logger.info("Server shutting down...")

# ============================================================================
# MCP Server Setup
# ============================================================================

mcp = FastMCP("trace_emu_mcp", lifespan=lifespan)

# ============================================================================
# Workflow Tools
# ============================================================================


@mcp.tool()
async def trace_emu_gen_state(params: GenStateInput) -> str:
    """Compute the forwarding-state timeline of a scenario.

    Args:
        scenario_path: Path to the scenario .json file
        workers: Threads used to compute epochs (default: 1)

    Example:
        scenario_path="scenarios/desk.json"
    """
    try:
        scenario, out = _load(params)
        path, epochs = await run_stage(workflow.gen_state, scenario, out, params.workers)
        return f"✓ {epochs} forwarding states written\nFile: {path}"
    except Exception as e:
        return format_error(e)


@mcp.tool()
async def trace_emu_simulate(params: SimulateInput) -> str:
    """Run the full simulation with background traffic and the endpoint workload.

    Args:
        scenario_path: Path to the scenario .json file
        workload: speedtest, ping, both or none (default: the scenario's)
    """
    try:
        scenario, out = _load(params)
        m, written = await run_stage(workflow.simulate, scenario, out, params.workload)
        files = "\n".join(f"  {p}" for p in written)
        return f"✓ Simulation complete\n```json\n{json.dumps(m.stats, indent=2)}\n```\nFiles:\n{files}"
    except Exception as e:
        return format_error(e)


@mcp.tool()
async def trace_emu_gen_traces(params: ScenarioInput) -> str:
    """Generate the forward and return Trace Files of a scenario."""
    try:
        scenario, out = _load(params)
        fwd, ret = await run_stage(workflow.gen_traces, scenario, out)
        return f"✓ Trace files written\nForward: {fwd}\nReturn: {ret}"
    except Exception as e:
        return format_error(e)


@mcp.tool()
async def trace_emu_replay(params: ReplayInput) -> str:
    """Replay a trace pair in virtual time with the scenario's workload.

    Args:
        scenario_path: Scenario that supplies endpoints and workload settings
        fwd_trace: Forward Trace File
        ret_trace: Return Trace File
        start_mode: immediate or trigger (default: the scenario's)
        delay_offset_us: Added to every recorded delay (default: the scenario's)
    """
    try:
        scenario, out = _load(params)
        fwd, ret = tracefile.read(params.fwd_trace), tracefile.read(params.ret_trace)
        overrides = {
            key: value
            for key, value in (
                ("start_mode", params.start_mode),
                ("delay_offset_us", params.delay_offset_us),
                ("end_policy", params.end_policy),
            )
            if value is not None
        }
        if overrides:
            scenario = scenario.model_copy(update={"replay": scenario.replay.model_copy(update=overrides)})
        m = await run_stage(workflow.replay_scenario, scenario, fwd, ret, params.workload)
        written = workflow.write_measurements(
            m, workflow.stage_dir(out, scenario, "replay"),
            scenario.simulation.duration_s, scenario.validation.goodput_bin_s,
        )
        files = "\n".join(f"  {p}" for p in written)
        return f"✓ Replay complete\n```json\n{json.dumps(m.stats, indent=2)}\n```\nFiles:\n{files}"
    except Exception as e:
        return format_error(e)


@mcp.tool()
async def trace_emu_validate(params: ValidateInput) -> str:
    """Compare full simulation against replay of its own traces.

    Args:
        scenario_path: Path to the scenario .json file
        repetitions: Replays with different loss seeds (default: the scenario's)
    """
    try:
        scenario, out = _load(params)
        if params.repetitions is not None:
            validation = scenario.validation.model_copy(update={"repetitions": params.repetitions})
            scenario = scenario.model_copy(update={"validation": validation})
        report = await run_stage(workflow.validate, scenario, out)
        mark = "✓" if report.passed else "✗"
        return f"{mark} Validation of {scenario.name}\n{report.as_text()}"
    except Exception as e:
        return format_error(e)


@mcp.tool()
async def trace_emu_flows_gen(params: ScenarioInput) -> str:
    """Generate the background flow list and its offered-load profile."""
    try:
        scenario, out = _load(params)
        flows_path, load_path, n = await run_stage(workflow.flows_gen, scenario, out)
        return f"✓ {n} flows written to {flows_path}\nLoad profile: {load_path}"
    except Exception as e:
        return format_error(e)


@mcp.tool()
async def trace_emu_inspect_trace(params: TraceInfoInput) -> str:
    """Summarize a Trace File: duration, delay and rate ranges, loss, route changes."""
    try:
        path = Path(params.trace_path)
        if not path.exists():
            raise ConfigError(f"trace file not found: {path}")
        tf = tracefile.read(path)
        summary = tracefile.summarize(tf)
        return f"{tf.scenario} ({tf.direction.value}, {tf.resolution_ms} ms, seed {tf.seed})\n{summary.as_text()}"
    except Exception as e:
        return format_error(e)

# ============================================================================
# Main Entry Point
# ============================================================================

if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="LEO Trace Emulation MCP Server")
    parser.add_argument(
        "--test-mode",
        action="store_true",
        help="Run in test mode (keeps server alive for manual testing)"
    )
    args = parser.parse_args()

    if args.test_mode:

        async def test_mode():
            logger.info("Starting in TEST MODE")
            logger.info("Server will stay alive until Ctrl+C")
            try:
                while True:
                    await asyncio.sleep(1)
            except KeyboardInterrupt:
                logger.info("Stopped by user")

        try:
            asyncio.run(test_mode())
        except Exception as e:
            logger.error(f"Test mode error: {e}", exc_info=True)
            sys.exit(1)
    else:
        # Normal MCP mode - expects stdin/stdout communication
        try:
            logger.info("Starting MCP server (Ctrl+C to exit)")
            mcp.run()
        except KeyboardInterrupt:
            logger.info("Stopped by user")
        except Exception as e:
            logger.error(f"Server crashed: {e}", exc_info=True)
            sys.exit(1)
        finally:
            logger.info("Server exiting")
