"""Trace File CSV format: read, write, validate, offset, summarize."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import TextIO

from leotrace.errors import OffsetRangeError, TraceFormatError, TraceValidationError

logger = logging.getLogger(__name__)

SENTINEL = -1
FORMAT_VERSION = "1"
COLUMNS = ["t_ms", "delay_us", "rate_bps", "queue_capacity_pkts", "loss_ratio", "route_id", "bdp_pkts"]
METADATA_KEYS = ("format", "scenario", "direction", "resolution_ms", "seed")
# loss_ratio is written with 3 decimals
LOSS_SCALE = 1000


def quantize_loss(ratio: float) -> float:
    """Round a loss ratio half-up to the precision the file stores."""
    return math.floor(ratio * LOSS_SCALE + 0.5) / LOSS_SCALE


class Direction(str, Enum):
    FORWARD = "forward"
    RETURN = "return"


@dataclass(frozen=True)
class TraceRecord:
    t_ms: int
    delay_us: int
    rate_bps: int
    queue_capacity_pkts: int
    loss_ratio: float
    route_id: int
    bdp_pkts: int = SENTINEL

    @property
    def unmeasured(self) -> bool:
        return self.delay_us == SENTINEL


@dataclass(frozen=True)
class TraceFile:
    scenario: str
    direction: Direction
    resolution_ms: int
    seed: int
    records: tuple[TraceRecord, ...] = field(default_factory=tuple)

    @property
    def duration_ms(self) -> int:
        return len(self.records) * self.resolution_ms

    def __len__(self) -> int:
        return len(self.records)


def validate(tf: TraceFile) -> None:
    """Raise TraceValidationError if any invariant is broken."""
    if tf.resolution_ms <= 0:
        raise TraceValidationError(f"resolution_ms must be positive, got {tf.resolution_ms}")
    for i, r in enumerate(tf.records):
        expected = i * tf.resolution_ms
        if r.t_ms != expected:
            raise TraceValidationError(f"record {i}: t_ms {r.t_ms} breaks the {tf.resolution_ms} ms grid (expected {expected})")
        if not 0.0 <= r.loss_ratio <= 1.0:
            raise TraceValidationError(f"record {i}: loss_ratio {r.loss_ratio} outside [0, 1]")
        if abs(r.loss_ratio * LOSS_SCALE - round(r.loss_ratio * LOSS_SCALE)) > 1e-6:
            raise TraceValidationError(f"record {i}: loss_ratio {r.loss_ratio} has more than 3 decimals")
        for name in ("delay_us", "rate_bps", "queue_capacity_pkts", "bdp_pkts"):
            value = getattr(r, name)
            if value < 0 and value != SENTINEL:
                raise TraceValidationError(f"record {i}: negative {name} {value}")
        if not 0 <= r.route_id < 2**64:
            raise TraceValidationError(f"record {i}: route_id out of u64 range")


def _to_text(tf: TraceFile) -> str:
    out = io.StringIO(newline="")
    meta = {
        "format": FORMAT_VERSION,
        "scenario": tf.scenario,
        "direction": tf.direction.value,
        "resolution_ms": tf.resolution_ms,
        "seed": tf.seed,
    }
    for key in METADATA_KEYS:
        out.write(f"# {key}={meta[key]}\n")
    out.write(",".join(COLUMNS) + "\n")
    for r in tf.records:
        out.write(
            f"{r.t_ms},{r.delay_us},{r.rate_bps},{r.queue_capacity_pkts},"
            f"{r.loss_ratio:.3f},{r.route_id:x},{r.bdp_pkts}\n"
        )
    return out.getvalue()


def write(tf: TraceFile, sink: TextIO | str | Path) -> int:
    """Write tf as UTF-8 CSV with LF endings. Returns bytes written."""
    validate(tf)
    text = _to_text(tf)
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info(f"Wrote {len(tf)} {tf.direction.value} records to {sink}")
    else:
        sink.write(text)
    return len(text.encode("utf-8"))


def _parse_int(text: str, name: str, line: int | None, base: int = 10) -> int:
    try:
        return int(text, base)
    except ValueError:
        raise TraceFormatError(f"bad {name} {text!r}", line) from None


def read(source: TextIO | str | Path) -> TraceFile:
    """Parse and validate a Trace File."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as f:
            return read(f)

    meta: dict[str, str] = {}
    records: list[TraceRecord] = []
    header_seen = False
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line:
            continue
        if line.startswith("#"):
            if header_seen:
                raise TraceFormatError("metadata after header row", lineno)
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise TraceFormatError(f"metadata line must be '# key=value': {line!r}", lineno)
            meta[key.strip()] = value.strip()
            continue
        if not header_seen:
            if line.split(",") != COLUMNS:
                raise TraceFormatError(f"missing header row {','.join(COLUMNS)}", lineno)
            header_seen = True
            continue
        cells = line.split(",")
        if len(cells) != len(COLUMNS):
            raise TraceFormatError(f"expected {len(COLUMNS)} columns, got {len(cells)}", lineno)
        try:
            loss = float(cells[4])
        except ValueError:
            raise TraceFormatError(f"bad loss_ratio {cells[4]!r}", lineno) from None
        records.append(TraceRecord(
            t_ms=_parse_int(cells[0], "t_ms", lineno),
            delay_us=_parse_int(cells[1], "delay_us", lineno),
            rate_bps=_parse_int(cells[2], "rate_bps", lineno),
            queue_capacity_pkts=_parse_int(cells[3], "queue_capacity_pkts", lineno),
            loss_ratio=loss,
            route_id=_parse_int(cells[5], "route_id", lineno, base=16),
            bdp_pkts=_parse_int(cells[6], "bdp_pkts", lineno),
        ))
    if not header_seen:
        raise TraceFormatError("missing header row")
    for key in METADATA_KEYS:
        if key not in meta:
            raise TraceFormatError(f"missing metadata '{key}'")
    try:
        direction = Direction(meta["direction"])
    except ValueError:
        raise TraceFormatError(f"unknown direction {meta['direction']!r}") from None
    tf = TraceFile(
        scenario=meta["scenario"],
        direction=direction,
        resolution_ms=_parse_int(meta["resolution_ms"], "resolution_ms", None),
        seed=_parse_int(meta["seed"], "seed", None),
        records=tuple(records),
    )
    validate(tf)
    return tf


def apply_delay_offset(tf: TraceFile, offset_us: int) -> TraceFile:
    """Shift every measured delay by offset_us; sentinels stay untouched."""
    if offset_us == 0:
        return tf
    shifted = []
    for r in tf.records:
        if r.unmeasured:
            shifted.append(r)
            continue
        delay = r.delay_us + offset_us
        if delay < 0:
            raise OffsetRangeError(f"offset {offset_us} us makes the delay at t_ms={r.t_ms} negative ({delay} us)")
        shifted.append(replace(r, delay_us=delay))
    return replace(tf, records=tuple(shifted))


@dataclass(frozen=True)
class TraceSummary:
    records: int
    duration_ms: int
    mean_delay_us: float | None
    min_delay_us: int | None
    max_delay_us: int | None
    min_rate_bps: int | None
    max_rate_bps: int | None
    mean_loss_ratio: float
    loss_periods_ms: tuple[tuple[int, int], ...]
    route_changes: int

    def as_text(self) -> str:
        lines = [
            f"records: {self.records} ({self.duration_ms / 1000:.2f}s)",
            f"delay: mean {_fmt(self.mean_delay_us, 1000)} ms, min {_fmt(self.min_delay_us, 1000)} ms, max {_fmt(self.max_delay_us, 1000)} ms",
            f"rate: min {_fmt(self.min_rate_bps, 1e6)} Mbps, max {_fmt(self.max_rate_bps, 1e6)} Mbps",
            f"mean loss ratio: {self.mean_loss_ratio:.4f}",
            f"route changes: {self.route_changes}",
            f"full-loss periods: {len(self.loss_periods_ms)}",
        ]
        for start, end in self.loss_periods_ms:
            lines.append(f"  {start / 1000:.2f}s - {end / 1000:.2f}s")
        return "\n".join(lines)


def _fmt(value: float | None, scale: float) -> str:
    return "n/a" if value is None else f"{value / scale:.3f}"


def summarize(tf: TraceFile) -> TraceSummary:
    measured = [r for r in tf.records if not r.unmeasured]
    delays = [r.delay_us for r in measured]
    rates = [r.rate_bps for r in measured if r.rate_bps != SENTINEL]

    periods: list[tuple[int, int]] = []
    start: int | None = None
    for r in tf.records:
        if r.loss_ratio >= 1.0 and start is None:
            start = r.t_ms
        elif r.loss_ratio < 1.0 and start is not None:
            periods.append((start, r.t_ms))
            start = None
    if start is not None:
        periods.append((start, tf.duration_ms))

    changes = sum(1 for a, b in zip(measured, measured[1:]) if a.route_id != b.route_id)
    return TraceSummary(
        records=len(tf.records),
        duration_ms=tf.duration_ms,
        mean_delay_us=sum(delays) / len(delays) if delays else None,
        min_delay_us=min(delays) if delays else None,
        max_delay_us=max(delays) if delays else None,
        min_rate_bps=min(rates) if rates else None,
        max_rate_bps=max(rates) if rates else None,
        mean_loss_ratio=sum(r.loss_ratio for r in tf.records) / len(tf.records) if tf.records else 0.0,
        loss_periods_ms=tuple(periods),
        route_changes=changes,
    )
