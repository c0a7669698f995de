"""Bandwidth-based roofline accounting: MBU/MFU, boundedness, reports.

Byte and flop counts in an OpProfile are the algorithmic minimum an
operator must move (each input read once, each output written once) as
declared by the instrumented operator, not measured hardware traffic;
achieved-rate metrics divide those by wall time and the machine peaks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import telemetry


@dataclass(frozen=True)
class HardwareSpec:
    """Machine peaks: memory bandwidth in bytes/s, compute in flops/s."""

    name: str
    peak_bandwidth: float
    peak_flops: float

    def __post_init__(self):
        if self.peak_bandwidth <= 0 or self.peak_flops <= 0:
            raise ValueError("hardware peaks must be > 0")

    @classmethod
    def from_json_file(cls, path) -> "HardwareSpec":
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
        return cls(
            name=d["name"],
            peak_bandwidth=float(d["peak_bandwidth_gbps"]) * 1e9,
            peak_flops=float(d["peak_tflops"]) * 1e12,
        )


# A modest desktop-class default so reports work out of the box.
DEFAULT_HARDWARE = HardwareSpec("desktop-ddr4", peak_bandwidth=40e9, peak_flops=1e12)


@dataclass
class OpProfile:
    """One operator's declared traffic and measured wall time."""

    name: str
    bytes_read: int
    bytes_written: int
    flops: int
    elapsed: float
    dispatches: int = 1

    def __post_init__(self):
        if self.elapsed <= 0:
            raise ValueError("elapsed must be > 0")
        if min(self.bytes_read, self.bytes_written, self.flops) < 0:
            raise ValueError("byte/flop counts must be >= 0")

    @property
    def total_bytes(self) -> int:
        return self.bytes_read + self.bytes_written


def mbu(p: OpProfile, hw: HardwareSpec) -> float:
    """Achieved bytes/s over peak bandwidth (0 .. 1+, unitless)."""
    telemetry.bump("roofline.mbu")
    return (p.total_bytes / p.elapsed) / hw.peak_bandwidth


def mfu(p: OpProfile, hw: HardwareSpec) -> float:
    """Achieved flops/s over peak flops."""
    telemetry.bump("roofline.mfu")
    return (p.flops / p.elapsed) / hw.peak_flops


def arithmetic_intensity(p: OpProfile) -> float:
    if p.total_bytes == 0:
        raise ValueError("arithmetic intensity undefined for zero bytes moved")
    return p.flops / p.total_bytes


def bandwidth_intensity(p: OpProfile) -> float:
    """Bytes moved per flop; the x-axis of the bandwidth roofline."""
    ai = arithmetic_intensity(p)
    return float("inf") if ai == 0 else 1.0 / ai


MEMORY_BOUND = "memory_bound"
COMPUTE_BOUND = "compute_bound"


def classify(p: OpProfile, hw: HardwareSpec) -> str:
    """memory_bound if arithmetic intensity is below the ridge point, else
    compute_bound (ties classify compute_bound)."""
    telemetry.bump("roofline.classify")
    ai = arithmetic_intensity(p)
    ridge = hw.peak_flops / hw.peak_bandwidth
    return MEMORY_BOUND if ai < ridge else COMPUTE_BOUND


REPORT_COLUMNS = (
    "op",
    "dispatches",
    "bytes_read",
    "bytes_written",
    "flops",
    "elapsed_s",
    "mbu_pct",
    "mfu_pct",
    "bound",
)


def _report_row(p: OpProfile, hw: HardwareSpec) -> list:
    return [
        p.name,
        str(p.dispatches),
        str(p.bytes_read),
        str(p.bytes_written),
        str(p.flops),
        f"{p.elapsed:.6g}",
        f"{100.0 * mbu(p, hw):.2f}",
        f"{100.0 * mfu(p, hw):.2f}",
        classify(p, hw) if p.total_bytes else "n/a",
    ]


def emit_report(profiles, hw: HardwareSpec, format: str = "csv") -> str:
    """Render one row per operator profile as CSV or a markdown table."""
    telemetry.bump("roofline.emit_report")
    rows = [_report_row(p, hw) for p in profiles]
    if format == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        lines += [",".join(r) for r in rows]
        return "\n".join(lines) + "\n"
    if format == "markdown":
        lines = [
            "| " + " | ".join(REPORT_COLUMNS) + " |",
            "|" + "|".join(["---"] * len(REPORT_COLUMNS)) + "|",
        ]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        lines.append("")
        lines.append(
            f"byte/flop counts are algorithmic minimums; peaks: {hw.name} "
            f"({hw.peak_bandwidth / 1e9:.0f} GB/s, {hw.peak_flops / 1e12:.2f} Tflop/s)"
        )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {format!r}")
