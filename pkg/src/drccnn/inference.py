"""Sliding-window inference over full layouts, mask emission, benchmarking.

The scan crops the layout exactly as the dataset generator does (same window,
stride, and edge clamping), rasterizes each window, classifies it, and keeps
the window coordinates so flagged labels can be painted back onto a layout
mask at window granularity.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .dataset import (
    ExtentTooSmall,
    rasterize,
    rules_for_label,
    window_origins,
    write_pgm,
    RULE_DIGIT,
)
from .geometry import GridIndex, Layout, ParseError, RuleSet, run_drc
from .nn.layers import ShapeMismatch
from .nn.model import Model
from .nn.train import forward_batch


@dataclass
class LayoutScanReport:
    layout_name: str
    model_id: str
    window: int
    stride: int
    origins: list[tuple[int, int]]
    labels: list[str]
    probs: np.ndarray            # (n_windows, d)
    duration_ms: float

    def flagged(self) -> list[tuple[tuple[int, int], str]]:
        return [(o, l) for o, l in zip(self.origins, self.labels) if l != "NDRC"]


def scan_layout(
    model: Model,
    layout: Layout,
    window: int = 200,
    stride: int = 150,
    batch_size: int = 64,
) -> LayoutScanReport:
    """Classify every window of the layout; duration includes rasterization."""
    if model.spec.input_hw != (window, window):
        raise ShapeMismatch(
            f"model expects {model.spec.input_hw} input, window is {window}x{window}"
        )
    t0 = time.perf_counter()
    origins = window_origins(layout.extent, window, stride)
    grid = GridIndex(layout.shapes, cell=64)
    n = len(origins)
    d = model.spec.output_dim
    probs = np.empty((n, d), dtype=np.float32)
    for lo in range(0, n, batch_size):
        chunk = origins[lo : lo + batch_size]
        x = np.stack([rasterize(layout, o, window, grid) for o in chunk]).astype(np.float32)
        probs[lo : lo + len(chunk)] = forward_batch(model, x, train=False)
    labels = [model.classes[k] for k in probs.argmax(axis=1)]
    duration_ms = (time.perf_counter() - t0) * 1000.0
    return LayoutScanReport(
        layout_name=layout.name,
        model_id=model.fingerprint(),
        window=window,
        stride=stride,
        origins=origins,
        labels=labels,
        probs=probs,
        duration_ms=duration_ms,
    )


def emit_mask(report: LayoutScanReport, extent: tuple[int, int]) -> np.ndarray:
    """Rule-bitmask raster over the extent: each flagged window paints the
    bit(s) of its predicted rules across its footprint; overlaps union.

    Returned values are 3-bit masks (bit k-1 = rule DRCk); multiply by 32 for
    the 8-bit graymap encoding."""
    ex, ey = extent
    mask = np.zeros((ey, ex), dtype=np.uint8)
    w = report.window
    for (ox, oy), label in zip(report.origins, report.labels):
        if label == "NDRC":
            continue
        if not (0 <= ox <= ex - w and 0 <= oy <= ey - w):
            raise ValueError(f"window origin {(ox, oy)} outside extent {extent}")
        bits = 0
        for rule in rules_for_label(label):
            bits |= 1 << (RULE_DIGIT[rule] - 1)
        mask[oy : oy + w, ox : ox + w] |= np.uint8(bits)
    return mask


def write_mask_pgm(mask: np.ndarray, path, comment: str | None = None) -> None:
    write_pgm(path, (mask * np.uint8(32)).astype(np.uint8), comment)


@dataclass
class BenchReport:
    layout_name: str
    cnn_ms: float
    oracle_ms: float
    ratio: float            # oracle time / cnn time
    windows: int
    reps: int
    oracle_violations: int
    cnn_flagged: int


def benchmark(
    model: Model,
    layout: Layout,
    rules: RuleSet | None = None,
    reps: int = 3,
    window: int = 200,
    stride: int = 150,
) -> BenchReport:
    """Median-of-reps timing of the CNN scan vs the boolean oracle on one
    layout.  No pass/fail judgment on the ratio; it is a measurement."""
    rules = rules or RuleSet()
    cnn_times = []
    oracle_times = []
    scan = None
    oracle = None
    for _ in range(reps):
        scan = scan_layout(model, layout, window, stride)
        cnn_times.append(scan.duration_ms)
        oracle = run_drc(layout, rules)
        oracle_times.append(oracle.duration_ms)
    cnn_ms = statistics.median(cnn_times)
    oracle_ms = statistics.median(oracle_times)
    return BenchReport(
        layout_name=layout.name,
        cnn_ms=cnn_ms,
        oracle_ms=oracle_ms,
        ratio=oracle_ms / cnn_ms if cnn_ms > 0 else 0.0,
        windows=len(scan.origins),
        reps=reps,
        oracle_violations=len(oracle.violations),
        cnn_flagged=len(scan.flagged()),
    )


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def write_scan_report(report: LayoutScanReport, path) -> None:
    d = report.probs.shape[1] if len(report.probs) else 0
    lines = [
        "# drccnn-scan v1",
        f"# layout: {report.layout_name}",
        f"# model: {report.model_id}",
        f"# window: {report.window}",
        f"# stride: {report.stride}",
        f"# duration_ms: {report.duration_ms:.3f}",
        "origin_x,origin_y,label," + ",".join(f"p_{k}" for k in range(d)),
    ]
    for (ox, oy), label, p in zip(report.origins, report.labels, report.probs):
        lines.append(f"{ox},{oy},{label}," + ",".join(f"{v:.6f}" for v in p))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_scan_report(path) -> LayoutScanReport:
    meta: dict[str, str] = {}
    origins: list[tuple[int, int]] = []
    labels: list[str] = []
    rows: list[list[float]] = []
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    k, v = body.split(":", 1)
                    meta[k.strip()] = v.strip()
                continue
            if line.startswith("origin_x,"):
                continue
            parts = line.split(",")
            if len(parts) < 4:
                raise ParseError("scan row needs origin, label, probabilities", ln)
            origins.append((int(parts[0]), int(parts[1])))
            labels.append(parts[2])
            rows.append([float(v) for v in parts[3:]])
    return LayoutScanReport(
        layout_name=meta.get("layout", ""),
        model_id=meta.get("model", ""),
        window=int(meta.get("window", 200)),
        stride=int(meta.get("stride", 150)),
        origins=origins,
        labels=labels,
        probs=np.array(rows, dtype=np.float32) if rows else np.zeros((0, 0), np.float32),
        duration_ms=float(meta.get("duration_ms", 0.0)),
    )


def write_bench_report(report: BenchReport, path) -> None:
    lines = [
        "# drccnn-bench v1",
        f"layout: {report.layout_name}",
        f"cnn_ms: {report.cnn_ms:.3f}",
        f"oracle_ms: {report.oracle_ms:.3f}",
        f"ratio: {report.ratio:.3f}",
        f"windows: {report.windows}",
        f"reps: {report.reps}",
        f"oracle_violations: {report.oracle_violations}",
        f"cnn_flagged: {report.cnn_flagged}",
    ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
