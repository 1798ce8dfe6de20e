"""Synthetic labeled-clip dataset generation.

Pipeline per variant: synthesize a DRC-clean seed layout, inject randomized
rule violations, re-derive ground truth with the oracle (the injection plan is
never trusted), crop 200x200 nm windows at 150 nm stride, and label each
window from the violation markers whose centroid falls inside it.  Balancing
keeps every violating clip and subsamples clean clips to the same total.

All randomness derives from a master seed; each (seed index, variant index)
owns a private stream, so generation is deterministic at any worker count.
"""

from __future__ import annotations

import concurrent.futures
import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import (
    DrcReport,
    GridIndex,
    Layout,
    LayoutError,
    ParseError,
    Rect,
    Rule,
    RULE_ORDER,
    RuleSet,
    run_drc,
)


class GenerationFailed(RuntimeError):
    """No DRC-clean seed placement found within the attempt budget."""


class NoCandidateError(RuntimeError):
    """The layout has no geometry admitting a requested injection operator."""


class ExtentTooSmall(ValueError):
    """Layout extent smaller than the crop window."""


class InsufficientCleanClips(ValueError):
    """Fewer clean clips than violating clips; balancing impossible."""


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

RULE_DIGIT = {Rule.M1_1_WIDTH: 1, Rule.M1_6_SPACING: 2, Rule.M1_7_EOL: 3}
DIGIT_RULE = {d: r for r, d in RULE_DIGIT.items()}

CLASSES_1RULE = ("NDRC", "DRC1")
CLASSES_3RULE = ("NDRC", "DRC1", "DRC2", "DRC3", "DRC12", "DRC13", "DRC23", "DRC123")


def label_for_rules(rules: Iterable[Rule]) -> str:
    digits = sorted(RULE_DIGIT[r] for r in set(rules))
    return "NDRC" if not digits else "DRC" + "".join(str(d) for d in digits)


def rules_for_label(label: str) -> frozenset[Rule]:
    if label == "NDRC":
        return frozenset()
    if not label.startswith("DRC"):
        raise ValueError(f"unknown label {label!r}")
    try:
        return frozenset(DIGIT_RULE[int(c)] for c in label[3:])
    except (KeyError, ValueError):
        raise ValueError(f"unknown label {label!r}") from None


def classes_for_rule_count(rule_count: int) -> tuple[str, ...]:
    if rule_count == 1:
        return CLASSES_1RULE
    if rule_count == 3:
        return CLASSES_3RULE
    raise ValueError("rule_count must be 1 or 3")


# ---------------------------------------------------------------------------
# Window cropping and rasterization
# ---------------------------------------------------------------------------

def _axis_origins(extent: int, window: int, stride: int) -> list[int]:
    positions = list(range(0, extent - window + 1, stride))
    if positions[-1] != extent - window:
        positions.append(extent - window)
    return positions


def window_origins(extent: tuple[int, int], window: int = 200, stride: int = 150) -> list[tuple[int, int]]:
    """Window lower-left origins covering the extent; the final row/column is
    clamped to extent-window so coverage is complete without partial windows."""
    ex, ey = extent
    if ex < window or ey < window:
        raise ExtentTooSmall(f"extent {extent} smaller than window {window}")
    xs = _axis_origins(ex, window, stride)
    ys = _axis_origins(ey, window, stride)
    return [(x, y) for y in ys for x in xs]


def rasterize(
    layout: Layout,
    window_origin: tuple[int, int],
    window: int = 200,
    grid: GridIndex | None = None,
) -> np.ndarray:
    """Binary occupancy raster at 1 px/nm; pixel (i,j) is 1 iff the cell center
    (origin_x+i+0.5, origin_y+j+0.5) lies inside some rectangle.

    Returns uint8 array of shape (window, window); row j corresponds to y."""
    ox, oy = window_origin
    img = np.zeros((window, window), dtype=np.uint8)
    probe = Rect(ox - 1, oy - 1, ox + window + 1, oy + window + 1)
    if grid is not None:
        indices = grid.near(probe, 0)
        shapes = [layout.shapes[k] for k in indices]
    else:
        shapes = layout.shapes
    for r in shapes:
        i0 = max(r.x0 - ox, 0)
        i1 = min(r.x1 - ox, window)
        j0 = max(r.y0 - oy, 0)
        j1 = min(r.y1 - oy, window)
        if i0 < i1 and j0 < j1:
            img[j0:j1, i0:i1] = 1
    return img


def crop_windows(
    layout: Layout, window: int = 200, stride: int = 150
) -> list[tuple[tuple[int, int], np.ndarray]]:
    """All (origin, raster) pairs for the layout, row-major by origin."""
    origins = window_origins(layout.extent, window, stride)
    grid = GridIndex(layout.shapes, cell=64)
    return [(o, rasterize(layout, o, window, grid)) for o in origins]


# ---------------------------------------------------------------------------
# Clip labeling
# ---------------------------------------------------------------------------

@dataclass
class ClipRecord:
    image: np.ndarray | None
    label: str
    origin: tuple[int, int]
    source: str


def violation_rules_in_window(
    origin: tuple[int, int], window: int, report: DrcReport
) -> set[Rule]:
    """Rules of violations whose marker centroid lies in the closed window."""
    ox, oy = origin
    found: set[Rule] = set()
    for v in report.violations:
        cx, cy = v.region.center()
        if ox <= cx <= ox + window and oy <= cy <= oy + window:
            found.add(v.rule)
    return found


def label_clips(
    windows: Sequence[tuple[tuple[int, int], np.ndarray | None]],
    report: DrcReport,
    window: int = 200,
    source: str = "",
) -> list[ClipRecord]:
    """Label cropped windows from a full-layout oracle report (never from
    per-clip geometry, which would manufacture false rules at borders)."""
    out = []
    for origin, image in windows:
        rules = violation_rules_in_window(origin, window, report)
        out.append(ClipRecord(image, label_for_rules(rules), origin, source))
    return out


# ---------------------------------------------------------------------------
# Seed layout synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeedConfig:
    """Wire-track generator settings.  Defaults produce layouts that are clean
    by construction (every gap >= eol_spacing); the oracle still certifies."""

    extent: tuple[int, int] = (2000, 2000)
    width_range: tuple[int, int] = (28, 48)
    track_gap_range: tuple[int, int] = (45, 90)
    seg_gap_range: tuple[int, int] = (45, 140)
    segs_per_track: tuple[int, int] = (1, 3)
    seg_len_range: tuple[int, int] = (120, 700)
    margin: int = 20
    max_shapes: int | None = None
    track_skip_prob: float = 0.12
    max_attempts: int = 25

    def __post_init__(self):
        if self.width_range[0] < 28:
            raise ValueError("seed wires must be at least the minimum width (28 nm)")


def _synth_attempt(cfg: SeedConfig, rng: np.random.Generator, name: str) -> Layout:
    ex, ey = cfg.extent
    vertical = bool(rng.integers(0, 2))
    across = ey if vertical else ex  # extent along the wire direction
    along = ex if vertical else ey   # extent across tracks
    shapes: list[Rect] = []
    pos = cfg.margin
    while True:
        width = int(rng.integers(cfg.width_range[0], cfg.width_range[1] + 1))
        if pos + width > along - cfg.margin:
            break
        if rng.random() >= cfg.track_skip_prob:
            min_len = width + 8  # strictly longer than wide: caps stay on the ends
            n_seg = int(rng.integers(cfg.segs_per_track[0], cfg.segs_per_track[1] + 1))
            u = cfg.margin + int(rng.integers(0, 40))
            for _ in range(n_seg):
                space = across - cfg.margin - u
                if space < min_len:
                    break
                lo = max(min_len, cfg.seg_len_range[0])
                hi = min(cfg.seg_len_range[1], space)
                if hi < lo:
                    if space >= min_len:
                        lo = hi = min_len
                    else:
                        break
                seg_len = int(rng.integers(lo, hi + 1))
                if vertical:
                    shapes.append(Rect(pos, u, pos + width, u + seg_len))
                else:
                    shapes.append(Rect(u, pos, u + seg_len, pos + width))
                if cfg.max_shapes is not None and len(shapes) >= cfg.max_shapes:
                    return Layout(name=name, shapes=tuple(shapes), extent=cfg.extent)
                u += seg_len + int(rng.integers(cfg.seg_gap_range[0], cfg.seg_gap_range[1] + 1))
        pos += width + int(rng.integers(cfg.track_gap_range[0], cfg.track_gap_range[1] + 1))
    return Layout(name=name, shapes=tuple(shapes), extent=cfg.extent)


def synth_seed(
    cfg: SeedConfig,
    rng: np.random.Generator,
    rules: RuleSet | None = None,
    name: str = "seed",
) -> Layout:
    """Synthesize a wire-pattern layout certified clean by the oracle."""
    rules = rules or RuleSet()
    last_error = None
    for _ in range(cfg.max_attempts):
        try:
            layout = _synth_attempt(cfg, rng, name)
        except LayoutError as e:
            last_error = e
            continue
        if run_drc(layout, rules).clean:
            return layout
        last_error = "oracle found violations"
    raise GenerationFailed(f"no clean layout in {cfg.max_attempts} attempts ({last_error})")


# ---------------------------------------------------------------------------
# Violation injection
# ---------------------------------------------------------------------------

class InjectionOp(Enum):
    SHRINK_WIDTH = "SHRINK_WIDTH"
    PULL_CLOSER = "PULL_CLOSER"
    EOL_PUSH = "EOL_PUSH"


OP_FOR_RULE = {
    Rule.M1_1_WIDTH: InjectionOp.SHRINK_WIDTH,
    Rule.M1_6_SPACING: InjectionOp.PULL_CLOSER,
    Rule.M1_7_EOL: InjectionOp.EOL_PUSH,
}

SHRINK_RANGE = (14, 27)   # resulting short side, violates M1.1 only
PULL_RANGE = (4, 35)      # resulting side gap, violates M1.6 only
EOL_RANGE = (36, 44)      # resulting axial cap gap, violates M1.7 but not M1.6


@dataclass(frozen=True)
class Injection:
    op: InjectionOp
    target: int
    magnitude: int
    partner: int | None = None


@dataclass
class InjectionPlan:
    injections: list[Injection] = field(default_factory=list)


def _facing(a: Rect, b: Rect) -> tuple[str, int] | None:
    # ("x"|"y", gap) when the pair shares span on the perpendicular axis
    ox = min(a.x1, b.x1) - max(a.x0, b.x0)
    oy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ox > 0 and oy < 0:
        return ("y", max(a.y0, b.y0) - min(a.y1, b.y1))
    if oy > 0 and ox < 0:
        return ("x", max(a.x0, b.x0) - min(a.x1, b.x1))
    return None


def _edge_is_cap(r: Rect, gap_axis: str, max_cap: int) -> bool:
    edge_len = r.width if gap_axis == "y" else r.height
    return edge_len == r.short_side and edge_len <= max_cap


def _move_toward(shapes: list[Rect], i: int, j: int, gap_axis: str, new_gap: int) -> None:
    a, b = shapes[i], shapes[j]
    facing = _facing(a, b)
    assert facing is not None and facing[0] == gap_axis
    delta = facing[1] - new_gap
    if gap_axis == "y":
        dy = delta if a.y1 < b.y0 else -delta
        shapes[i] = a.translate(0, dy)
    else:
        dx = delta if a.x1 < b.x0 else -delta
        shapes[i] = a.translate(dx, 0)


def _pair_candidates(
    shapes: Sequence[Rect], touched: set[int], rules: RuleSet, want_cap: bool
) -> list[tuple[int, int, str, int]]:
    """(mover, partner, gap_axis, gap) tuples for spacing/EOL operators.

    want_cap: True selects cap-facing pairs (EOL), False long-edge-facing pairs
    whose gap carries no EOL semantics."""
    grid = GridIndex(shapes, cell=rules.eol_spacing)
    out = []
    for i, j in grid.candidate_pairs(220):
        if i in touched or j in touched:
            continue
        a, b = shapes[i], shapes[j]
        facing = _facing(a, b)
        if facing is None:
            continue
        axis, gap = facing
        if gap < rules.eol_spacing:  # pair already tighter than clean spacing
            continue
        has_cap = _edge_is_cap(a, axis, rules.eol_end_max_width) or _edge_is_cap(
            b, axis, rules.eol_end_max_width
        )
        if want_cap != has_cap:
            continue
        out.append((i, j, axis, gap))
        out.append((j, i, axis, gap))
    out.sort()
    return out


def _site(shapes: Sequence[Rect], idx: int) -> tuple[float, float]:
    return shapes[idx].center()


def _pick_near(candidates: list, anchor: tuple[float, float] | None, rng: np.random.Generator, site_of):
    if not candidates:
        return None
    if anchor is None:
        return candidates[int(rng.integers(0, len(candidates)))]
    ranked = sorted(
        candidates,
        key=lambda c: ((site_of(c)[0] - anchor[0]) ** 2 + (site_of(c)[1] - anchor[1]) ** 2, c),
    )
    k = min(3, len(ranked))
    return ranked[int(rng.integers(0, k))]


def _apply_one(
    shapes: list[Rect],
    rule: Rule,
    rng: np.random.Generator,
    touched: set[int],
    anchor: tuple[float, float] | None,
    rules: RuleSet,
) -> Injection:
    if rule is Rule.M1_1_WIDTH:
        candidates = [i for i in range(len(shapes)) if i not in touched]
        if not candidates:
            raise NoCandidateError("no shape available for SHRINK_WIDTH")
        idx = _pick_near(candidates, anchor, rng, lambda i: _site(shapes, i))
        r = shapes[idx]
        new_w = int(rng.integers(SHRINK_RANGE[0], SHRINK_RANGE[1] + 1))
        if r.width <= r.height:
            d = r.width - new_w
            shapes[idx] = Rect(r.x0 + d // 2, r.y0, r.x0 + d // 2 + new_w, r.y1)
        else:
            d = r.height - new_w
            shapes[idx] = Rect(r.x0, r.y0 + d // 2, r.x1, r.y0 + d // 2 + new_w)
        touched.add(idx)
        return Injection(InjectionOp.SHRINK_WIDTH, idx, new_w)

    want_cap = rule is Rule.M1_7_EOL
    lo, hi = EOL_RANGE if want_cap else PULL_RANGE
    pairs = _pair_candidates(shapes, touched, rules, want_cap)
    pick = _pick_near(pairs, anchor, rng, lambda c: _site(shapes, c[0]))
    if pick is None:
        op = OP_FOR_RULE[rule].value
        raise NoCandidateError(f"no facing pair available for {op}")
    i, j, axis, _ = pick
    new_gap = int(rng.integers(lo, hi + 1))
    _move_toward(shapes, i, j, axis, new_gap)
    touched.add(i)
    touched.add(j)
    op = InjectionOp.EOL_PUSH if want_cap else InjectionOp.PULL_CLOSER
    return Injection(op, i, new_gap, partner=j)


def inject_violations(
    layout: Layout,
    targets: Iterable[Rule],
    rng: np.random.Generator,
    rules: RuleSet | None = None,
    ops_per_rule: int = 1,
    name: str | None = None,
) -> tuple[Layout, InjectionPlan]:
    """Perturb a clean layout so exactly the target rules fail.

    The result is re-checked with the oracle; candidate choices that create
    out-of-target violations are retried.  The returned plan records intent
    only; ground truth must still come from the oracle."""
    target_set = set(targets)
    if not target_set:
        raise ValueError("targets must be non-empty")
    rules = rules or RuleSet()
    ordered = sorted(target_set, key=lambda r: RULE_ORDER[r])
    out_name = name if name is not None else layout.name + "-inj"

    last_error: Exception | None = None
    for _ in range(8):
        shapes = list(layout.shapes)
        touched: set[int] = set()
        anchor: tuple[float, float] | None = None
        plan = InjectionPlan()
        try:
            for _rep in range(ops_per_rule):
                for rule in ordered:
                    inj = _apply_one(shapes, rule, rng, touched, anchor, rules)
                    if anchor is None:
                        anchor = _site(shapes, inj.target)
                    plan.injections.append(inj)
            candidate = Layout(name=out_name, shapes=tuple(shapes), extent=layout.extent)
        except (NoCandidateError, LayoutError) as e:
            last_error = e
            continue
        report = run_drc(candidate, rules)
        if {v.rule for v in report.violations} == target_set:
            return candidate, plan
        last_error = RuntimeError("injection produced out-of-target violations")
    if isinstance(last_error, NoCandidateError):
        raise last_error
    raise NoCandidateError(f"no admissible injection found: {last_error}")


# ---------------------------------------------------------------------------
# Balancing, splitting, manifest
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: str
    origin: tuple[int, int]
    source: str
    split: str


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    seed: int
    rules: RuleSet
    classes: tuple[str, ...]
    version: int = MANIFEST_VERSION

    def counts(self) -> dict[str, int]:
        c = {label: 0 for label in self.classes}
        for r in self.records:
            c[r.label] += 1
        return c

    def split_records(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]


def clip_filename(source: str, origin: tuple[int, int]) -> str:
    return f"clips/{source}_x{origin[0]}_y{origin[1]}.pgm"


def balance_and_split(
    records: Sequence[ClipRecord],
    rng: np.random.Generator,
    fractions: tuple[float, float, float] = (0.80, 0.15, 0.05),
    seed: int = 0,
    rules: RuleSet | None = None,
    classes: tuple[str, ...] | None = None,
) -> DatasetManifest:
    """Keep all violating clips, subsample clean clips to the same count,
    shuffle, and assign train/val/test splits by the fractions."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rules = rules or RuleSet()
    canonical = sorted(records, key=lambda r: (r.source, r.origin))
    violating = [r for r in canonical if r.label != "NDRC"]
    clean = [r for r in canonical if r.label == "NDRC"]
    if len(clean) < len(violating):
        raise InsufficientCleanClips(
            f"{len(clean)} clean clips cannot balance {len(violating)} violating clips"
        )
    keep_idx = rng.choice(len(clean), size=len(violating), replace=False)
    kept = violating + [clean[int(k)] for k in sorted(keep_idx)]
    kept.sort(key=lambda r: (r.source, r.origin))
    order = rng.permutation(len(kept))

    n = len(kept)
    n_train = round(fractions[0] * n)
    n_val = round(fractions[1] * n)
    n_test = n - n_train - n_val
    if n_test < 0:
        n_val += n_test
        n_test = 0

    if classes is None:
        labels = {r.label for r in kept}
        classes = CLASSES_1RULE if labels <= set(CLASSES_1RULE) else CLASSES_3RULE
    out: list[ManifestRecord] = []
    for pos, idx in enumerate(order):
        r = kept[int(idx)]
        split = "train" if pos < n_train else ("val" if pos < n_train + n_val else "test")
        out.append(ManifestRecord(clip_filename(r.source, r.origin), r.label, r.origin, r.source, split))
    return DatasetManifest(out, seed=seed, rules=rules, classes=classes)


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = [
        f"# drccnn-manifest v{manifest.version}",
        f"# seed: {manifest.seed}",
        f"# rules: {json.dumps(manifest.rules.to_dict(), sort_keys=True)}",
        f"# classes: {','.join(manifest.classes)}",
        f"# counts: {json.dumps(manifest.counts(), sort_keys=True)}",
        "path,label,origin_x,origin_y,source,split",
    ]
    for r in manifest.records:
        lines.append(f"{r.path},{r.label},{r.origin[0]},{r.origin[1]},{r.source},{r.split}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    header: dict[str, str] = {}
    records: list[ManifestRecord] = []
    version = None
    saw_columns = False
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("drccnn-manifest"):
                    try:
                        version = int(body.split("v", 1)[1])
                    except (IndexError, ValueError):
                        raise ParseError("bad manifest version line", ln) from None
                elif ":" in body:
                    key, val = body.split(":", 1)
                    header[key.strip()] = val.strip()
                continue
            if not saw_columns:
                if line != "path,label,origin_x,origin_y,source,split":
                    raise ParseError("missing or malformed column header", ln)
                saw_columns = True
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ParseError(f"expected 6 fields, got {len(parts)}", ln)
            p, label, ox, oy, source, split = parts
            if split not in SPLITS:
                raise ParseError(f"unknown split {split!r}", ln)
            try:
                origin = (int(ox), int(oy))
            except ValueError:
                raise ParseError("origin must be integers", ln) from None
            records.append(ManifestRecord(p, label, origin, source, split))
    if version is None:
        raise ParseError("missing manifest version header")
    for key in ("seed", "rules", "classes", "counts"):
        if key not in header:
            raise ParseError(f"missing header field {key!r}")
    manifest = DatasetManifest(
        records,
        seed=int(header["seed"]),
        rules=RuleSet.from_dict(json.loads(header["rules"])),
        classes=tuple(header["classes"].split(",")),
        version=version,
    )
    declared = json.loads(header["counts"])
    if manifest.counts() != declared:
        raise ParseError("record counts do not match the declared header counts")
    for r in records:
        if r.label not in manifest.classes:
            raise ParseError(f"label {r.label!r} outside declared class list")
    return manifest


# ---------------------------------------------------------------------------
# PGM image files (binary grayscale, values {0, 255})
# ---------------------------------------------------------------------------

def write_pgm(path, values: np.ndarray, comment: str | None = None) -> None:
    """Write an 8-bit P5 graymap; `values` is any uint8 array (rows are y)."""
    if values.dtype != np.uint8 or values.ndim != 2:
        raise ValueError("PGM payload must be a 2-D uint8 array")
    h, w = values.shape
    header = b"P5\n"
    if comment:
        header += b"# " + comment.encode() + b"\n"
    header += f"{w} {h}\n255\n".encode()
    with open(path, "wb") as f:
        f.write(header + values.tobytes())


def write_clip_pgm(path, image01: np.ndarray, comment: str | None = None) -> None:
    write_pgm(path, np.where(image01 > 0, 255, 0).astype(np.uint8), comment)


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ParseError(f"{path}: not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; comments run to end of line
    tokens: list[bytes] = []
    i = 2
    while len(tokens) < 3 and i < len(data):
        c = data[i : i + 1]
        if c == b"#":
            i = data.index(b"\n", i) + 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 3:
        raise ParseError(f"{path}: truncated PGM header")
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ParseError(f"{path}: expected maxval 255, got {maxval}")
    i += 1  # single whitespace after maxval
    body = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=i)
    if body.size != w * h:
        raise ParseError(f"{path}: truncated PGM payload")
    return body.reshape(h, w).copy()


# ---------------------------------------------------------------------------
# Compact in-memory clip store for training/evaluation
# ---------------------------------------------------------------------------

@dataclass
class ClipArray:
    """Bit-packed clip images plus integer class labels."""

    packed: np.ndarray            # (N, ceil(H*W/8)) uint8
    labels: np.ndarray            # (N,) int64 indices into classes
    classes: tuple[str, ...]
    hw: tuple[int, int]

    def __len__(self) -> int:
        return len(self.labels)

    def images(self, idx: np.ndarray | list[int]) -> np.ndarray:
        """Decode a batch to float32 {0,1} of shape (len(idx), H, W)."""
        h, w = self.hw
        bits = np.unpackbits(self.packed[idx], axis=1, count=h * w)
        return bits.reshape(-1, h, w).astype(np.float32)


def load_clips(manifest: DatasetManifest, base_dir, split: str) -> ClipArray:
    """Read one split's PGM files into a packed array, manifest order."""
    base = Path(base_dir)
    recs = manifest.split_records(split)
    class_index = {c: k for k, c in enumerate(manifest.classes)}
    packed_rows = []
    labels = np.empty(len(recs), dtype=np.int64)
    hw = None
    for k, r in enumerate(recs):
        img = read_pgm(base / r.path)
        if hw is None:
            hw = img.shape
        elif img.shape != hw:
            raise ParseError(f"{r.path}: clip shape {img.shape} != {hw}")
        packed_rows.append(np.packbits(img > 0))
        labels[k] = class_index[r.label]
    if hw is None:
        hw = (200, 200)
        packed = np.zeros((0, hw[0] * hw[1] // 8), dtype=np.uint8)
    else:
        packed = np.stack(packed_rows)
    return ClipArray(packed, labels, manifest.classes, hw)


# ---------------------------------------------------------------------------
# End-to-end corpus generation
# ---------------------------------------------------------------------------

SUBSETS_3 = (
    (Rule.M1_1_WIDTH,),
    (Rule.M1_6_SPACING,),
    (Rule.M1_7_EOL,),
    (Rule.M1_1_WIDTH, Rule.M1_6_SPACING),
    (Rule.M1_1_WIDTH, Rule.M1_7_EOL),
    (Rule.M1_6_SPACING, Rule.M1_7_EOL),
    (Rule.M1_1_WIDTH, Rule.M1_6_SPACING, Rule.M1_7_EOL),
)


@dataclass(frozen=True)
class GenConfig:
    seeds: int = 50
    variants: int = 100
    rule_count: int = 3
    master_seed: int = 0
    window: int = 200
    stride: int = 150
    ops_per_rule: int = 1
    fractions: tuple[float, float, float] = (0.80, 0.15, 0.05)
    seed_cfg: SeedConfig = SeedConfig()
    rules: RuleSet = RuleSet()


def _variant_targets(cfg: GenConfig, vi: int) -> tuple[Rule, ...]:
    if cfg.rule_count == 1:
        return (Rule.M1_1_WIDTH,)
    return SUBSETS_3[vi % len(SUBSETS_3)]


def _gen_seed_block(cfg: GenConfig, si: int) -> tuple[list[ClipRecord], dict[str, Layout]]:
    seed_rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 0, si]))
    seed_name = f"s{si:03d}"
    seed_layout = synth_seed(cfg.seed_cfg, seed_rng, cfg.rules, name=seed_name)
    records: list[ClipRecord] = []
    layouts: dict[str, Layout] = {}
    for vi in range(cfg.variants):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 1, si, vi]))
        source = f"{seed_name}v{vi:03d}"
        variant, _plan = inject_violations(
            seed_layout,
            _variant_targets(cfg, vi),
            rng,
            cfg.rules,
            ops_per_rule=cfg.ops_per_rule,
            name=source,
        )
        report = run_drc(variant, cfg.rules)
        origins = window_origins(variant.extent, cfg.window, cfg.stride)
        windows = [(o, None) for o in origins]
        records.extend(label_clips(windows, report, cfg.window, source))
        layouts[source] = variant
    return records, layouts


def generate_dataset(cfg: GenConfig, out_dir, threads: int = 1) -> DatasetManifest:
    """Run the full generation flow and write clips + manifest under out_dir."""
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)

    all_records: list[ClipRecord] = []
    layouts: dict[str, Layout] = {}
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            for records, block_layouts in pool.map(
                lambda si: _gen_seed_block(cfg, si), range(cfg.seeds)
            ):
                all_records.extend(records)
                layouts.update(block_layouts)
    else:
        for si in range(cfg.seeds):
            records, block_layouts = _gen_seed_block(cfg, si)
            all_records.extend(records)
            layouts.update(block_layouts)

    split_rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 2]))
    manifest = balance_and_split(
        all_records,
        split_rng,
        cfg.fractions,
        seed=cfg.master_seed,
        rules=cfg.rules,
        classes=classes_for_rule_count(cfg.rule_count),
    )

    by_source: dict[str, list[ManifestRecord]] = {}
    for rec in manifest.records:
        by_source.setdefault(rec.source, []).append(rec)

    def _write_source(source: str) -> None:
        layout = layouts[source]
        grid = GridIndex(layout.shapes, cell=64)
        for rec in by_source[source]:
            img = rasterize(layout, rec.origin, cfg.window, grid)
            write_clip_pgm(out / rec.path, img, comment=f"source={source}")

    sources = sorted(by_source)
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(_write_source, sources))
    else:
        for source in sources:
            _write_source(source)

    write_manifest(manifest, out / "manifest.csv")
    return manifest
