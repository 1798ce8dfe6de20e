"""Layout data model and the exact boolean DRC oracle for three metal-1 rules.

Geometry is restricted to pairwise disjoint axis-aligned rectangles with
integer nanometer coordinates.  Three rules are checked:

* M1.1 - minimum wire width (default 28 nm)
* M1.6 - minimum metal-to-metal spacing (default 36 nm)
* M1.7 - end-of-line spacing from a wire's end cap to facing metal (default 45 nm)

Rule boundaries are inclusive-clean: a dimension exactly at the limit passes.
The production checker uses a uniform grid spatial index so runtime stays
near-linear in the shape count; a naive all-pairs reference lives in the test
suite and must produce identical violation sets.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence


class LayoutError(ValueError):
    """Layout invariant broken (overlap, abutment, bad extent, bad rect)."""


class ParseError(ValueError):
    """Malformed layout or report file; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Rule(Enum):
    M1_1_WIDTH = "M1.1"
    M1_6_SPACING = "M1.6"
    M1_7_EOL = "M1.7"


RULE_ORDER = {Rule.M1_1_WIDTH: 0, Rule.M1_6_SPACING: 1, Rule.M1_7_EOL: 2}


@dataclass(frozen=True, order=True)
class Rect:
    """Closed axis-aligned rectangle, integer nm, strictly positive area."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise LayoutError(f"degenerate rect {(self.x0, self.y0, self.x1, self.y1)}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def short_side(self) -> int:
        return min(self.width, self.height)

    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0

    def translate(self, dx: int, dy: int) -> "Rect":
        return Rect(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


def _gap_components(a: Rect, b: Rect) -> tuple[int, int]:
    dx = max(a.x0 - b.x1, b.x0 - a.x1, 0)
    dy = max(a.y0 - b.y1, b.y0 - a.y1, 0)
    return dx, dy


def rect_distance(a: Rect, b: Rect) -> float:
    """Euclidean distance between closest points of two closed rectangles.

    0 means touching or overlapping; callers guarantee disjointness.
    """
    return math.hypot(*_gap_components(a, b))


def _dist_sq(a: Rect, b: Rect) -> int:
    # exact squared distance; comparisons against rule limits stay integer
    dx, dy = _gap_components(a, b)
    return dx * dx + dy * dy


def _strictly_separated(a: Rect, b: Rect) -> bool:
    # positive gap <=> strict separation on at least one axis (integer coords)
    return a.x1 < b.x0 or b.x1 < a.x0 or a.y1 < b.y0 or b.y1 < a.y0


def gap_region(a: Rect, b: Rect) -> Rect:
    """Bounding box of the gap between the closest features of two disjoint rects.

    Degenerate axes (diagonal corner contact ranges) are widened to 1 nm so the
    marker stays a valid Rect.
    """
    if a.x1 < b.x0:
        gx0, gx1 = a.x1, b.x0
    elif b.x1 < a.x0:
        gx0, gx1 = b.x1, a.x0
    else:
        gx0, gx1 = max(a.x0, b.x0), min(a.x1, b.x1)
    if a.y1 < b.y0:
        gy0, gy1 = a.y1, b.y0
    elif b.y1 < a.y0:
        gy0, gy1 = b.y1, a.y0
    else:
        gy0, gy1 = max(a.y0, b.y0), min(a.y1, b.y1)
    if gx1 <= gx0:
        gx1 = gx0 + 1
    if gy1 <= gy0:
        gy1 = gy0 + 1
    return Rect(gx0, gy0, gx1, gy1)


@dataclass(frozen=True)
class RuleSet:
    min_width: int = 28
    min_spacing: int = 36
    eol_spacing: int = 45
    eol_end_max_width: int = 40

    def __post_init__(self):
        if min(self.min_width, self.min_spacing, self.eol_spacing, self.eol_end_max_width) <= 0:
            raise ValueError("rule values must be positive")
        if self.eol_spacing < self.min_spacing:
            raise ValueError("eol_spacing must be >= min_spacing")

    def to_dict(self) -> dict:
        return {
            "min_width": self.min_width,
            "min_spacing": self.min_spacing,
            "eol_spacing": self.eol_spacing,
            "eol_end_max_width": self.eol_end_max_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleSet":
        return cls(**{k: int(v) for k, v in d.items()})


class GridIndex:
    """Uniform-grid spatial index over rect bounding boxes.

    Cell size defaults to the largest interaction distance (EOL spacing), so
    any pair closer than that shares a cell or sits in adjacent cells.
    """

    def __init__(self, shapes: Sequence[Rect], cell: int = 45):
        self.cell = max(1, cell)
        self.shapes = shapes
        self._cells: dict[tuple[int, int], list[int]] = {}
        for i, r in enumerate(shapes):
            for key in self._covered(r):
                self._cells.setdefault(key, []).append(i)

    def _covered(self, r: Rect) -> Iterator[tuple[int, int]]:
        c = self.cell
        for cx in range(r.x0 // c, r.x1 // c + 1):
            for cy in range(r.y0 // c, r.y1 // c + 1):
                yield (cx, cy)

    def near(self, r: Rect, dist: int) -> list[int]:
        """Indices of shapes whose bbox might lie within `dist` of `r` (sorted)."""
        c = self.cell
        reach = (dist + c - 1) // c
        found: set[int] = set()
        for cx in range(r.x0 // c - reach, r.x1 // c + reach + 1):
            for cy in range(r.y0 // c - reach, r.y1 // c + reach + 1):
                found.update(self._cells.get((cx, cy), ()))
        return sorted(found)

    def candidate_pairs(self, dist: int) -> Iterator[tuple[int, int]]:
        """Unordered index pairs (i < j) within grid reach of `dist`, ascending."""
        for i, r in enumerate(self.shapes):
            for j in self.near(r, dist):
                if j > i:
                    yield (i, j)


@dataclass(frozen=True)
class Layout:
    """Named set of disjoint rectangles on one metal layer.

    Construction enforces pairwise strictly positive gaps (no overlap, no
    abutment) and records the bounding extent.
    """

    name: str
    shapes: tuple[Rect, ...]
    layer: str = "M1"
    extent: tuple[int, int] | None = None

    def __post_init__(self):
        shapes = tuple(self.shapes)
        object.__setattr__(self, "shapes", shapes)
        if self.extent is None:
            ex = max((r.x1 for r in shapes), default=0)
            ey = max((r.y1 for r in shapes), default=0)
            object.__setattr__(self, "extent", (ex, ey))
        grid = GridIndex(shapes, cell=64)
        for i, r in enumerate(shapes):
            for j in grid.near(r, 0):
                if j > i and not _strictly_separated(r, shapes[j]):
                    raise LayoutError(f"shapes {i} and {j} overlap or abut: {r}, {shapes[j]}")

    def translate(self, dx: int, dy: int) -> "Layout":
        ex, ey = self.extent
        return Layout(
            name=self.name,
            shapes=tuple(r.translate(dx, dy) for r in self.shapes),
            layer=self.layer,
            extent=(ex + dx, ey + dy),
        )


@dataclass(frozen=True)
class Violation:
    rule: Rule
    region: Rect
    shape_indices: tuple[int, ...]

    def sort_key(self):
        return (
            RULE_ORDER[self.rule],
            min(self.shape_indices),
            self.shape_indices,
            (self.region.x0, self.region.y0, self.region.x1, self.region.y1),
        )


@dataclass
class DrcReport:
    layout_name: str
    violations: list[Violation]
    duration_ms: float = 0.0

    @property
    def clean(self) -> bool:
        return not self.violations


def check_min_width(layout: Layout, rules: RuleSet) -> list[Violation]:
    """One M1.1 violation per rectangle narrower than min_width; region is the rect."""
    out = []
    for i, r in enumerate(layout.shapes):
        if r.short_side < rules.min_width:
            out.append(Violation(Rule.M1_1_WIDTH, r, (i,)))
    return out


def check_min_spacing(layout: Layout, rules: RuleSet, grid: GridIndex | None = None) -> list[Violation]:
    """One M1.6 violation per pair closer than min_spacing (Euclidean, corners included)."""
    grid = grid or GridIndex(layout.shapes, cell=rules.eol_spacing)
    limit_sq = rules.min_spacing * rules.min_spacing
    out = []
    for i, j in grid.candidate_pairs(rules.min_spacing):
        a, b = layout.shapes[i], layout.shapes[j]
        d2 = _dist_sq(a, b)
        if 0 < d2 < limit_sq:
            out.append(Violation(Rule.M1_6_SPACING, gap_region(a, b), (i, j)))
    return out


def _facing_gap(a: Rect, b: Rect) -> tuple[str, int, int] | None:
    """Classify the pair's facing direction.

    Returns (axis, gap, overlap) where axis is "x" (gap along x, overlap in y)
    or "y"; None for diagonal neighbors (no shared span on either axis).
    """
    ox = min(a.x1, b.x1) - max(a.x0, b.x0)
    oy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ox > 0 and oy < 0:
        return ("y", max(a.y0, b.y0) - min(a.y1, b.y1), ox)
    if oy > 0 and ox < 0:
        return ("x", max(a.x0, b.x0) - min(a.x1, b.x1), oy)
    return None


def _has_facing_cap(a: Rect, b: Rect, axis: str, max_cap: int) -> bool:
    """True if either facing edge of the pair is a qualifying end cap.

    A facing edge is a cap iff its length equals the owner's short side (for
    squares every edge qualifies), and the cap is EOL-eligible iff that short
    side is <= max_cap.
    """
    for r in (a, b):
        edge_len = r.width if axis == "y" else r.height
        if edge_len == r.short_side and edge_len <= max_cap:
            return True
    return False


def check_eol_spacing(layout: Layout, rules: RuleSet, grid: GridIndex | None = None) -> list[Violation]:
    """One M1.7 violation per pair with a qualifying end cap facing metal closer
    than eol_spacing along the cap's outward normal (within the cap's span)."""
    grid = grid or GridIndex(layout.shapes, cell=rules.eol_spacing)
    out = []
    for i, j in grid.candidate_pairs(rules.eol_spacing):
        a, b = layout.shapes[i], layout.shapes[j]
        facing = _facing_gap(a, b)
        if facing is None:
            continue
        axis, gap, _ = facing
        if not (0 < gap < rules.eol_spacing):
            continue
        if _has_facing_cap(a, b, axis, rules.eol_end_max_width):
            out.append(Violation(Rule.M1_7_EOL, gap_region(a, b), (i, j)))
    return out


def run_drc(layout: Layout, rules: RuleSet | None = None) -> DrcReport:
    """Run all three checks; violations ordered by rule then lowest shape index."""
    rules = rules or RuleSet()
    t0 = time.perf_counter()
    grid = GridIndex(layout.shapes, cell=rules.eol_spacing)
    violations = (
        check_min_width(layout, rules)
        + check_min_spacing(layout, rules, grid)
        + check_eol_spacing(layout, rules, grid)
    )
    violations.sort(key=Violation.sort_key)
    dt_ms = (time.perf_counter() - t0) * 1000.0
    return DrcReport(layout.name, violations, dt_ms)


# ---------------------------------------------------------------------------
# Layout interchange file: line-oriented text
#   layout <name> <extent_x> <extent_y>
#   rect <x0> <y0> <x1> <y1>
# '#' starts a comment.
# ---------------------------------------------------------------------------

def write_layout(layout: Layout, path) -> None:
    ex, ey = layout.extent
    lines = [f"layout {layout.name} {ex} {ey}"]
    lines += [f"rect {r.x0} {r.y0} {r.x1} {r.y1}" for r in layout.shapes]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_layout(path) -> Layout:
    name = None
    extent = None
    shapes: list[Rect] = []
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "layout":
                if len(parts) != 4:
                    raise ParseError("expected 'layout <name> <ex> <ey>'", ln)
                name = parts[1]
                try:
                    extent = (int(parts[2]), int(parts[3]))
                except ValueError:
                    raise ParseError("extent must be integers", ln) from None
            elif parts[0] == "rect":
                if name is None:
                    raise ParseError("rect before layout header", ln)
                if len(parts) != 5:
                    raise ParseError("expected 'rect <x0> <y0> <x1> <y1>'", ln)
                try:
                    coords = [int(p) for p in parts[1:]]
                except ValueError:
                    raise ParseError("coordinates must be integers", ln) from None
                try:
                    shapes.append(Rect(*coords))
                except LayoutError as e:
                    raise ParseError(str(e), ln) from None
            else:
                raise ParseError(f"unknown directive {parts[0]!r}", ln)
    if name is None:
        raise ParseError("missing layout header")
    return Layout(name=name, shapes=tuple(shapes), extent=extent)


def write_drc_report(report: DrcReport, path, rules: RuleSet | None = None) -> None:
    doc = {
        "layout": report.layout_name,
        "rules": (rules or RuleSet()).to_dict(),
        "duration_ms": report.duration_ms,
        "violations": [
            {
                "rule": v.rule.value,
                "x0": v.region.x0,
                "y0": v.region.y0,
                "x1": v.region.x1,
                "y1": v.region.y1,
                "shape_indices": list(v.shape_indices),
            }
            for v in report.violations
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_drc_report(path) -> DrcReport:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, e.lineno) from None
    by_value = {r.value: r for r in Rule}
    violations = [
        Violation(by_value[v["rule"]], Rect(v["x0"], v["y0"], v["x1"], v["y1"]), tuple(v["shape_indices"]))
        for v in doc["violations"]
    ]
    return DrcReport(doc["layout"], violations, doc["duration_ms"])
