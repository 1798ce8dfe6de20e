"""drccnn: a boolean geometric DRC oracle for three metal-1 rules, a synthetic
labeled-clip dataset generator, a from-scratch CNN violation classifier, a
sliding-window layout scanner, and an evaluation/benchmark harness."""

__version__ = "0.1.0"

from .geometry import (
    DrcReport,
    Layout,
    LayoutError,
    ParseError,
    Rect,
    Rule,
    RuleSet,
    Violation,
    check_eol_spacing,
    check_min_spacing,
    check_min_width,
    read_layout,
    rect_distance,
    run_drc,
    write_layout,
)

__all__ = [
    "DrcReport", "Layout", "LayoutError", "ParseError", "Rect", "Rule",
    "RuleSet", "Violation", "check_eol_spacing", "check_min_spacing",
    "check_min_width", "read_layout", "rect_distance", "run_drc",
    "write_layout", "__version__",
]
