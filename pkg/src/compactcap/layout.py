"""Cross-layer sharing layouts.

A stack of L transformer layers draws its weights from a smaller pool of
independent parameter groups; the assignment is written as a parenthesized
list with optional run-length items, e.g. "(0x3,1x3)" == "(0,0,0,1,1,1)".
"""

from __future__ import annotations

import re
from dataclasses import dataclass

MAX_LAYERS = 64

_ITEM = re.compile(r"^(\d+)(?:x(\d+))?$")


@dataclass(frozen=True)
class ShareLayout:
    """One group id per stack position; ids must be dense 0..num_independent-1."""

    assignment: tuple[int, ...]

    def __post_init__(self):
        if not self.assignment:
            raise ValueError("layout must assign at least one layer")
        if len(self.assignment) > MAX_LAYERS:
            raise ValueError(f"layout exceeds {MAX_LAYERS} layers")
        groups = set(self.assignment)
        if groups != set(range(max(groups) + 1)):
            raise ValueError(f"gap in group ids: {sorted(groups)}")

    @property
    def num_layers(self) -> int:
        return len(self.assignment)

    @property
    def num_independent(self) -> int:
        return max(self.assignment) + 1

    def __str__(self) -> str:
        return format_layout(self)


def parse_layout(text: str) -> ShareLayout:
    """Parse "(0x3,1x3)" / "(0,0,1,1,2,2)" style strings into a ShareLayout."""
    s = re.sub(r"\s+", "", text)
    if not (s.startswith("(") and s.endswith(")")):
        raise ValueError(f"layout must be parenthesized: {text!r}")
    body = s[1:-1]
    if not body:
        raise ValueError("empty layout")
    assignment: list[int] = []
    for item in body.split(","):
        m = _ITEM.match(item)
        if not m:
            raise ValueError(f"bad layout item {item!r} in {text!r}")
        group = int(m.group(1))
        repeat = int(m.group(2)) if m.group(2) else 1
        if repeat == 0:
            raise ValueError(f"zero repeat count in {text!r}")
        assignment.extend([group] * repeat)
    return ShareLayout(tuple(assignment))


def format_layout(layout: ShareLayout) -> str:
    """Canonical spelling: maximal runs, 'x' notation only for runs >= 2."""
    parts = []
    run_val, run_len = layout.assignment[0], 0
    for g in layout.assignment + (-1,):  # sentinel flushes the last run
        if g == run_val:
            run_len += 1
            continue
        parts.append(f"{run_val}x{run_len}" if run_len >= 2 else str(run_val))
        run_val, run_len = g, 1
    return "(" + ",".join(parts) + ")"


def independent_count(layout: ShareLayout) -> int:
    return layout.num_independent
