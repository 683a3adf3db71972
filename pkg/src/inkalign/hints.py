"""User color hints and their document form.

A hint is a pixel position, an sRGB target color, and a display radius,
attached to a page of known dimensions. The document form is JSON:

    {"version": 1,
     "page": {"width": W, "height": H},
     "hints": [{"x": ..., "y": ..., "color": [r, g, b], "radius": ...}, ...]}

Save/load round-trips bit-exactly (JSON float repr is shortest-exact).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractViolation

HINT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class HintRecord:
    x: int
    y: int
    color: tuple[float, float, float]
    radius: float


@dataclass
class HintSet:
    width: int
    height: int
    hints: list[HintRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ContractViolation("page dimensions must be positive")
        for idx, h in enumerate(self.hints):
            self._validate_record(idx, h)

    def _validate_record(self, idx: int, h: HintRecord) -> None:
        if not (0 <= h.x < self.width) or not (0 <= h.y < self.height):
            raise ContractViolation(
                f"hint {idx} at ({h.x}, {h.y}) outside page {self.width}x{self.height}"
            )
        if h.radius < 1:
            raise ContractViolation(f"hint {idx}: radius {h.radius} must be >= 1")
        if len(h.color) != 3 or any(not (0.0 <= c <= 1.0) for c in h.color):
            raise ContractViolation(f"hint {idx}: color {h.color} outside [0, 1]")

    def add(self, hint: HintRecord) -> None:
        self._validate_record(len(self.hints), hint)
        self.hints.append(hint)


def save_hints(hint_set: HintSet) -> str:
    doc = {
        "version": HINT_SCHEMA_VERSION,
        "page": {"width": hint_set.width, "height": hint_set.height},
        "hints": [
            {"x": h.x, "y": h.y, "color": list(h.color), "radius": h.radius}
            for h in hint_set.hints
        ],
    }
    return json.dumps(doc, indent=2)


def load_hints(document: str | dict | Path) -> HintSet:
    if isinstance(document, Path):
        document = document.read_text()
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ContractViolation(f"hint document is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ContractViolation("hint document must be a JSON object")
    try:
        page = document["page"]
        width, height = int(page["width"]), int(page["height"])
        raw = document.get("hints", [])
        records = [
            HintRecord(
                x=int(r["x"]),
                y=int(r["y"]),
                color=(float(r["color"][0]), float(r["color"][1]), float(r["color"][2])),
                radius=float(r["radius"]),
            )
            for r in raw
        ]
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ContractViolation(f"malformed hint document: {exc}") from exc
    return HintSet(width=width, height=height, hints=records)
