"""Grid geometry: cell partition of a challenge image and the mapping from
detector bounding boxes to the grid cells they cover.

Cells are indexed 1-based in row-major order, so on a 4x4 grid the top-left
cell is 1 and the bottom-right cell is 16.  Three containment semantics are
supported when mapping a box onto cells:

* ``intersection`` (default): any positive-area overlap marks the cell.
* ``corner``: at least one of the four box corners lies strictly inside
  the cell.  This undercounts cells that a large box spans without placing
  a corner in them; it is kept as an explicit fidelity mode.
* ``coverage``: overlap area must reach a fraction ``tau`` of the cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

MAPPING_MODES = ("intersection", "corner", "coverage")


@dataclass(frozen=True)
class GridSpec:
    """An ``rows x cols`` partition of a ``W x H`` image."""

    rows: int
    cols: int
    image_width_px: float = 400.0
    image_height_px: float = 400.0

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid needs at least one row and column, got {self.rows}x{self.cols}")
        if not (self.image_width_px > 0 and self.image_height_px > 0):
            raise ValueError("image dimensions must be positive")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def cell_width(self) -> float:
        return self.image_width_px / self.cols

    @property
    def cell_height(self) -> float:
        return self.image_height_px / self.rows

    def x_edge(self, c: int) -> float:
        # (c * W) / C lands exactly on the image edge at c == cols.
        return (c * self.image_width_px) / self.cols

    def y_edge(self, r: int) -> float:
        return (r * self.image_height_px) / self.rows

    def cell_index(self, row: int, col: int) -> int:
        """1-based row-major index of cell at 0-based (row, col)."""
        return row * self.cols + col + 1


@dataclass(frozen=True)
class CellRect:
    """One grid cell with pixel extents relative to the image top-left."""

    index: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate cell rect {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def grid_cells(spec: GridSpec) -> list[CellRect]:
    """All cells of ``spec`` in row-major order (index 1 first)."""
    cells = []
    for r in range(spec.rows):
        y0, y1 = spec.y_edge(r), spec.y_edge(r + 1)
        for c in range(spec.cols):
            cells.append(
                CellRect(
                    index=spec.cell_index(r, c),
                    x_min=spec.x_edge(c),
                    y_min=y0,
                    x_max=spec.x_edge(c + 1),
                    y_max=y1,
                )
            )
    return cells


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image coordinates (y grows downward)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"bounding box must have positive extent, got "
                f"({self.x_min},{self.y_min})-({self.x_max},{self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


def clamp_box(
    x_min: float, y_min: float, x_max: float, y_max: float, width: float, height: float
) -> Optional[BoundingBox]:
    """Clip raw detector coordinates into the image frame.

    Detectors legitimately emit boxes that hang slightly out of frame, so
    coordinates are clamped rather than rejected.  Returns ``None`` when
    nothing with positive area is left inside the image.
    """
    x0 = min(max(x_min, 0.0), width)
    x1 = min(max(x_max, 0.0), width)
    y0 = min(max(y_min, 0.0), height)
    y1 = min(max(y_max, 0.0), height)
    if x0 >= x1 or y0 >= y1:
        return None
    return BoundingBox(x0, y0, x1, y1)


@dataclass(frozen=True)
class Detection:
    """A labeled, scored box from any detector. Labels are lowercased."""

    label: str
    confidence: float
    box: BoundingBox

    def __post_init__(self) -> None:
        normalized = " ".join(self.label.strip().lower().split())
        if not normalized:
            raise ValueError("detection label must be non-empty")
        object.__setattr__(self, "label", normalized)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GridMapping:
    """Cells a single detection maps onto (its potential grid numbers)."""

    label: str
    confidence: float
    pgns: tuple[int, ...]

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if not self.pgns:
            raise ValueError("pgns must be non-empty")
        if any(p < 1 for p in self.pgns):
            raise ValueError(f"cell indices are 1-based, got {self.pgns}")
        if any(b <= a for a, b in zip(self.pgns, self.pgns[1:])):
            raise ValueError(f"pgns must be strictly increasing, got {self.pgns}")


def _cells_for_box(
    box: BoundingBox, cells: Sequence[CellRect], mode: str, coverage_tau: float
) -> list[int]:
    hit = []
    for cell in cells:
        ow = min(box.x_max, cell.x_max) - max(box.x_min, cell.x_min)
        oh = min(box.y_max, cell.y_max) - max(box.y_min, cell.y_min)
        if mode == "intersection":
            if ow > 0 and oh > 0:
                hit.append(cell.index)
        elif mode == "coverage":
            if ow > 0 and oh > 0 and ow * oh >= coverage_tau * cell.area:
                hit.append(cell.index)
        else:  # corner
            for x, y in (
                (box.x_min, box.y_min),
                (box.x_max, box.y_min),
                (box.x_min, box.y_max),
                (box.x_max, box.y_max),
            ):
                if cell.x_min < x < cell.x_max and cell.y_min < y < cell.y_max:
                    hit.append(cell.index)
                    break
    return hit


def map_detections_to_grids(
    detections: Iterable[Detection],
    spec: GridSpec,
    target_label: str,
    threshold: float = 0.2,
    mode: str = "intersection",
    coverage_tau: float = 0.5,
) -> list[GridMapping]:
    """Map every sufficiently confident target detection onto grid cells.

    Only detections whose label equals ``target_label`` and whose
    confidence reaches ``threshold`` contribute.  Output order follows the
    input detection order; detections that touch no cell under the chosen
    mode are dropped.
    """
    if mode not in MAPPING_MODES:
        raise ValueError(f"unknown mapping mode {mode!r}, expected one of {MAPPING_MODES}")
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    target = " ".join(target_label.strip().lower().split())
    if not target:
        raise ValueError("target_label must be non-empty")
    if mode == "coverage" and not (0.0 < coverage_tau <= 1.0):
        raise ValueError(f"coverage tau must be in (0, 1], got {coverage_tau}")

    cells = grid_cells(spec)
    mappings = []
    for det in detections:
        if det.label != target or det.confidence < threshold:
            continue
        pgns = _cells_for_box(det.box, cells, mode, coverage_tau)
        if pgns:
            mappings.append(GridMapping(det.label, det.confidence, tuple(sorted(pgns))))
    return mappings


def mapping_oracle(box: BoundingBox, spec: GridSpec, step_px: float = 1.0) -> set[int]:
    """Brute-force mapping check: walk a point lattice inside the box.

    Samples the box interior at ``step_px`` spacing (offset half a step
    from the box edge) and returns every cell containing at least one
    sample.  Agrees with intersection mode whenever the box overlaps each
    touched cell by more than one lattice cell.
    """
    if step_px <= 0:
        raise ValueError("step_px must be positive")
    min_side = min(spec.cell_width, spec.cell_height)
    if step_px > min_side / 4:
        raise ValueError(f"step_px {step_px} too coarse for cells of side {min_side}")

    x0 = max(box.x_min, 0.0)
    x1 = min(box.x_max, spec.image_width_px)
    y0 = max(box.y_min, 0.0)
    y1 = min(box.y_max, spec.image_height_px)
    if x0 >= x1 or y0 >= y1:
        return set()

    xs = np.arange(x0 + step_px / 2, x1, step_px)
    ys = np.arange(y0 + step_px / 2, y1, step_px)
    if xs.size == 0 or ys.size == 0:
        return set()

    cols = np.clip((xs * spec.cols / spec.image_width_px).astype(int), 0, spec.cols - 1)
    rows = np.clip((ys * spec.rows / spec.image_height_px).astype(int), 0, spec.rows - 1)
    indices = np.unique(np.add.outer(rows * spec.cols, cols) + 1)
    return {int(i) for i in indices}


def serialize_mappings(mappings: Sequence[GridMapping]) -> str:
    """JSON array with fixed key order and 3-decimal confidences."""
    parts = []
    for m in mappings:
        pgns = ",".join(str(p) for p in m.pgns)
        parts.append(
            f'{{"class":{json.dumps(m.label)},"confidence":{m.confidence:.3f},"pgns":[{pgns}]}}'
        )
    return "[" + ",".join(parts) + "]"


def parse_mappings(text: str) -> list[GridMapping]:
    """Inverse of :func:`serialize_mappings`."""
    raw = json.loads(text)
    if not isinstance(raw, list):
        raise ValueError("expected a JSON array of mappings")
    out = []
    for item in raw:
        out.append(
            GridMapping(
                label=item["class"],
                confidence=float(item["confidence"]),
                pgns=tuple(int(p) for p in item["pgns"]),
            )
        )
    return out
