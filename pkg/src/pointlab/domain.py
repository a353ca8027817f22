"""Shared vocabulary for point-label campaigns.

Coordinate convention: points are normalized (x, y) with 0 <= x, y < 1,
origin at the top-left corner, x growing rightwards and y downwards.  A
point falls into the pixel whose index is floor(coord * extent); pixel
centers map back to ((col + 0.5) / W, (row + 0.5) / H), so center points
round-trip exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

# Reserved id for unlabeled / ignored pixels.  Label grids are uint16, so
# this is the largest representable value; class ids must stay below it.
VOID: int = 0xFFFF

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


def valid_identifier(s: str) -> bool:
    """True for ids safe to embed in CSV cells, URLs and file names."""
    return bool(_ID_RE.match(s))


class Verdict(str, Enum):
    """A single annotator's reply to one yes/no question."""

    YES = "YES"
    NO = "NO"
    UNSURE = "UNSURE"


class Resolution(str, Enum):
    """Outcome of a replicated question after unanimity resolution."""

    YES = "YES"
    NO = "NO"
    UNRESOLVED = "UNRESOLVED"


@dataclass(frozen=True)
class Point:
    """Normalized image coordinates."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x < 1.0) or not (0.0 <= self.y < 1.0):
            raise ValueError(f"point coordinates out of [0, 1): ({self.x}, {self.y})")


def point_to_pixel(p: Point, width: int, height: int) -> tuple[int, int]:
    """Pixel (row, col) containing a normalized point."""
    if width <= 0 or height <= 0:
        raise ValueError(f"bad raster extent {width}x{height}")
    # coords are < 1 by construction; the min() guards float round-up only.
    row = min(int(p.y * height), height - 1)
    col = min(int(p.x * width), width - 1)
    return row, col


def pixel_center(row: int, col: int, width: int, height: int) -> Point:
    """Normalized point at the center of pixel (row, col)."""
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(f"pixel ({row}, {col}) outside {width}x{height}")
    return Point((col + 0.5) / width, (row + 0.5) / height)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Dense per-pixel class assignment.

    grid: (H, W) uint16 array; entries are class ids < classes, or VOID.
    The array is frozen after construction; build a new map to change it.
    """

    grid: np.ndarray
    classes: int

    def __post_init__(self) -> None:
        if self.classes < 1 or self.classes >= VOID:
            raise ValueError(f"class count out of range: {self.classes}")
        grid = np.ascontiguousarray(self.grid, dtype=np.uint16)
        if grid.ndim != 2 or grid.size == 0:
            raise ValueError(f"label grid must be non-empty 2-D, got shape {grid.shape}")
        bad = (grid >= self.classes) & (grid != VOID)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(
                f"label {int(grid[r, c])} at ({int(r)}, {int(c)}) >= classes={self.classes}"
            )
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    def labels_present(self) -> frozenset[int]:
        """Exact set of non-VOID class ids occurring in the grid."""
        vals = np.unique(self.grid)
        return frozenset(int(v) for v in vals if v != VOID)

    def label_at(self, p: Point) -> int:
        r, c = point_to_pixel(p, self.width, self.height)
        return int(self.grid[r, c])


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Per-pixel class score distribution, shape (H, W, C), float64.

    Every pixel's score vector sums to 1 within 1e-5.  Scores never
    contain a VOID channel; VOID is a ground-truth concept only.
    """

    scores: np.ndarray

    def __post_init__(self) -> None:
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if scores.ndim != 3 or scores.size == 0:
            raise ValueError(f"score array must be non-empty (H, W, C), got {scores.shape}")
        if not np.isfinite(scores).all():
            raise ValueError("score array contains non-finite values")
        if scores.min() < 0.0:
            raise ValueError("score array contains negative values")
        sums = scores.sum(axis=2)
        worst = float(np.abs(sums - 1.0).max())
        if worst > 1e-5:
            raise ValueError(f"pixel score vectors must sum to 1 (worst deviation {worst:.3g})")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    @property
    def classes(self) -> int:
        return self.scores.shape[2]

    def pseudo_labels(self) -> np.ndarray:
        """(H, W) uint16 argmax labels; ties resolve to the lowest class id."""
        return self.scores.argmax(axis=2).astype(np.uint16)

    def vector_at(self, p: Point) -> np.ndarray:
        r, c = point_to_pixel(p, self.width, self.height)
        return self.scores[r, c]


@dataclass(frozen=True)
class ImageRecord:
    """One image in a campaign: where its rasters live and what it contains.

    image_level_labels is the exact set of classes present in the image;
    questions are only ever asked about classes from this set.
    """

    image_id: str
    label_map_path: Path | None
    score_map_paths: tuple[Path, ...]
    image_level_labels: frozenset[int]

    def __post_init__(self) -> None:
        if not valid_identifier(self.image_id):
            raise ValueError(f"image id {self.image_id!r} not in [A-Za-z0-9_-]+")
        if not self.image_level_labels:
            raise ValueError(f"image {self.image_id!r} has an empty label set")
