"""Point-label tooling: sparse point annotation campaigns and their evaluation."""

from pointlab.domain import (
    VOID,
    LabelMap,
    Point,
    Resolution,
    ScoreMap,
    Verdict,
    pixel_center,
    point_to_pixel,
)

__all__ = [
    "VOID",
    "LabelMap",
    "Point",
    "Resolution",
    "ScoreMap",
    "Verdict",
    "pixel_center",
    "point_to_pixel",
]
