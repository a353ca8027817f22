"""Synthetic scenes and controllable weak predictors.

Ground truth comes from seeded Voronoi or blob partitions.  A degradation
turns ground truth into a plausible model output in two stages: first a
predicted label map (boundary displacement plus independent label flips),
then a score volume around it.  Before normalization the true class gets a
fixed runner-up mass, so wherever the top-1 is wrong the truth sits second
in the ranking, mimicking the regime where a weak model's correct label is
nearly always near the top.  Where the prediction is right that extra mass
changes nothing (the normalized vector is the same one-hot).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from pointlab.domain import VOID, LabelMap, ScoreMap
from pointlab.evaluation import MethodPrediction, dense_miou

GENERATORS = ("voronoi", "blobs")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    classes: int
    region_count: int
    seed: int = 0
    generator: str = "voronoi"

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad extent {self.width}x{self.height}")
        if self.classes < 1 or self.classes >= VOID:
            raise ValueError(f"bad class count {self.classes}")
        if self.region_count < 1:
            raise ValueError(f"bad region count {self.region_count}")
        if self.width * self.height < self.region_count:
            raise ValueError(
                f"degenerate scene: {self.region_count} regions in "
                f"{self.width * self.height} pixels"
            )
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")


@dataclass(frozen=True)
class DegradationSpec:
    """Controls how far a synthetic predictor strays from ground truth.

    boundary_jitter_px   smooth displacement of region boundaries, in pixels
    flip_rate            iid chance a pixel's predicted label is swapped for
                         another class present in the image
    smoothing_radius_px  box-blur radius applied to the score channels,
                         softening edges into mixed distributions
    temperature          mixes scores towards uniform: p = (q + t/C) / (1+t);
                         0 leaves hard assignments untouched
    runner_up_mass       score mass granted to the true class before
                         normalization (keeps truth ranked second at errors)
    """

    boundary_jitter_px: float = 0.0
    flip_rate: float = 0.0
    smoothing_radius_px: int = 0
    temperature: float = 0.0
    runner_up_mass: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.boundary_jitter_px < 0:
            raise ValueError("negative jitter")
        if not (0.0 <= self.flip_rate < 1.0):
            raise ValueError(f"flip rate {self.flip_rate} outside [0, 1)")
        if self.smoothing_radius_px < 0:
            raise ValueError("negative smoothing radius")
        if self.temperature < 0:
            raise ValueError("negative temperature")
        if not (0.0 <= self.runner_up_mass < 1.0):
            raise ValueError(f"runner-up mass {self.runner_up_mass} outside [0, 1)")


def generate_scene(spec: SceneSpec) -> tuple[LabelMap, frozenset[int]]:
    """Seeded scene; returns the map and the exact set of classes present."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, spec.width, spec.height]))
    h, w = spec.height, spec.width
    flat = rng.choice(h * w, size=spec.region_count, replace=False)
    seed_r = (flat // w).astype(np.int64)
    seed_c = (flat % w).astype(np.int64)
    region_cls = rng.integers(0, spec.classes, size=spec.region_count)

    rows = np.arange(h, dtype=np.int64)
    cols = np.arange(w, dtype=np.int64)
    if spec.generator == "voronoi":
        # integer squared distances: exact ties, first seed wins
        d2 = (
            (rows[:, None, None] - seed_r[None, None, :]) ** 2
            + (cols[None, :, None] - seed_c[None, None, :]) ** 2
        )
        owner = d2.argmin(axis=2)
    else:  # blobs: overlapping gaussian bumps, strongest field wins
        scale = math.sqrt(h * w / spec.region_count)
        sigma = scale * rng.uniform(0.5, 1.5, size=spec.region_count)
        amp = rng.uniform(0.5, 1.5, size=spec.region_count)
        d2 = (
            (rows[:, None, None] - seed_r[None, None, :]) ** 2
            + (cols[None, :, None] - seed_c[None, None, :]) ** 2
        ).astype(np.float64)
        field = amp[None, None, :] * np.exp(-d2 / (2.0 * sigma[None, None, :] ** 2))
        owner = field.argmax(axis=2)

    grid = region_cls[owner].astype(np.uint16)
    m = LabelMap(grid=grid, classes=spec.classes)
    return m, m.labels_present()


def _smooth_offsets(h: int, w: int, magnitude: float, rng: np.random.Generator) -> np.ndarray:
    """(2, H, W) smooth displacement field with |values| <= magnitude."""
    cell = 8
    gh = h // cell + 2
    gw = w // cell + 2
    coarse = rng.uniform(-1.0, 1.0, size=(2, gh, gw))
    ys = (np.arange(h) + 0.5) / cell
    xs = (np.arange(w) + 0.5) / cell
    y0 = np.minimum(ys.astype(np.int64), gh - 2)
    x0 = np.minimum(xs.astype(np.int64), gw - 2)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    c00 = coarse[:, y0][:, :, x0]
    c01 = coarse[:, y0][:, :, x0 + 1]
    c10 = coarse[:, y0 + 1][:, :, x0]
    c11 = coarse[:, y0 + 1][:, :, x0 + 1]
    out = (
        c00 * (1 - fy) * (1 - fx)
        + c01 * (1 - fy) * fx
        + c10 * fy * (1 - fx)
        + c11 * fy * fx
    )
    return out * magnitude


def predicted_labels(gt: LabelMap, spec: DegradationSpec) -> np.ndarray:
    """(H, W) uint16 degraded label map: jittered boundaries plus flips."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    h, w = gt.height, gt.width
    grid = gt.grid

    if spec.boundary_jitter_px > 0:
        off = _smooth_offsets(h, w, spec.boundary_jitter_px, rng)
        rr = np.clip(np.rint(np.arange(h)[:, None] + off[0]), 0, h - 1).astype(np.int64)
        cc = np.clip(np.rint(np.arange(w)[None, :] + off[1]), 0, w - 1).astype(np.int64)
        grid = grid[rr, cc]

    pred = grid.astype(np.uint16).copy()
    if spec.flip_rate > 0:
        present = np.array(sorted(gt.labels_present()), dtype=np.int64)
        if len(present) > 1:
            pos = {int(c): i for i, c in enumerate(present)}
            mask = rng.random((h, w)) < spec.flip_rate
            # VOID pixels keep their value: a predictor has no VOID output,
            # but flipping them would invent labels where truth is unknown
            mask &= pred != VOID
            idx = np.flatnonzero(mask.ravel())
            if len(idx):
                cur = pred.ravel()[idx].astype(np.int64)
                cur_pos = np.array([pos.get(int(v), 0) for v in cur])
                shift = rng.integers(1, len(present), size=len(idx))
                repl = present[(cur_pos + shift) % len(present)]
                out = pred.ravel().copy()
                out[idx] = repl.astype(np.uint16)
                pred = out.reshape(h, w)
    return pred


def degrade_to_scoremap(gt: LabelMap, spec: DegradationSpec) -> ScoreMap:
    """Score volume around the degraded prediction (see module docstring)."""
    c = gt.classes
    pred = predicted_labels(gt, spec)
    h, w = pred.shape

    vol = np.zeros((h, w, c), dtype=np.float64)
    safe_pred = np.where(pred == VOID, 0, pred).astype(np.int64)
    ridx, cidx = np.indices((h, w))
    vol[ridx, cidx, safe_pred] = 1.0
    if spec.runner_up_mass > 0:
        safe_gt = np.where(gt.grid == VOID, 0, gt.grid).astype(np.int64)
        vol[ridx, cidx, safe_gt] += spec.runner_up_mass

    if spec.smoothing_radius_px > 0:
        size = 2 * spec.smoothing_radius_px + 1
        vol = ndimage.uniform_filter(vol, size=(size, size, 1), mode="nearest")

    vol /= vol.sum(axis=2, keepdims=True)
    if spec.temperature > 0:
        t = spec.temperature
        vol = (vol + t / c) / (1.0 + t)
    vol /= vol.sum(axis=2, keepdims=True)
    return ScoreMap(scores=vol)


def top1_accuracy(m: ScoreMap, gt: LabelMap) -> float:
    """Fraction of non-VOID pixels where argmax matches ground truth."""
    valid = gt.grid != VOID
    if not valid.any():
        raise ValueError("image is entirely VOID")
    return float((m.pseudo_labels()[valid] == gt.grid[valid]).mean())


def default_quality_ladder(
    count: int,
    flip_lo: float = 0.01,
    flip_hi: float = 0.42,
    jitter_px: float = 1.0,
    seed: int = 0,
) -> list[DegradationSpec]:
    """Degradations ordered best-first; flip rate carries the quality signal."""
    if count < 1:
        raise ValueError("need at least one rung")
    if not (0 <= flip_lo < flip_hi < 1):
        raise ValueError(f"bad flip range [{flip_lo}, {flip_hi}]")
    rates = np.linspace(flip_lo, flip_hi, count)
    return [
        DegradationSpec(
            boundary_jitter_px=jitter_px,
            flip_rate=float(r),
            smoothing_radius_px=0,
            temperature=0.5,
            seed=seed + i,
        )
        for i, r in enumerate(rates)
    ]


def make_method_family(
    gt_frames: Mapping[str, LabelMap] | Sequence[LabelMap],
    quality_ladder: Sequence[DegradationSpec],
    max_reseeds: int = 8,
) -> list[MethodPrediction]:
    """Synthetic methods with strictly decreasing dense mIoU.

    The ladder is assumed ordered best-first.  If two rungs land on equal
    or inverted mIoU, the offending rung is regenerated with a shifted seed;
    after max_reseeds attempts the family is declared unorderable.
    """
    if isinstance(gt_frames, Mapping):
        gts = dict(gt_frames)
    else:
        gts = {f"frame{i:05d}": m for i, m in enumerate(gt_frames)}
    if not gts:
        raise ValueError("no ground-truth frames")
    classes = next(iter(gts.values())).classes

    def build(spec: DegradationSpec, idx: int) -> tuple[MethodPrediction, float]:
        maps = {
            image_id: LabelMap(grid=predicted_labels(gt, replace(spec, seed=spec.seed + 7919 * hash_i)), classes=classes)
            for hash_i, (image_id, gt) in enumerate(sorted(gts.items()))
        }
        mp = MethodPrediction(method_id=f"m{idx:02d}", maps=maps)
        return mp, dense_miou(mp, gts, classes).miou

    out: list[MethodPrediction] = []
    prev = float("inf")
    for idx, spec in enumerate(quality_ladder):
        attempt = 0
        mp, miou = build(spec, idx)
        while miou >= prev and attempt < max_reseeds:
            attempt += 1
            mp, miou = build(replace(spec, seed=spec.seed + 100003 * attempt), idx)
        if miou >= prev:
            raise RuntimeError(
                f"could not order rung {idx}: mIoU {miou:.6f} >= previous {prev:.6f} "
                f"after {max_reseeds} reseeds"
            )
        out.append(mp)
        prev = miou
    return out
