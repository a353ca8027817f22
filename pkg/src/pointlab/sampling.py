"""Point selection strategies over model score maps.

A strategy defines a candidate pixel subset; the points handed out are a
uniform without-replacement draw from that subset, reported as pixel
centers.  When the candidate subset cannot supply the requested count, the
remainder is padded with a uniform draw over the rest of the image and the
fallback is logged as a warning.

Ranked strategies (entropy, l2norm3m, qbc3m, entropy3m) keep exactly
ceil(top_fraction * W * H) pixels with the highest statistic, ties broken
by (row, col) scan order.  Pixels whose statistic is zero carry no signal
and are never candidates, so e.g. a committee in perfect agreement makes
qbc3m degrade to uniform sampling via the padding rule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pointlab.domain import VOID, LabelMap, Point, ScoreMap, pixel_center, point_to_pixel

log = logging.getLogger(__name__)

STRATEGIES = (
    "uniform",
    "class_balanced",
    "entropy",
    "score_band",
    "border",
    "l2norm3m",
    "qbc3m",
    "entropy3m",
    "border3m",
)
_ENSEMBLE = {"l2norm3m", "qbc3m", "entropy3m", "border3m"}
_RANKED = {"entropy", "entropy3m", "l2norm3m", "qbc3m"}


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    top_fraction: float = 0.01
    band: tuple[float, float] = (0.8, 0.9)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if not (0.0 < self.top_fraction <= 1.0):
            raise ValueError(f"top fraction {self.top_fraction} outside (0, 1]")
        lo, hi = self.band
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"bad score band [{lo}, {hi}]")


def pixel_entropy(p: Sequence[float] | np.ndarray) -> float:
    """Shannon entropy in nats of one score vector; 0 log 0 := 0."""
    v = np.asarray(p, dtype=np.float64)
    if v.ndim != 1 or len(v) == 0:
        raise ValueError("expected a 1-D score vector")
    if not np.isfinite(v).all() or v.min() < 0:
        raise ValueError("scores must be finite and non-negative")
    if abs(float(v.sum()) - 1.0) > 1e-5:
        raise ValueError(f"scores must sum to 1, got {float(v.sum()):.6f}")
    nz = v[v > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_map(scores: np.ndarray) -> np.ndarray:
    """(H, W) per-pixel entropy of an (H, W, C) score volume."""
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(scores > 0, scores * np.log(scores), 0.0)
    return -contrib.sum(axis=2)


def js_divergence(members: Sequence[Sequence[float] | np.ndarray]) -> float:
    """Jensen-Shannon divergence of member distributions: H(mean) - mean(H)."""
    if len(members) < 2:
        raise ValueError("need at least two member distributions")
    vs = [np.asarray(m, dtype=np.float64) for m in members]
    if len({v.shape for v in vs}) != 1:
        raise ValueError("member distributions differ in length")
    mean = np.mean(vs, axis=0)
    return pixel_entropy(mean) - float(np.mean([pixel_entropy(v) for v in vs]))


def _border_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels whose label differs from any 4-neighbour's."""
    b = np.zeros(labels.shape, dtype=bool)
    hdiff = labels[:, :-1] != labels[:, 1:]
    vdiff = labels[:-1, :] != labels[1:, :]
    b[:, :-1] |= hdiff
    b[:, 1:] |= hdiff
    b[:-1, :] |= vdiff
    b[1:, :] |= vdiff
    return b


def _ranked_candidates(stat: np.ndarray, top_fraction: float) -> np.ndarray:
    """Flat indices of the top ceil(f*W*H) pixels by stat, scan-order ties,
    zero-statistic pixels excluded."""
    h, w = stat.shape
    k = math.ceil(top_fraction * h * w)
    flat = stat.ravel()
    rows, cols = np.divmod(np.arange(h * w), w)
    order = np.lexsort((cols, rows, -flat))
    top = order[:k]
    return top[flat[top] > 0]


def _candidate_indices(spec: StrategySpec, maps: list[ScoreMap]) -> np.ndarray:
    m0 = maps[0]
    if spec.kind == "uniform":
        return np.arange(m0.height * m0.width)
    if spec.kind == "entropy":
        return _ranked_candidates(entropy_map(m0.scores), spec.top_fraction)
    if spec.kind == "entropy3m":
        mean = np.mean([m.scores for m in maps], axis=0)
        return _ranked_candidates(entropy_map(mean), spec.top_fraction)
    if spec.kind == "score_band":
        lo, hi = spec.band
        top1 = m0.scores.max(axis=2)
        return np.flatnonzero((top1 >= lo) & (top1 <= hi)).astype(np.int64)
    if spec.kind == "border":
        return np.flatnonzero(_border_mask(m0.pseudo_labels()))
    if spec.kind == "border3m":
        mean = np.mean([m.scores for m in maps], axis=0)
        return np.flatnonzero(_border_mask(mean.argmax(axis=2)))
    if spec.kind == "l2norm3m":
        n = len(maps)
        stat = np.zeros((m0.height, m0.width), dtype=np.float64)
        for i in range(n):
            for j in range(i + 1, n):
                diff = maps[i].scores - maps[j].scores
                stat += np.sqrt((diff * diff).sum(axis=2))
        return _ranked_candidates(stat, spec.top_fraction)
    if spec.kind == "qbc3m":
        mean = np.mean([m.scores for m in maps], axis=0)
        member_h = np.mean([entropy_map(m.scores) for m in maps], axis=0)
        jsd = entropy_map(mean) - member_h
        # fp noise can leave tiny negatives on agreeing pixels
        return _ranked_candidates(np.maximum(jsd, 0.0), spec.top_fraction)
    raise AssertionError(spec.kind)


def _flat_to_points(flat: np.ndarray, width: int, height: int) -> list[Point]:
    return [pixel_center(int(i) // width, int(i) % width, width, height) for i in flat]


def _class_balanced(spec: StrategySpec, m0: ScoreMap, n: int, rng: np.random.Generator) -> np.ndarray:
    """Near-equal per-pseudo-class quotas; shortfall from small classes is
    redistributed over classes that still have unsampled pixels."""
    pseudo = m0.pseudo_labels().ravel()
    classes = np.unique(pseudo)
    pools = {int(c): np.flatnonzero(pseudo == c) for c in classes}
    taken: dict[int, np.ndarray] = {int(c): np.empty(0, dtype=np.int64) for c in classes}

    remaining = n
    open_classes = [int(c) for c in classes]
    while remaining > 0 and open_classes:
        order = list(rng.permutation(len(open_classes)))
        base, extra = divmod(remaining, len(open_classes))
        quotas = {
            open_classes[idx]: base + (1 if rank < extra else 0)
            for rank, idx in enumerate(order)
        }
        next_open: list[int] = []
        for c in open_classes:
            pool = pools[c]
            avail = len(pool) - len(taken[c])
            want = min(quotas[c], avail)
            if want > 0:
                fresh = np.setdiff1d(pool, taken[c], assume_unique=True)
                pick = rng.choice(fresh, size=want, replace=False)
                taken[c] = np.concatenate([taken[c], pick])
                remaining -= want
            if len(taken[c]) < len(pool):
                next_open.append(c)
        open_classes = next_open
    return np.concatenate([taken[int(c)] for c in classes]) if classes.size else np.empty(0, np.int64)


def select_points(
    strategy: StrategySpec,
    maps: ScoreMap | Sequence[ScoreMap],
    n: int,
) -> list[Point]:
    """n distinct pixel-center points drawn under the strategy.

    Deterministic given the strategy seed; a fresh RNG is built per call.
    """
    if isinstance(maps, ScoreMap):
        maps = [maps]
    else:
        maps = list(maps)
    if not maps:
        raise ValueError("no score maps given")
    shape = maps[0].scores.shape
    for m in maps[1:]:
        if m.scores.shape != shape:
            raise ValueError("ensemble score maps differ in shape")
    if strategy.kind in _ENSEMBLE and len(maps) < 2:
        raise ValueError(f"strategy {strategy.kind!r} needs an ensemble of >= 2 score maps")
    h, w = maps[0].height, maps[0].width
    if not (0 < n <= h * w):
        raise ValueError(f"cannot draw {n} distinct points from {w}x{h} pixels")

    rng = np.random.default_rng(np.random.SeedSequence([strategy.seed]))
    if strategy.kind == "class_balanced":
        chosen = _class_balanced(strategy, maps[0], n, rng)
    else:
        cand = _candidate_indices(strategy, maps)
        if len(cand) >= n:
            chosen = rng.choice(cand, size=n, replace=False)
        else:
            chosen = cand
    if len(chosen) < n:
        pad = n - len(chosen)
        rest = np.setdiff1d(np.arange(h * w), chosen, assume_unique=False)
        extra = rng.choice(rest, size=pad, replace=False)
        log.warning(
            "strategy %s: candidate subset has %d pixels < n=%d; padded %d from uniform",
            strategy.kind,
            len(chosen),
            n,
            pad,
        )
        chosen = np.concatenate([chosen, extra])
    return _flat_to_points(chosen, w, h)


def complementarity_fraction(points: Sequence[Point], gt: LabelMap, m: ScoreMap) -> float:
    """Share of sampled points where truth disagrees with the model's argmax:
    the informative fraction of a draw.  Points on VOID truth are skipped."""
    if gt.grid.shape != (m.height, m.width):
        raise ValueError("ground truth and score map shapes differ")
    pseudo = m.pseudo_labels()
    total = 0
    informative = 0
    for p in points:
        r, c = point_to_pixel(p, gt.width, gt.height)
        truth = int(gt.grid[r, c])
        if truth == VOID:
            continue
        total += 1
        informative += truth != int(pseudo[r, c])
    if total == 0:
        raise ValueError("complementarity undefined: every sampled point is VOID")
    return informative / total
