"""Segmentation quality from dense masks or sparse labeled points.

Point IoU treats the labeled point set as a uniform sample of pixels:
intersection and union are counted over sampled points only, so the
estimator is insensitive to which pixels were drawn beyond sampling
noise, and collapses to dense IoU when every non-VOID pixel is labeled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from pointlab.domain import VOID, LabelMap, Point, Resolution, point_to_pixel
from pointlab.formats import PointLabelRow


@dataclass(frozen=True)
class MethodPrediction:
    """One method's predicted label maps, keyed by image id."""

    method_id: str
    maps: Mapping[str, LabelMap]


@dataclass(frozen=True)
class LabeledPoint:
    """A point with its ground-truth class, used as an IoU sample."""

    image_id: str
    point: Point
    class_id: int


@dataclass(frozen=True)
class IoUCount:
    intersection: int
    union: int

    @property
    def value(self) -> float | None:
        """IoU ratio; None when the union is empty (class absent)."""
        if self.union == 0:
            return None
        return self.intersection / self.union


def _as_maps(pred: MethodPrediction | Mapping[str, LabelMap]) -> Mapping[str, LabelMap]:
    return pred.maps if isinstance(pred, MethodPrediction) else pred


def dense_iou_counts(
    pred: MethodPrediction | Mapping[str, LabelMap],
    gts: Mapping[str, LabelMap],
    class_id: int,
) -> IoUCount:
    """Pixel counts pooled over all images; gt VOID pixels excluded from both."""
    maps = _as_maps(pred)
    inter = union = 0
    for image_id in sorted(gts):
        gt = gts[image_id]
        pm = maps[image_id]
        if pm.grid.shape != gt.grid.shape:
            raise ValueError(f"shape mismatch for image {image_id!r}")
        valid = gt.grid != VOID
        p = (pm.grid == class_id) & valid
        g = (gt.grid == class_id) & valid
        inter += int((p & g).sum())
        union += int((p | g).sum())
    return IoUCount(inter, union)


def dense_iou(
    pred: MethodPrediction | Mapping[str, LabelMap],
    gts: Mapping[str, LabelMap],
    class_id: int,
) -> float | None:
    return dense_iou_counts(pred, gts, class_id).value


@dataclass(frozen=True)
class MiouResult:
    miou: float
    per_class: dict[int, float | None]
    excluded_classes: int  # classes with empty union, left out of the mean


def _confusion(pred: Mapping[str, LabelMap], gts: Mapping[str, LabelMap], classes: int) -> np.ndarray:
    conf = np.zeros(classes * classes, dtype=np.int64)
    for image_id in sorted(gts):
        g = gts[image_id].grid
        p = pred[image_id].grid
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for image {image_id!r}")
        valid = g != VOID
        gi = g[valid].astype(np.int64)
        pi = p[valid].astype(np.int64)
        conf += np.bincount(gi * classes + pi, minlength=classes * classes)
    return conf.reshape(classes, classes)


def _miou_from_confusion(conf: np.ndarray) -> MiouResult:
    inter = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    per_class: dict[int, float | None] = {}
    vals: list[float] = []
    excluded = 0
    for c in range(conf.shape[0]):
        if union[c] == 0:
            per_class[c] = None
            excluded += 1
        else:
            v = float(inter[c] / union[c])
            per_class[c] = v
            vals.append(v)
    if not vals:
        raise ValueError("every class has an empty union; mIoU undefined")
    return MiouResult(miou=float(np.mean(vals)), per_class=per_class, excluded_classes=excluded)


def dense_miou(
    pred: MethodPrediction | Mapping[str, LabelMap],
    gts: Mapping[str, LabelMap],
    classes: int,
) -> MiouResult:
    """Mean over classes with non-empty union; empty-union classes are
    excluded and counted in excluded_classes."""
    return _miou_from_confusion(_confusion(_as_maps(pred), gts, classes))


def point_iou_counts(
    pred: MethodPrediction | Mapping[str, LabelMap],
    labeled: Sequence[LabeledPoint],
    class_id: int,
) -> IoUCount:
    """Dense-IoU formula restricted to the labeled point sample."""
    maps = _as_maps(pred)
    inter = union = 0
    for lp in labeled:
        pm = maps[lp.image_id]
        r, c = point_to_pixel(lp.point, pm.width, pm.height)
        p = int(pm.grid[r, c]) == class_id
        g = lp.class_id == class_id
        inter += p and g
        union += p or g
    return IoUCount(inter, union)


def point_iou(
    pred: MethodPrediction | Mapping[str, LabelMap],
    labeled: Sequence[LabeledPoint],
    class_id: int,
) -> float | None:
    return point_iou_counts(pred, labeled, class_id).value


def point_miou(
    pred: MethodPrediction | Mapping[str, LabelMap],
    labeled: Sequence[LabeledPoint],
    classes: int,
) -> MiouResult:
    maps = _as_maps(pred)
    conf = np.zeros((classes, classes), dtype=np.int64)
    for lp in labeled:
        pm = maps[lp.image_id]
        r, c = point_to_pixel(lp.point, pm.width, pm.height)
        conf[lp.class_id, int(pm.grid[r, c])] += 1
    return _miou_from_confusion(conf)


# ---------------------------------------------------------------------------
# Rank correlation

def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """Kendall tau-b: (C - D) / sqrt((C + D + Ta) * (C + D + Tb)), where Ta
    and Tb count pairs tied on exactly one side.  Raises when either side is
    fully tied (correlation undefined)."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least two items")
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if not (np.isfinite(av).all() and np.isfinite(bv).all()):
        raise ValueError("non-finite rank inputs")
    i, j = np.triu_indices(len(a), k=1)
    da = np.sign(av[i] - av[j])
    db = np.sign(bv[i] - bv[j])
    conc = int(((da * db) > 0).sum())
    disc = int(((da * db) < 0).sum())
    ties_a_only = int(((da == 0) & (db != 0)).sum())
    ties_b_only = int(((db == 0) & (da != 0)).sum())
    denom_a = conc + disc + ties_a_only
    denom_b = conc + disc + ties_b_only
    if denom_a == 0 or denom_b == 0:
        raise ValueError("rank correlation undefined: one side is fully tied")
    return (conc - disc) / math.sqrt(denom_a * denom_b)


# ---------------------------------------------------------------------------
# Rank study: does point mIoU rank methods like dense mIoU does?

@dataclass
class EvalReport:
    classes: int
    ppi: int
    draws: int
    seed: int
    method_ids: list[str]
    dense_per_class: dict[str, dict[int, float | None]]
    dense_miou: dict[str, float]
    point_per_class: list[dict[str, dict[int, float | None]]]  # per draw
    point_miou: list[dict[str, float]]  # per draw
    taus: list[float]
    tau_mean: float

    def summary_line(self) -> str:
        return (
            f"methods={len(self.method_ids)} ppi={self.ppi} draws={self.draws} "
            f"seed={self.seed} mean_tau={self.tau_mean:.6f}"
        )


def uniform_labeled_points(
    gt: LabelMap, image_id: str, ppi: int, rng: np.random.Generator
) -> list[LabeledPoint]:
    """ppi distinct non-VOID pixel centers, labeled with their gt class."""
    from pointlab.domain import pixel_center

    valid = np.flatnonzero(gt.grid.ravel() != VOID)
    if len(valid) == 0:
        raise ValueError(f"image {image_id!r} is entirely VOID")
    take = min(ppi, len(valid))
    chosen = rng.choice(valid, size=take, replace=False)
    out = []
    for flat in chosen:
        r, c = int(flat) // gt.width, int(flat) % gt.width
        out.append(
            LabeledPoint(
                image_id=image_id,
                point=pixel_center(r, c, gt.width, gt.height),
                class_id=int(gt.grid[r, c]),
            )
        )
    return out


def _point_confusions(
    methods: Sequence[MethodPrediction],
    gts: Mapping[str, LabelMap],
    labeled: Sequence[LabeledPoint],
    classes: int,
) -> list[np.ndarray]:
    """One confusion matrix per method over a shared point sample."""
    by_image: dict[str, list[LabeledPoint]] = {}
    for lp in labeled:
        by_image.setdefault(lp.image_id, []).append(lp)
    confs = [np.zeros(classes * classes, dtype=np.int64) for _ in methods]
    for image_id, pts in by_image.items():
        h = gts[image_id].height
        w = gts[image_id].width
        rows = np.array([point_to_pixel(lp.point, w, h)[0] for lp in pts])
        cols = np.array([point_to_pixel(lp.point, w, h)[1] for lp in pts])
        gt_cls = np.array([lp.class_id for lp in pts], dtype=np.int64)
        for mi, m in enumerate(methods):
            pred_cls = m.maps[image_id].grid[rows, cols].astype(np.int64)
            confs[mi] += np.bincount(gt_cls * classes + pred_cls, minlength=classes * classes)
    return [c.reshape(classes, classes) for c in confs]


def rank_study(
    methods: Sequence[MethodPrediction],
    gts: Mapping[str, LabelMap],
    classes: int,
    ppi: int,
    draws: int,
    seed: int,
    threads: int = 1,
) -> EvalReport:
    """Dense mIoU ranking vs point-mIoU rankings over repeated point draws.

    Every method is scored on the same points within a draw.  Evaluation
    sampling is uniform regardless of any acquisition strategy, so the
    estimate stays unbiased.
    """
    if not methods:
        raise ValueError("no methods given")
    ids = [m.method_id for m in methods]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate method ids")

    dense_pc: dict[str, dict[int, float | None]] = {}
    dense_m: dict[str, float] = {}
    for m in methods:
        res = dense_miou(m, gts, classes)
        dense_pc[m.method_id] = res.per_class
        dense_m[m.method_id] = res.miou

    image_ids = sorted(gts)
    ss = np.random.SeedSequence([seed])
    draw_seeds = ss.spawn(draws)

    def run_draw(d: int) -> tuple[dict[str, dict[int, float | None]], dict[str, float]]:
        rng = np.random.default_rng(draw_seeds[d])
        labeled: list[LabeledPoint] = []
        for image_id in image_ids:
            labeled.extend(uniform_labeled_points(gts[image_id], image_id, ppi, rng))
        confs = _point_confusions(methods, gts, labeled, classes)
        pc: dict[str, dict[int, float | None]] = {}
        pm: dict[str, float] = {}
        for m, conf in zip(methods, confs):
            res = _miou_from_confusion(conf)
            pc[m.method_id] = res.per_class
            pm[m.method_id] = res.miou
        return pc, pm

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run_draw, range(draws)))
    else:
        results = [run_draw(d) for d in range(draws)]

    point_pc = [r[0] for r in results]
    point_m = [r[1] for r in results]
    dense_vec = [dense_m[i] for i in ids]
    taus = [kendall_tau(dense_vec, [pm[i] for i in ids]) for pm in point_m]
    return EvalReport(
        classes=classes,
        ppi=ppi,
        draws=draws,
        seed=seed,
        method_ids=ids,
        dense_per_class=dense_pc,
        dense_miou=dense_m,
        point_per_class=point_pc,
        point_miou=point_m,
        taus=taus,
        tau_mean=float(np.mean(taus)),
    )


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    """CSV tables plus a one-line summary; column docs live in the README."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "dense_iou.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method_id", "class_id", "iou"])
        for mid in report.method_ids:
            for c in range(report.classes):
                v = report.dense_per_class[mid][c]
                w.writerow([mid, c, "" if v is None else f"{v:.6f}"])

    with open(out / "point_iou.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "method_id", "class_id", "iou"])
        for d, pc in enumerate(report.point_per_class):
            for mid in report.method_ids:
                for c in range(report.classes):
                    v = pc[mid][c]
                    w.writerow([d, mid, c, "" if v is None else f"{v:.6f}"])

    with open(out / "miou.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "method_id", "dense_miou", "point_miou"])
        for d, pm in enumerate(report.point_miou):
            for mid in report.method_ids:
                w.writerow([d, mid, f"{report.dense_miou[mid]:.6f}", f"{pm[mid]:.6f}"])

    with open(out / "tau.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "tau"])
        for d, t in enumerate(report.taus):
            w.writerow([d, f"{t:.6f}"])

    (out / "summary.txt").write_text(report.summary_line() + "\n")


# ---------------------------------------------------------------------------
# Dense reconstruction from sparse points

def reconstruct_dense(
    points: Sequence[tuple[Point, int]],
    width: int,
    height: int,
    classes: int | None = None,
) -> LabelMap:
    """Assign every pixel the class of its nearest labeled point (Euclidean
    distance between pixel centers; ties go to the point with the smaller
    (row, col))."""
    if not points:
        raise ValueError("cannot reconstruct from zero points")
    keyed = []
    for p, cls in points:
        r, c = point_to_pixel(p, width, height)
        keyed.append((r, c, cls))
    keyed.sort()
    pr = np.array([k[0] for k in keyed], dtype=np.int64)
    pc = np.array([k[1] for k in keyed], dtype=np.int64)
    pcls = np.array([k[2] for k in keyed], dtype=np.uint16)
    if classes is None:
        classes = int(pcls.max()) + 1

    rows = np.arange(height, dtype=np.int64)
    cols = np.arange(width, dtype=np.int64)
    # squared center distances are integers, so ties are exact and argmin's
    # first-match rule implements the (row, col) tie-break over sorted points
    dr2 = (rows[:, None] - pr[None, :]) ** 2  # (H, P)
    dc2 = (cols[:, None] - pc[None, :]) ** 2  # (W, P)
    grid = np.empty((height, width), dtype=np.uint16)
    for r in range(height):
        nearest = np.argmin(dr2[r][None, :] + dc2, axis=1)  # (W,)
        grid[r] = pcls[nearest]
    return LabelMap(grid=grid, classes=classes)


# ---------------------------------------------------------------------------
# Dataset statistics

@dataclass
class DatasetStats:
    rows: int
    yes: int
    no: int
    unresolved: int
    yes_per_class: list[tuple[int, int]]  # (class_id, yes count), non-increasing
    labels_per_point: float
    answers_per_label: float
    classes_with_yes: int
    classes_with_3yes: int


def dataset_stats(rows: Iterable[PointLabelRow]) -> DatasetStats:
    rows = list(rows)
    yes = sum(1 for r in rows if r.verdict is Resolution.YES)
    no = sum(1 for r in rows if r.verdict is Resolution.NO)
    unresolved = len(rows) - yes - no
    yes_counts: dict[int, int] = {}
    for r in rows:
        if r.verdict is Resolution.YES:
            yes_counts[r.class_id] = yes_counts.get(r.class_id, 0) + 1
    ranked = sorted(yes_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    points = {(r.image_id, round(r.x, 6), round(r.y, 6)) for r in rows}
    votes = sum(r.yes_votes + r.no_votes + r.unsure_votes for r in rows)
    return DatasetStats(
        rows=len(rows),
        yes=yes,
        no=no,
        unresolved=unresolved,
        yes_per_class=ranked,
        labels_per_point=(len(rows) / len(points)) if points else 0.0,
        answers_per_label=(votes / len(rows)) if rows else 0.0,
        classes_with_yes=sum(1 for _, n in ranked if n >= 1),
        classes_with_3yes=sum(1 for _, n in ranked if n >= 3),
    )
