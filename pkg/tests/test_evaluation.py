"""IoU estimators, rank correlation, reconstruction, dataset statistics."""

import numpy as np
import pytest
import scipy.stats
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from pointlab.domain import VOID, LabelMap, Point, Resolution, pixel_center, point_to_pixel
from pointlab.evaluation import (
    DatasetStats,
    EvalReport,
    IoUCount,
    LabeledPoint,
    MethodPrediction,
    dataset_stats,
    dense_iou,
    dense_iou_counts,
    dense_miou,
    kendall_tau,
    point_iou,
    point_miou,
    rank_study,
    reconstruct_dense,
    uniform_labeled_points,
    write_report,
)
from pointlab.formats import PointLabelRow
from pointlab.synth import SceneSpec, default_quality_ladder, generate_scene, make_method_family


def _lm(rows, classes):
    return LabelMap(grid=np.array(rows, dtype=np.uint16), classes=classes)


# fixture with intersection 3 and union 7 for class 1
GT_TOY = [[1, 1, 1], [1, 1, 0], [0, 0, 0]]
PRED_TOY = [[0, 0, 1], [1, 1, 1], [1, 0, 0]]


class TestDenseIou:
    def test_three_sevenths_fixture(self):
        gts = {"a": _lm(GT_TOY, 2)}
        pred = {"a": _lm(PRED_TOY, 2)}
        counts = dense_iou_counts(pred, gts, 1)
        assert (counts.intersection, counts.union) == (3, 7)
        assert dense_iou(pred, gts, 1) == pytest.approx(3 / 7)
        assert dense_iou(pred, gts, 0) == pytest.approx(2 / 6)

    def test_void_pixel_leaves_both_masks(self):
        gt = np.array(GT_TOY, dtype=np.uint16)
        gt[0, 2] = VOID  # was an intersecting class-1 pixel
        gts = {"a": LabelMap(grid=gt, classes=2)}
        pred = {"a": _lm(PRED_TOY, 2)}
        counts = dense_iou_counts(pred, gts, 1)
        assert (counts.intersection, counts.union) == (2, 6)

    def test_pooled_counts_not_averaged_ratios(self):
        gts = {
            "a": _lm(GT_TOY, 2),
            "b": _lm([[1, 0, 0]], 2),
        }
        pred = {
            "a": _lm(PRED_TOY, 2),
            "b": _lm([[0, 1, 1]], 2),  # img b: intersection 0, union 3
        }
        counts = dense_iou_counts(pred, gts, 1)
        assert (counts.intersection, counts.union) == (3, 10)

    def test_absent_class_is_none(self):
        gts = {"a": _lm(GT_TOY, 3)}
        pred = {"a": _lm(PRED_TOY, 3)}
        assert dense_iou(pred, gts, 2) is None
        assert IoUCount(0, 0).value is None

    def test_shape_mismatch_rejected(self):
        gts = {"a": _lm(GT_TOY, 2)}
        pred = {"a": _lm([[0, 1]], 2)}
        with pytest.raises(ValueError, match="shape"):
            dense_iou(pred, gts, 1)


class TestDenseMiou:
    def test_mean_over_defined_classes_only(self):
        gts = {"a": _lm(GT_TOY, 3)}
        pred = {"a": _lm(PRED_TOY, 3)}
        res = dense_miou(pred, gts, 3)
        assert res.per_class[0] == pytest.approx(2 / 6)
        assert res.per_class[1] == pytest.approx(3 / 7)
        assert res.per_class[2] is None
        assert res.excluded_classes == 1
        assert res.miou == pytest.approx((2 / 6 + 3 / 7) / 2)

    def test_all_void_undefined(self):
        gts = {"a": LabelMap(grid=np.full((2, 2), VOID, dtype=np.uint16), classes=2)}
        pred = {"a": _lm([[0, 0], [0, 0]], 2)}
        with pytest.raises(ValueError, match="mIoU undefined"):
            dense_miou(pred, gts, 2)

    def test_accepts_method_prediction_wrapper(self):
        gts = {"a": _lm(GT_TOY, 2)}
        mp = MethodPrediction(method_id="m", maps={"a": _lm(PRED_TOY, 2)})
        assert dense_miou(mp, gts, 2).miou == dense_miou(mp.maps, gts, 2).miou


class TestPointIouExhaustion:
    """Labeling every non-VOID pixel must reproduce dense IoU exactly."""

    def _world(self, seed):
        rng = np.random.default_rng(seed)
        gts, preds = {}, {}
        for image_id in ("left", "right"):
            gt = rng.integers(0, 4, size=(9, 7)).astype(np.uint16)
            gt[rng.random((9, 7)) < 0.1] = VOID
            pr = rng.integers(0, 4, size=(9, 7)).astype(np.uint16)
            gts[image_id] = LabelMap(grid=gt, classes=4)
            preds[image_id] = LabelMap(grid=pr, classes=4)
        return gts, preds

    def _all_points(self, gts):
        labeled = []
        for image_id, gt in gts.items():
            for r in range(gt.height):
                for c in range(gt.width):
                    if gt.grid[r, c] != VOID:
                        labeled.append(
                            LabeledPoint(
                                image_id=image_id,
                                point=pixel_center(r, c, gt.width, gt.height),
                                class_id=int(gt.grid[r, c]),
                            )
                        )
        return labeled

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_per_class_identity(self, seed):
        gts, preds = self._world(seed)
        labeled = self._all_points(gts)
        for c in range(4):
            dense = dense_iou_counts(preds, gts, c)
            pt = point_iou(preds, labeled, c)
            if dense.union == 0:
                assert pt is None
            else:
                assert pt == dense.value  # exact, same integer counts

    @pytest.mark.parametrize("seed", [0, 3])
    def test_miou_identity(self, seed):
        gts, preds = self._world(seed)
        labeled = self._all_points(gts)
        d = dense_miou(preds, gts, 4)
        p = point_miou(preds, labeled, 4)
        assert p.miou == d.miou
        assert p.per_class == d.per_class
        assert p.excluded_classes == d.excluded_classes


class TestKendallTau:
    def test_perfect_agreement(self):
        assert kendall_tau([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0

    def test_perfect_reversal(self):
        assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0

    def test_adjacent_swap_anchor(self):
        assert kendall_tau([1, 2, 3, 4], [2, 1, 3, 4]) == pytest.approx(0.666667, abs=1e-6)

    def test_fully_tied_side_raises(self):
        with pytest.raises(ValueError, match="fully tied"):
            kendall_tau([1.0, 1.0, 1.0], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            kendall_tau([1, 2], [1, 2, 3])

    def test_single_item_rejected(self):
        with pytest.raises(ValueError):
            kendall_tau([1], [1])

    @given(
        seed=st.integers(0, 2**31 - 1),
        n=st.integers(3, 12),
        span=st.integers(2, 5),
    )
    @settings(max_examples=100, deadline=None)
    def test_matches_scipy_tau_b_with_ties(self, seed, n, span):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, span, size=n).astype(float)
        b = rng.integers(0, span, size=n).astype(float)
        assume(len(set(a)) > 1 and len(set(b)) > 1)
        expected = scipy.stats.kendalltau(a, b).statistic
        assert kendall_tau(a, b) == pytest.approx(float(expected), abs=1e-12)


class TestRankStudy:
    def _setup(self):
        gts = {
            f"img{i:03d}": generate_scene(
                SceneSpec(width=48, height=48, classes=6, region_count=10, seed=i)
            )[0]
            for i in range(8)
        }
        methods = make_method_family(gts, default_quality_ladder(5))
        return gts, methods

    def test_separated_family_ranks_perfectly(self):
        gts, methods = self._setup()
        report = rank_study(methods, gts, classes=6, ppi=40, draws=4, seed=11)
        assert len(report.taus) == 4
        assert report.tau_mean >= 0.9
        dense = [report.dense_miou[m.method_id] for m in methods]
        assert all(a > b for a, b in zip(dense, dense[1:]))

    def test_deterministic_and_thread_invariant(self):
        gts, methods = self._setup()
        a = rank_study(methods, gts, classes=6, ppi=15, draws=3, seed=5)
        b = rank_study(methods, gts, classes=6, ppi=15, draws=3, seed=5)
        c = rank_study(methods, gts, classes=6, ppi=15, draws=3, seed=5, threads=2)
        assert a.taus == b.taus == c.taus
        assert a.point_miou == b.point_miou == c.point_miou

    def test_identical_methods_make_tau_undefined(self):
        gts = {"a": generate_scene(SceneSpec(width=16, height=16, classes=4, region_count=5, seed=0))[0]}
        maps = {"a": gts["a"]}
        twins = [MethodPrediction("m1", maps), MethodPrediction("m2", maps)]
        with pytest.raises(ValueError, match="fully tied"):
            rank_study(twins, gts, classes=4, ppi=10, draws=1, seed=0)

    def test_duplicate_ids_rejected(self):
        gts = {"a": generate_scene(SceneSpec(width=8, height=8, classes=3, region_count=3, seed=0))[0]}
        twins = [MethodPrediction("m", {"a": gts["a"]}), MethodPrediction("m", {"a": gts["a"]})]
        with pytest.raises(ValueError, match="duplicate"):
            rank_study(twins, gts, classes=3, ppi=4, draws=1, seed=0)

    def test_write_report_layout(self, tmp_path):
        gts, methods = self._setup()
        report = rank_study(methods[:3], gts, classes=6, ppi=10, draws=2, seed=1)
        write_report(report, tmp_path)
        assert (tmp_path / "summary.txt").read_text().strip() == report.summary_line()
        dense_lines = (tmp_path / "dense_iou.csv").read_text().splitlines()
        assert dense_lines[0] == "method_id,class_id,iou"
        assert len(dense_lines) == 1 + 3 * 6
        tau_lines = (tmp_path / "tau.csv").read_text().splitlines()
        assert tau_lines[0] == "draw,tau"
        assert len(tau_lines) == 3
        miou_lines = (tmp_path / "miou.csv").read_text().splitlines()
        assert len(miou_lines) == 1 + 2 * 3


class TestUniformLabeledPoints:
    def test_void_never_sampled_and_labels_match(self):
        rng = np.random.default_rng(0)
        grid = rng.integers(0, 3, size=(10, 10)).astype(np.uint16)
        grid[:5, :] = VOID
        gt = LabelMap(grid=grid, classes=3)
        pts = uniform_labeled_points(gt, "img", 30, np.random.default_rng(1))
        assert len(pts) == 30
        for lp in pts:
            r, c = point_to_pixel(lp.point, 10, 10)
            assert grid[r, c] != VOID
            assert lp.class_id == int(grid[r, c])

    def test_truncates_to_valid_pixel_count(self):
        grid = np.full((3, 3), VOID, dtype=np.uint16)
        grid[0, 0] = 1
        gt = LabelMap(grid=grid, classes=2)
        pts = uniform_labeled_points(gt, "img", 5, np.random.default_rng(0))
        assert len(pts) == 1

    def test_entirely_void_raises(self):
        gt = LabelMap(grid=np.full((2, 2), VOID, dtype=np.uint16), classes=2)
        with pytest.raises(ValueError, match="VOID"):
            uniform_labeled_points(gt, "img", 1, np.random.default_rng(0))


class TestReconstructDense:
    def test_strip_splits_between_two_points(self):
        pts = [
            (pixel_center(0, 2, 10, 1), 0),
            (pixel_center(0, 7, 10, 1), 1),
        ]
        m = reconstruct_dense(pts, width=10, height=1, classes=2)
        assert m.grid[0].tolist() == [0] * 5 + [1] * 5

    def test_exact_midpoint_tie_goes_to_lower_scan_order(self):
        pts = [
            (pixel_center(0, 6, 9, 1), 1),
            (pixel_center(0, 2, 9, 1), 0),
        ]
        m = reconstruct_dense(pts, width=9, height=1, classes=2)
        # column 4 is equidistant (d=2 both ways); the col-2 point sorts first
        assert m.grid[0].tolist() == [0, 0, 0, 0, 0, 1, 1, 1, 1]

    def test_point_anywhere_in_pixel_acts_like_center(self):
        off_center = [(Point(x=0.29, y=0.01), 0), (Point(x=0.71, y=0.99), 1)]
        centered = [(pixel_center(0, 2, 10, 4), 0), (pixel_center(3, 7, 10, 4), 1)]
        a = reconstruct_dense(off_center, width=10, height=4, classes=2)
        b = reconstruct_dense(centered, width=10, height=4, classes=2)
        assert np.array_equal(a.grid, b.grid)

    def test_infers_class_count(self):
        m = reconstruct_dense([(Point(0.5, 0.5), 6)], width=2, height=2)
        assert m.classes == 7
        assert (m.grid == 6).all()

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            reconstruct_dense([], width=4, height=4)

    @given(
        seed=st.integers(0, 2**31 - 1),
        w=st.integers(1, 12),
        h=st.integers(1, 12),
        n=st.integers(1, 6),
    )
    @settings(max_examples=80, deadline=None)
    def test_matches_brute_force_voronoi(self, seed, w, h, n):
        assume(n <= w * h)
        rng = np.random.default_rng(seed)
        flats = rng.choice(w * h, size=n, replace=False)
        pts = [
            (pixel_center(int(f) // w, int(f) % w, w, h), int(rng.integers(0, 5)))
            for f in flats
        ]
        got = reconstruct_dense(pts, width=w, height=h, classes=5)
        keyed = sorted(point_to_pixel(p, w, h) + (cls,) for p, cls in pts)
        for r in range(h):
            for c in range(w):
                best = min(keyed, key=lambda k: (r - k[0]) ** 2 + (c - k[1]) ** 2)
                assert got.grid[r, c] == best[2]


class TestDatasetStats:
    def _rows(self):
        rows = []
        i = 0

        def add(n, verdict, class_id):
            nonlocal i
            for _ in range(n):
                rows.append(
                    PointLabelRow(
                        image_id=f"img{i % 7}", class_id=class_id,
                        x=round((i * 0.013) % 1.0, 6), y=round((i * 0.029) % 1.0, 6),
                        verdict=verdict, yes_votes=3 if verdict is Resolution.YES else 0,
                        no_votes=3 if verdict is Resolution.NO else 0,
                        unsure_votes=1 if verdict is Resolution.UNRESOLVED else 0,
                        source="sim",
                    )
                )
                i += 1

        add(42, Resolution.YES, 0)
        add(161, Resolution.NO, 1)
        add(23, Resolution.UNRESOLVED, 2)
        return rows

    def test_verdict_tallies(self):
        s = dataset_stats(self._rows())
        assert (s.yes, s.no, s.unresolved) == (42, 161, 23)
        assert s.rows == 226

    def test_permutation_insensitive(self):
        rows = self._rows()
        rng = np.random.default_rng(4)
        shuffled = [rows[i] for i in rng.permutation(len(rows))]
        assert dataset_stats(rows) == dataset_stats(shuffled)

    def test_yes_per_class_ranked_desc_then_id(self):
        rows = []
        for class_id, n in [(5, 2), (1, 4), (3, 2)]:
            for k in range(n):
                rows.append(
                    PointLabelRow(
                        image_id="a", class_id=class_id, x=round(k * 0.1, 6),
                        y=round(class_id * 0.1, 6), verdict=Resolution.YES,
                        yes_votes=1, no_votes=0, unsure_votes=0, source="sim",
                    )
                )
        s = dataset_stats(rows)
        assert s.yes_per_class == [(1, 4), (3, 2), (5, 2)]
        assert s.classes_with_yes == 3
        assert s.classes_with_3yes == 1

    def test_labels_per_point_and_answers_per_label(self):
        mk = lambda cls, verdict: PointLabelRow(
            image_id="a", class_id=cls, x=0.5, y=0.5, verdict=verdict,
            yes_votes=2, no_votes=1, unsure_votes=0, source="sim",
        )
        rows = [mk(0, Resolution.NO), mk(1, Resolution.NO), mk(2, Resolution.YES)]
        rows.append(
            PointLabelRow(
                image_id="a", class_id=0, x=0.25, y=0.25, verdict=Resolution.YES,
                yes_votes=1, no_votes=0, unsure_votes=0, source="sim",
            )
        )
        s = dataset_stats(rows)
        assert s.labels_per_point == pytest.approx(2.0)  # 4 rows on 2 points
        assert s.answers_per_label == pytest.approx(10 / 4)

    def test_empty_input(self):
        s = dataset_stats([])
        assert s == DatasetStats(
            rows=0, yes=0, no=0, unresolved=0, yes_per_class=[],
            labels_per_point=0.0, answers_per_label=0.0,
            classes_with_yes=0, classes_with_3yes=0,
        )
