import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sadet import evalmetrics as em
from sadet.ppm import read_ppm


def random_scene(rng, n_gt, n_det):
    gts = np.column_stack([rng.uniform(10, 50, (n_gt, 2)), rng.uniform(6, 20, (n_gt, 2))])
    near = gts[rng.integers(0, max(n_gt, 1), n_det)] if n_gt else np.zeros((n_det, 4)) + 30
    dets = near + rng.normal(0, 2.0, (n_det, 4)) * [1, 1, 1, 1]
    dets[:, 2:] = np.abs(dets[:, 2:]) + 1
    scores = rng.random(n_det)
    return dets, scores, gts


class TestEvaluate:
    def test_perfect(self):
        g = np.array([[10.0, 10, 8, 4], [30, 30, 10, 5]])
        rep = em.evaluate([(g, np.array([0.9, 0.8]))], [g])
        assert (rep.precision, rep.recall, rep.f_measure) == (1.0, 1.0, 1.0)

    def test_no_detections(self):
        rep = em.evaluate([(np.zeros((0, 4)), np.zeros(0))], [np.array([[5.0, 5, 4, 4]])])
        assert rep.precision == 1.0 and rep.recall == 0.0 and rep.f_measure == 0.0
        assert "P=1 by convention" in rep.summary()

    def test_duplicate_is_false_positive(self):
        g = np.array([[10.0, 10, 8, 4]])
        rep = em.evaluate([(np.vstack([g, g]), np.array([0.9, 0.5]))], [g])
        assert (rep.tp, rep.fp, rep.fn) == (1, 1, 0)

    def test_threshold_inclusive(self):
        g = np.array([[0.0, 0, 4, 2]])
        d = np.array([[1.0, 0, 4, 2]])  # IoU = 6 / 10
        assert em.evaluate([(d, np.ones(1))], [g], 0.6).tp == 1
        assert em.evaluate([(d, np.ones(1))], [g], 0.61).tp == 0

    @pytest.mark.parametrize("t", [0.0, 1.0, -0.5])
    def test_bad_threshold(self, t):
        with pytest.raises(ValueError):
            em.evaluate([], [], t)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            em.evaluate([(np.zeros((0, 4)), np.zeros(0))], [])

    def test_csv(self):
        g = np.array([[10.0, 10, 8, 4]])
        text = em.evaluate([(g, np.ones(1))], [g]).to_csv()
        assert text.splitlines()[0] == "scene,tp,fp,fn"
        assert "f_measure,1.0" in text

    def test_agrees_with_greedy_oracle(self):
        rng = np.random.default_rng(0)
        dets, gts = [], []
        for _ in range(200):
            d, s, g = random_scene(rng, rng.integers(0, 5), rng.integers(0, 7))
            dets.append((d, s))
            gts.append(g)
        rep = em.evaluate(dets, gts, 0.5)
        assert (rep.tp, rep.fp, rep.fn) == oracles.greedy_eval(dets, gts, 0.5)

    def test_greedy_never_beats_optimal(self):
        rng = np.random.default_rng(1)
        gaps = 0
        for _ in range(200):
            d, s, g = random_scene(rng, rng.integers(1, 5), rng.integers(1, 6))
            tp, _, _ = em.match_scene(d, s, g, 0.5)
            best = oracles.optimal_tp(d, g, 0.5)
            assert tp <= best
            gaps += tp < best
        # greedy may lose a pair when a high-score detection grabs a shared gt
        assert gaps < 20


class TestScaleCorrelation:
    def test_pearson(self):
        x = np.arange(10.0)
        assert em.pearson(x, 2 * x + 1) == pytest.approx(1.0)
        assert em.pearson(x, -x) == pytest.approx(-1.0)
        assert em.pearson(x, np.ones(10)) is None
        assert em.pearson([1.0], [2.0]) is None

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=20))
    def test_pearson_matches_numpy(self, xs):
        x = np.asarray(xs)
        y = x ** 2 + np.arange(len(x))
        r = em.pearson(x, y)
        if r is not None and np.std(x) > 1e-6:
            assert r == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-9)

    def test_reads_center_cell(self):
        smap = np.arange(16.0).reshape(4, 4)
        gts = np.array([[2.0, 2, 3, 4], [13.0, 9, 6, 8], [40.0, 2, 3, 3]])
        rep = em.scale_correlation_from_maps([smap], [gts], stride=4)
        np.testing.assert_array_equal(rep.scales, [0.0, 11.0])
        np.testing.assert_allclose(rep.sizes, [5.0, 10.0])
        assert rep.skipped == 1 and rep.pearson_r == pytest.approx(1.0)

    def test_degenerate(self):
        rep = em.scale_correlation_from_maps([np.ones((4, 4))], [np.array([[2.0, 2, 3, 4], [9, 9, 5, 5]])], 4)
        assert rep.degenerate and "degenerate" in rep.summary()

    def test_heatmap(self, tmp_path):
        lo, hi = em.write_heatmap(tmp_path / "s.ppm", np.array([[1.0, 3.0], [2.0, 1.0]]), upsample=2)
        assert (lo, hi) == (1.0, 3.0)
        img = read_ppm(tmp_path / "s.ppm")
        assert img.shape == (4, 4, 3)
        assert img[0, 0, 0] == 0 and img[0, 2, 0] == 255


class TestBench:
    def test_rows_and_budget(self):
        rows, (single, multi) = em.bench(sizes=((4, 8, 8),), repetitions=2)
        assert [r.op for r in rows] == ["anchorconv-forward", "anchorconv-backward", "standard-conv"]
        assert all(r.median_s > 0 for r in rows)
        assert single.total == 64 * 3 and multi.total > single.total
        text = em.bench_csv(rows, (single, multi))
        assert "anchor_budget" in text

    def test_pyramid(self):
        assert em.pyramid_sizes(8, 8) == [64, 16, 4, 1]
        assert em.pyramid_sizes(5, 3, levels=2) == [15, 6]

    def test_warmup(self):
        with pytest.raises(ValueError):
            em.time_call(lambda: None, 1, warmup=0)


class TestSizeBand:
    G = np.array([[10.0, 10, 8, 4], [40, 40, 30, 10]])

    def test_large_matches_ignored(self):
        dets = [(self.G.copy(), np.array([0.9, 0.8]))]
        rep = em.evaluate_size_band(dets, [self.G], 0, 10)
        assert (rep.tp, rep.fp, rep.fn) == (1, 0, 0)

    def test_small_miss(self):
        dets = [(self.G[1:], np.array([0.9]))]
        rep = em.evaluate_size_band(dets, [self.G], 0, 10)
        assert (rep.tp, rep.fp, rep.fn) == (0, 0, 1)
        assert rep.f_measure == 0.0

    def test_unmatched_small_detection_is_fp(self):
        dets = [(np.array([[50.0, 5, 6, 3], [10, 10, 8, 4]]), np.array([0.9, 0.5]))]
        rep = em.evaluate_size_band(dets, [self.G], 0, 10)
        assert (rep.tp, rep.fp, rep.fn) == (1, 1, 0)

    def test_full_band_equals_evaluate(self):
        rng = np.random.default_rng(3)
        dets, gts = [], []
        for _ in range(50):
            d, s, g = random_scene(rng, rng.integers(0, 4), rng.integers(0, 5))
            dets.append((d, s))
            gts.append(g)
        a = em.evaluate(dets, gts)
        b = em.evaluate_size_band(dets, gts, 0, np.inf)
        assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)

    def test_quartile(self):
        lo, hi = em.smallest_quartile_band([np.array([[0, 0, 3, 4.0]]), np.array([[0, 0, 6, 8.0]] * 3)])
        assert lo == 0.0 and hi == pytest.approx(8.75)
