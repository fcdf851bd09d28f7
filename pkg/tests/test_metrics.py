import numpy as np
import pytest

from oodscore import (
    EvalResult,
    MetricError,
    auroc,
    csv_row,
    evaluate,
    fpr_at_tpr,
    threshold_at_tpr,
)


def auroc_pairwise_oracle(ids, oods):
    """O(n^2) definition: win fraction with half credit for ties."""
    ids = np.asarray(ids, float)[:, None]
    oods = np.asarray(oods, float)[None, :]
    wins = float((ids > oods).sum())
    ties = float((ids == oods).sum())
    return (wins + 0.5 * ties) / (ids.size * oods.size)


def threshold_scan_oracle(ids, target):
    """Try every observed ID score, keep the largest passing one."""
    ids = np.asarray(ids, float)
    passing = [t for t in np.unique(ids) if np.mean(ids >= t) >= target]
    return max(passing)


def random_monotone(rng, values):
    """Random strictly increasing transform over the observed values."""
    uniq = np.unique(values)
    steps = rng.uniform(0.05, 1.5, size=uniq.size)
    mapped = np.cumsum(steps) + rng.normal()
    lookup = dict(zip(uniq.tolist(), mapped.tolist()))
    return np.array([lookup[v] for v in np.asarray(values, float).tolist()])


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([1, 2, 3], [0, -1]) == 1.0

    def test_one_win_one_loss(self):
        assert auroc([1, 3], [2]) == 0.5

    def test_single_tie_midrank(self):
        assert auroc([1], [1]) == 0.5

    def test_matches_pairwise_oracle(self, rng):
        for _ in range(50):
            n_id = int(rng.integers(1, 80))
            n_ood = int(rng.integers(1, 80))
            # quantized scores force plenty of ties
            ids = np.round(rng.normal(size=n_id), 1)
            oods = np.round(rng.normal(size=n_ood), 1)
            assert auroc(ids, oods) == pytest.approx(
                auroc_pairwise_oracle(ids, oods), abs=1e-12
            )

    def test_complement_symmetry(self, rng):
        for _ in range(30):
            a = np.round(rng.normal(size=int(rng.integers(1, 50))), 1)
            b = np.round(rng.normal(size=int(rng.integers(1, 50))), 1)
            assert auroc(a, b) + auroc(b, a) == pytest.approx(1.0, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(MetricError, match="empty"):
            auroc([], [1.0])


class TestThreshold:
    def test_spec_example(self):
        assert threshold_at_tpr(np.arange(1.0, 21.0), 0.95) == 2.0

    def test_tpr_one_gives_min(self, rng):
        ids = rng.normal(size=17)
        assert threshold_at_tpr(ids, 1.0) == ids.min()

    def test_constant_scores(self):
        for t in (0.01, 0.5, 0.95, 1.0):
            assert threshold_at_tpr(np.full(9, 4.25), t) == 4.25

    def test_threshold_is_an_observed_score(self, rng):
        for _ in range(30):
            ids = rng.normal(size=int(rng.integers(1, 60)))
            t = float(rng.uniform(0.05, 1.0))
            tau = threshold_at_tpr(ids, t)
            assert tau in ids
            assert np.mean(ids >= tau) >= t

    def test_matches_scan_oracle(self, rng):
        for _ in range(100):
            ids = np.round(rng.normal(size=int(rng.integers(1, 60))), 1)
            t = float(rng.uniform(0.05, 1.0))
            assert threshold_at_tpr(ids, t) == threshold_scan_oracle(ids, t)

    def test_bad_target(self):
        with pytest.raises(MetricError):
            threshold_at_tpr([1.0], 0.0)


class TestFpr:
    def test_spec_example(self):
        assert fpr_at_tpr(np.arange(1.0, 21.0), [0.0, 1.0, 5.0], 0.95) == pytest.approx(1 / 3)

    def test_all_ood_below(self):
        assert fpr_at_tpr([5.0, 6.0], [1.0, 2.0]) == 0.0

    def test_all_ood_above(self):
        assert fpr_at_tpr([5.0, 6.0], [9.0, 10.0]) == 1.0

    def test_nondecreasing_in_tpr_target(self, rng):
        for _ in range(20):
            ids = rng.normal(size=50)
            oods = rng.normal(size=50)
            targets = np.sort(rng.uniform(0.05, 1.0, size=6))
            fprs = [fpr_at_tpr(ids, oods, t) for t in targets]
            assert all(a <= b + 1e-15 for a, b in zip(fprs, fprs[1:]))


class TestEvaluate:
    def test_perfect_separation_bundle(self):
        r = evaluate([3.0, 4.0, 5.0], [0.0, 1.0])
        assert r.auroc == 1.0
        assert r.fpr95 == 0.0
        assert r.n_id == 3 and r.n_ood == 2

    def test_identical_multisets(self):
        scores = [0.0, 1.0, 2.0, 2.0]
        assert evaluate(scores, scores).auroc == 0.5

    def test_dual_oracle_on_gaussian_fixture(self, rng):
        ids = rng.normal(loc=1.0, size=200)
        oods = rng.normal(loc=0.0, size=200)
        r = evaluate(ids, oods)
        assert r.auroc == pytest.approx(auroc_pairwise_oracle(ids, oods), abs=1e-12)
        tau = threshold_scan_oracle(ids, 0.95)
        assert r.threshold_at_tpr95 == tau
        assert r.fpr95 == np.mean(oods >= tau)

    def test_monotone_transform_invariance_bitwise(self, rng):
        for _ in range(20):
            ids = np.round(rng.normal(size=60), 1)
            oods = np.round(rng.normal(size=40), 1)
            g_all = random_monotone(rng, np.concatenate([ids, oods]))
            g_ids, g_oods = g_all[:60], g_all[60:]
            assert auroc(g_ids, g_oods) == auroc(ids, oods)
            assert fpr_at_tpr(g_ids, g_oods, 0.95) == fpr_at_tpr(ids, oods, 0.95)

    def test_result_validation(self):
        with pytest.raises(MetricError):
            EvalResult(auroc=1.2, fpr95=0.0, threshold_at_tpr95=0.0, n_id=1, n_ood=1)


class TestCsv:
    def test_fixed_format(self):
        r = EvalResult(auroc=1.0, fpr95=0.0, threshold_at_tpr95=2.5, n_id=20, n_ood=3)
        line = csv_row("energy", "id", "ood", r)
        assert line == "energy,id,ood,1.000000,0.000000,2.500000,20,3"

    def test_comma_fields_rejected(self):
        r = EvalResult(auroc=0.5, fpr95=0.5, threshold_at_tpr95=0.0, n_id=1, n_ood=1)
        with pytest.raises(MetricError):
            csv_row("a,b", "id", "ood", r)
