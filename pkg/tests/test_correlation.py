from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from mslmu.cluster import SiteCluster
from mslmu.correlation import (CpkMatrix, ImputationError, cluster_krcc, compute_cpk, cpk_weights,
                               find_gaps, impute_cck, impute_cluster, impute_maa, krcc)
from mslmu.synthetic import generate_synthetic


def brute_krcc(x, y):
    n = len(x)
    s = 0
    for i in range(n):
        for j in range(i + 1, n):
            s += int(np.sign(x[i] - x[j])) * int(np.sign(y[i] - y[j]))
    return 2 * s / (n * (n - 1))


def cpk_example():
    r = np.array([[1.0, 0.8, 0.6], [0.8, 1.0, 0.5], [0.6, 0.5, 1.0]])
    return CpkMatrix(("s1", "s2", "s3"), r, cpk_weights(r))


paired = st.integers(2, 60).flatmap(
    lambda n: st.tuples(arrays(np.float64, n, elements=st.integers(-5, 5).map(float)),
                        arrays(np.float64, n, elements=st.floats(-1e3, 1e3))))


class TestKrcc:
    def test_identity(self):
        assert krcc([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0

    def test_reversed(self):
        assert krcc([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0

    def test_hand_value(self):
        assert krcc([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)

    def test_brute_force_random(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            n = int(rng.integers(2, 201))
            # integer values force ties, which tau-a scores as zero
            x = rng.integers(0, 30, n).astype(float)
            y = rng.normal(size=n).round(1)
            assert krcc(x, y) == brute_krcc(x, y)

    def test_blocked_sum_matches_unblocked(self, rng):
        x = rng.normal(size=3000)
        y = x + rng.normal(size=3000)
        from mslmu.correlation import _concordance_sum
        assert _concordance_sum(x, y, block=64) == _concordance_sum(x, y, block=4096)

    @given(paired)
    def test_symmetric_and_bounded(self, xy):
        x, y = xy
        assert krcc(x, y) == krcc(y, x)
        assert -1 <= krcc(x, y) <= 1

    @given(paired)
    def test_monotone_invariance(self, xy):
        x, y = xy
        assert krcc(np.exp(x / 5) + 3, y) == krcc(x, y)

    def test_errors(self):
        with pytest.raises(ValueError):
            krcc([1.0], [1.0])
        with pytest.raises(ValueError):
            krcc([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            krcc([1.0, np.nan], [1.0, 2.0])


def two_site(a, b, spd=24):
    return SiteCluster(["a", "b"], np.vstack([a, b]), step=timedelta(days=1) / spd)


class TestClusterKrcc:
    def test_self(self, small_cluster):
        assert cluster_krcc(small_cluster, ("site1", "site1")) == 1.0

    def test_shifted_copy(self, rng):
        x = rng.normal(size=24 * 20)
        assert cluster_krcc(two_site(x, x + 3.0), ("a", "b")) == 1.0

    def test_matches_slot_oracle(self, small_cluster):
        spd = small_cluster.samples_per_day
        xa, xb = small_cluster.series("site1")[:1400], small_cluster.series("site2")[:1400]
        per_slot = []
        for s in range(spd):
            idx = list(range(s, len(xa), spd))
            per_slot.append(brute_krcc(xa[idx], xb[idx]))
        got = cluster_krcc(small_cluster, ("site1", "site2"), slice(0, 1400))
        assert got == pytest.approx(np.mean(per_slot), abs=1e-14)

    def test_missing_days_dropped(self, rng):
        x = rng.normal(size=24 * 10)
        y = x.copy()
        y[5] = np.nan
        assert cluster_krcc(two_site(x, y), ("a", "b")) == 1.0

    def test_grows_with_correlation(self):
        vals = [cluster_krcc(generate_synthetic(0, sites=2, length=4000, correlation_strength=c),
                             ("site1", "site2")) for c in (0.0, 0.5, 0.9)]
        assert vals[0] < vals[1] < vals[2]


class TestCpk:
    def test_worked_example(self):
        k = cpk_example()
        assert k.weight("s1", "s2") == pytest.approx(0.57143, abs=1e-5)
        assert k.weight("s1", "s3") == pytest.approx(0.42857, abs=1e-5)
        assert k.row("s1") == pytest.approx({"s2": 0.8 / 1.4, "s3": 0.6 / 1.4})

    def test_single_neighbour(self):
        assert_allclose(cpk_weights([[1, 0.5], [0.5, 1]]), [[0, 1], [1, 0]])

    def test_degenerate(self):
        with pytest.raises(ValueError):
            cpk_weights([[1, 0.5, -0.5], [0.5, 1, 0.2], [-0.5, 0.2, 1]])

    def test_unit_diagonal_required(self):
        with pytest.raises(ValueError):
            cpk_weights([[0.9, 0.5], [0.5, 1]])

    @given(st.integers(2, 6).flatmap(lambda k: arrays(np.float64, (k, k), elements=st.floats(0.01, 1))))
    def test_rows_sum_to_one_and_keep_order(self, a):
        r = (a + a.T) / 2
        np.fill_diagonal(r, 1.0)
        k = cpk_weights(r)
        assert_allclose(k.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert_array_equal(np.diag(k), 0.0)
        for i in range(len(r)):
            off = [j for j in range(len(r)) if j != i]
            assert_array_equal(np.argsort(r[i, off], kind="stable"), np.argsort(k[i, off], kind="stable"))

    def test_compute_cpk(self, small_cluster):
        k = compute_cpk(small_cluster, slice(0, 1400))
        assert_array_equal(np.diag(k.r), 1.0)
        assert np.all(np.abs(k.r) <= 1)
        assert_allclose(k.k.sum(axis=1), 1.0, atol=1e-12)


class TestGaps:
    def test_none(self):
        assert find_gaps([1.0, 2.0]) == []

    def test_runs(self):
        x = np.zeros(12)
        x[[3, 4, 5, 9]] = np.nan
        assert find_gaps(x) == [(3, 3), (9, 1)]

    def test_all(self):
        assert find_gaps(np.full(7, np.nan)) == [(0, 7)]


class TestMaa:
    def test_hand_value(self):
        assert impute_maa([3.0, 5.0, np.nan], 2)[2] == 4.0

    def test_constant(self):
        x = np.full(40, 5.5)
        x[10:20] = np.nan
        assert_array_equal(impute_maa(x, 4), 5.5)

    def test_gap_at_start(self):
        with pytest.raises(ImputationError):
            impute_maa([np.nan, 1.0, 2.0], 1)

    def test_ramp_bias(self):
        x = np.arange(20.0)
        x[10:15] = np.nan
        filled = impute_maa(x, 4)
        assert np.all(filled[10:15] < np.arange(10.0, 15.0))
        assert_allclose(filled[10], 7.5)

    def test_present_values_untouched(self, rng):
        x = rng.normal(size=50)
        x[[20, 21, 30]] = np.nan
        out = impute_maa(x, 3)
        ok = ~np.isnan(x)
        assert_array_equal(out[ok], x[ok])


class TestCck:
    def test_worked_example(self):
        k = cpk_example()
        c = SiteCluster(["s1", "s2", "s3"], [[np.nan], [5.0], [7.0]])
        assert impute_cck(c, "s1", [0], k)[0] == pytest.approx(5.857, abs=1e-3)
        assert impute_cck(c, "s1", [0], k)[0] == pytest.approx(5 * 0.8 / 1.4 + 7 * 0.6 / 1.4, abs=1e-12)

    def test_constant_neighbours(self):
        k = cpk_example()
        c = SiteCluster(["s1", "s2", "s3"], [[np.nan, 1.0], [4.0, 4.0], [4.0, 4.0]])
        assert impute_cck(c, "s1", [0], k)[0] == pytest.approx(4.0, abs=1e-14)

    def test_neighbour_missing(self):
        k = cpk_example()
        c = SiteCluster(["s1", "s2", "s3"], [[np.nan], [np.nan], [7.0]])
        with pytest.raises(ImputationError):
            impute_cck(c, "s1", [0], k)

    def test_site_order_independent_of_cpk_order(self):
        k = cpk_example()
        c = SiteCluster(["s3", "s1", "s2"], [[7.0], [np.nan], [5.0]])
        assert impute_cck(c, "s1", [0], k)[0] == pytest.approx(5 * 0.8 / 1.4 + 7 * 0.6 / 1.4)

    @given(arrays(np.float64, (2, 8), elements=st.floats(0, 30)))
    def test_convex_bounds(self, neigh):
        k = cpk_example()
        vals = np.vstack([np.full(8, np.nan), neigh])
        out = impute_cck(SiteCluster(["s1", "s2", "s3"], vals), "s1", np.arange(8), k)
        assert np.all(out >= neigh.min(axis=0) - 1e-9)
        assert np.all(out <= neigh.max(axis=0) + 1e-9)

    def test_impute_cluster(self, small_cluster):
        k = compute_cpk(small_cluster, slice(0, 1400))
        gapped = small_cluster.values.copy()
        gapped[0, 1500:1510] = np.nan
        c = small_cluster.with_values(gapped)
        for method in ("cck", "maa"):
            done = impute_cluster(c, method, 4, k)
            assert not done.mask.any()
            assert_array_equal(done.values[:, :1500], small_cluster.values[:, :1500])
        with pytest.raises(ValueError):
            impute_cluster(c, "cck", 4, None)
        with pytest.raises(ValueError):
            impute_cluster(c, "spline", 4, k)
