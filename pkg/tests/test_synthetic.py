import numpy as np
import pytest
from numpy.testing import assert_array_equal

from mslmu.correlation import cluster_krcc, krcc
from mslmu.synthetic import generate_synthetic, noise_for_snr


class TestGenerator:
    def test_shape_and_ids(self):
        c = generate_synthetic(0, sites=4, length=1200)
        assert c.values.shape == (4, 1200)
        assert c.site_ids == ["site1", "site2", "site3", "site4"]
        assert c.samples_per_day == 96
        assert np.all(c.values >= 0)

    def test_same_seed_identical(self):
        a, b = generate_synthetic(5), generate_synthetic(5)
        assert a.values.tobytes() == b.values.tobytes()
        assert generate_synthetic(6).values.tobytes() != a.values.tobytes()

    def test_independent_sites(self):
        c = generate_synthetic(1, sites=2, length=10000, correlation_strength=0.0)
        # the diurnal cycle is shared; within a time-of-day slot it is constant
        assert abs(cluster_krcc(c, ("site1", "site2"))) < 0.1

    def test_monotone_copies(self):
        c = generate_synthetic(2, sites=3, length=2000, correlation_strength=1.0, noise_level=0.0,
                               lags=[0, 0, 0])
        assert krcc(c.series("site1"), c.series("site2")) == 1.0
        assert krcc(c.series("site2"), c.series("site3")) == 1.0

    def test_correlation_increases(self):
        per_c = []
        for strength in (0.2, 0.6, 0.95):
            c = generate_synthetic(3, sites=2, length=5000, correlation_strength=strength)
            per_c.append(cluster_krcc(c, ("site1", "site2")))
        assert per_c[0] < per_c[1] < per_c[2]

    def test_lags(self):
        c, clean = generate_synthetic(4, sites=2, length=1500, correlation_strength=1.0, noise_level=0.0,
                                      lags=[3, 0], return_clean=True)
        # with c = 1 both sites share the latent; site1 sees it three steps late
        a = (clean[0] - clean[0].mean()) / clean[0].std()
        b = (clean[1] - clean[1].mean()) / clean[1].std()
        corr = [np.corrcoef(a[k:], b[:len(b) - k])[0, 1] for k in range(6)]
        assert int(np.argmax(corr)) == 3

    @pytest.mark.parametrize("kw", [dict(sites=1), dict(length=999), dict(correlation_strength=1.5),
                                    dict(noise_level=-1.0), dict(lags=[0, 0]), dict(samples_per_day=0)])
    def test_degenerate(self, kw):
        with pytest.raises(ValueError):
            generate_synthetic(0, **kw)

    def test_snr_level(self):
        level = noise_for_snr(0, 10.0, length=5000)
        _, clean = generate_synthetic(0, length=5000, noise_level=0.0, return_clean=True)
        assert 10 * np.log10(clean[0].var() / level ** 2) == pytest.approx(10.0)
        assert_array_equal(clean.shape, (3, 5000))
