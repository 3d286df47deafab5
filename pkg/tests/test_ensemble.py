import time

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mslmu.correlation import CpkMatrix, cpk_weights
from mslmu.ensemble import (DESK_SLICES, EnsembleConfig, EnsembleModel, SliceConfig,
                            build_residual_datasets, default_slice_configs, order_neighbors,
                            predict_improve, predict_plus, train_ensemble)
from mslmu.lmu import LmuParams, build_delay_network
from mslmu.training import TrainConfig, TrainedSlice


def constant_slice(value, lookback=2, n=1):
    """A slice whose forecast is ``value`` regardless of input."""
    p = LmuParams.initialize(np.random.default_rng(0), n, lookback)
    p = p.updated(output_weights=np.zeros(n), output_bias=np.array(float(value)))
    return TrainedSlice(p, build_delay_network(lookback, 1, lookback))


def linear_slice(weight, lookback=2):
    """Forecast ``weight * last input`` exactly: identity-ish cell with a linear head."""
    p = LmuParams.initialize(np.random.default_rng(0), 1, lookback, activation="tanh", memory=False)
    # tanh(1e-4 x) / 1e-4 differs from x by under 1e-8 for abs(x) <= 1
    p = p.updated(w_x=np.array([[1e-4]]), w_h=np.zeros((1, 1)), output_weights=np.array([weight / 1e-4]))
    return TrainedSlice(p, build_delay_network(lookback, 1, lookback))


def toy_model(values=(0.5, 0.1, -0.05), k_row=(0.57143, 0.42857), combination="cpk"):
    slices = [constant_slice(v) for v in values]
    configs = [SliceConfig(2, 1)] * len(values)
    return EnsembleModel("s1", ["s2", "s3"][:len(values) - 1], slices, configs,
                         combination=combination, k_row=list(k_row[:len(values) - 1]))


def windows(n_slices, count=1):
    return [np.zeros((count, 2))] * n_slices


def cpk3():
    r = np.array([[1.0, 0.8, 0.6], [0.8, 1.0, 0.5], [0.6, 0.5, 1.0]])
    return CpkMatrix(("s1", "s2", "s3"), r, cpk_weights(r))


class TestCombination:
    def test_plus_single(self):
        m = toy_model((0.5,))
        assert predict_plus(m, [np.zeros(2)]) == pytest.approx(0.5)

    def test_plus_sum(self):
        assert predict_plus(toy_model(), [np.zeros(2)] * 3) == pytest.approx(0.55, abs=1e-15)

    def test_improve_hand_value(self):
        got = predict_improve(toy_model(), [np.zeros(2)] * 3)
        assert got == pytest.approx(0.535714, abs=1e-6)

    def test_improve_unit_weights_equals_plus(self):
        m = toy_model(k_row=(1.0, 1.0))
        w = windows(3, 5)
        assert_allclose(predict_improve(m, w), predict_plus(m, w), rtol=0, atol=1e-15)

    def test_improve_single_slice(self):
        m = toy_model((0.5,), k_row=())
        assert predict_improve(m, [np.zeros(2)]) == pytest.approx(0.5)

    def test_missing_window(self):
        with pytest.raises(ValueError):
            predict_plus(toy_model(), [np.zeros(2)] * 2)

    def test_misaligned_windows(self):
        with pytest.raises(ValueError):
            toy_model().predict([np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((4, 2))])

    def test_predict_dispatch(self):
        w = [np.zeros(2)] * 3
        assert toy_model().predict(w) == predict_improve(toy_model(), w)
        assert toy_model(combination="plus").predict(w) == predict_plus(toy_model(), w)

    def test_truncated(self):
        m = toy_model().truncated(2)
        assert m.n == 2 and m.neighbors == ["s2"] and m.k_row == [0.57143]
        with pytest.raises(ValueError):
            toy_model().truncated(4)

    def test_validation(self):
        with pytest.raises(ValueError):
            EnsembleModel("s1", ["s2"], [constant_slice(0)] * 2, [SliceConfig(2, 1)] * 2, "cpk", None)
        with pytest.raises(ValueError):
            EnsembleModel("s1", [], [constant_slice(0)] * 2, [SliceConfig(2, 1)] * 2, "plus")


class TestNeighbours:
    def test_descending(self):
        assert order_neighbors(["s1", "s2", "s3"], "s1", cpk3()) == ["s2", "s3"]

    def test_tie_by_id(self):
        r = np.array([[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]])
        k = CpkMatrix(("a", "c", "b"), r, cpk_weights(r))
        assert order_neighbors(["a", "c", "b"], "a", k) == ["b", "c"]

    def test_single(self):
        r = np.array([[1.0, 0.3], [0.3, 1.0]])
        assert order_neighbors(["x", "y"], "x", CpkMatrix(("x", "y"), r, cpk_weights(r))) == ["y"]


class TestResidualDatasets:
    def series(self):
        rng = np.random.default_rng(4)
        return {s: rng.uniform(0, 1, 40) for s in ("s1", "s2", "s3")}

    def test_single_slice(self):
        x = self.series()
        ts = np.arange(10, 30)
        [(w, y)] = build_residual_datasets(x, "s1", [], [SliceConfig(10, 4)], ts)
        assert_array_equal(y, x["s1"][ts])
        assert_array_equal(w[0], x["s1"][0:10])

    def test_perfect_first_slice_zero_labels(self):
        x = {"s1": np.full(40, 0.3), "s2": np.linspace(0, 1, 40)}
        ts = np.arange(5, 40)
        data = build_residual_datasets(x, "s1", ["s2"], [SliceConfig(2, 1), SliceConfig(2, 1)], ts,
                                       [constant_slice(0.3)])
        assert_allclose(data[1][1], 0.0, atol=1e-15)

    def test_hand_residuals(self):
        x = self.series()
        ts = np.arange(10, 30)
        first = linear_slice(0.5)
        configs = [SliceConfig(2, 1), SliceConfig(2, 1), SliceConfig(2, 1)]
        second = linear_slice(-0.25)
        data = build_residual_datasets(x, "s1", ["s2", "s3"], configs, ts, [first, second])
        pred1 = 0.5 * x["s1"][ts - 1]
        assert_allclose(data[1][1], x["s1"][ts] - pred1, atol=1e-7)
        pred2 = -0.25 * x["s2"][ts - 1]
        assert_allclose(data[2][1], x["s1"][ts] - pred1 - pred2, atol=1e-7)
        assert_array_equal(data[1][0][:, -1], x["s2"][ts - 1])

    def test_untrained_predecessor(self):
        x = self.series()
        with pytest.raises(ValueError):
            build_residual_datasets(x, "s1", ["s2"], [SliceConfig(2, 1)] * 2, np.arange(5, 20))


class TestConfig:
    def test_full_size_defaults(self):
        cfgs = default_slice_configs(3)
        assert [c.lookback for c in cfgs] == [10, 5, 5]
        assert [c.hidden for c in cfgs] == [512, 256, 128]
        assert cfgs[0].window == 10 and cfgs[0].order == 10

    def test_single(self):
        assert len(EnsembleConfig(n_slices=1).slices()) == 1

    def test_bad_count(self):
        with pytest.raises(ValueError):
            EnsembleConfig(n_slices=0)


def scaled_cluster(seed=0, length=1500):
    from mslmu.correlation import compute_cpk
    from mslmu.preprocess import Normalizer
    from mslmu.synthetic import generate_synthetic

    c = generate_synthetic(seed, length=length)
    cpk = compute_cpk(c, slice(0, 1050))
    series = {s: Normalizer.fit(c.series(s)[:1050]).transform(c.series(s)) for s in c.site_ids}
    return series, cpk


class TestTrainEnsemble:
    config = EnsembleConfig(n_slices=3, slice_configs=tuple(SliceConfig(c.lookback, 8) for c in DESK_SLICES),
                            train=TrainConfig(max_epochs=2, seed=5))

    def test_insufficient_neighbours(self):
        series, cpk = scaled_cluster()
        two = {k: series[k] for k in ("site1", "site2")}
        with pytest.raises(ValueError):
            train_ensemble(two, "site1", cpk, np.arange(10, 1050), np.arange(1050, 1350), self.config)

    def test_deterministic_and_telescoping(self):
        series, cpk = scaled_cluster()
        tr, va = np.arange(10, 1050), np.arange(1050, 1350)
        a = train_ensemble(series, "site1", cpk, tr, va, self.config)
        b = train_ensemble(series, "site1", cpk, tr, va, self.config)
        w = a.windows(series, tr)
        assert a.predict(w).tobytes() == b.predict(w).tobytes()
        assert a.neighbors == order_neighbors(list(series), "site1", cpk)
        # on training indices the last residual label equals real - pred_plus
        data = build_residual_datasets(series, "site1", a.neighbors, a.slice_configs, tr, a.slices)
        last = data[-1][1] - a.slices[-1].predict(data[-1][0])
        assert_allclose(series["site1"][tr] - predict_plus(a, w), last, atol=1e-10)

    def test_prefix_equals_shorter_chain(self):
        series, cpk = scaled_cluster(1)
        tr, va = np.arange(10, 1050), np.arange(1050, 1350)
        full = train_ensemble(series, "site1", cpk, tr, va, self.config)
        two = train_ensemble(series, "site1", cpk, tr, va, EnsembleConfig(
            n_slices=2, slice_configs=self.config.slice_configs[:2], train=self.config.train))
        w = two.windows(series, va)
        assert_array_equal(full.truncated(2).predict(w), two.predict(w))

    def test_cost_grows_with_slices(self):
        series, cpk = scaled_cluster(2)
        tr, va = np.arange(10, 1050), np.arange(1050, 1350)
        t0 = time.perf_counter()
        train_ensemble(series, "site1", cpk, tr, va, EnsembleConfig(
            n_slices=1, slice_configs=self.config.slice_configs[:1], train=self.config.train))
        t1 = time.perf_counter()
        train_ensemble(series, "site1", cpk, tr, va, self.config)
        t2 = time.perf_counter()
        assert t2 - t1 > t1 - t0

    def test_srnn_plugin(self):
        series, cpk = scaled_cluster(3)
        tr, va = np.arange(10, 1050), np.arange(1050, 1350)
        cfg = EnsembleConfig(n_slices=1, slice_configs=self.config.slice_configs[:1], cell="srnn",
                             train=self.config.train)
        m = train_ensemble(series, "site1", cpk, tr, va, cfg)
        p = m.slices[0].params
        assert not p.memory
        assert_array_equal(p.w_m, 0.0)
