import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxukg import autodiff as ad
from boxukg import training
from boxukg.constraints import ConstraintSet
from boxukg.data import Dataset, Triples
from boxukg.errors import ConfigurationError, NumericFault
from boxukg.model import PARAM_NAMES, ParameterStore, init_parameters, triple_scores
from boxukg.training import (
    LOG_COLUMNS,
    Adam,
    TrainConfig,
    fit,
    l2_loss,
    load_config,
    negative_loss,
    objective,
    positive_loss,
    train_step,
    write_log,
)

HARD = 1e-6


def interval_store(heads, tail=(0.0, 1.0)):
    """1-d entities: entity 0 is the tail interval, entities 1.. the given head intervals."""
    bounds = [tail] + list(heads)
    lo = np.array([[b[0]] for b in bounds])
    hi = np.array([[b[1]] for b in bounds])
    arrays = {k: np.zeros((1, 1)) for k in PARAM_NAMES}
    arrays["ent_cen"] = (lo + hi) / 2
    arrays["ent_log_off"] = np.log((hi - lo) / 2)
    return ParameterStore(arrays, HARD)


def random_store(seed, n_e=8, n_r=2, d=2, beta=0.1):
    rng = np.random.default_rng(seed)
    arrays = {
        "ent_cen": rng.uniform(0, 1, (n_e, d)),
        "ent_log_off": np.log(rng.uniform(0.2, 0.6, (n_e, d))),
        "head_tau": rng.normal(0, 0.1, (n_r, d)),
        "head_delta": rng.normal(0, 0.2, (n_r, d)),
        "tail_tau": rng.normal(0, 0.1, (n_r, d)),
        "tail_delta": rng.normal(0, 0.2, (n_r, d)),
    }
    return ParameterStore(arrays, beta)


def no_negatives():
    return (np.zeros(0, np.int64),) * 3


class TestPositiveLoss:
    def test_zero_residual(self):
        store = random_store(0)
        h, r, t = np.array([0, 1]), np.array([0, 1]), np.array([2, 3])
        s = triple_scores(store.arrays, h, r, t, store.beta)
        assert float(positive_loss(store.arrays, Triples(h, r, t, s), store.beta)) == 0.0

    def test_arithmetic(self):
        store = interval_store([(0.7, 1.7)])  # overlap 0.3 of the unit tail
        batch = Triples.from_list([(1, 0, 0, 0.8)])
        assert float(positive_loss(store.arrays, batch, store.beta)) == pytest.approx(0.25, abs=1e-5)

    def test_shared_entity_gradient_is_sum(self):
        store = random_store(1)
        both = Triples.from_list([(0, 0, 1, 0.9), (0, 1, 2, 0.1)])

        def grad(batch):
            tape = ad.Tape()
            params = store.bind(tape)
            tape.backward(positive_loss(params, batch, store.beta))
            return params["ent_cen"].grad

        np.testing.assert_allclose(grad(both), grad(both.subset([0])) + grad(both.subset([1])), rtol=1e-12, atol=1e-15)
        eps = 1e-6
        base = store.arrays["ent_cen"]
        orig = base[0, 0]
        base[0, 0] = orig + eps
        up = float(positive_loss(store.arrays, both, store.beta))
        base[0, 0] = orig - eps
        down = float(positive_loss(store.arrays, both, store.beta))
        base[0, 0] = orig
        assert grad(both)[0, 0] == pytest.approx((up - down) / (2 * eps), rel=1e-6)

    def test_empty_batch(self):
        with pytest.raises(ConfigurationError):
            positive_loss(random_store(0).arrays, Triples.empty(), 0.1)


class TestNegativeLoss:
    def test_zero_alpha(self):
        store = random_store(0)
        negs = (np.array([0, 1]), np.array([0, 0]), np.array([1, 2]))
        assert negative_loss(store.arrays, negs, store.beta, 0.0) == 0.0

    def test_satisfied_penalty(self):
        store = interval_store([(5.0, 6.0)])
        negs = (np.array([1]), np.array([0]), np.array([0]))
        assert float(negative_loss(store.arrays, negs, store.beta, 1.0)) < 1e-20

    def test_arithmetic(self):
        store = interval_store([(0.8, 1.8), (0.6, 1.6)])  # scores 0.2 and 0.4
        negs = (np.array([1, 2]), np.array([0, 0]), np.array([0, 0]))
        assert float(negative_loss(store.arrays, negs, store.beta, 0.5)) == pytest.approx(0.10, abs=1e-5)

    def test_negative_alpha(self):
        with pytest.raises(ConfigurationError):
            negative_loss(random_store(0).arrays, no_negatives(), 0.1, -0.1)


class TestL2:
    def test_all_zero(self):
        params = {k: np.zeros((2, 3)) for k in PARAM_NAMES}
        assert float(l2_loss(params, 1.0, 0.001)) == 0.0

    def test_log_offset_example(self):
        params = {k: np.zeros((1, 2)) for k in PARAM_NAMES}
        params["ent_log_off"][:] = math.log(0.2)
        value = float(l2_loss(params, 1.0, 0.001))
        assert value == pytest.approx(2 * math.log(0.2) ** 2, rel=1e-15)
        assert value == pytest.approx(5.1805, abs=1e-4)

    def test_other_term_is_linear(self):
        store = random_store(4)
        base = float(l2_loss(store.arrays, 0.0, 0.01))
        assert float(l2_loss(store.arrays, 0.0, 0.02)) == 2 * base
        assert float(l2_loss(store.arrays, 0.0, 0.01, scale=0.5)) == pytest.approx(0.5 * base, rel=1e-15)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([1.0, -2.0])}
        adam = Adam(0.1)
        for _ in range(3):
            adam.step(params, {"w": np.zeros(2)})
        assert np.array_equal(params["w"], [1.0, -2.0])
        assert adam.t == 3

    def test_zero_learning_rate(self):
        params = {"w": np.array([1.0, -2.0])}
        Adam(0.0).step(params, {"w": np.array([5.0, -1.0])})
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_bias_corrected_update(self):
        g = np.array([0.5, -2.0])
        params = {"w": np.zeros(2)}
        adam = Adam(0.01)
        adam.step(params, {"w": g})
        adam.step(params, {"w": 2 * g})
        # independent recomputation of two steps
        m = 0.1 * g
        v = 0.001 * g * g
        w = -0.01 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
        m = 0.9 * m + 0.1 * 2 * g
        v = 0.999 * v + 0.001 * 4 * g * g
        w = w - 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        np.testing.assert_allclose(params["w"], w, rtol=1e-14)


class TestTrainStep:
    @pytest.mark.parametrize("seed", range(20))
    def test_descent_on_single_triple(self, seed):
        # Adam's first step moves every coordinate by ~lr, so boxes are drawn at
        # five times the unit-cube scale to keep a 0.1 step local
        store = init_parameters(8, 2, 2, seed=seed, beta=0.1)
        store.arrays["ent_cen"] *= 5.0
        store.arrays["ent_log_off"] += np.log(5.0)
        h, r, t = (x.ravel() for x in np.meshgrid(np.arange(8), np.arange(2), np.arange(8), indexing="ij"))
        phi = triple_scores(store.arrays, h, r, t, store.beta)
        i = int(np.flatnonzero((phi > 0.05) & (phi < 0.95))[np.random.default_rng(seed).integers(10)])
        h, r, t, phi0 = int(h[i]), int(r[i]), int(t[i]), float(phi[i])
        s = 1.0 if phi0 < 0.5 else 0.0
        cfg = TrainConfig(d=2, beta=0.1, lr=0.1, alpha=0.0, l2_box=0.0, l2_other=0.0)
        train_step(store, Adam(cfg.lr), cfg, Triples.from_list([(h, r, t, s)]), no_negatives(), None)
        phi1 = float(triple_scores(store.arrays, [h], [r], [t], store.beta)[0])
        assert (phi1 - s) ** 2 < (phi0 - s) ** 2

    def test_zero_constraint_weights(self):
        store = random_store(2)
        batch = Triples.from_list([(0, 0, 1, 0.5), (2, 1, 3, 0.9)])
        phi = training.sample_boxes(8, 2, np.random.default_rng(0), store)
        cs = ConstraintSet(transitive=(0,), compositions=((0, 1, 1),))
        cfg = TrainConfig(d=2, beta=0.1, w_tr=0.0, w_c=0.0, alpha=0.0)

        def grads(constraints):
            tape = ad.Tape()
            params = store.bind(tape)
            parts = objective(params, batch, no_negatives(), phi, cfg, constraints, 1.0)
            tape.backward(parts.total)
            return parts, {k: params[k].grad for k in PARAM_NAMES}

        parts, g_with = grads(cs)
        _, g_without = grads(None)
        assert parts.constraint == 0.0
        for k in PARAM_NAMES:
            assert np.array_equal(g_with[k], g_without[k])

    def test_non_finite_loss_restores(self):
        store = random_store(3)
        before = store.copy()
        adam = Adam(0.1)
        cfg = TrainConfig(d=2, beta=0.1, alpha=0.0)
        bad = Triples(np.array([0]), np.array([0]), np.array([1]), np.array([0.5]))
        bad.s[0] = np.nan
        with pytest.raises(NumericFault):
            train_step(store, adam, cfg, bad, no_negatives(), None)
        assert store.equals(before)
        assert adam.t == 0 and adam.m == {}

    def test_single_transform_freezes_tail(self):
        store = random_store(5)
        store.arrays["tail_tau"][:] = 0.0
        store.arrays["tail_delta"][:] = 0.0
        cfg = TrainConfig(d=2, beta=0.1, lr=0.05, alpha=0.0, single_transform=True)
        train_step(store, Adam(cfg.lr), cfg, Triples.from_list([(0, 0, 1, 0.9)]), no_negatives(), None)
        assert not store.arrays["tail_tau"].any() and not store.arrays["tail_delta"].any()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_components_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        store = random_store(seed)
        batch = Triples(rng.integers(0, 8, 5), rng.integers(0, 2, 5), rng.integers(0, 8, 5), rng.uniform(0, 1, 5))
        negs = (rng.integers(0, 8, 10), rng.integers(0, 2, 10), rng.integers(0, 8, 10))
        phi = training.sample_boxes(6, 2, rng, store)
        cfg = TrainConfig(d=2, beta=0.1, alpha=0.3)
        cs = ConstraintSet(transitive=(0,), compositions=((0, 1, 1),))
        parts = objective(store.arrays, batch, negs, phi, cfg, cs, 0.5)
        values = [float(ad.value_of(p)) for p in (parts.positive, parts.negative, parts.constraint, parts.l2)]
        assert all(v >= 0 for v in values)
        assert float(ad.value_of(parts.total)) == pytest.approx(sum(values), rel=1e-12)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.lr, c.batch_size, c.d, c.beta, c.n_neg) == (1e-4, 1024, 64, 0.01, 30)
        assert (c.w_tr, c.w_c, c.l2_box, c.l2_other, c.patience) == (0.1, 0.1, 1.0, 0.001, 30)

    def test_ranking_preset(self):
        c = TrainConfig.for_task("ranking")
        assert (c.d, c.beta, c.batch_size, c.lr, c.val_metric) == (300, 1e-3, 4096, 1e-4, "ndcg")

    @pytest.mark.parametrize("bad", [dict(lr=-1), dict(beta=0), dict(patience=0), dict(val_metric="mae")])
    def test_validation(self, bad):
        with pytest.raises(ConfigurationError):
            TrainConfig(**bad).validate()

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"learning_rate": 0.1})

    def test_load_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"task": "ranking", "train": {"d": 8}}))
        c = load_config(p)
        assert (c.d, c.batch_size) == (8, 4096)
        p.write_text(json.dumps({"lr": 0.5, "bogus": 1}))
        with pytest.raises(ConfigurationError):
            load_config(p)

    def test_round_trip_dict(self):
        c = TrainConfig(seed=9, alpha=0.3)
        assert TrainConfig.from_dict(c.to_dict()) == c


def tiny_dataset():
    rng = np.random.default_rng(0)
    rows = [(int(h), int(r), int(t), float(s)) for h, r, t, s in
            zip(rng.integers(0, 10, 30), rng.integers(0, 2, 30), rng.integers(0, 10, 30), rng.uniform(0, 1, 30))]
    return Dataset(Triples.from_list(rows[:24]), Triples.from_list(rows[24:]), Triples.empty(),
                   [f"e{i}" for i in range(10)], ["a", "b"])


def tiny_config(**kw):
    base = dict(d=2, beta=0.1, lr=0.01, batch_size=8, n_neg=2, n_box_samples=4, max_epochs=5, seed=1)
    base.update(kw)
    return TrainConfig(**base)


class TestFit:
    def test_patience_stop(self):
        calls = []

        def worsening(store):
            calls.append(store.copy())
            return float(len(calls))

        cfg = tiny_config(max_epochs=100, patience=30)
        res = fit(tiny_dataset(), cfg, metric_fn=worsening)
        assert res.epochs_run == 31
        assert res.best_epoch == 1
        assert res.store.equals(calls[0])
        assert len(res.log) == 31

    def test_best_snapshot_property(self, tmp_path):
        ds = tiny_dataset()
        res = fit(ds, tiny_config(max_epochs=15), checkpoint_path=tmp_path / "m.bxkg")
        best = min(row["val_metric"] for row in res.log)
        assert res.best_metric == best
        assert training.validation_metric(res.store, ds, "mse") == best
        from boxukg.model import load_checkpoint
        assert load_checkpoint(tmp_path / "m.bxkg").equals(res.store)

    def test_deterministic(self, tmp_path):
        ds = tiny_dataset()
        cs = ConstraintSet(transitive=(0,))
        a = fit(ds, tiny_config(), cs, log_path=tmp_path / "a.csv")
        b = fit(ds, tiny_config(), cs, log_path=tmp_path / "b.csv")
        assert a.store.equals(b.store)
        strip = lambda log: [{k: v for k, v in row.items() if k != "wall_seconds"} for row in log]
        assert strip(a.log) == strip(b.log)

    def test_log_csv(self, tmp_path):
        fit(tiny_dataset(), tiny_config(max_epochs=2), log_path=tmp_path / "log.csv")
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert tuple(rows[0]) == LOG_COLUMNS
        assert [int(r["epoch"]) for r in rows] == [1, 2]

    def test_repeated_faults_propagate(self, monkeypatch):
        def boom(*args, **kwargs):
            raise NumericFault("injected")

        monkeypatch.setattr(training, "train_step", boom)
        with pytest.raises(NumericFault):
            fit(tiny_dataset(), tiny_config())

    def test_isolated_faults_are_skipped(self, monkeypatch):
        real = training.train_step
        count = {"n": 0}

        def flaky(*args, **kwargs):
            count["n"] += 1
            if count["n"] % 2 == 0:
                raise NumericFault("injected")
            return real(*args, **kwargs)

        monkeypatch.setattr(training, "train_step", flaky)
        res = fit(tiny_dataset(), tiny_config(max_epochs=2))
        assert res.aborted_steps == 3

    def test_ranking_metric_selection(self):
        ds = tiny_dataset()
        res = fit(ds, tiny_config(max_epochs=3, val_metric="ndcg"))
        assert res.best_metric == max(row["val_metric"] for row in res.log)

    def test_bad_constraint_ids(self):
        with pytest.raises(ConfigurationError):
            fit(tiny_dataset(), tiny_config(), ConstraintSet(transitive=(5,)))

    def test_write_log_repr_floats(self, tmp_path):
        write_log([dict(epoch=1, J1=0.1, J2=0.0, L2=1 / 3, val_metric=0.2, wall_seconds=0.0)], tmp_path / "l.csv")
        assert repr(1 / 3) in (tmp_path / "l.csv").read_text()
