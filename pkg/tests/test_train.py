import numpy as np
import pytest
from helpers import rel_close

from unbalance_lab.data import MODE_CBUC, DataError, Dataset
from unbalance_lab.losses import LossSpec
from unbalance_lab.net import LayerSpec, OptimizerState, NetworkParams, forward, forward_features
from unbalance_lab.synthdata import SynthConfig, generate_train, generate_validation
from unbalance_lab.train import (
    BrnnSpec,
    LfoConfig,
    TrainConfig,
    ValidationContext,
    compose_params,
    history_to_csv,
    pearson_r2,
    train_brnn,
    train_lfo,
    train_standard,
)

rng = np.random.default_rng(3)


def toy_separable(n=80):
    X = rng.normal(size=(n, 2))
    margin = np.abs(X[:, 0] + X[:, 1]) > 0.5
    X = X[margin]
    y = (X[:, 0] + X[:, 1] > 0).astype(np.int64)
    return Dataset(X=X, y=y)


def cbuc_ds(n=400, theta_y=2.0, unbalance=0.8, seed=5):
    cfg = SynthConfig(theta_y=theta_y, unbalance=unbalance, mode=MODE_CBUC,
                      n_train=n, n_features=20, set_size=4, seed=seed)
    return generate_train(cfg)


def params_equal(a: NetworkParams, b: NetworkParams) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a.weights + a.biases, b.weights + b.biases))


H_STAR = LossSpec(kind="standard_ce")


class TestTrainStandard:
    def test_zero_epochs_returns_init(self):
        ds = toy_separable()
        spec = LayerSpec(2, (4,), 1)
        res = train_standard(spec, ds, TrainConfig(loss=H_STAR, epochs=0, seed=9))
        from unbalance_lab.net import init_params

        assert params_equal(res.params, init_params(spec, 9))

    def test_separable_convergence(self):
        ds = toy_separable()
        spec = LayerSpec(2, (), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=200, batch_size=16, seed=1,
                          optimizer=OptimizerState(kind="adam", learning_rate=0.05))
        res = train_standard(spec, ds, cfg)
        acc = np.mean((res.predict(ds.X) > 0.5) == ds.y)
        assert acc == 1.0

    def test_fbi_all_d_zero_matches_h_star(self):
        ds = toy_separable()
        ds.d[:] = 0
        spec = LayerSpec(2, (4,), 1)
        fbi_cfg = TrainConfig(loss=LossSpec(kind="fbi", K=9.0, xi=2.0), epochs=5, seed=7)
        ce_cfg = TrainConfig(loss=H_STAR, epochs=5, seed=7)
        a = train_standard(spec, ds, fbi_cfg)
        b = train_standard(spec, ds, ce_cfg)
        assert params_equal(a.params, b.params)

    def test_bit_reproducible(self):
        ds = cbuc_ds()
        spec = LayerSpec(20, (8,), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=3, seed=42)
        a = train_standard(spec, ds, cfg)
        b = train_standard(spec, ds, cfg)
        assert params_equal(a.params, b.params)

    def test_peo_requires_z(self):
        ds = toy_separable()
        spec = LayerSpec(2, (4,), 1)
        cfg = TrainConfig(loss=LossSpec(kind="peo", lam=1.0), epochs=1)
        with pytest.raises(DataError, match="confounder column z"):
            train_standard(spec, ds, cfg)

    def test_peo_trains_and_counts_skips(self):
        ds = cbuc_ds(n=200)
        spec = LayerSpec(20, (8,), 1)
        cfg = TrainConfig(loss=LossSpec(kind="peo", lam=1.0, epsilon=0.02),
                          epochs=2, batch_size=16, seed=0)
        res = train_standard(spec, ds, cfg)
        assert res.constraint_skips >= 0
        assert len(res.history) == 2

    def test_history_with_validation(self, tmp_path):
        cfg_data = SynthConfig(theta_y=2.0, unbalance=0.8, mode=MODE_CBUC,
                               n_train=400, n_features=20, set_size=4, seed=5)
        ds = generate_train(cfg_data)
        val = generate_validation(cfg_data, 80)
        spec = LayerSpec(20, (8,), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=2, seed=1)
        res = train_standard(spec, ds, cfg, ValidationContext(val, MODE_CBUC))
        assert res.history[0]["underg"] is not None
        out = tmp_path / "hist.csv"
        history_to_csv(res.history, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,lambda,r2,underg,overg"
        assert len(lines) == 3

    def test_early_stopping(self):
        ds = toy_separable()
        spec = LayerSpec(2, (), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=500, batch_size=16, seed=1,
                          optimizer=OptimizerState(kind="adam", learning_rate=0.05),
                          early_stop=(3, "train_loss"))
        res = train_standard(spec, ds, cfg)
        assert len(res.history) < 500


class TestTrainLfo:
    def test_reduces_to_standard(self):
        ds = cbuc_ds()
        spec = LayerSpec(20, (8,), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=3, seed=11)
        lfo = LfoConfig(lr_model=cfg.optimizer.learning_rate, lr_lambda=0.0, lambda_init=0.0)
        a = train_lfo(spec, ds, cfg, lfo)
        b = train_standard(spec, ds, cfg)
        assert params_equal(a.params, b.params)
        assert a.final_lambda == 0.0

    def test_lambda_never_negative(self):
        ds = cbuc_ds()
        spec = LayerSpec(20, (8,), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=4, batch_size=32, seed=2)
        res = train_lfo(spec, ds, cfg, LfoConfig(lr_lambda=0.05, epsilon=0.01))
        assert res.lambda_min >= 0.0

    def test_satisfied_constraint_decays_lambda(self):
        # epsilon above the maximal possible violation: every step shrinks lambda
        ds = cbuc_ds(n=300)
        spec = LayerSpec(20, (8,), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=6, batch_size=32, seed=2)
        res = train_lfo(spec, ds, cfg,
                        LfoConfig(lr_lambda=0.5, epsilon=2.1, lambda_init=0.4))
        assert res.final_lambda == 0.0
        assert res.lambda_min == 0.0

    def test_requires_z(self):
        ds = toy_separable()
        with pytest.raises(DataError, match="confounder"):
            train_lfo(LayerSpec(2, (4,), 1), ds, TrainConfig(loss=H_STAR, epochs=1), LfoConfig())


class TestPearson:
    def test_unit_check(self):
        r2, grad = pearson_r2(np.array([0, 1, 0, 1]), np.array([0.1, 0.9, 0.2, 0.8]))
        assert r2 == pytest.approx(0.98, rel=1e-12)
        assert grad is not None

    def test_degenerate_variance(self):
        r2, grad = pearson_r2(np.array([1, 1, 1, 1]), np.array([0.1, 0.9, 0.2, 0.8]))
        assert r2 == 0.0 and grad is None
        r2, grad = pearson_r2(np.array([0, 1, 0, 1]), np.full(4, 0.3))
        assert r2 == 0.0 and grad is None

    def test_gradient_matches_fd(self):
        z = rng.integers(0, 2, 16).astype(float)
        z[:2] = [0, 1]
        zhat = rng.uniform(0.1, 0.9, 16)
        r2, grad = pearson_r2(z, zhat)
        h = 1e-6
        for i in range(16):
            up = zhat.copy()
            up[i] += h
            dn = zhat.copy()
            dn[i] -= h
            num = (pearson_r2(z, up)[0] - pearson_r2(z, dn)[0]) / (2 * h)
            assert rel_close(grad[i], num, 1e-5, abs_floor=1e-9).all()


class TestTrainBrnn:
    def test_delta_zero_reduces_to_standard(self):
        ds = cbuc_ds()
        clf = LayerSpec(20, (8, 4), 1)
        brnn = BrnnSpec.from_classifier(clf, delta=0.0)
        cfg = TrainConfig(loss=H_STAR, epochs=3, batch_size=32, seed=13)
        a = train_brnn(brnn, ds, cfg)
        b = train_standard(clf, ds, cfg)
        assert params_equal(compose_params(a.params), b.params)

    def test_adversary_changes_trajectory(self):
        ds = cbuc_ds()
        clf = LayerSpec(20, (8, 4), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=3, batch_size=32, seed=13)
        a = train_brnn(BrnnSpec.from_classifier(clf, delta=1.0), ds, cfg)
        b = train_standard(clf, ds, cfg)
        assert not params_equal(compose_params(a.params), b.params)

    def test_constant_z_contributes_nothing(self):
        ds = cbuc_ds()
        ds.z[:] = 1  # degenerate confounder: r2 = 0 on every batch
        clf = LayerSpec(20, (8, 4), 1)
        cfg = TrainConfig(loss=H_STAR, epochs=2, batch_size=32, seed=13)
        a = train_brnn(BrnnSpec.from_classifier(clf, delta=1.5), ds, cfg)
        b = train_standard(clf, ds, cfg)
        assert params_equal(compose_params(a.params), b.params)
        assert all(rec["r2"] == 0.0 for rec in a.history)

    def test_trunk_adversarial_gradient_fd(self):
        # gradient of -delta*r2 w.r.t. trunk parameters against central FD;
        # tanh keeps the chain differentiable everywhere (relu gate kinks
        # invalidate the finite-difference oracle at the boundary)
        from unbalance_lab.net import backward_features, backward_total, init_params

        delta = 0.7
        trunk_spec = LayerSpec(6, (5,), 4, "tanh")
        head_spec = LayerSpec(4, (), 1, "tanh")
        trunk = init_params(trunk_spec, 21)
        conf = init_params(head_spec, 22)
        X = rng.normal(size=(24, 6))
        z = rng.integers(0, 2, 24).astype(float)
        z[:2] = [0, 1]

        def term():
            feats = forward_features(trunk, X).acts[-1]
            r2, _ = pearson_r2(z, forward(conf, feats).p)
            return -delta * r2

        tr_trace = forward_features(trunk, X)
        conf_trace = forward(conf, tr_trace.acts[-1])
        _, dr2 = pearson_r2(z, conf_trace.p)
        _, dfeat = backward_total(conf_trace, dr2)
        grads, _ = backward_features(tr_trace, -delta * dfeat)

        h = 1e-5
        for arr, g in zip(trunk.weights + trunk.biases, grads.weights + grads.biases):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = arr[ix]
                arr[ix] = orig + h
                up = term()
                arr[ix] = orig - h
                dn = term()
                arr[ix] = orig
                num = (up - dn) / (2 * h)
                assert rel_close(g[ix], num, 1e-3, abs_floor=1e-7).all()

    def test_requires_z_and_batch(self):
        ds = toy_separable()
        clf = LayerSpec(2, (4,), 1)
        with pytest.raises(DataError, match="confounder"):
            train_brnn(BrnnSpec.from_classifier(clf, 0.5), ds, TrainConfig(loss=H_STAR, epochs=1))
        ds2 = cbuc_ds()
        with pytest.raises(DataError, match="batch"):
            train_brnn(BrnnSpec.from_classifier(LayerSpec(20, (4,), 1), 0.5), ds2,
                       TrainConfig(loss=H_STAR, epochs=1, batch_size=4))

    def test_head_width_validation(self):
        with pytest.raises(DataError, match="head input width"):
            BrnnSpec(trunk=LayerSpec(4, (), 3), classifier_head=LayerSpec(2, (), 1),
                     confounder_head=LayerSpec(3, (), 1))
