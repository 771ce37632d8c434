"""Tests for network heads, the joint loss and gradient training."""

import numpy as np
import pytest

from contrastive import linear_encoder
from dgp import build_linear_pair, generate_eval, generate_observational, generate_simulator_cf, sample_latents
from errors import ArgumentError, TrainingError
from linear_estimators import predict_cate, predict_factual
from metrics import cate_error, paired_t_test_one_sided
from models import (
    EstimatorKind,
    GapConfig,
    HeadKind,
    Mlp,
    ObservationalDataset,
    Optimizer,
    TrainConfig,
)
from networks import init_mlp, mlp_forward, mlp_from_vector, mlp_gradients, mlp_to_vector
from nn_trainer import (
    DEFAULT_LAMBDA_F,
    LOW_LAMBDA_F,
    JointLoss,
    random_split,
    select_lambda_f,
    stratified_split,
    train_cate_nn,
    train_simponet_nn,
)


def _instance(seed=0, n_z=3, n=80, sigma_y=0.0):
    rng = np.random.default_rng(seed)
    spec = build_linear_pair(GapConfig(gamma_r=0.3, gamma_rs=0.2, gamma_tau=0.2), n_z, (sigma_y, 0.0), rng)
    d_trn = generate_observational(spec, sample_latents(n, n_z, rng), rng)
    d_syn = generate_simulator_cf(spec, sample_latents(n, n_z, rng), rng)
    return spec, d_trn, d_syn, linear_encoder(spec.s_inv)


def _finite_difference(fn, theta, h=1e-5):
    grad = np.zeros_like(theta)
    for k in range(theta.shape[0]):
        step = np.zeros_like(theta)
        step[k] = h
        grad[k] = (fn(theta + step) - fn(theta - step)) / (2 * h)
    return grad


def _small_config(**overrides):
    values = {"steps": 200, "step_size": 5e-3, "eval_every": 10, "patience": 50, "hidden": 8}
    values.update(overrides)
    return TrainConfig(**values)


class TestMlp:
    def test_zero_network_outputs_zero(self):
        net = Mlp(w1=np.zeros((2, 3)), b1=np.zeros(3), w2=np.zeros(3), b2=0.0)
        assert np.array_equal(mlp_forward(net, np.ones((4, 2))), np.zeros(4))

    def test_single_unit_hand_case(self):
        net = Mlp(w1=[[1.5]], b1=[0.0], w2=[3.0], b2=0.0)
        assert mlp_forward(net, np.array([[2.0], [-2.0]])).tolist() == [9.0, 0.0]

    def test_batch_matches_rows(self):
        net = init_mlp(3, 5, np.random.default_rng(0))
        z = np.random.default_rng(1).standard_normal((6, 3))
        rows = [mlp_forward(net, z[i : i + 1])[0] for i in range(6)]
        assert np.allclose(mlp_forward(net, z), rows)

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            mlp_forward(init_mlp(3, 5, np.random.default_rng(0)), np.ones((2, 2)))

    def test_vector_round_trip(self):
        net = init_mlp(3, 4, np.random.default_rng(0))
        again = mlp_from_vector(net, mlp_to_vector(net))
        assert np.array_equal(mlp_to_vector(again), mlp_to_vector(net))

    def test_zero_residuals_give_zero_gradients(self):
        net = init_mlp(3, 4, np.random.default_rng(0))
        grads = mlp_gradients(net, np.ones((5, 3)), np.zeros(5))
        assert not np.any(mlp_to_vector(grads.params))
        assert not np.any(grads.inputs)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        net = init_mlp(3, 6, rng)
        z = rng.standard_normal((7, 3))
        r = rng.standard_normal(7)
        analytic = mlp_to_vector(mlp_gradients(net, z, r).params)
        numeric = _finite_difference(lambda v: float(r @ mlp_forward(mlp_from_vector(net, v), z)), mlp_to_vector(net))
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(numeric)

    def test_gradients_are_linear_in_rows(self):
        net = init_mlp(2, 4, np.random.default_rng(3))
        z = np.random.default_rng(4).standard_normal((5, 2))
        total = mlp_to_vector(mlp_gradients(net, z, np.ones(5)).params)
        rows = sum(mlp_to_vector(mlp_gradients(net, z[i : i + 1], np.ones(1)).params) for i in range(5))
        assert np.allclose(total, rows)


class TestLambdaSelection:
    def test_identical_errors_keep_default(self):
        errors = np.random.default_rng(0).random(30)
        assert select_lambda_f(errors, errors.copy()) == DEFAULT_LAMBDA_F

    def test_uniformly_worse_mu_only_lowers_weight(self):
        real = np.random.default_rng(0).random(30)
        assert select_lambda_f(real, real + 1.0) == LOW_LAMBDA_F

    def test_worse_real_only_keeps_default(self):
        mu = np.random.default_rng(0).random(30)
        assert select_lambda_f(mu + 1.0, mu) == DEFAULT_LAMBDA_F

    def test_rounding_noise_counts_as_tie(self):
        real = np.random.default_rng(0).random(30)
        assert select_lambda_f(real, real + 1e-15) == DEFAULT_LAMBDA_F

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            select_lambda_f(np.ones(4), np.ones(5))


class TestSplits:
    def test_stratified_split_keeps_both_arms(self):
        t = np.array([0] * 20 + [1] * 10)
        train, val = stratified_split(t, 0.3, np.random.default_rng(0))
        assert len(np.intersect1d(train, val)) == 0
        assert np.array_equal(np.sort(np.concatenate([train, val])), np.arange(30))
        assert (t[val] == 0).sum() == 6 and (t[val] == 1).sum() == 3
        assert set(t[train]) == {0, 1}

    def test_tiny_arm_cannot_be_split(self):
        with pytest.raises(ArgumentError):
            stratified_split(np.array([0, 0, 0, 1]), 0.3, np.random.default_rng(0))

    def test_random_split_sizes(self):
        train, val = random_split(10, 0.3, np.random.default_rng(0))
        assert len(train) == 7 and len(val) == 3


class TestJointLoss:
    def _loss(self, **weights):
        rng = np.random.default_rng(5)
        n, n_x, n_z, hidden, m = 8, 3, 3, 4, 6
        x = rng.standard_normal((n, n_x))
        t = np.array([0, 1] * 4)
        y = rng.standard_normal(n)
        loss = JointLoss(
            x, t, y, n_z, hidden, True,
            extractor_targets=rng.standard_normal((n, n_z)),
            sim_latents=(rng.standard_normal((m, n_z)), rng.standard_normal((m, n_z))),
            sim_tau=rng.standard_normal(m),
            sim_outcomes=(rng.standard_normal(m), rng.standard_normal(m)),
            **weights,
        )
        extractors = [rng.standard_normal((n_x, n_z)) for _ in range(2)]
        nets = [init_mlp(n_z, hidden, rng) for _ in range(2)]
        return loss, loss.pack(extractors, nets)

    @pytest.mark.parametrize(
        "weights",
        [
            {"lambda_f": 0.7, "lambda_tau": 0.5},
            {"lambda_f": 0.0, "lambda_tau": 2.0},
            {"factual_weight": 0.0, "simulated_weight": 1.0},
        ],
    )
    def test_gradient_matches_finite_differences(self, weights):
        loss, theta = self._loss(**weights)
        _, analytic, _ = loss.value_and_grad(theta)
        numeric = _finite_difference(lambda v: loss.value_and_grad(v)[0], theta)
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(numeric)

    def test_without_regularizers_only_factual_remains(self):
        loss, theta = self._loss(lambda_f=0.0, lambda_tau=0.0)
        total, _, terms = loss.value_and_grad(theta)
        assert total == terms["factual"]
        assert terms["extractor"] == terms["effect"] == terms["simulated"] == 0.0

    def test_pack_round_trip(self):
        loss, theta = self._loss()
        extractors, nets = loss.unpack(theta)
        assert np.array_equal(loss.pack(extractors, nets), theta)


class TestTraining:
    def test_factual_only_fit_improves(self):
        _, d_trn, d_syn, f_tilde = _instance(seed=1)
        cfg = _small_config(lambda_f=0.0, lambda_tau=0.0)
        _, report = train_simponet_nn(d_trn, d_syn, f_tilde, cfg, np.random.default_rng(0))
        assert report.objective_trace[-1] < report.objective_trace[0]

    def test_best_checkpoint_is_returned(self):
        _, d_trn, d_syn, f_tilde = _instance(seed=2, sigma_y=0.2)
        cfg = _small_config()
        model, report = train_simponet_nn(d_trn, d_syn, f_tilde, cfg, np.random.default_rng(11))
        _, val_rows = stratified_split(d_trn.t, cfg.val_fraction, np.random.default_rng(11))
        val = d_trn.subset(val_rows)
        val_mse = float(np.mean((predict_factual(model, val.x, val.t) - val.y) ** 2))
        assert val_mse == pytest.approx(min(report.validation_trace), rel=1e-9)
        assert report.best_step == report.eval_steps[int(np.argmin(report.validation_trace))]

    def test_training_is_deterministic(self):
        _, d_trn, d_syn, f_tilde = _instance(seed=3)
        cfg = _small_config(steps=50)
        a, _ = train_simponet_nn(d_trn, d_syn, f_tilde, cfg, np.random.default_rng(4))
        b, _ = train_simponet_nn(d_trn, d_syn, f_tilde, cfg, np.random.default_rng(4))
        for t in (0, 1):
            assert np.array_equal(a.extractors[t], b.extractors[t])
            assert np.array_equal(mlp_to_vector(a.nets[t]), mlp_to_vector(b.nets[t]))

    def test_patience_stops_training(self):
        _, d_trn, d_syn, f_tilde = _instance(seed=4, sigma_y=0.5)
        cfg = _small_config(steps=3000, step_size=0.05, eval_every=1, patience=1)
        _, report = train_cate_nn(EstimatorKind.REAL_ONLY, d_trn, None, None, cfg, np.random.default_rng(0))
        assert report.converged
        assert report.sweeps < 3000

    def test_nan_outcome_raises_with_step(self):
        x = np.random.default_rng(0).standard_normal((12, 2))
        y = np.full(12, np.nan)
        d_trn = ObservationalDataset(x=x, t=[0, 1] * 6, y=y)
        with pytest.raises(TrainingError) as info:
            train_cate_nn(EstimatorKind.REAL_ONLY, d_trn, None, None, _small_config(val_fraction=0.1), np.random.default_rng(0))
        assert info.value.step == 0

    @pytest.mark.parametrize(
        "kind",
        [
            EstimatorKind.REAL_ONLY,
            EstimatorKind.MU_ONLY,
            EstimatorKind.SIM_ONLY,
            EstimatorKind.SIMPONET_NO_F,
            EstimatorKind.SIMPONET_NO_TAU,
        ],
    )
    def test_every_family_trains(self, kind):
        _, d_trn, d_syn, f_tilde = _instance(seed=5)
        model, report = train_cate_nn(kind, d_trn, d_syn, f_tilde, _small_config(steps=40), np.random.default_rng(0))
        assert model.kind == kind
        assert model.head_kind == HeadKind.MLP
        assert all(np.isfinite(v) for v in report.validation_trace)

    def test_ablations_zero_their_weight(self):
        _, d_trn, d_syn, f_tilde = _instance(seed=6)
        cfg = _small_config(steps=20, lambda_f=0.3, lambda_tau=0.7)
        no_f, _ = train_cate_nn(EstimatorKind.SIMPONET_NO_F, d_trn, d_syn, f_tilde, cfg, np.random.default_rng(0))
        no_tau, _ = train_cate_nn(EstimatorKind.SIMPONET_NO_TAU, d_trn, d_syn, f_tilde, cfg, np.random.default_rng(0))
        assert no_f.metadata["lambda_f"] == 0.0 and no_f.metadata["lambda_tau"] == 0.7
        assert no_tau.metadata["lambda_f"] == 0.3 and no_tau.metadata["lambda_tau"] == 0.0

    def test_gradient_descent_optimizer(self):
        _, d_trn, d_syn, f_tilde = _instance(seed=7)
        cfg = _small_config(optimizer=Optimizer.GD, step_size=1e-3)
        _, report = train_simponet_nn(d_trn, d_syn, f_tilde, cfg, np.random.default_rng(0))
        assert report.objective_trace[-1] < report.objective_trace[0]

    def test_simulator_extractors_required(self):
        _, d_trn, d_syn, _ = _instance()
        with pytest.raises(ArgumentError):
            train_cate_nn(EstimatorKind.MU_ONLY, d_trn, d_syn, None)

    def test_effect_regularizer_helps_when_simulator_effect_is_exact(self):
        cfg = _small_config(steps=800, step_size=1e-2, eval_every=10, patience=20, hidden=16)
        with_tau, without_tau = [], []
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            spec = build_linear_pair(GapConfig(gamma_r=0.3, gamma_rs=0.2, gamma_tau=0.0), 3, (1.0, 0.0), rng)
            d_trn = generate_observational(spec, sample_latents(30, 3, rng), rng)
            d_syn = generate_simulator_cf(spec, sample_latents(300, 3, rng), rng)
            d_tst = generate_eval(spec, sample_latents(200, 3, rng), rng)
            f_tilde = linear_encoder(spec.s_inv)
            for weight, errors in ((1.0, with_tau), (0.0, without_tau)):
                model, _ = train_simponet_nn(
                    d_trn, d_syn, f_tilde, cfg.model_copy(update={"lambda_tau": weight}), np.random.default_rng(seed)
                )
                errors.append(cate_error(predict_cate(model, d_tst.x, d_tst.t), d_tst.tau)[0])
        assert np.mean(with_tau) < np.mean(without_tau)
        assert paired_t_test_one_sided(np.array(with_tau), np.array(without_tau)) < 0.05
