"""Tests for the closed-form estimators and the alternating SimPONet solver."""

import numpy as np
import pytest

from contrastive import linear_encoder, pairwise_linear_map
from dgp import build_linear_pair, generate_eval, generate_observational, generate_simulator_cf, sample_latents
from errors import NumericalError, UnsupportedError
from linear_estimators import (
    analytic_cate_error,
    fit_mu_only_linear,
    fit_real_only_linear,
    fit_sim_only_linear,
    fit_simponet_linear,
    linear_matrices,
    predict_cate,
    predict_counterfactual,
    predict_factual,
)
from metrics import cate_error, factual_error
from models import (
    AltMinConfig,
    CateModel,
    EstimatorKind,
    GapConfig,
    LinearDgpPair,
    ObservationalDataset,
)


def _instance(seed=0, n_z=3, n=80, sigma_y=0.0, **gaps):
    rng = np.random.default_rng(seed)
    spec = build_linear_pair(GapConfig(**gaps), n_z, (sigma_y, 0.0), rng)
    d_trn = generate_observational(spec, sample_latents(n, n_z, rng), rng)
    d_syn = generate_simulator_cf(spec, sample_latents(n, n_z, rng), rng)
    d_tst = generate_eval(spec, sample_latents(n, n_z, rng), rng)
    return spec, d_trn, d_syn, d_tst


def _scalar_spec(r_inv, s_inv, w, w_s):
    return LinearDgpPair(
        n_z=1,
        r_inv=tuple(np.array([[v]]) for v in r_inv),
        s_inv=tuple(np.array([[v]]) for v in s_inv),
        w=tuple(np.array([v]) for v in w),
        w_s=tuple(np.array([v]) for v in w_s),
    )


def _test_error(model, d_tst):
    mse, _ = cate_error(predict_cate(model, d_tst.x, d_tst.t), d_tst.tau)
    return mse


class TestPrediction:
    def test_zero_heads_predict_no_effect(self):
        model = CateModel(
            kind=EstimatorKind.REAL_ONLY, extractors=(np.eye(2), np.eye(2)), heads=(np.zeros(2), np.zeros(2))
        )
        x = np.random.default_rng(0).standard_normal((5, 2))
        assert np.array_equal(predict_cate(model, x, np.array([0, 1, 0, 1, 1])), np.zeros(5))

    def test_factual_and_counterfactual_use_the_observed_extractor(self):
        model = CateModel(
            kind=EstimatorKind.MU_ONLY,
            extractors=(np.eye(1), 2.0 * np.eye(1)),
            heads=(np.array([1.0]), np.array([3.0])),
        )
        x = np.array([[1.0], [1.0]])
        t = np.array([0, 1])
        assert np.allclose(predict_factual(model, x, t), [1.0, 6.0])
        assert np.allclose(predict_counterfactual(model, x, t), [3.0, 2.0])
        assert np.allclose(predict_cate(model, x, t), [2.0, 4.0])

    def test_empty_rows_allowed(self):
        model = CateModel(kind=EstimatorKind.REAL_ONLY, extractors=(np.eye(2), np.eye(2)), heads=(np.ones(2), np.ones(2)))
        assert predict_cate(model, np.zeros((0, 2)), np.zeros(0, dtype=int)).shape == (0,)


class TestClosedForm:
    def test_real_only_interpolates_noiseless_data(self):
        _, d_trn, _, _ = _instance(gamma_r=0.3)
        mse, _ = factual_error(fit_real_only_linear(d_trn), d_trn)
        assert mse <= 1e-18

    def test_real_only_exact_without_arm_gap(self):
        _, d_trn, _, d_tst = _instance(gamma_r=0.0, gamma_rs=0.4, gamma_tau=0.4)
        assert _test_error(fit_real_only_linear(d_trn), d_tst) <= 1e-10

    def test_mu_only_exact_when_simulator_matches_reality(self):
        spec, d_trn, d_syn, d_tst = _instance(gamma_r=0.4, gamma_rs=0.0, gamma_tau=0.4)
        f_tilde = pairwise_linear_map(d_syn, oracle=spec.s_inv)
        assert _test_error(fit_mu_only_linear(d_trn, f_tilde), d_tst) <= 1e-10

    def test_sim_only_exact_without_simulator_gaps(self):
        spec, _, d_syn, d_tst = _instance(gamma_r=0.4, gamma_rs=0.0, gamma_tau=0.0)
        f_tilde = pairwise_linear_map(d_syn, oracle=spec.s_inv)
        assert _test_error(fit_sim_only_linear(d_syn, f_tilde), d_tst) <= 1e-10

    def test_sim_only_zero_effect(self):
        rng = np.random.default_rng(3)
        base = build_linear_pair(GapConfig(gamma_r=0.2), 2, rng=rng)
        w = base.w[0]
        spec = base.model_copy(update={"w": (w, w), "w_s": (w, w)})
        d_syn = generate_simulator_cf(spec, sample_latents(20, 2, rng), rng)
        d_tst = generate_eval(spec, sample_latents(10, 2, rng), rng)
        model = fit_sim_only_linear(d_syn, linear_encoder(spec.s_inv))
        assert np.array_equal(predict_cate(model, d_tst.x, d_tst.t), np.zeros(10))

    def test_rank_deficient_arm_is_named(self):
        x = np.random.default_rng(0).standard_normal((6, 3))
        d_trn = ObservationalDataset(x=x, t=[0, 0, 0, 0, 1, 1], y=np.zeros(6))
        with pytest.raises(NumericalError, match="arm 1"):
            fit_real_only_linear(d_trn)

    def test_normalized_extractors_are_not_linear(self):
        with pytest.raises(UnsupportedError):
            linear_matrices(linear_encoder([np.eye(2), np.eye(2)], normalize=True))


class TestAnalyticError:
    def test_real_only_hand_case(self):
        spec = _scalar_spec(r_inv=(2.0, 1.0), s_inv=(1.0, 1.0), w=(1.0, 0.5), w_s=(1.0, 0.5))
        assert analytic_cate_error(spec, np.array([3.0]), 1, EstimatorKind.REAL_ONLY) == pytest.approx(9.0)

    def test_mu_only_hand_case(self):
        spec = _scalar_spec(r_inv=(1.0, 1.0), s_inv=(0.25, 0.5), w=(1.0, 0.0), w_s=(1.0, 0.0))
        assert analytic_cate_error(spec, np.array([1.0]), 1, EstimatorKind.MU_ONLY) == pytest.approx(1.0)

    def test_sim_only_hand_case(self):
        spec = _scalar_spec(r_inv=(1.0, 1.0), s_inv=(1.0, 1.0), w=(0.0, 2.0), w_s=(0.0, 1.0))
        assert analytic_cate_error(spec, np.array([1.0]), 1, EstimatorKind.SIM_ONLY) == pytest.approx(1.0)

    def test_real_only_vanishes_without_arm_gap(self):
        spec, _, _, _ = _instance(gamma_r=0.0)
        x = np.random.default_rng(1).standard_normal(3)
        assert analytic_cate_error(spec, x, 0, EstimatorKind.REAL_ONLY) == 0.0

    def test_simponet_has_no_closed_form(self):
        spec, _, _, _ = _instance()
        with pytest.raises(UnsupportedError):
            analytic_cate_error(spec, np.ones(3), 0, EstimatorKind.SIMPONET)

    @pytest.mark.parametrize("kind", [EstimatorKind.SIM_ONLY, EstimatorKind.REAL_ONLY, EstimatorKind.MU_ONLY])
    def test_measured_error_matches_formula(self, kind):
        spec, d_trn, d_syn, _ = _instance(seed=4, n_z=4, gamma_r=0.3, gamma_rs=0.2, gamma_tau=0.5)
        f_tilde = linear_encoder(spec.s_inv)
        model = {
            EstimatorKind.SIM_ONLY: lambda: fit_sim_only_linear(d_syn, f_tilde),
            EstimatorKind.REAL_ONLY: lambda: fit_real_only_linear(d_trn),
            EstimatorKind.MU_ONLY: lambda: fit_mu_only_linear(d_trn, f_tilde),
        }[kind]()
        z_star = np.random.default_rng(9).standard_normal(4)
        for t in (0, 1):
            x_star = z_star @ spec.r(t)
            measured = (predict_cate(model, x_star[None, :], [t])[0] - z_star @ spec.w_tau) ** 2
            expected = analytic_cate_error(spec, x_star, t, kind)
            assert measured == pytest.approx(expected, rel=1e-6, abs=1e-12)


class TestAlternating:
    def test_objective_never_increases(self):
        for seed in range(10):
            spec, d_trn, d_syn, _ = _instance(seed=seed, sigma_y=0.3, gamma_r=0.3, gamma_rs=0.3, gamma_tau=0.3)
            rng = np.random.default_rng(seed)
            cfg = AltMinConfig(
                lambda_f=float(10 ** rng.uniform(-3, 1)), lambda_tau=float(10 ** rng.uniform(-3, 1)), max_sweeps=40
            )
            _, report = fit_simponet_linear(d_trn, d_syn, linear_encoder(spec.s_inv), cfg)
            trace = np.asarray(report.objective_trace)
            assert np.all(trace[1:] <= trace[:-1] + 1e-9 * np.maximum(1.0, np.abs(trace[:-1])))

    def test_large_extractor_weight_collapses_to_simulator_maps(self):
        spec, d_trn, d_syn, _ = _instance(seed=2, gamma_r=0.3, gamma_rs=0.3, gamma_tau=0.3)
        f_tilde = linear_encoder(spec.s_inv)
        model, _ = fit_simponet_linear(d_trn, d_syn, f_tilde, AltMinConfig(lambda_f=1e8, lambda_tau=0.0, max_sweeps=20))
        for t in (0, 1):
            assert np.max(np.abs(model.extractors[t] - spec.s_inv[t])) <= 1e-6

    def test_report_records_weights_and_sweeps(self):
        spec, d_trn, d_syn, _ = _instance(seed=5, gamma_r=0.2)
        cfg = AltMinConfig(lambda_f=0.5, lambda_tau=2.0, max_sweeps=7, rel_tol=1e-300)
        model, report = fit_simponet_linear(d_trn, d_syn, linear_encoder(spec.s_inv), cfg)
        assert report.lambda_f == 0.5 and report.lambda_tau == 2.0
        assert len(report.objective_trace) == report.sweeps + 1
        assert model.kind == EstimatorKind.SIMPONET
        assert model.metadata["sweeps"] == report.sweeps

    def test_ridge_penalty_without_effect_term(self):
        spec, d_trn, d_syn, _ = _instance(seed=6, n=80, gamma_r=0.2)
        cfg = AltMinConfig(lambda_tau=0.0, ridge=1e-6, max_sweeps=5)
        model, _ = fit_simponet_linear(d_trn, d_syn, linear_encoder(spec.s_inv), cfg)
        assert all(np.all(np.isfinite(h)) for h in model.heads)

    def test_rank_deficient_arm_without_regularizers(self):
        x = np.random.default_rng(0).standard_normal((6, 3))
        d_trn = ObservationalDataset(x=x, t=[0, 0, 0, 0, 1, 1], y=np.ones(6))
        spec, _, d_syn, _ = _instance(seed=1)
        with pytest.raises(NumericalError):
            fit_simponet_linear(d_trn, d_syn, linear_encoder(spec.s_inv), AltMinConfig(lambda_tau=0.0))

    def test_lambda_f_floor(self):
        with pytest.raises(ValueError):
            AltMinConfig(lambda_f=0.0)

    def test_learned_extractors_fit(self):
        _, d_trn, d_syn, d_tst = _instance(seed=7, n=100, gamma_r=0.1, gamma_rs=0.1, gamma_tau=0.1)
        model, report = fit_simponet_linear(d_trn, d_syn, pairwise_linear_map(d_syn))
        assert report.objective_trace[-1] <= report.objective_trace[0]
        assert np.isfinite(_test_error(model, d_tst))
