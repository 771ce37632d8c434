"""Tests for the real/simulator data-generating processes."""

import numpy as np
import pytest

from dgp import (
    apply_coupling_flow,
    apply_covariate_mlp,
    assemble_observational,
    build_linear_pair,
    coupling_splits,
    draw_latent_rows,
    generate_eval,
    generate_observational,
    generate_simulator_cf,
    gp_cholesky,
    invert_coupling_flow,
    mix_coupling_flows,
    mix_covariate_mlps,
    new_coupling_flow,
    new_covariate_mlp,
    rbf_kernel,
    sample_gp_outcome_functions,
    sample_latents,
    standardize_latents,
    synthesize_semisynthetic_sim_outcomes,
)
from errors import ArgumentError, NumericalError, RegenerationError
from models import CouplingFlow, CovariateMlp, GapConfig, GpOutcomeSpec, LatentMode


def _pair(seed=0, n_z=3, noise=(0.0, 0.0), **gaps):
    return build_linear_pair(GapConfig(**gaps), n_z, noise, np.random.default_rng(seed))


class TestLatents:
    def test_sphere_rows_have_unit_norm(self):
        z = sample_latents(3, 2, np.random.default_rng(1), LatentMode.SPHERE)
        assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)

    def test_gaussian_moments(self):
        z = sample_latents(10000, 1, np.random.default_rng(2))
        assert abs(z.mean()) < 0.05
        assert abs(z.var() - 1.0) < 0.05

    def test_same_seed_same_draw(self):
        a = sample_latents(2, 3, np.random.default_rng(7))
        b = sample_latents(2, 3, np.random.default_rng(7))
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("n, n_z", [(0, 2), (3, 0)])
    def test_empty_shapes_rejected(self, n, n_z):
        with pytest.raises(ArgumentError):
            sample_latents(n, n_z, np.random.default_rng(0))

    def test_standardize_handles_constant_column(self):
        z = np.column_stack([np.arange(10.0), np.full(10, 4.0)])
        out = standardize_latents(z)
        assert np.allclose(out[:, 0].mean(), 0.0)
        assert np.allclose(out[:, 0].std(), 1.0)
        assert np.array_equal(out[:, 1], np.zeros(10))

    def test_pool_rows_are_drawn_from_pool(self):
        pool = np.arange(20.0).reshape(10, 2)
        rows = draw_latent_rows(pool, 6, np.random.default_rng(3))
        assert rows.shape == (6, 2)
        assert len({tuple(r) for r in rows}) == 6
        assert all(any(np.array_equal(r, p) for p in pool) for r in rows)


class TestLinearPair:
    def test_zero_real_gap_gives_equal_maps(self):
        spec = _pair(gamma_r=0.0, gamma_rs=0.3, gamma_tau=0.3)
        assert np.array_equal(spec.r_inv[0], spec.r_inv[1])

    def test_zero_sim_gap_copies_real_maps(self):
        spec = _pair(gamma_r=0.2, gamma_rs=0.0, gamma_tau=0.3)
        for t in (0, 1):
            assert np.array_equal(spec.s_inv[t], spec.r_inv[t])

    def test_zero_effect_gap_copies_effect(self):
        spec = _pair(gamma_r=0.2, gamma_rs=0.2, gamma_tau=0.0)
        assert np.allclose(spec.w_tau_s, spec.w_tau, atol=1e-12)

    def test_effect_gap_orders_simulator_effect_error(self):
        z = sample_latents(500, 3, np.random.default_rng(5))
        gammas = [0.0, 0.1, 0.4, 1.0]
        means = []
        for gamma_tau in gammas:
            spec = _pair(seed=4, gamma_r=0.2, gamma_rs=0.2, gamma_tau=gamma_tau)
            means.append(np.mean(np.abs(z @ (spec.w_tau_s - spec.w_tau))))
        assert means[0] == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.diff(means) > 0)
        # same draws for every gamma_tau, so the gap scales linearly
        assert np.allclose(np.array(means[1:]) / gammas[1:], means[1] / gammas[1])

    def test_propensity_direction_is_unit(self):
        spec = _pair(gamma_r=0.1)
        assert np.linalg.norm(spec.propensity_direction) == pytest.approx(1.0)

    def test_gap_range_enforced(self):
        with pytest.raises(ValueError):
            GapConfig(gamma_r=0.6)

    def test_non_positive_dimension(self):
        with pytest.raises(ArgumentError):
            build_linear_pair(GapConfig(), 0, rng=np.random.default_rng(0))


class TestSampling:
    def test_noiseless_observational_consistency(self):
        spec = _pair(gamma_r=0.3, gamma_rs=0.1, gamma_tau=0.1)
        data = generate_observational(spec, sample_latents(200, 3, np.random.default_rng(1)), np.random.default_rng(2))
        for i in range(data.n):
            t = data.t[i]
            assert data.x[i] @ spec.r_inv[t] @ spec.w[t] == pytest.approx(data.y[i], abs=1e-8)

    def test_fair_coin_assignment(self):
        spec = _pair(n_z=2, gamma_r=0.1)
        data = generate_observational(spec, sample_latents(10000, 2, np.random.default_rng(1)), np.random.default_rng(2))
        assert abs(data.t.mean() - 0.5) < 0.02

    def test_propensity_follows_latent_direction(self):
        spec = build_linear_pair(GapConfig(), 2, rng=np.random.default_rng(4), propensity_scale=5.0)
        z = sample_latents(4000, 2, np.random.default_rng(5))
        data = generate_observational(spec, z, np.random.default_rng(6))
        score = z @ spec.propensity_direction
        assert data.t[score > 0.5].mean() > 0.8
        assert data.t[score < -0.5].mean() < 0.2

    def test_observational_is_deterministic(self):
        spec = _pair(gamma_r=0.2)
        z = sample_latents(50, 3, np.random.default_rng(1))
        a = generate_observational(spec, z, np.random.default_rng(9))
        b = generate_observational(spec, z, np.random.default_rng(9))
        assert np.array_equal(a.x, b.x) and np.array_equal(a.t, b.t) and np.array_equal(a.y, b.y)

    def test_single_row_leaves_an_arm_empty(self):
        spec = _pair()
        with pytest.raises(RegenerationError):
            generate_observational(spec, np.ones((1, 3)), np.random.default_rng(0))

    def test_simulator_pairs_share_latents(self):
        spec = _pair(gamma_r=0.3, gamma_rs=0.3, gamma_tau=0.5)
        z = sample_latents(100, 3, np.random.default_rng(1))
        sim = generate_simulator_cf(spec, z, np.random.default_rng(2))
        assert np.allclose(sim.tau_s, z @ spec.w_tau_s, atol=1e-9)
        assert np.allclose(sim.x0 @ spec.s_inv[0], sim.x1 @ spec.s_inv[1], atol=1e-9)

    def test_simulator_without_gap_renders_real_covariates(self):
        spec = _pair(gamma_r=0.3, gamma_rs=0.0)
        z = sample_latents(20, 3, np.random.default_rng(1))
        sim = generate_simulator_cf(spec, z, np.random.default_rng(2))
        assert np.array_equal(sim.x0, z @ spec.r(0))
        assert np.array_equal(sim.x1, z @ spec.r(1))

    def test_eval_ground_truth(self):
        spec = _pair(gamma_r=0.3)
        z = sample_latents(100, 3, np.random.default_rng(1))
        d_tst = generate_eval(spec, z, np.random.default_rng(2))
        assert np.allclose(d_tst.tau, z @ spec.w_tau, atol=1e-9)
        for i in range(d_tst.m):
            assert np.allclose(d_tst.x[i] @ spec.r_inv[d_tst.t[i]], z[i], atol=1e-9)
        again = generate_eval(spec, z, np.random.default_rng(2))
        assert np.array_equal(d_tst.t, again.t)

    def test_assembly_checks_arm_sizes(self):
        z = np.zeros((40, 2))
        covariates = (np.zeros((40, 2)), np.ones((40, 2)))
        outcomes = (np.zeros(40), np.ones(40))
        data = assemble_observational(z, covariates, outcomes, np.random.default_rng(11))
        assert np.array_equal(data.y, data.t.astype(float))


class TestGaussianProcess:
    def test_effect_is_outcome_difference(self):
        z = sample_latents(40, 2, np.random.default_rng(0))
        draw = sample_gp_outcome_functions(z, GpOutcomeSpec(gamma_tau_gap=0.5), np.random.default_rng(1))
        assert np.allclose(draw.mu1 - draw.mu0, draw.tau, atol=1e-12)
        assert np.allclose(draw.y1s - draw.y0s, draw.tau_s, atol=1e-12)

    def test_zero_gap_skips_perturbation(self):
        z = sample_latents(30, 2, np.random.default_rng(0))
        draw = sample_gp_outcome_functions(z, GpOutcomeSpec(gamma_tau_gap=0.0), np.random.default_rng(1))
        assert np.array_equal(draw.tau_s, draw.tau)

    @pytest.mark.slow
    def test_effect_covariance_matches_kernel(self):
        z = np.column_stack([0.3 * np.arange(5), np.zeros(5)])
        spec = GpOutcomeSpec(gamma_tau_fn=1.0)
        rng = np.random.default_rng(2024)
        draws = np.array([sample_gp_outcome_functions(z, spec, rng).tau for _ in range(20000)])
        empirical = draws.T @ draws / draws.shape[0]
        kernel = rbf_kernel(z, 1.0)
        assert np.linalg.norm(empirical - kernel) / np.linalg.norm(kernel) < 0.05

    def test_duplicate_latents_still_factor(self):
        z = np.vstack([np.ones((3, 2)), np.zeros((2, 2))])
        factor = gp_cholesky(rbf_kernel(z, 1.0))
        assert np.all(np.isfinite(factor))

    def test_cholesky_gives_up_after_jitter_limit(self):
        with pytest.raises(NumericalError):
            gp_cholesky(-np.eye(3))


class TestSemisyntheticEffect:
    def test_zero_gap_keeps_effect(self):
        tau = np.array([0.5, -1.0, 2.0])
        z = np.random.default_rng(0).standard_normal((3, 2))
        assert np.array_equal(synthesize_semisynthetic_sim_outcomes(tau, z, 0.0, np.random.default_rng(1)), tau)

    def test_constant_effect_is_unchanged(self):
        tau = np.full(5, 3.0)
        z = np.random.default_rng(0).standard_normal((5, 2))
        assert np.array_equal(synthesize_semisynthetic_sim_outcomes(tau, z, 0.9, np.random.default_rng(1)), tau)

    def test_hand_computed_case(self):
        out = synthesize_semisynthetic_sim_outcomes(
            np.array([0.0, 2.0]), np.array([[1.0], [-1.0]]), 1.0, np.random.default_rng(0), w_tau_s=np.array([1.0])
        )
        assert np.allclose(out, [1.0, 1.0])

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            synthesize_semisynthetic_sim_outcomes(np.zeros(3), np.zeros((2, 2)), 0.5, np.random.default_rng(0))


class TestCouplingFlow:
    def test_split_alternation(self):
        assert coupling_splits(2, 2) == [((0,), (1,)), ((1,), (0,))]

    def test_round_trip(self):
        flow = new_coupling_flow(4, 2, np.random.default_rng(0))
        z = np.random.default_rng(1).standard_normal((100, 4))
        assert np.max(np.abs(invert_coupling_flow(flow, apply_coupling_flow(flow, z)) - z)) <= 1e-9

    def test_zero_weights_give_identity(self):
        flow = new_coupling_flow(3, 2, np.random.default_rng(0))
        zeroed = CouplingFlow.model_validate(
            {
                "n_x": 3,
                "layers": [
                    {
                        "conditioner": layer.conditioner,
                        "transformed": layer.transformed,
                        "scale_net": {k: np.zeros_like(getattr(layer.scale_net, k)) for k in ("w1", "b1", "w2", "b2")},
                        "shift_net": {k: np.zeros_like(getattr(layer.shift_net, k)) for k in ("w1", "b1", "w2", "b2")},
                    }
                    for layer in flow.layers
                ],
            }
        )
        z = np.random.default_rng(1).standard_normal((10, 3))
        assert np.array_equal(apply_coupling_flow(zeroed, z), z)

    def test_seeded_construction(self):
        a = new_coupling_flow(3, 2, np.random.default_rng(5))
        b = new_coupling_flow(3, 2, np.random.default_rng(5))
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.scale_net.w1, lb.scale_net.w1)
            assert np.array_equal(la.shift_net.w2, lb.shift_net.w2)

    def test_injective_on_sampled_latents(self):
        flow = new_coupling_flow(2, 2, np.random.default_rng(0))
        z = np.random.default_rng(1).standard_normal((50, 2))
        x = apply_coupling_flow(flow, z)
        gaps = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
        assert np.all(gaps[~np.eye(50, dtype=bool)] > 0)

    def test_one_dimension_rejected(self):
        with pytest.raises(ArgumentError):
            new_coupling_flow(1)

    def test_mixing_endpoints(self):
        a = new_coupling_flow(2, 2, np.random.default_rng(0))
        b = new_coupling_flow(2, 2, np.random.default_rng(1))
        assert np.array_equal(mix_coupling_flows(a, b, 0.0).layers[0].scale_net.w1, a.layers[0].scale_net.w1)
        mixed = mix_coupling_flows(a, b, 0.5).layers[1].shift_net.w2
        assert np.allclose(mixed, 0.5 * (a.layers[1].shift_net.w2 + b.layers[1].shift_net.w2))

    def test_mixing_needs_same_shape(self):
        with pytest.raises(ArgumentError):
            mix_coupling_flows(new_coupling_flow(2, 2), new_coupling_flow(2, 3), 0.5)


class TestCovariateMlp:
    def test_hand_computed_map(self):
        net = CovariateMlp(w1=[[1.0], [0.0]], b1=[0.0], w2=[[1.0, 2.0]], b2=[0.5, 0.0])
        x = apply_covariate_mlp(net, np.array([[2.0, 7.0], [-1.0, 3.0]]))
        assert np.allclose(x, [[2.5, 4.0], [0.5, 0.0]])

    def test_inactive_units_merge_distinct_latents(self):
        net = CovariateMlp(w1=[[1.0], [0.0]], b1=[0.0], w2=[[1.0, 2.0]], b2=[0.0, 0.0])
        x = apply_covariate_mlp(net, np.array([[-1.0, 0.0], [-2.0, 5.0]]))
        assert np.array_equal(x[0], x[1])

    def test_random_map_shapes_and_seeding(self):
        a = new_covariate_mlp(3, 4, 5, np.random.default_rng(2))
        b = new_covariate_mlp(3, 4, 5, np.random.default_rng(2))
        assert (a.n_z, a.n_x, a.w1.shape[1]) == (3, 4, 5)
        z = sample_latents(10, 3, np.random.default_rng(0))
        assert apply_covariate_mlp(a, z).shape == (10, 4)
        assert np.array_equal(apply_covariate_mlp(a, z), apply_covariate_mlp(b, z))

    def test_wrong_latent_width(self):
        net = new_covariate_mlp(3, 3, 3, np.random.default_rng(0))
        with pytest.raises(ArgumentError):
            apply_covariate_mlp(net, np.zeros((2, 4)))

    def test_non_positive_sizes(self):
        with pytest.raises(ArgumentError):
            new_covariate_mlp(3, 3, 0)

    def test_inconsistent_layers_rejected(self):
        with pytest.raises(ValueError):
            CovariateMlp(w1=np.zeros((2, 3)), b1=np.zeros(2), w2=np.zeros((3, 2)), b2=np.zeros(2))

    def test_mixing_endpoints(self):
        a = new_covariate_mlp(3, 3, 4, np.random.default_rng(0))
        b = new_covariate_mlp(3, 3, 4, np.random.default_rng(1))
        assert np.array_equal(mix_covariate_mlps(a, b, 0.0).w1, a.w1)
        assert np.array_equal(mix_covariate_mlps(a, b, 1.0).b1, b.b1)
        assert np.allclose(mix_covariate_mlps(a, b, 0.25).w2, 0.75 * a.w2 + 0.25 * b.w2)

    def test_mixing_needs_same_shape(self):
        with pytest.raises(ArgumentError):
            mix_covariate_mlps(new_covariate_mlp(3, 3, 4), new_covariate_mlp(3, 3, 5), 0.5)
