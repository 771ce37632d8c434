"""Error metrics, distances between learned functions, significance tests and bound checks."""

import logging
from typing import Callable, Dict, Sequence, Tuple

import numpy as np
from scipy.special import betainc

from errors import ArgumentError, UnsupportedError
from linear_estimators import linear_matrices, predict_cate, predict_counterfactual, predict_factual
from models import BoundReport, CateModel, DistanceKind, Encoder, HeadKind, LinearDgpPair, ObservationalDataset
from validation import as_matrix, as_vector, check_treatment

logger = logging.getLogger(__name__)

DECOMPOSITION_TOL = 1e-9
GENERALIZATION_TOL = 1e-6


def cate_error(pred: np.ndarray, truth: np.ndarray) -> Tuple[float, float]:
    """(mse, rmse) of predicted against true effects"""
    pred = as_vector(pred, "pred")
    truth = as_vector(truth, "truth")
    if pred.shape != truth.shape:
        raise ArgumentError(f"pred and truth lengths differ: {pred.shape[0]} vs {truth.shape[0]}")
    if pred.shape[0] < 1:
        raise ArgumentError("cate_error needs at least one element")
    mse = float(np.mean((pred - truth) ** 2))
    return mse, float(np.sqrt(mse))


def factual_error(model: CateModel, data: ObservationalDataset) -> Tuple[float, np.ndarray]:
    """Overall factual MSE and the per-sample squared errors"""
    per_sample = (predict_factual(model, data.x, data.t) - data.y) ** 2
    return float(per_sample.mean()), per_sample


def empirical_distance(
    kind: DistanceKind,
    a: Callable[[np.ndarray], np.ndarray],
    b: Callable[[np.ndarray], np.ndarray],
    probe: np.ndarray,
) -> float:
    """
    Mean squared distance between two functions on probe rows.

    x_given_t compares extractors on covariates, z_space compares effect
    functions on latents, tau_on_points compares effect functions on
    already-transformed latent points.
    """
    kind = DistanceKind(kind)
    probe = as_matrix(probe, "probe")
    out_a, out_b = np.asarray(a(probe), dtype=float), np.asarray(b(probe), dtype=float)
    if out_a.shape != out_b.shape or out_a.shape[0] != probe.shape[0]:
        raise ArgumentError(f"function outputs differ in shape: {out_a.shape} vs {out_b.shape}")
    squared = (out_a - out_b) ** 2
    if squared.ndim == 2:
        squared = squared.sum(axis=1)
    return float(squared.mean())


def student_t_cdf(t: float, df: float) -> float:
    """Student-t CDF through the regularized incomplete beta function"""
    tail = 0.5 * betainc(0.5 * df, 0.5, df / (df + t * t))
    return float(1.0 - tail) if t > 0 else float(tail)


def paired_t_test_one_sided(a_sq_errors: np.ndarray, b_sq_errors: np.ndarray) -> float:
    """
    p-value for H1: mean(b - a) > 0, i.e. method a has lower errors.

    All-zero differences give 0.5; zero spread with a nonzero mean gives 0 or 1.
    """
    a = as_vector(a_sq_errors, "a_sq_errors")
    b = as_vector(b_sq_errors, "b_sq_errors")
    if a.shape != b.shape:
        raise ArgumentError(f"paired samples differ in length: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if n < 3:
        raise ArgumentError(f"paired t-test needs at least 3 pairs, got {n}")
    d = b - a
    if np.all(d == 0):
        return 0.5
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        return 0.0 if mean > 0 else 1.0
    statistic = mean * np.sqrt(n) / sd
    return 1.0 - student_t_cdf(statistic, n - 1)


# ---------------------------------------------------------------------------
# Bound checks
# ---------------------------------------------------------------------------


def _linear_outcomes(spec: LinearDgpPair, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return z @ spec.w[0], z @ spec.w[1]


def check_decomposition_bound(
    model: CateModel, spec: LinearDgpPair, probe_z: np.ndarray, t: int
) -> BoundReport:
    """CATE error on rows rendered under t against twice the factual plus counterfactual errors"""
    t = check_treatment(t)
    z = as_matrix(probe_z, "probe_z", columns=spec.n_z)
    x = z @ spec.r(t)
    arms = np.full(z.shape[0], t)
    mu = _linear_outcomes(spec, z)

    eps_cate = float(np.mean((predict_cate(model, x, arms) - (mu[1] - mu[0])) ** 2))
    eps_f = float(np.mean((predict_factual(model, x, arms) - mu[t]) ** 2))
    eps_cf = float(np.mean((predict_counterfactual(model, x, arms) - mu[1 - t]) ** 2))
    rhs = 2.0 * eps_f + 2.0 * eps_cf
    margin = rhs - eps_cate
    holds = margin >= -DECOMPOSITION_TOL
    if not holds:
        logger.warning("Decomposition bound violated: lhs %.6g > rhs %.6g", eps_cate, rhs)
    return BoundReport(
        lhs=eps_cate,
        rhs=rhs,
        margin=margin,
        components={"eps_cate": eps_cate, "eps_f": eps_f, "eps_cf": eps_cf},
        holds=holds,
    )


def sim_effect_head(sim_model: CateModel) -> np.ndarray:
    """Simulator effect weights w_tilde_tau^S of a linear SimOnly fit"""
    if sim_model.head_kind != HeadKind.LINEAR:
        raise UnsupportedError("simulator effect head must be linear")
    return np.asarray(sim_model.heads[1]) - np.asarray(sim_model.heads[0])


def check_generalization_bound(
    model: CateModel,
    spec: LinearDgpPair,
    sim_fit: Tuple[Encoder, np.ndarray],
    probe_z: np.ndarray,
    t: int,
) -> BoundReport:
    """
    Check the joint real/simulator CATE bound for a linear model on latents probe_z.

    Real covariates are z R_t, simulator covariates z S_t. The simulator's
    extractor distance is measured in the recovered frame: h, the
    least-squares linear map from true to recovered latents, composed with
    f_t, against f_tilde_t.

    Args:
        model: Fitted linear model (matrix extractors, vector heads)
        spec: Ground-truth DGP
        sim_fit: (f_tilde encoder pair, simulator effect weights on recovered latents)
        probe_z: Latent probe rows
        t: Treatment under which covariates are rendered

    Returns:
        BoundReport with every term in components
    """
    t = check_treatment(t)
    if model.extractors is None or model.head_kind != HeadKind.LINEAR:
        raise UnsupportedError("generalization bound check needs a linear model")
    f_tilde, tau_tilde = sim_fit
    f_tilde_t = linear_matrices(f_tilde)[t]
    tau_tilde = as_vector(tau_tilde, "tau_tilde", f_tilde.n_z)
    z = as_matrix(probe_z, "probe_z", columns=spec.n_z)

    f_hat = np.asarray(model.extractors[t])
    w_hat = np.asarray(model.heads[1]) - np.asarray(model.heads[0])
    x = z @ spec.r(t)
    x_sim = z @ spec.s(t)
    recovered = x_sim @ f_tilde_t
    frame, _, _, _ = np.linalg.lstsq(z, recovered, rcond=None)
    arms = np.full(z.shape[0], t)

    lhs = float(np.mean((predict_cate(model, x, arms) - z @ spec.w_tau) ** 2))
    eps_f = float(np.mean((x @ f_hat @ model.heads[t] - z @ spec.w[t]) ** 2))
    d_h = empirical_distance(DistanceKind.TAU_ON_POINTS, lambda p: p @ w_hat, lambda p: p @ tau_tilde, recovered)
    d_f_hat = empirical_distance(DistanceKind.X_GIVEN_T, lambda p: p @ f_hat, lambda p: p @ f_tilde_t, x)
    d_z = empirical_distance(DistanceKind.Z_SPACE, lambda p: p @ spec.w_tau, lambda p: p @ spec.w_tau_s, z)
    real_inv = spec.r_inv[t]
    # f_tilde_t recovers latents only up to h, so the bound term compares f_t
    # in that frame; the frame-free S_t^-1 distance is kept as d_x_f_fsim_raw
    d_f_sim = empirical_distance(
        DistanceKind.X_GIVEN_T, lambda p: p @ real_inv @ frame, lambda p: p @ f_tilde_t, x
    )
    d_f_sim_raw = empirical_distance(
        DistanceKind.X_GIVEN_T, lambda p: p @ real_inv, lambda p: p @ spec.s_inv[t], x
    )
    k_tau = float(max(np.linalg.norm(spec.w_tau), np.linalg.norm(w_hat)))
    k2 = k_tau**2

    components: Dict[str, float] = {
        "eps_f": eps_f,
        "d_h": d_h,
        "d_x_fhat_ftilde": d_f_hat,
        "d_z": d_z,
        "d_x_f_fsim": d_f_sim,
        "d_x_f_fsim_raw": d_f_sim_raw,
    }
    rhs = 8.0 * eps_f + 12.0 * d_h + 12.0 * k2 * d_f_hat + 12.0 * d_z + 12.0 * k2 * d_f_sim
    margin = rhs - lhs
    holds = margin >= -GENERALIZATION_TOL * max(1.0, rhs)
    if not holds:
        logger.warning("Generalization bound violated: lhs %.6g > rhs %.6g", lhs, rhs)
    return BoundReport(lhs=lhs, rhs=rhs, margin=margin, components=components, k_tau=k_tau, holds=holds)


def rank_within(values: Sequence[float]) -> np.ndarray:
    """1-based ranks, ties broken by position"""
    order = np.argsort(np.asarray(values, dtype=float), kind="stable")
    ranks = np.empty(len(order), dtype=int)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks
