"""Real and simulator data-generating processes with controlled gaps."""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from scipy.special import expit

from errors import ArgumentError, ConstructionError, NumericalError, RegenerationError
from models import (
    CONDITION_LIMIT,
    CouplingFlow,
    CouplingLayer,
    CovariateMlp,
    EvalDataset,
    GapConfig,
    GpOutcomeDraw,
    GpOutcomeSpec,
    LatentMode,
    LinearDgpPair,
    ObservationalDataset,
    ScaleShiftNet,
    SimulatorDataset,
)
from validation import as_matrix, as_vector, check_same_length

logger = logging.getLogger(__name__)

MAX_RESAMPLES = 20
MAX_JITTER = 1e-4
FLOW_HIDDEN = 16
FLOW_WEIGHT_STD = 0.1
LOG_SCALE_CLAMP = 2.0
MLP_BIAS_STD = 0.5


def sample_latents(
    n: int, n_z: int, rng: np.random.Generator, mode: LatentMode = LatentMode.GAUSSIAN
) -> np.ndarray:
    """Draw n latent rows, i.i.d. standard normal or projected onto the unit sphere"""
    if n < 1 or n_z < 1:
        raise ArgumentError(f"need n >= 1 and n_z >= 1, got n={n}, n_z={n_z}")
    z = rng.standard_normal((n, n_z))
    if LatentMode(mode) == LatentMode.SPHERE:
        z = z / np.linalg.norm(z, axis=1, keepdims=True)
    return z


def standardize_latents(z: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns; constant columns are only centered"""
    z = as_matrix(z, "z")
    scale = z.std(axis=0)
    scale[scale == 0] = 1.0
    return (z - z.mean(axis=0)) / scale


def draw_latent_rows(pool: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample rows of a fixed latent table, without replacement while the table lasts"""
    pool = as_matrix(pool, "pool")
    rows = rng.choice(pool.shape[0], size=n, replace=n > pool.shape[0])
    return pool[rows]


def _well_conditioned(*matrices: np.ndarray) -> bool:
    for matrix in matrices:
        cond = np.linalg.cond(matrix)
        if not np.isfinite(cond) or cond >= CONDITION_LIMIT:
            return False
    return True


def build_linear_pair(
    gaps: GapConfig,
    n_z: int,
    noise: Tuple[float, float] = (0.0, 0.0),
    rng: Optional[np.random.Generator] = None,
    propensity_scale: float = 0.0,
) -> LinearDgpPair:
    """
    Build a matched real/simulator linear DGP by convex mixing with fresh Gaussian draws.

    Args:
        gaps: Gap dials
        n_z: Latent (and covariate) dimension
        noise: (sigma_y, sigma_ys) outcome noise scales
        rng: Seeded generator
        propensity_scale: Logit scale of treatment assignment

    Returns:
        LinearDgpPair whose maps all pass the condition-number gate
    """
    if n_z < 1:
        raise ArgumentError(f"n_z must be positive, got {n_z}")
    rng = rng if rng is not None else np.random.default_rng()
    g_r, g_rs, g_tau, g_w = gaps.gamma_r, gaps.gamma_rs, gaps.gamma_tau, gaps.gamma_w

    for attempt in range(MAX_RESAMPLES + 1):
        r0_inv = rng.standard_normal((n_z, n_z))
        r1_inv = (1.0 - g_r) * r0_inv + g_r * rng.standard_normal((n_z, n_z))
        w0 = rng.standard_normal(n_z)
        w1 = g_w * w0 + (1.0 - g_w) * rng.standard_normal(n_z)
        s0_inv = (1.0 - g_rs) * r0_inv + g_rs * rng.standard_normal((n_z, n_z))
        s1_inv = (1.0 - g_rs) * r1_inv + g_rs * rng.standard_normal((n_z, n_z))
        w_tau = w1 - w0
        w_tau_s = (1.0 - g_tau) * w_tau + g_tau * rng.standard_normal(n_z)
        direction = rng.standard_normal(n_z)
        if _well_conditioned(r0_inv, r1_inv, s0_inv, s1_inv):
            break
        logger.warning("Ill-conditioned covariate map on attempt %d, resampling", attempt + 1)
    else:
        raise ConstructionError(
            f"covariate maps stayed ill-conditioned after {MAX_RESAMPLES} resamples (n_z={n_z})"
        )

    w0_s = w0.copy()
    w1_s = w0_s + w_tau_s
    return LinearDgpPair(
        n_z=n_z,
        r_inv=(r0_inv, r1_inv),
        s_inv=(s0_inv, s1_inv),
        w=(w0, w1),
        w_s=(w0_s, w1_s),
        sigma_y=noise[0],
        sigma_ys=noise[1],
        propensity_scale=propensity_scale,
        propensity_direction=direction / np.linalg.norm(direction),
    )


def assign_treatments(
    z: np.ndarray,
    rng: np.random.Generator,
    propensity_scale: float = 0.0,
    direction: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Bernoulli treatments with logistic propensity sigmoid(alpha * z . w_p)"""
    if propensity_scale == 0.0 or direction is None:
        p = np.full(z.shape[0], 0.5)
    else:
        p = expit(propensity_scale * (z @ direction))
    return (rng.random(z.shape[0]) < p).astype(np.int64)


def assemble_observational(
    z: np.ndarray,
    covariates: Tuple[np.ndarray, np.ndarray],
    outcomes: Tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
    sigma_y: float = 0.0,
    propensity_scale: float = 0.0,
    direction: Optional[np.ndarray] = None,
) -> ObservationalDataset:
    """Pick each row's factual covariates and outcome from both rendered arms"""
    t = assign_treatments(z, rng, propensity_scale, direction)
    n_treated = int(t.sum())
    if n_treated == 0 or n_treated == t.shape[0]:
        raise RegenerationError(
            f"treatment assignment left an empty arm ({n_treated} of {t.shape[0]} treated); resample"
        )
    x = np.where(t[:, None] == 1, covariates[1], covariates[0])
    y = np.where(t == 1, outcomes[1], outcomes[0]) + sigma_y * rng.standard_normal(t.shape[0])
    return ObservationalDataset(x=x, t=t, y=y)


def assemble_simulator(
    covariates: Tuple[np.ndarray, np.ndarray],
    outcomes: Tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
    sigma_ys: float = 0.0,
) -> SimulatorDataset:
    m = covariates[0].shape[0]
    y0 = outcomes[0] + sigma_ys * rng.standard_normal(m)
    y1 = outcomes[1] + sigma_ys * rng.standard_normal(m)
    return SimulatorDataset(x0=covariates[0], x1=covariates[1], y0=y0, y1=y1)


def assemble_eval(
    z: np.ndarray,
    covariates: Tuple[np.ndarray, np.ndarray],
    outcomes: Tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
) -> EvalDataset:
    """Fair-coin observed covariates with noiseless potential outcomes"""
    t = (rng.random(z.shape[0]) < 0.5).astype(np.int64)
    x = np.where(t[:, None] == 1, covariates[1], covariates[0])
    y0 = np.asarray(outcomes[0], dtype=float)
    y1 = np.asarray(outcomes[1], dtype=float)
    return EvalDataset(x=x, t=t, y0=y0, y1=y1, tau=y1 - y0, z=z)


def generate_observational(
    spec: LinearDgpPair, z: np.ndarray, rng: np.random.Generator
) -> ObservationalDataset:
    z = as_matrix(z, "z", columns=spec.n_z)
    return assemble_observational(
        z,
        (z @ spec.r(0), z @ spec.r(1)),
        (z @ spec.w[0], z @ spec.w[1]),
        rng,
        sigma_y=spec.sigma_y,
        propensity_scale=spec.propensity_scale,
        direction=spec.propensity_direction,
    )


def generate_simulator_cf(
    spec: LinearDgpPair, z: np.ndarray, rng: np.random.Generator
) -> SimulatorDataset:
    z = as_matrix(z, "z", columns=spec.n_z)
    return assemble_simulator(
        (z @ spec.s(0), z @ spec.s(1)),
        (z @ spec.w_s[0], z @ spec.w_s[1]),
        rng,
        sigma_ys=spec.sigma_ys,
    )


def generate_eval(spec: LinearDgpPair, z: np.ndarray, rng: np.random.Generator) -> EvalDataset:
    z = as_matrix(z, "z", columns=spec.n_z)
    return assemble_eval(z, (z @ spec.r(0), z @ spec.r(1)), (z @ spec.w[0], z @ spec.w[1]), rng)


# ---------------------------------------------------------------------------
# Gaussian-process outcomes
# ---------------------------------------------------------------------------


def rbf_kernel(z: np.ndarray, gamma: float) -> np.ndarray:
    """k(z, z') = exp(-gamma^2 |z - z'|^2 / 2); larger gamma gives rougher functions"""
    return np.exp(-0.5 * gamma**2 * cdist(z, z, "sqeuclidean"))


def gp_cholesky(kernel: np.ndarray, jitter: float = 1e-8) -> np.ndarray:
    """Lower Cholesky factor of K + jitter I, escalating jitter tenfold up to 1e-4"""
    eye = np.eye(kernel.shape[0])
    current = jitter
    while True:
        try:
            return linalg.cholesky(kernel + current * eye, lower=True)
        except linalg.LinAlgError:
            if current >= MAX_JITTER:
                raise NumericalError(
                    f"Cholesky failed on a {kernel.shape[0]}x{kernel.shape[0]} kernel even with jitter {current:g}"
                )
            logger.warning("Cholesky failed with jitter %g, escalating", current)
            current = min(current * 10.0, MAX_JITTER)


def sample_gp(factor: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return factor @ rng.standard_normal(factor.shape[0])


def sample_gp_outcome_functions(
    z_all: np.ndarray, spec: GpOutcomeSpec, rng: np.random.Generator
) -> GpOutcomeDraw:
    """
    Draw real and simulator outcome functions jointly at every latent row.

    tau and mu_0 are independent GP draws, mu_1 = mu_0 + tau. The simulator
    gets a fresh baseline y0s and an effect tau_s perturbed from tau by an
    extra GP draw (skipped when the gap width is 0).
    """
    z_all = as_matrix(z_all, "z_all")
    base_factor = gp_cholesky(rbf_kernel(z_all, spec.gamma_base), spec.jitter)
    tau = sample_gp(gp_cholesky(rbf_kernel(z_all, spec.gamma_tau_fn), spec.jitter), rng)
    mu0 = sample_gp(base_factor, rng)
    if spec.gamma_tau_gap > 0:
        tau_s = tau + sample_gp(gp_cholesky(rbf_kernel(z_all, spec.gamma_tau_gap), spec.jitter), rng)
    else:
        tau_s = tau.copy()
    y0s = sample_gp(base_factor, rng)
    return GpOutcomeDraw(mu0=mu0, mu1=mu0 + tau, tau=tau, y0s=y0s, y1s=y0s + tau_s, tau_s=tau_s)


def synthesize_semisynthetic_sim_outcomes(
    tau: np.ndarray,
    z: np.ndarray,
    gamma_tau: float,
    rng: np.random.Generator,
    w_tau_s: Optional[np.ndarray] = None,
) -> np.ndarray:
    """tau_s = tau + std(tau) * gamma_tau * (z . w), w ~ N(0, I) unless supplied"""
    tau = as_vector(tau, "tau")
    z = as_matrix(z, "z")
    check_same_length(tau, z, "tau and z")
    w = rng.standard_normal(z.shape[1]) if w_tau_s is None else as_vector(w_tau_s, "w_tau_s", z.shape[1])
    return tau + np.std(tau) * gamma_tau * (z @ w)


# ---------------------------------------------------------------------------
# Coupling flows
# ---------------------------------------------------------------------------


def _random_net(n_in: int, n_out: int, rng: np.random.Generator) -> ScaleShiftNet:
    return ScaleShiftNet(
        w1=FLOW_WEIGHT_STD * rng.standard_normal((n_in, FLOW_HIDDEN)),
        b1=np.zeros(FLOW_HIDDEN),
        w2=FLOW_WEIGHT_STD * rng.standard_normal((FLOW_HIDDEN, n_out)),
        b2=np.zeros(n_out),
    )


def coupling_splits(n_x: int, n_layers: int) -> Sequence[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """(conditioner, transformed) index sets, swapping halves on every layer"""
    half = n_x // 2
    first, second = tuple(range(half)), tuple(range(half, n_x))
    return [(first, second) if k % 2 == 0 else (second, first) for k in range(n_layers)]


def new_coupling_flow(n_x: int, n_layers: int = 2, rng: Optional[np.random.Generator] = None) -> CouplingFlow:
    if n_x < 2:
        raise ArgumentError(f"coupling flows need n_x >= 2, got {n_x}")
    if n_layers < 1:
        raise ArgumentError(f"need at least one coupling layer, got {n_layers}")
    rng = rng if rng is not None else np.random.default_rng()
    layers = []
    for conditioner, transformed in coupling_splits(n_x, n_layers):
        layers.append(
            CouplingLayer(
                conditioner=conditioner,
                transformed=transformed,
                scale_net=_random_net(len(conditioner), len(transformed), rng),
                shift_net=_random_net(len(conditioner), len(transformed), rng),
            )
        )
    return CouplingFlow(n_x=n_x, layers=layers)


def _net_forward(net: ScaleShiftNet, h: np.ndarray) -> np.ndarray:
    return np.tanh(h @ net.w1 + net.b1) @ net.w2 + net.b2


def _scale_shift(layer: CouplingLayer, conditioner: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    log_scale = np.clip(_net_forward(layer.scale_net, conditioner), -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
    return log_scale, _net_forward(layer.shift_net, conditioner)


def apply_coupling_flow(flow: CouplingFlow, z: np.ndarray) -> np.ndarray:
    out = as_matrix(z, "z", columns=flow.n_x).copy()
    for layer in flow.layers:
        cond, trans = list(layer.conditioner), list(layer.transformed)
        log_scale, shift = _scale_shift(layer, out[:, cond])
        out[:, trans] = out[:, trans] * np.exp(log_scale) + shift
    return out


def invert_coupling_flow(flow: CouplingFlow, x: np.ndarray) -> np.ndarray:
    out = as_matrix(x, "x", columns=flow.n_x).copy()
    for layer in reversed(flow.layers):
        cond, trans = list(layer.conditioner), list(layer.transformed)
        log_scale, shift = _scale_shift(layer, out[:, cond])
        out[:, trans] = (out[:, trans] - shift) * np.exp(-log_scale)
    return out


def _mix_net(a: ScaleShiftNet, b: ScaleShiftNet, weight: float) -> ScaleShiftNet:
    return ScaleShiftNet(
        **{name: (1.0 - weight) * getattr(a, name) + weight * getattr(b, name) for name in ("w1", "b1", "w2", "b2")}
    )


def mix_coupling_flows(a: CouplingFlow, b: CouplingFlow, weight: float) -> CouplingFlow:
    """Parameter-wise convex combination (1 - weight) a + weight b of two same-shaped flows"""
    if a.n_x != b.n_x or len(a.layers) != len(b.layers):
        raise ArgumentError("flows must share dimension and depth to be mixed")
    layers = [
        CouplingLayer(
            conditioner=la.conditioner,
            transformed=la.transformed,
            scale_net=_mix_net(la.scale_net, lb.scale_net, weight),
            shift_net=_mix_net(la.shift_net, lb.shift_net, weight),
        )
        for la, lb in zip(a.layers, b.layers)
    ]
    return CouplingFlow(n_x=a.n_x, layers=layers)


# ---------------------------------------------------------------------------
# MLP covariate maps
# ---------------------------------------------------------------------------


def new_covariate_mlp(
    n_z: int, n_x: int, hidden: int, rng: Optional[np.random.Generator] = None
) -> CovariateMlp:
    """
    Random map x = relu(z W1 + b1) W2 + b2.

    Units that are inactive for a row drop their direction of z, so distinct
    latents can share covariates and no inverse extractor exists.
    """
    if min(n_z, n_x, hidden) < 1:
        raise ArgumentError(f"need positive sizes, got n_z={n_z}, n_x={n_x}, hidden={hidden}")
    rng = rng if rng is not None else np.random.default_rng()
    return CovariateMlp(
        w1=rng.standard_normal((n_z, hidden)) * np.sqrt(2.0 / n_z),
        b1=MLP_BIAS_STD * rng.standard_normal(hidden),
        w2=rng.standard_normal((hidden, n_x)) / np.sqrt(hidden),
        b2=np.zeros(n_x),
    )


def apply_covariate_mlp(net: CovariateMlp, z: np.ndarray) -> np.ndarray:
    z = as_matrix(z, "z", columns=net.n_z)
    return np.maximum(z @ net.w1 + net.b1, 0.0) @ net.w2 + net.b2


def mix_covariate_mlps(a: CovariateMlp, b: CovariateMlp, weight: float) -> CovariateMlp:
    """Parameter-wise convex combination (1 - weight) a + weight b of two same-shaped maps"""
    if a.w1.shape != b.w1.shape or a.w2.shape != b.w2.shape:
        raise ArgumentError("covariate maps must share layer sizes to be mixed")
    return CovariateMlp(
        **{name: (1.0 - weight) * getattr(a, name) + weight * getattr(b, name) for name in ("w1", "b1", "w2", "b2")}
    )
