"""Gradient-trained estimators with network outcome heads over linear extractors."""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from contrastive import encode, encode_rows
from errors import ArgumentError, TrainingError
from linear_estimators import extractor_fields
from metrics import paired_t_test_one_sided
from models import (
    CateModel,
    Encoder,
    EstimatorKind,
    FitReport,
    HeadKind,
    Mlp,
    ObservationalDataset,
    Optimizer,
    SimulatorDataset,
    TrainConfig,
)
from networks import init_mlp, mlp_forward, mlp_from_vector, mlp_gradients, mlp_to_vector

logger = logging.getLogger(__name__)

LOW_LAMBDA_F = 1e-4
DEFAULT_LAMBDA_F = 1.0
ZERO_DIFF_TOL = 1e-12

NN_KINDS = (
    EstimatorKind.REAL_ONLY,
    EstimatorKind.MU_ONLY,
    EstimatorKind.SIM_ONLY,
    EstimatorKind.SIMPONET,
    EstimatorKind.SIMPONET_NO_F,
    EstimatorKind.SIMPONET_NO_TAU,
    EstimatorKind.MU_ONLY_SIMPONET_Z,
)


def select_lambda_f(
    real_only_val_sq_errors: np.ndarray,
    mu_only_val_sq_errors: np.ndarray,
    alpha: float = 0.05,
    zero_tol: float = ZERO_DIFF_TOL,
) -> float:
    """
    Lower the extractor regularizer when RealOnly's validation factual errors
    are significantly below MuOnly's (one-sided paired t-test).

    Differences smaller than zero_tol count as exact ties.
    """
    real = np.asarray(real_only_val_sq_errors, dtype=float)
    mu = np.asarray(mu_only_val_sq_errors, dtype=float)
    if real.shape != mu.shape:
        raise ArgumentError(f"validation error vectors differ in length: {real.shape} vs {mu.shape}")
    diff = mu - real
    diff[np.abs(diff) <= zero_tol] = 0.0
    p_value = paired_t_test_one_sided(real, real + diff)
    chosen = LOW_LAMBDA_F if p_value < alpha else DEFAULT_LAMBDA_F
    logger.info("lambda_f selection: p=%.4g -> lambda_f=%g", p_value, chosen)
    return chosen


def stratified_split(
    t: np.ndarray, fraction: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-arm random split; returns sorted (train rows, validation rows)"""
    train, val = [], []
    for arm in (0, 1):
        rows = np.flatnonzero(np.asarray(t) == arm)
        if rows.shape[0] < 2:
            raise ArgumentError(f"treatment arm {arm} has {rows.shape[0]} rows; cannot split")
        rows = rng.permutation(rows)
        n_val = min(max(1, int(round(fraction * rows.shape[0]))), rows.shape[0] - 1)
        val.append(rows[:n_val])
        train.append(rows[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def random_split(m: int, fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if m < 2:
        raise ArgumentError("need at least 2 rows to split")
    rows = rng.permutation(m)
    n_val = min(max(1, int(round(fraction * m))), m - 1)
    return np.sort(rows[n_val:]), np.sort(rows[:n_val])


class JointLoss:
    """
    Training objective over a flat parameter vector.

    Layout: [F_0, F_1] when extractors are trainable, then both heads.
    Terms are averaged over their rows:
        factual   mean (mu_t(x F_t) - y)^2 over training rows
        extractor lambda_f * mean |x F_t - f_tilde_t(x)|^2
        effect    lambda_tau * mean over simulator rows and both t of
                  (tau^S - (mu_1 - mu_0)(f_tilde_t(x^S(t))))^2
        simulated mean over simulator rows and both t of (mu_t(f_tilde_t(x^S(t))) - y^S(t))^2
    """

    def __init__(
        self,
        x: np.ndarray,
        t: np.ndarray,
        y: np.ndarray,
        n_z: int,
        hidden: int,
        trainable_extractor: bool,
        fixed_latents: Optional[np.ndarray] = None,
        extractor_targets: Optional[np.ndarray] = None,
        sim_latents: Optional[Tuple[np.ndarray, np.ndarray]] = None,
        sim_tau: Optional[np.ndarray] = None,
        sim_outcomes: Optional[Tuple[np.ndarray, np.ndarray]] = None,
        factual_weight: float = 1.0,
        lambda_f: float = 0.0,
        lambda_tau: float = 0.0,
        simulated_weight: float = 0.0,
    ):
        self.x = x
        self.t = np.asarray(t)
        self.y = y
        self.n_x = x.shape[1] if x is not None else 0
        self.n_z = n_z
        self.hidden = hidden
        self.trainable_extractor = trainable_extractor
        self.fixed_latents = fixed_latents
        self.extractor_targets = extractor_targets
        self.sim_latents = sim_latents
        self.sim_tau = sim_tau
        self.sim_outcomes = sim_outcomes
        self.factual_weight = factual_weight
        self.lambda_f = lambda_f
        self.lambda_tau = lambda_tau
        self.simulated_weight = simulated_weight
        self.masks = [self.t == arm for arm in (0, 1)] if x is not None else None
        self._template = Mlp(w1=np.zeros((n_z, hidden)), b1=np.zeros(hidden), w2=np.zeros(hidden), b2=0.0)

    @property
    def extractor_size(self) -> int:
        return 2 * self.n_x * self.n_z if self.trainable_extractor else 0

    @property
    def net_size(self) -> int:
        return self.n_z * self.hidden + 2 * self.hidden + 1

    def pack(self, extractors: Optional[List[np.ndarray]], nets: List[Mlp]) -> np.ndarray:
        parts = [np.ravel(f) for f in extractors] if self.trainable_extractor else []
        parts += [mlp_to_vector(net) for net in nets]
        return np.concatenate(parts)

    def unpack(self, vector: np.ndarray) -> Tuple[Optional[List[np.ndarray]], List[Mlp]]:
        extractors = None
        offset = 0
        if self.trainable_extractor:
            size = self.n_x * self.n_z
            extractors = [
                np.reshape(vector[k * size : (k + 1) * size], (self.n_x, self.n_z)) for k in range(2)
            ]
            offset = 2 * size
        nets = [
            mlp_from_vector(self._template, vector[offset + k * self.net_size : offset + (k + 1) * self.net_size])
            for k in range(2)
        ]
        return extractors, nets

    def _latents(self, extractors: Optional[List[np.ndarray]], arm: int) -> np.ndarray:
        rows = self.x[self.masks[arm]]
        if self.trainable_extractor:
            return rows @ extractors[arm]
        return self.fixed_latents[self.masks[arm]]

    def value_and_grad(self, vector: np.ndarray) -> Tuple[float, np.ndarray, Dict[str, float]]:
        """Total loss, its gradient and the individual terms"""
        extractors, nets = self.unpack(vector)
        d_extractors = [np.zeros((self.n_x, self.n_z)) for _ in range(2)] if self.trainable_extractor else None
        d_nets = [np.zeros(self.net_size) for _ in range(2)]
        terms = {"factual": 0.0, "extractor": 0.0, "effect": 0.0, "simulated": 0.0}

        if self.x is not None and (self.factual_weight > 0 or self.lambda_f > 0):
            n = self.x.shape[0]
            for arm in (0, 1):
                latents = self._latents(extractors, arm)
                residual = mlp_forward(nets[arm], latents) - self.y[self.masks[arm]]
                terms["factual"] += float(residual @ residual) / n
                if self.factual_weight > 0:
                    grads = mlp_gradients(nets[arm], latents, self.factual_weight * 2.0 * residual / n)
                    d_nets[arm] += mlp_to_vector(grads.params)
                    if self.trainable_extractor:
                        d_extractors[arm] += self.x[self.masks[arm]].T @ grads.inputs
                if self.trainable_extractor and self.lambda_f > 0:
                    gap = latents - self.extractor_targets[self.masks[arm]]
                    terms["extractor"] += self.lambda_f * float(np.sum(gap**2)) / n
                    d_extractors[arm] += 2.0 * self.lambda_f / n * (self.x[self.masks[arm]].T @ gap)

        if self.sim_latents is not None and self.lambda_tau > 0:
            m = self.sim_tau.shape[0]
            for latents in self.sim_latents:
                delta = self.sim_tau - (mlp_forward(nets[1], latents) - mlp_forward(nets[0], latents))
                terms["effect"] += self.lambda_tau * float(delta @ delta) / (2 * m)
                d_nets[1] += mlp_to_vector(mlp_gradients(nets[1], latents, -self.lambda_tau * delta / m).params)
                d_nets[0] += mlp_to_vector(mlp_gradients(nets[0], latents, self.lambda_tau * delta / m).params)

        if self.sim_outcomes is not None and self.simulated_weight > 0:
            m = self.sim_outcomes[0].shape[0]
            for arm in (0, 1):
                latents = self.sim_latents[arm]
                residual = mlp_forward(nets[arm], latents) - self.sim_outcomes[arm]
                terms["simulated"] += self.simulated_weight * float(residual @ residual) / (2 * m)
                d_nets[arm] += mlp_to_vector(
                    mlp_gradients(nets[arm], latents, self.simulated_weight * residual / m).params
                )

        total = self.factual_weight * terms["factual"] + terms["extractor"] + terms["effect"] + terms["simulated"]
        parts = [np.ravel(d) for d in d_extractors] if self.trainable_extractor else []
        grad = np.concatenate(parts + d_nets)
        return float(total), grad, terms


class Adam:
    """Adaptive-moment update on a flat vector"""

    def __init__(self, step_size: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.k = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.k += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.k)
        v_hat = self.v / (1 - self.beta2**self.k)
        return params - self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)


class GradientDescent:
    def __init__(self, step_size: float):
        self.step_size = step_size

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return params - self.step_size * grad


def _optimizer(cfg: TrainConfig):
    if cfg.optimizer == Optimizer.ADAM:
        return Adam(cfg.step_size)
    return GradientDescent(cfg.step_size)


def _run(
    loss: JointLoss,
    validation: JointLoss,
    start: np.ndarray,
    cfg: TrainConfig,
) -> Tuple[np.ndarray, FitReport]:
    """Full-batch descent with validation checkpoints every eval_every steps"""
    optimizer = _optimizer(cfg)
    params = start
    best_params, best_val, best_step = start.copy(), np.inf, 0
    objective_trace, validation_trace, eval_steps = [], [], []
    stale = 0
    stopped_early = False

    for step in range(cfg.steps + 1):
        value, grad, _ = loss.value_and_grad(params)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise TrainingError("training loss is not finite", step=step)

        if step % cfg.eval_every == 0 or step == cfg.steps:
            val_value, _, _ = validation.value_and_grad(params)
            objective_trace.append(value)
            validation_trace.append(val_value)
            eval_steps.append(step)
            logger.debug("step %d: train %.6g, validation %.6g", step, value, val_value)
            if val_value < best_val:
                best_params, best_val, best_step = params.copy(), val_value, step
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    logger.info("Early stopping at step %d (best step %d)", step, best_step)
                    stopped_early = True
                    break

        if step == cfg.steps:
            break
        params = optimizer.step(params, grad)

    report = FitReport(
        objective_trace=objective_trace,
        validation_trace=validation_trace,
        eval_steps=eval_steps,
        sweeps=eval_steps[-1],
        converged=stopped_early,
        best_step=best_step,
        lambda_f=loss.lambda_f,
        lambda_tau=loss.lambda_tau,
    )
    return best_params, report


def _sim_latents(f_tilde: Encoder, d_syn: SimulatorDataset) -> Tuple[np.ndarray, np.ndarray]:
    return encode(f_tilde, d_syn.x0, 0), encode(f_tilde, d_syn.x1, 1)


def _initial_extractors(d_trn: ObservationalDataset, targets: np.ndarray) -> List[np.ndarray]:
    """Least-squares linear maps x -> f_tilde_t(x), equal to f_tilde_t when it is linear"""
    out = []
    for arm in (0, 1):
        mask = d_trn.t == arm
        solution, _, _, _ = np.linalg.lstsq(d_trn.x[mask], targets[mask], rcond=None)
        out.append(solution)
    return out


def train_cate_nn(
    kind: EstimatorKind,
    d_trn: Optional[ObservationalDataset],
    d_syn: Optional[SimulatorDataset],
    f_tilde: Optional[Encoder],
    cfg: Optional[TrainConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[CateModel, FitReport]:
    """
    Train one estimator family with network heads.

    real_only: trainable linear extractors, factual loss only
    mu_only: extractors fixed to f_tilde, factual loss only
    sim_only: extractors fixed to f_tilde, heads fit simulator outcomes
    simponet and its ablations: the joint loss with trainable extractors
    """
    cfg = cfg or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng()
    kind = EstimatorKind(kind)
    if kind not in NN_KINDS:
        raise ArgumentError(f"{kind.value} cannot be trained with network heads")
    if kind != EstimatorKind.REAL_ONLY and f_tilde is None:
        raise ArgumentError(f"{kind.value} needs simulator extractors")
    n_z = f_tilde.n_z if f_tilde is not None else d_trn.n_x

    if kind == EstimatorKind.SIM_ONLY:
        if d_syn is None:
            raise ArgumentError("sim_only needs simulator data")
        train_rows, val_rows = random_split(d_syn.m, cfg.val_fraction, rng)
        nets = [init_mlp(n_z, cfg.hidden, rng) for _ in range(2)]

        def simulated(rows: np.ndarray) -> JointLoss:
            part = d_syn.subset(rows)
            return JointLoss(
                None, np.zeros(0), None, n_z, cfg.hidden, False,
                sim_latents=_sim_latents(f_tilde, part),
                sim_outcomes=(part.y0, part.y1),
                factual_weight=0.0,
                simulated_weight=1.0,
            )

        loss, validation = simulated(train_rows), simulated(val_rows)
        best, report = _run(loss, validation, loss.pack(None, nets), cfg)
        _, nets = loss.unpack(best)
        model = CateModel(
            kind=kind,
            head_kind=HeadKind.MLP,
            nets=(nets[0], nets[1]),
            metadata={"best_step": report.best_step},
            **extractor_fields(f_tilde),
        )
        return model, report

    if d_trn is None:
        raise ArgumentError(f"{kind.value} needs observational data")
    train_rows, val_rows = stratified_split(d_trn.t, cfg.val_fraction, rng)
    nets = [init_mlp(n_z, cfg.hidden, rng) for _ in range(2)]
    simponet = kind in (EstimatorKind.SIMPONET, EstimatorKind.SIMPONET_NO_F, EstimatorKind.SIMPONET_NO_TAU)
    lambda_f = cfg.lambda_f if kind in (EstimatorKind.SIMPONET, EstimatorKind.SIMPONET_NO_TAU) else 0.0
    lambda_tau = cfg.lambda_tau if kind in (EstimatorKind.SIMPONET, EstimatorKind.SIMPONET_NO_F) else 0.0
    trainable = kind == EstimatorKind.REAL_ONLY or simponet
    targets = encode_rows(f_tilde, d_trn.x, d_trn.t) if f_tilde is not None else None
    sim_latents = _sim_latents(f_tilde, d_syn) if simponet and d_syn is not None else None

    def joint(rows: np.ndarray, with_regularizers: bool) -> JointLoss:
        return JointLoss(
            d_trn.x[rows],
            d_trn.t[rows],
            d_trn.y[rows],
            n_z,
            cfg.hidden,
            trainable,
            fixed_latents=None if trainable else targets[rows],
            extractor_targets=targets[rows] if targets is not None else None,
            sim_latents=sim_latents if with_regularizers else None,
            sim_tau=d_syn.tau_s if with_regularizers and sim_latents is not None else None,
            lambda_f=lambda_f if with_regularizers else 0.0,
            lambda_tau=lambda_tau if with_regularizers else 0.0,
        )

    loss = joint(train_rows, True)
    validation = joint(val_rows, False)
    if kind == EstimatorKind.REAL_ONLY:
        extractors = [np.eye(d_trn.n_x, n_z) for _ in range(2)]
    elif trainable:
        extractors = _initial_extractors(d_trn, targets)
    else:
        extractors = None
    best, report = _run(loss, validation, loss.pack(extractors, nets), cfg)
    extractors, nets = loss.unpack(best)

    fields = {"extractors": (extractors[0], extractors[1])} if trainable else extractor_fields(f_tilde)
    model = CateModel(
        kind=kind,
        head_kind=HeadKind.MLP,
        nets=(nets[0], nets[1]),
        metadata={"best_step": report.best_step, "lambda_f": lambda_f, "lambda_tau": lambda_tau},
        **fields,
    )
    return model, report


def train_simponet_nn(
    d_trn: ObservationalDataset,
    d_syn: SimulatorDataset,
    f_tilde: Encoder,
    cfg: Optional[TrainConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[CateModel, FitReport]:
    """
    Joint training of linear extractors and network heads.

    Args:
        d_trn: Observational data, split 70/30 stratified on treatment
        d_syn: Simulator pairs supplying the effect regularizer
        f_tilde: Recovered simulator extractors
        cfg: Loss weights, schedule and early stopping
        rng: Seeded generator for the split and initialization

    Returns:
        Tuple of (model at the best validation checkpoint, FitReport)
    """
    return train_cate_nn(EstimatorKind.SIMPONET, d_trn, d_syn, f_tilde, cfg, rng)
