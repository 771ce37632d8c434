"""Recovery of simulator latent extractors from paired counterfactual covariates."""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import orthogonal_procrustes
from scipy.special import logsumexp, softmax

from errors import ArgumentError, NumericalError, TrainingError
from models import (
    AlignmentReport,
    ContrastiveConfig,
    Encoder,
    EncoderBlock,
    EncoderKind,
    MapKind,
    SimulatorDataset,
)
from validation import as_matrix, check_treatment

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12
PARAM_NAMES = {EncoderKind.LINEAR: ("w1",), EncoderKind.MLP: ("w1", "b1", "w2", "b2")}

Params = Dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# Encoder evaluation
# ---------------------------------------------------------------------------


def _block_params(kind: EncoderKind, block: EncoderBlock) -> Params:
    return {name: np.asarray(getattr(block, name)) for name in PARAM_NAMES[kind]}


def _block_forward(kind: EncoderKind, params: Params, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if kind == EncoderKind.LINEAR:
        return x @ params["w1"], None
    hidden = np.tanh(x @ params["w1"] + params["b1"])
    return hidden @ params["w2"] + params["b2"], hidden


def _block_backward(
    kind: EncoderKind, params: Params, x: np.ndarray, hidden: Optional[np.ndarray], d_out: np.ndarray
) -> Params:
    if kind == EncoderKind.LINEAR:
        return {"w1": x.T @ d_out}
    d_pre = (d_out @ params["w2"].T) * (1.0 - hidden**2)
    return {
        "w1": x.T @ d_pre,
        "b1": d_pre.sum(axis=0),
        "w2": hidden.T @ d_out,
        "b2": d_out.sum(axis=0),
    }


def _normalize_rows(e: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise NumericalError("zero-norm embedding; cosine similarity is undefined")
    return e / norms, norms


def encode(enc: Encoder, x: np.ndarray, t: int) -> np.ndarray:
    """Apply treatment t's extractor to the rows of x"""
    t = check_treatment(t)
    x = as_matrix(x, "x", columns=enc.n_x)
    out, _ = _block_forward(enc.kind, _block_params(enc.kind, enc.blocks[t]), x)
    if enc.normalize:
        out, _ = _normalize_rows(out)
    return out


def encode_rows(enc: Encoder, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Apply each row's own treatment extractor"""
    x = as_matrix(x, "x", columns=enc.n_x)
    t = np.asarray(t)
    out = np.empty((x.shape[0], enc.n_z))
    for arm in (0, 1):
        mask = t == arm
        if np.any(mask):
            out[mask] = encode(enc, x[mask], arm)
    return out


def linear_encoder(matrices: Sequence[np.ndarray], normalize: bool = False) -> Encoder:
    """Wrap two n_x x n_z matrices as a linear encoder pair"""
    m0, m1 = (np.asarray(m, dtype=float) for m in matrices)
    return Encoder(
        kind=EncoderKind.LINEAR,
        n_x=m0.shape[0],
        n_z=m0.shape[1],
        normalize=normalize,
        blocks=(EncoderBlock(w1=m0), EncoderBlock(w1=m1)),
    )


def flatten_blocks(enc: Encoder) -> np.ndarray:
    """All encoder parameters as one vector (arm 0 first)"""
    return np.concatenate(
        [np.ravel(getattr(block, name)) for block in enc.blocks for name in PARAM_NAMES[enc.kind]]
    )


def unflatten_blocks(enc: Encoder, vector: np.ndarray) -> Encoder:
    """Copy of enc with its parameters replaced from a flat vector"""
    blocks, offset = [], 0
    for block in enc.blocks:
        values = {}
        for name in PARAM_NAMES[enc.kind]:
            shape = np.shape(getattr(block, name))
            size = int(np.prod(shape))
            values[name] = np.reshape(vector[offset : offset + size], shape)
            offset += size
        blocks.append(EncoderBlock(**values))
    return enc.model_copy(update={"blocks": tuple(blocks)})


# ---------------------------------------------------------------------------
# InfoNCE
# ---------------------------------------------------------------------------


def anchor_infonce(
    anchor: np.ndarray, positive: np.ndarray, negatives: np.ndarray, temperature: float = 1.0
) -> float:
    """Loss of a single anchor: -log softmax of its positive among positive and negatives"""
    u = anchor / max(np.linalg.norm(anchor), NORM_EPS)
    candidates = np.vstack([positive, np.atleast_2d(negatives)])
    norms = np.maximum(np.linalg.norm(candidates, axis=1), NORM_EPS)
    logits = (candidates @ u) / norms / temperature
    return float(logsumexp(logits) - logits[0])


def infonce_from_embeddings(
    e0: np.ndarray, e1: np.ndarray, temperature: float
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Symmetric InfoNCE over 2B anchors and its gradient with respect to the raw embeddings.

    Anchor (i, t) has positive (i, 1 - t); every other row of either arm is
    a negative. The normalizer includes the positive.
    """
    b = e0.shape[0]
    if b < 2:
        raise ArgumentError("InfoNCE needs a batch of at least 2 rows")
    raw = np.vstack([e0, e1])
    u, norms = _normalize_rows(raw)
    logits = (u @ u.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    anchors = np.arange(2 * b)
    positives = (anchors + b) % (2 * b)

    per_anchor = logsumexp(logits, axis=1) - logits[anchors, positives]
    loss = float(per_anchor.mean())

    grad_logits = softmax(logits, axis=1)
    grad_logits[anchors, positives] -= 1.0
    grad_logits /= 2 * b
    grad_u = (grad_logits + grad_logits.T) @ u / temperature
    grad_raw = (grad_u - u * np.sum(u * grad_u, axis=1, keepdims=True)) / norms
    return loss, grad_raw[:b], grad_raw[b:]


def _loss_and_grads(
    kind: EncoderKind, params: List[Params], x0: np.ndarray, x1: np.ndarray, temperature: float
) -> Tuple[float, List[Params]]:
    e0, h0 = _block_forward(kind, params[0], x0)
    e1, h1 = _block_forward(kind, params[1], x1)
    loss, d0, d1 = infonce_from_embeddings(e0, e1, temperature)
    grads = [
        _block_backward(kind, params[0], x0, h0, d0),
        _block_backward(kind, params[1], x1, h1, d1),
    ]
    return loss, grads


def infonce_loss(
    enc: Encoder, batch: SimulatorDataset, temperature: float
) -> Tuple[float, Tuple[EncoderBlock, EncoderBlock]]:
    """
    InfoNCE loss of an encoder pair on paired simulator rows.

    Args:
        enc: Encoder pair to evaluate
        batch: Paired rows; row i of x0 and x1 form a positive pair
        temperature: Softmax temperature

    Returns:
        Tuple of (loss, per-treatment parameter gradients)
    """
    if batch.m < 2:
        raise ArgumentError("InfoNCE needs a batch of at least 2 rows")
    if temperature <= 0:
        raise ArgumentError("temperature must be positive")
    params = [_block_params(enc.kind, block) for block in enc.blocks]
    loss, grads = _loss_and_grads(enc.kind, params, batch.x0, batch.x1, temperature)
    return loss, (EncoderBlock(**grads[0]), EncoderBlock(**grads[1]))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _whitener(x: np.ndarray, center: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and inverse square root of the second-moment matrix of x"""
    mean = x.mean(axis=0) if center else np.zeros(x.shape[1])
    centered = x - mean
    values, vectors = np.linalg.eigh(centered.T @ centered / x.shape[0])
    if values.min() <= NORM_EPS * max(values.max(), NORM_EPS):
        raise NumericalError("simulator covariates are rank deficient; cannot whiten")
    return mean, (vectors / np.sqrt(values)) @ vectors.T


def _initial_params(
    cfg: ContrastiveConfig, xw0: np.ndarray, xw1: np.ndarray, n_z: int, rng: np.random.Generator
) -> List[Params]:
    n_x = xw0.shape[1]
    if cfg.encoder_kind == EncoderKind.LINEAR:
        if cfg.warm_start:
            base = np.eye(n_x, n_z)
            cross, _ = orthogonal_procrustes(xw1, xw0)
            return [{"w1": base}, {"w1": cross @ base}]
        return [{"w1": np.eye(n_x, n_z) + 0.1 * rng.standard_normal((n_x, n_z))} for _ in range(2)]
    return [
        {
            "w1": rng.standard_normal((n_x, cfg.hidden)) / np.sqrt(n_x),
            "b1": np.zeros(cfg.hidden),
            "w2": rng.standard_normal((cfg.hidden, n_z)) / np.sqrt(cfg.hidden),
            "b2": np.zeros(n_z),
        }
        for _ in range(2)
    ]


def _fold_whitening(kind: EncoderKind, params: Params, mean: np.ndarray, whitener: np.ndarray) -> EncoderBlock:
    """Express a block trained on (x - mean) P as a block acting on raw x"""
    w1 = whitener @ params["w1"]
    if kind == EncoderKind.LINEAR:
        return EncoderBlock(w1=w1)
    return EncoderBlock(w1=w1, b1=params["b1"] - mean @ w1, w2=params["w2"], b2=params["b2"])


def train_contrastive(
    d_syn: SimulatorDataset,
    cfg: Optional[ContrastiveConfig] = None,
    rng: Optional[np.random.Generator] = None,
    n_z: Optional[int] = None,
) -> Encoder:
    """
    Fit per-treatment extractors by gradient descent on InfoNCE.

    Inputs of each arm are whitened by a fixed preconditioner; the step size
    halves whenever a step would raise the loss and grows slowly otherwise.
    The returned encoder acts on raw covariates.
    """
    cfg = cfg or ContrastiveConfig()
    rng = rng if rng is not None else np.random.default_rng()
    if d_syn.m < 8:
        raise ArgumentError(f"contrastive training needs at least 8 simulator rows, got {d_syn.m}")
    n_z = n_z or d_syn.n_x
    kind = cfg.encoder_kind
    center = kind == EncoderKind.MLP
    mean0, white0 = _whitener(d_syn.x0, center)
    mean1, white1 = _whitener(d_syn.x1, center)
    xw0 = (d_syn.x0 - mean0) @ white0
    xw1 = (d_syn.x1 - mean1) @ white1

    params = _initial_params(cfg, xw0, xw1, n_z, rng)
    step_size = cfg.step_size

    def objective(p: List[Params]) -> Tuple[float, List[Params]]:
        if cfg.batch is None or cfg.batch >= d_syn.m:
            return _loss_and_grads(kind, p, xw0, xw1, cfg.temperature)
        rows = batch_rows
        return _loss_and_grads(kind, p, xw0[rows], xw1[rows], cfg.temperature)

    batch_rows = np.arange(d_syn.m)
    initial_loss, _ = _loss_and_grads(kind, params, xw0, xw1, cfg.temperature)
    if cfg.batch is not None and cfg.batch < d_syn.m:
        batch_rows = rng.choice(d_syn.m, size=cfg.batch, replace=False)
    loss, grads = objective(params)

    for step in range(1, cfg.steps + 1):
        if not np.isfinite(loss):
            raise TrainingError("contrastive loss is not finite", step=step)
        candidate = [{k: p[k] - step_size * g[k] for k in p} for p, g in zip(params, grads)]
        new_loss, new_grads = objective(candidate)
        if not np.isfinite(new_loss):
            raise TrainingError("contrastive loss diverged", step=step)
        if new_loss > loss:
            step_size *= 0.5
            logger.debug("InfoNCE step %d rejected, step size now %.3g", step, step_size)
            if step_size < 1e-12:
                break
            continue
        change = abs(loss - new_loss) / max(abs(loss), NORM_EPS)
        params, loss, grads = candidate, new_loss, new_grads
        step_size *= 1.1
        if cfg.batch is not None and cfg.batch < d_syn.m:
            batch_rows = rng.choice(d_syn.m, size=cfg.batch, replace=False)
            loss, grads = objective(params)
        elif change < cfg.rel_tol:
            logger.debug("InfoNCE converged at step %d", step)
            break

    final_loss, _ = _loss_and_grads(kind, params, xw0, xw1, cfg.temperature)
    if not np.isfinite(final_loss):
        raise TrainingError("contrastive loss is not finite after training", step=cfg.steps)
    converged = final_loss < initial_loss
    if not converged:
        logger.warning("InfoNCE did not improve: initial %.6g, final %.6g", initial_loss, final_loss)
    logger.info("Contrastive training finished: loss %.6g -> %.6g", initial_loss, final_loss)

    if kind == EncoderKind.LINEAR:
        # cosine similarity ignores per-arm scale; match arm 1 to arm 0 on the pairs
        e0, _ = _block_forward(kind, params[0], xw0)
        e1, _ = _block_forward(kind, params[1], xw1)
        ratio = float(np.sum(e0 * e1) / max(np.sum(e1 * e1), NORM_EPS))
        if ratio > 0:
            params[1] = {"w1": params[1]["w1"] * ratio}

    blocks = (
        _fold_whitening(kind, params[0], mean0, white0),
        _fold_whitening(kind, params[1], mean1, white1),
    )
    return Encoder(
        kind=kind,
        n_x=d_syn.n_x,
        n_z=n_z,
        normalize=cfg.normalize,
        blocks=blocks,
        initial_loss=float(initial_loss),
        final_loss=float(final_loss),
        converged=bool(converged),
    )


# ---------------------------------------------------------------------------
# Closed form and alignment
# ---------------------------------------------------------------------------


def pairwise_linear_map(
    d_syn: SimulatorDataset, oracle: Optional[Sequence[np.ndarray]] = None
) -> Encoder:
    """
    Linear latent recovery from paired covariates.

    Solves x0 A = x1 by least squares and returns f_0 = I, f_1 = A^-1, which
    recovers latents up to the fixed map S_0. With oracle maps supplied
    (S_0^-1, S_1^-1) those are returned unchanged.
    """
    if oracle is not None:
        return linear_encoder(oracle)
    n_x = d_syn.n_x
    if d_syn.m < n_x:
        raise ArgumentError(f"need at least {n_x} simulator rows, got {d_syn.m}")
    if np.linalg.matrix_rank(d_syn.x0) < n_x:
        raise NumericalError("simulator covariates x0 are rank deficient")
    cross, _, _, _ = np.linalg.lstsq(d_syn.x0, d_syn.x1, rcond=None)
    if np.linalg.matrix_rank(cross) < n_x:
        raise NumericalError("cross-treatment map is singular")
    return linear_encoder((np.eye(n_x), np.linalg.inv(cross)))


def align_latents(z_hat: np.ndarray, z: np.ndarray, map_kind: MapKind = MapKind.ORTHOGONAL) -> AlignmentReport:
    """Best orthogonal or affine map from recovered to true latents"""
    z_hat = as_matrix(z_hat, "z_hat")
    z = as_matrix(z, "z", columns=z_hat.shape[1])
    if z.shape[0] != z_hat.shape[0]:
        raise ArgumentError("recovered and true latents must have the same rows")
    if z.shape[0] < z.shape[1]:
        raise ArgumentError(f"need at least n_z={z.shape[1]} probe rows, got {z.shape[0]}")

    if MapKind(map_kind) == MapKind.ORTHOGONAL:
        mapping, _ = orthogonal_procrustes(z_hat, z)
        aligned = z_hat @ mapping
    else:
        design = np.hstack([z_hat, np.ones((z_hat.shape[0], 1))])
        solution, _, _, _ = np.linalg.lstsq(design, z, rcond=None)
        mapping = solution[:-1]
        aligned = design @ solution

    residual = np.linalg.norm(aligned - z) / max(np.linalg.norm(z), NORM_EPS)
    norms = np.maximum(np.linalg.norm(aligned, axis=1) * np.linalg.norm(z, axis=1), NORM_EPS)
    cosine = float(np.clip(np.mean(np.sum(aligned * z, axis=1) / norms), -1.0, 1.0))
    return AlignmentReport(map_kind=map_kind, residual=float(residual), mean_cosine=cosine, estimated_h=mapping)


def alignment_residual(
    enc: Encoder,
    probe_x: Sequence[np.ndarray],
    probe_z: np.ndarray,
    map_kind: MapKind = MapKind.ORTHOGONAL,
) -> AlignmentReport:
    """
    Align encoder outputs over both treatments with the true latents.

    Args:
        enc: Encoder pair under test
        probe_x: Covariates rendered under t=0 and t=1 from the same latents
        probe_z: The latents, one row per probe row
        map_kind: Orthogonal (sphere latents) or affine

    Returns:
        AlignmentReport for the stacked outputs
    """
    probe_z = as_matrix(probe_z, "probe_z")
    if probe_z.shape[0] < probe_z.shape[1]:
        raise ArgumentError(f"need at least n_z={probe_z.shape[1]} probe rows, got {probe_z.shape[0]}")
    z_hat = np.vstack([encode(enc, probe_x[0], 0), encode(enc, probe_x[1], 1)])
    return align_latents(z_hat, np.vstack([probe_z, probe_z]), map_kind)
