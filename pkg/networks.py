"""Small rectifier networks used as outcome heads, with hand-written backprop."""

from typing import NamedTuple

import numpy as np

from errors import ArgumentError, NumericalError
from models import Mlp
from validation import as_matrix, as_vector


class MlpGradients(NamedTuple):
    params: Mlp
    inputs: np.ndarray


def init_mlp(n_z: int, hidden: int, rng: np.random.Generator) -> Mlp:
    """Weights N(0, 1/fan_in), biases zero"""
    return Mlp(
        w1=rng.standard_normal((n_z, hidden)) / np.sqrt(n_z),
        b1=np.zeros(hidden),
        w2=rng.standard_normal(hidden) / np.sqrt(hidden),
        b2=0.0,
    )


def _check(net: Mlp, z: np.ndarray) -> np.ndarray:
    z = as_matrix(z, "z")
    if z.shape[1] != net.n_z:
        raise ArgumentError(f"network expects {net.n_z} input columns, got {z.shape[1]}")
    if not all(np.all(np.isfinite(p)) for p in (net.w1, net.b1, net.w2, net.b2)):
        raise NumericalError("network has non-finite parameters")
    return z


def mlp_forward(net: Mlp, z: np.ndarray) -> np.ndarray:
    """affine -> relu -> affine, one prediction per row"""
    z = _check(net, z)
    return np.maximum(z @ net.w1 + net.b1, 0.0) @ net.w2 + net.b2


def mlp_gradients(net: Mlp, z: np.ndarray, residual_weights: np.ndarray) -> MlpGradients:
    """
    Gradients of sum_i residual_weights[i] * output_i.

    Args:
        net: Network
        z: Inputs, one row per weight
        residual_weights: Per-row weights of the outputs

    Returns:
        MlpGradients with parameter gradients (same layout as the network) and input gradients
    """
    z = _check(net, z)
    r = as_vector(residual_weights, "residual_weights", z.shape[0])
    pre = z @ net.w1 + net.b1
    hidden = np.maximum(pre, 0.0)
    d_pre = np.outer(r, net.w2) * (pre > 0)
    params = Mlp(
        w1=z.T @ d_pre,
        b1=d_pre.sum(axis=0),
        w2=hidden.T @ r,
        b2=float(r.sum()),
    )
    return MlpGradients(params=params, inputs=d_pre @ net.w1.T)


def mlp_to_vector(net: Mlp) -> np.ndarray:
    return np.concatenate([np.ravel(net.w1), net.b1, net.w2, [net.b2]])


def mlp_from_vector(template: Mlp, vector: np.ndarray) -> Mlp:
    n_z, hidden = template.w1.shape
    split = n_z * hidden
    return Mlp(
        w1=np.reshape(vector[:split], (n_z, hidden)),
        b1=vector[split : split + hidden],
        w2=vector[split + hidden : split + 2 * hidden],
        b2=float(vector[split + 2 * hidden]),
    )
