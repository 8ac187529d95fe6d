"""Routing-weighted product of expert neurons.

The energy between layers is ``E(x, h) = -sum_ij c_ij h_j^T W_ij x_i`` with no
bias terms. Given frozen coefficients ``c`` it is an RBM whose weights
between the neuron groups ``x_i`` and ``h_j`` are ``c_ij W_ij``, so both
conditionals factorize over neurons and CD-1 applies directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .kernels import SeededRng, SgdMomentumState, as_tensor, check_finite, gaussian_sample, sgd_step, sigmoid
from .routing import CapsuleLayerSpec, RoutingState, predictions, reverse_predictions, route_forward, route_reverse

log = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass
class EnergyModel:
    W: np.ndarray  # [I, J, N, M]

    def __post_init__(self):
        self.W = as_tensor(self.W)
        if self.W.ndim != 4:
            raise ValueError("W must have shape [I, J, N, M]")
        check_finite(self.W, "prediction maps")

    @property
    def lower(self) -> CapsuleLayerSpec:
        return CapsuleLayerSpec(self.W.shape[0], self.W.shape[3])

    @property
    def upper(self) -> CapsuleLayerSpec:
        return CapsuleLayerSpec(self.W.shape[1], self.W.shape[2])

    @classmethod
    def initialize(cls, lower: CapsuleLayerSpec, upper: CapsuleLayerSpec,
                   rng: SeededRng, scale: float = 0.01) -> "EnergyModel":
        shape = (lower.count, upper.count, upper.dim, lower.dim)
        return cls(scale * gaussian_sample(rng, shape))


@dataclass
class CdBatchResult:
    grad: np.ndarray  # [I, J, N, M], ascent direction of the log-likelihood
    data_stats: np.ndarray  # [I, J]
    model_stats: np.ndarray  # [I, J]
    reconstruction_xent: float
    coefficients: np.ndarray  # [B, I, J]


def _coefficients(c) -> np.ndarray:
    if isinstance(c, RoutingState):
        c = c.coefficients
    return as_tensor(c)


def pair_energy(x_i, x_j, W_ij) -> float:
    x_i, x_j, W_ij = as_tensor(x_i), as_tensor(x_j), as_tensor(W_ij)
    if W_ij.shape != (x_j.shape[-1], x_i.shape[-1]):
        raise ValueError(f"W_ij {W_ij.shape} incompatible with capsules {x_i.shape}, {x_j.shape}")
    return float(-(x_j @ W_ij @ x_i))


def total_energy(model: EnergyModel, x, h, c) -> float:
    """``sum_ij c_ij * pair_energy(x_i, h_j, W_ij)`` for a single configuration."""
    x, h, c = as_tensor(x), as_tensor(h), _coefficients(c)
    I, J, N, M = model.W.shape
    if x.shape != (I, M) or h.shape != (J, N) or c.shape != (I, J):
        raise ValueError("shape mismatch between model, activations and coefficients")
    return float(-np.einsum("ij,jn,ijnm,im->", c, h, model.W, x))


def energy_weight_grad(model: EnergyModel, x, h, c) -> np.ndarray:
    """``dE/dW_ij = -c_ij h_j x_i^T`` for one configuration -> ``[I, J, N, M]``."""
    x, h, c = as_tensor(x), as_tensor(h), _coefficients(c)
    I, J, N, M = model.W.shape
    if x.shape != (I, M) or h.shape != (J, N) or c.shape != (I, J):
        raise ValueError("shape mismatch between model, activations and coefficients")
    return -c[:, :, None, None] * h[None, :, :, None] * x[:, None, None, :]


def hidden_preactivation(model: EnergyModel, x, c) -> np.ndarray:
    """``sum_i c_ij W_ij x_i`` -> ``[..., J, N]``."""
    x, c = as_tensor(x), _coefficients(c)
    I, J, N, M = model.W.shape
    if x.shape[-2:] != (I, M) or c.shape[-2:] != (I, J):
        raise ValueError("shape mismatch between model, activations and coefficients")
    # per-pair predictions first so c enters as a plain weight on each group
    return (c[..., None] * predictions(model.W, x)).sum(axis=-3)


def visible_preactivation(model: EnergyModel, h, c) -> np.ndarray:
    """``sum_j c_ij W_ij^T h_j`` -> ``[..., I, M]``."""
    h, c = as_tensor(h), _coefficients(c)
    I, J, N, M = model.W.shape
    if h.shape[-2:] != (J, N) or c.shape[-2:] != (I, J):
        raise ValueError("shape mismatch between model, activations and coefficients")
    return (c[..., None] * reverse_predictions(model.W, h)).sum(axis=-2)


def p_hidden_given_visible(model: EnergyModel, x, c) -> np.ndarray:
    return sigmoid(hidden_preactivation(model, x, c))


def p_visible_given_hidden(model: EnergyModel, h, c) -> np.ndarray:
    return sigmoid(visible_preactivation(model, h, c))


def sample_bernoulli(probs, rng: SeededRng) -> np.ndarray:
    probs = as_tensor(probs)
    if np.any(~((probs >= 0.0) & (probs <= 1.0))):
        raise ValueError("Bernoulli probabilities must lie in [0, 1]")
    return (rng.uniform(probs.shape) < probs).astype(np.float64)


def binary_cross_entropy(target, probs) -> float:
    """Mean per-neuron cross-entropy of ``target`` under ``probs``."""
    p = np.clip(probs, _EPS, 1.0 - _EPS)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def _weighted_outer_sum(c, h, x) -> np.ndarray:
    # batch sum of c_ij * h_j (outer) x_i -> [I, J, N, M]
    B, I, J = c.shape
    xs = x.transpose(1, 0, 2)  # [I, B, M]
    out = np.empty((I, J, h.shape[-1], x.shape[-1]))
    for j in range(J):
        hw = (c[:, :, j, None] * h[:, None, j, :]).transpose(1, 2, 0)  # [I, N, B]
        out[:, j] = np.matmul(hw, xs)
    return out


def cd1_step(model: EnergyModel, x_data, routing_iterations: int, rng: SeededRng,
             coefficients=None) -> CdBatchResult:
    """One contrastive-divergence estimate of the log-likelihood gradient.

    ``x_data`` is ``[B, I, M]`` (a single ``[I, M]`` sample is promoted).
    Routing on the data fixes ``c`` for the whole step unless ``coefficients``
    is supplied. The positive phase samples binary hidden states; the
    reconstruction and the negative phase use probabilities.
    """
    x = as_tensor(x_data)
    if x.ndim == 2:
        x = x[None]
    check_finite(x, "visible data")
    if np.any((x < 0) | (x > 1)):
        raise ValueError("visible data must lie in [0, 1]")
    B = x.shape[0]
    if coefficients is None:
        c = route_forward(model.W, x, routing_iterations)[0].coefficients
    else:
        c = np.broadcast_to(_coefficients(coefficients), (B,) + model.W.shape[:2])

    h_probs = p_hidden_given_visible(model, x, c)
    h_sample = sample_bernoulli(h_probs, rng)
    x_recon = p_visible_given_hidden(model, h_sample, c)
    h_recon = p_hidden_given_visible(model, x_recon, c)

    pos = _weighted_outer_sum(c, h_probs, x)
    neg = _weighted_outer_sum(c, h_recon, x_recon)
    grad = check_finite((pos - neg) / B, "CD gradient")
    return CdBatchResult(
        grad=grad,
        data_stats=np.linalg.norm(pos / B, axis=(2, 3)),
        model_stats=np.linalg.norm(neg / B, axis=(2, 3)),
        reconstruction_xent=binary_cross_entropy(x, x_recon),
        coefficients=np.asarray(c),
    )


def train_capsule_layer(model: EnergyModel, batches: Callable[[int], Iterable[np.ndarray]],
                        epochs: int, optimizer: SgdMomentumState, rng: SeededRng,
                        routing_iterations: int = 3, start_epoch: int = 0,
                        start_step: int = 0, on_record=None, on_epoch_end=None):
    """CD-1 training loop.

    ``batches(epoch)`` yields ``[B, I, M]`` arrays for that epoch. Each step
    ascends the CD estimate (the optimizer descends, so the gradient is
    negated). Returns ``(model, records)`` where ``records`` are per-step
    dicts; ``on_record`` sees each one as it is produced and
    ``on_epoch_end(epoch, model, step)`` runs after every epoch.
    """
    records = []
    params = {"W": model.W}
    step = start_step
    for epoch in range(start_epoch, epochs):
        for x in batches(epoch):
            res = cd1_step(EnergyModel(params["W"]), x, routing_iterations, rng)
            lr = optimizer.learning_rate
            params = sgd_step(params, {"W": -res.grad}, optimizer)
            rec = {
                "epoch": epoch + 1,
                "step": step,
                "reconstruction_xent": res.reconstruction_xent,
                "grad_norm": float(np.linalg.norm(res.grad)),
                "learning_rate": lr,
            }
            step += 1
            records.append(rec)
            if on_record is not None:
                on_record(rec)
        model = EnergyModel(params["W"])
        epoch_recs = [r for r in records if r["epoch"] == epoch + 1]
        if epoch_recs:
            log.info("capsule epoch %d: xent %.6f", epoch + 1,
                     np.mean([r["reconstruction_xent"] for r in epoch_recs]))
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, model, step)
    return EnergyModel(params["W"]), records


def hidden_code(rng: SeededRng, upper: CapsuleLayerSpec, capsule_index: int | None) -> np.ndarray:
    """All-zero upper layer except one capsule set to ``sigmoid(N(0, I))``."""
    h = np.zeros((upper.count, upper.dim))
    if capsule_index is None:
        return h
    if not 0 <= capsule_index < upper.count:
        raise IndexError(f"capsule index {capsule_index} outside [0, {upper.count})")
    h[capsule_index] = sigmoid(gaussian_sample(rng, upper.dim))
    return h


def generate_visible(model: EnergyModel, h, routing_iterations: int = 3) -> np.ndarray:
    """Visible-layer probabilities for an upper-layer code via reverse routing."""
    _, z = route_reverse(model.W, h, routing_iterations)
    return sigmoid(z)


def generate(model: EnergyModel, capsule_index: int | None, rng: SeededRng, decoder,
             routing_iterations: int = 3) -> np.ndarray:
    """Sample one image from a single upper-layer capsule.

    ``decoder`` maps ``[I, M]`` visible probabilities to an image; pass
    ``capsule_index=None`` to decode the all-zero code.
    """
    h = hidden_code(rng, model.upper, capsule_index)
    return decoder(generate_visible(model, h, routing_iterations))
