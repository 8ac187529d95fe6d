"""Routing by agreement between two capsule layers.

Prediction maps are stored as one array ``W`` of shape ``[I, J, N, M]``:
``W[i, j]`` maps an M-dim capsule of the lower layer to an N-dim prediction
for capsule ``j`` of the upper layer. Coefficients are normalized over the
lower layer, ``sum_i c[i, j] == 1`` for each ``j``, in both directions.

Every function accepts an optional leading batch axis on the activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .kernels import as_tensor, check_finite


class CapsuleLayerSpec(NamedTuple):
    count: int
    dim: int

    @property
    def width(self) -> int:
        return self.count * self.dim


@dataclass
class RoutingState:
    logits: np.ndarray  # [..., I, J]
    coefficients: np.ndarray  # [..., I, J]
    iterations_run: int
    history: list = field(default_factory=list, repr=False)


def _check_maps(W: np.ndarray) -> None:
    if W.ndim != 4:
        raise ValueError("prediction maps must have shape [I, J, N, M]")


def _ordered_sum(terms: np.ndarray, axis: int) -> np.ndarray:
    # Summing in sorted order makes the result depend only on the multiset of
    # terms, so reordering capsules cannot change a single bit.
    return np.sort(terms, axis=axis).sum(axis=axis)


def predictions(W, x) -> np.ndarray:
    """Per-pair predictions ``z[i, j] = W[i, j] @ x[i]`` -> ``[..., I, J, N]``."""
    W = as_tensor(W)
    x = as_tensor(x)
    _check_maps(W)
    I, J, N, M = W.shape
    if x.shape[-2:] != (I, M):
        raise ValueError(f"activations {x.shape[-2:]} do not match maps (I={I}, M={M})")
    lead = x.shape[:-2]
    xs = x.reshape(-1, I, M).transpose(1, 0, 2)  # [I, B, M]
    z = np.matmul(xs, W.reshape(I, J * N, M).transpose(0, 2, 1))  # [I, B, J*N]
    return z.transpose(1, 0, 2).reshape(lead + (I, J, N))


def reverse_predictions(W, h) -> np.ndarray:
    """Top-down predictions ``z[i, j] = W[i, j].T @ h[j]`` -> ``[..., I, J, M]``.

    Uses the transpose of each ``W[i, j]``; ``W[j, i]`` plays no role.
    """
    W = as_tensor(W)
    h = as_tensor(h)
    _check_maps(W)
    I, J, N, M = W.shape
    if h.shape[-2:] != (J, N):
        raise ValueError(f"activations {h.shape[-2:]} do not match maps (J={J}, N={N})")
    lead = h.shape[:-2]
    hs = h.reshape(-1, J, N).transpose(1, 0, 2)  # [J, B, N]
    # one product per (i, j) pair, so every lower capsule is computed alike
    z = np.matmul(hs[None], W)  # [I, J, B, M]
    return z.transpose(2, 0, 1, 3).reshape(lead + (I, J, M))


def squash(z, axis: int = -1) -> np.ndarray:
    """Rescale vectors to length ``|z|^2 / (1 + |z|^2)`` keeping direction."""
    z = as_tensor(z)
    sq = np.sum(z * z, axis=axis, keepdims=True)
    norm = np.sqrt(sq)
    scale = np.divide(norm, 1.0 + sq, out=np.zeros_like(norm), where=norm > 0)
    return z * scale


def cosine_agreement(a, b, axis: int = -1) -> np.ndarray:
    """Cosine of the angle between vectors; 0 when either is the zero vector."""
    a = as_tensor(a)
    b = as_tensor(b)
    dot = np.sum(a * b, axis=axis)
    denom = np.sqrt(np.sum(a * a, axis=axis)) * np.sqrt(np.sum(b * b, axis=axis))
    out = np.divide(dot, denom, out=np.zeros(np.broadcast(dot, denom).shape), where=denom > 0)
    return np.clip(out, -1.0, 1.0)


def normalize_logits(b) -> np.ndarray:
    """Softmax over the lower-layer axis (-2), so each column sums to one."""
    b = as_tensor(b)
    e = np.exp(b - b.max(axis=-2, keepdims=True))
    return e / _ordered_sum(e, axis=-2)[..., None, :]


def _route(preds: np.ndarray, collect_axis: int, iterations: int, record: bool):
    """Shared loop; ``preds`` is ``[..., I, J, D]`` and the collective vector
    sums over ``collect_axis`` (-3 for i, -2 for j)."""
    if iterations < 1:
        raise ValueError("routing needs at least one iteration")
    check_finite(preds, "predictions")
    b = np.zeros(preds.shape[:-1])
    history = []
    for t in range(iterations):
        c = normalize_logits(b)
        if record:
            history.append(c.copy())
        z = _ordered_sum(c[..., None] * preds, axis=collect_axis)
        if t == iterations - 1:
            break
        s = np.expand_dims(squash(z), collect_axis)
        b = b + cosine_agreement(preds, s)
    state = RoutingState(logits=b, coefficients=c, iterations_run=iterations, history=history)
    return state, z


def route_forward(W, x, iterations: int = 3, record: bool = False):
    """Bottom-up routing by agreement.

    Starts from zero logits, and each round normalizes them, forms the
    weighted prediction ``z_j = sum_i c_ij W_ij x_i`` and adds the cosine
    agreement between every ``z_{j|i}`` and ``squash(z_j)`` to the logits. The
    update after the final round would not affect the outputs and is skipped,
    so ``coefficients == normalize_logits(logits)``.

    Returns ``(state, z, activation)`` where ``z`` is ``[..., J, N]`` and
    ``activation = |squash(z_j)|`` is the probability capsule ``j`` is on.
    """
    preds = predictions(W, x)
    state, z = _route(preds, -3, iterations, record)
    act = np.linalg.norm(squash(z), axis=-1)
    return state, z, act


def route_reverse(W, h, iterations: int = 3, record: bool = False):
    """Top-down routing used for generation.

    Mirrors :func:`route_forward` with predictions ``W_ij.T @ h_j`` and the
    collective ``z_i = sum_j c_ij z_{i|j}``; coefficients keep the
    ``sum_i c_ij == 1`` normalization. Returns ``(state, z)`` with ``z`` of
    shape ``[..., I, M]``.
    """
    preds = reverse_predictions(W, h)
    return _route(preds, -2, iterations, record)


@dataclass
class DiagramModel:
    """Shades in [0, 1]; 0 is the lightest, 1 the darkest."""

    lower: np.ndarray
    upper: np.ndarray
    edges: list  # (i, j, shade)

    @property
    def node_count(self) -> int:
        return len(self.lower) + len(self.upper)


def routing_diagram(state: RoutingState, activations_lower, activations_upper,
                    threshold: float = 0.01) -> DiagramModel:
    """Diagram of one routing result.

    Edge shade is ``c_ij / max(c)``; edges with ``c_ij < threshold`` are dropped.
    """
    c = np.asarray(state.coefficients)
    lower = np.clip(np.asarray(activations_lower, dtype=float), 0.0, 1.0)
    upper = np.clip(np.asarray(activations_upper, dtype=float), 0.0, 1.0)
    if c.shape != (len(lower), len(upper)):
        raise ValueError(f"coefficients {c.shape} do not match {len(lower)}x{len(upper)} capsules")
    top = c.max() if c.size else 0.0
    edges = [(int(i), int(j), float(c[i, j] / top))
             for i, j in zip(*np.nonzero((c >= threshold) & (c > 0)))]
    return DiagramModel(lower=lower, upper=upper, edges=edges)
