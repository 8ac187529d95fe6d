"""Exact ground truth for tiny energy models by full enumeration.

Everything here enumerates all ``2^(I*M + J*N)`` binary configurations, so
it only runs when the model has at most 20 neurons in total. These routines
are deliberately written against the definitions (energy sums, products of
per-neuron factors) and never call the conditional or CD code they check.
"""

from __future__ import annotations

import itertools

import numpy as np

from .energy import EnergyModel
from .routing import RoutingState

MAX_TOTAL_NEURONS = 20


class EnumerationBoundError(ValueError):
    pass


def _c(c) -> np.ndarray:
    return np.asarray(c.coefficients if isinstance(c, RoutingState) else c, dtype=float)


def _check_bound(model: EnergyModel) -> tuple[int, int]:
    I, J, N, M = model.W.shape
    nv, nh = I * M, J * N
    if nv + nh > MAX_TOTAL_NEURONS:
        raise EnumerationBoundError(
            f"{nv + nh} neurons exceed the enumeration bound of {MAX_TOTAL_NEURONS}")
    return nv, nh


def binary_configs(n: int) -> np.ndarray:
    """All 2^n binary vectors, first coordinate most significant."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(2**n, n)


def _coupling(model: EnergyModel, c) -> np.ndarray:
    """Flat neuron coupling ``K[(j,n), (i,m)] = c_ij W_ij[n, m]``."""
    I, J, N, M = model.W.shape
    K = _c(c)[:, :, None, None] * model.W  # [I, J, N, M]
    return K.transpose(1, 2, 0, 3).reshape(J * N, I * M)


def joint_energies(model: EnergyModel, c) -> np.ndarray:
    """``E(x, h)`` for every configuration -> ``[2^(I*M), 2^(J*N)]``."""
    nv, nh = _check_bound(model)
    X, H = binary_configs(nv), binary_configs(nh)
    return -(X @ _coupling(model, c).T @ H.T)


def brute_partition(model: EnergyModel, c) -> float:
    """``Z = sum_{x,h} exp(-E(x, h))``."""
    return float(np.exp(-joint_energies(model, c)).sum())


def brute_partition_product_form(model: EnergyModel, c) -> float:
    """``Z`` summed as a product of per-neuron expert factors.

    For each configuration the weight is ``prod_j prod_n exp(h_jn * sum_i
    c_ij sum_m W_ij[n, m] x_im)``, accumulated with explicit loops over the
    capsule structure rather than a flattened coupling matrix.
    """
    nv, nh = _check_bound(model)
    I, J, N, M = model.W.shape
    c = _c(c)
    H = binary_configs(nh).reshape(-1, J, N)
    total = 0.0
    for xv in binary_configs(nv):
        x = xv.reshape(I, M)
        field = np.zeros((J, N))
        for j in range(J):
            for i in range(I):
                field[j] += c[i, j] * (model.W[i, j] @ x[i])
        # one expert factor per hidden neuron, multiplied out per configuration
        experts = np.exp(H * field)
        total += float(np.prod(experts.reshape(len(H), -1), axis=1).sum())
    return total


def brute_marginal(model: EnergyModel, c, x) -> float:
    """Closed-form ``P(x) = prod_{j,n} (1 + exp(sum_i c_ij (W_ij x_i)_n)) / Z``."""
    nv, _ = _check_bound(model)
    field = _coupling(model, c) @ np.asarray(x, dtype=float).reshape(nv)
    return float(np.prod(1.0 + np.exp(field)) / brute_partition(model, c))


def brute_marginal_enumerated(model: EnergyModel, c, x) -> float:
    """``P(x) = sum_h exp(-E(x, h)) / Z`` by summing over hidden states."""
    nv, nh = _check_bound(model)
    xv = np.asarray(x, dtype=float).reshape(nv)
    H = binary_configs(nh)
    e = -(H @ _coupling(model, c) @ xv)
    return float(np.exp(-e).sum() / brute_partition(model, c))


def brute_marginals(model: EnergyModel, c) -> np.ndarray:
    """Enumerated ``P(x)`` for every visible configuration (ordered as binary_configs)."""
    w = np.exp(-joint_energies(model, c))
    return w.sum(axis=1) / w.sum()


def brute_conditional_hidden(model: EnergyModel, c, x) -> np.ndarray:
    """``P(h_jn = 1 | x)`` as joint / marginal from the enumerated table -> ``[J, N]``."""
    nv, nh = _check_bound(model)
    I, J, N, M = model.W.shape
    H = binary_configs(nh)
    xv = np.asarray(x, dtype=float).reshape(nv)
    w = np.exp(H @ _coupling(model, c) @ xv)
    return ((w[:, None] * H).sum(axis=0) / w.sum()).reshape(J, N)


def brute_conditional_visible(model: EnergyModel, c, h) -> np.ndarray:
    """``P(x_im = 1 | h)`` from enumeration -> ``[I, M]``."""
    nv, _ = _check_bound(model)
    I, J, N, M = model.W.shape
    X = binary_configs(nv)
    hv = np.asarray(h, dtype=float).reshape(J * N)
    w = np.exp(X @ _coupling(model, c).T @ hv)
    return ((w[:, None] * X).sum(axis=0) / w.sum()).reshape(I, M)


def _expected_pair_outer(weights: np.ndarray, model: EnergyModel, c) -> np.ndarray:
    """``sum_{x,h} w(x,h) c_ij h_j x_i^T`` for a normalized weight table."""
    nv, nh = _check_bound(model)
    I, J, N, M = model.W.shape
    X, H = binary_configs(nv), binary_configs(nh)
    flat = H.T @ weights.T @ X  # [(j,n), (i,m)]
    outer = flat.reshape(J, N, I, M).transpose(2, 0, 1, 3)
    return _c(c)[:, :, None, None] * outer


def brute_loglik_grad(model: EnergyModel, c, x) -> np.ndarray:
    """Exact ``d log P(x) / d W`` with ``c`` held fixed -> ``[I, J, N, M]``.

    Data term: expectation of ``c_ij h_j x_i^T`` under ``P(h | x)``; model
    term: the same under the joint ``P(x', h)``.
    """
    nv, nh = _check_bound(model)
    xv = np.asarray(x, dtype=float).reshape(nv)
    if not np.isin(xv, (0.0, 1.0)).all():
        raise ValueError("x must be a binary configuration")
    row = int(xv @ (2 ** np.arange(nv - 1, -1, -1)))
    joint = np.exp(-joint_energies(model, c))
    joint /= joint.sum()
    data = np.zeros_like(joint)
    data[row] = joint[row] / joint[row].sum()
    return _expected_pair_outer(data, model, c) - _expected_pair_outer(joint, model, c)


def rbm_partition(weights) -> float:
    """Bias-free binary RBM partition function with ``weights[n, m]``."""
    Wr = np.asarray(weights, dtype=float)
    nh, nv = Wr.shape
    total = 0.0
    for v in itertools.product((0.0, 1.0), repeat=nv):
        for h in itertools.product((0.0, 1.0), repeat=nh):
            total += np.exp(np.array(h) @ Wr @ np.array(v))
    return float(total)
