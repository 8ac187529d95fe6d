"""Post-install self-check: the exact oracles against the learning code.

Every check draws its random tiny instances from one printed seed, so a
report can be reproduced exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import oracles
from .energy import (
    EnergyModel,
    cd1_step,
    p_hidden_given_visible,
    p_visible_given_hidden,
    total_energy,
)
from .kernels import SeededRng, sigmoid
from .routing import route_forward, squash


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""


def _tiny(rng: np.random.Generator, max_caps=2, max_dim=2, scale=1.0, fixed=False):
    if fixed:
        I, J, M, N = max_caps, max_caps, max_dim, max_dim
    else:
        I, J = rng.integers(1, max_caps + 1, size=2)
        M, N = rng.integers(1, max_dim + 1, size=2)
    model = EnergyModel(scale * rng.normal(size=(I, J, N, M)))
    x = (rng.random((I, M)) < 0.5).astype(float)
    c = route_forward(model.W, x, 3)[0].coefficients
    return model, x, c


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def check_conditionals(rng, trials=50) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        model, x, c = _tiny(rng, 3, 3)
        J, N = model.W.shape[1:3]
        h = (rng.random((J, N)) < 0.5).astype(float)
        ph = p_hidden_given_visible(model, x, c)
        px = p_visible_given_hidden(model, h, c)
        ref_h = np.empty_like(ph)
        for idx in np.ndindex(ph.shape):
            on, off = h.copy(), h.copy()
            on[idx], off[idx] = 1.0, 0.0
            ref_h[idx] = sigmoid(total_energy(model, x, off, c) - total_energy(model, x, on, c))
        ref_x = np.empty_like(px)
        for idx in np.ndindex(px.shape):
            on, off = x.copy(), x.copy()
            on[idx], off[idx] = 1.0, 0.0
            ref_x[idx] = sigmoid(total_energy(model, off, h, c) - total_energy(model, on, h, c))
        # conditional = joint / marginal, read off the enumerated table
        joint_h = oracles.brute_conditional_hidden(model, c, x)
        joint_x = oracles.brute_conditional_visible(model, c, h)
        worst = max(worst, _rel(ph, ref_h), _rel(px, ref_x), _rel(ph, joint_h), _rel(px, joint_x))
    return CheckResult("conditionals vs energy differences and enumeration", worst <= 1e-8, worst, 1e-8)


def check_partition(rng, trials=20) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        model, _, c = _tiny(rng)
        z1 = oracles.brute_partition(model, c)
        z2 = oracles.brute_partition_product_form(model, c)
        worst = max(worst, abs(z1 - z2) / z1, abs(oracles.brute_marginals(model, c).sum() - 1.0))
    return CheckResult("partition energy form vs product form", worst <= 1e-10, worst, 1e-10)


def check_marginal_closed_form(rng, trials=20) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        model, x, c = _tiny(rng)
        a = oracles.brute_marginal(model, c, x)
        b = oracles.brute_marginal_enumerated(model, c, x)
        worst = max(worst, abs(a - b) / b)
    return CheckResult("marginal closed form vs enumeration", worst <= 1e-10, worst, 1e-10)


def check_loglik_gradient(rng, trials=10, corrupt=False) -> CheckResult:
    worst = 0.0
    step = 1e-5
    for _ in range(trials):
        model, x, c = _tiny(rng)
        g = oracles.brute_loglik_grad(model, c, x)
        if corrupt:
            g = g + 1e-3 * np.sign(g + 0.5)
        fd = np.zeros_like(g)
        for idx in np.ndindex(g.shape):
            Wp, Wm = model.W.copy(), model.W.copy()
            Wp[idx] += step
            Wm[idx] -= step
            fd[idx] = (np.log(oracles.brute_marginal(EnergyModel(Wp), c, x))
                       - np.log(oracles.brute_marginal(EnergyModel(Wm), c, x))) / (2 * step)
        worst = max(worst, _rel(g, fd))
    return CheckResult("exact log-likelihood gradient vs finite differences", worst <= 1e-6, worst, 1e-6)


def check_cd_direction(rng, trials=5, chains=10_000, corrupt=False) -> CheckResult:
    # 2+2 capsules of 2 neurons; with a single hidden neuron the exact gradient
    # can be tiny and CD-1's bias dominates its direction
    worst = 1.0
    for t in range(trials):
        model, x, c = _tiny(rng, fixed=True)
        exact = oracles.brute_loglik_grad(model, c, x)
        res = cd1_step(model, np.repeat(x[None], chains, axis=0), 3, SeededRng(int(rng.integers(2**63))),
                       coefficients=c)
        g = -res.grad if corrupt else res.grad
        cos = float(np.sum(g * exact) / (np.linalg.norm(g) * np.linalg.norm(exact) + 1e-300))
        worst = min(worst, cos)
    return CheckResult("CD-1 direction vs exact gradient (min cosine)", worst > 0.5, worst, 0.5)


def check_routing(rng, trials=20) -> CheckResult:
    worst = 0.0
    ok = True
    for _ in range(trials):
        I, J, N, M = rng.integers(1, 6, size=4)
        W = rng.normal(size=(I, J, N, M))
        x = rng.random((I, M))
        state, z, _ = route_forward(W, x, 4, record=True)
        for c in state.history:
            worst = max(worst, float(np.abs(c.sum(axis=0) - 1).max()))
            ok &= bool((c >= 0).all() and (c <= 1).all())
        perm = rng.permutation(I)
        state_p, z_p, _ = route_forward(W[perm], x[perm], 4)
        ok &= bool(np.array_equal(z_p, z) and np.array_equal(state_p.coefficients, state.coefficients[perm]))
        v = rng.normal(size=N) * rng.uniform(0, 10)
        ok &= bool(np.linalg.norm(squash(v)) < 1)
    return CheckResult("routing normalization and permutation equivariance", ok and worst <= 1e-12, worst, 1e-12)


def run_checks(seed: int, inject_fault: bool = False) -> list:
    rng = np.random.default_rng(seed)
    return [
        check_conditionals(rng),
        check_partition(rng),
        check_marginal_closed_form(rng),
        check_loglik_gradient(rng, corrupt=inject_fault),
        check_cd_direction(rng, corrupt=inject_fault),
        check_routing(rng),
    ]


def format_report(seed: int, results: list) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"verify seed {seed}"]
    for r in results:
        lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  worst={r.worst:.3e}  tol={r.tolerance:.1e}")
    lines.append(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return "\n".join(lines)


def write_summary(path, seed: int, results: list) -> Path:
    path = Path(path)
    payload = {"seed": seed, "passed": all(r.passed for r in results),
               "checks": [asdict(r) for r in results]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
