"""Numeric substrate: activations, seeded randomness, 2-D convolution and SGD.

Tensors are plain float64 numpy arrays. Convolutions use channels-last
layout (``[..., H, W, C]``) with filters shaped ``[kh, kw, Cin, Cout]`` and
valid padding; any leading axes are treated as a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteError(FloatingPointError):
    """Raised when a kernel sees or would produce NaN/Inf."""


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return x


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# activations


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function, numerically stable for large |x|."""
    x = check_finite(as_tensor(x), "sigmoid input")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def leaky_relu(x, slope: float = 0.01) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky slope must lie in (0, 1), got {slope}")
    x = check_finite(as_tensor(x), "leaky_relu input")
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope: float = 0.01) -> np.ndarray:
    return np.where(as_tensor(x) >= 0, 1.0, slope)


# ---------------------------------------------------------------------------
# randomness


def _split_u64(values) -> list[float]:
    out = []
    for v in values:
        v = int(v)
        out.extend([float(v >> 32), float(v & 0xFFFFFFFF)])
    return out


def _join_u64(values) -> list[int]:
    vals = [int(v) for v in values]
    return [(hi << 32) | lo for hi, lo in zip(vals[0::2], vals[1::2])]


class SeededRng:
    """Platform-stable random stream.

    Backed by the Philox4x64-10 counter-based generator; uniforms are the
    generator's 53-bit doubles. Gaussians use Box-Muller over pairs of
    uniforms: a request for ``n`` normals always consumes ``2 * ceil(n / 2)``
    uniforms and discards the spare, so the stream position depends only on
    the sequence of requested shapes.
    """

    STATE_SIZE = 23

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self._bitgen = np.random.Philox(self.seed)
        self._gen = np.random.Generator(self._bitgen)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        return self._gen.random(shape, dtype=np.float64)

    def normal(self, shape=()) -> np.ndarray:
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        # 1 - u lies in (0, 1], keeping the log finite
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        return z.reshape(-1)[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by our own uniforms so the consumption is explicit
        order = np.arange(n)
        if n > 1:
            u = self.uniform(n - 1)
            for k, i in enumerate(range(n - 1, 0, -1)):
                j = int(u[k] * (i + 1))
                order[i], order[j] = order[j], order[i]
        return order

    def get_state(self) -> np.ndarray:
        """Exact state as a float64 vector (64-bit words split in halves)."""
        st = self._bitgen.state
        words = list(st["state"]["counter"]) + list(st["state"]["key"]) + list(st["buffer"])
        tail = [float(st["buffer_pos"]), float(st["has_uint32"]), float(st["uinteger"])]
        return np.array(_split_u64(words) + tail, dtype=np.float64)

    def set_state(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.STATE_SIZE,):
            raise ValueError(f"rng state must have {self.STATE_SIZE} entries")
        words = _join_u64(vec[:20])
        st = self._bitgen.state
        st["state"]["counter"] = np.array(words[0:4], dtype=np.uint64)
        st["state"]["key"] = np.array(words[4:6], dtype=np.uint64)
        st["buffer"] = np.array(words[6:10], dtype=np.uint64)
        st["buffer_pos"] = int(vec[20])
        st["has_uint32"] = int(vec[21])
        st["uinteger"] = int(vec[22])
        self._bitgen.state = st


def gaussian_sample(rng: SeededRng, shape) -> np.ndarray:
    """i.i.d. standard normal tensor."""
    return rng.normal(shape)


def dropout_mask(rng: SeededRng, shape, rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.uniform(shape) >= rate
    return keep / (1.0 - rate)


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    if kernel > size:
        raise ValueError(f"filter extent {kernel} exceeds input extent {size}")
    return (size - kernel) // stride + 1


def _check_conv_args(x: np.ndarray, filters: np.ndarray, stride: int):
    if x.ndim < 3:
        raise ValueError("conv input must be [..., H, W, Cin]")
    if filters.ndim != 4:
        raise ValueError("filters must be [kh, kw, Cin, Cout]")
    kh, kw, cin, _ = filters.shape
    if x.shape[-1] != cin:
        raise ValueError(f"input has {x.shape[-1]} channels, filters expect {cin}")
    if stride > kh or stride > kw:
        raise ValueError(f"stride {stride} skips input pixels with a {kh}x{kw} filter")
    return conv_output_size(x.shape[-3], kh, stride), conv_output_size(x.shape[-2], kw, stride)


def _patches(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # [..., H', W', Cin, kh, kw]
    win = sliding_window_view(x, (kh, kw), axis=(-3, -2))
    return win[..., ::stride, ::stride, :, :, :]


def conv2d_forward(x, filters, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation: [..., H, W, Cin] * [kh, kw, Cin, Cout] -> [..., H', W', Cout]."""
    x = check_finite(as_tensor(x), "conv input")
    filters = check_finite(as_tensor(filters), "conv filters")
    _check_conv_args(x, filters, stride)
    kh, kw = filters.shape[:2]
    cols = _patches(x, kh, kw, stride)
    return np.tensordot(cols, filters.transpose(2, 0, 1, 3), axes=([-3, -2, -1], [0, 1, 2]))


def conv2d_input_grad(upstream, filters, stride: int, input_hw) -> np.ndarray:
    """Adjoint of :func:`conv2d_forward` with respect to its input.

    This is also the transposed convolution used by the decoder.
    """
    g = as_tensor(upstream)
    filters = as_tensor(filters)
    kh, kw, cin, cout = filters.shape
    H, W = input_hw
    ho, wo = g.shape[-3], g.shape[-2]
    if (ho, wo) != (conv_output_size(H, kh, stride), conv_output_size(W, kw, stride)):
        raise ValueError(f"upstream spatial shape {(ho, wo)} does not match input {(H, W)}")
    if g.shape[-1] != cout:
        raise ValueError("upstream channel count does not match filters")
    # [..., ho, wo, kh, kw, cin]
    cols = np.tensordot(g, filters, axes=([-1], [3]))
    out = np.zeros(g.shape[:-3] + (H, W, cin))
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for a in range(kh):
        for b in range(kw):
            out[..., a:a + span_h:stride, b:b + span_w:stride, :] += cols[..., a, b, :]
    return out


def conv2d_filter_grad(x, upstream, kernel_hw, stride: int) -> np.ndarray:
    x = as_tensor(x)
    g = as_tensor(upstream)
    kh, kw = kernel_hw
    cols = _patches(x, kh, kw, stride)
    lead = tuple(range(cols.ndim - 3))
    # cols [..., ho, wo, cin, kh, kw] with g [..., ho, wo, cout]
    gw = np.tensordot(cols, g, axes=(lead, tuple(range(g.ndim - 1))))
    return gw.transpose(1, 2, 0, 3)


def conv2d_backward(x, filters, stride: int, upstream):
    """Gradients of ``sum(upstream * conv2d_forward(x, filters, stride))``.

    Returns ``(grad_input, grad_filters)``; the filter gradient is summed over
    any batch axes.
    """
    x = as_tensor(x)
    filters = as_tensor(filters)
    upstream = check_finite(as_tensor(upstream), "upstream gradient")
    ho, wo = _check_conv_args(x, filters, stride)
    expected = x.shape[:-3] + (ho, wo, filters.shape[3])
    if upstream.shape != expected:
        raise ValueError(f"upstream shape {upstream.shape} != forward output shape {expected}")
    grad_x = conv2d_input_grad(upstream, filters, stride, x.shape[-3:-1])
    grad_w = conv2d_filter_grad(x, upstream, filters.shape[:2], stride)
    return grad_x, grad_w


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class SgdMomentumState:
    learning_rate: float
    momentum: float = 0.9
    decay: float = 1.0
    l2: float = 0.0
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be nonnegative")


def sgd_step(params: dict, grads: dict, state: SgdMomentumState) -> dict:
    """One descent step on every named tensor; returns new parameter arrays.

    ``v <- momentum*v - lr*(grad + l2*param); param <- param + v``; the
    learning rate then decays once per call.
    """
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient names differ")
    new = {}
    for name, p in params.items():
        g = as_tensor(grads[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ValueError(f"velocity shape mismatch for {name!r}")
        v = state.momentum * v - state.learning_rate * (g + state.l2 * p)
        updated = check_finite(p + v, f"updated {name}")
        state.velocity[name] = v
        new[name] = updated
    state.learning_rate *= state.decay
    return new
