"""Convolutional autoencoder front-end.

Encoder: conv 9x9 stride 1 -> leaky ReLU -> (dropout) -> conv 9x9 stride 2
-> sigmoid. Decoder mirrors it with transposed convolutions: stride 2 ->
leaky ReLU -> stride 1 -> sigmoid. Valid padding throughout, so a 28x28
image maps to a 6x6x128 feature map (576 capsules of 8 dims).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .kernels import (
    SeededRng,
    SgdMomentumState,
    as_tensor,
    check_finite,
    conv2d_filter_grad,
    conv2d_forward,
    conv2d_input_grad,
    conv_output_size,
    dropout_mask,
    gaussian_sample,
    leaky_relu,
    leaky_relu_grad,
    sgd_step,
    sigmoid,
)

log = logging.getLogger(__name__)

KERNEL = 9
STRIDES = (1, 2)
PARAM_NAMES = ("enc1", "enc2", "dec1", "dec2")


@dataclass
class AutoencoderParams:
    enc1: np.ndarray  # [9, 9, Cin, C]
    enc2: np.ndarray  # [9, 9, C, C]
    dec1: np.ndarray  # [9, 9, C, C]   transposed conv: features -> hidden
    dec2: np.ndarray  # [9, 9, Cin, C] transposed conv: hidden -> image
    dropout_rate: float = 0.5
    leaky_slope: float = 0.01

    @classmethod
    def initialize(cls, image_channels: int, rng: SeededRng, channels: int = 128,
                   dropout_rate: float = 0.5, leaky_slope: float = 0.01,
                   kernel: int = KERNEL) -> "AutoencoderParams":
        k = kernel

        def he(shape, fan_in):
            return gaussian_sample(rng, shape) * np.sqrt(2.0 / fan_in)

        return cls(
            enc1=he((k, k, image_channels, channels), k * k * image_channels),
            enc2=he((k, k, channels, channels), k * k * channels),
            dec1=he((k, k, channels, channels), k * k * channels / STRIDES[1] ** 2),
            dec2=he((k, k, image_channels, channels), k * k * channels),
            dropout_rate=dropout_rate,
            leaky_slope=leaky_slope,
        )

    @property
    def image_channels(self) -> int:
        return self.enc1.shape[2]

    @property
    def channels(self) -> int:
        return self.enc1.shape[3]

    @property
    def kernel(self) -> int:
        return self.enc1.shape[0]

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, tensors: dict) -> "AutoencoderParams":
        return AutoencoderParams(**tensors, dropout_rate=self.dropout_rate,
                                 leaky_slope=self.leaky_slope)


def hidden_shape(image_hw, kernel: int = KERNEL) -> tuple[int, int]:
    h, w = (conv_output_size(s, kernel, STRIDES[0]) for s in image_hw)
    return h, w


def feature_shape(image_hw, channels: int = 128, kernel: int = KERNEL) -> tuple[int, int, int]:
    h, w = (conv_output_size(s, kernel, STRIDES[1]) for s in hidden_shape(image_hw, kernel))
    return h, w, channels


def _as_images(images, params: AutoencoderParams) -> np.ndarray:
    x = as_tensor(images)
    if x.ndim == 2 or (x.ndim == 3 and params.image_channels == 1 and x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != params.image_channels:
        raise ValueError(f"images have {x.shape[-1]} channels, model expects {params.image_channels}")
    return x


def encode(params: AutoencoderParams, images) -> np.ndarray:
    """Images ``[..., H, W(, C)]`` in [0, 1] -> features in (0, 1)."""
    x = _as_images(images, params)
    k = params.kernel
    if x.shape[-3] < 2 * k - 1 or x.shape[-2] < 2 * k - 1:
        raise ValueError(f"image {x.shape[-3:-1]} is smaller than the {2 * k - 1}px receptive field")
    h1 = leaky_relu(conv2d_forward(x, params.enc1, STRIDES[0]), params.leaky_slope)
    return sigmoid(conv2d_forward(h1, params.enc2, STRIDES[1]))


def decode(params: AutoencoderParams, features, image_hw) -> np.ndarray:
    """Features ``[..., H', W', C]`` -> images ``[..., H, W, Cin]`` in (0, 1)."""
    f = as_tensor(features)
    H, W = image_hw
    h1_hw = hidden_shape(image_hw, params.kernel)
    if f.shape[-3:] != feature_shape(image_hw, params.channels, params.kernel):
        raise ValueError(f"features {f.shape[-3:]} do not match image size {image_hw}")
    g1 = leaky_relu(conv2d_input_grad(f, params.dec1, STRIDES[1], h1_hw), params.leaky_slope)
    return sigmoid(conv2d_input_grad(g1, params.dec2, STRIDES[0], (H, W)))


def reconstruction_loss_and_grads(params: AutoencoderParams, images, mask=None):
    """Mean squared reconstruction error and its exact parameter gradients.

    ``mask`` multiplies the first hidden layer (dropout); None means no dropout.
    """
    x = _as_images(images, params)
    H, W = x.shape[-3:-1]
    s1, s2 = STRIDES
    slope = params.leaky_slope

    a1 = conv2d_forward(x, params.enc1, s1)
    h1 = leaky_relu(a1, slope)
    d1 = h1 if mask is None else h1 * mask
    f = sigmoid(conv2d_forward(d1, params.enc2, s2))
    b1 = conv2d_input_grad(f, params.dec1, s2, a1.shape[-3:-1])
    g1 = leaky_relu(b1, slope)
    y = sigmoid(conv2d_input_grad(g1, params.dec2, s1, (H, W)))

    diff = y - x
    loss = float(np.mean(diff * diff))

    dy = 2.0 * diff / diff.size
    db2 = dy * y * (1.0 - y)
    # decoder convs are adjoints: their input grads are forward convs
    grad_dec2 = conv2d_filter_grad(db2, g1, params.dec2.shape[:2], s1)
    dg1 = conv2d_forward(db2, params.dec2, s1)
    db1 = dg1 * leaky_relu_grad(b1, slope)
    grad_dec1 = conv2d_filter_grad(db1, f, params.dec1.shape[:2], s2)
    df = conv2d_forward(db1, params.dec1, s2)
    da2 = df * f * (1.0 - f)
    grad_enc2 = conv2d_filter_grad(d1, da2, params.enc2.shape[:2], s2)
    dd1 = conv2d_input_grad(da2, params.enc2, s2, a1.shape[-3:-1])
    dh1 = dd1 if mask is None else dd1 * mask
    da1 = dh1 * leaky_relu_grad(a1, slope)
    grad_enc1 = conv2d_filter_grad(x, da1, params.enc1.shape[:2], s1)

    grads = {"enc1": grad_enc1, "enc2": grad_enc2, "dec1": grad_dec1, "dec2": grad_dec2}
    for k, g in grads.items():
        check_finite(g, f"gradient of {k}")
    return loss, grads


def train_autoencoder(params: AutoencoderParams, batches, epochs: int,
                      optimizer: SgdMomentumState, rng: SeededRng,
                      start_epoch: int = 0, start_step: int = 0,
                      on_record=None, on_epoch_end=None):
    """Minibatch SGD on the reconstruction MSE with dropout on the first hidden layer.

    ``batches(epoch)`` yields image arrays. Returns ``(params, records)``.
    """
    records = []
    step = start_step
    for epoch in range(start_epoch, epochs):
        for x in batches(epoch):
            x = _as_images(x, params)
            if np.any((x < 0) | (x > 1)):
                raise ValueError("images must lie in [0, 1]")
            hidden = x.shape[:-3] + hidden_shape(x.shape[-3:-1], params.kernel) + (params.channels,)
            mask = dropout_mask(rng, hidden, params.dropout_rate) if params.dropout_rate > 0 else None
            loss, grads = reconstruction_loss_and_grads(params, x, mask)
            lr = optimizer.learning_rate
            params = params.replace(sgd_step(params.tensors(), grads, optimizer))
            rec = {"epoch": epoch + 1, "step": step, "mse": loss, "learning_rate": lr}
            step += 1
            records.append(rec)
            if on_record is not None:
                on_record(rec)
        epoch_mse = [r["mse"] for r in records if r["epoch"] == epoch + 1]
        if epoch_mse:
            log.info("autoencoder epoch %d: mse %.6f", epoch + 1, np.mean(epoch_mse))
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, params, step)
    return params, records


def capsulize(features, capsule_dim: int = 8) -> np.ndarray:
    """Row-major reshape ``[..., H', W', C]`` -> ``[..., H'*W'*C/dim, dim]``.

    Each capsule is ``dim`` consecutive channels at one spatial location.
    """
    f = as_tensor(features)
    if f.shape[-1] % capsule_dim:
        raise ValueError(f"{f.shape[-1]} channels are not divisible into {capsule_dim}-dim capsules")
    count = int(np.prod(f.shape[-3:])) // capsule_dim
    return f.reshape(f.shape[:-3] + (count, capsule_dim))


def decapsulize(capsules, feature_hw_c) -> np.ndarray:
    """Inverse of :func:`capsulize`."""
    c = as_tensor(capsules)
    return c.reshape(c.shape[:-2] + tuple(feature_hw_c))
