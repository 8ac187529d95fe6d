"""Offline stand-in for MNIST: stroke-rendered digits in IDX format.

Each image draws one of ten polyline digit templates with a random affine
jitter and stroke width, anti-aliased by distance to the stroke. The output
has MNIST's geometry (28x28, u8, dark background, bright strokes) so the
whole pipeline can run where the real files are unavailable.
"""

from __future__ import annotations

import numpy as np

from .dataio import write_idx
from .kernels import SeededRng


def _arc(cx, cy, rx, ry, start, stop, n=12):
    t = np.radians(np.linspace(start, stop, n))
    return list(zip(cx + rx * np.cos(t), cy - ry * np.sin(t)))


# strokes in a unit box, y pointing down
TEMPLATES = {
    0: [_arc(0.5, 0.5, 0.28, 0.4, 0, 360, 24)],
    1: [[(0.38, 0.25), (0.52, 0.1), (0.52, 0.9)]],
    2: [_arc(0.5, 0.32, 0.25, 0.22, 160, -20) + [(0.25, 0.9), (0.78, 0.9)]],
    3: [_arc(0.48, 0.3, 0.24, 0.2, 150, -90), _arc(0.48, 0.69, 0.26, 0.21, 90, -150)],
    4: [[(0.62, 0.9), (0.62, 0.1), (0.22, 0.66), (0.8, 0.66)]],
    5: [[(0.75, 0.1), (0.32, 0.1), (0.28, 0.45)] + _arc(0.5, 0.65, 0.26, 0.25, 130, -150)],
    6: [[(0.68, 0.1)] + _arc(0.5, 0.66, 0.25, 0.24, 160, -200, 20)],
    7: [[(0.24, 0.1), (0.78, 0.1), (0.42, 0.9)]],
    8: [_arc(0.5, 0.3, 0.2, 0.2, 0, 360, 18), _arc(0.5, 0.7, 0.25, 0.21, 0, 360, 18)],
    9: [_arc(0.5, 0.34, 0.24, 0.24, 0, 360, 18), [(0.74, 0.34), (0.66, 0.9)]],
}


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / denom, 0.0, 1.0) if denom > 0 else 0.0
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_digit(digit: int, rng: SeededRng, size: int = 28) -> np.ndarray:
    """Render one jittered digit -> uint8 ``[size, size]``."""
    u = rng.uniform(6)
    angle = np.radians(-15 + 30 * u[0])
    scale = 15.0 + 5.0 * u[1]
    shear = -0.25 + 0.5 * u[2]
    shift = (u[3:5] - 0.5) * 3.0
    width = 0.9 + 1.3 * u[5]
    cos, sin = np.cos(angle), np.sin(angle)
    A = scale * np.array([[cos, -sin], [sin, cos]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    centre = np.array([size / 2.0, size / 2.0]) + shift

    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dist = np.full((size, size), np.inf)
    for stroke in TEMPLATES[digit]:
        pts = [A @ (np.array(p) - 0.5) + centre for p in stroke]
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(xs, ys, a, b))
    ink = np.clip(width + 0.5 - dist, 0.0, 1.0)
    return np.round(255.0 * ink).astype(np.uint8)


def synthetic_digits(n: int, seed: int = 0, size: int = 28):
    """``n`` images cycling through the ten digits -> ``(images u8, labels)``."""
    rng = SeededRng(seed)
    labels = np.arange(n) % 10
    images = np.stack([render_digit(int(d), rng, size) for d in labels]) if n else np.zeros((0, size, size), np.uint8)
    return images, labels


def write_synthetic_idx(path, n: int, seed: int = 0):
    images, _ = synthetic_digits(n, seed)
    write_idx(path, images)
    return path
