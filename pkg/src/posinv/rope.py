"""Rotary position encoding.

Consecutive pairs (x[2i], x[2i+1]) of each head vector are rotated by
angle pos * theta**(-2i/d), so attention logits depend only on relative
positions.  Rotation preserves the vector norm.
"""

from __future__ import annotations

import numpy as np

from .kernels import ShapeError


def rope_angles(positions: np.ndarray, d_head: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (len(positions), d_head // 2)."""
    if d_head % 2 != 0:
        raise ShapeError(f"rope: head dimension must be even, got {d_head}")
    exponents = np.arange(0, d_head, 2, dtype=np.float32) / np.float32(d_head)
    inv_freq = np.float32(theta) ** (-exponents)
    ang = np.asarray(positions, dtype=np.float32)[:, None] * inv_freq[None, :]
    return np.cos(ang), np.sin(ang)


def rotate(x: np.ndarray, positions, theta: float) -> np.ndarray:
    """Rotate rows of x (shape [t, d_head]) by their positions."""
    x = np.atleast_2d(x)
    cos, sin = rope_angles(np.asarray(positions), x.shape[-1], theta)
    even = x[:, 0::2]
    odd = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def apply_rope(x: np.ndarray, positions, theta: float = 10000.0) -> np.ndarray:
    """Rotate a [t, n_heads, d_head] tensor; one position per token."""
    positions = np.asarray(positions)
    if x.ndim == 2:
        return rotate(x, positions, theta)
    if x.ndim != 3:
        raise ShapeError(f"apply_rope: expected [t, h, d] tensor, got shape {x.shape}")
    out = np.empty_like(x)
    for h in range(x.shape[1]):
        out[:, h, :] = rotate(x[:, h, :], positions, theta)
    return out
