"""Low-level pixel operations on channel-first float images in [0, 1].

Sampling convention: half-pixel centers (output pixel i samples source
coordinate (i + 0.5) * scale - 0.5), bilinear weights, edge clamp for
resize. Affine warps fill out-of-bounds samples with a constant (the
callers pass the per-channel image mean to avoid dark-corner artifacts).
"""

from __future__ import annotations

import numpy as np


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) or (H, W) to the requested extents."""
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        out = img.copy()
        return out[0] if squeeze else out

    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0).astype(img.dtype)
    wx = (xs - x0).astype(img.dtype)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)

    top = img[:, y0c[:, None], x0c[None, :]] * (1 - wx)[None, None, :] \
        + img[:, y0c[:, None], x1c[None, :]] * wx[None, None, :]
    bot = img[:, y1c[:, None], x0c[None, :]] * (1 - wx)[None, None, :] \
        + img[:, y1c[:, None], x1c[None, :]] * wx[None, None, :]
    out = top * (1 - wy)[None, :, None] + bot * wy[None, :, None]
    out = out.astype(img.dtype)
    return out[0] if squeeze else out


def affine_warp(img: np.ndarray, matrix: np.ndarray,
                fill: np.ndarray | float | None = None) -> np.ndarray:
    """Warp (C, H, W) by an inverse-map affine: for every output pixel at
    (x, y), sample the source at matrix @ (x, y, 1). Bilinear interpolation,
    out-of-bounds filled with ``fill`` (default: per-channel mean)."""
    c, h, w = img.shape
    if fill is None:
        fill = img.mean(axis=(1, 2))
    fill = np.broadcast_to(np.asarray(fill, dtype=img.dtype).reshape(-1), (c,))

    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    src_x = matrix[0, 0] * xs + matrix[0, 1] * ys + matrix[0, 2]
    src_y = matrix[1, 0] * xs + matrix[1, 1] * ys + matrix[1, 2]

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = (src_x - x0).astype(img.dtype)
    fy = (src_y - y0).astype(img.dtype)

    valid = (src_x >= -1) & (src_x <= w) & (src_y >= -1) & (src_y <= h)

    def gather(yi, xi, inside):
        vals = img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside[None], vals, fill[:, None, None])

    in00 = (x0 >= 0) & (x0 < w) & (y0 >= 0) & (y0 < h)
    in01 = (x0 + 1 >= 0) & (x0 + 1 < w) & (y0 >= 0) & (y0 < h)
    in10 = (x0 >= 0) & (x0 < w) & (y0 + 1 >= 0) & (y0 + 1 < h)
    in11 = (x0 + 1 >= 0) & (x0 + 1 < w) & (y0 + 1 >= 0) & (y0 + 1 < h)

    v00 = gather(y0, x0, in00)
    v01 = gather(y0, x0 + 1, in01)
    v10 = gather(y0 + 1, x0, in10)
    v11 = gather(y0 + 1, x0 + 1, in11)

    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    out = top * (1 - fy) + bot * fy
    out = np.where(valid[None], out, fill[:, None, None])
    return out.astype(img.dtype)


def _center_matrix(a, b, tx, c, d, ty, cx, cy) -> np.ndarray:
    """Affine [a b; c d] about the image center plus translation."""
    return np.array([
        [a, b, cx - a * cx - b * cy + tx],
        [c, d, cy - c * cx - d * cy + ty],
    ], dtype=np.float64)


def rotation_matrix(degrees: float, width: int, height: int) -> np.ndarray:
    """Inverse map for a rotation of the IMAGE by ``degrees`` about its
    center (the sampling grid rotates by -degrees)."""
    t = np.deg2rad(degrees)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    return _center_matrix(np.cos(t), -np.sin(t), 0.0, np.sin(t), np.cos(t), 0.0, cx, cy)


def shear_matrix(sx: float, sy: float, width: int, height: int) -> np.ndarray:
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    return _center_matrix(1.0, sx, 0.0, sy, 1.0, 0.0, cx, cy)


def translation_matrix(dx: float, dy: float) -> np.ndarray:
    """Shift the image content by (dx, dy) pixels (inverse map subtracts)."""
    return np.array([[1.0, 0.0, -dx], [0.0, 1.0, -dy]], dtype=np.float64)
