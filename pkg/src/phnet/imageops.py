"""Plain-numpy image geometry: bilinear resize, flips, rotation.

These run outside the autograd tape (data pipeline only). Sampling uses
half-pixel centers; out-of-bounds reads clamp for resize and fill with 0 for
rotation.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


def bilinear_resize(image, out_h, out_w):
    """Resize a (C, H, W) array with bilinear interpolation."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise InputError(f"expected (C, H, W), got shape {img.shape}")
    c, h, w = img.shape
    if h == 0 or w == 0:
        raise InputError("empty image")
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = ys - y0
    wx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = img[:, y0c[:, None], x0c[None, :]] * (1 - wx)[None, None, :] + \
        img[:, y0c[:, None], x1c[None, :]] * wx[None, None, :]
    bot = img[:, y1c[:, None], x0c[None, :]] * (1 - wx)[None, None, :] + \
        img[:, y1c[:, None], x1c[None, :]] * wx[None, None, :]
    return top * (1 - wy)[None, :, None] + bot * wy[None, :, None]


def hflip(image):
    return np.ascontiguousarray(np.asarray(image)[:, :, ::-1])


def vflip(image):
    return np.ascontiguousarray(np.asarray(image)[:, ::-1, :])


def rotate_bilinear(image, degrees, fill=0.0):
    """Rotate a (C, H, W) array about its center; outside pixels read ``fill``.

    Positive angles rotate content counter-clockwise in (x right, y down)
    pixel coordinates.
    """
    img = np.asarray(image, dtype=np.float64)
    c, h, w = img.shape
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse mapping: source coordinates for each output pixel
    sx = cos * xx + sin * yy + cx
    sy = -sin * xx + cos * yy + cy
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0

    def sample(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside[None, :, :], vals, fill)

    top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx
    bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def rotate_point(x, y, degrees, h, w):
    """Where (x, y) lands under rotate_bilinear's transform (same convention)."""
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dx, dy = x - cx, y - cy
    # forward map is the inverse of the sampling map
    return (cos * dx - sin * dy + cx, sin * dx + cos * dy + cy)
