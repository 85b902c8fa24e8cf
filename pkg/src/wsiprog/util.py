"""Shared numeric helpers: rounding, seeding, box-filter resampling."""

from __future__ import annotations

import hashlib

import numpy as np


def round_half_up(x):
    """Round to nearest integer with exact halves going up.

    Works on scalars and arrays; returns int / int64 array. Used for every
    coordinate and dimension scaling so that ties resolve identically across
    the whole pipeline.
    """
    if np.isscalar(x):
        return int(np.floor(x + 0.5))
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def scale_dim(dim_40x: int, magnification: float) -> int:
    """Pixel extent of a pyramid level: dim(m) = round(dim(40x) * m / 40)."""
    return round_half_up(dim_40x * magnification / 40.0)


def derive_seed(master: int, *tags) -> int:
    """Derive a stable, platform-independent child seed from a master seed.

    Tags namespace the derivation (e.g. ("sample", slide_id)) so unrelated
    RNG streams never collide and never depend on iteration order.
    """
    text = str(int(master)) + "".join("/" + str(t) for t in tags)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix averaging n_in samples into n_out boxes."""
    if n_out > n_in:
        raise ValueError(f"box filter cannot upsample ({n_in} -> {n_out})")
    ratio = n_in / n_out
    weights = np.zeros((n_out, n_in))
    for o in range(n_out):
        lo = o * ratio
        hi = (o + 1) * ratio
        i0 = int(np.floor(lo))
        i1 = min(int(np.ceil(hi)), n_in)
        for i in range(i0, i1):
            weights[o, i] = (min(hi, i + 1) - max(lo, i)) / ratio
    return weights


def box_downsample(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-average (box filter) downsample of an H x W [x C] image.

    Exact for integer reduction factors (fast reshape path) and uses
    fractional overlap weights otherwise. Returns float64.
    """
    img = np.asarray(image, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    if in_h % out_h == 0 and in_w % out_w == 0:
        fh = in_h // out_h
        fw = in_w // out_w
        if img.ndim == 2:
            return img.reshape(out_h, fh, out_w, fw).mean(axis=(1, 3))
        return img.reshape(out_h, fh, out_w, fw, img.shape[2]).mean(axis=(1, 3))
    w_rows = _box_weights(in_h, out_h)
    w_cols = _box_weights(in_w, out_w)
    if img.ndim == 2:
        return w_rows @ img @ w_cols.T
    return np.einsum("oi,ijc,pj->opc", w_rows, img, w_cols, optimize=True)


def hsv_to_rgb(h_deg, s, v):
    """Vectorized HSV to RGB. h in degrees [0, 360), s and v in [0, 255].

    Returns float arrays in [0, 255] (not rounded).
    """
    h = (np.asarray(h_deg, dtype=np.float64) % 360.0) / 60.0
    s = np.asarray(s, dtype=np.float64) / 255.0
    v = np.asarray(v, dtype=np.float64)
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return r, g, b
