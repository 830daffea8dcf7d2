"""Reference vessel segmenters: multiscale Frangi, Phansalkar, global thresholds."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .metrics import MetricsReport, metrics_from_counts

__all__ = [
    "FrangiParams",
    "PhansalkarParams",
    "gaussian_derivative_kernel",
    "hessian",
    "symmetric_eigvals3",
    "hessian_eigenvalues",
    "frangi_vesselness",
    "phansalkar_threshold",
    "apply_threshold",
    "optimal_threshold_f1",
]

# relative round-off floor of the separable derivative filters
ROUNDOFF = 1e3 * np.finfo(np.float64).eps

# (row, col) of the six unique Hessian entries
_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass
class FrangiParams:
    scales: tuple[float, ...] = (0.75, 1.0, 1.5)
    alpha: float = 0.5
    beta: float = 0.5
    c: float | None = None  # None: half the max Hessian Frobenius norm, per scale
    bright_on_dark: bool = True

    def __post_init__(self) -> None:
        self.scales = tuple(float(s) for s in self.scales)
        if not self.scales or min(self.scales) <= 0:
            raise ValueError(f"scales must be a nonempty list of positive values, got {self.scales}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.c is not None and self.c <= 0:
            raise ValueError("c must be positive when given")


@dataclass
class PhansalkarParams:
    radius: int = 15
    k: float = 0.25
    r: float = 0.5
    p: float = 2.0
    q: float = 10.0

    def __post_init__(self) -> None:
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"radius must be an integer >= 1, got {self.radius}")
        self.radius = int(self.radius)
        if self.r <= 0:
            raise ValueError(f"r must be positive, got {self.r}")


def _require_3d(vol: np.ndarray) -> None:
    if vol.ndim != 3:
        raise ValueError(f"unsupported dimension: Hessian filters need a 3-D volume, got {vol.ndim}-D")


def gaussian_derivative_kernel(sigma: float, order: int, truncate: float = 4.0) -> np.ndarray:
    """Correlation kernel of the ``order``-th Gaussian derivative, radius ceil(truncate * sigma).

    Moments are fixed exactly after truncation: the kernel reproduces
    order-th derivatives of polynomials up to degree ``order`` and maps
    constants to 0 for ``order`` > 0, so a flat region never responds.
    """
    radius = max(1, int(math.ceil(truncate * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    if order == 0:
        return g
    if order == 1:
        k = x * g
        return k / np.sum(x * k)
    if order == 2:
        k = (x**2 - sigma**2) * g
        k -= k.sum() * g
        return k / (0.5 * np.sum(x**2 * k))
    raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


def hessian(vol: np.ndarray, sigma: float) -> list[np.ndarray]:
    """sigma^2-normalized Gaussian-derivative Hessian entries, in ``_PAIRS`` order.

    Separable filtering with border replication. Entries within the
    filters' round-off of zero (relative to the data magnitude) are set to
    exactly 0, so flat data cannot feed noise into the auto-scaled ``c``.
    """
    vol = np.asarray(vol, dtype=np.float64)
    _require_3d(vol)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kernels = [gaussian_derivative_kernel(sigma, k) for k in range(3)]
    floor = ROUNDOFF * (float(np.abs(vol).max()) if vol.size else 0.0)
    out = []
    for i, j in _PAIRS:
        order = [0, 0, 0]
        order[i] += 1
        order[j] += 1
        h = vol
        for axis in range(3):
            h = ndimage.correlate1d(h, kernels[order[axis]], axis=axis, mode="nearest")
        h = sigma**2 * h
        h[np.abs(h) <= floor] = 0.0
        out.append(h)
    return out


def symmetric_eigvals3(a11, a22, a33, a12, a13, a23) -> np.ndarray:
    """Closed-form eigenvalues of stacked symmetric 3x3 matrices, ascending.

    Trigonometric solution of the characteristic cubic; returns shape
    ``a11.shape + (3,)``. Each matrix is first rescaled by a power of two so
    tiny or huge entries neither underflow nor overflow.
    """
    a11, a22, a33, a12, a13, a23 = (np.asarray(a, dtype=np.float64) for a in (a11, a22, a33, a12, a13, a23))
    big = np.maximum.reduce([np.abs(a) for a in (a11, a22, a33, a12, a13, a23)])
    _, e = np.frexp(big)
    a11, a22, a33, a12, a13, a23 = (np.ldexp(a, -e) for a in (a11, a22, a33, a12, a13, a23))
    q = (a11 + a22 + a33) / 3.0
    p1 = a12 * a12 + a13 * a13 + a23 * a23
    b11, b22, b33 = a11 - q, a22 - q, a33 - q
    p2 = b11 * b11 + b22 * b22 + b33 * b33 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    det = (
        b11 * (b22 * b33 - a23 * a23)
        - a12 * (a12 * b33 - a23 * a13)
        + a13 * (a12 * a23 - b22 * a13)
    )
    r = np.clip(det / (2.0 * safe**3), -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e_hi = q + 2.0 * p * np.cos(phi)
    e_lo = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
    e_mid = 3.0 * q - e_hi - e_lo
    return np.ldexp(np.stack([e_lo, e_mid, e_hi], axis=-1), e[..., None])


def _sort_by_magnitude(ev: np.ndarray) -> np.ndarray:
    idx = np.argsort(np.abs(ev), axis=-1, kind="stable")
    return np.take_along_axis(ev, idx, axis=-1)


def hessian_eigenvalues(vol: np.ndarray, sigma: float) -> np.ndarray:
    """Per-voxel Hessian eigenvalues sorted so |l1| <= |l2| <= |l3|; shape ``vol.shape + (3,)``."""
    h = hessian(vol, sigma)
    return _sort_by_magnitude(symmetric_eigvals3(*h))


def _vesselness_single(ev: np.ndarray, alpha, beta, c, bright_on_dark) -> np.ndarray:
    l1, l2, l3 = ev[..., 0], ev[..., 1], ev[..., 2]
    a1, a2, a3 = np.abs(l1), np.abs(l2), np.abs(l3)
    with np.errstate(divide="ignore", invalid="ignore"):
        ra = np.where(a3 > 0, a2 / a3, 0.0)
        rb = np.where(a2 * a3 > 0, a1 / np.sqrt(a2 * a3), 0.0)
    s2 = l1 * l1 + l2 * l2 + l3 * l3
    v = (
        (1.0 - np.exp(-(ra**2) / (2 * alpha**2)))
        * np.exp(-(rb**2) / (2 * beta**2))
        * (1.0 - np.exp(-s2 / (2 * c**2)))
    )
    if bright_on_dark:
        v[(l2 > 0) | (l3 > 0)] = 0.0
    else:
        v[(l2 < 0) | (l3 < 0)] = 0.0
    v[a3 == 0] = 0.0
    return v


def frangi_vesselness(vol: np.ndarray, params: FrangiParams | None = None, report: dict | None = None) -> np.ndarray:
    """Multiscale Frangi vesselness, max over scales, in [0, 1].

    When ``report`` is a dict the per-scale ``c`` actually used is stored
    under ``report["c"]``.
    """
    params = params or FrangiParams()
    vol = np.asarray(vol, dtype=np.float64)
    _require_3d(vol)
    out = np.zeros(vol.shape, dtype=np.float64)
    used_c = []
    for sigma in params.scales:
        ev = hessian_eigenvalues(vol, sigma)
        if params.c is not None:
            c = params.c
        else:
            frob = np.sqrt(np.max(np.sum(ev * ev, axis=-1))) if ev.size else 0.0
            c = 0.5 * frob
        used_c.append(float(c))
        if c > 0:
            np.maximum(out, _vesselness_single(ev, params.alpha, params.beta, c, params.bright_on_dark), out=out)
        del ev
    if report is not None:
        report["c"] = used_c
        report["params"] = asdict(params)
    return np.clip(out, 0.0, 1.0)


def _box_sum_2d(a: np.ndarray, radius: int) -> np.ndarray:
    # windowed sums over axes 0 and 1, window clipped at the border
    out = a
    for axis in (0, 1):
        n = out.shape[axis]
        c = np.cumsum(out, axis=axis)
        zero = np.zeros_like(np.take(c, [0], axis=axis))
        c = np.concatenate([zero, c], axis=axis)
        hi = np.minimum(np.arange(n) + radius + 1, n)
        lo = np.maximum(np.arange(n) - radius, 0)
        out = np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)
    return out


def phansalkar_threshold(vol: np.ndarray, params: PhansalkarParams | None = None) -> np.ndarray:
    """Slice-wise Phansalkar local threshold over a square window.

    ``t = m * (1 + p * exp(-q * m) + k * (s / r - 1))`` with the window's
    mean ``m`` and population standard deviation ``s``; the window is
    clipped at the slice border. Works on 2-D images or on every z-slice of
    a 3-D stack.
    """
    params = params or PhansalkarParams()
    img = np.asarray(vol, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if img.ndim != 3:
        raise ValueError(f"expected a 2-D or 3-D volume, got {img.ndim}-D")
    ones = np.ones(img.shape[:2] + (1,), dtype=np.float64)
    count = _box_sum_2d(ones, params.radius)
    mean = _box_sum_2d(img, params.radius) / count
    meansq = _box_sum_2d(img * img, params.radius) / count
    std = np.sqrt(np.maximum(meansq - mean * mean, 0.0))
    t = mean * (1.0 + params.p * np.exp(-params.q * mean) + params.k * (std / params.r - 1.0))
    out = (img > t).astype(np.uint8)
    return out[..., 0] if squeeze else out


def apply_threshold(vol: np.ndarray, t: float) -> np.ndarray:
    if not math.isfinite(t):
        raise ValueError(f"threshold must be finite, got {t}")
    return (np.asarray(vol) > t).astype(np.uint8)


def optimal_threshold_f1(confidence: np.ndarray, gt: np.ndarray, max_candidates: int = 512) -> tuple[float, MetricsReport]:
    """Threshold maximizing voxel F1 of ``confidence > t`` against ``gt``.

    Candidates are the distinct confidence values (thinned to
    ``max_candidates`` evenly spaced ranks when there are more) plus one
    value just below the minimum, so the all-foreground mask is reachable.
    Ties go to the larger threshold.
    """
    conf = np.asarray(confidence, dtype=np.float64).ravel()
    g = np.asarray(gt).ravel().astype(bool)
    if conf.shape != g.shape:
        raise ValueError(f"confidence dims {np.shape(confidence)} differ from ground truth dims {np.shape(gt)}")
    if conf.size == 0:
        return 0.0, metrics_from_counts(0, 0, 0, 0)
    uniq = np.unique(conf)
    if len(uniq) > max_candidates:
        ranks = np.unique(np.round(np.linspace(0, len(uniq) - 1, max_candidates)).astype(np.int64))
        uniq = uniq[ranks]
    cands = np.concatenate([[np.nextafter(uniq[0], -np.inf)], uniq])

    all_sorted = np.sort(conf)
    pos_sorted = np.sort(conf[g])
    n, n_pos = conf.size, pos_sorted.size
    n_pred = n - np.searchsorted(all_sorted, cands, side="right")
    tp = n_pos - np.searchsorted(pos_sorted, cands, side="right")
    fp = n_pred - tp
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 1.0)
    best = int(np.flatnonzero(f1 == f1.max())[-1])
    t = float(cands[best])
    return t, metrics_from_counts(tp[best], fp[best], fn[best], n - tp[best] - fp[best] - fn[best])
