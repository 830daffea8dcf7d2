"""N-D grid primitives shared by every stage of the pipeline.

Arrays are indexed ``[x, y, z, ...]`` and linearized x-fastest (Fortran
order), so "linear index" below always means
``np.ravel_multi_index(coords, shape, order="F")``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "Volume",
    "EndpointScan",
    "ComponentLabels",
    "check_binary",
    "linear_index",
    "neighbor_offsets",
    "label_components",
    "detect_endpoints",
    "rasterize_line",
    "gaussian_kernel1d",
    "gaussian_blur",
]


@dataclass
class Volume:
    """A dense grid plus per-axis physical step sizes.

    ``kind`` is ``"binary"`` (values in {0, 1}, stored as uint8) or
    ``"gray"`` (finite float values in [0, 1]).
    """

    data: np.ndarray
    scale: tuple[float, ...] = ()
    kind: str = "gray"

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if not self.scale:
            self.scale = (1.0,) * self.data.ndim
        self.scale = tuple(float(s) for s in self.scale)
        if len(self.scale) != self.data.ndim:
            raise ValueError(f"scale has {len(self.scale)} entries for a {self.data.ndim}-D volume")
        if any(s <= 0 or not math.isfinite(s) for s in self.scale):
            raise ValueError(f"scale components must be positive, got {self.scale}")
        if self.kind == "binary":
            check_binary(self.data)
            self.data = self.data.astype(np.uint8, copy=False)
        elif self.kind == "gray":
            if not np.all(np.isfinite(self.data)):
                raise ValueError("grayscale volume contains non-finite values")
            if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
                raise ValueError("grayscale volume values must lie in [0, 1]")
        else:
            raise ValueError(f"unknown volume kind {self.kind!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.data.shape)


@dataclass
class EndpointScan:
    neighbor_score: np.ndarray
    endpoints: np.ndarray  # (E, N) int, sorted by linear index

    def __len__(self) -> int:
        return len(self.endpoints)


@dataclass
class ComponentLabels:
    labels: np.ndarray
    count: int


def check_binary(arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype == bool or arr.size == 0:
        return
    if arr.dtype.kind == "u":
        ok = arr.max() <= 1
    else:
        ok = np.all((arr == 0) | (arr == 1))
    if not ok:
        raise ValueError("expected a binary volume with values in {0, 1}")


def linear_index(coords: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """x-fastest linear index of an (M, N) coordinate array."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(shape))
    if len(coords) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.ravel_multi_index(tuple(coords.T), shape, order="F").astype(np.int64)


def neighbor_offsets(ndim: int) -> np.ndarray:
    """The 3^N - 1 offsets of the full hypercube neighborhood."""
    offs = [o for o in itertools.product((-1, 0, 1), repeat=ndim) if any(o)]
    return np.array(offs, dtype=np.int64)


def label_components(vol: np.ndarray) -> ComponentLabels:
    """Label (3^N - 1)-connected foreground components.

    Labels are numbered 1..K in increasing order of each component's
    smallest linear index, so results do not depend on scan order.
    """
    vol = np.asarray(vol)
    check_binary(vol)
    structure = np.ones((3,) * vol.ndim, dtype=bool)
    raw, count = ndimage.label(vol.astype(bool), structure=structure)
    if count == 0:
        return ComponentLabels(raw.astype(np.int32), 0)
    flat = raw.ravel(order="F")
    fg = np.flatnonzero(flat)
    first = np.full(count + 1, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first, flat[fg], fg)
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, count + 1, dtype=np.int32)
    return ComponentLabels(remap[raw], int(count))


def _score_dtype(ndim: int):
    # the largest score is 2 * 3^N
    return np.uint8 if 2 * 3**ndim <= 255 else np.int64


def _neighbor_count(vol: np.ndarray) -> np.ndarray:
    # Sum of the 3^N - 1 shifted copies; zero padding at the border.
    dtype = _score_dtype(vol.ndim)
    padded = np.pad(vol.astype(dtype), 1)
    out = np.zeros(vol.shape, dtype=dtype)
    n = vol.ndim
    for off in neighbor_offsets(n):
        sl = tuple(slice(1 + o, 1 + o + s) for o, s in zip(off, vol.shape))
        out += padded[sl]
    return out


def detect_endpoints(vol: np.ndarray) -> EndpointScan:
    """Score every noxel with the hypercube endpoint filter.

    The filter weighs each neighbor 1 and the center 3^N + 1, so a score of
    exactly 3^N + 2 singles out foreground noxels with one foreground
    neighbor. A background noxel can reach at most 3^N - 1.
    """
    vol = np.asarray(vol)
    check_binary(vol)
    if vol.ndim < 1:
        raise ValueError("volume must have at least one axis")
    center = 3**vol.ndim + 1
    binary = vol.astype(_score_dtype(vol.ndim))
    score = _neighbor_count(binary)
    score += binary * center
    coords = np.argwhere(score == center + 1)
    if len(coords):
        coords = coords[np.argsort(linear_index(coords, vol.shape), kind="stable")]
    return EndpointScan(score, coords.astype(np.int64))


def rasterize_line(p, q, dims) -> np.ndarray:
    """N-D Bresenham line from ``p`` to ``q`` inclusive.

    Takes ``max_i |q_i - p_i|`` unit steps along the dominant axis, advancing
    every axis by ``(q_i - p_i) / steps`` and rounding half away from zero.
    Integer arithmetic keeps the rounding exact.
    """
    p = np.asarray(p, dtype=np.int64)
    q = np.asarray(q, dtype=np.int64)
    dims = np.asarray(dims, dtype=np.int64)
    if p.shape != q.shape or p.shape != dims.shape:
        raise ValueError("p, q and dims must have the same length")
    for name, pt in (("p", p), ("q", q)):
        if np.any(pt < 0) or np.any(pt >= dims):
            raise ValueError(f"{name}={pt.tolist()} lies outside dims {dims.tolist()}")
    delta = q - p
    steps = int(np.abs(delta).max()) if delta.size else 0
    if steps == 0:
        return p[None, :].copy()
    t = np.arange(steps + 1, dtype=np.int64)[:, None]
    # position = p + t*delta/steps >= 0, so half-away-from-zero is floor(x + 1/2)
    num = 2 * (p * steps + t * delta) + steps
    return num // (2 * steps)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(vol: np.ndarray, sigma: float, clamp: bool = True) -> np.ndarray:
    """Separable Gaussian blur, radius ceil(3 sigma), zero padding."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kernel = gaussian_kernel1d(sigma)
    out = np.asarray(vol, dtype=np.float64)
    for axis in range(out.ndim):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="constant", cval=0.0)
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out
