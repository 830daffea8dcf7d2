"""Synthetic hyphal networks: weighted random-walk growth and stack rendering."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import gaussian_blur, gaussian_kernel1d, neighbor_offsets

__all__ = [
    "SynthesisConfig",
    "Branch",
    "HyphalTree",
    "PchipProfile",
    "pchip_profile",
    "direction_category",
    "turn_direction",
    "grow_network",
    "generate_trees",
    "tree_to_skeleton",
    "render_stack",
    "procedural_background",
    "trees_to_json",
    "trees_from_json",
]

CATEGORIES = ("in_plane", "down", "up")
START_MARGIN = 20
START_DEPTH = (0, 3)
PLACEMENT_ATTEMPTS = 25


@dataclass
class SynthesisConfig:
    dims: tuple[int, int, int] = (500, 500, 150)
    networks_per_stack: tuple[int, int] = (1, 5)
    p_keep_direction: float = 0.80
    p_branch: float = 0.04
    direction_weights: dict[str, float] = field(
        default_factory=lambda: {"in_plane": 0.70, "down": 0.25, "up": 0.05}
    )
    max_branch_length: int = 120
    max_branches: int = 40
    intensity_range: tuple[float, float] = (0.5, 1.0)
    control_points: tuple[int, int] = (3, 6)
    blur_sigma: float = 0.75
    noise_variance: float = 0.001
    background: str = "procedural"
    background_sigma: float = 4.0
    background_density: float = 1e-4
    background_amplitude: tuple[float, float] = (0.1, 0.4)

    def __post_init__(self) -> None:
        self.dims = tuple(int(d) for d in self.dims)
        self.networks_per_stack = tuple(int(n) for n in self.networks_per_stack)
        self.intensity_range = tuple(float(v) for v in self.intensity_range)
        self.control_points = tuple(int(v) for v in self.control_points)
        self.background_amplitude = tuple(float(v) for v in self.background_amplitude)
        self.direction_weights = {k: float(self.direction_weights.get(k, 0.0)) for k in CATEGORIES}
        self.validate()

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive sizes, got {self.dims}")
        for name in ("p_keep_direction", "p_branch"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        w = self.direction_weights
        if any(v < 0 for v in w.values()) or not math.isclose(sum(w.values()), 1.0, abs_tol=1e-9):
            raise ValueError(f"direction weights must be nonnegative and sum to 1, got {w}")
        lo, hi = self.intensity_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"intensity range must satisfy 0 <= lo < hi <= 1, got {self.intensity_range}")
        nlo, nhi = self.networks_per_stack
        if not 0 <= nlo <= nhi:
            raise ValueError(f"bad networks_per_stack {self.networks_per_stack}")
        clo, chi = self.control_points
        if not 2 <= clo <= chi:
            raise ValueError(f"control point count range must start at 2 or more, got {self.control_points}")
        if self.max_branch_length < 0 or self.max_branches < 1:
            raise ValueError("max_branch_length must be >= 0 and max_branches >= 1")
        if self.blur_sigma < 0 or self.noise_variance < 0:
            raise ValueError("blur_sigma and noise_variance must be nonnegative (0 disables)")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthesis config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Branch:
    path: np.ndarray  # (L, 3) int64
    parent: tuple[int, int] | None = None


@dataclass
class HyphalTree:
    branches: list[Branch] = field(default_factory=list)

    def noxels(self) -> np.ndarray:
        if not self.branches:
            return np.zeros((0, 3), dtype=np.int64)
        return np.concatenate([b.path for b in self.branches])

    def to_dict(self) -> dict:
        return {
            "branches": [
                {
                    "parent": None if b.parent is None else [int(b.parent[0]), int(b.parent[1])],
                    "path": b.path.tolist(),
                }
                for b in self.branches
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HyphalTree":
        branches = []
        for b in d["branches"]:
            path = np.asarray(b["path"], dtype=np.int64).reshape(-1, 3)
            parent = None if b.get("parent") is None else (int(b["parent"][0]), int(b["parent"][1]))
            branches.append(Branch(path, parent))
        return cls(branches)


def trees_to_json(trees: list[HyphalTree], dims=None, extra: dict | None = None) -> str:
    doc: dict = {"networks": [t.to_dict() for t in trees]}
    if dims is not None:
        doc["dims"] = [int(d) for d in dims]
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def trees_from_json(text: str) -> tuple[list[HyphalTree], tuple[int, ...] | None]:
    doc = json.loads(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("networks"), list):
        raise ValueError("tree document needs a 'networks' list")
    dims = tuple(doc["dims"]) if "dims" in doc else None
    return [HyphalTree.from_dict(n) for n in doc["networks"]], dims


# ---------------------------------------------------------------------------
# intensity profiles
# ---------------------------------------------------------------------------

def _pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    delta = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d
    for k in range(1, n - 1):
        if delta[k - 1] * delta[k] <= 0:
            d[k] = 0.0
        else:
            w1 = 2 * h[k] + h[k - 1]
            w2 = h[k] + 2 * h[k - 1]
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k])
    d[0] = _pchip_end_slope(h[0], h[1], delta[0], delta[1])
    d[-1] = _pchip_end_slope(h[-1], h[-2], delta[-1], delta[-2])
    return d


def _pchip_end_slope(h0, h1, del0, del1):
    # one-sided three-point estimate, clipped to keep the shape
    d = ((2 * h0 + h1) * del0 - h0 * del1) / (h0 + h1)
    if np.sign(d) != np.sign(del0):
        return 0.0
    if np.sign(del0) != np.sign(del1) and abs(d) > abs(3 * del0):
        return 3 * del0
    return d


class PchipProfile:
    """Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes)."""

    def __init__(self, control_points):
        pts = np.asarray(control_points, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("need at least two control points")
        x, y = pts[:, 0], pts[:, 1]
        if np.any(np.diff(x) <= 0):
            raise ValueError("control point positions must be strictly increasing")
        self.x = x
        self.y = y
        self.slopes = _pchip_slopes(x, y)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        x, y, d = self.x, self.y, self.slopes
        k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
        h = x[k + 1] - x[k]
        s = (t - x[k]) / h
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        return h00 * y[k] + h10 * h * d[k] + h01 * y[k + 1] + h11 * h * d[k + 1]


def pchip_profile(control_points) -> PchipProfile:
    return PchipProfile(control_points)


def _random_profile(rng: np.random.Generator, config: SynthesisConfig) -> PchipProfile:
    lo, hi = config.intensity_range
    clo, chi = config.control_points
    n = int(rng.integers(clo, chi + 1))
    inner = np.sort(rng.uniform(0.0, 1.0, size=n - 2))
    # collisions are measure-zero but would break strict ordering
    xs = np.unique(np.concatenate([[0.0], inner, [1.0]]))
    ys = rng.uniform(lo, hi, size=len(xs))
    return PchipProfile(np.column_stack([xs, ys]))


# ---------------------------------------------------------------------------
# growth
# ---------------------------------------------------------------------------

_DIRECTIONS = neighbor_offsets(3)


def direction_category(d) -> str:
    dz = int(d[2])
    return "in_plane" if dz == 0 else ("down" if dz > 0 else "up")


_DIR_CATEGORY = np.array([CATEGORIES.index(direction_category(d)) for d in _DIRECTIONS])


def turn_direction(d, weights: dict[str, float], rng: np.random.Generator) -> np.ndarray:
    """Pick a new direction with positive dot product against ``d``.

    A category is drawn first by its weight (renormalized over categories
    that still have a candidate), then a direction uniformly within it.
    """
    d = np.asarray(d, dtype=np.int64)
    dots = _DIRECTIONS @ d
    ok = (dots > 0) & np.any(_DIRECTIONS != d, axis=1)
    w = np.array([weights[c] if np.any(ok & (_DIR_CATEGORY == i)) else 0.0 for i, c in enumerate(CATEGORIES)])
    if w.sum() <= 0:
        # only categories with zero weight remain; fall back to uniform
        cands = np.flatnonzero(ok)
    else:
        cat = rng.choice(len(CATEGORIES), p=w / w.sum())
        cands = np.flatnonzero(ok & (_DIR_CATEGORY == cat))
    return _DIRECTIONS[cands[rng.integers(len(cands))]].copy()


def _initial_direction(weights: dict[str, float], rng: np.random.Generator) -> np.ndarray:
    w = np.array([weights["in_plane"], weights["down"]])
    if w.sum() <= 0:
        w = np.ones(2)
    cat = rng.choice(2, p=w / w.sum())
    cands = np.flatnonzero(_DIR_CATEGORY == cat)
    return _DIRECTIONS[cands[rng.integers(len(cands))]].copy()


def _check_dims_for_growth(dims) -> None:
    x, y, z = dims
    if x <= 2 * START_MARGIN or y <= 2 * START_MARGIN or z <= START_DEPTH[1]:
        raise ValueError(
            f"dims {tuple(dims)} too small to place a network "
            f"(need x, y > {2 * START_MARGIN} and z > {START_DEPTH[1]})"
        )


def grow_network(config: SynthesisConfig, seed, start=None, direction=None) -> HyphalTree:
    """Grow one hyphal tree by a weighted random walk.

    Every tip advances one noxel per step. At each step the tip keeps its
    heading with probability ``p_keep_direction``, otherwise turns (never
    by 90 degrees or more), and spawns a side branch with probability
    ``p_branch``. Side branches inherit the parent's remaining step budget,
    so all tips stop at the same generation time. A step that would leave
    the volume ends the branch.
    """
    dims = np.asarray(config.dims, dtype=np.int64)
    rng = np.random.default_rng(seed)
    if start is None:
        _check_dims_for_growth(dims)
        start = np.array([
            rng.integers(START_MARGIN, dims[0] - START_MARGIN),
            rng.integers(START_MARGIN, dims[1] - START_MARGIN),
            rng.integers(START_DEPTH[0], START_DEPTH[1] + 1),
        ])
    start = np.asarray(start, dtype=np.int64)
    if np.any(start < 0) or np.any(start >= dims):
        raise ValueError(f"start {start.tolist()} outside dims {dims.tolist()}")
    if direction is None:
        direction = _initial_direction(config.direction_weights, rng)
    direction = np.asarray(direction, dtype=np.int64)

    weights = config.direction_weights
    branches: list[Branch] = []
    queue = deque([(start, direction, config.max_branch_length, None)])
    while queue and len(branches) < config.max_branches:
        pos, d, budget, parent = queue.popleft()
        idx = len(branches)
        path = [pos]
        for step in range(budget):
            if rng.random() >= config.p_keep_direction:
                d = turn_direction(d, weights, rng)
            nxt = pos + d
            if np.any(nxt < 0) or np.any(nxt >= dims):
                break
            pos = nxt
            path.append(pos)
            if rng.random() < config.p_branch and len(branches) + len(queue) + 1 < config.max_branches:
                cd = turn_direction(d, weights, rng)
                cstart = pos + cd
                if np.all(cstart >= 0) and np.all(cstart < dims):
                    queue.append((cstart, cd, budget - step - 1, (idx, len(path) - 1)))
        branches.append(Branch(np.array(path, dtype=np.int64), parent))
    return HyphalTree(branches)


def _dilated_ids(coords: np.ndarray, dims) -> np.ndarray:
    pts = (coords[:, None, :] + np.vstack([np.zeros((1, 3), np.int64), _DIRECTIONS])[None]).reshape(-1, 3)
    pts = pts[np.all((pts >= 0) & (pts < np.asarray(dims)), axis=1)]
    return np.unique(np.ravel_multi_index(tuple(pts.T), tuple(dims), order="F"))


def generate_trees(config: SynthesisConfig, seed: int) -> list[HyphalTree]:
    """Grow the networks of one stack, keeping them mutually non-adjacent.

    A network that would touch an earlier one is regrown from the next
    attempt's seed; after ``PLACEMENT_ATTEMPTS`` failures it is dropped.
    """
    _check_dims_for_growth(config.dims)
    rng = np.random.default_rng([seed, 0])
    lo, hi = config.networks_per_stack
    count = int(rng.integers(lo, hi + 1))
    trees: list[HyphalTree] = []
    occupied = np.zeros(0, dtype=np.int64)
    for i in range(count):
        for attempt in range(PLACEMENT_ATTEMPTS):
            tree = grow_network(config, [seed, 1, i, attempt])
            ids = np.ravel_multi_index(tuple(tree.noxels().T), config.dims, order="F")
            if not np.isin(ids, occupied).any():
                trees.append(tree)
                occupied = np.union1d(occupied, _dilated_ids(tree.noxels(), config.dims))
                break
    return trees


def tree_to_skeleton(trees, dims) -> np.ndarray:
    """Binary volume that is 1 exactly on the union of branch paths."""
    if isinstance(trees, HyphalTree):
        trees = [trees]
    out = np.zeros(tuple(dims), dtype=np.uint8)
    for tree in trees:
        pts = tree.noxels()
        if len(pts) == 0:
            continue
        if np.any(pts < 0) or np.any(pts >= np.asarray(dims)):
            bad = pts[np.any((pts < 0) | (pts >= np.asarray(dims)), axis=1)][0]
            raise ValueError(f"noxel {bad.tolist()} lies outside dims {list(dims)}")
        out[tuple(pts.T)] = 1
    return out


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def procedural_background(dims, config: SynthesisConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-slice field of sparse Gaussian blobs with peak heights in the amplitude range."""
    nx, ny, nz = dims
    impulses = np.zeros(dims, dtype=np.float64)
    n = int(rng.binomial(nx * ny * nz, config.background_density))
    if n:
        lin = rng.integers(0, nx * ny * nz, size=n)
        amp = rng.uniform(*config.background_amplitude, size=n)
        ix = np.unravel_index(lin, dims, order="F")
        np.maximum.at(impulses, ix, amp)
    kernel = gaussian_kernel1d(config.background_sigma)
    out = impulses
    for axis in (0, 1):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="constant")
    out /= kernel.max() ** 2
    return np.clip(out, 0.0, 1.0)


def _read_slice(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float64)
        if arr.size and arr.max() > 1.0:
            arr = arr / arr.max()
        return arr
    from .io import read_pgm

    return read_pgm(path)


def directory_background(directory, dims, rng: np.random.Generator) -> np.ndarray:
    """Each z-slice draws one background image from ``directory``.

    Slice files are ``.pgm`` or 2-D ``.npy`` arrays indexed ``[x, y]``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"background directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix in (".pgm", ".npy"))
    if not files:
        raise FileNotFoundError(f"background directory {directory} holds no .pgm/.npy slices")
    slices = []
    for f in files:
        arr = _read_slice(f)
        if arr.shape != tuple(dims[:2]):
            raise OSError(f"background slice {f.name} has shape {arr.shape}, expected {tuple(dims[:2])}")
        slices.append(np.clip(arr, 0.0, 1.0))
    pick = rng.integers(len(slices), size=dims[2])
    return np.stack([slices[i] for i in pick], axis=2)


def render_stack(trees: list[HyphalTree], config: SynthesisConfig, seed) -> tuple[np.ndarray, np.ndarray]:
    """Render trees into a grayscale stack and its ground-truth centerline mask.

    Steps, in order: per-branch PCHIP intensity along the path, Gaussian
    defocus blur, background composited by per-voxel max, additive
    zero-mean Gaussian noise, clamp to [0, 1]. Each stage draws from its
    own child seed so disabling one stage leaves the others unchanged.
    """
    dims = tuple(config.dims)
    profile_ss, background_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    prng = np.random.default_rng(profile_ss)

    stack = np.zeros(dims, dtype=np.float64)
    for tree in trees:
        for branch in tree.branches:
            profile = _random_profile(prng, config)
            n = len(branch.path)
            arc = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
            values = profile(arc)
            np.maximum.at(stack, tuple(branch.path.T), values)
    gt = tree_to_skeleton(trees, dims)

    if config.blur_sigma > 0:
        stack = gaussian_blur(stack, config.blur_sigma)

    if config.background == "procedural":
        stack = np.maximum(stack, procedural_background(dims, config, np.random.default_rng(background_ss)))
    elif config.background != "none":
        stack = np.maximum(stack, directory_background(config.background, dims, np.random.default_rng(background_ss)))

    if config.noise_variance > 0:
        noise = np.random.default_rng(noise_ss).normal(0.0, math.sqrt(config.noise_variance), size=dims)
        stack = stack + noise
    return np.clip(stack, 0.0, 1.0), gt
