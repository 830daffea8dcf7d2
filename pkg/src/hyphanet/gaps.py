"""Skeleton gap closing by a minimum spanning tree over component supernodes.

Noxels of one connected component are joined by near-zero edges, so for
Kruskal's algorithm each component behaves as a single supernode. Candidate
edges run from an endpoint to the nearest noxel of every other component
closer than the gap length; accepted edges are drawn back with the N-D
Bresenham line.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .volume import (
    ComponentLabels,
    EndpointScan,
    check_binary,
    detect_endpoints,
    label_components,
    linear_index,
    neighbor_offsets,
    rasterize_line,
)

__all__ = [
    "GapClosingConfig",
    "CandidateEdge",
    "GapClosingReport",
    "scaled_distance",
    "candidate_edges",
    "geodesic_time",
    "kruskal_select",
    "write_edges",
    "close_passes",
    "close_gaps",
]

DISTANCE_MODES = ("scaled_euclidean", "geodesic_time")


@dataclass
class GapClosingConfig:
    max_gap: float
    scale: tuple[float, ...] | None = None  # None: 1 along every axis
    distance_mode: str = "scaled_euclidean"
    epsilon: float = 1e-9
    isolated_as_endpoints: bool = False

    def __post_init__(self) -> None:
        if not self.max_gap > 0:
            raise ValueError(f"max_gap must be positive, got {self.max_gap}")
        if self.scale is not None:
            self.scale = tuple(float(s) for s in self.scale)
            if any(not s > 0 for s in self.scale):
                raise ValueError(f"scale components must be positive, got {self.scale}")
        if self.distance_mode not in DISTANCE_MODES:
            raise ValueError(f"distance_mode must be one of {DISTANCE_MODES}, got {self.distance_mode!r}")
        if not 0 < self.epsilon < 1e-3:
            raise ValueError("epsilon must satisfy 0 < epsilon << 1")

    def scale_for(self, ndim: int) -> np.ndarray:
        if self.scale is None:
            return np.ones(ndim)
        if len(self.scale) != ndim:
            raise ValueError(f"scale has {len(self.scale)} entries for a {ndim}-D skeleton")
        return np.asarray(self.scale, dtype=np.float64)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["scale"] is not None:
            d["scale"] = list(d["scale"])
        return d


@dataclass(frozen=True)
class CandidateEdge:
    source: tuple[int, ...]
    target: tuple[int, ...]
    source_component: int
    target_component: int
    weight: float
    source_index: int
    target_index: int

    def sort_key(self):
        return (self.weight, self.source_index, self.target_index)

    def to_dict(self) -> dict:
        return {
            "source": list(self.source),
            "target": list(self.target),
            "source_component": self.source_component,
            "target_component": self.target_component,
            "weight": self.weight,
        }


@dataclass
class GapClosingReport:
    edges_added: list[CandidateEdge] = field(default_factory=list)
    noxels_written: int = 0
    components_before: int = 0
    components_after: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "edges_added": [e.to_dict() for e in self.edges_added],
            "noxels_written": self.noxels_written,
            "components_before": self.components_before,
            "components_after": self.components_after,
            "config": self.config,
        }


def scaled_distance(p, q, scale) -> float:
    diff = (np.asarray(q, dtype=np.float64) - np.asarray(p, dtype=np.float64)) * np.asarray(scale, dtype=np.float64)
    return float(np.sqrt(np.sum(diff * diff)))


def geodesic_time(vol: np.ndarray, path) -> float:
    """Straight-path cost ``1 - (S(a)/2 + S(b)/2 + sum of interior S)``.

    ``path`` runs from ``a`` to ``b`` inclusive; a one-noxel path counts
    that noxel as both ends.
    """
    path = np.asarray(path, dtype=np.int64)
    if path.ndim != 2 or len(path) == 0:
        raise ValueError("path must contain at least one noxel")
    vals = np.asarray(vol, dtype=np.float64)[tuple(path.T)]
    interior = vals[1:-1].sum() if len(vals) > 2 else 0.0
    return float(1.0 - (vals[0] / 2 + vals[-1] / 2 + interior))


def _source_noxels(skel: np.ndarray, endpoints: EndpointScan, include_isolated: bool) -> np.ndarray:
    src = endpoints.endpoints
    if include_isolated:
        iso = np.argwhere(endpoints.neighbor_score == 3**skel.ndim + 1)
        if len(iso):
            src = np.concatenate([src, iso])
            src = src[np.argsort(linear_index(src, skel.shape), kind="stable")]
    return src


def candidate_edges(
    skel: np.ndarray,
    labels: ComponentLabels,
    endpoints: EndpointScan,
    config: GapClosingConfig,
) -> list[CandidateEdge]:
    """Endpoint-to-nearest-noxel edges between distinct components.

    Each endpoint contributes at most one edge per other component, to the
    noxel minimizing the weight (ties: smallest linear index), and only
    if the scaled Euclidean length is strictly below ``max_gap``. In
    geodesic mode the same spatial window applies but the weight and the
    nearest-noxel choice use the geodesic time along the Bresenham path.
    The result is sorted by (weight, source index, target index).
    """
    skel = np.asarray(skel)
    check_binary(skel)
    if labels.labels.shape != skel.shape or endpoints.neighbor_score.shape != skel.shape:
        raise ValueError(
            f"dims mismatch: skeleton {skel.shape}, labels {labels.labels.shape}, "
            f"endpoint scan {endpoints.neighbor_score.shape}"
        )
    sources = _source_noxels(skel, endpoints, config.isolated_as_endpoints)
    return _nearest_edges(skel, labels.labels, sources, config)


def _nearest_edges(skel: np.ndarray, lab: np.ndarray, sources: np.ndarray, config: GapClosingConfig) -> list[CandidateEdge]:
    scale = config.scale_for(skel.ndim)
    coords = np.argwhere(skel)
    if len(coords) == 0 or len(sources) == 0:
        return []
    comp = lab[tuple(coords.T)].astype(np.int64)
    lin = linear_index(coords, skel.shape)
    tree = cKDTree(coords * scale)
    geodesic = config.distance_mode == "geodesic_time"

    src_lin = linear_index(sources, skel.shape)
    src_comp = lab[tuple(sources.T)].astype(np.int64)
    # small slack so points at exactly max_gap are still examined, then filtered strictly
    hits = tree.query_ball_point(sources * scale, r=config.max_gap * (1 + 1e-9) + 1e-12)

    edges: list[CandidateEdge] = []
    for e, e_lin, e_comp, idx in zip(sources, src_lin, src_comp, hits):
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == 0:
            continue
        idx = idx[comp[idx] != e_comp]
        if len(idx) == 0:
            continue
        diff = (coords[idx] - e) * scale
        d = np.sqrt(np.sum(diff * diff, axis=1))
        keep = d < config.max_gap
        idx, d = idx[keep], d[keep]
        if len(idx) == 0:
            continue
        if geodesic:
            w = np.array([geodesic_time(skel, rasterize_line(e, coords[i], skel.shape)) for i in idx])
        else:
            w = d
        order = np.lexsort((lin[idx], w, comp[idx]))
        idx, w = idx[order], w[order]
        first = np.ones(len(idx), dtype=bool)
        first[1:] = comp[idx][1:] != comp[idx][:-1]
        for i, wi in zip(idx[first], w[first]):
            edges.append(
                CandidateEdge(
                    source=tuple(int(v) for v in e),
                    target=tuple(int(v) for v in coords[i]),
                    source_component=int(e_comp),
                    target_component=int(comp[i]),
                    weight=float(wi),
                    source_index=int(e_lin),
                    target_index=int(lin[i]),
                )
            )
    edges.sort(key=CandidateEdge.sort_key)
    return edges


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def kruskal_select(edges: list[CandidateEdge], n_components: int) -> list[CandidateEdge]:
    """Kruskal over component ids 1..n_components; edges must already be sorted."""
    ds = _DisjointSet(n_components + 1)
    return [e for e in edges if ds.union(e.source_component, e.target_component)]


def write_edges(skel: np.ndarray, edges: list[CandidateEdge]) -> tuple[np.ndarray, int]:
    """Draw each edge's Bresenham line; returns the new volume and noxels turned on."""
    out = np.array(skel, dtype=np.uint8, copy=True)
    written = 0
    for e in edges:
        path = rasterize_line(e.source, e.target, out.shape)
        ix = tuple(path.T)
        written += int(np.count_nonzero(out[ix] == 0))
        out[ix] = 1
    return out, written


@lru_cache(maxsize=None)
def _cell_tables(ndim: int):
    offs = np.array(list(np.ndindex(*(3,) * ndim)), dtype=np.int64) - 1
    bits = np.array(list(np.ndindex(*(2,) * ndim)), dtype=np.int64)
    return offs, bits


def _euler_delta(vol: np.ndarray, new: np.ndarray) -> int:
    """Change of the Euler characteristic when ``new`` noxels are switched on.

    On the doubled grid a noxel ``x`` owns the cells ``2x + 1 + {-1, 0, 1}^N``;
    only cells of the new noxels that no existing noxel already owns
    contribute, each with sign (-1)^dim.
    """
    offs, bits = _cell_tables(vol.ndim)
    dshape = tuple(2 * s + 1 for s in vol.shape)
    cells = (2 * new[:, None, :] + 1 + offs[None]).reshape(-1, vol.ndim)
    ids = np.unique(np.ravel_multi_index(tuple(cells.T), dshape))
    cells = np.stack(np.unravel_index(ids, dshape), axis=1)
    odd = cells % 2 == 1
    base = (cells - 1) // 2
    # owners of a cell: along odd axes one noxel, along even axes two
    cand = base[:, None, :] + bits[None]
    ok = ~np.any(odd[:, None, :] & (bits[None] == 1), axis=2)
    ok &= np.all((cand >= 0) & (cand < np.asarray(vol.shape)), axis=2)
    hit = np.zeros(ok.shape, dtype=bool)
    hit[ok] = vol[tuple(cand[ok].T)] != 0
    fresh = ~hit.any(axis=1)
    sign = np.where(odd.sum(axis=1) % 2 == 0, 1, -1)
    return int(sign[fresh].sum())


def _select_and_write(out: np.ndarray, lab: np.ndarray, ds: _DisjointSet, edges: list[CandidateEdge]):
    """Kruskal over sorted edges, drawing each accepted line into ``out`` in place.

    A line is drawn only if its new noxels touch exactly the two components
    being merged and add no loop (the Euler characteristic drops by one,
    as when two trees are joined). Otherwise the edge is skipped and the
    next one considered. ``lab`` and ``ds`` are updated along with ``out``.
    """
    offs = neighbor_offsets(out.ndim)
    shape = np.asarray(out.shape)
    accepted, drawn = [], []
    for e in edges:
        ra, rb = ds.find(e.source_component), ds.find(e.target_component)
        if ra == rb:
            continue
        path = rasterize_line(e.source, e.target, out.shape)
        new = path[out[tuple(path.T)] == 0]
        if len(new) == 0:
            continue
        nb = (new[:, None, :] + offs[None]).reshape(-1, out.ndim)
        nb = nb[np.all((nb >= 0) & (nb < shape), axis=1)]
        nb = nb[out[tuple(nb.T)] != 0]
        touched = {ds.find(int(c)) for c in np.unique(lab[tuple(nb.T)])}
        if touched != {ra, rb} or _euler_delta(out, new) != -1:
            continue
        out[tuple(new.T)] = 1
        lab[tuple(new.T)] = ra
        ds.union(ra, rb)
        accepted.append(e)
        drawn.append(new)
    return accepted, drawn


def close_passes(
    out: np.ndarray,
    labels: ComponentLabels,
    sources: np.ndarray,
    edges: list[CandidateEdge],
    config: GapClosingConfig,
) -> tuple[list[CandidateEdge], int]:
    """Run guarded Kruskal passes on ``out`` in place until one adds nothing.

    ``labels``, ``sources`` and ``edges`` describe ``out`` as given. Between
    passes they are updated incrementally: drawn lines join the merged
    component, and a source stops being one once a drawn noxel touches it
    (line interiors always have two neighbors, so no new endpoints appear).
    Returns (accepted edges, noxels written).
    """
    lab = labels.labels.astype(np.int64, copy=True)
    ds = _DisjointSet(labels.count + 1)
    sources = np.asarray(sources, dtype=np.int64).reshape(-1, out.ndim)
    added: list[CandidateEdge] = []
    written = 0
    while True:
        accepted, drawn = _select_and_write(out, lab, ds, edges)
        if not accepted:
            return added, written
        added.extend(accepted)
        new = np.concatenate(drawn)
        written += len(new)
        if len(sources):
            cheb = np.abs(sources[:, None, :] - new[None]).max(axis=2)
            sources = sources[cheb.min(axis=1) > 1]
        roots = np.array([ds.find(i) for i in range(labels.count + 1)], dtype=np.int64)
        lab = roots[lab]
        edges = _nearest_edges(out, lab, sources, config)


def close_gaps(skel: np.ndarray, config: GapClosingConfig) -> tuple[np.ndarray, GapClosingReport]:
    """Close gaps shorter than ``config.max_gap`` without creating loops.

    Runs label -> endpoints -> candidate edges -> guarded Kruskal -> draw,
    and repeats on its own output until a pass adds nothing, so the result
    is a fixed point. The first pass does almost all of the work; later
    passes pick up edges whose nearest target is a freshly drawn line.
    """
    skel = np.asarray(skel)
    check_binary(skel)
    out = skel.astype(np.uint8, copy=True)
    labels = label_components(out)
    sources = _source_noxels(out, detect_endpoints(out), config.isolated_as_endpoints)
    edges = _nearest_edges(out, labels.labels, sources, config)
    added, written = close_passes(out, labels, sources, edges, config)
    report = GapClosingReport(
        edges_added=added,
        noxels_written=written,
        components_before=labels.count,
        components_after=labels.count - len(added),
        config=config.to_dict(),
    )
    return out, report
