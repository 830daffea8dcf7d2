"""Gap injection, endpoint-level reconnection scoring and (gap length, z-scale) sweeps."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gaps import GapClosingConfig, GapClosingReport, candidate_edges, close_passes
from .metrics import MetricsReport, mean_metrics, metrics_from_counts, voxel_metrics
from .synth import HyphalTree, tree_to_skeleton
from .volume import EndpointScan, _neighbor_count, detect_endpoints, label_components

__all__ = [
    "MetricsReport",
    "voxel_metrics",
    "GapInjectionRecord",
    "inject_gaps",
    "endpoint_connection_metrics",
    "SweepSurface",
    "parameter_sweep",
]


@dataclass
class GapInjectionRecord:
    skeleton: np.ndarray  # gapped binary volume
    removed_runs: list[dict] = field(default_factory=list)  # {network, branch, noxels}
    flank_pairs: list[tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)


def _valid_starts(eligible: np.ndarray, taken: np.ndarray, size: int) -> np.ndarray:
    # start s removes path[s:s+size]; flanks path[s-1], path[s+size] must keep a
    # fragment of >= 2 noxels on each side, so path[s-2:s] and path[s+size:s+size+2]
    # must survive as well
    n = len(eligible)
    starts = []
    for s in range(2, n - size - 1):
        if not eligible[s:s + size].all():
            continue
        if taken[s - 2:s + size + 2].any():
            continue
        starts.append(s)
    return np.array(starts, dtype=np.int64)


def inject_gaps(
    trees,
    dims,
    gap_count_range: tuple[int, int] = (1, 5),
    gap_size_range: tuple[int, int] = (1, 10),
    seed=0,
) -> GapInjectionRecord:
    """Cut random interior runs out of every branch of the ground-truth trees.

    Each branch draws a gap count from ``gap_count_range`` and a size per
    gap from ``gap_size_range``. A gap only removes noxels that belong to
    that branch alone and have exactly two skeleton neighbors, gaps on one
    branch keep at least two noxels between them, and a gap is reverted
    unless both flanks end up as endpoints of different components. Gaps
    that do not fit are listed in ``skipped``.
    """
    if isinstance(trees, HyphalTree):
        trees = [trees]
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(seed)
    skel = tree_to_skeleton(trees, dims)
    nbrs = _neighbor_count(skel)
    owners = np.zeros(dims, dtype=np.int32)
    for tree in trees:
        for b in tree.branches:
            if len(b.path):
                np.add.at(owners, tuple(np.unique(b.path, axis=0).T), 1)

    gapped = skel.copy()
    runs: list[dict] = []
    flanks = []
    skipped: list[dict] = []
    lo_c, hi_c = gap_count_range
    lo_s, hi_s = gap_size_range
    for ti, tree in enumerate(trees):
        for bi, branch in enumerate(tree.branches):
            path = branch.path
            ix = tuple(path.T)
            eligible = (nbrs[ix] == 2) & (owners[ix] == 1)
            taken = np.zeros(len(path), dtype=bool)
            wanted = int(rng.integers(lo_c, hi_c + 1))
            for _ in range(wanted):
                size = int(rng.integers(lo_s, hi_s + 1))
                starts = _valid_starts(eligible, taken, size)
                if len(starts) == 0:
                    skipped.append({"network": ti, "branch": bi, "size": size, "reason": "no room"})
                    continue
                s = int(starts[rng.integers(len(starts))])
                taken[s:s + size] = True
                runs.append({"network": ti, "branch": bi, "noxels": path[s:s + size].copy()})
                flanks.append((tuple(int(v) for v in path[s - 1]), tuple(int(v) for v in path[s + size])))
                gapped[tuple(path[s:s + size].T)] = 0

    # drop gaps whose flanks are not separated endpoints, until all remaining are clean
    while True:
        scan = detect_endpoints(gapped)
        labels = label_components(gapped)
        ends = {tuple(int(v) for v in e) for e in scan.endpoints}
        bad = [
            i for i, (a, b) in enumerate(flanks)
            if a not in ends or b not in ends or labels.labels[a] == labels.labels[b]
        ]
        if not bad:
            break
        for i in reversed(bad):
            gapped[tuple(runs[i]["noxels"].T)] = 1
            skipped.append({
                "network": runs[i]["network"], "branch": runs[i]["branch"],
                "size": len(runs[i]["noxels"]), "reason": "flanks not separated endpoints",
            })
            del runs[i]
            del flanks[i]
    return GapInjectionRecord(gapped, runs, flanks, skipped)


def _connected_endpoints(edges, endpoints: np.ndarray) -> np.ndarray:
    """Mask of endpoints touched by an accepted edge (exact source, or target within Chebyshev 1)."""
    mask = np.zeros(len(endpoints), dtype=bool)
    if len(endpoints) == 0 or not edges:
        return mask
    src = np.array([e.source for e in edges], dtype=np.int64)
    tgt = np.array([e.target for e in edges], dtype=np.int64)
    for k, p in enumerate(endpoints):
        if np.any(np.all(src == p, axis=1)) or np.any(np.max(np.abs(tgt - p), axis=1) <= 1):
            mask[k] = True
    return mask


def endpoint_connection_metrics(
    report: GapClosingReport,
    record: GapInjectionRecord,
    endpoints: EndpointScan | None = None,
) -> MetricsReport:
    """Score reconnections endpoint by endpoint against the injected gaps."""
    if endpoints is None:
        endpoints = detect_endpoints(record.skeleton)
    elif endpoints.neighbor_score.shape != record.skeleton.shape:
        raise ValueError(
            f"endpoint scan dims {endpoints.neighbor_score.shape} differ from record dims {record.skeleton.shape}"
        )
    for e in report.edges_added:
        if len(e.source) != record.skeleton.ndim or any(
            not 0 <= c < d for c, d in zip(e.source + e.target, record.skeleton.shape * 2)
        ):
            raise ValueError("gap closing report does not belong to this record (edge outside its dims)")
    return _endpoint_metrics(report.edges_added, endpoints.endpoints, record.flank_pairs)


def _endpoint_metrics(edges, endpoints: np.ndarray, flank_pairs, offset=None) -> MetricsReport:
    truth_set = {p for pair in flank_pairs for p in pair}
    if offset is not None:
        truth_set = {tuple(int(c) - int(o) for c, o in zip(p, offset)) for p in truth_set}
    truth = np.array([tuple(int(v) for v in p) in truth_set for p in endpoints], dtype=bool)
    found = _connected_endpoints(edges, endpoints)
    tp = int(np.count_nonzero(found & truth))
    fp = int(np.count_nonzero(found & ~truth))
    fn = int(np.count_nonzero(~found & truth))
    tn = int(np.count_nonzero(~found & ~truth))
    return metrics_from_counts(tp, fp, fn, tn)


@dataclass
class SweepSurface:
    l_values: list[float]
    s_z_values: list[float]
    precision: np.ndarray  # (len(l_values), len(s_z_values))
    recall: np.ndarray
    f1: np.ndarray

    def peak(self, metric: str = "f1") -> tuple[float, float, float]:
        grid = getattr(self, metric)
        i, j = np.unravel_index(int(np.argmax(grid)), grid.shape)
        return float(grid[i, j]), self.l_values[i], self.s_z_values[j]

    def to_dict(self) -> dict:
        return {
            "l_values": list(self.l_values),
            "s_z_values": list(self.s_z_values),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "peaks": {
                name: dict(zip(("value", "l", "s_z"), self.peak(name))) for name in ("precision", "recall", "f1")
            },
        }

    def write(self, out_dir, extra: dict | None = None) -> None:
        """One CSV per metric (header row: s_z; first column: l) plus ``surface.json``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in ("precision", "recall", "f1"):
            grid = getattr(self, name)
            with open(out_dir / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["l\\s_z"] + [repr(float(s)) for s in self.s_z_values])
                for l, row in zip(self.l_values, grid):
                    w.writerow([repr(float(l))] + [repr(float(v)) for v in row])
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        (out_dir / "surface.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _crop(record: GapInjectionRecord):
    fg = np.argwhere(record.skeleton)
    if len(fg) == 0:
        return record.skeleton, np.zeros(record.skeleton.ndim, dtype=np.int64)
    lo = np.maximum(fg.min(axis=0) - 1, 0)
    hi = np.minimum(fg.max(axis=0) + 2, record.skeleton.shape)
    return record.skeleton[tuple(slice(a, b) for a, b in zip(lo, hi))], lo


def _sweep_record(record: GapInjectionRecord, l_values, s_z_values):
    # Straight lines stay inside the bounding box of their ends, so cropping
    # to the foreground box loses nothing. Labels and endpoints do not depend
    # on (l, s_z); the nearest noxel per component does not depend on l, so
    # the first pass's candidates at any l are those at l_max filtered by weight.
    skel, offset = _crop(record)
    labels = label_components(skel)
    scan = detect_endpoints(skel)
    l_max = max(l_values)
    out = np.zeros((len(l_values), len(s_z_values)), dtype=object)
    for j, sz in enumerate(s_z_values):
        scale = (1.0,) * (skel.ndim - 1) + (float(sz),)
        edges = candidate_edges(skel, labels, scan, GapClosingConfig(max_gap=l_max, scale=scale))
        for i, l in enumerate(l_values):
            config = GapClosingConfig(max_gap=l, scale=scale)
            work = skel.astype(np.uint8, copy=True)
            accepted, _ = close_passes(work, labels, scan.endpoints, [e for e in edges if e.weight < l], config)
            out[i, j] = _endpoint_metrics(accepted, scan.endpoints, record.flank_pairs, offset)
    return out


def parameter_sweep(records, l_values, s_z_values, threads: int = 1) -> SweepSurface:
    """Mean endpoint metrics of gap closing with scale (1, 1, s_z) and gap length l.

    Cell (i, j) equals averaging ``endpoint_connection_metrics`` of
    ``close_gaps`` at ``l_values[i]``, ``s_z_values[j]`` over the records.
    """
    records = list(records)
    l_values = [float(v) for v in l_values]
    s_z_values = [float(v) for v in s_z_values]
    if not records or not l_values or not s_z_values:
        raise ValueError("parameter sweep needs records and nonempty l / s_z grids")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_record = list(pool.map(lambda r: _sweep_record(r, l_values, s_z_values), records))
    else:
        per_record = [_sweep_record(r, l_values, s_z_values) for r in records]
    shape = (len(l_values), len(s_z_values))
    prec, rec, f1 = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for i in range(shape[0]):
        for j in range(shape[1]):
            prec[i, j], rec[i, j], f1[i, j] = mean_metrics(r[i, j] for r in per_record)
    return SweepSurface(l_values, s_z_values, prec, rec, f1)
