import json

import numpy as np
import pytest

import oracles
from conftest import line_volume
from hyphanet.evaluation import inject_gaps
from hyphanet.features import component_features, cycle_rank, euler_characteristic, skeleton_to_graph
from hyphanet.gaps import GapClosingConfig, close_gaps
from hyphanet.synth import SynthesisConfig, grow_network, tree_to_skeleton
from hyphanet.volume import detect_endpoints, label_components

SMALL = SynthesisConfig(dims=(90, 90, 30), max_branch_length=60)


def test_empty_graph():
    g = skeleton_to_graph(np.zeros((5, 5, 5), dtype=np.uint8))
    assert len(g.nodes) == 0 and len(g.edges) == 0


def test_three_voxel_line_graph():
    g = skeleton_to_graph(line_volume((5, 5, 5), [(1, 2, 2), (2, 2, 2), (3, 2, 2)]))
    assert len(g.nodes) == 3 and len(g.edges) == 2
    assert g.degree.tolist() == [1, 2, 1]


def test_degree_matches_neighbor_count(rng):
    for shape in ((9, 9, 9), (20, 20)):
        vol = (rng.random(shape) < 0.15).astype(np.uint8)
        g = skeleton_to_graph(vol)
        nb = oracles.neighbor_counts(vol)
        assert g.degree.tolist() == [int(nb[tuple(p)]) for p in g.nodes]
        assert g.degree.max() <= 3 ** vol.ndim - 1
        # symmetric, no self edges, component ids consistent with labeling
        assert np.all(g.edges[:, 0] < g.edges[:, 1])
        labels = label_components(vol).labels
        assert g.component.tolist() == [int(labels[tuple(p)]) for p in g.nodes]


def test_straight_line_features():
    vol = line_volume((20, 5, 8), [(x, 2, 5) for x in range(11)])
    rep = component_features(skeleton_to_graph(vol), (1, 1, 1))
    (c,) = rep.components
    assert (c.depth, c.mass_noxels, c.mass_length, c.branch_points, c.endpoints) == (5.0, 11, 10.0, 0, 2)


def test_depth_and_length_use_scale():
    vol = line_volume((5, 5, 8), [(1, 1, z) for z in range(2, 6)])
    (c,) = component_features(skeleton_to_graph(vol), (1, 1, 2.5)).components
    assert c.depth == 12.5 and c.mass_length == pytest.approx(7.5)


def test_y_shape_features():
    center = (6, 6, 2)
    arms = [[(6 - i, 6, 2) for i in range(1, 6)], [(6 + i, 6 + i, 2) for i in range(1, 6)], [(6 + i, 6 - i, 2) for i in range(1, 6)]]
    vol = line_volume((13, 13, 5), [center] + [p for a in arms for p in a])
    (c,) = component_features(skeleton_to_graph(vol)).components
    assert c.branch_points == 1 and c.endpoints == 3 and c.mass_noxels == 16


def test_features_match_other_modules():
    for s in range(8):
        tree = grow_network(SMALL, s)
        skel = tree_to_skeleton(tree, SMALL.dims)
        rep = component_features(skeleton_to_graph(skel))
        assert rep.network_count == label_components(skel).count
        assert sum(c.mass_noxels for c in rep.components) == int(skel.sum())
        assert sum(c.endpoints for c in rep.components) == len(detect_endpoints(skel).endpoints)


def test_closing_gaps_never_lowers_depth_or_adds_networks():
    for s in range(8):
        rec = inject_gaps(grow_network(SMALL, s), SMALL.dims, seed=s)
        before_lab = label_components(rec.skeleton).labels
        before = component_features(skeleton_to_graph(rec.skeleton))
        out, _ = close_gaps(rec.skeleton, GapClosingConfig(max_gap=12, scale=(1, 1, 3)))
        after_lab = label_components(out).labels
        after = {c.component: c for c in component_features(skeleton_to_graph(out)).components}
        assert len(after) <= before.network_count
        for c in before.components:
            host = after_lab[tuple(np.argwhere(before_lab == c.component)[0])]
            assert after[int(host)].depth >= c.depth


def test_report_serialization():
    vol = line_volume((20, 5, 8), [(x, 2, 5) for x in range(11)] + [(x, 4, 1) for x in range(3)])
    rep = component_features(skeleton_to_graph(vol), (1, 1, 2))
    doc = json.loads(rep.to_json())
    assert doc["totals"]["networks"] == 2 and doc["scale"] == [1.0, 1.0, 2.0]
    assert "branch_point" in doc["rules"]
    lines = rep.to_csv().strip().splitlines()
    assert lines[0] == "component,depth,mass_noxels,mass_length,branch_points,endpoints"
    assert len(lines) == 3


def test_scale_length_mismatch():
    g = skeleton_to_graph(line_volume((4, 4, 4), [(1, 1, 1)]))
    with pytest.raises(ValueError):
        component_features(g, (1, 1))


# --- topology ----------------------------------------------------------------------

def ring_2d(n=6):
    img = np.zeros((n + 2, n + 2), dtype=np.uint8)
    img[1, 1:n + 1] = img[n, 1:n + 1] = img[1:n + 1, 1] = img[1:n + 1, n] = 1
    return img


def test_cycle_rank_simple_shapes():
    assert cycle_rank(np.zeros((4, 4, 4))) == 0
    assert cycle_rank(ring_2d()) == 1
    assert cycle_rank(ring_2d()[..., None]) == 1
    assert cycle_rank(np.ones((2, 2, 2))) == 0
    shell = np.ones((3, 3, 3))
    shell[1, 1, 1] = 0
    assert cycle_rank(shell) == 0
    two = np.zeros((10, 20, 3), dtype=np.uint8)
    two[:8, :8, 1] = ring_2d()
    two[:8, 10:18, 1] = ring_2d()
    assert cycle_rank(two) == 2


def test_cycle_rank_ignores_diagonal_corner_triangles():
    # an L-bend drawn with a diagonal step forms a 3-clique in the adjacency graph, not a loop
    vol = line_volume((5, 5), [(0, 0), (1, 0), (2, 0), (2, 1), (1, 1)])
    assert cycle_rank(vol) == 0
    assert cycle_rank(line_volume((4, 4, 4), [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 1)])) == 0


def test_cycle_rank_2d_matches_hole_count(rng):
    for _ in range(40):
        img = (rng.random((12, 12)) < 0.45).astype(np.uint8)
        assert cycle_rank(img) == oracles.holes_2d(img)


def test_euler_characteristic_basics():
    assert euler_characteristic(np.ones((1, 1, 1))) == 1
    assert euler_characteristic(ring_2d()) == 0
    shell = np.ones((3, 3, 3))
    shell[1, 1, 1] = 0
    assert euler_characteristic(shell) == 2
    with pytest.raises(ValueError):
        cycle_rank(np.zeros((2, 2, 2, 2)))
