"""Synthetic hyphal stacks, vessel segmentation, N-D skeleton gap closing and evaluation."""
from .evaluation import (
    GapInjectionRecord,
    SweepSurface,
    endpoint_connection_metrics,
    inject_gaps,
    parameter_sweep,
)
from .features import FeatureReport, component_features, cycle_rank, skeleton_to_graph
from .gaps import CandidateEdge, GapClosingConfig, GapClosingReport, candidate_edges, close_gaps, geodesic_time, kruskal_select
from .metrics import MetricsReport, voxel_metrics
from .segmentation import (
    FrangiParams,
    PhansalkarParams,
    apply_threshold,
    frangi_vesselness,
    hessian_eigenvalues,
    optimal_threshold_f1,
    phansalkar_threshold,
)
from .synth import HyphalTree, SynthesisConfig, generate_trees, grow_network, pchip_profile, render_stack, tree_to_skeleton
from .volume import Volume, detect_endpoints, gaussian_blur, label_components, rasterize_line

__version__ = "0.1.0"
