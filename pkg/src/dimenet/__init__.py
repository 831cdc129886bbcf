"""OIS intrinsics rectification: discrepancy features, a ΔK regressor and a differentiable PnP layer."""
from .errors import *  # noqa: F401,F403
from .geometry import (
    DEFAULT_PNP,
    Correspondences,
    Intrinsics,
    PnpConfig,
    Pose,
    mle_refine_intrinsics,
    project,
    reprojection_errors,
    solve_pnp,
)
from .features import FEATURE_MASKS, GridConfig, build_point_features, compute_pmd, feature_vector, gridify, occupancy_metrics
from .mlp import MLP, load_model, mlp_backward, mlp_forward, mlp_init, save_model
from .bpnp import bpnp_backward, bpnp_forward, loss_reprojection
from .training import TrainConfig, TrainSample, default_model, infer_k, train
from .simulator import RigSpec, ManifoldConfig, ViewConfig, drop_cells, drop_points, inject_noise, simulate_dataset
from .io import DatasetFile, read_dataset, write_dataset
from .evaluation import EvalReport, evaluate, rho, run_ablation

__version__ = "0.1.0"
