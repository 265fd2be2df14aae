"""Learn provably stable lifted linear dynamics from trajectory data.

The package fits a neural lifting (encoder/decoder) around a linear
transition matrix and keeps that matrix inside a certified stability region
throughout training, using exact per-row projections instead of a generic
constrained solver. The certificate is a per-row piecewise-linear margin
whose nonnegativity implies a spectral radius of at most one and forward
invariance of the unit hypercube in the lifted space.
"""

from .autodiff import DiffValue, Tape
from .data import (
    Dataset,
    Preprocessing,
    Trajectory,
    assign_split,
    center_to_equilibrium,
    load_manifest,
    load_trajectories,
    load_trajectory,
    normalize,
    resample,
    resample_dataset,
    synth_handwriting_like,
    synth_stable_spiral,
    write_manifest,
    write_trajectory_csv,
)
from .edmd import SnapshotPair, edmd_fit, lift_dataset, monomial_features
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateDataError,
    DimensionError,
    KoopstabError,
    NumericError,
    ParseError,
    SingularMatrixError,
)
from .metrics import MetricsReport, build_report, nmse, norm_std
from .model import (
    KoopmanModel,
    LossWeights,
    MlpParams,
    load_checkpoint,
    save_checkpoint,
    sliding_window_loss,
    total_loss,
)
from .projection import (
    barrier_threshold,
    brute_force_row_qp,
    pgd_project,
    project_row,
    project_row_asymmetric,
    project_row_symmetric,
)
from .stability import (
    BarrierReport,
    Certificate,
    Polyhedron,
    barrier_values,
    certify_stable,
    inward_pointing_check,
    scale_set,
    spectral_radius,
    unit_hypercube,
)
from .trainer import TrainConfig, TrainHistory, adam_step, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BarrierReport",
    "Certificate",
    "ConfigError",
    "ContractError",
    "DataError",
    "Dataset",
    "DegenerateDataError",
    "DiffValue",
    "DimensionError",
    "KoopmanModel",
    "KoopstabError",
    "LossWeights",
    "MetricsReport",
    "MlpParams",
    "NumericError",
    "ParseError",
    "Polyhedron",
    "Preprocessing",
    "SingularMatrixError",
    "SnapshotPair",
    "Tape",
    "TrainConfig",
    "TrainHistory",
    "Trajectory",
    "adam_step",
    "assign_split",
    "barrier_threshold",
    "barrier_values",
    "brute_force_row_qp",
    "build_report",
    "center_to_equilibrium",
    "certify_stable",
    "edmd_fit",
    "evaluate",
    "inward_pointing_check",
    "lift_dataset",
    "load_checkpoint",
    "load_manifest",
    "load_trajectories",
    "load_trajectory",
    "monomial_features",
    "nmse",
    "norm_std",
    "normalize",
    "pgd_project",
    "project_row",
    "project_row_asymmetric",
    "project_row_symmetric",
    "resample",
    "resample_dataset",
    "save_checkpoint",
    "scale_set",
    "sliding_window_loss",
    "spectral_radius",
    "synth_handwriting_like",
    "synth_stable_spiral",
    "total_loss",
    "train",
    "unit_hypercube",
    "write_manifest",
    "write_trajectory_csv",
]
