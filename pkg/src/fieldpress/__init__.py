"""Streaming compression toolkit for time-evolving 2D grid fields.

An adaptive temporal selector decides which snapshots of a streamed
trajectory to keep, and a neural-field codec with continual fine-tuning and
low-rank residual updates compresses each kept snapshot. Reports cover
retention, per-snapshot fidelity, and spatial/total compression ratios.
"""

from .grid import (
    CoordinateLattice,
    DegenerateFieldError,
    ShapeMismatchError,
    Snapshot,
    Trajectory,
    make_lattice,
    open_trajectory,
    pearson,
    write_trajectory,
)
from .datagen import ChirpConfig, FlowGenConfig, analytic_enstrophy, gen_chirp_activity, gen_decaying_flow
from .metrics import (
    ActivitySeries,
    MomentumState,
    SaliencyKind,
    baseline_saliency,
    enstrophy,
    enstrophy_diff,
    enstrophy_series,
    mae,
    rel_l2,
)
from .selector import (
    SelectionResult,
    SelectorConfig,
    SelectorMode,
    select_baseline,
    select_binary,
    select_flows,
    select_surge,
    stability_factor,
)
from .neural_field import (
    LoraAdapter,
    NeuralFieldParams,
    NfArchitecture,
    TrainConfig,
    TrainMode,
    TrainingDivergedError,
    forward,
    init_adapter,
    init_params,
    loss_and_grads,
    merge_adapter,
    reconstruct,
    train,
)
from .codec import (
    CompressedUpdate,
    CompressionReport,
    UpdateKind,
    baseline_quantize_deflate,
    compression_report,
    deserialize_update,
    serialize_update,
)
from .pipeline import (
    ChainGapError,
    PipelineConfig,
    PipelineReport,
    reconstruct_trajectory,
    run,
)

__version__ = "0.1.0"
