"""Collaborative layer-wise discriminative learning.

A small float64 training engine in which several classifier heads, attached
at different depths of one network, are trained jointly: each head's
cross-entropy loss is scaled by a modulation term built from its companion
heads' scores on the true class, the modulation is treated as a constant
during backpropagation, and inference picks the label minimizing the joint
objective.
"""

from .tensor_ops import RngState, ShapeError, conv2d, global_avg_pool, matmul, relu, softmax
from .network import (
    BuildError,
    ClassifierHead,
    LayerSpec,
    Network,
    PlacementConfig,
    PlacementError,
    build_heads,
    build_network,
    conv,
    dense,
    flatten,
    forward,
    global_avg_pool_layer,
    head_forward,
    maxpool,
    mlp_head_specs,
    nin_head_specs,
    place_heads,
    relu_layer,
    softmax_layer,
)
from .loss import (
    LossBreakdown,
    LossConfig,
    clamp_probs,
    compute_C,
    compute_T,
    loss_breakdown,
    per_head_loss,
    total_objective,
)
from .backprop import (
    GradientSet,
    TapeCache,
    backward,
    finite_diff_check,
    forward_tape,
    frozen_objective,
    raw_objective_gap,
)
from .train import EpochMetrics, TrainConfig, TrainingDiverged, evaluate, sgd_step, train
from .inference import (
    PredictionRecord,
    SpecializationReport,
    assignment_posterior,
    candidate_objectives,
    infer,
    infer_labels,
    specialization_report,
    top_k,
)
from .data import (
    DataFormatError,
    LabeledDataset,
    SynthSpec,
    generate_synthetic,
    load_idx,
    preprocess_mean_subtract,
    save_idx,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
