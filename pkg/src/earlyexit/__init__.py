"""Parameter-shared transformer classifier with confidence-window early exit."""

from .exit_policy import (
    ConfidenceWindow,
    Criterion,
    ExitConfig,
    ExitDecision,
    ExitEngine,
    ExitReason,
    ProbDist,
    puzzlement,
    run_policy,
    stage1_check,
    stage2_check,
)
from .model import (
    LayerTrace,
    ModelConfig,
    SharedEncoderClassifier,
    classify,
    embed,
    encoder_step,
    flops_estimate,
    forward_adaptive,
    forward_full,
    init_params,
    parameter_count,
)
from .bench import SweepConfig, evaluate, export_curves, format_table, sweep, truncated_baseline
from .data import SynthSpec, Vocab, build_vocab, encode, encode_dataset, generate_synthetic, load_tsv
from .training import TrainConfig, exit_loss, gradient_audit, layer_weights, total_loss, train

__version__ = "0.1.0"
