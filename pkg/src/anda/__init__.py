"""Transferable adversarial examples from posterior-approximated
sign-gradient ascent, with a mixture-ensemble variant, at desk scale.

The library crafts l-infinity-bounded adversaries on small in-repo
classifiers, stores the perturbation posterior accumulated along the
ascent (running mean + deviation columns), and evaluates transfer
between models. The command line (anda train/attack/eval/ablate) wires
datasets, training, attacks, and reports into reproducible runs.

Figure rendering lives in anda.figures and the command line in anda.cli;
neither is imported here, so library use stays free of matplotlib.
"""

from .attack import (
    ATTACK_KINDS,
    STRATEGIES,
    AdversaryBatch,
    AttackConfig,
    MixturePosterior,
    PerturbationPosterior,
    accumulate_mean,
    anda_attack,
    append_deviations,
    attack_batch,
    bim_attack,
    clip_to_ball,
    craft_from_sample,
    multianda_attack,
    multianda_sample,
    sample_perturbation,
)
from .augment import translate, translate_adjoint, translation_offsets
from .dataio import (
    Dataset,
    generate_synthetic,
    load_idx_dataset,
    read_adversary_archive,
    read_idx_images,
    read_idx_labels,
    write_adversary_archive,
)
from .errors import (
    AndaError,
    ConfigError,
    DataError,
    InvariantViolation,
    ModelError,
    TrainingError,
)
from .evaluate import (
    FoolHistogram,
    TransferReport,
    attack_success_rate,
    fool_count_histogram,
    sampled_asr,
    sampled_asr_from_batch,
    transfer_matrix,
)
from .grad import (
    Graph,
    Tensor,
    cross_entropy,
    finite_difference_gradient,
    forward,
    forward_batch,
    input_gradient,
)
from .zoo import (
    Architecture,
    Checkpoint,
    load_checkpoint,
    predict,
    predict_batch,
    save_checkpoint,
    train_classifier,
)

__version__ = "0.1.0"

__all__ = [
    "ATTACK_KINDS",
    "STRATEGIES",
    "AdversaryBatch",
    "AndaError",
    "Architecture",
    "AttackConfig",
    "Checkpoint",
    "ConfigError",
    "DataError",
    "Dataset",
    "FoolHistogram",
    "Graph",
    "InvariantViolation",
    "MixturePosterior",
    "ModelError",
    "PerturbationPosterior",
    "Tensor",
    "TrainingError",
    "TransferReport",
    "accumulate_mean",
    "anda_attack",
    "append_deviations",
    "attack_batch",
    "attack_success_rate",
    "bim_attack",
    "clip_to_ball",
    "craft_from_sample",
    "cross_entropy",
    "finite_difference_gradient",
    "fool_count_histogram",
    "forward",
    "forward_batch",
    "generate_synthetic",
    "input_gradient",
    "load_checkpoint",
    "load_idx_dataset",
    "multianda_attack",
    "multianda_sample",
    "predict",
    "predict_batch",
    "read_adversary_archive",
    "read_idx_images",
    "read_idx_labels",
    "sample_perturbation",
    "sampled_asr",
    "sampled_asr_from_batch",
    "save_checkpoint",
    "train_classifier",
    "transfer_matrix",
    "translate",
    "translate_adjoint",
    "translation_offsets",
    "write_adversary_archive",
    "__version__",
]
