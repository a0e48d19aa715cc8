"""cmkt: a desk-scale toolkit for giving text encoders visual grounding.

The package trains small text encoders against paired image features with
a family of contrastive and token-level objectives, perturbs captions into
hard negatives, distills a fused teacher back into a text-only student,
and measures the result on multiple-choice benchmarks. Everything runs in
numpy with explicit gradients; no GPU framework is required.
"""

from .errors import (
    AlignmentError,
    CmktError,
    ConfigError,
    DomainError,
    FeatureLookupError,
    ParseError,
    ReportError,
    ShapeError,
    TokenizationError,
    TrainingError,
    ValidationError,
)
from .checkpoint import (
    Checkpoint,
    bundle_text_encoder,
    load_checkpoint,
    restore_text_encoder,
    save_checkpoint,
)
from .distillation import (
    DistillSpec,
    TeacherSpec,
    build_adapters,
    distill,
    nst_step,
    train_teacher,
)
from .objectives import (
    ContrastiveConfig,
    EmbeddingBatch,
    LossResult,
    ans_loss,
    cmcl_total,
    cosine_similarity,
    hinge_loss,
    infonce_loss,
    mlm_loss,
    nst_loss,
    nst_loss_with_grad,
    tcl_loss,
    voken_loss,
)
from .evaluation import (
    EvalRun,
    FinetuneConfig,
    MCQADataset,
    MCQAItem,
    Report,
    TaskModel,
    build_task_model,
    evaluate,
    finetune,
    format_cell,
    grid_search,
    load_mcqa,
    load_runs,
    low_resource_protocol,
    parse_report_csv,
    plot_series,
    report,
    retrieval_recall_at_1,
    save_mcqa,
    save_runs,
    supervised_protocol,
)
from .seeding import derive_seed, rng_for
from .synth import (
    SynthArtifacts,
    SynthConfig,
    generate_world,
    load_world,
    save_world,
)
from .training import (
    METHOD_NAMES,
    CheckpointSelection,
    MethodSpec,
    PretrainConfig,
    PretrainResult,
    TrainingData,
    assign_vokens,
    build_voken_bank,
    load_similarity_set,
    pretrain,
    read_loss_log,
    save_similarity_set,
    select_checkpoint,
    spearman,
    write_loss_log,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "Checkpoint",
    "CheckpointSelection",
    "CmktError",
    "ConfigError",
    "ContrastiveConfig",
    "DomainError",
    "EmbeddingBatch",
    "FeatureLookupError",
    "LossResult",
    "METHOD_NAMES",
    "MethodSpec",
    "ParseError",
    "PretrainConfig",
    "PretrainResult",
    "ReportError",
    "ShapeError",
    "TokenizationError",
    "TrainingData",
    "TrainingError",
    "ValidationError",
    "DistillSpec",
    "EvalRun",
    "FinetuneConfig",
    "MCQADataset",
    "MCQAItem",
    "Report",
    "SynthArtifacts",
    "SynthConfig",
    "TaskModel",
    "TeacherSpec",
    "ans_loss",
    "assign_vokens",
    "build_adapters",
    "build_task_model",
    "build_voken_bank",
    "bundle_text_encoder",
    "cmcl_total",
    "cosine_similarity",
    "derive_seed",
    "distill",
    "evaluate",
    "finetune",
    "format_cell",
    "generate_world",
    "grid_search",
    "hinge_loss",
    "infonce_loss",
    "load_checkpoint",
    "load_mcqa",
    "load_runs",
    "load_similarity_set",
    "load_world",
    "low_resource_protocol",
    "mlm_loss",
    "nst_loss",
    "nst_loss_with_grad",
    "nst_step",
    "parse_report_csv",
    "plot_series",
    "pretrain",
    "read_loss_log",
    "report",
    "restore_text_encoder",
    "retrieval_recall_at_1",
    "rng_for",
    "save_checkpoint",
    "save_mcqa",
    "save_runs",
    "save_similarity_set",
    "save_world",
    "select_checkpoint",
    "spearman",
    "supervised_protocol",
    "tcl_loss",
    "train_teacher",
    "voken_loss",
    "write_loss_log",
    "__version__",
]
