"""Cross-modal teacher/student transfer.

A fusion teacher (text encoder plus image projection) trains under a
cross-modal objective; a fresh text-only student then trains on captions
alone with masked prediction plus an activation-matching penalty pulling
its per-block pooled states toward the teacher's on the same clean text.

The student loop reuses the trainer's order derivation and masked-step
helper with the same seed purposes, so with a zero transfer weight the
run is step-for-step identical to plain masked-prediction pre-training.
When teacher and student widths differ, a fixed seeded linear adapter
(purpose ``("nst-adapter", block)``) maps student activations into the
teacher's width before comparison; the adapter is never trained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, bundle_text_encoder, restore_text_encoder
from .encoders import TextEncoder
from .errors import ConfigError, TrainingError
from .objectives import nst_loss_with_grad
from .seeding import rng_for
from .training import (
    MethodSpec,
    PretrainConfig,
    PretrainResult,
    TrainingData,
    assemble_records,
    epoch_order,
    mlm_batch_step,
    run_training_loop,
    _accumulate,
    _sgd,
)

TEACHER_OBJECTIVES = ("cmcl", "hinge")


@dataclass(frozen=True)
class TeacherSpec:
    """Which cross-modal objective the fusion teacher trains under."""

    objective: str = "cmcl"

    def __post_init__(self):
        if self.objective not in TEACHER_OBJECTIVES:
            raise ConfigError(
                f"teacher objective must be one of {TEACHER_OBJECTIVES}, "
                f"got {self.objective!r}"
            )


@dataclass(frozen=True)
class DistillSpec:
    """Loss mix for the student: masked prediction plus activation transfer."""

    mlm_weight: float = 1.0
    nst_weight: float = 1.0

    def __post_init__(self):
        if self.mlm_weight < 0 or self.nst_weight < 0:
            raise ConfigError(
                f"weights must be non-negative, got mlm={self.mlm_weight}, "
                f"nst={self.nst_weight}"
            )
        if self.mlm_weight == 0 and self.nst_weight == 0:
            raise ConfigError("at least one of mlm_weight, nst_weight must be positive")


def train_teacher(
    spec: TeacherSpec, data: TrainingData, config: PretrainConfig
) -> PretrainResult:
    """Pre-train the fusion teacher on image/caption pairs."""
    if data.bank is None:
        raise ConfigError("teacher training needs an image feature bank")
    from .encoders import ImageEncoder

    records, _ = assemble_records(MethodSpec.named("CMCL"), data, config)
    encoder = TextEncoder(config.encoder_config(len(data.vocab)), seed=config.seed)
    image_encoder = ImageEncoder.initialized(data.bank, config.dim, config.seed)
    image_encoder.frozen = False
    name = f"teacher:{spec.objective}"
    return run_training_loop(
        name,
        config,
        encoder,
        image_encoder,
        vocab=data.vocab,
        records=records,
        global_pool=[],
        components=(spec.objective,),
        weights=(1.0,),
        meta_base={"method": name, "seed": config.seed, "objective": spec.objective},
    )


def build_adapters(
    teacher_dim: int, student_dim: int, num_blocks: int, seed: int
) -> Optional[list[np.ndarray]]:
    """Fixed per-block linear maps from student width to teacher width;
    None when the widths already agree."""
    if teacher_dim == student_dim:
        return None
    scale = 1.0 / math.sqrt(student_dim)
    return [
        rng_for(seed, "nst-adapter", block).normal(
            scale=scale, size=(student_dim, teacher_dim)
        )
        for block in range(num_blocks)
    ]


def nst_step(
    teacher: TextEncoder,
    student: TextEncoder,
    seqs: Sequence[Sequence[int]],
    adapters: Optional[list[np.ndarray]] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Activation-matching loss over clean text, averaged across blocks,
    with gradients for the student."""
    cache = student.forward(seqs, dropout_seed=None)
    student_blocks = cache["block_pooled"]
    teacher_blocks = teacher.block_activations(seqs)
    num_blocks = len(student_blocks)
    values = []
    d_blocks = []
    for b in range(num_blocks):
        acts = student_blocks[b]
        if adapters is not None:
            acts = acts @ adapters[b]
        value, d_acts = nst_loss_with_grad(teacher_blocks[b], acts)
        if adapters is not None:
            d_acts = d_acts @ adapters[b].T
        values.append(value)
        d_blocks.append(d_acts / num_blocks)
    grads = student.backward(cache, d_block_pooled=d_blocks)
    return float(np.mean(values)), grads


def distill(
    teacher_checkpoint: Checkpoint,
    data: TrainingData,
    spec: DistillSpec,
    config: PretrainConfig,
) -> PretrainResult:
    """Train a text-only student against the teacher over the caption
    corpus; returns the usual checkpoint series and loss log."""
    teacher, teacher_vocab = restore_text_encoder(teacher_checkpoint)
    corpus_words = [data.vocab.word_of(i) for i in range(len(data.vocab))]
    teacher_words = [teacher_vocab.word_of(i) for i in range(len(teacher_vocab))]
    if corpus_words != teacher_words:
        raise ConfigError(
            "teacher and corpus vocabularies differ; distillation compares "
            "activations on identical token sequences"
        )
    if teacher.config.num_blocks != config.num_blocks:
        raise ConfigError(
            f"teacher has {teacher.config.num_blocks} blocks, student config "
            f"asks for {config.num_blocks}; activation transfer matches per block"
        )
    if config.max_len > teacher.config.max_len:
        raise ConfigError(
            f"student max_len {config.max_len} exceeds the teacher's "
            f"{teacher.config.max_len}"
        )

    records, _ = assemble_records(MethodSpec.named("MLM"), data, config)
    student = TextEncoder(config.encoder_config(len(data.vocab)), seed=config.seed)
    adapters = build_adapters(
        teacher.config.dim, config.dim, config.num_blocks, config.seed
    )

    components = ("mlm", "nst")
    weights = (spec.mlm_weight, spec.nst_weight)
    loss_rows: list[dict] = []
    checkpoints: list[Checkpoint] = []
    step = 0
    meta_base = {
        "method": "CMKD",
        "seed": config.seed,
        "teacher": teacher_checkpoint.meta.get("method", "unknown"),
        "mlm_weight": spec.mlm_weight,
        "nst_weight": spec.nst_weight,
    }

    def bundle(epoch: int, kind: str) -> Checkpoint:
        meta = dict(meta_base)
        meta.update({"epoch": epoch, "kind": kind, "step": step})
        return bundle_text_encoder(student, data.vocab, meta)

    for epoch in range(1, config.epochs + 1):
        order = epoch_order(config.seed, epoch, len(records))
        for start in range(0, len(records), config.batch_size):
            batch = [records[int(i)] for i in order[start : start + config.batch_size]]
            seqs = [list(r.tokens) for r in batch]
            grads: dict[str, np.ndarray] = {}
            row = {"step": step, "epoch": epoch}

            if spec.mlm_weight > 0:
                mlm, mlm_grads = mlm_batch_step(
                    student,
                    data.vocab,
                    seqs,
                    [r.index for r in batch],
                    config.seed,
                    epoch,
                    step,
                )
                _accumulate(grads, mlm_grads, spec.mlm_weight)
            else:
                mlm = 0.0
            row["mlm"] = mlm

            if spec.nst_weight > 0:
                nst, nst_grads = nst_step(teacher, student, seqs, adapters)
                _accumulate(grads, nst_grads, spec.nst_weight)
            else:
                nst = 0.0
            row["nst"] = nst

            total = spec.mlm_weight * mlm + spec.nst_weight * nst
            if not np.isfinite(total):
                raise TrainingError(f"non-finite loss {total} at step {step}", step=step)
            row["total"] = total
            loss_rows.append(row)
            _sgd(student.params, grads, config.learning_rate)
            step += 1
        checkpoints.append(bundle(epoch, "epoch"))
    final = bundle(config.epochs, "final")
    return PretrainResult(
        method="CMKD",
        config=config,
        checkpoints=tuple(checkpoints),
        final=final,
        loss_rows=tuple(loss_rows),
        components=components,
    )
