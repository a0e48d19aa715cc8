"""Pre-training driver: composes objectives into named methods and runs
the loop.

A method is a weighted bundle of component losses over a caption corpus,
optionally paired with image features. Adversarial-negative (ANS)
variants splice perturbed captions into the contrastive denominators;
positive-augmentation (PSA) variants add them as extra training items.

Aggregation: mlm, voken, and cmcl components are already per-item means;
tcl and hinge objectives return batch sums, so the trainer divides them
by the batch size. Logged component magnitudes are therefore comparable
across batch sizes.

Every random draw flows from the config seed through derive_seed with a
documented purpose:

    ("order", epoch)               batch order permutation
    ("mask", epoch, record)        masking plan for one record
    ("mlm-dropout", epoch, step)   dropout for the masked forward
    ("tcl-a" / "tcl-b", epoch, step)   the two dropout views
    ("tcl-neg", epoch, step)       dropout for tcl hard negatives
    ("cmcl-text", epoch, step)     dropout for the caption forward
    ("cmcl-neg", epoch, step)      dropout for cmcl hard negatives
    ("voken-dropout", epoch, step)
    ("hinge-text", epoch, step)
    ("hinge-neg", epoch, step)     mismatched-pair permutations
    ("negfill", epoch, step, slot) pool sampling for short negative lists

The distillation driver reuses the order derivation and the masked-step
helper, which is what makes a zero-transfer-weight distillation run
match an MLM run step for step.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .checkpoint import Checkpoint, bundle_text_encoder, restore_text_encoder
from .corpus import (
    CaptionPair,
    Vocab,
    apply_masking_plan,
    plan_dynamic_masking,
    tokenize,
)
from .encoders import FeatureBank, ImageEncoder, TextEncoder, TextEncoderConfig
from .errors import ConfigError, DomainError, ParseError, ShapeError, TrainingError
from .objectives import (
    IMAGE,
    TEXT,
    ContrastiveConfig,
    EmbeddingBatch,
    ans_loss,
    cmcl_total,
    cosine_similarity,
    hinge_loss,
    tcl_loss,
)
from .perturbation import ADVERSARIAL_NEGATIVE, EQUIVALENT_POSITIVE, PerturbationRecord
from .seeding import derive_seed, rng_for

METHOD_NAMES = (
    "MLM",
    "TCL",
    "TCL+MLM",
    "TCL+ANS",
    "TCL+PSA+ANS",
    "VOKEN+MLM",
    "CMCL",
    "CMCL+ANS",
    "CMCL+PSA+ANS",
    "CMKD",
)

# name -> (components, use_ans, use_psa)
_METHOD_TABLE = {
    "MLM": (("mlm",), False, False),
    "TCL": (("tcl",), False, False),
    "TCL+MLM": (("tcl", "mlm"), False, False),
    "TCL+ANS": (("tcl",), True, False),
    "TCL+PSA+ANS": (("tcl",), True, True),
    "VOKEN+MLM": (("voken", "mlm"), False, False),
    "CMCL": (("cmcl",), False, False),
    "CMCL+ANS": (("cmcl",), True, False),
    "CMCL+PSA+ANS": (("cmcl",), True, True),
    "CMKD": ((), False, False),
}

_COMPONENTS = ("mlm", "tcl", "cmcl", "voken", "hinge")
_IMAGE_COMPONENTS = ("cmcl", "voken", "hinge")


@dataclass(frozen=True)
class MethodSpec:
    """A named composition of component losses.

    Build via :meth:`named`; the name fixes which components are active
    and whether perturbation records are consumed as hard negatives
    (``use_ans``) or extra positives (``use_psa``).
    """

    name: str
    components: tuple[str, ...]
    weights: tuple[float, ...]
    use_ans: bool = False
    use_psa: bool = False

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ConfigError(
                f"unknown method {self.name!r}; valid names: {', '.join(METHOD_NAMES)}"
            )
        expected, ans, psa = _METHOD_TABLE[self.name]
        if tuple(self.components) != expected:
            raise ConfigError(
                f"method {self.name} uses components {expected}, got {tuple(self.components)}"
            )
        if (self.use_ans, self.use_psa) != (ans, psa):
            raise ConfigError(
                f"method {self.name} does not admit use_ans={self.use_ans}, use_psa={self.use_psa}"
            )
        if len(self.weights) != len(self.components):
            raise ConfigError(
                f"{len(self.weights)} weights for {len(self.components)} components"
            )
        if any(not w > 0 for w in self.weights):
            raise ConfigError(f"component weights must be positive, got {self.weights}")

    @classmethod
    def named(cls, name: str, weights: Optional[Sequence[float]] = None) -> "MethodSpec":
        if name not in _METHOD_TABLE:
            raise ConfigError(
                f"unknown method {name!r}; valid names: {', '.join(METHOD_NAMES)}"
            )
        components, ans, psa = _METHOD_TABLE[name]
        if weights is None:
            weights = (1.0,) * len(components)
        return cls(name, components, tuple(float(w) for w in weights), ans, psa)

    @property
    def needs_images(self) -> bool:
        return any(c in _IMAGE_COMPONENTS for c in self.components)


@dataclass(frozen=True)
class PretrainConfig:
    """Loop hyperparameters plus the encoder architecture."""

    batch_size: int = 64
    max_len: int = 20
    learning_rate: float = 1e-4
    epochs: int = 3
    temperature: float = 0.05
    margin: float = 1.0
    seed: int = 0
    hard_negative_cap: int = 4
    voken_count: int = 16
    dim: int = 32
    ffn_dim: int = 64
    num_blocks: int = 2
    dropout: float = 0.1
    pooling: str = "mean"

    def __post_init__(self):
        for name in ("batch_size", "max_len", "epochs", "dim", "ffn_dim", "num_blocks", "voken_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("learning_rate", "temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.margin < 0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}")
        if self.hard_negative_cap < 0:
            raise ConfigError(
                f"hard_negative_cap must be >= 0, got {self.hard_negative_cap}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def encoder_config(self, vocab_size: int, voken_count: int = 0) -> TextEncoderConfig:
        return TextEncoderConfig(
            vocab_size=vocab_size,
            dim=self.dim,
            ffn_dim=self.ffn_dim,
            num_blocks=self.num_blocks,
            max_len=self.max_len,
            dropout=self.dropout,
            pooling=self.pooling,
            voken_count=voken_count,
        )


def config_to_dict(config: PretrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(values: dict) -> PretrainConfig:
    known = {f.name for f in dataclasses.fields(PretrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return PretrainConfig(**values)


@dataclass
class TrainingData:
    """Everything a method might consume; unused parts may be None."""

    pairs: Sequence[CaptionPair]
    vocab: Vocab
    bank: Optional[FeatureBank] = None
    perturbations: Optional[Sequence[PerturbationRecord]] = None


@dataclass(frozen=True)
class TrainRecord:
    """One assembled training item: a tokenized caption with its image id,
    optional precomputed voken targets, and its own hard-negative pool."""

    index: int
    image_id: str
    tokens: tuple[int, ...]
    caption_key: str
    voken_targets: Optional[tuple[int, ...]] = None
    negatives: tuple[tuple[int, ...], ...] = ()


@dataclass
class PretrainResult:
    method: str
    config: PretrainConfig
    checkpoints: tuple[Checkpoint, ...]
    final: Checkpoint
    loss_rows: tuple[dict, ...]
    components: tuple[str, ...]


def _caption_key(caption: str) -> str:
    return " ".join(caption.lower().split())


def assemble_records(
    method: MethodSpec, data: TrainingData, config: PretrainConfig
) -> tuple[list[TrainRecord], list[tuple[int, ...]]]:
    """Tokenize the train-split pairs into records, apply PSA augmentation,
    and attach per-caption hard-negative pools. Returns (records, global
    negative pool)."""
    train_pairs = [p for p in data.pairs if p.split == "train"]
    if not train_pairs:
        raise ConfigError("no pairs with split 'train' to train on")

    ans_by_key: dict[str, list[tuple[int, ...]]] = {}
    psa_records: list[PerturbationRecord] = []
    global_pool: list[tuple[int, ...]] = []
    if data.perturbations and (method.use_ans or method.use_psa):
        for rec in data.perturbations:
            if rec.verdict == ADVERSARIAL_NEGATIVE:
                if method.use_ans:
                    toks = tuple(
                        tokenize(rec.perturbed_caption(), data.vocab, config.max_len)
                    )
                    ans_by_key.setdefault(rec.original_caption, []).append(toks)
                    global_pool.append(toks)
            else:
                psa_records.append(rec)

    records: list[TrainRecord] = []

    def add(image_id: str, caption: str) -> None:
        key = _caption_key(caption)
        negatives = tuple(ans_by_key.get(key, ())) if method.use_ans else ()
        records.append(
            TrainRecord(
                index=len(records),
                image_id=image_id,
                tokens=tuple(tokenize(caption, data.vocab, config.max_len)),
                caption_key=key,
                negatives=negatives,
            )
        )

    key_to_image = {}
    for pair in train_pairs:
        key_to_image.setdefault(_caption_key(pair.caption), pair.image_id)
        add(pair.image_id, pair.caption)

    if method.use_psa:
        for rec in psa_records:
            image_id = key_to_image.get(rec.original_caption)
            if image_id is None:
                continue  # perturbation of a caption outside the train split
            add(image_id, rec.perturbed_caption())

    return records, global_pool


def _validate_inputs(method: MethodSpec, data: TrainingData) -> None:
    if method.needs_images and data.bank is None:
        raise ConfigError(
            f"method {method.name} needs an image feature bank, none was given"
        )
    if (method.use_ans or method.use_psa) and not data.perturbations:
        raise ConfigError(
            f"method {method.name} needs perturbation records, none were given"
        )
    if method.use_ans and data.perturbations is not None:
        if not any(r.verdict == ADVERSARIAL_NEGATIVE for r in data.perturbations):
            raise ConfigError(
                f"method {method.name} needs adversarial negatives, but the "
                "perturbation records contain none"
            )


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """The batch-order permutation for one epoch; shared with the
    distillation driver."""
    return rng_for(seed, "order", epoch).permutation(n)


def mlm_batch_step(
    encoder: TextEncoder,
    vocab: Vocab,
    batch_tokens: Sequence[Sequence[int]],
    record_ids: Sequence[int],
    seed: int,
    epoch: int,
    step: int,
) -> tuple[float, dict[str, np.ndarray]]:
    """One masked-prediction step: per-record dynamic plans, one fused
    forward/backward. Shared with the distillation driver."""
    masked = []
    selections = []
    for b, (rid, toks) in enumerate(zip(record_ids, batch_tokens)):
        plan = plan_dynamic_masking(list(toks), vocab, rng_for(seed, "mask", epoch, rid))
        masked.append(apply_masking_plan(list(toks), plan, vocab))
        selections.extend((b, pos, tgt) for pos, tgt in zip(plan.positions, plan.targets))
    if not selections:
        return 0.0, {}
    dropout_seed = derive_seed(seed, "mlm-dropout", epoch, step)
    return encoder.mlm_step(masked, selections, dropout_seed)


def _accumulate(dst: dict, grads: dict, weight: float) -> None:
    for name, g in grads.items():
        if name in dst:
            dst[name] = dst[name] + weight * g
        else:
            dst[name] = weight * g


def _sgd(params: dict, grads: dict, lr: float) -> None:
    for name, g in grads.items():
        params[name] -= lr * g


def _pick_negatives(
    batch: Sequence[TrainRecord],
    global_pool: Sequence[tuple[int, ...]],
    m: int,
    seed: int,
    epoch: int,
    step: int,
) -> list[list[tuple[int, ...]]]:
    """M negative captions per item: the item's own pool first (file
    order), then seeded draws from the global pool."""
    rows = []
    for slot, rec in enumerate(batch):
        take = list(rec.negatives[:m])
        if len(take) < m:
            rng = rng_for(seed, "negfill", epoch, step, slot)
            picks = rng.integers(0, len(global_pool), size=m - len(take))
            take.extend(global_pool[int(i)] for i in picks)
        rows.append(take)
    return rows


class _ComponentEngine:
    """Per-method closures computing (loss, text grads, image grads) for
    one batch at the current parameters."""

    def __init__(
        self,
        config: PretrainConfig,
        encoder: TextEncoder,
        image_encoder: Optional[ImageEncoder],
        vocab: Vocab,
        global_pool: Sequence[tuple[int, ...]],
        use_ans: bool,
    ):
        self.config = config
        self.encoder = encoder
        self.image_encoder = image_encoder
        self.vocab = vocab
        self.global_pool = global_pool
        self.m = config.hard_negative_cap if use_ans else 0
        if self.m > 0 and not global_pool:
            raise ConfigError(
                "hard negatives requested but the adversarial pool is empty"
            )
        self.fns: dict[str, Callable] = {
            "mlm": self._mlm,
            "tcl": self._tcl,
            "cmcl": self._cmcl,
            "voken": self._voken,
            "hinge": self._hinge,
        }

    def run(self, component: str, batch, epoch: int, step: int):
        return self.fns[component](batch, epoch, step)

    def _embed_negatives(self, batch, epoch, step, purpose):
        """Forward pass over the batch's hard negatives; returns the
        (N, M, d) tensor and the cache for the backward pass."""
        if self.m == 0:
            return None, None
        rows = _pick_negatives(
            batch, self.global_pool, self.m, self.config.seed, epoch, step
        )
        flat = [list(toks) for row in rows for toks in row]
        cache = self.encoder.forward(
            flat, derive_seed(self.config.seed, purpose, epoch, step)
        )
        tensor = cache["pooled"].reshape(len(batch), self.m, -1)
        return tensor, cache

    def _mlm(self, batch, epoch, step):
        loss, grads = mlm_batch_step(
            self.encoder,
            self.vocab,
            [rec.tokens for rec in batch],
            [rec.index for rec in batch],
            self.config.seed,
            epoch,
            step,
        )
        return loss, grads, {}

    def _tcl(self, batch, epoch, step):
        seqs = [list(rec.tokens) for rec in batch]
        ids = tuple(rec.index for rec in batch)
        seed = self.config.seed
        cache_a = self.encoder.forward(seqs, derive_seed(seed, "tcl-a", epoch, step))
        cache_b = self.encoder.forward(seqs, derive_seed(seed, "tcl-b", epoch, step))
        reps = EmbeddingBatch(cache_a["pooled"], TEXT, ids)
        positives = EmbeddingBatch(cache_b["pooled"], TEXT, ids)
        negs, cache_n = self._embed_negatives(batch, epoch, step, "tcl-neg")
        result = tcl_loss(
            reps, positives, self.config.temperature, hard_negatives=negs
        )
        n = len(batch)
        grads = self.encoder.backward(cache_a, d_pooled=result.gradients["reps"] / n)
        _accumulate(
            grads,
            self.encoder.backward(
                cache_b, d_pooled=result.gradients["dropout_positives"] / n
            ),
            1.0,
        )
        if negs is not None:
            d_negs = result.gradients["hard_negatives"].reshape(n * self.m, -1) / n
            _accumulate(grads, self.encoder.backward(cache_n, d_pooled=d_negs), 1.0)
        return result.total / n, grads, {}

    def _cmcl(self, batch, epoch, step):
        seqs = [list(rec.tokens) for rec in batch]
        ids = tuple(rec.index for rec in batch)
        image_ids = [rec.image_id for rec in batch]
        seed = self.config.seed
        cache_t = self.encoder.forward(seqs, derive_seed(seed, "cmcl-text", epoch, step))
        text_batch = EmbeddingBatch(cache_t["pooled"], TEXT, ids)
        image_vectors = self.image_encoder.encode(image_ids).vectors
        image_batch = EmbeddingBatch(image_vectors, IMAGE, ids)
        negs, cache_n = self._embed_negatives(batch, epoch, step, "cmcl-neg")
        if negs is not None:
            result = ans_loss(
                image_batch,
                text_batch,
                negs,
                ContrastiveConfig(
                    temperature=self.config.temperature, hard_negative_count=self.m
                ),
            )
        else:
            result = cmcl_total(
                image_batch,
                text_batch,
                ContrastiveConfig(temperature=self.config.temperature),
            )
        grads = self.encoder.backward(cache_t, d_pooled=result.gradients["text"])
        if negs is not None:
            d_negs = result.gradients["hard_negatives"].reshape(len(batch) * self.m, -1)
            _accumulate(grads, self.encoder.backward(cache_n, d_pooled=d_negs), 1.0)
        image_grads = self.image_encoder.backward(image_ids, result.gradients["image"])
        return result.total, grads, image_grads

    def _voken(self, batch, epoch, step):
        seqs = [list(rec.tokens) for rec in batch]
        length = max(len(s) for s in seqs)
        targets = np.full((len(batch), length), -1, dtype=np.int64)
        for b, rec in enumerate(batch):
            targets[b, : len(rec.tokens)] = rec.voken_targets
        dropout_seed = derive_seed(self.config.seed, "voken-dropout", epoch, step)
        loss, grads = self.encoder.voken_step(seqs, targets, dropout_seed)
        return loss, grads, {}

    def _hinge(self, batch, epoch, step):
        seqs = [list(rec.tokens) for rec in batch]
        ids = tuple(rec.index for rec in batch)
        image_ids = [rec.image_id for rec in batch]
        seed = self.config.seed
        cache_t = self.encoder.forward(seqs, derive_seed(seed, "hinge-text", epoch, step))
        text_batch = EmbeddingBatch(cache_t["pooled"], TEXT, ids)
        image_vectors = self.image_encoder.encode(image_ids).vectors
        image_batch = EmbeddingBatch(image_vectors, IMAGE, ids)
        n = len(batch)
        rng = rng_for(seed, "hinge-neg", epoch, step)
        perm_img = rng.permutation(n)
        perm_txt = rng.permutation(n)
        neg_images = EmbeddingBatch(
            image_vectors[perm_img], IMAGE, tuple(ids[i] for i in perm_img)
        )
        neg_texts = EmbeddingBatch(
            cache_t["pooled"][perm_txt], TEXT, tuple(ids[i] for i in perm_txt)
        )
        result = hinge_loss(
            image_batch, text_batch, neg_images, neg_texts, self.config.margin
        )
        d_text = result.gradients["text"].copy()
        np.add.at(d_text, perm_txt, result.gradients["negative_texts"])
        d_image = result.gradients["image"].copy()
        np.add.at(d_image, perm_img, result.gradients["negative_images"])
        grads = self.encoder.backward(cache_t, d_pooled=d_text / n)
        image_grads = self.image_encoder.backward(image_ids, d_image / n)
        return result.total / n, grads, image_grads


def _attach_vokens(
    records: list[TrainRecord], encoder: TextEncoder, bank_matrix: np.ndarray
) -> list[TrainRecord]:
    out = []
    for rec in records:
        states, _ = encoder.token_states([list(rec.tokens)])
        vokens = assign_vokens(
            list(rec.tokens),
            bank_matrix,
            lambda toks: states[0, : len(toks), :],
        )
        out.append(dataclasses.replace(rec, voken_targets=tuple(vokens)))
    return out


def run_training_loop(
    method_name: str,
    config: PretrainConfig,
    encoder: TextEncoder,
    image_encoder: Optional[ImageEncoder],
    vocab: Vocab,
    records: list[TrainRecord],
    global_pool: list[tuple[int, ...]],
    components: tuple[str, ...],
    weights: tuple[float, ...],
    meta_base: dict,
    use_ans: bool = False,
) -> PretrainResult:
    """The epoch/batch/SGD loop shared by pretrain and the teacher trainer."""
    engine = _ComponentEngine(config, encoder, image_encoder, vocab, global_pool, use_ans)
    loss_rows: list[dict] = []
    checkpoints: list[Checkpoint] = []
    step = 0

    def bundle(epoch: int, kind: str) -> Checkpoint:
        meta = dict(meta_base)
        meta.update({"epoch": epoch, "kind": kind, "step": step})
        image_params = image_encoder.get_params() if image_encoder is not None else None
        return bundle_text_encoder(encoder, vocab, meta, image_params=image_params)

    for epoch in range(1, config.epochs + 1):
        order = epoch_order(config.seed, epoch, len(records))
        for start in range(0, len(records), config.batch_size):
            batch = [records[int(i)] for i in order[start : start + config.batch_size]]
            text_grads: dict[str, np.ndarray] = {}
            image_grads: dict[str, np.ndarray] = {}
            row = {"step": step, "epoch": epoch}
            total = 0.0
            for component, weight in zip(components, weights):
                loss, tg, ig = engine.run(component, batch, epoch, step)
                row[component] = loss
                total += weight * loss
                _accumulate(text_grads, tg, weight)
                _accumulate(image_grads, ig, weight)
            if not np.isfinite(total):
                raise TrainingError(f"non-finite loss {total} at step {step}", step=step)
            row["total"] = total
            loss_rows.append(row)
            _sgd(encoder.params, text_grads, config.learning_rate)
            if image_encoder is not None and not image_encoder.frozen:
                _sgd(image_encoder.params, image_grads, config.learning_rate)
            step += 1
        checkpoints.append(bundle(epoch, "epoch"))
    final = bundle(config.epochs, "final")
    return PretrainResult(
        method=method_name,
        config=config,
        checkpoints=tuple(checkpoints),
        final=final,
        loss_rows=tuple(loss_rows),
        components=components,
    )


def pretrain(
    method: MethodSpec | str, data: TrainingData, config: PretrainConfig
) -> PretrainResult:
    """Run one named method over the corpus; returns per-epoch checkpoints,
    a final checkpoint, and the per-step loss log."""
    if isinstance(method, str):
        method = MethodSpec.named(method)
    if method.name == "CMKD":
        raise ConfigError(
            "CMKD needs a trained teacher checkpoint; run the distillation "
            "driver (train_teacher, then distill) instead of pretrain"
        )
    _validate_inputs(method, data)
    records, global_pool = assemble_records(method, data, config)

    voken_count = config.voken_count if "voken" in method.components else 0
    encoder = TextEncoder(
        config.encoder_config(len(data.vocab), voken_count=voken_count),
        seed=config.seed,
    )
    image_encoder = None
    if method.needs_images:
        image_encoder = ImageEncoder.initialized(data.bank, config.dim, config.seed)
        # the projection trains under contrastive objectives; for vokens it
        # only builds the fixed bank
        image_encoder.frozen = not any(
            c in ("cmcl", "hinge") for c in method.components
        )

    if "voken" in method.components:
        bank_matrix = build_voken_bank(data.pairs, image_encoder, config.voken_count)
        records = _attach_vokens(records, encoder, bank_matrix)

    meta_base = {
        "method": method.name,
        "seed": config.seed,
        "components": list(method.components),
        "weights": list(method.weights),
    }
    return run_training_loop(
        method.name,
        config,
        encoder,
        image_encoder,
        vocab=data.vocab,
        records=records,
        global_pool=global_pool,
        components=method.components,
        weights=method.weights,
        meta_base=meta_base,
        use_ans=method.use_ans,
    )


# ---------------------------------------------------------------------------
# voken assignment
# ---------------------------------------------------------------------------


def assign_vokens(
    tokens: Sequence[int],
    voken_bank: np.ndarray,
    text_embedding_fn: Callable[[Sequence[int]], np.ndarray],
) -> list[int]:
    """Map each token to its nearest bank row by cosine similarity of the
    token's contextual embedding; ties go to the lowest row id."""
    bank = np.asarray(voken_bank, dtype=np.float64)
    if bank.ndim != 2 or bank.shape[0] < 1:
        raise ConfigError(f"voken bank must be a nonempty 2-D table, got shape {bank.shape}")
    if not len(tokens):
        return []
    states = np.asarray(text_embedding_fn(tokens), dtype=np.float64)
    if states.ndim != 2 or states.shape[0] != len(tokens):
        raise ShapeError(
            f"embedding fn returned shape {states.shape} for {len(tokens)} tokens"
        )
    if states.shape[1] != bank.shape[1]:
        raise ShapeError(
            f"token states have dim {states.shape[1]}, bank has dim {bank.shape[1]}"
        )
    for label, matrix in (("token state", states), ("voken bank row", bank)):
        norms = np.linalg.norm(matrix, axis=1)
        bad = np.nonzero(norms == 0.0)[0]
        if bad.size:
            raise DomainError(f"{label} {bad[0]} has zero norm; cosine undefined")
    unit_states = states / np.linalg.norm(states, axis=1, keepdims=True)
    unit_bank = bank / np.linalg.norm(bank, axis=1, keepdims=True)
    sims = unit_states @ unit_bank.T
    return [int(i) for i in np.argmax(sims, axis=1)]


def build_voken_bank(
    pairs: Sequence[CaptionPair], image_encoder: ImageEncoder, count: int
) -> np.ndarray:
    """A (count, dim) table of projected image features, one row per
    distinct image id in first-appearance order."""
    if count < 1:
        raise ConfigError(f"voken count must be >= 1, got {count}")
    seen = dict.fromkeys(p.image_id for p in pairs)
    distinct = list(seen)
    if len(distinct) < count:
        raise ConfigError(
            f"voken bank needs {count} distinct images, corpus has {len(distinct)}"
        )
    return image_encoder.encode(distinct[:count]).vectors


# ---------------------------------------------------------------------------
# checkpoint selection
# ---------------------------------------------------------------------------


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks on ties."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1:
        raise ShapeError("spearman expects 1-D inputs")
    if xa.shape != ya.shape:
        raise ShapeError(f"length mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    if xa.shape[0] < 2:
        raise ShapeError(f"need at least 2 points, got {xa.shape[0]}")
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        raise DomainError("rank correlation undefined for a constant input")
    rx = rankdata(xa)
    ry = rankdata(ya)
    return float(np.corrcoef(rx, ry)[0, 1])


@dataclass(frozen=True)
class CheckpointSelection:
    index: int
    checkpoint: Checkpoint
    correlations: tuple[float, ...]


def select_checkpoint(
    series: Sequence[Checkpoint],
    heldout: Sequence[tuple[str, str, float]],
) -> CheckpointSelection:
    """Pick the checkpoint whose encoder best rank-orders a held-out
    sentence-pair similarity set; ties go to the earliest checkpoint."""
    series = list(series)
    if not series:
        raise ConfigError("empty checkpoint series")
    heldout = list(heldout)
    if not heldout:
        raise ConfigError("held-out similarity set is empty")
    gold = [float(score) for _, _, score in heldout]
    correlations = []
    for ckpt in series:
        encoder, vocab = restore_text_encoder(ckpt)
        max_len = encoder.config.max_len
        seqs_a = [tokenize(a, vocab, max_len) for a, _, _ in heldout]
        seqs_b = [tokenize(b, vocab, max_len) for _, b, _ in heldout]
        va = encoder.encode(seqs_a).vectors
        vb = encoder.encode(seqs_b).vectors
        sims = [cosine_similarity(va[i], vb[i]) for i in range(len(heldout))]
        correlations.append(spearman(sims, gold))
    best = 0
    for i, rho in enumerate(correlations):
        if rho > correlations[best]:
            best = i
    return CheckpointSelection(best, series[best], tuple(correlations))


def load_similarity_set(path: str | Path) -> list[tuple[str, str, float]]:
    """Tab-separated sentence pairs with gold scores, one per line."""
    path = Path(path)
    items = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
        a, b, raw = fields
        try:
            score = float(raw)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: bad score {raw!r}") from exc
        items.append((a, b, score))
    return items


def save_similarity_set(items: Sequence[tuple[str, str, float]], path: str | Path) -> None:
    lines = [f"{a}\t{b}\t{score!r}" for a, b, score in items]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# loss log
# ---------------------------------------------------------------------------


def write_loss_log(rows: Sequence[dict], components: Sequence[str], path: str | Path) -> None:
    """CSV with step, epoch, one column per component, and the total."""
    fieldnames = ["step", "epoch", *components, "total"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in fieldnames})


def read_loss_log(path: str | Path) -> list[dict]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["step", "epoch"]:
            raise ParseError(f"{path}: not a loss log (missing step/epoch columns)")
        rows = []
        for row in reader:
            parsed = {"step": int(row["step"]), "epoch": int(row["epoch"])}
            for key in reader.fieldnames[2:]:
                parsed[key] = float(row[key])
            rows.append(parsed)
    return rows
