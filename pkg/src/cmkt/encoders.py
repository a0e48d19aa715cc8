"""Desk-scale text and image encoders with explicit gradients.

The text encoder is a small single-head transformer (token + position
embeddings, self-attention blocks with post-layer-norm residuals, ReLU
feed-forward) written directly in numpy. Forward passes return a cache;
``backward`` consumes it and produces parameter gradients, so training
needs no autodiff framework. Real pre-trained encoders can be plugged in
behind the same encode/backward interface.

The image side is a frozen bank of precomputed feature rows behind a
trainable affine projection; no vision backbone lives here.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    FeatureLookupError,
    ParseError,
    ShapeError,
    TokenizationError,
    ValidationError,
)
from .objectives import IMAGE, TEXT, EmbeddingBatch
from .seeding import rng_for

PAD_ID = 0
LN_EPS = 1e-5
MASK_BIAS = -1e9

MEAN_POOL = "mean"
FIRST_POOL = "first"


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    dim: int = 32
    ffn_dim: int = 64
    num_blocks: int = 2
    max_len: int = 20
    dropout: float = 0.1
    pooling: str = MEAN_POOL
    voken_count: int = 0
    init_scale: float = 0.02

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the 4 specials plus a word, got {self.vocab_size}")
        for name in ("dim", "ffn_dim", "num_blocks", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.pooling not in (MEAN_POOL, FIRST_POOL):
            raise ConfigError(f"pooling must be {MEAN_POOL!r} or {FIRST_POOL!r}, got {self.pooling!r}")
        if self.voken_count < 0:
            raise ConfigError(f"voken_count must be >= 0, got {self.voken_count}")


def _ln_forward(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    x_hat = (x - mu) * inv
    return gamma * x_hat + beta, (x_hat, inv, gamma)


def _ln_backward(d_out, cache):
    x_hat, inv, gamma = cache
    d_gamma = np.sum(d_out * x_hat, axis=(0, 1))
    d_beta = np.sum(d_out, axis=(0, 1))
    d_hat = d_out * gamma
    d_x = inv * (
        d_hat
        - d_hat.mean(axis=-1, keepdims=True)
        - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
    )
    return d_x, d_gamma, d_beta


def _softmax_last(x):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class TextEncoder:
    """A pure-numpy transformer encoder over token-id sequences.

    Every forward pass is a deterministic function of (parameters, input,
    dropout seed); passing ``dropout_seed=None`` disables dropout
    entirely, which is the evaluation mode.
    """

    def __init__(self, config: TextEncoderConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        c = config
        self._add_param(seed, "tok_emb", (c.vocab_size, c.dim))
        self._add_param(seed, "pos_emb", (c.max_len, c.dim))
        for i in range(c.num_blocks):
            p = f"blk{i}."
            for w in ("wq", "wk", "wv", "wo"):
                self._add_param(seed, p + w, (c.dim, c.dim))
            for b in ("bq", "bk", "bv", "bo"):
                self.params[p + b] = np.zeros(c.dim)
            self.params[p + "ln1_g"] = np.ones(c.dim)
            self.params[p + "ln1_b"] = np.zeros(c.dim)
            self._add_param(seed, p + "w1", (c.dim, c.ffn_dim))
            self.params[p + "b1"] = np.zeros(c.ffn_dim)
            self._add_param(seed, p + "w2", (c.ffn_dim, c.dim))
            self.params[p + "b2"] = np.zeros(c.dim)
            self.params[p + "ln2_g"] = np.ones(c.dim)
            self.params[p + "ln2_b"] = np.zeros(c.dim)
        self._add_param(seed, "mlm_w", (c.dim, c.vocab_size))
        self.params["mlm_b"] = np.zeros(c.vocab_size)
        if c.voken_count > 0:
            self._add_param(seed, "voken_w", (c.dim, c.voken_count))
            self.params["voken_b"] = np.zeros(c.voken_count)

    def _add_param(self, seed, name, shape):
        self.params[name] = rng_for(seed, "init", name).normal(
            scale=self.config.init_scale, size=shape
        )

    @property
    def dim(self) -> int:
        return self.config.dim

    # ---------------------------------------------------------------- input

    def prepare_batch(self, seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        """Left-aligned pad-0 batch plus its real-token mask."""
        if len(seqs) == 0:
            raise ShapeError("cannot encode an empty batch")
        v = self.config.vocab_size
        for b, seq in enumerate(seqs):
            if len(seq) == 0:
                raise TokenizationError(f"sequence {b} is empty")
            if len(seq) > self.config.max_len:
                raise ValidationError(
                    f"sequence {b} has {len(seq)} tokens, maximum is {self.config.max_len}"
                )
            for pos, t in enumerate(seq):
                if not 0 <= t < v:
                    raise TokenizationError(
                        f"sequence {b} position {pos}: token id {t} outside vocabulary of size {v}"
                    )
        length = max(len(s) for s in seqs)
        tokens = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(seqs), length))
        for b, seq in enumerate(seqs):
            tokens[b, : len(seq)] = seq
            mask[b, : len(seq)] = 1.0
        return tokens, mask

    def _dropout(self, x, site, dropout_seed, cache):
        p = self.config.dropout
        if dropout_seed is None or p == 0.0:
            cache["drop." + site] = None
            return x
        keep = rng_for(dropout_seed, "dropout", site).random(x.shape) >= p
        scale = keep.astype(np.float64) / (1.0 - p)
        cache["drop." + site] = scale
        return x * scale

    # -------------------------------------------------------------- forward

    def forward(self, seqs: Sequence[Sequence[int]], dropout_seed: Optional[int] = None) -> dict:
        """Run the encoder; returns a cache holding pooled output, hidden
        states, per-block pooled activations, and every intermediate the
        backward pass needs."""
        tokens, mask = self.prepare_batch(seqs)
        P = self.params
        cache: dict = {"tokens": tokens, "mask": mask}
        length = tokens.shape[1]

        emb = P["tok_emb"][tokens] + P["pos_emb"][:length]
        x = self._dropout(emb, "emb", dropout_seed, cache)
        cache["block_pooled"] = []
        scale = 1.0 / np.sqrt(self.config.dim)
        col_bias = (1.0 - mask)[:, None, :] * MASK_BIAS

        for i in range(self.config.num_blocks):
            p = f"blk{i}."
            blk: dict = {"x_in": x}
            q = x @ P[p + "wq"] + P[p + "bq"]
            k = x @ P[p + "wk"] + P[p + "bk"]
            v = x @ P[p + "wv"] + P[p + "bv"]
            scores = q @ k.transpose(0, 2, 1) * scale + col_bias
            attn = _softmax_last(scores)
            ctx = attn @ v
            proj = ctx @ P[p + "wo"] + P[p + "bo"]
            proj_d = self._dropout(proj, p + "attn", dropout_seed, cache)
            r1 = x + proj_d
            y, ln1 = _ln_forward(r1, P[p + "ln1_g"], P[p + "ln1_b"])
            pre_act = y @ P[p + "w1"] + P[p + "b1"]
            h = np.maximum(pre_act, 0.0)
            ffn = h @ P[p + "w2"] + P[p + "b2"]
            ffn_d = self._dropout(ffn, p + "ffn", dropout_seed, cache)
            r2 = y + ffn_d
            x, ln2 = _ln_forward(r2, P[p + "ln2_g"], P[p + "ln2_b"])
            blk.update(q=q, k=k, v=v, attn=attn, ctx=ctx, ln1=ln1, ln2=ln2,
                       pre_act=pre_act, h=h, y=y)
            cache[f"blk{i}"] = blk
            cache["block_pooled"].append(self._pool(x, mask))

        cache["hidden"] = x
        cache["pooled"] = self._pool(x, mask)
        return cache

    def _pool(self, hidden, mask):
        if self.config.pooling == FIRST_POOL:
            return hidden[:, 0, :].copy()
        counts = mask.sum(axis=1, keepdims=True)
        return (hidden * mask[:, :, None]).sum(axis=1) / counts

    def _pool_backward(self, d_pooled, mask):
        if self.config.pooling == FIRST_POOL:
            d_hidden = np.zeros(mask.shape + (self.config.dim,))
            d_hidden[:, 0, :] = d_pooled
            return d_hidden
        counts = mask.sum(axis=1)
        return d_pooled[:, None, :] * mask[:, :, None] / counts[:, None, None]

    # ------------------------------------------------------------- backward

    def backward(
        self,
        cache: dict,
        d_pooled: Optional[np.ndarray] = None,
        d_hidden: Optional[np.ndarray] = None,
        d_block_pooled: Optional[list] = None,
    ) -> dict[str, np.ndarray]:
        """Parameter gradients for any mix of upstream gradients: on the
        final pooled vector, on per-position hidden states, and on each
        block's pooled activation (used by activation matching)."""
        P = self.params
        mask = cache["mask"]
        tokens = cache["tokens"]
        grads: dict[str, np.ndarray] = {}
        n_blocks = self.config.num_blocks
        scale = 1.0 / np.sqrt(self.config.dim)

        d_x = np.zeros_like(cache["hidden"])
        if d_hidden is not None:
            d_x = d_x + d_hidden
        if d_pooled is not None:
            d_x = d_x + self._pool_backward(d_pooled, mask)

        for i in reversed(range(n_blocks)):
            if d_block_pooled is not None and d_block_pooled[i] is not None:
                d_x = d_x + self._pool_backward(d_block_pooled[i], mask)
            p = f"blk{i}."
            blk = cache[f"blk{i}"]

            d_r2, grads[p + "ln2_g"], grads[p + "ln2_b"] = _ln_backward(d_x, blk["ln2"])
            d_y = d_r2.copy()
            d_ffn = d_r2
            drop = cache["drop." + p + "ffn"]
            if drop is not None:
                d_ffn = d_ffn * drop
            d_h = d_ffn @ P[p + "w2"].T
            grads[p + "w2"] = np.einsum("blf,bld->fd", blk["h"], d_ffn)
            grads[p + "b2"] = d_ffn.sum(axis=(0, 1))
            d_pre = d_h * (blk["pre_act"] > 0)
            d_y += d_pre @ P[p + "w1"].T
            grads[p + "w1"] = np.einsum("bld,blf->df", blk["y"], d_pre)
            grads[p + "b1"] = d_pre.sum(axis=(0, 1))

            d_r1, grads[p + "ln1_g"], grads[p + "ln1_b"] = _ln_backward(d_y, blk["ln1"])
            d_x = d_r1.copy()
            d_proj = d_r1
            drop = cache["drop." + p + "attn"]
            if drop is not None:
                d_proj = d_proj * drop
            d_ctx = d_proj @ P[p + "wo"].T
            grads[p + "wo"] = np.einsum("bld,ble->de", blk["ctx"], d_proj)
            grads[p + "bo"] = d_proj.sum(axis=(0, 1))

            attn = blk["attn"]
            d_attn = d_ctx @ blk["v"].transpose(0, 2, 1)
            d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
            d_q = d_scores @ blk["k"] * scale
            d_k = d_scores.transpose(0, 2, 1) @ blk["q"] * scale
            d_v = attn.transpose(0, 2, 1) @ d_ctx

            x_in = blk["x_in"]
            for name, d_side in (("wq", d_q), ("wk", d_k), ("wv", d_v)):
                grads[p + name] = np.einsum("bld,ble->de", x_in, d_side)
                grads[p + "b" + name[1]] = d_side.sum(axis=(0, 1))
                d_x = d_x + d_side @ P[p + name].T

        drop = cache["drop.emb"]
        d_emb = d_x if drop is None else d_x * drop
        grads["tok_emb"] = np.zeros_like(P["tok_emb"])
        np.add.at(grads["tok_emb"], tokens, d_emb)
        grads["pos_emb"] = np.zeros_like(P["pos_emb"])
        grads["pos_emb"][: tokens.shape[1]] = d_emb.sum(axis=0)
        return grads

    # ---------------------------------------------------------- public API

    def encode(
        self,
        seqs: Sequence[Sequence[int]],
        dropout_seed: Optional[int] = None,
        batch_ids: Optional[Sequence] = None,
    ) -> EmbeddingBatch:
        cache = self.forward(seqs, dropout_seed)
        ids = tuple(batch_ids) if batch_ids is not None else tuple(range(len(seqs)))
        return EmbeddingBatch(cache["pooled"], TEXT, ids)

    def dropout_positive_pair(
        self,
        seqs: Sequence[Sequence[int]],
        seed_a: int,
        seed_b: int,
        batch_ids: Optional[Sequence] = None,
    ) -> tuple[EmbeddingBatch, EmbeddingBatch]:
        """Two encodings of the same captions under independent dropout."""
        if seed_a == seed_b:
            raise ConfigError(
                f"dropout seeds must differ (both {seed_a}); equal seeds collapse the positives"
            )
        return (
            self.encode(seqs, seed_a, batch_ids),
            self.encode(seqs, seed_b, batch_ids),
        )

    def block_activations(self, seqs: Sequence[Sequence[int]]) -> list[np.ndarray]:
        """Per-block mean-pooled hidden states, dropout disabled."""
        return self.forward(seqs, dropout_seed=None)["block_pooled"]

    def masked_forward(self, seqs, dropout_seed: Optional[int] = None):
        """Per-position distributions over the vocabulary, plus the cache."""
        cache = self.forward(seqs, dropout_seed)
        logits = cache["hidden"] @ self.params["mlm_w"] + self.params["mlm_b"]
        dists = _softmax_last(logits)
        cache["mlm_dists"] = dists
        return dists, cache

    def mlm_step(self, seqs, selections, dropout_seed: Optional[int] = None):
        """Fused masked-token loss and gradients.

        ``selections`` is a list of (batch index, position, target id)
        triples; the loss is the mean cross-entropy over them.
        Returns (loss, gradient dict covering trunk and head).
        """
        if not selections:
            return 0.0, {}
        dists, cache = self.masked_forward(seqs, dropout_seed)
        rows = np.array([s[0] for s in selections])
        cols = np.array([s[1] for s in selections])
        targets = np.array([s[2] for s in selections])
        length = cache["tokens"].shape[1]
        if np.any(cols >= length) or np.any(cols < 0):
            raise ValidationError("masked position outside the padded batch")
        picked = dists[rows, cols, :]
        loss = float(np.mean(-np.log(picked[np.arange(len(selections)), targets])))
        d_logits_sel = picked.copy()
        d_logits_sel[np.arange(len(selections)), targets] -= 1.0
        d_logits_sel /= len(selections)
        d_logits = np.zeros_like(dists)
        np.add.at(d_logits, (rows, cols), d_logits_sel)
        hidden = cache["hidden"]
        grads = self.backward(cache, d_hidden=d_logits @ self.params["mlm_w"].T)
        grads["mlm_w"] = np.einsum("bld,blv->dv", hidden, d_logits)
        grads["mlm_b"] = d_logits.sum(axis=(0, 1))
        return loss, grads

    def voken_step(self, seqs, voken_targets, dropout_seed: Optional[int] = None):
        """Fused voken-classification loss and gradients.

        ``voken_targets`` is a (B, L) array aligned to the padded batch;
        entries of -1 mark positions without a voken and are excluded.
        """
        if self.config.voken_count == 0:
            raise ConfigError("encoder was built without a voken head")
        cache = self.forward(seqs, dropout_seed)
        targets = np.asarray(voken_targets, dtype=np.int64)
        if targets.shape != cache["tokens"].shape:
            raise ShapeError(
                f"voken targets shape {targets.shape} does not match batch {cache['tokens'].shape}"
            )
        logits = cache["hidden"] @ self.params["voken_w"] + self.params["voken_b"]
        dists = _softmax_last(logits)
        assigned = targets >= 0
        count = int(assigned.sum())
        if count == 0:
            return 0.0, {}
        rows, cols = np.nonzero(assigned)
        tgt = targets[rows, cols]
        picked = dists[rows, cols, :]
        loss = float(np.mean(-np.log(picked[np.arange(count), tgt])))
        d_logits_sel = picked.copy()
        d_logits_sel[np.arange(count), tgt] -= 1.0
        d_logits_sel /= count
        d_logits = np.zeros_like(dists)
        d_logits[rows, cols] = d_logits_sel
        grads = self.backward(cache, d_hidden=d_logits @ self.params["voken_w"].T)
        grads["voken_w"] = np.einsum("bld,blk->dk", cache["hidden"], d_logits)
        grads["voken_b"] = d_logits.sum(axis=(0, 1))
        return loss, grads

    def token_states(self, seqs) -> tuple[np.ndarray, np.ndarray]:
        """Contextual per-token states and the real-token mask, dropout
        disabled; used for voken assignment."""
        cache = self.forward(seqs, dropout_seed=None)
        return cache["hidden"], cache["mask"]

    # -------------------------------------------------------- param plumbing

    def get_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(params)
        extra = set(params) - set(self.params)
        if missing or extra:
            raise ConfigError(
                f"parameter names do not match encoder: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for k, v in params.items():
            if v.shape != self.params[k].shape:
                raise ShapeError(
                    f"parameter {k}: shape {v.shape} does not match {self.params[k].shape}"
                )
            self.params[k] = np.asarray(v, dtype=np.float64).copy()

    def clone(self) -> "TextEncoder":
        twin = TextEncoder(self.config, seed=0)
        twin.set_params(self.params)
        return twin


# ---------------------------------------------------------------------------
# image side
# ---------------------------------------------------------------------------

FEATURE_MAGIC = b"CMKTFEAT"
FEATURE_VERSION = 1


class FeatureBank:
    """Immutable store of precomputed image feature rows, keyed by id."""

    def __init__(self, ids: Sequence[str], features: np.ndarray):
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2:
            raise ShapeError(f"feature bank must be 2-D, got shape {features.shape}")
        ids = list(ids)
        if len(ids) != features.shape[0]:
            raise ShapeError(f"{len(ids)} ids for {features.shape[0]} feature rows")
        if len(set(ids)) != len(ids):
            raise ValidationError("feature bank ids must be unique")
        self._ids = ids
        self._features = features
        self._features.setflags(write=False)
        self._row_of = {img_id: row for row, img_id in enumerate(ids)}

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @property
    def dim(self) -> int:
        return self._features.shape[1]

    def __len__(self) -> int:
        return self._features.shape[0]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._row_of

    def vectors(self, image_ids: Sequence[str]) -> np.ndarray:
        rows = []
        for img_id in image_ids:
            if img_id not in self._row_of:
                raise FeatureLookupError(f"image id {img_id!r} not in feature bank")
            rows.append(self._row_of[img_id])
        return self._features[rows].astype(np.float64)

    def checksum(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self._features.tobytes())
        h.update("\n".join(self._ids).encode("utf-8"))
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = FEATURE_MAGIC + struct.pack(
            "<III", FEATURE_VERSION, len(self), self.dim
        )
        path.write_bytes(header + self._features.astype("<f4").tobytes())
        sidecar = "\n".join(f"{img_id}\t{row}" for row, img_id in enumerate(self._ids))
        Path(str(path) + ".ids").write_text(sidecar + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureBank":
        path = Path(path)
        raw = path.read_bytes()
        if len(raw) < 20 or raw[:8] != FEATURE_MAGIC:
            raise ParseError(f"{path}: not a feature bank file (bad magic)")
        version, count, dim = struct.unpack("<III", raw[8:20])
        if version != FEATURE_VERSION:
            raise ParseError(f"{path}: unsupported feature bank version {version}")
        expected = 20 + count * dim * 4
        if len(raw) != expected:
            raise ParseError(f"{path}: expected {expected} bytes, found {len(raw)}")
        features = np.frombuffer(raw[20:], dtype="<f4").reshape(count, dim)
        sidecar = Path(str(path) + ".ids")
        ids: list[Optional[str]] = [None] * count
        for lineno, line in enumerate(
            sidecar.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].isdigit():
                raise ParseError(f"{sidecar}: line {lineno}: expected 'id<TAB>row'")
            row = int(parts[1])
            if not 0 <= row < count or ids[row] is not None:
                raise ParseError(f"{sidecar}: line {lineno}: bad or duplicate row {row}")
            ids[row] = parts[0]
        if any(i is None for i in ids):
            raise ParseError(f"{sidecar}: id map does not cover all {count} rows")
        return cls(ids, features)


class ImageEncoder:
    """A frozen feature bank behind a trainable affine projection."""

    def __init__(self, bank: FeatureBank, proj_w: np.ndarray, proj_b: np.ndarray,
                 frozen: bool = True):
        proj_w = np.asarray(proj_w, dtype=np.float64)
        proj_b = np.asarray(proj_b, dtype=np.float64)
        if proj_w.ndim != 2 or proj_w.shape[0] != bank.dim:
            raise ShapeError(
                f"projection must map feature dim {bank.dim}, got shape {proj_w.shape}"
            )
        if proj_b.shape != (proj_w.shape[1],):
            raise ShapeError(
                f"projection bias shape {proj_b.shape} does not match output dim {proj_w.shape[1]}"
            )
        self.bank = bank
        self.params = {"proj_w": proj_w, "proj_b": proj_b}
        self.frozen = frozen

    @classmethod
    def identity(cls, bank: FeatureBank) -> "ImageEncoder":
        return cls(bank, np.eye(bank.dim), np.zeros(bank.dim))

    @classmethod
    def initialized(cls, bank: FeatureBank, out_dim: int, seed: int) -> "ImageEncoder":
        w = rng_for(seed, "init", "proj_w").normal(scale=0.2, size=(bank.dim, out_dim))
        return cls(bank, w, np.zeros(out_dim))

    @property
    def dim(self) -> int:
        return self.params["proj_w"].shape[1]

    def encode(self, image_ids: Sequence[str]) -> EmbeddingBatch:
        feats = self.bank.vectors(image_ids)
        out = feats @ self.params["proj_w"] + self.params["proj_b"]
        return EmbeddingBatch(out, IMAGE, tuple(image_ids))

    def backward(self, image_ids: Sequence[str], d_out: np.ndarray) -> dict[str, np.ndarray]:
        feats = self.bank.vectors(image_ids)
        return {"proj_w": feats.T @ d_out, "proj_b": d_out.sum(axis=0)}

    def get_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for k in ("proj_w", "proj_b"):
            if k not in params:
                raise ConfigError(f"missing image projection parameter {k}")
            if params[k].shape != self.params[k].shape:
                raise ShapeError(
                    f"parameter {k}: shape {params[k].shape} does not match {self.params[k].shape}"
                )
            self.params[k] = np.asarray(params[k], dtype=np.float64).copy()
