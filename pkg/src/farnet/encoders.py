"""Tiny trainable encoders and the shared cross-attention block.

Both encoders are small pre-norm transformers over float64 tensors from the
numerics package: the image encoder embeds non-overlapping patches, the text
encoder embeds token ids, and both pool by averaging token features and
normalizing to unit length. The cross-attention block projects image region
tokens to queries and text tokens to keys/values and exposes its row-stochastic
attention map; one block instance serves the reference and target branches so
their parameters are identical by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics import (
    Rng,
    ShapeError,
    Tensor,
    concat,
    embed_rows,
    gelu,
    layer_norm,
    matmul,
    normalize_rows,
    permute,
    reshape,
    softmax_rows,
    tmean,
    transpose_last,
)

__all__ = [
    "VocabularyError",
    "TransformerBlock",
    "ImageEncoder",
    "TextEncoder",
    "CrossAttentionBlock",
    "AttentionPair",
    "encode_image",
    "encode_text",
    "cross_attention",
]

WEIGHT_STD = 0.02
# strong positional code: retrieval must separate scenes that differ only in
# object placement, and mean pooling keeps position only through token content
POS_STD = 0.1


class VocabularyError(ValueError):
    """Token sequence is empty, too long, or holds an out-of-range id."""


def _weight(rng: Rng, shape, std: float = WEIGHT_STD) -> Tensor:
    return Tensor(rng.normal_array(shape, 0.0, std), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class TransformerBlock:
    """Pre-norm residual block: multi-head self-attention then a 2-layer MLP."""

    def __init__(self, d: int, heads: int, rng: Rng):
        if d % heads != 0:
            raise ShapeError(f"embed dim {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.ln1_g, self.ln1_b = _ones(d), _zeros(d)
        self.wq = _weight(rng, (d, d))
        self.wk = _weight(rng, (d, d))
        self.wv = _weight(rng, (d, d))
        self.wo = _weight(rng, (d, d))
        self.ln2_g, self.ln2_b = _ones(d), _zeros(d)
        hidden = 2 * d
        self.w1, self.b1 = _weight(rng, (d, hidden)), _zeros(hidden)
        self.w2, self.b2 = _weight(rng, (hidden, d)), _zeros(d)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        names = ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
                 "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"]
        return {f"{prefix}.{n}": getattr(self, n) for n in names}

    def _heads_view(self, x: Tensor, b: int, s: int) -> Tensor:
        dh = self.d // self.heads
        return permute(reshape(x, (b, s, self.heads, dh)), (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        b, s, d = x.shape
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        q = self._heads_view(matmul(h, self.wq), b, s)
        k = self._heads_view(matmul(h, self.wk), b, s)
        v = self._heads_view(matmul(h, self.wv), b, s)
        dh = d // self.heads
        att = softmax_rows(matmul(q, transpose_last(k)) * (1.0 / math.sqrt(dh)))
        o = permute(matmul(att, v), (0, 2, 1, 3))
        x = x + matmul(reshape(o, (b, s, d)), self.wo)
        h2 = layer_norm(x, self.ln2_g, self.ln2_b)
        return x + matmul(gelu(matmul(h2, self.w1) + self.b1), self.w2) + self.b2


class ImageEncoder:
    """Patch projection + positional embeddings + transformer + mean pooling."""

    def __init__(self, image_size: int, patch_size: int, d: int,
                 n_layers: int, heads: int, rng: Rng):
        if image_size % patch_size != 0:
            raise ShapeError(
                f"image size {image_size} not divisible by patch size {patch_size}"
            )
        self.image_size = image_size
        self.patch_size = patch_size
        self.d = d
        side = image_size // patch_size
        self.n_regions = side * side
        in_dim = patch_size * patch_size * 3
        self.patch_w = _weight(rng, (in_dim, d))
        self.patch_b = _zeros(d)
        self.pos = Tensor(rng.normal_array((self.n_regions, d), 0.0, POS_STD),
                          requires_grad=True)
        self.blocks = [TransformerBlock(d, heads, rng) for _ in range(n_layers)]
        self.ln_g, self.ln_b = _ones(d), _zeros(d)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.patch_w": self.patch_w, f"{prefix}.patch_b": self.patch_b,
               f"{prefix}.pos": self.pos}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_parameters(f"{prefix}.block{i}"))
        out[f"{prefix}.ln_g"] = self.ln_g
        out[f"{prefix}.ln_b"] = self.ln_b
        return out

    def _patchify(self, images: np.ndarray) -> np.ndarray:
        b, h, w, c = images.shape
        if c != 3:
            raise ShapeError(f"expected 3 channels, got {c}")
        p = self.patch_size
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        if h != self.image_size or w != self.image_size:
            raise ShapeError(
                f"encoder built for {self.image_size}x{self.image_size} images, "
                f"got {h}x{w}"
            )
        patches = images.reshape(b, h // p, p, w // p, p, c)
        patches = patches.transpose(0, 1, 3, 2, 4, 5)
        return patches.reshape(b, self.n_regions, p * p * c)

    def encode(self, images: np.ndarray) -> tuple[Tensor, Tensor]:
        """images: float64 [B,H,W,3] in [0,1] -> (regions [B,r,d], pooled [B,d])."""
        pixels = np.asarray(images, dtype=np.float64) * 2.0 - 1.0
        x = Tensor(self._patchify(pixels))
        tokens = matmul(x, self.patch_w) + self.patch_b + self.pos
        for blk in self.blocks:
            tokens = blk(tokens)
        regions = layer_norm(tokens, self.ln_g, self.ln_b)
        pooled = normalize_rows(tmean(regions, axis=1))
        return regions, pooled


class TextEncoder:
    """Token + positional embeddings + transformer + mean pooling.

    Also encodes sequences with a continuous prefix prepended to the token
    embeddings, which is how fused region features re-enter the text branch
    as soft prompts.
    """

    def __init__(self, vocab_size: int, max_len: int, d: int,
                 n_layers: int, heads: int, rng: Rng):
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.d = d
        self.tok = _weight(rng, (vocab_size, d))
        self.pos = Tensor(rng.normal_array((max_len, d), 0.0, POS_STD),
                          requires_grad=True)
        self.blocks = [TransformerBlock(d, heads, rng) for _ in range(n_layers)]
        self.ln_g, self.ln_b = _ones(d), _zeros(d)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.tok": self.tok, f"{prefix}.pos": self.pos}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named_parameters(f"{prefix}.block{i}"))
        out[f"{prefix}.ln_g"] = self.ln_g
        out[f"{prefix}.ln_b"] = self.ln_b
        return out

    def _check_ids(self, ids: np.ndarray, extra: int = 0) -> None:
        if ids.ndim != 2:
            raise ShapeError(f"token ids must be [B,t], got shape {ids.shape}")
        t = ids.shape[1]
        if t < 1:
            raise VocabularyError("empty token sequence")
        if t + extra > self.max_len:
            raise VocabularyError(
                f"sequence length {t + extra} exceeds max length {self.max_len}"
            )
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise VocabularyError(
                f"token id out of range for vocabulary of {self.vocab_size}"
            )

    def _run(self, x: Tensor) -> tuple[Tensor, Tensor]:
        s = x.shape[1]
        x = x + embed_rows(self.pos, np.arange(s))
        for blk in self.blocks:
            x = blk(x)
        feats = layer_norm(x, self.ln_g, self.ln_b)
        pooled = normalize_rows(tmean(feats, axis=1))
        return feats, pooled

    def encode(self, ids: np.ndarray) -> tuple[Tensor, Tensor]:
        """ids: int [B,t] -> (token features [B,t,d], pooled [B,d])."""
        ids = np.asarray(ids, dtype=np.int64)
        self._check_ids(ids)
        return self._run(embed_rows(self.tok, ids))

    def encode_with_prefix(self, prefix: Tensor, ids: np.ndarray) -> tuple[Tensor, Tensor]:
        """Prepend a [B,r,d] continuous prefix to the embedded ids, then encode."""
        ids = np.asarray(ids, dtype=np.int64)
        self._check_ids(ids, extra=prefix.shape[1])
        x = concat([prefix, embed_rows(self.tok, ids)], axis=1)
        return self._run(x)


class CrossAttentionBlock:
    """Single-head cross-attention from image regions onto text tokens."""

    def __init__(self, d: int, rng: Rng):
        self.d = d
        self.wq = _weight(rng, (d, d))
        self.wk = _weight(rng, (d, d))
        self.wv = _weight(rng, (d, d))
        self.wo = _weight(rng, (d, d))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{n}": getattr(self, n) for n in ("wq", "wk", "wv", "wo")}

    def __call__(self, regions: Tensor, text_feats: Tensor) -> tuple[Tensor, Tensor]:
        """[B,r,d] x [B,t,d] -> (attended [B,r,d], map [B,r,t])."""
        if regions.shape[-1] != self.d or text_feats.shape[-1] != self.d:
            raise ShapeError(
                f"embed dims disagree: regions {regions.shape}, "
                f"text {text_feats.shape}, block d={self.d}"
            )
        q = matmul(regions, self.wq)
        k = matmul(text_feats, self.wk)
        v = matmul(text_feats, self.wv)
        amap = softmax_rows(matmul(q, transpose_last(k)) * (1.0 / math.sqrt(self.d)))
        attended = matmul(matmul(amap, v), self.wo)
        return attended, amap


class AttentionPair:
    """Reference-branch and target-branch maps for one triplet."""

    __slots__ = ("a_ref", "a_tgt")

    def __init__(self, a_ref: Tensor, a_tgt: Tensor):
        if a_ref.shape != a_tgt.shape:
            raise ShapeError(
                f"attention maps must share a shape, got {a_ref.shape} "
                f"and {a_tgt.shape}"
            )
        self.a_ref = a_ref
        self.a_tgt = a_tgt


# ---------------------------------------------------------------------------
# single-instance wrappers matching the batched encoder methods


def encode_image(enc: ImageEncoder, img: np.ndarray) -> tuple[Tensor, Tensor]:
    regions, pooled = enc.encode(np.asarray(img, dtype=np.float64)[None])
    return reshape(regions, regions.shape[1:]), reshape(pooled, pooled.shape[1:])


def encode_text(enc: TextEncoder, ids) -> tuple[Tensor, Tensor]:
    feats, pooled = enc.encode(np.asarray(ids, dtype=np.int64)[None])
    return reshape(feats, feats.shape[1:]), reshape(pooled, pooled.shape[1:])


def cross_attention(regions: Tensor, text_feats: Tensor,
                    block: CrossAttentionBlock) -> tuple[Tensor, Tensor]:
    if regions.ndim == 2:
        attended, amap = block(reshape(regions, (1, *regions.shape)),
                               reshape(text_feats, (1, *text_feats.shape)))
        return reshape(attended, attended.shape[1:]), reshape(amap, amap.shape[1:])
    return block(regions, text_feats)
