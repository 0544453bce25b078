"""Enhanced semantic alignment: late-fusion contrastive loss plus
attention-map agreement between the reference and target branches.

The late loss scores each fused-and-projected query against every target in
the batch (full in-batch negatives). The attention loss compares the two
branches' maps for the same triplet through the cosine of their flattened
maps; its denominator by default ranges over the batch's matched-pair
similarities only, with an ``in_batch`` variant that cross-scores all pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import (
    AttentionPair,
    CrossAttentionBlock,
    cross_attention,
    _weight,
    _zeros,
)
from .numerics import (
    Rng,
    ShapeError,
    Tensor,
    gelu,
    logsumexp,
    matmul,
    nll_rows,
    normalize_rows,
    reshape,
    stack,
    tmean,
    transpose_last,
    tsum,
)

__all__ = [
    "ProjectionMlp",
    "FusionConfig",
    "FusedBatch",
    "fuse",
    "loss_late",
    "attention_pair",
    "loss_attention",
    "loss_attention_from_maps",
    "loss_esam",
]

ATTENTION_NEGATIVE_MODES = ("as_written", "in_batch")


class ProjectionMlp:
    """Two-layer perceptron (d -> 2d -> d) used to project fused features."""

    def __init__(self, d: int, rng: Rng):
        hidden = 2 * d
        self.w1, self.b1 = _weight(rng, (d, hidden)), _zeros(hidden)
        self.w2, self.b2 = _weight(rng, (hidden, d)), _zeros(d)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{n}": getattr(self, n) for n in ("w1", "b1", "w2", "b2")}

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(gelu(matmul(x, self.w1) + self.b1), self.w2) + self.b2


@dataclass
class FusionConfig:
    lambda1: float
    tau: float
    mlp: ProjectionMlp
    attention_negatives: str = "as_written"

    def __post_init__(self):
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ValueError(f"lambda1 must be in [0,1], got {self.lambda1}")
        if self.tau <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.attention_negatives not in ATTENTION_NEGATIVE_MODES:
            raise ValueError(f"unknown attention_negatives {self.attention_negatives!r}")


@dataclass
class FusedBatch:
    """Everything the two alignment losses consume for one batch."""

    fused: Tensor                 # [B,d] convex image/text mixtures
    projected: Tensor             # [B,d] unit rows, MLP-projected fused features
    targets: Tensor               # [B,d] unit rows, target image embeddings
    attention_pairs: list[AttentionPair] = field(default_factory=list)

    def __post_init__(self):
        b = self.fused.shape[0]
        if b < 2:
            raise ShapeError(f"contrastive training needs batch size >= 2, got {b}")


def fuse(img_pooled: Tensor, txt_pooled: Tensor, lambda1: float) -> Tensor:
    """Convex combination of the two pooled modality embeddings."""
    if not 0.0 <= lambda1 <= 1.0:
        raise ValueError(f"lambda1 must be in [0,1], got {lambda1}")
    if img_pooled.shape != txt_pooled.shape:
        raise ShapeError(
            f"fuse needs equal shapes, got {img_pooled.shape} and {txt_pooled.shape}"
        )
    return img_pooled * lambda1 + txt_pooled * (1.0 - lambda1)


def loss_late(batch: FusedBatch, tau: float) -> Tensor:
    """Mean NLL of each projected query against all batch targets."""
    logits = matmul(batch.projected, transpose_last(batch.targets)) * (1.0 / tau)
    b = logits.shape[0]
    return nll_rows(logits, np.arange(b))


def attention_pair(ref_regions: Tensor, tgt_regions: Tensor, text_feats: Tensor,
                   block: CrossAttentionBlock) -> AttentionPair:
    """Run both branches through the same block over shared text features."""
    if ref_regions.shape != tgt_regions.shape:
        raise ShapeError(
            f"branch region shapes differ: {ref_regions.shape} vs {tgt_regions.shape}"
        )
    _, a_ref = cross_attention(ref_regions, text_feats, block)
    _, a_tgt = cross_attention(tgt_regions, text_feats, block)
    return AttentionPair(a_ref, a_tgt)


def _flatten_maps(pairs: list[AttentionPair]) -> tuple[Tensor, Tensor]:
    if not pairs:
        raise ShapeError("empty attention-pair batch")
    shape = pairs[0].a_ref.shape
    for p in pairs:
        if p.a_ref.shape != shape:
            raise ShapeError("attention pairs must share one map shape")
    ref = stack([reshape(p.a_ref, (-1,)) for p in pairs])
    tgt = stack([reshape(p.a_tgt, (-1,)) for p in pairs])
    return ref, tgt


def loss_attention_from_maps(a_ref: Tensor, a_tgt: Tensor, tau: float,
                             mode: str = "as_written") -> Tensor:
    """Contrastive agreement of flattened [B,r,t] attention maps."""
    if mode not in ATTENTION_NEGATIVE_MODES:
        raise ValueError(f"unknown attention_negatives {mode!r}")
    b = a_ref.shape[0]
    ref = normalize_rows(reshape(a_ref, (b, -1)))
    tgt = normalize_rows(reshape(a_tgt, (b, -1)))
    if mode == "in_batch":
        logits = matmul(ref, transpose_last(tgt)) * (1.0 / tau)
        return nll_rows(logits, np.arange(b))
    sims = tsum(ref * tgt, axis=1) * (1.0 / tau)
    return logsumexp(sims) - tmean(sims)


def loss_attention(pairs: list[AttentionPair], tau: float,
                   mode: str = "as_written") -> Tensor:
    ref, tgt = _flatten_maps(pairs)
    b, n = ref.shape
    return loss_attention_from_maps(reshape(ref, (b, 1, n)), reshape(tgt, (b, 1, n)),
                                    tau, mode)


def loss_esam(batch: FusedBatch, tau: float, attention_negatives: str = "as_written",
              use_late: bool = True, use_attention: bool = True) -> Tensor:
    """Sum of the enabled alignment terms."""
    terms = []
    if use_late:
        terms.append(loss_late(batch, tau))
    if use_attention:
        terms.append(loss_attention(batch.attention_pairs, tau, attention_negatives))
    if not terms:
        return Tensor(np.asarray(0.0))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total
