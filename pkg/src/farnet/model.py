"""Full retrieval model: encoders, fusion losses, and evaluation embeddings.

One ``Model`` owns every trainable tensor. The training forward produces the
individual loss terms (late, attention, resilience, prompt-to-image) plus
their sums, honoring ablation flags by skipping disabled terms. Evaluation
helpers run the same graph without a tape and return plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arm as arm_mod
from . import esam as esam_mod
from .encoders import CrossAttentionBlock, ImageEncoder, TextEncoder, _weight
from .esam import FusedBatch, ProjectionMlp
from .numerics import Rng, Tensor, matmul, normalize_rows, tmean

__all__ = ["ModelConfig", "TripletArrays", "LossBreakdown", "Model", "QUERY_SOURCES"]

QUERY_SOURCES = ("u", "mlp_fu", "mean_u_uprime")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 64
    layers: int = 2
    heads: int = 4
    patch: int = 8
    image_size: int = 32
    max_text_len: int = 8
    lambda1: float = 0.5
    lambda2: float = 0.5
    tau: float = 0.07
    negatives_mode: str = "in_batch"
    attention_negatives: str = "as_written"
    stats_mode: str = "per_batch"
    share_image_encoders: bool = True
    use_late: bool = True
    use_attention: bool = True
    use_res: bool = True
    use_pi: bool = True

    @property
    def n_regions(self) -> int:
        return (self.image_size // self.patch) ** 2


@dataclass
class TripletArrays:
    """One batch of raw model inputs."""

    ref_images: np.ndarray    # [B,H,W,3] float64 in [0,1]
    token_ids: np.ndarray     # [B,t] int64
    tgt_images: np.ndarray    # [B,H,W,3]


@dataclass
class LossBreakdown:
    late: Tensor | None
    attention: Tensor | None
    res: Tensor | None
    pi: Tensor | None
    esam: Tensor
    arm: Tensor
    total: Tensor

    def scalars(self) -> dict[str, float]:
        def val(t):
            return 0.0 if t is None else t.item()
        return {
            "loss_late": val(self.late),
            "loss_attention": val(self.attention),
            "loss_res": val(self.res),
            "loss_pi": val(self.pi),
            "loss_total": self.total.item(),
        }


class Model:
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        init = rng.substream(11)
        self.img_enc = ImageEncoder(cfg.image_size, cfg.patch, cfg.d,
                                    cfg.layers, cfg.heads, init)
        if cfg.share_image_encoders:
            self.tgt_enc = self.img_enc
        else:
            self.tgt_enc = ImageEncoder(cfg.image_size, cfg.patch, cfg.d,
                                        cfg.layers, cfg.heads, init)
        max_len = cfg.n_regions + cfg.max_text_len
        self.txt_enc = TextEncoder(cfg.vocab_size, max_len, cfg.d,
                                   cfg.layers, cfg.heads, init)
        self.xattn = CrossAttentionBlock(cfg.d, init)
        self.mlp = ProjectionMlp(cfg.d, init)
        self.query_proj = _weight(init, (cfg.d, cfg.d))
        self.running_stats = arm_mod.RunningTargetStats()

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.img_enc.named_parameters("img")
        if not self.cfg.share_image_encoders:
            out.update(self.tgt_enc.named_parameters("tgt"))
        out.update(self.txt_enc.named_parameters("txt"))
        out.update(self.xattn.named_parameters("xattn"))
        out.update(self.mlp.named_parameters("mlp"))
        out["query_proj"] = self.query_proj
        return out

    # -- forward pieces ----------------------------------------------------

    def _encode_all(self, batch: TripletArrays):
        ref_regions, ref_pooled = self.img_enc.encode(batch.ref_images)
        tgt_regions, tgt_pooled = self.tgt_enc.encode(batch.tgt_images)
        txt_feats, txt_pooled = self.txt_enc.encode(batch.token_ids)
        return ref_regions, ref_pooled, tgt_regions, tgt_pooled, txt_feats, txt_pooled

    def _early_fused(self, ref_regions: Tensor, attended_ref: Tensor) -> Tensor:
        """Token-level fusion: region stream plus its text-attended values.

        Keeping the residual region stream matters; the attended values alone
        span only the text-token value vectors, which starves the query of
        image identity.
        """
        return ref_regions + attended_ref

    def _fused_query(self, fused_seq: Tensor) -> Tensor:
        """Mean-pool the fused sequence, project, normalize."""
        return normalize_rows(matmul(tmean(fused_seq, axis=1), self.query_proj))

    def _prompt_embedding(self, fused_seq: Tensor, token_ids: np.ndarray) -> Tensor:
        """Feed the fused sequence back through the text encoder as a prefix."""
        _, pooled = self.txt_enc.encode_with_prefix(fused_seq, token_ids)
        return pooled

    def target_stats(self, v: Tensor) -> arm_mod.TargetStats:
        if self.cfg.stats_mode == "running":
            return self.running_stats.update(v.data)
        return arm_mod.estimate_target_stats(v)

    # -- training objective -------------------------------------------------

    def forward_losses(self, batch: TripletArrays, step_rng: Rng) -> LossBreakdown:
        cfg = self.cfg
        (ref_regions, ref_pooled, tgt_regions, tgt_pooled,
         txt_feats, txt_pooled) = self._encode_all(batch)
        v = tgt_pooled

        late = None
        attention = None
        res = None
        pi = None

        need_ref_xattn = cfg.use_attention or cfg.use_res or cfg.use_pi
        fused_seq = a_ref = a_tgt = None
        if need_ref_xattn:
            attended_ref, a_ref = self.xattn(ref_regions, txt_feats)
            fused_seq = self._early_fused(ref_regions, attended_ref)
        if cfg.use_attention:
            _, a_tgt = self.xattn(tgt_regions, txt_feats)
            attention = esam_mod.loss_attention_from_maps(
                a_ref, a_tgt, cfg.tau, cfg.attention_negatives
            )
        if cfg.use_late:
            fused = esam_mod.fuse(ref_pooled, txt_pooled, cfg.lambda1)
            projected = normalize_rows(self.mlp(fused))
            fb = FusedBatch(fused=fused, projected=projected, targets=v)
            late = esam_mod.loss_late(fb, cfg.tau)
        if cfg.use_res:
            u = self._fused_query(fused_seq)
            stats = self.target_stats(v)
            v_hat = arm_mod.perturb(v, stats, step_rng)
            res = arm_mod.loss_res(u, v, v_hat, cfg.tau, cfg.lambda2,
                                   cfg.negatives_mode)
        if cfg.use_pi:
            u_prime = self._prompt_embedding(fused_seq, batch.token_ids)
            pi = arm_mod.loss_pi(u_prime, v, cfg.tau, cfg.negatives_mode)

        esam_total = arm_mod.sum_terms([late, attention])
        arm_total = arm_mod.loss_arm(res, pi)
        total = arm_mod.loss_total(esam_total, arm_total)
        return LossBreakdown(late=late, attention=attention, res=res, pi=pi,
                             esam=esam_total, arm=arm_total, total=total)

    # -- evaluation ---------------------------------------------------------

    def gallery_embeddings(self, images: np.ndarray) -> np.ndarray:
        """Unit-norm target-encoder embeddings for a [G,H,W,3] stack."""
        _, pooled = self.tgt_enc.encode(images)
        return pooled.data

    def query_embeddings(self, ref_images: np.ndarray, token_ids: np.ndarray,
                         source: str = "u") -> np.ndarray:
        if source not in QUERY_SOURCES:
            raise ValueError(f"unknown query_source {source!r}")
        ref_regions, ref_pooled = self.img_enc.encode(ref_images)
        txt_feats, txt_pooled = self.txt_enc.encode(token_ids)
        if source == "mlp_fu":
            fused = esam_mod.fuse(ref_pooled, txt_pooled, self.cfg.lambda1)
            return normalize_rows(self.mlp(fused)).data
        attended_ref, _ = self.xattn(ref_regions, txt_feats)
        fused_seq = self._early_fused(ref_regions, attended_ref)
        u = self._fused_query(fused_seq)
        if source == "u":
            return u.data
        u_prime = self._prompt_embedding(fused_seq, token_ids)
        return normalize_rows((u + u_prime) * 0.5).data

    def attention_maps(self, ref_images: np.ndarray, token_ids: np.ndarray,
                       tgt_images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Reference- and target-branch maps, [B,r,t] arrays."""
        ref_regions, _ = self.img_enc.encode(ref_images)
        tgt_regions, _ = self.tgt_enc.encode(tgt_images)
        txt_feats, _ = self.txt_enc.encode(token_ids)
        _, a_ref = self.xattn(ref_regions, txt_feats)
        _, a_tgt = self.xattn(tgt_regions, txt_feats)
        return a_ref.data, a_tgt.data
