"""Adaptive reconciliation: early-fusion retrieval losses with
uncertainty-scaled perturbations of the target embeddings and a
prompt-to-image alignment term.

Perturbed targets are built as ``alpha * v + beta`` with elementwise noise
drawn around (1, stats.mu) at scale stats.sigma. The noise enters the graph
as constants, so gradients reach ``v`` only through the alpha scaling. The
retrieval objective defaults to in-batch negatives; the ``as_written`` mode
restricts the denominator to matched query/target products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    Rng,
    ShapeError,
    Tensor,
    logsumexp,
    matmul,
    nll_rows,
    tmean,
    transpose_last,
    tsum,
)

__all__ = [
    "TargetStats",
    "RunningTargetStats",
    "PerturbationConfig",
    "estimate_target_stats",
    "perturb",
    "retrieval_loss",
    "loss_res",
    "loss_pi",
    "loss_arm",
    "loss_total",
    "sum_terms",
]

NEGATIVE_MODES = ("in_batch", "as_written")
STATS_MODES = ("per_batch", "running")


@dataclass(frozen=True)
class TargetStats:
    """Scalar mean and standard deviation of the target feature entries."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")


@dataclass
class PerturbationConfig:
    lambda2: float
    stats_mode: str = "per_batch"
    rng_stream_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lambda2 <= 1.0:
            raise ValueError(f"lambda2 must be in [0,1], got {self.lambda2}")
        if self.stats_mode not in STATS_MODES:
            raise ValueError(f"unknown stats_mode {self.stats_mode!r}")


class RunningTargetStats:
    """Cumulative mean/variance over every target entry seen so far (Welford)."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values: np.ndarray) -> TargetStats:
        for x in np.asarray(values, dtype=np.float64).reshape(-1):
            self.count += 1
            delta = x - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (x - self.mean)
        sigma = float(np.sqrt(self.m2 / self.count)) if self.count else 0.0
        return TargetStats(mu=float(self.mean), sigma=sigma)


def estimate_target_stats(v: Tensor) -> TargetStats:
    """Mean and population standard deviation over all entries of ``v``."""
    data = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    if data.size == 0:
        raise ShapeError("cannot estimate statistics of an empty batch")
    return TargetStats(mu=float(data.mean()), sigma=float(data.std()))


def perturb(v: Tensor, stats: TargetStats, rng: Rng) -> Tensor:
    """Elementwise ``alpha * v + beta`` with alpha ~ N(1, sigma), beta ~ N(mu, sigma).

    With sigma == 0 the result is exactly ``v`` shifted by the constant mu
    (and bitwise equal to ``v`` when mu is also 0). Noise takes no gradient.
    """
    if not np.isfinite(stats.mu) or not np.isfinite(stats.sigma):
        raise ValueError(f"non-finite target statistics: {stats}")
    shape = v.shape
    alpha = rng.normal_array(shape, 1.0, stats.sigma)
    beta = rng.normal_array(shape, stats.mu, stats.sigma)
    if stats.sigma == 0.0:
        # keep the degenerate case bitwise exact
        alpha = np.ones(shape)
        beta = np.full(shape, stats.mu)
    return v * Tensor(alpha) + Tensor(beta)


def retrieval_loss(u: Tensor, v_star: Tensor, tau: float,
                   negatives_mode: str = "in_batch") -> Tensor:
    """Contrastive retrieval objective over query/target dot products."""
    if negatives_mode not in NEGATIVE_MODES:
        raise ValueError(f"unknown negatives_mode {negatives_mode!r}")
    if u.shape != v_star.shape:
        raise ShapeError(f"query/target shapes differ: {u.shape} vs {v_star.shape}")
    b = u.shape[0]
    if b < 2:
        raise ShapeError(f"contrastive loss needs batch size >= 2, got {b}")
    if negatives_mode == "in_batch":
        logits = matmul(u, transpose_last(v_star)) * (1.0 / tau)
        return nll_rows(logits, np.arange(b))
    sims = tsum(u * v_star, axis=1) * (1.0 / tau)
    return logsumexp(sims) - tmean(sims)


def loss_res(u: Tensor, v: Tensor, v_hat: Tensor, tau: float, lambda2: float,
             negatives_mode: str = "in_batch") -> Tensor:
    """Blend of the clean and the perturbed retrieval losses."""
    if not 0.0 <= lambda2 <= 1.0:
        raise ValueError(f"lambda2 must be in [0,1], got {lambda2}")
    early = retrieval_loss(u, v, tau, negatives_mode)
    uncertainty = retrieval_loss(u, v_hat, tau, negatives_mode)
    return early * lambda2 + uncertainty * (1.0 - lambda2)


def loss_pi(u_prime: Tensor, v: Tensor, tau: float,
            negatives_mode: str = "in_batch") -> Tensor:
    """Prompt-to-image alignment; same objective with the prompt embedding as query."""
    return retrieval_loss(u_prime, v, tau, negatives_mode)


def sum_terms(terms: list[Tensor | None]) -> Tensor:
    """Sum present tensors; an all-None list sums to a constant zero."""
    present = [t for t in terms if t is not None]
    if not present:
        return Tensor(np.asarray(0.0))
    total = present[0]
    for t in present[1:]:
        total = total + t
    return total


def loss_arm(res: Tensor | None, pi: Tensor | None) -> Tensor:
    """Sum of the enabled reconciliation terms."""
    return sum_terms([res, pi])


def loss_total(esam: Tensor, arm: Tensor) -> Tensor:
    return esam + arm
