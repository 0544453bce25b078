"""Embedding gallery, deterministic ranking, and recall metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError

__all__ = [
    "EmbeddingIndex",
    "RecallReport",
    "rank",
    "rank_many",
    "recall_at_k",
    "subset_recall_at_k",
    "build_report",
    "RECALL_KS",
    "SUBSET_KS",
]

RECALL_KS = (1, 5, 10, 50)
SUBSET_KS = (1, 2, 3)


@dataclass
class EmbeddingIndex:
    ids: list[int]
    matrix: np.ndarray    # [G,d], unit rows

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if len(self.ids) != self.matrix.shape[0]:
            raise ShapeError(
                f"{len(self.ids)} ids for {self.matrix.shape[0]} embedding rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("gallery ids must be unique")
        norms = np.linalg.norm(self.matrix, axis=1)
        if self.matrix.size and np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("gallery embeddings must be unit-normalized")


@dataclass
class RecallReport:
    recall_at: dict[int, float]
    subset_recall_at: dict[int, float]
    avg: float

    def to_json(self) -> str:
        payload = {f"recall@{k}": v for k, v in self.recall_at.items()}
        payload.update({f"subset_recall@{k}": v for k, v in self.subset_recall_at.items()})
        payload["avg"] = self.avg
        return json.dumps(payload, indent=2) + "\n"


def rank(query: np.ndarray, index: EmbeddingIndex) -> list[int]:
    """Gallery ids by descending dot product; ties broken by ascending id."""
    if index.matrix.shape[0] == 0:
        raise ValueError("cannot rank against an empty index")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.matrix.shape[1],):
        raise ShapeError(
            f"query shape {query.shape} does not match index dim {index.matrix.shape[1]}"
        )
    scores = index.matrix @ query
    ids = np.asarray(index.ids)
    order = np.lexsort((ids, -scores))
    return [int(i) for i in ids[order]]


def rank_many(queries: np.ndarray, index: EmbeddingIndex) -> list[list[int]]:
    return [rank(q, index) for q in np.asarray(queries, dtype=np.float64)]


def recall_at_k(rankings: list[list[int]], truths: list[int], k: int) -> float:
    """Fraction of queries whose truth appears in the top k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(rankings) != len(truths):
        raise ShapeError(f"{len(rankings)} rankings for {len(truths)} truths")
    hits = 0
    for ranking, truth in zip(rankings, truths):
        if truth not in ranking:
            raise ValueError(f"truth id {truth} absent from gallery ranking")
        if truth in ranking[:k]:
            hits += 1
    return hits / len(rankings)


def subset_recall_at_k(rankings: list[list[int]], truths: list[int],
                       subset_groups: list[set[int]], k: int) -> float:
    """Recall after restricting each ranking to the query's candidate group."""
    if len(rankings) != len(truths) or len(truths) != len(subset_groups):
        raise ShapeError("rankings, truths, and groups must align")
    filtered = []
    for ranking, truth, group in zip(rankings, truths, subset_groups):
        if len(group) < 2:
            raise ValueError(f"subset group for truth {truth} has fewer than 2 members")
        filtered.append([i for i in ranking if i in group])
    return recall_at_k(filtered, truths, k)


def build_report(rankings: list[list[int]], truths: list[int],
                 subset_groups: list[set[int]]) -> RecallReport:
    recall = {k: recall_at_k(rankings, truths, k) for k in RECALL_KS}
    subset = {k: subset_recall_at_k(rankings, truths, subset_groups, k)
              for k in SUBSET_KS}
    avg = (recall[5] + subset[1]) / 2.0
    return RecallReport(recall_at=recall, subset_recall_at=subset, avg=avg)
