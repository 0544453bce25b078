"""Attention-map localization scoring against renderer foreground masks."""

from __future__ import annotations

import numpy as np

from .data import SceneSpec, foreground_mask

__all__ = [
    "patch_foreground_fractions",
    "foreground_attention_score",
    "read_map_csv",
    "write_map_csv",
]


def patch_foreground_fractions(spec: SceneSpec, image_size: int,
                               patch: int) -> np.ndarray:
    """Fraction of object pixels inside each patch, row-major over patches."""
    mask = foreground_mask(spec, image_size).astype(np.float64)
    side = image_size // patch
    blocks = mask.reshape(side, patch, side, patch).transpose(0, 2, 1, 3)
    return blocks.reshape(side * side, patch * patch).mean(axis=1)


def foreground_attention_score(amap: np.ndarray,
                               fractions: np.ndarray) -> tuple[float, float]:
    """(foreground attention mass, uniform baseline) for one map.

    Rows of ``amap`` are per-region distributions over tokens, so raw row
    mass cannot localize anything; instead each token's column is normalized
    over regions and weighted by the patch foreground fraction. A uniform
    map scores exactly the image's foreground fraction, which is the
    baseline returned alongside.
    """
    amap = np.asarray(amap, dtype=np.float64)
    fractions = np.asarray(fractions, dtype=np.float64)
    if amap.shape[0] != fractions.shape[0]:
        raise ValueError(
            f"map has {amap.shape[0]} regions but {fractions.shape[0]} fractions given"
        )
    col = amap / np.maximum(amap.sum(axis=0, keepdims=True), 1e-300)
    per_token = fractions @ col
    return float(per_token.mean()), float(fractions.mean())


def write_map_csv(path, amap: np.ndarray) -> None:
    lines = [",".join(repr(float(x)) for x in row) for row in np.asarray(amap)]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_map_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")])
    return np.asarray(rows, dtype=np.float64)
