"""Tensor arithmetic with reverse-mode autodiff, deterministic RNG, AdamW."""

from .optim import AdamW
from .rng import Rng
from .tensor import (
    DegenerateVectorError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    concat,
    cosine,
    embed_rows,
    gelu,
    layer_norm,
    log_softmax_nll,
    logsumexp,
    matmul,
    nll_rows,
    normalize_rows,
    permute,
    reshape,
    softmax_rows,
    stack,
    tanh,
    tensor,
    tmean,
    transpose_last,
    tsum,
)

__all__ = [
    "AdamW",
    "Rng",
    "DegenerateVectorError",
    "ShapeError",
    "Tape",
    "Tensor",
    "backward",
    "concat",
    "cosine",
    "embed_rows",
    "gelu",
    "layer_norm",
    "log_softmax_nll",
    "logsumexp",
    "matmul",
    "nll_rows",
    "normalize_rows",
    "permute",
    "reshape",
    "softmax_rows",
    "stack",
    "tanh",
    "tensor",
    "tmean",
    "transpose_last",
    "tsum",
]
