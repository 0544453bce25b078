"""AdamW with decoupled weight decay and bias-corrected moments."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["AdamW"]


class AdamW:
    """Per-parameter first/second moment state plus a shared step counter.

    Weight decay multiplies the parameter directly (it never enters the
    moment estimates), so with a zero gradient one step shrinks a parameter
    by exactly ``1 - lr * weight_decay``.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} shape {p.data.shape}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay != 0.0:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> dict:
        return {"step_count": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for name in self.params:
            self.m[name] = np.array(state["m"][name], dtype=np.float64)
            self.v[name] = np.array(state["v"][name], dtype=np.float64)
