"""Adaptive optimizer with decoupled weight decay and global-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NonFiniteGradient
from .tensor import Tensor


class AdamW:
    """Order of operations per step:

    1. global-norm clip of all gradients at `grad_clip`
    2. moment update and bias correction
    3. adaptive step, then decoupled decay lr*wd*param using the pre-step
       parameter value

    beta1/beta2/eps defaults (0.9, 0.999, 1e-8) are assumptions; only lr,
    weight decay, and the clip norm are pinned by the training recipe.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4, grad_clip: float = 1.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _gather_grads(self) -> dict[str, np.ndarray]:
        grads = {}
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {k!r}")
            grads[k] = g
        return grads

    def global_grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return math.sqrt(total)

    def step(self):
        grads = self._gather_grads()
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if self.grad_clip > 0.0 and norm > self.grad_clip:
            scale = self.grad_clip / norm
            grads = {k: g * scale for k, g in grads.items()}
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            pre = p.data
            p.data = pre - self.lr * m_hat / (np.sqrt(v_hat) + self.eps) \
                - self.lr * self.weight_decay * pre

    def state_dict(self) -> dict:
        return {"step": self.step_count,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step"])
        self.m = {k: np.asarray(v, dtype=np.float64).copy()
                  for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64).copy()
                  for k, v in state["v"].items()}
