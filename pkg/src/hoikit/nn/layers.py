"""Network building blocks on top of the tape engine.

Everything takes (..., T, d) or (..., d) float64 tensors; batch axes are
optional.  Parameter init: linear weights U(-sqrt(1/fan_in), +sqrt(1/fan_in)),
biases zero, adaLN modulation projections zero (identity block at init).
Dropout fires only after `.train(True)`; eval mode is fully deterministic.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatch
from .tensor import (
    Tensor,
    add,
    concat,
    gelu,
    layer_norm,
    matmul,
    mul,
    sigmoid,
    silu,
    softmax,
    tanh,
    transpose,
    reshape,
)


class Module:
    """Base with recursive parameter discovery in attribute insertion order."""

    def __init__(self):
        self._training = False

    def children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def train(self, mode: bool = True):
        self._training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
        for name, child in self.children():
            for sub, p in child.params().items():
                out[f"{name}.{sub}"] = p
        return out

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.params()
        if set(own) != set(state):
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            raise ShapeMismatch(f"state dict mismatch: missing {missing}, extra {extra}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeMismatch(f"{k}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 zero_init: bool = False):
        super().__init__()
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            bound = math.sqrt(1.0 / d_in)
            w = rng.uniform(-bound, bound, size=(d_in, d_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)


class Mlp(Module):
    """Linear stack with an activation between layers (not after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator, activation=gelu):
        super().__init__()
        self.layers = [Linear(a, b, rng) for a, b in zip(dims, dims[1:])]
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int, affine: bool = True, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        if affine:
            self.gain = Tensor(np.ones(dim), requires_grad=True)
            self.bias = Tensor(np.zeros(dim), requires_grad=True)
        else:
            self.gain = None
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    """Inverted dropout; identity in eval mode."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        self.p = p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self._training or self.p <= 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return mul(x, Tensor(keep))


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d_model % n_heads != 0:
            raise ShapeMismatch(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        # (..., T, d) -> (..., H, T, dh)
        s = x.shape
        x = reshape(x, s[:-1] + (self.n_heads, self.d_head))
        return transpose(x, -3, -2)

    def __call__(self, x: Tensor) -> Tensor:
        q, k, v = self._split(self.wq(x)), self._split(self.wk(x)), self._split(self.wv(x))
        scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(self.d_head))
        att = softmax(scores, axis=-1)
        ctx = transpose(matmul(att, v), -3, -2)            # (..., T, H, dh)
        ctx = reshape(ctx, ctx.shape[:-2] + (self.d_model,))
        return self.wo(ctx)


class TransformerEncoderBlock(Module):
    """Pre-LN encoder block: attention and GELU MLP residual branches."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 dropout: float = 0.1, mlp_ratio: int = 4):
        super().__init__()
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.drop1 = Dropout(dropout, rng)
        self.ln2 = LayerNorm(d_model)
        self.mlp = Mlp([d_model, mlp_ratio * d_model, d_model], rng, activation=gelu)
        self.drop2 = Dropout(dropout, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = add(x, self.drop1(self.attn(self.ln1(x))))
        return add(x, self.drop2(self.mlp(self.ln2(x))))


class PositionalEmbedding(Module):
    """Learned per-position vectors added to the token sequence."""

    def __init__(self, horizon: int, d_model: int, rng: np.random.Generator,
                 init_scale: float = 0.02):
        super().__init__()
        self.table = Tensor(rng.normal(0.0, init_scale, size=(horizon, d_model)),
                            requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.table.shape[0]:
            raise ShapeMismatch(
                f"sequence length {x.shape[-2]} != table {self.table.shape[0]}")
        return add(x, self.table)


def sinusoidal_time_embedding(s, dim: int = 256, scale: float = 1e3) -> np.ndarray:
    """[sin(s*w), cos(s*w)] with w log-spaced from 1 down to 1/scale.

    s may be a scalar or a 1-D array; at s=0 all sine channels are 0 and all
    cosine channels are 1.  Pure numpy; time inputs carry no gradient.
    """
    half = dim // 2
    exponents = np.arange(half) / max(half - 1, 1)
    freqs = scale ** (-exponents)
    ang = np.multiply.outer(np.asarray(s, dtype=np.float64), freqs)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class GruCell(Module):
    """Gated recurrent unit with the convention h' = (1-z)*h + z*h_cand.

    (Zero parameters give h' = 0.5*h.)  Conventions differ across libraries;
    this one is fixed here and relied on by the adaptation heads.
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.d_hidden = d_hidden
        self.wz = Linear(d_in, d_hidden, rng)
        self.uz = Linear(d_hidden, d_hidden, rng)
        self.wr = Linear(d_in, d_hidden, rng)
        self.ur = Linear(d_hidden, d_hidden, rng)
        self.wh = Linear(d_in, d_hidden, rng)
        self.uh = Linear(d_hidden, d_hidden, rng)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(add(self.wz(x), self.uz(h)))
        r = sigmoid(add(self.wr(x), self.ur(h)))
        cand = tanh(add(self.wh(x), self.uh(mul(r, h))))
        return add(mul(1.0 - z, h), mul(z, cand))


class Gru(Module):
    """Stacked GRU run over a (B, T, d_in) sequence; returns last hidden (B, d_h)."""

    def __init__(self, d_in: int, d_hidden: int, n_layers: int,
                 rng: np.random.Generator):
        super().__init__()
        dims = [d_in] + [d_hidden] * n_layers
        self.cells = [GruCell(a, b, rng) for a, b in zip(dims, dims[1:])]
        self.d_hidden = d_hidden

    def __call__(self, xs: Tensor, h0: list[Tensor] | None = None) -> Tensor:
        if xs.ndim != 3:
            raise ShapeMismatch(f"Gru expects (B, T, d), got {xs.shape}")
        batch, horizon = xs.shape[0], xs.shape[1]
        hs = h0 if h0 is not None else \
            [Tensor(np.zeros((batch, c.d_hidden))) for c in self.cells]
        for t in range(horizon):
            inp = xs[:, t, :]
            for i, cell in enumerate(self.cells):
                hs[i] = cell(inp, hs[i])
                inp = hs[i]
        return hs[-1]


def modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return add(mul(x, add(scale, 1.0)), shift)


class AdaLNBlock(Module):
    """Transformer block whose normalization is modulated by a conditioning
    vector, with zero-initialized modulation so the block starts as identity."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 mlp_ratio: int = 4):
        super().__init__()
        self.d_model = d_model
        self.ln1 = LayerNorm(d_model, affine=False)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln2 = LayerNorm(d_model, affine=False)
        self.mlp = Mlp([d_model, mlp_ratio * d_model, d_model], rng, activation=gelu)
        self.mod = Linear(d_model, 6 * d_model, rng, zero_init=True)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        d = self.d_model
        if cond.ndim == 1:
            cond = reshape(cond, (1, d))  # one row broadcasting over tokens
        m = self.mod(silu(cond))
        if m.ndim == x.ndim - 1:  # broadcast conditioning across tokens
            m = reshape(m, m.shape[:-1] + (1, 6 * d))
        sh1, sc1, g1 = m[..., 0:d], m[..., d:2 * d], m[..., 2 * d:3 * d]
        sh2, sc2, g2 = m[..., 3 * d:4 * d], m[..., 4 * d:5 * d], m[..., 5 * d:6 * d]
        x = add(x, mul(g1, self.attn(modulate(self.ln1(x), sh1, sc1))))
        return add(x, mul(g2, self.mlp(modulate(self.ln2(x), sh2, sc2))))
