"""Trajectory autoencoder and the two flow-matching networks.

The autoencoder maps a normalized (T, 93) trajectory to a small latent via a
transformer encoder with mean pooling, and back via an MLP token expansion
plus transformer decoder.  The latent flow predicts a velocity over the
latent coordinates (one scalar token each); the trajectory flow is the
ablation that runs the same conditioned blocks over all T time tokens
instead.  Conditioning is always sum(time embedding, o0 projection, u
projection), injected through the blocks' modulation pathway.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .. import nn
from .presets import PriorPreset


def _batched(x: nn.Tensor, want_ndim: int) -> tuple[nn.Tensor, bool]:
    if x.ndim == want_ndim - 1:
        return nn.reshape(x, (1,) + x.shape), True
    if x.ndim != want_ndim:
        raise ShapeMismatch(f"expected {want_ndim - 1}- or {want_ndim}-D, got {x.shape}")
    return x, False


class TrajectoryAutoencoder(nn.Module):
    def __init__(self, preset: PriorPreset, rng: np.random.Generator):
        super().__init__()
        self.preset = preset
        p = preset
        self.in_proj = nn.Linear(p.feature_dim, p.d_model, rng)
        self.enc_pe = nn.PositionalEmbedding(p.horizon, p.d_model, rng)
        self.enc_blocks = [nn.TransformerEncoderBlock(p.d_model, p.n_heads, rng,
                                                      dropout=p.dropout)
                           for _ in range(p.n_layers)]
        self.head_ln = nn.LayerNorm(p.d_model)
        self.head = nn.Linear(p.d_model, p.latent_dim, rng)
        # decoder: latent -> token row, broadcast over T, then transformer
        self.expand = nn.Mlp([p.latent_dim, p.d_model, p.d_model], rng)
        self.dec_pe = nn.PositionalEmbedding(p.horizon, p.d_model, rng)
        self.dec_blocks = [nn.TransformerEncoderBlock(p.d_model, p.n_heads, rng,
                                                      dropout=p.dropout)
                           for _ in range(p.n_layers)]
        self.out_proj = nn.Linear(p.d_model, p.feature_dim, rng)

    def encode(self, x: nn.Tensor) -> nn.Tensor:
        x = x if isinstance(x, nn.Tensor) else nn.Tensor(x)
        x, squeeze = _batched(x, 3)
        if x.shape[-1] != self.preset.feature_dim or x.shape[-2] != self.preset.horizon:
            raise ShapeMismatch(
                f"expected (*, {self.preset.horizon}, {self.preset.feature_dim}), "
                f"got {x.shape}")
        h = self.enc_pe(self.in_proj(x))
        for blk in self.enc_blocks:
            h = blk(h)
        pooled = nn.tmean(h, axis=-2)
        z = self.head(self.head_ln(pooled))
        return nn.reshape(z, z.shape[1:]) if squeeze else z

    def decode(self, z: nn.Tensor) -> nn.Tensor:
        z = z if isinstance(z, nn.Tensor) else nn.Tensor(z)
        z, squeeze = _batched(z, 2)
        if z.shape[-1] != self.preset.latent_dim:
            raise ShapeMismatch(f"latent must be {self.preset.latent_dim}-dim, got {z.shape}")
        row = self.expand(z)                                  # (B, d)
        tokens = nn.reshape(row, row.shape[:-1] + (1, row.shape[-1]))
        tokens = nn.add(tokens, self.dec_pe.table)            # broadcast over T
        for blk in self.dec_blocks:
            tokens = blk(tokens)
        out = self.out_proj(tokens)
        return nn.reshape(out, out.shape[1:]) if squeeze else out


class ConditionEncoder(nn.Module):
    """cvec = sinusoidal(s) + MLP(o0) + MLP(u), all width d_model."""

    def __init__(self, preset: PriorPreset, rng: np.random.Generator):
        super().__init__()
        self.preset = preset
        d = preset.d_model
        self.o0_mlp = nn.Mlp([preset.obj_dim, d, d], rng)
        self.u_mlp = nn.Mlp([preset.cond_dim, d, d], rng)

    def project(self, u: nn.Tensor, o0: nn.Tensor) -> nn.Tensor:
        """The s-independent part; cacheable across integration steps."""
        return nn.add(self.o0_mlp(o0), self.u_mlp(u))

    def __call__(self, s: np.ndarray, u: nn.Tensor = None, o0: nn.Tensor = None,
                 proj: nn.Tensor | None = None) -> nn.Tensor:
        temb = nn.Tensor(nn.sinusoidal_time_embedding(
            s, dim=self.preset.d_model, scale=self.preset.time_embed_scale))
        if proj is None:
            proj = self.project(u, o0)
        return nn.add(temb, proj)


class LatentFlow(nn.Module):
    """Velocity field over latent coordinates; one scalar token per coordinate."""

    def __init__(self, preset: PriorPreset, rng: np.random.Generator):
        super().__init__()
        self.preset = preset
        d, k = preset.d_model, preset.latent_dim
        # scalar embedder: token_i = z_i * W[i] + ident[i]
        self.tok_w = nn.Tensor(rng.uniform(-1.0, 1.0, size=(k, d)), requires_grad=True)
        self.ident = nn.Tensor(rng.normal(0.0, 0.02, size=(k, d)), requires_grad=True)
        self.cond = ConditionEncoder(preset, rng)
        self.blocks = [nn.AdaLNBlock(d, preset.n_heads, rng)
                       for _ in range(preset.n_layers)]
        self.final_ln = nn.LayerNorm(d, affine=False)
        self.out = nn.Linear(d, 1, rng, zero_init=True)

    def __call__(self, z_s: nn.Tensor, s: np.ndarray, u: nn.Tensor = None,
                 o0: nn.Tensor = None,
                 cproj: nn.Tensor | None = None) -> nn.Tensor:
        z_s = z_s if isinstance(z_s, nn.Tensor) else nn.Tensor(z_s)
        if z_s.shape[-1] != self.preset.latent_dim:
            raise ShapeMismatch(f"latent dim {z_s.shape[-1]} != {self.preset.latent_dim}")
        cvec = self.cond(s, u, o0, proj=cproj)                # (B, d)
        zt = nn.reshape(z_s, z_s.shape + (1,))                # (B, k, 1)
        tokens = nn.add(nn.mul(zt, self.tok_w), self.ident)   # (B, k, d)
        for blk in self.blocks:
            tokens = blk(tokens, cvec)
        v = self.out(self.final_ln(tokens))                   # (B, k, 1)
        return nn.reshape(v, z_s.shape)


class TrajectoryFlow(nn.Module):
    """Ablation: the flow runs directly on (T, 93) trajectories.

    Identical conditioning and block stack; only the token space differs.
    """

    def __init__(self, preset: PriorPreset, rng: np.random.Generator):
        super().__init__()
        self.preset = preset
        d = preset.d_model
        self.in_proj = nn.Linear(preset.feature_dim, d, rng)
        self.pe = nn.PositionalEmbedding(preset.horizon, d, rng)
        self.cond = ConditionEncoder(preset, rng)
        self.blocks = [nn.AdaLNBlock(d, preset.n_heads, rng)
                       for _ in range(preset.n_layers)]
        self.final_ln = nn.LayerNorm(d, affine=False)
        self.out = nn.Linear(d, preset.feature_dim, rng, zero_init=True)

    def __call__(self, x_s: nn.Tensor, s: np.ndarray, u: nn.Tensor,
                 o0: nn.Tensor) -> nn.Tensor:
        x_s = x_s if isinstance(x_s, nn.Tensor) else nn.Tensor(x_s)
        if x_s.shape[-1] != self.preset.feature_dim \
                or x_s.shape[-2] != self.preset.horizon:
            raise ShapeMismatch(
                f"expected (*, {self.preset.horizon}, {self.preset.feature_dim}), "
                f"got {x_s.shape}")
        cvec = self.cond(s, u, o0)
        tokens = self.pe(self.in_proj(x_s))
        for blk in self.blocks:
            tokens = blk(tokens, cvec)
        return self.out(self.final_ln(tokens))


def encode_dataset(ae: TrajectoryAutoencoder, feats: np.ndarray,
                   batch_size: int = 64) -> np.ndarray:
    """Eval-mode latents for an (N, T, 93) stack of normalized features."""
    out = []
    with nn.no_grad():
        for i in range(0, feats.shape[0], batch_size):
            out.append(ae.encode(nn.Tensor(feats[i:i + batch_size])).data)
    return np.concatenate(out, axis=0)
