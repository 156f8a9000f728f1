"""Model/training size presets.

`paper` is the full-scale recipe; `toy` shrinks every axis so the identical
code paths train in seconds on a CPU for tests and demos.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PriorPreset:
    name: str
    horizon: int          # trajectory tokens T
    feature_dim: int      # per-frame features D
    d_model: int
    n_layers: int
    n_heads: int
    latent_dim: int
    cond_dim: int         # text embedding width
    obj_dim: int = 9      # initial object pose block
    dropout: float = 0.1
    time_embed_scale: float = 1e3
    # training
    epochs: int = 1000
    batch_size: int = 256
    lr: float = 3e-4
    weight_decay: float = 1e-4
    grad_clip: float = 1.0


PAPER = PriorPreset(
    name="paper", horizon=220, feature_dim=93, d_model=256, n_layers=3,
    n_heads=4, latent_dim=16, cond_dim=384,
    epochs=1000, batch_size=256, lr=3e-4,
)

# same architecture, desk-scale: higher lr compensates for the tiny step count
TOY = PriorPreset(
    name="toy", horizon=40, feature_dim=93, d_model=64, n_layers=2,
    n_heads=2, latent_dim=8, cond_dim=384,
    epochs=200, batch_size=8, lr=2e-3,
)

PRESETS = {"paper": PAPER, "toy": TOY}


def get_preset(name: str) -> PriorPreset:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return PRESETS[name]
