"""Heun ODE integration of the learned flows and full trajectory synthesis."""

from __future__ import annotations

import numpy as np

from ..data import HoiTrajectory, NormStats, TaskCondition, decode_features, denormalize
from .. import nn
from .models import LatentFlow, TrajectoryAutoencoder, TrajectoryFlow

HEUN_STEPS = 50


def heun_integrate(field, z0: np.ndarray, steps: int = HEUN_STEPS) -> np.ndarray:
    """Predictor-corrector integration of dz/ds = field(z, s) from s=0 to 1.

    `field` maps (state array, scalar s) -> velocity array.  Exact on constant
    fields; second order on smooth ones.
    """
    z = np.asarray(z0, dtype=np.float64).copy()
    h = 1.0 / steps
    for k in range(steps):
        s = k * h
        v1 = field(z, s)
        z_pred = z + h * v1
        v2 = field(z_pred, s + h)
        z = z + 0.5 * h * (v1 + v2)
    return z


def _flow_field(model, u: np.ndarray, o0: np.ndarray):
    u_t, o0_t = nn.Tensor(u), nn.Tensor(o0)

    def field(z: np.ndarray, s: float) -> np.ndarray:
        with nn.no_grad():
            sv = np.full(z.shape[0], s)
            return model(nn.Tensor(z), sv, u_t, o0_t).data

    return field


def heun_sample(model: LatentFlow, u: np.ndarray, o0: np.ndarray,
                rng: np.random.Generator, steps: int = HEUN_STEPS,
                n_samples: int = 1) -> np.ndarray:
    """Draw z0 ~ N(0, I) and integrate the latent flow to s=1; (n, latent)."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    o0 = np.atleast_2d(np.asarray(o0, dtype=np.float64))
    if u.shape[0] == 1 and n_samples > 1:
        u = np.repeat(u, n_samples, axis=0)
        o0 = np.repeat(o0, n_samples, axis=0)
    n = u.shape[0]
    z0 = rng.standard_normal((n, model.preset.latent_dim))
    return heun_integrate(_flow_field(model, u, o0), z0, steps)


def heun_sample_cached(model: LatentFlow, u: np.ndarray, o0: np.ndarray,
                       z0: np.ndarray, steps: int = HEUN_STEPS) -> np.ndarray:
    """Batched latent sampling from given z0 rows.

    The condition projections are computed once instead of at every field
    evaluation; only the integration-time embedding varies per step.
    Bit-identical to heun_sample given the same z0.
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    o0 = np.atleast_2d(np.asarray(o0, dtype=np.float64))
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    with nn.no_grad():
        cproj = model.cond.project(nn.Tensor(u), nn.Tensor(o0))
        cproj = nn.Tensor(cproj.data)

    def field(z: np.ndarray, s: float) -> np.ndarray:
        with nn.no_grad():
            sv = np.full(z.shape[0], s)
            return model(nn.Tensor(z), sv, cproj=cproj).data

    return heun_integrate(field, z0, steps)


def trajectory_flow_sample(model: TrajectoryFlow, u: np.ndarray, o0: np.ndarray,
                           rng: np.random.Generator,
                           steps: int = HEUN_STEPS) -> np.ndarray:
    """Integrate the full-trajectory flow; returns (T, 93) normalized features."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    o0 = np.atleast_2d(np.asarray(o0, dtype=np.float64))
    x0 = rng.standard_normal((u.shape[0], model.preset.horizon,
                              model.preset.feature_dim))
    out = heun_integrate(_flow_field(model, u, o0), x0, steps)
    return out[0] if out.shape[0] == 1 else out


def synthesize(ae: TrajectoryAutoencoder, flow: LatentFlow, stats: NormStats,
               cond: TaskCondition, seed: int = 0, steps: int = HEUN_STEPS,
               dt: float = 0.05, task_name: str = "") -> HoiTrajectory:
    """Reference generation: sample a latent under the condition, decode,
    denormalize, and unpack into poses/keypoints."""
    rng = np.random.default_rng(seed)
    z = heun_sample(flow, cond.u, cond.o0_vector(), rng, steps=steps)
    with nn.no_grad():
        feats = ae.decode(nn.Tensor(z)).data[0]
    return decode_features(denormalize(feats, stats), task_name, dt)
