"""Training objectives for the autoencoder and the two flows."""

from __future__ import annotations

import numpy as np

from ..errors import BatchTooSmall
from .. import nn
from .models import LatentFlow, TrajectoryAutoencoder, TrajectoryFlow

AE_NORM_WEIGHT = 1e-3      # eta
AE_SMOOTH_WEIGHT = 1e-2    # delta
AE_ALPHA_RANGE = (-0.4, 1.4)


def ae_loss(model: TrajectoryAutoencoder, batch: np.ndarray,
            rng: np.random.Generator, eta: float = AE_NORM_WEIGHT,
            delta: float = AE_SMOOTH_WEIGHT,
            alpha_range: tuple[float, float] = AE_ALPHA_RANGE,
            ) -> tuple[nn.Tensor, dict[str, float]]:
    """Reconstruction + latent-norm + mixed-decode temporal smoothness.

    total = L_recon + eta * mean ||z||^2 + delta * mean_B sum_t ||tau[t+1]-tau[t]||^2
    where the smoothness decodes z_mix = alpha*z + (1-alpha)*z_perm with
    alpha ~ U(alpha_range) (deliberately extrapolating beyond [0, 1]) and
    z_perm a batch permutation of the latents.
    """
    x = batch if isinstance(batch, nn.Tensor) else nn.Tensor(batch)
    if x.ndim != 3:
        x = nn.reshape(x, (1,) + x.shape)
    n = x.shape[0]
    if n < 2:
        raise BatchTooSmall(f"smoothness term permutes the batch; need >= 2, got {n}")

    z = model.encode(x)
    recon = model.decode(z)
    l_recon = nn.mse(recon, x)
    l_norm = nn.tmean(nn.tsum(nn.mul(z, z), axis=-1))

    perm = rng.permutation(n)
    alpha = rng.uniform(alpha_range[0], alpha_range[1], size=(n, 1))
    z_perm = z[perm]
    z_mix = nn.add(nn.mul(z, nn.Tensor(alpha)), nn.mul(z_perm, nn.Tensor(1.0 - alpha)))
    tau = model.decode(z_mix)
    d = nn.add(tau[:, 1:, :], nn.mul(tau[:, :-1, :], -1.0))
    l_smooth = nn.tmean(nn.tsum(nn.tsum(nn.mul(d, d), axis=-1), axis=-1))

    total = nn.add(l_recon, nn.add(nn.mul(l_norm, eta), nn.mul(l_smooth, delta)))
    parts = {"recon": l_recon.item(), "norm": l_norm.item(),
             "smooth": l_smooth.item()}
    return total, parts


def flow_loss(model: LatentFlow, z_star: np.ndarray, u: np.ndarray,
              o0: np.ndarray, rng: np.random.Generator | None = None,
              z0: np.ndarray | None = None,
              s: np.ndarray | None = None) -> nn.Tensor:
    """Rectified flow matching in latent space.

    z_s = (1-s) z0 + s z_star with z0 ~ N(0, I), s ~ U(0, 1); the target
    velocity is the constant displacement z_star - z0.  Noise and times can be
    injected for reproducibility tests (the loss is then a pure function of
    the per-item tuples, independent of batch order).
    """
    z_star = np.asarray(z_star, dtype=np.float64)
    n, k = z_star.shape
    if z0 is None:
        z0 = rng.standard_normal((n, k))
    if s is None:
        s = rng.uniform(0.0, 1.0, size=n)
    z_s = (1.0 - s)[:, None] * z0 + s[:, None] * z_star
    v = model(nn.Tensor(z_s), s, nn.Tensor(u), nn.Tensor(o0))
    diff = nn.add(v, nn.Tensor(-(z_star - z0)))
    return nn.tmean(nn.tsum(nn.mul(diff, diff), axis=-1))


def trajectory_flow_loss(model: TrajectoryFlow, tau: np.ndarray, u: np.ndarray,
                         o0: np.ndarray, rng: np.random.Generator | None = None,
                         x0: np.ndarray | None = None,
                         s: np.ndarray | None = None) -> nn.Tensor:
    """Same rectified objective, but the state is the whole (T, 93) trajectory."""
    tau = np.asarray(tau, dtype=np.float64)
    n = tau.shape[0]
    if x0 is None:
        x0 = rng.standard_normal(tau.shape)
    if s is None:
        s = rng.uniform(0.0, 1.0, size=n)
    sw = s[:, None, None]
    x_s = (1.0 - sw) * x0 + sw * tau
    v = model(nn.Tensor(x_s), s, nn.Tensor(u), nn.Tensor(o0))
    diff = nn.add(v, nn.Tensor(-(tau - x0)))
    per_item = nn.tsum(nn.tsum(nn.mul(diff, diff), axis=-1), axis=-1)
    return nn.tmean(per_item)
