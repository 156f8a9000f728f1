"""Seeded training loops with per-epoch loss histories."""

from __future__ import annotations

import csv

import numpy as np

from .. import nn
from .losses import ae_loss, flow_loss, trajectory_flow_loss
from .models import LatentFlow, TrajectoryAutoencoder, TrajectoryFlow
from .presets import PriorPreset


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        idx = order[i:i + batch_size]
        if len(idx) >= 2:   # losses with batch interactions need >= 2 items
            yield idx


def train_ae(model: TrajectoryAutoencoder, train_feats: np.ndarray,
             val_feats: np.ndarray | None = None, epochs: int | None = None,
             seed: int = 0, log_every: int = 0) -> list[dict]:
    """AdamW training of the autoencoder; returns per-epoch loss records."""
    p: PriorPreset = model.preset
    epochs = p.epochs if epochs is None else epochs
    opt = nn.AdamW(model.params(), lr=p.lr, weight_decay=p.weight_decay,
                   grad_clip=p.grad_clip)
    rng = np.random.default_rng(seed)
    history: list[dict] = []
    for epoch in range(epochs):
        model.train(True)
        sums = {"total": 0.0, "recon": 0.0, "norm": 0.0, "smooth": 0.0}
        count = 0
        for idx in _batches(train_feats.shape[0], p.batch_size, rng):
            opt.zero_grad()
            loss, parts = ae_loss(model, train_feats[idx], rng)
            loss.backward()
            opt.step()
            sums["total"] += loss.item()
            for k in ("recon", "norm", "smooth"):
                sums[k] += parts[k]
            count += 1
        model.train(False)
        rec = {"epoch": epoch}
        rec.update({k: v / max(count, 1) for k, v in sums.items()})
        if val_feats is not None and val_feats.shape[0] >= 2:
            val_rng = np.random.default_rng(seed + 10_000 + epoch)
            with nn.no_grad():
                vloss, vparts = ae_loss(model, val_feats, val_rng)
            rec["val_total"] = vloss.item()
            rec["val_recon"] = vparts["recon"]
        history.append(rec)
        if log_every and epoch % log_every == 0:
            print(f"[ae] epoch {epoch}: total {rec['total']:.5f} "
                  f"recon {rec['recon']:.5f}")
    return history


def train_flow(model: LatentFlow, z_star: np.ndarray, u: np.ndarray,
               o0: np.ndarray, val: tuple | None = None,
               epochs: int | None = None, seed: int = 0,
               log_every: int = 0) -> list[dict]:
    """Flow matching on frozen-encoder latents."""
    p = model.preset
    epochs = p.epochs if epochs is None else epochs
    opt = nn.AdamW(model.params(), lr=p.lr, weight_decay=p.weight_decay,
                   grad_clip=p.grad_clip)
    rng = np.random.default_rng(seed)
    history: list[dict] = []
    for epoch in range(epochs):
        model.train(True)
        total, count = 0.0, 0
        for idx in _batches(z_star.shape[0], p.batch_size, rng):
            opt.zero_grad()
            loss = flow_loss(model, z_star[idx], u[idx], o0[idx], rng)
            loss.backward()
            opt.step()
            total += loss.item()
            count += 1
        model.train(False)
        rec = {"epoch": epoch, "fm": total / max(count, 1)}
        if val is not None:
            vz, vu, vo = val
            val_rng = np.random.default_rng(seed + 20_000 + epoch)
            with nn.no_grad():
                rec["val_fm"] = flow_loss(model, vz, vu, vo, val_rng).item()
        history.append(rec)
        if log_every and epoch % log_every == 0:
            print(f"[flow] epoch {epoch}: fm {rec['fm']:.5f}")
    return history


def train_trajectory_flow(model: TrajectoryFlow, tau: np.ndarray, u: np.ndarray,
                          o0: np.ndarray, epochs: int | None = None,
                          seed: int = 0, log_every: int = 0) -> list[dict]:
    p = model.preset
    epochs = p.epochs if epochs is None else epochs
    opt = nn.AdamW(model.params(), lr=p.lr, weight_decay=p.weight_decay,
                   grad_clip=p.grad_clip)
    rng = np.random.default_rng(seed)
    history: list[dict] = []
    for epoch in range(epochs):
        model.train(True)
        total, count = 0.0, 0
        for idx in _batches(tau.shape[0], p.batch_size, rng):
            opt.zero_grad()
            loss = trajectory_flow_loss(model, tau[idx], u[idx], o0[idx], rng)
            loss.backward()
            opt.step()
            total += loss.item()
            count += 1
        model.train(False)
        history.append({"epoch": epoch, "fm": total / max(count, 1)})
        if log_every and epoch % log_every == 0:
            print(f"[dit-full] epoch {epoch}: fm {history[-1]['fm']:.5f}")
    return history


def save_history_csv(path: str, history: list[dict]) -> None:
    """Training curve as CSV with a schema comment line."""
    if not history:
        with open(path, "w") as f:
            f.write("# schema=training-history v1\n")
        return
    cols = list(history[0].keys())
    with open(path, "w", newline="") as f:
        f.write("# schema=training-history v1\n")
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for rec in history:
            w.writerow(rec)
