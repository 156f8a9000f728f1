"""Hand-object trajectory data model, 93-dim feature codec, and dataset I/O.

Feature row layout (93 = 3+6+3+6+75):
    [wrist pos, wrist rot6d, object pos, object rot6d, hand keypoints (25*3)]
with hand keypoints expressed in the wrist frame.  Files are JSON lines
(header + one frame per line) so they stream and diff cleanly.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DatasetTooSmall,
    EmptyDataset,
    UnknownTask,
    WrongDimensions,
)
from .geom import Pose, Rotation, rot6d_decode, rot6d_encode

FEATURE_DIM = 93
NUM_KEYPOINTS = 25
EMBED_DIM = 384
HORIZON = 220
STD_FLOOR = 1e-8


@dataclass
class HoiFrame:
    """One time step: wrist pose, object pose (world), hand keypoints (wrist frame)."""

    wrist: Pose
    object: Pose
    hand: np.ndarray  # (K, 3) meters

    def __post_init__(self):
        self.hand = np.asarray(self.hand, dtype=np.float64)
        if self.hand.ndim != 2 or self.hand.shape[1] != 3:
            raise WrongDimensions(f"hand keypoints must be (K, 3), got {self.hand.shape}")


@dataclass
class HoiTrajectory:
    frames: list[HoiFrame]
    task_name: str = ""
    dt: float = 0.05

    @property
    def horizon(self) -> int:
        return len(self.frames)

    @property
    def num_keypoints(self) -> int:
        return self.frames[0].hand.shape[0] if self.frames else 0


@dataclass
class TaskCondition:
    """Conditioning tuple: text embedding + initial object pose."""

    u: np.ndarray            # (384,), unit norm
    o0_position: np.ndarray  # (3,)
    o0_rot6d: np.ndarray     # (6,)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.o0_position = np.asarray(self.o0_position, dtype=np.float64)
        self.o0_rot6d = np.asarray(self.o0_rot6d, dtype=np.float64)
        if self.u.shape != (EMBED_DIM,):
            raise WrongDimensions(f"embedding must be ({EMBED_DIM},), got {self.u.shape}")
        n = float(np.linalg.norm(self.u))
        if abs(n - 1.0) > 1e-6:
            raise WrongDimensions(f"embedding must be unit norm, got {n}")
        if self.o0_position.shape != (3,) or self.o0_rot6d.shape != (6,):
            raise WrongDimensions("o0 blocks must be 3- and 6-vectors")

    def o0_vector(self) -> np.ndarray:
        """9-dim numeric block [position, rot6d]."""
        return np.concatenate([self.o0_position, self.o0_rot6d])


def condition_from(traj: HoiTrajectory, u: np.ndarray) -> TaskCondition:
    """Build the condition from a trajectory's initial object pose."""
    o0 = traj.frames[0].object
    return TaskCondition(u, o0.position, rot6d_encode(o0.rotation))


@dataclass
class NormStats:
    mean: np.ndarray  # (93,)
    std: np.ndarray   # (93,), floored

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (FEATURE_DIM,) or self.std.shape != (FEATURE_DIM,):
            raise WrongDimensions("norm stats must be 93-vectors")


# --- feature codec ----------------------------------------------------------

def encode_frame(frame: HoiFrame) -> np.ndarray:
    if frame.hand.shape[0] != NUM_KEYPOINTS:
        raise WrongDimensions(
            f"expected {NUM_KEYPOINTS} keypoints, got {frame.hand.shape[0]}")
    return np.concatenate([
        frame.wrist.position,
        rot6d_encode(frame.wrist.rotation),
        frame.object.position,
        rot6d_encode(frame.object.rotation),
        frame.hand.reshape(-1),
    ])


def decode_frame(row: np.ndarray) -> HoiFrame:
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (FEATURE_DIM,):
        raise WrongDimensions(f"feature row must be ({FEATURE_DIM},), got {row.shape}")
    wrist = Pose(row[0:3], rot6d_decode(row[3:9]))
    obj = Pose(row[9:12], rot6d_decode(row[12:18]))
    hand = row[18:].reshape(NUM_KEYPOINTS, 3)
    return HoiFrame(wrist, obj, hand)


def encode_features(traj: HoiTrajectory) -> np.ndarray:
    """HoiTrajectory -> (T, 93) feature matrix."""
    if not traj.frames:
        raise EmptyDataset("trajectory has no frames")
    return np.stack([encode_frame(f) for f in traj.frames])


def decode_features(features: np.ndarray, task_name: str = "",
                    dt: float = 0.05) -> HoiTrajectory:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
        raise WrongDimensions(f"feature matrix must be (T, {FEATURE_DIM})")
    return HoiTrajectory([decode_frame(r) for r in features], task_name, dt)


# --- normalization ----------------------------------------------------------

def fit_norm_stats(feature_mats: list[np.ndarray]) -> NormStats:
    """Per-feature mean/std over all frames of all trajectories; std floored."""
    if not feature_mats:
        raise EmptyDataset("no trajectories to fit statistics on")
    stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in feature_mats])
    if stacked.size == 0:
        raise EmptyDataset("trajectories contain no frames")
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def normalize(features: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(features, dtype=np.float64) - stats.mean) / stats.std


def denormalize(features: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(features, dtype=np.float64) * stats.std + stats.mean


# --- splitting --------------------------------------------------------------

def split_dataset(items: list, train_fraction: float = 0.95,
                  seed: int = 0) -> tuple[list, list]:
    """Seeded shuffle, then n_val = max(1, ceil(n * val_fraction)) to the val side."""
    n = len(items)
    if n < 2:
        raise DatasetTooSmall(f"need >= 2 items to split, got {n}")
    # round before ceil: 1 - 0.95 is not exactly 0.05 in binary
    n_val = max(1, math.ceil(round(n * (1.0 - train_fraction), 9)))
    if n_val >= n:
        n_val = n - 1
    order = np.random.default_rng(seed).permutation(n)
    train = [items[i] for i in order[:n - n_val]]
    val = [items[i] for i in order[n - n_val:]]
    return train, val


# --- task embeddings --------------------------------------------------------

def stub_embedding(task_name: str) -> np.ndarray:
    """Deterministic unit 384-vector derived from the task string.

    Seeds a PCG64 generator from the sha256 of the name so the vector is
    stable across runs and platforms without any text-encoder dependency.
    """
    digest = hashlib.sha256(task_name.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    v = np.random.default_rng(seed).standard_normal(EMBED_DIM)
    return v / np.linalg.norm(v)


def embed_task(task_name: str, sidecar: dict[str, np.ndarray] | None = None,
               allow_stub: bool = True) -> np.ndarray:
    """Look up a precomputed embedding, else fall back to the stub."""
    if sidecar is not None and task_name in sidecar:
        u = np.asarray(sidecar[task_name], dtype=np.float64)
        if u.shape != (EMBED_DIM,):
            raise WrongDimensions(
                f"sidecar embedding for {task_name!r} has shape {u.shape}")
        return u
    if not allow_stub:
        raise UnknownTask(f"no embedding for task {task_name!r} and stub disabled")
    return stub_embedding(task_name)


# --- file I/O ---------------------------------------------------------------

def save_trajectory(path: str, traj: HoiTrajectory) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"task": traj.task_name, "dt": traj.dt,
                            "K": traj.num_keypoints}) + "\n")
        for fr in traj.frames:
            f.write(json.dumps({
                "w": list(fr.wrist.to_quat7()),
                "o": list(fr.object.to_quat7()),
                "h": [list(p) for p in fr.hand],
            }) + "\n")


def load_trajectory(path: str) -> HoiTrajectory:
    with open(path) as f:
        header = json.loads(f.readline())
        frames = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            frames.append(HoiFrame(
                Pose.from_quat7(np.array(d["w"])),
                Pose.from_quat7(np.array(d["o"])),
                np.array(d["h"], dtype=np.float64),
            ))
    if not frames:
        raise EmptyDataset(f"{path} has no frames")
    return HoiTrajectory(frames, header.get("task", ""), float(header.get("dt", 0.05)))


def load_dataset(paths: list[str]) -> list[HoiTrajectory]:
    """Load many trajectory files; order is lexicographic by path."""
    return [load_trajectory(p) for p in sorted(paths)]


def save_embeddings(path: str, table: dict[str, np.ndarray]) -> None:
    with open(path, "w") as f:
        json.dump({k: list(np.asarray(v, dtype=np.float64)) for k, v in table.items()},
                  f)


def load_embeddings(path: str) -> dict[str, np.ndarray]:
    with open(path) as f:
        raw = json.load(f)
    return {k: np.asarray(v, dtype=np.float64) for k, v in raw.items()}


def save_norm_stats(path: str, stats: NormStats) -> None:
    with open(path, "w") as f:
        json.dump({"mean": list(stats.mean), "std": list(stats.std)}, f)


def load_norm_stats(path: str) -> NormStats:
    with open(path) as f:
        raw = json.load(f)
    return NormStats(np.array(raw["mean"]), np.array(raw["std"]))
