"""Glove-skeleton to wrist-marker calibration.

Robust rigid registration of fingertip points measured in the glove skeleton
frame against the same points observed by a camera: camera points are first
moved into the wrist-cube frame with the per-sample cube pose, then the fixed
skeleton->cube transform is estimated by SVD alignment, residual-based
outlier rejection, and IRLS refinement with Huber weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, NoInliers, TooFewInliers
from .geom import Pose, Rotation, inverse

OUTLIER_K = 4.0     # flag residual > k * median initial residual
MAX_ITER = 50
TOL = 1e-10


@dataclass
class CalibSample:
    p_S: np.ndarray   # fingertip in skeleton frame, meters
    p_C: np.ndarray   # same point in camera frame, meters
    T_C_W: Pose       # wrist-cube pose in camera frame for this sample

    def __post_init__(self):
        self.p_S = np.asarray(self.p_S, dtype=np.float64)
        self.p_C = np.asarray(self.p_C, dtype=np.float64)


@dataclass
class CalibResult:
    T_W_S: Pose
    inlier_mask: np.ndarray   # (n,) bool
    rmse: float               # meters, over inliers
    iterations: int
    loss_history: list[float] = field(default_factory=list)


def to_cube_frame(sample: CalibSample) -> np.ndarray:
    """Camera-frame point expressed in the wrist-cube frame."""
    return inverse(sample.T_C_W).apply(sample.p_C)


def svd_rigid_align(src: np.ndarray, dst: np.ndarray,
                    weights: np.ndarray | None = None) -> tuple[Rotation, np.ndarray]:
    """Weighted least-squares rigid fit dst ~= R src + t (Kabsch).

    Reflections are corrected so det(R) = +1 always.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need >= 3 point pairs, got {n}")
    if weights is None:
        weights = np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    wsum = w.sum()
    if wsum <= 0.0:
        raise DegenerateConfiguration("all weights zero")
    c_src = (w[:, None] * src).sum(axis=0) / wsum
    c_dst = (w[:, None] * dst).sum(axis=0) / wsum
    a = src - c_src
    b = dst - c_dst
    h = (w[:, None] * a).T @ b        # 3x3 cross-covariance
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-12 * max(s[0], 1e-300):
        raise DegenerateConfiguration("points collinear after centering (rank < 2)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    m = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    rot = Rotation.from_matrix(m)
    t = c_dst - rot.apply(c_src)
    return rot, t


def _residual_norms(src: np.ndarray, dst: np.ndarray, pose: Pose) -> np.ndarray:
    pred = pose.rotation.apply(src) + pose.position
    return np.linalg.norm(dst - pred, axis=1)


def _huber_loss(r: np.ndarray, delta: float) -> float:
    small = r <= delta
    return float(np.sum(0.5 * r[small] ** 2) +
                 np.sum(delta * (r[~small] - 0.5 * delta)))


def irls_huber_refine(samples: list[CalibSample], init: Pose | None = None,
                      huber_delta: float | None = None, outlier_k: float = OUTLIER_K,
                      max_iter: int = MAX_ITER, tol: float = TOL) -> CalibResult:
    """Outlier rejection on initial residuals, then IRLS with Huber weights.

    Each IRLS step re-solves the weighted rigid fit in closed form
    (sqrt-weight-scaled Kabsch), which keeps the robust objective monotone.
    Convergence is declared when the parameter change (translation norm plus
    rotation angle) drops below `tol`; hitting `max_iter` is reported through
    `iterations == max_iter` with the result still returned.
    """
    src = np.stack([s.p_S for s in samples])
    dst = np.stack([to_cube_frame(s) for s in samples])
    if init is None:
        rot, t = svd_rigid_align(src, dst)
        init = Pose(t, rot)

    r0 = _residual_norms(src, dst, init)
    med = float(np.median(r0))
    # absolute floor keeps rounding-level residuals from being "outliers"
    inliers = r0 <= max(outlier_k * med, 1e-9)
    if int(inliers.sum()) < 3:
        raise TooFewInliers(f"only {int(inliers.sum())} inliers after rejection")
    if huber_delta is None:
        huber_delta = max(3.0 * med, 1e-9)

    s_in, d_in = src[inliers], dst[inliers]
    pose = init
    history: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        r = _residual_norms(s_in, d_in, pose)
        history.append(_huber_loss(r, huber_delta))
        w = np.where(r <= huber_delta, 1.0, huber_delta / np.maximum(r, 1e-300))
        rot, t = svd_rigid_align(s_in, d_in, weights=w)
        new = Pose(t, rot)
        change = float(np.linalg.norm(new.position - pose.position)) \
            + pose.rotation.angle_to(new.rotation)
        pose = new
        if change < tol:
            break
    r = _residual_norms(s_in, d_in, pose)
    history.append(_huber_loss(r, huber_delta))
    rmse = float(np.sqrt(np.mean(r ** 2)))
    return CalibResult(pose, inliers, rmse, iterations, history)


def calib_rmse(samples: list[CalibSample], T_W_S: Pose,
               inlier_mask: np.ndarray | None = None) -> float:
    """RMS residual in meters over the inlier samples."""
    n = len(samples)
    if inlier_mask is None:
        inlier_mask = np.ones(n, dtype=bool)
    inlier_mask = np.asarray(inlier_mask, dtype=bool)
    if not inlier_mask.any():
        raise NoInliers("no inliers to evaluate")
    src = np.stack([s.p_S for s in samples])[inlier_mask]
    dst = np.stack([to_cube_frame(s) for s in samples])[inlier_mask]
    r = _residual_norms(src, dst, T_W_S)
    return float(np.sqrt(np.mean(r ** 2)))


# --- file I/O ---------------------------------------------------------------

def save_samples(path: str, samples: list[CalibSample]) -> None:
    with open(path, "w") as f:
        json.dump([{"p_S": list(s.p_S), "p_C": list(s.p_C),
                    "T_C_W": list(s.T_C_W.to_quat7())} for s in samples], f)


def load_samples(path: str) -> list[CalibSample]:
    with open(path) as f:
        raw = json.load(f)
    return [CalibSample(np.array(d["p_S"]), np.array(d["p_C"]),
                        Pose.from_quat7(np.array(d["T_C_W"]))) for d in raw]


def save_result(path: str, result: CalibResult) -> None:
    with open(path, "w") as f:
        json.dump({"T_W_S": list(result.T_W_S.to_quat7()),
                   "rmse": result.rmse,
                   "inliers": [bool(b) for b in result.inlier_mask],
                   "iterations": result.iterations}, f)


def load_result(path: str) -> CalibResult:
    with open(path) as f:
        raw = json.load(f)
    return CalibResult(Pose.from_quat7(np.array(raw["T_W_S"])),
                       np.array(raw["inliers"], dtype=bool),
                       float(raw["rmse"]), int(raw["iterations"]))
