"""Object-centric trajectory augmentation.

Pipeline per demo sample: find the contact frame by wrist-object distance,
drop everything before it, move the manipulation phase by a random planar
(yaw + xy) rigid transform about the object's start position, optionally spin
the object about a symmetry axis (retargeting the wrist so the hand-object
relation is untouched), grow a fresh reach segment from a canonical hand
start, and resample the whole thing to a fixed horizon.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import HoiFrame, HoiTrajectory
from .errors import LengthMismatch, NoContact, TooShort
from .geom import Pose, Rotation, compose, interp_pose, inverse

CONTACT_THRESHOLD = 0.12   # m, slightly above the 10 cm palm gate
XY_RANGE = 0.20            # m, matches the evaluation sweep envelope
YAW_RANGE = math.radians(30.0)
TARGET_HORIZON = 220


@dataclass
class PlanarTransform:
    """Yaw-about-z + planar displacement, anchored at the object start p0."""

    theta: float
    d: np.ndarray          # (2,) meters
    p0: np.ndarray         # (3,) anchor: object position at contact
    b: np.ndarray = field(init=False)
    G: Pose = field(init=False)

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        self.p0 = np.asarray(self.p0, dtype=np.float64)
        rz = Rotation.rot_z(self.theta)
        d3 = np.array([self.d[0], self.d[1], 0.0])
        # G p0 = p0 + d exactly: the anchor translates by d, z unchanged
        self.b = self.p0 + d3 - rz.apply(self.p0)
        self.G = Pose(self.b, rz)


@dataclass
class AugmentConfig:
    contact_threshold: float = CONTACT_THRESHOLD
    xy_range: float = XY_RANGE
    yaw_range: float = YAW_RANGE
    n_reach_frames: int | None = None      # None: match discarded frame count
    symmetry_axis: np.ndarray | None = None
    canonical_wrist: Pose | None = None    # None: first frame of the demo
    canonical_hand: np.ndarray | None = None
    target_horizon: int = TARGET_HORIZON
    samples_per_demo: int = 43             # 7 demos x 43 ~ 300 per task


@dataclass
class AugmentParams:
    """Everything needed to reproduce one augmented sample."""

    seed: int
    theta: float
    d: np.ndarray
    phi: float | None
    t_c: int
    n_reach: int


def detect_contact_frame(traj: HoiTrajectory, threshold: float = CONTACT_THRESHOLD) -> int:
    """First frame where the wrist comes within `threshold` of the object."""
    for i, fr in enumerate(traj.frames):
        if float(np.linalg.norm(fr.object.position - fr.wrist.position)) < threshold:
            return i
    raise NoContact(f"wrist never within {threshold} m of object")


def sample_planar_transform(p0: np.ndarray, cfg: AugmentConfig,
                            rng: np.random.Generator) -> PlanarTransform:
    theta = float(rng.uniform(-cfg.yaw_range, cfg.yaw_range))
    d = rng.uniform(-cfg.xy_range, cfg.xy_range, size=2)
    return PlanarTransform(theta, d, np.asarray(p0, dtype=np.float64))


def apply_planar(frames: list[HoiFrame], tf: PlanarTransform) -> list[HoiFrame]:
    """Move wrist and object poses by G; wrist-frame keypoints ride along."""
    g = tf.G
    return [HoiFrame(compose(g, fr.wrist), compose(g, fr.object), fr.hand.copy())
            for fr in frames]


def regenerate_reach(canonical_wrist: Pose, canonical_hand: np.ndarray,
                     first: HoiFrame, n_frames: int) -> list[HoiFrame]:
    """Straight-line approach from the canonical start to the first contact frame.

    Wrist translation is linear, rotation slerped; keypoints lerped from the
    canonical hand configuration.  The object holds its contact-frame pose.
    Output has `n_frames` frames with both endpoints exact.
    """
    if n_frames < 2:
        raise TooShort(f"reach needs >= 2 frames, got {n_frames}")
    canonical_hand = np.asarray(canonical_hand, dtype=np.float64)
    out = []
    for j in range(n_frames):
        a = j / (n_frames - 1)
        if a == 0.0:
            wrist, hand = canonical_wrist, canonical_hand.copy()
        elif a == 1.0:
            wrist, hand = first.wrist, first.hand.copy()
        else:
            wrist = interp_pose(canonical_wrist, first.wrist, a)
            hand = (1.0 - a) * canonical_hand + a * first.hand
        out.append(HoiFrame(wrist, Pose(first.object.position.copy(),
                                        first.object.rotation), hand))
    return out


def retarget_wrist_to_object(frames: list[HoiFrame],
                             new_objects: list[Pose]) -> list[HoiFrame]:
    """Recompute wrist poses so the per-frame object->wrist relation survives
    an arbitrary replacement of the object trajectory."""
    if len(frames) != len(new_objects):
        raise LengthMismatch(f"{len(frames)} frames vs {len(new_objects)} object poses")
    out = []
    for fr, obj in zip(frames, new_objects):
        rel = compose(inverse(fr.object), fr.wrist)   # T^ow from the source
        out.append(HoiFrame(compose(obj, rel), obj, fr.hand.copy()))
    return out


def apply_symmetry_axis(rotations: list[Rotation], axis: np.ndarray,
                        phi: float) -> list[Rotation]:
    """Right-multiply every frame's object rotation by the same local-axis spin."""
    spin = Rotation.from_axis_angle(np.asarray(axis, dtype=np.float64), phi)
    return [r.multiply(spin) for r in rotations]


def randomize_symmetry_axis(rotations: list[Rotation], axis: np.ndarray,
                            rng: np.random.Generator) -> tuple[list[Rotation], float]:
    phi = float(rng.uniform(-math.pi, math.pi))
    return apply_symmetry_axis(rotations, axis, phi), phi


def resample(traj: HoiTrajectory, horizon: int = TARGET_HORIZON) -> HoiTrajectory:
    """Uniformly re-grid to `horizon` frames (lerp/slerp); endpoints exact."""
    n = traj.horizon
    if n < 2:
        raise TooShort(f"resample needs >= 2 frames, got {n}")
    if horizon < 2:
        raise TooShort(f"target horizon must be >= 2, got {horizon}")
    frames = traj.frames
    out = []
    for j in range(horizon):
        s = j * (n - 1) / (horizon - 1)
        i = min(int(s), n - 2)
        a = s - i
        if a == 0.0:
            fr = frames[i]
            out.append(HoiFrame(fr.wrist, fr.object, fr.hand.copy()))
            continue
        lo, hi = frames[i], frames[i + 1]
        out.append(HoiFrame(
            interp_pose(lo.wrist, hi.wrist, a),
            interp_pose(lo.object, hi.object, a),
            (1.0 - a) * lo.hand + a * hi.hand,
        ))
    dt = traj.dt * (n - 1) / (horizon - 1)
    return HoiTrajectory(out, traj.task_name, dt)


def augment_one(traj: HoiTrajectory, cfg: AugmentConfig,
                rng: np.random.Generator, seed: int = 0) -> tuple[HoiTrajectory, AugmentParams]:
    """Run the full pipeline once with draws from `rng`."""
    t_c = detect_contact_frame(traj, cfg.contact_threshold)
    manip = traj.frames[t_c:]
    p0 = manip[0].object.position

    tf = sample_planar_transform(p0, cfg, rng)
    moved = apply_planar(manip, tf)

    phi: float | None = None
    if cfg.symmetry_axis is not None:
        new_rots, phi = randomize_symmetry_axis(
            [fr.object.rotation for fr in moved], cfg.symmetry_axis, rng)
        new_objs = [Pose(fr.object.position.copy(), r)
                    for fr, r in zip(moved, new_rots)]
        moved = retarget_wrist_to_object(moved, new_objs)

    canonical_wrist = cfg.canonical_wrist or traj.frames[0].wrist
    canonical_hand = cfg.canonical_hand if cfg.canonical_hand is not None \
        else traj.frames[0].hand
    n_reach = cfg.n_reach_frames if cfg.n_reach_frames is not None else max(t_c, 2)
    reach = regenerate_reach(canonical_wrist, canonical_hand, moved[0], n_reach + 1)

    full = HoiTrajectory(reach[:-1] + moved, traj.task_name, traj.dt)
    out = resample(full, cfg.target_horizon)
    params = AugmentParams(seed, tf.theta, tf.d, phi, t_c, n_reach)
    return out, params


def augment_demo(traj: HoiTrajectory, cfg: AugmentConfig,
                 base_seed: int = 0) -> tuple[list[HoiTrajectory], list[AugmentParams]]:
    """Emit samples_per_demo augmented trajectories, one RNG stream per sample
    (seed = base_seed XOR index) so results do not depend on scheduling."""
    trajs, params = [], []
    for idx in range(cfg.samples_per_demo):
        seed = base_seed ^ idx
        t, p = augment_one(traj, cfg, np.random.default_rng(seed), seed=seed)
        trajs.append(t)
        params.append(p)
    return trajs, params


# --- manifest ---------------------------------------------------------------

def save_manifest(path: str, params: list[AugmentParams]) -> None:
    with open(path, "w") as f:
        json.dump([{"seed": p.seed, "theta": p.theta, "d": list(p.d),
                    "phi": p.phi, "t_c": p.t_c, "n_reach": p.n_reach}
                   for p in params], f)


def load_manifest(path: str) -> list[AugmentParams]:
    with open(path) as f:
        raw = json.load(f)
    return [AugmentParams(int(d["seed"]), float(d["theta"]), np.array(d["d"]),
                          None if d["phi"] is None else float(d["phi"]),
                          int(d["t_c"]), int(d["n_reach"])) for d in raw]
