"""Task-space residual integration and the baseline action representations.

The policy emits a residual signal u in [-1, 1]^18; an EMA filter smooths it,
integration with per-channel scales accumulates it, and clipping keeps the
accumulated offset near the synthesized reference.  All five action
representations share one step signature so training code can swap them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DimensionMismatch, TooFewKeyframes, WrongDimensions
from ..geom import Pose, Rotation, quintic_segment, quintic_timewarp
from .kinematics import KinematicChain, default_arm, default_hand, finger_ik, ik_dls

RESIDUAL_DIM = 18   # 3 wrist pos + 3 wrist rot + 4 fingertips x 3
NUM_FINGERS = 4


@dataclass(frozen=True)
class ResidualConfig:
    """Integration parameters; defaults follow the hardware recipe."""

    alpha: float = 0.8                      # EMA coefficient
    dt: float = 0.05                        # policy step, seconds
    wrist_pos_scale: float = 0.02           # m per unit signal per second
    wrist_rot_scale: float = math.radians(5.0)
    finger_pos_scale: float = 0.03
    wrist_pos_limit: float = 0.10           # componentwise, m
    wrist_rot_limit: float = math.radians(40.0)  # by rotation-vector norm
    finger_pos_limit: float = 0.05          # componentwise, m

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise WrongDimensions(f"EMA alpha must be in (0, 1], got {self.alpha}")


def save_residual_config(path: str, cfg: ResidualConfig) -> None:
    doc = {"alpha": cfg.alpha, "dt": cfg.dt,
           "wrist_pos_scale": cfg.wrist_pos_scale,
           "wrist_rot_scale_deg": math.degrees(cfg.wrist_rot_scale),
           "finger_pos_scale": cfg.finger_pos_scale,
           "wrist_pos_limit": cfg.wrist_pos_limit,
           "wrist_rot_limit_deg": math.degrees(cfg.wrist_rot_limit),
           "finger_pos_limit": cfg.finger_pos_limit}
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_residual_config(path: str) -> ResidualConfig:
    with open(path) as f:
        doc = json.load(f)
    cfg = ResidualConfig()
    fields = {}
    for key in ("alpha", "dt", "wrist_pos_scale", "finger_pos_scale",
                "wrist_pos_limit", "finger_pos_limit"):
        if key in doc:
            fields[key] = float(doc[key])
    if "wrist_rot_scale_deg" in doc:
        fields["wrist_rot_scale"] = math.radians(float(doc["wrist_rot_scale_deg"]))
    if "wrist_rot_limit_deg" in doc:
        fields["wrist_rot_limit"] = math.radians(float(doc["wrist_rot_limit_deg"]))
    return replace(cfg, **fields)


@dataclass
class ActionChannels:
    """Accumulated task-space offsets applied on top of the reference."""

    wrist_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wrist_rot: np.ndarray = field(default_factory=lambda: np.zeros(3))  # rotvec
    fingers: np.ndarray = field(default_factory=lambda: np.zeros((NUM_FINGERS, 3)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.wrist_pos, self.wrist_rot, self.fingers.ravel()])

    @staticmethod
    def from_flat(v: np.ndarray) -> "ActionChannels":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (RESIDUAL_DIM,):
            raise DimensionMismatch(f"residual vector must be ({RESIDUAL_DIM},), got {v.shape}")
        return ActionChannels(v[:3].copy(), v[3:6].copy(),
                              v[6:].reshape(NUM_FINGERS, 3).copy())


@dataclass
class ResidualState:
    """Per-episode integrator memory; reset to zero at episode start."""

    config: ResidualConfig = field(default_factory=ResidualConfig)
    u_ema: np.ndarray = field(default_factory=lambda: np.zeros(RESIDUAL_DIM))
    delta: ActionChannels = field(default_factory=ActionChannels)

    def reset(self) -> None:
        self.u_ema = np.zeros(RESIDUAL_DIM)
        self.delta = ActionChannels()


def ema_filter(u: np.ndarray, state: ResidualState) -> np.ndarray:
    """u_smooth = alpha*u + (1-alpha)*u_prev; updates the state in place."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != state.u_ema.shape:
        raise DimensionMismatch(f"signal shape {u.shape} != state {state.u_ema.shape}")
    a = state.config.alpha
    state.u_ema = a * u + (1.0 - a) * state.u_ema
    return state.u_ema


def _clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n > limit:
        return v * (limit / n)
    return v


def integrate_residual(u_tilde: np.ndarray, state: ResidualState) -> ActionChannels:
    """delta += scale * u_smooth * dt, clipped per channel; updates the state."""
    u = ActionChannels.from_flat(u_tilde)
    cfg = state.config
    prev = state.delta
    wp = np.clip(prev.wrist_pos + cfg.wrist_pos_scale * u.wrist_pos * cfg.dt,
                 -cfg.wrist_pos_limit, cfg.wrist_pos_limit)
    # rotation residual clipped by rotation-vector norm, not per-axis
    wr = _clip_norm(prev.wrist_rot + cfg.wrist_rot_scale * u.wrist_rot * cfg.dt,
                    cfg.wrist_rot_limit)
    fp = np.clip(prev.fingers + cfg.finger_pos_scale * u.fingers * cfg.dt,
                 -cfg.finger_pos_limit, cfg.finger_pos_limit)
    state.delta = ActionChannels(wp, wr, fp)
    return state.delta


@dataclass
class TaskTarget:
    """Refined task-space command: wrist pose (base frame) + fingertips (wrist frame)."""

    wrist: Pose
    fingertips: np.ndarray  # (4, 3)

    def __post_init__(self):
        self.fingertips = np.asarray(self.fingertips, dtype=np.float64)
        if self.fingertips.shape != (NUM_FINGERS, 3):
            raise DimensionMismatch(f"fingertips must be ({NUM_FINGERS}, 3), "
                                    f"got {self.fingertips.shape}")


def apply_residual(reference: TaskTarget, delta: ActionChannels) -> TaskTarget:
    """Offset the reference: wrist shifted and pre-rotated, fingertips translated."""
    if not np.any(delta.wrist_rot):
        rot = reference.wrist.rotation  # exact-zero residual stays bit-identical
    else:
        rot = Rotation.from_rotvec(delta.wrist_rot) * reference.wrist.rotation
    wrist = Pose(reference.wrist.position + delta.wrist_pos, rot)
    return TaskTarget(wrist, reference.fingertips + delta.fingers)


# --- 20 Hz -> 120 Hz upsampling ---------------------------------------------

def upsample_commands(targets: list[TaskTarget], factor: int = 6,
                      dt: float = 0.05) -> list[TaskTarget]:
    """Quintic task-space interpolation between keyframes.

    Translational channels get quintic segments whose knot velocities and
    accelerations come from finite differences, so velocity and acceleration
    stay continuous across knots; rotations ride a quintic-time-warped slerp.
    Output length is factor*(n-1)+1 and reproduces the knots bit-exactly.
    """
    n = len(targets)
    if n < 2:
        raise TooFewKeyframes(f"need at least 2 keyframes, got {n}")
    pos = np.stack([t.wrist.position for t in targets])          # (n, 3)
    tips = np.stack([t.fingertips.ravel() for t in targets])     # (n, 12)
    chan = np.concatenate([pos, tips], axis=1)                   # (n, 15)

    vel = np.gradient(chan, dt, axis=0)          # central interior, one-sided ends
    acc = np.gradient(vel, dt, axis=0)

    out: list[TaskTarget] = []
    for k in range(n - 1):
        seg = quintic_segment(chan[k], vel[k], acc[k],
                              chan[k + 1], vel[k + 1], acc[k + 1], dt)
        ra, rb = targets[k].wrist.rotation, targets[k + 1].wrist.rotation
        for j in range(factor):
            if j == 0:
                out.append(targets[k])           # knots pass through untouched
                continue
            s = j / factor
            v = seg.value(s * dt)
            rot = ra.slerp(rb, quintic_timewarp(s))
            out.append(TaskTarget(Pose(v[:3], rot), v[3:].reshape(NUM_FINGERS, 3)))
    out.append(targets[-1])
    return out


# --- action-representation adapters -----------------------------------------

@dataclass(frozen=True)
class JointAdapterConfig:
    """Scales for the joint-space baselines (the paper leaves these free)."""

    joint_abs_scale: float = 1.0      # rad/s per unit signal
    joint_res_scale: float = 0.5      # rad/s per unit signal
    joint_res_limit: float = 0.3      # rad, componentwise accumulated residual


# tip of each driven finger in the 25-keypoint hand layout (5 points per
# finger, thumb block 20-24 unused by the 4-finger hand)
FINGERTIP_KEYPOINTS = (4, 9, 14, 19)


def target_from_frame(frame) -> TaskTarget:
    """Reference target from one trajectory frame: wrist pose plus the four
    driven fingertip keypoints (wrist frame, same frame the finger chains
    are rooted in)."""
    tips = np.asarray(frame.hand, dtype=float)[list(FINGERTIP_KEYPOINTS)]
    return TaskTarget(frame.wrist, tips)


@dataclass
class ControlStack:
    """Arm + four fingers plus the IK plumbing shared by every adapter."""

    arm: KinematicChain
    fingers: list[KinematicChain]
    last_solve: tuple | None = field(default=None, compare=False, repr=False)

    @property
    def arm_dof(self) -> int:
        return self.arm.dof

    @property
    def hand_dof(self) -> int:
        return sum(ch.dof for ch in self.fingers)

    def neutral_q(self) -> np.ndarray:
        parts = [self.arm.mid_q()] + [ch.clamp(np.zeros(ch.dof)) for ch in self.fingers]
        return np.concatenate(parts)

    def hand_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.concatenate([ch.limits()[0] for ch in self.fingers])
        hi = np.concatenate([ch.limits()[1] for ch in self.fingers])
        return lo, hi

    def solve(self, target: TaskTarget, q_prev: np.ndarray,
              restarts: int = 30) -> np.ndarray:
        """Full IK: DLS for the arm wrist pose, per-finger position IK.

        The warm start from q_prev almost always converges mid-trajectory;
        when it stalls (first frame, target jump) a deterministic
        restart-backed solve from mid-range takes over.  Convergence of the
        latest call lands in `last_solve` as (arm_converged, finger_ok_mask)
        for callers that track failures.
        """
        res = ik_dls(self.arm, target.wrist, q_prev[:self.arm_dof],
                     max_iter=300)
        if not res.converged and restarts:
            retry = ik_dls(self.arm, target.wrist, self.arm.mid_q(),
                           max_iter=300, restarts=restarts, seed=0)
            if retry.pos_err + retry.rot_err < res.pos_err + res.rot_err:
                res = retry
        qh, ok = finger_ik(self.fingers, target.fingertips,
                           q_prev[self.arm_dof:])
        self.last_solve = (res.converged, ok)
        return np.concatenate([res.q, qh])


def default_stack() -> ControlStack:
    return ControlStack(default_arm(), default_hand())


def scale_to_limits(u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Affine map of [-1, 1] onto [lo, hi]; out-of-range inputs are clipped."""
    u = np.clip(np.asarray(u, dtype=np.float64), -1.0, 1.0)
    return lo + 0.5 * (u + 1.0) * (hi - lo)


@dataclass
class AdapterState:
    """Memory shared across the representations; reset() at episode start."""

    stack: ControlStack
    residual: ResidualState = field(default_factory=ResidualState)
    joint_cfg: JointAdapterConfig = field(default_factory=JointAdapterConfig)
    q_prev: np.ndarray | None = None         # IK warm start / joint memory
    dq_prev: np.ndarray | None = None        # joint-residual accumulator
    u_ema_q: np.ndarray | None = None        # joint-residual EMA memory
    task_prev: TaskTarget | None = None      # task-abs integrated target

    def __post_init__(self):
        if self.q_prev is None:
            self.q_prev = self.stack.neutral_q()

    def reset(self) -> None:
        self.residual.reset()
        self.q_prev = self.stack.neutral_q()
        self.dq_prev = None
        self.u_ema_q = None
        self.task_prev = None


def retarget_step(reference: TaskTarget, state: AdapterState) -> np.ndarray:
    """Kinematic retargeting: execute the reference through IK, no refinement."""
    q = state.stack.solve(reference, state.q_prev)
    state.q_prev = q
    return q


def task_residual_target(u: np.ndarray, reference: TaskTarget,
                         state: ResidualState) -> TaskTarget:
    """EMA -> integrate -> clip -> offset reference; the refined task target."""
    u_s = ema_filter(u, state)
    delta = integrate_residual(u_s, state)
    return apply_residual(reference, delta)


def task_residual_step(u: np.ndarray, reference: TaskTarget,
                       state: AdapterState) -> np.ndarray:
    """EMA -> integrate -> clip -> offset reference -> IK (the main path)."""
    target = task_residual_target(u, reference, state.residual)
    q = state.stack.solve(target, state.q_prev)
    state.q_prev = q
    return q


def object_centric_step(u: np.ndarray, reference: TaskTarget,
                        state: AdapterState) -> np.ndarray:
    """Wrist residual (6) integrated as usual; hand joints commanded absolutely (16)."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (6 + state.stack.hand_dof,):
        raise DimensionMismatch(f"expected {6 + state.stack.hand_dof} channels, got {u.shape}")
    u18 = np.zeros(RESIDUAL_DIM)
    u18[:6] = u[:6]
    u_s = ema_filter(u18, state.residual)
    delta = integrate_residual(u_s, state.residual)
    wrist = apply_residual(reference, delta).wrist
    qa = ik_dls(state.stack.arm, wrist, state.q_prev[:state.stack.arm_dof]).q
    qh = scale_to_limits(u[6:], *state.stack.hand_limits())
    q = np.concatenate([qa, qh])
    state.q_prev = q
    return q


def joint_abs_step(u: np.ndarray, reference: TaskTarget,
                   state: AdapterState) -> np.ndarray:
    """Arm: velocity-like joint update from the previous target; hand: absolute."""
    u = np.asarray(u, dtype=np.float64)
    na = state.stack.arm_dof
    if u.shape != (na + state.stack.hand_dof,):
        raise DimensionMismatch(f"expected {na + state.stack.hand_dof} channels, got {u.shape}")
    cfg = state.joint_cfg
    dt = state.residual.config.dt
    qa = state.stack.arm.clamp(state.q_prev[:na] + cfg.joint_abs_scale * u[:na] * dt)
    qh = scale_to_limits(u[na:], *state.stack.hand_limits())
    q = np.concatenate([qa, qh])
    state.q_prev = q
    return q


def joint_res_step(u: np.ndarray, reference: TaskTarget,
                   state: AdapterState) -> np.ndarray:
    """Residual around the nominal IK solution of the reference, in joint space."""
    u = np.asarray(u, dtype=np.float64)
    total = state.stack.arm_dof + state.stack.hand_dof
    if u.shape != (total,):
        raise DimensionMismatch(f"expected {total} channels, got {u.shape}")
    nominal = state.stack.solve(reference, state.q_prev)
    cfg = state.joint_cfg
    dt = state.residual.config.dt
    a = state.residual.config.alpha
    if state.dq_prev is None:
        state.dq_prev = np.zeros(total)
    if state.u_ema_q is None:
        state.u_ema_q = np.zeros(total)
    state.u_ema_q = a * u + (1.0 - a) * state.u_ema_q
    dq = np.clip(state.dq_prev + cfg.joint_res_scale * state.u_ema_q * dt,
                 -cfg.joint_res_limit, cfg.joint_res_limit)
    state.dq_prev = dq
    lo_a, hi_a = state.stack.arm.limits()
    lo_h, hi_h = state.stack.hand_limits()
    lo = np.concatenate([lo_a, lo_h])
    hi = np.concatenate([hi_a, hi_h])
    q = np.clip(nominal + dq, lo, hi)
    state.q_prev = q
    return q


def task_abs_step(u: np.ndarray, reference: TaskTarget,
                  state: AdapterState) -> np.ndarray:
    """Integrate task-space velocity commands from the previous target, then IK.

    Unlike the residual path, this walks the commanded target itself; the
    reference only seeds the very first step.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (RESIDUAL_DIM,):
        raise DimensionMismatch(f"expected {RESIDUAL_DIM} channels, got {u.shape}")
    cfg = state.residual.config
    if state.task_prev is None:
        state.task_prev = reference
    prev = state.task_prev
    dpos = cfg.wrist_pos_scale * u[:3] * cfg.dt
    drot = cfg.wrist_rot_scale * u[3:6] * cfg.dt
    dtip = cfg.finger_pos_scale * u[6:].reshape(NUM_FINGERS, 3) * cfg.dt
    rot = prev.wrist.rotation if not np.any(drot) \
        else Rotation.from_rotvec(drot) * prev.wrist.rotation
    target = TaskTarget(Pose(prev.wrist.position + dpos, rot),
                        prev.fingertips + dtip)
    state.task_prev = target
    q = state.stack.solve(target, state.q_prev)
    state.q_prev = q
    return q


ADAPTERS = {
    "task-residual": task_residual_step,
    "object-centric": object_centric_step,
    "joint-abs": joint_abs_step,
    "joint-res": joint_res_step,
    "task-abs": task_abs_step,
}

# policy output width per adapter on the default 7-DoF arm + 16-DoF hand
ADAPTER_DIMS = {
    "task-residual": RESIDUAL_DIM,
    "object-centric": 6 + 16,
    "joint-abs": 7 + 16,
    "joint-res": 7 + 16,
    "task-abs": RESIDUAL_DIM,
}
