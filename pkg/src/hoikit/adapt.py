"""Student-side adaptation: proprioceptive history, GRU estimation heads,
the intrinsic-dynamics encoder, the distillation loss, and the domain
randomization sampler.

The student never sees privileged simulator state.  It reconstructs contact
(11 binary sensors + 33 normalized forces) from a 30-step hand history and
the 16-d dynamics latent from a 30-step full-body history; both estimates
are supervised against the teacher's privileged versions during
distillation.
"""

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ShapeMismatch, WrongDimensions
from .nn import Gru, Linear, Mlp, Module, Tensor

ARM_PROPRIO_DIM = 23       # 7 joint pos + 3 wrist pos + 6 wrist rot6d + 7 prev action
HAND_PROPRIO_DIM = 44      # 16 joint pos + 12 fingertip pos + 16 prev action
HISTORY_LEN = 30
GRU_HIDDEN = 32
GRU_LAYERS = 2
DYN_LATENT_DIM = 16
CONTACT_THRESHOLD = 0.5
NUM_CONTACTS = 11
FORCE_DIM = 33


@dataclass
class Proprio:
    arm: np.ndarray
    hand: np.ndarray

    def __post_init__(self):
        self.arm = np.asarray(self.arm, dtype=float)
        self.hand = np.asarray(self.hand, dtype=float)
        if self.arm.shape != (ARM_PROPRIO_DIM,):
            raise WrongDimensions(f"arm proprio must be ({ARM_PROPRIO_DIM},)")
        if self.hand.shape != (HAND_PROPRIO_DIM,):
            raise WrongDimensions(f"hand proprio must be ({HAND_PROPRIO_DIM},)")


class HistoryBuffers:
    """Fixed 30-step FIFO windows, zero-padded until filled.

    ``hand`` is 30x44; ``full`` is 30x67 with each row [arm; hand].
    Newest entry is the last row.
    """

    def __init__(self):
        self.hand = np.zeros((HISTORY_LEN, HAND_PROPRIO_DIM))
        self.full = np.zeros((HISTORY_LEN, ARM_PROPRIO_DIM + HAND_PROPRIO_DIM))
        self.steps = 0

    def push(self, p: Proprio):
        self.hand = np.roll(self.hand, -1, axis=0)
        self.full = np.roll(self.full, -1, axis=0)
        self.hand[-1] = p.hand
        self.full[-1] = np.concatenate([p.arm, p.hand])
        self.steps += 1

    def reset(self):
        self.hand[:] = 0.0
        self.full[:] = 0.0
        self.steps = 0


def push_history(buffers: HistoryBuffers, proprio: Proprio) -> HistoryBuffers:
    buffers.push(proprio)
    return buffers


# ------------------------------------------------------------------- models

def _as_batched(h: Tensor | np.ndarray, width: int, name: str) -> tuple[Tensor, bool]:
    t = h if isinstance(h, Tensor) else Tensor(np.asarray(h, dtype=float))
    if t.ndim == 2:
        t = nn.reshape(t, (1, *t.shape))
        squeeze = True
    else:
        squeeze = False
    if t.ndim != 3 or t.shape[1] != HISTORY_LEN or t.shape[2] != width:
        raise ShapeMismatch(
            f"{name} history must be (B, {HISTORY_LEN}, {width}), got {t.shape}")
    return t, squeeze


class ContactAdaptModel(Module):
    """30x44 hand history -> (11 contact probabilities, 33 forces)."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.gru = Gru(HAND_PROPRIO_DIM, GRU_HIDDEN, GRU_LAYERS, rng)
        self.head_b = Linear(GRU_HIDDEN, NUM_CONTACTS, rng)
        self.head_f = Linear(GRU_HIDDEN, FORCE_DIM, rng)

    def __call__(self, history) -> tuple[Tensor, Tensor]:
        h, squeeze = _as_batched(history, HAND_PROPRIO_DIM, "hand")
        feat = self.gru(h)
        b_hat = nn.sigmoid(self.head_b(feat))
        f_hat = self.head_f(feat)
        if squeeze:
            b_hat, f_hat = b_hat[0], f_hat[0]
        return b_hat, f_hat


class DynamicsAdaptModel(Module):
    """30x67 full-body history -> 16-d dynamics latent estimate."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.gru = Gru(ARM_PROPRIO_DIM + HAND_PROPRIO_DIM, GRU_HIDDEN,
                       GRU_LAYERS, rng)
        self.head = Linear(GRU_HIDDEN, DYN_LATENT_DIM, rng)

    def __call__(self, history) -> Tensor:
        h, squeeze = _as_batched(history, ARM_PROPRIO_DIM + HAND_PROPRIO_DIM,
                                 "full-body")
        z = self.head(self.gru(h))
        return z[0] if squeeze else z


class IntrinsicEncoder(Module):
    """8 object intrinsics -> 16-d privileged dynamics latent (teacher side)."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.mlp = Mlp([8, 128, 64, DYN_LATENT_DIM], rng, activation=nn.elu)

    def __call__(self, e) -> Tensor:
        t = e if isinstance(e, Tensor) else Tensor(np.asarray(e, dtype=float))
        if t.shape[-1] != 8:
            raise ShapeMismatch(f"intrinsics must have 8 channels, got {t.shape}")
        if t.ndim == 1:
            return self.mlp(nn.reshape(t, (1, 8)))[0]
        return self.mlp(t)


def contact_adapt_forward(model: ContactAdaptModel, h_hand):
    return model(h_hand)


def dynamics_adapt_forward(model: DynamicsAdaptModel, h_full):
    return model(h_full)


def dynamics_encode(mu: IntrinsicEncoder, e: "IntrinsicParams") -> Tensor:
    return mu(e.vector())


def binary_contacts(b_hat, threshold: float = CONTACT_THRESHOLD) -> np.ndarray:
    probs = b_hat.data if isinstance(b_hat, Tensor) else np.asarray(b_hat)
    return probs >= threshold


# --------------------------------------------------------------------- loss

def _sq_norm(a: Tensor, b: Tensor, what: str) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what} shapes differ: {a.shape} vs {b.shape}")
    d = nn.add(a, nn.mul(b, -1.0))
    return nn.tsum(nn.mul(d, d))


def student_loss(u_s, u_t, z_hat, z, b_hat, b, f_hat, f,
                 lambda_b: float = 1.0,
                 lambda_f: float = 1.0) -> tuple[Tensor, dict]:
    """Distillation objective: action imitation + latent regression +
    contact classification/regression.  Returns (total, component floats)."""
    wrap = lambda x: x if isinstance(x, Tensor) else Tensor(np.asarray(x, float))
    u_s, u_t, z_hat, z = wrap(u_s), wrap(u_t), wrap(z_hat), wrap(z)
    b_hat, b, f_hat, f = wrap(b_hat), wrap(b), wrap(f_hat), wrap(f)

    imitate = _sq_norm(u_s, u_t, "action")
    dyna = _sq_norm(z_hat, z, "dynamics latent")
    con_bce = nn.bce(b_hat, b)
    con_force = _sq_norm(f_hat, f, "contact force")

    total = nn.add(nn.add(imitate, dyna),
                   nn.add(nn.mul(con_bce, lambda_b),
                          nn.mul(con_force, lambda_f)))
    parts = {"imitate": float(imitate.data), "dyna": float(dyna.data),
             "bce": float(con_bce.data), "force": float(con_force.data)}
    return total, parts


# ------------------------------------------------------- domain randomization

@dataclass(frozen=True)
class IntrinsicParams:
    """Object intrinsics — the 8-vector the dynamics encoder compresses."""

    mass: float
    static_friction: float
    dynamic_friction: float
    restitution: float
    com_offset: np.ndarray       # (3,) meters, additive
    scale: float

    def vector(self) -> np.ndarray:
        return np.concatenate([
            [self.mass, self.static_friction, self.dynamic_friction,
             self.restitution], np.asarray(self.com_offset, float),
            [self.scale]])


@dataclass(frozen=True)
class RobotRand:
    mass_scale: float
    static_friction: float
    dynamic_friction: float
    restitution: float
    joint_stiffness_scale: float
    joint_damping_scale: float
    joint_limit_scale: float
    joint_friction_scale: float
    armature_scale: float


@dataclass(frozen=True)
class DeskRand:
    static_friction: float
    dynamic_friction: float
    restitution: float


@dataclass(frozen=True)
class DrSample:
    robot: RobotRand
    object: IntrinsicParams
    desk: DeskRand
    gravity_dz: float            # additive z perturbation, m/s^2

    def flat(self) -> dict:
        out = {}
        for group in ("robot", "desk"):
            for k, v in dataclasses.asdict(getattr(self, group)).items():
                out[f"{group}.{k}"] = v
        obj = self.object
        out.update({
            "object.mass": obj.mass,
            "object.static_friction": obj.static_friction,
            "object.dynamic_friction": obj.dynamic_friction,
            "object.restitution": obj.restitution,
            "object.com_offset_x": float(obj.com_offset[0]),
            "object.com_offset_y": float(obj.com_offset[1]),
            "object.com_offset_z": float(obj.com_offset[2]),
            "object.scale": obj.scale,
        })
        out["env.gravity_dz"] = self.gravity_dz
        return out


# (lo, hi) per randomized field; draw order fixed by insertion order.
DR_RANGES = {
    "robot.mass_scale": (0.5, 1.5),
    "robot.static_friction": (0.2, 1.0),
    "robot.dynamic_friction": (0.2, 1.0),
    "robot.restitution": (0.0, 0.4),
    "robot.joint_stiffness_scale": (0.5, 1.5),
    "robot.joint_damping_scale": (0.3, 3.0),
    "robot.joint_limit_scale": (0.95, 1.05),
    "robot.joint_friction_scale": (0.8, 1.2),
    "robot.armature_scale": (0.8, 1.2),
    "object.mass": (0.1, 1.0),
    "object.static_friction": (0.2, 0.6),
    "object.dynamic_friction": (0.2, 0.6),
    "object.restitution": (0.0, 0.4),
    "object.com_offset_x": (-0.02, 0.02),
    "object.com_offset_y": (-0.02, 0.02),
    "object.com_offset_z": (-0.02, 0.02),
    "object.scale": (0.95, 1.05),
    "desk.static_friction": (0.5, 1.1),
    "desk.dynamic_friction": (0.5, 1.1),
    "desk.restitution": (0.0, 0.4),
    "env.gravity_dz": (0.0, 0.5),
}


def dr_sample(rng: np.random.Generator) -> DrSample:
    """One uniform draw per field, all within their documented ranges."""
    v = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in DR_RANGES.items()}
    robot = RobotRand(*[v[f"robot.{f.name}"]
                        for f in dataclasses.fields(RobotRand)])
    obj = IntrinsicParams(
        mass=v["object.mass"],
        static_friction=v["object.static_friction"],
        dynamic_friction=v["object.dynamic_friction"],
        restitution=v["object.restitution"],
        com_offset=np.array([v["object.com_offset_x"],
                             v["object.com_offset_y"],
                             v["object.com_offset_z"]]),
        scale=v["object.scale"])
    desk = DeskRand(*[v[f"desk.{f.name}"] for f in dataclasses.fields(DeskRand)])
    return DrSample(robot, obj, desk, v["env.gravity_dz"])


def save_dr(path: str, sample: DrSample):
    with open(path, "w") as fh:
        json.dump(sample.flat(), fh, indent=2)


def load_dr(path: str) -> DrSample:
    with open(path) as fh:
        v = json.load(fh)
    robot = RobotRand(*[v[f"robot.{f.name}"]
                        for f in dataclasses.fields(RobotRand)])
    obj = IntrinsicParams(
        mass=v["object.mass"],
        static_friction=v["object.static_friction"],
        dynamic_friction=v["object.dynamic_friction"],
        restitution=v["object.restitution"],
        com_offset=np.array([v["object.com_offset_x"],
                             v["object.com_offset_y"],
                             v["object.com_offset_z"]]),
        scale=v["object.scale"])
    desk = DeskRand(*[v[f"desk.{f.name}"] for f in dataclasses.fields(DeskRand)])
    return DrSample(robot, obj, desk, v["env.gravity_dz"])
