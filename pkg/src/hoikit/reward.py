"""Teacher reward for reference tracking.

Five weighted components: object pose tracking behind a latched proximity
gate, fingertip tracking, wrist tracking, a contact count bonus, and a
penalty bundle (spurious collisions + joint-velocity regularization).
Everything here is pure; the only state that survives a step is the
:class:`GateState`, threaded through explicitly.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import WrongDimensions
from .geom import Pose

NUM_CONTACTS = 11          # 4 distal + 4 medial + 3 proximal binary sensors
FORCE_DIM = 33             # 12 + 12 + 9 normalized force channels

# PPO settings the teacher was trained with.  Shipped for the record — there
# is no PPO loop in this package.
PPO_DEFAULTS = {
    "value_loss_coef": 1.0,
    "clipped_value_loss": True,
    "clip_param": 0.2,
    "entropy_coef": 0.005,
    "learning_epochs": 5,
    "mini_batches": 8,
    "learning_rate": 5e-4,
    "schedule": "adaptive",
    "gamma": 0.99,
    "lam": 0.95,
    "desired_kl": 0.01,
    "max_grad_norm": 1.0,
}


@dataclass(frozen=True)
class RewardWeights:
    """Component weights and kernel scales."""

    obj: float = 20.0
    hand: float = 5.0
    wrist: float = 2.0
    contact: float = 1.0
    penalty: float = 0.1
    a_p_obj: float = 40.0
    a_r_obj: float = 0.5
    a_p_hand: float = 10.0
    a_p_wrist: float = 20.0
    a_r_wrist: float = 2.0
    a_vel: float = 0.3
    gate_delta: float = 0.10   # meters added to the bounding-sphere radius

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise WrongDimensions(f"reward weight {f.name} must be >= 0")


@dataclass
class GateState:
    """Object-reward activation latch.

    Flips on the first step the palm comes within ``R + delta`` of the
    object center and never flips back, so transient regrasps do not drop
    object supervision.
    """

    activated: bool = False
    t_star: int | None = None


@dataclass
class ContactState:
    b: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CONTACTS, bool))
    f: np.ndarray = field(default_factory=lambda: np.zeros(FORCE_DIM))

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=bool)
        self.f = np.asarray(self.f, dtype=float)
        if self.b.shape != (NUM_CONTACTS,):
            raise WrongDimensions(f"contact mask must be ({NUM_CONTACTS},)")
        if self.f.shape != (FORCE_DIM,):
            raise WrongDimensions(f"contact force must be ({FORCE_DIM},)")
        if not np.all(np.isfinite(self.f)):
            raise WrongDimensions("contact forces must be finite")


@dataclass
class BodyState:
    """Per-step simulator readout the reward consumes.

    ``f_nonfinger``/``f_body`` are (k, 3) stacked force readings from the
    non-fingertip hand links and arm segments; empty by default.
    """

    wrist: Pose
    fingertips: np.ndarray              # (4, 3) world positions
    obj: Pose
    palm: np.ndarray                    # (3,) world position
    contacts: ContactState = field(default_factory=ContactState)
    qd: np.ndarray = field(default_factory=lambda: np.zeros(23))
    f_nonfinger: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    f_body: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.fingertips = np.asarray(self.fingertips, dtype=float)
        self.palm = np.asarray(self.palm, dtype=float)
        if self.fingertips.shape != (4, 3):
            raise WrongDimensions("fingertips must be (4, 3)")
        if self.palm.shape != (3,):
            raise WrongDimensions("palm must be a 3-vector")


@dataclass
class RefFrame:
    """One frame of the synthesized reference to track."""

    wrist: Pose
    fingertips: np.ndarray              # (4, 3)
    obj: Pose


def tracking_kernel(dist: float, scale: float) -> float:
    """exp(-scale * dist): 1 at zero error, strictly decreasing."""
    return math.exp(-scale * dist)


def update_gate(gate: GateState, palm: np.ndarray, obj_center: np.ndarray,
                obj_radius: float, t: int,
                delta: float = 0.10) -> GateState:
    if gate.activated:
        return gate
    if np.linalg.norm(np.asarray(palm) - np.asarray(obj_center)) \
            <= obj_radius + delta:
        return GateState(activated=True, t_star=t)
    return gate


def reward_step(state: BodyState, ref: RefFrame, gate: GateState,
                weights: RewardWeights, obj_radius: float,
                t: int = 0) -> tuple[float, dict, GateState]:
    """One reward evaluation; returns (total, components, updated gate).

    The gate is updated before the object term, so the activation step
    itself already earns object reward.
    """
    w = weights
    gate = update_gate(gate, state.palm, state.obj.position, obj_radius, t,
                       delta=w.gate_delta)

    d_hand = float(np.mean(np.linalg.norm(
        state.fingertips - ref.fingertips, axis=1)))
    r_hand = tracking_kernel(d_hand, w.a_p_hand)

    r_wrist = (tracking_kernel(
        float(np.linalg.norm(state.wrist.position - ref.wrist.position)),
        w.a_p_wrist)
        + tracking_kernel(state.wrist.rotation.angle_to(ref.wrist.rotation),
                          w.a_r_wrist))

    if gate.activated:
        r_obj = (tracking_kernel(
            float(np.linalg.norm(state.obj.position - ref.obj.position)),
            w.a_p_obj)
            + tracking_kernel(state.obj.rotation.angle_to(ref.obj.rotation),
                              w.a_r_obj))
    else:
        r_obj = 0.0

    r_contact = float(np.count_nonzero(state.contacts.b))

    p_col = -float(np.linalg.norm(state.f_nonfinger, axis=1).sum()) \
        - float(np.linalg.norm(state.f_body, axis=1).sum())
    p_reg = -w.a_vel * float(np.linalg.norm(state.qd))
    r_penalty = p_col + p_reg

    components = {"obj": r_obj, "hand": r_hand, "wrist": r_wrist,
                  "contact": r_contact, "penalty": r_penalty}
    total = (w.obj * r_obj + w.hand * r_hand + w.wrist * r_wrist
             + w.contact * r_contact + w.penalty * r_penalty)
    return total, components, gate


# --------------------------------------------------------------- persistence

def save_reward_config(path: str, weights: RewardWeights | None = None):
    w = weights if weights is not None else RewardWeights()
    blob = {"reward": dataclasses.asdict(w), "ppo": PPO_DEFAULTS}
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2)


def load_reward_config(path: str) -> RewardWeights:
    with open(path) as fh:
        blob = json.load(fh)
    return RewardWeights(**blob["reward"])


def save_episode_csv(path: str, rows: list[dict]):
    """Write the per-step reward log: t, components, total, gate flag."""
    cols = ["t", "obj", "hand", "wrist", "contact", "penalty", "total", "gate"]
    with open(path, "w") as fh:
        fh.write("# schema=" + ",".join(cols) + "\n")
        for row in rows:
            cells = [str(int(row["t"])), *[repr(float(row[c])) for c in cols[1:-1]],
                     str(int(row["gate"]))]
            fh.write(",".join(cells) + "\n")
