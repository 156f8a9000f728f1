"""Serial-chain FK, damped-least-squares IK, and joint-limit reporting.

Chains are ordered lists of revolute joints, each a fixed parent-frame
transform followed by a rotation about a unit axis.  The built-in arm and
finger chains below exist for tests and demos; real robots come in via
`.chain.json` files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, NotConverged, WrongDimensions
from ..geom import Pose, Rotation, compose

IK_LAMBDA = 0.05
IK_TOL_POS = 1e-5   # meters
IK_TOL_ROT = 1e-4   # radians
LIMIT_MARGIN_EPS = 1e-6  # radians


def _rpy_rotation(rpy: np.ndarray) -> Rotation:
    r, p, y = (float(v) for v in rpy)
    return Rotation.rot_z(y) * Rotation.rot_y(p) * Rotation.rot_x(r)


@dataclass
class Joint:
    """Revolute joint: fixed transform into the joint frame, then rotate about axis."""

    xyz: np.ndarray
    rpy: np.ndarray
    axis: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64)
        self.rpy = np.asarray(self.rpy, dtype=np.float64)
        self.axis = np.asarray(self.axis, dtype=np.float64)
        if self.xyz.shape != (3,) or self.rpy.shape != (3,) or self.axis.shape != (3,):
            raise WrongDimensions("joint xyz/rpy/axis must be 3-vectors")
        n = np.linalg.norm(self.axis)
        if abs(n - 1.0) > 1e-6:
            raise WrongDimensions(f"joint axis must be unit norm, got |a|={n}")
        self.axis = self.axis / n
        if not self.lo < self.hi:
            raise WrongDimensions(f"joint limits need lo < hi, got [{self.lo}, {self.hi}]")

    def fixed(self) -> Pose:
        return Pose(self.xyz, _rpy_rotation(self.rpy))

    def fixed_matrix(self) -> np.ndarray:
        if not hasattr(self, "_fixed_R"):
            self._fixed_R = _rpy_rotation(self.rpy).to_matrix()
        return self._fixed_R


@dataclass
class KinematicChain:
    joints: list[Joint]
    ee_offset: Pose = field(default_factory=Pose.identity)
    solver_hint: str = ""  # "planar-finger" switches finger_ik to the closed form

    @property
    def dof(self) -> int:
        return len(self.joints)

    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.lo for j in self.joints])
        hi = np.array([j.hi for j in self.joints])
        return lo, hi

    def clamp(self, q: np.ndarray) -> np.ndarray:
        lo, hi = self.limits()
        return np.clip(q, lo, hi)

    def mid_q(self) -> np.ndarray:
        lo, hi = self.limits()
        return 0.5 * (lo + hi)


def _rodrigues(axis: np.ndarray, theta: float) -> np.ndarray:
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def _fk_arrays(chain: KinematicChain, q: np.ndarray):
    """Matrix-form FK: (joint origins (n,3), world axes (n,3), ee pos, ee R)."""
    R = np.eye(3)
    p = np.zeros(3)
    n = chain.dof
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    for i, (joint, angle) in enumerate(zip(chain.joints, q)):
        p = p + R @ joint.xyz
        R = R @ joint.fixed_matrix()
        origins[i] = p
        axes[i] = R @ joint.axis        # spinning about the axis keeps it fixed
        R = R @ _rodrigues(joint.axis, float(angle))
    ee_p = p + R @ chain.ee_offset.position
    ee_R = R @ chain.ee_offset.rotation.to_matrix()
    return origins, axes, ee_p, ee_R


def fk(chain: KinematicChain, q: np.ndarray,
       return_links: bool = False):
    """End-effector pose; optionally also each post-joint link frame."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (chain.dof,):
        raise DimensionMismatch(f"chain has {chain.dof} joints, q has shape {q.shape}")
    pose = Pose.identity()
    links = []
    for joint, angle in zip(chain.joints, q):
        pose = compose(pose, joint.fixed())
        pose = compose(pose, Pose(np.zeros(3),
                                  Rotation.from_axis_angle(joint.axis, float(angle))))
        links.append(pose)
    ee = compose(pose, chain.ee_offset)
    return (ee, links) if return_links else ee


def jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian (6, dof): rows are [linear; angular] world velocities."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (chain.dof,):
        raise DimensionMismatch(f"chain has {chain.dof} joints, q has shape {q.shape}")
    origins, axes, ee_p, _ = _fk_arrays(chain, q)
    return np.concatenate([np.cross(axes, ee_p - origins), axes], axis=1).T


@dataclass
class IkResult:
    q: np.ndarray
    converged: bool
    pos_err: float
    rot_err: float
    iterations: int
    error_trace: list[float]


def _ik_attempt(chain: KinematicChain, evaluate, pos_only: bool, q0: np.ndarray,
                damping: float, max_iter: int, tol_pos: float,
                tol_rot: float) -> IkResult:
    q = chain.clamp(np.asarray(q0, dtype=np.float64))
    e, origins, axes, ee_p = evaluate(q)
    trace = [float(np.linalg.norm(e))]
    best_q, best_norm = q.copy(), trace[0]
    it = 0
    for it in range(max_iter):
        pe = np.linalg.norm(e[:3])
        re = 0.0 if pos_only else np.linalg.norm(e[3:])
        if pe < tol_pos and re < tol_rot:
            return IkResult(q, True, float(pe), float(re), it, trace)
        J = np.concatenate([np.cross(axes, ee_p - origins), axes], axis=1).T
        if pos_only:
            J = J[:3]
        JJt = J @ J.T + damping * damping * np.eye(J.shape[0])
        dq = J.T @ np.linalg.solve(JJt, e)
        # halve on error increase; give up the step once it degenerates
        accepted = False
        for _ in range(20):
            cand = chain.clamp(q + dq)
            ce, co, ca, cp = evaluate(cand)
            cn = float(np.linalg.norm(ce))
            if cn <= trace[-1]:
                q, e, origins, axes, ee_p = cand, ce, co, ca, cp
                trace.append(cn)
                accepted = True
                break
            dq = 0.5 * dq
        if not accepted:
            break
        if trace[-1] < best_norm:
            best_q, best_norm = q.copy(), trace[-1]
    pe = np.linalg.norm(e[:3])
    re = 0.0 if pos_only else np.linalg.norm(e[3:])
    converged = bool(pe < tol_pos and re < tol_rot)
    return IkResult(q if converged else best_q, converged,
                    float(pe), float(re), it + 1, trace)


def ik_dls(chain: KinematicChain, target, q0: np.ndarray,
           damping: float = IK_LAMBDA, max_iter: int = 100,
           tol_pos: float = IK_TOL_POS, tol_rot: float = IK_TOL_ROT,
           restarts: int = 0, seed: int = 0,
           strict: bool = False) -> IkResult:
    """Damped least-squares IK with per-iterate limit clamping.

    `target` is a Pose for 6-dim tracking or a bare 3-vector for
    position-only solves.  Steps that increase the error norm are halved
    until they improve, so the accepted-iterate error trace never rises.
    Clamping can trap the iteration in a local minimum; `restarts` retries
    from deterministic alternative seeds (perturbations of the best answer
    so far, alternating with uniform redraws) until one attempt converges.
    With `strict` a failure raises NotConverged (carrying the best result
    as `.result`); otherwise the best-found solution is returned flagged.
    """
    pos_only = not isinstance(target, Pose)
    if pos_only:
        target_p = np.asarray(target, dtype=np.float64)
        if target_p.shape != (3,):
            raise DimensionMismatch(f"position target must be (3,), got {target_p.shape}")
    q0 = np.asarray(q0, dtype=np.float64)
    if q0.shape != (chain.dof,):
        raise DimensionMismatch(f"q0 shape {q0.shape} != dof {chain.dof}")
    if not pos_only:
        target_R = target.rotation.to_matrix()

    def evaluate(qv):
        origins, axes, ee_p, ee_R = _fk_arrays(chain, qv)
        if pos_only:
            return target_p - ee_p, origins, axes, ee_p
        rot = Rotation.from_matrix(target_R @ ee_R.T).to_rotvec()
        e = np.concatenate([target.position - ee_p, rot])
        return e, origins, axes, ee_p

    lo, hi = chain.limits()
    rng = np.random.default_rng(seed)
    best: IkResult | None = None
    start = q0
    for attempt in range(restarts + 1):
        res = _ik_attempt(chain, evaluate, pos_only, start, damping, max_iter,
                          tol_pos, tol_rot)
        if best is None or (res.pos_err + res.rot_err
                            < best.pos_err + best.rot_err):
            best = res
        if res.converged:
            break
        if attempt % 2 == 0:
            start = chain.clamp(best.q + rng.normal(0.0, 0.5, chain.dof))
        else:
            start = lo + rng.uniform(0.0, 1.0, chain.dof) * (hi - lo)
    if strict and not best.converged:
        err = NotConverged(f"IK residual pos={best.pos_err:.2e} m "
                           f"rot={best.rot_err:.2e} rad after "
                           f"{restarts + 1} attempts")
        err.result = best
        raise err
    return best


# --- analytic finger ---------------------------------------------------------

def _planar_finger_ik(chain: KinematicChain, target: np.ndarray,
                      q0: np.ndarray) -> np.ndarray:
    """Closed form for the built-in finger: abduction about z, then MCP/PIP
    flexion about x; the distal joint is held at its seed value and folded
    into an effective second link.

    A curled finger can place the tip on the far side of the base (negative
    planar y), and the two-link subproblem has elbow-up/down twins, so all
    four branch combinations are tried and the in-limit one that lands
    closest to the target wins.
    """
    base = chain.joints[0].xyz
    l1 = float(chain.joints[2].xyz[1])
    l2 = float(chain.joints[3].xyz[1])
    l3 = float(chain.ee_offset.position[1])
    dip = float(q0[3])
    # distal segment (l2 then l3 bent by dip) as one link with an angle offset
    ey = l2 + l3 * math.cos(dip)
    ez = l3 * math.sin(dip)
    l2e = math.hypot(ey, ez)
    psi = math.atan2(ez, ey)

    v = np.asarray(target, dtype=np.float64) - base
    theta = math.atan2(-v[0], v[1])
    flipped = theta - math.pi if theta > 0.0 else theta + math.pi
    pz = v[2]

    best_q, best_err = None, np.inf
    for abd, py in ((theta, math.hypot(v[0], v[1])),
                    (flipped, -math.hypot(v[0], v[1]))):
        r2 = py * py + pz * pz
        c_el = (r2 - l1 * l1 - l2e * l2e) / (2.0 * l1 * l2e)
        c_el = min(1.0, max(-1.0, c_el))
        for elbow in (math.acos(c_el), -math.acos(c_el)):
            mcp = math.atan2(pz, py) - math.atan2(l2e * math.sin(elbow),
                                                  l1 + l2e * math.cos(elbow))
            q = chain.clamp(np.array([abd, mcp, elbow - psi, dip]))
            err = float(np.linalg.norm(fk(chain, q).position - target))
            if err < best_err:
                best_q, best_err = q, err
    return best_q


def finger_ik(fingers: list[KinematicChain], targets: np.ndarray,
              q0: np.ndarray, tol_pos: float = IK_TOL_POS,
              strict: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Position-only IK for each finger; targets are wrist-frame (len(fingers), 3).

    Chains tagged solver_hint="planar-finger" use the closed form; anything
    else falls back to damped least squares.  Returns (stacked q, per-finger
    convergence mask); `strict` raises NotConverged naming the failed fingers.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(fingers), 3):
        raise DimensionMismatch(f"expected ({len(fingers)}, 3) targets, got {targets.shape}")
    dofs = [ch.dof for ch in fingers]
    if np.asarray(q0).shape != (sum(dofs),):
        raise DimensionMismatch(f"q0 must stack {sum(dofs)} joint values")
    out, ok = [], []
    offset = 0
    for ch, tgt in zip(fingers, targets):
        qf = np.asarray(q0, dtype=np.float64)[offset:offset + ch.dof]
        offset += ch.dof
        tip = fk(ch, qf).position
        if np.linalg.norm(tip - tgt) < tol_pos:
            out.append(qf.copy())
            ok.append(True)
            continue
        if ch.solver_hint == "planar-finger":
            q = _planar_finger_ik(ch, tgt, qf)
            good = bool(np.linalg.norm(fk(ch, q).position - tgt) < tol_pos)
            if not good:
                # target off the closed form's reachable slice: polish with DLS
                res = ik_dls(ch, tgt, q, tol_pos=tol_pos)
                q, good = res.q, res.converged
            out.append(q)
            ok.append(good)
        else:
            res = ik_dls(ch, tgt, qf, tol_pos=tol_pos)
            out.append(res.q)
            ok.append(res.converged)
    q_all = np.concatenate(out)
    ok = np.array(ok)
    if strict and not ok.all():
        bad = [i for i, good in enumerate(ok) if not good]
        err = NotConverged(f"finger IK failed for fingers {bad}")
        err.q = q_all
        err.converged = ok
        raise err
    return q_all, ok


# --- joint-limit reporting ---------------------------------------------------

@dataclass
class LimitEvent:
    joint: int
    t_start: int
    duration: int


@dataclass
class JointLimitReport:
    margins: np.ndarray          # (T, dof) distance to nearest limit, radians
    events: list[LimitEvent]
    counts: np.ndarray           # saturated-sample count per joint

    @property
    def total_events(self) -> int:
        return len(self.events)


def joint_limit_report(qs: np.ndarray, chain: KinematicChain,
                       margin_eps: float = LIMIT_MARGIN_EPS) -> JointLimitReport:
    """Find samples within margin_eps of a limit, grouped into contiguous events."""
    qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
    if qs.shape[1] != chain.dof:
        raise DimensionMismatch(f"trajectory width {qs.shape[1]} != dof {chain.dof}")
    lo, hi = chain.limits()
    margins = np.minimum(qs - lo, hi - qs)
    saturated = margins < margin_eps
    events = []
    for j in range(chain.dof):
        col = saturated[:, j]
        t = 0
        while t < len(col):
            if col[t]:
                start = t
                while t < len(col) and col[t]:
                    t += 1
                events.append(LimitEvent(j, start, t - start))
            else:
                t += 1
    return JointLimitReport(margins, events, saturated.sum(axis=0))


# --- built-in test chains ----------------------------------------------------

def default_arm() -> KinematicChain:
    """7-joint arm with alternating z/y axes and limits shaped like a Panda."""
    z = np.array([0.0, 0.0, 1.0])
    y = np.array([0.0, 1.0, 0.0])
    zero = np.zeros(3)

    def j(xyz, axis, lo, hi):
        return Joint(np.array(xyz), zero, axis, lo, hi)

    joints = [
        j([0.0, 0.0, 0.333], z, -2.8973, 2.8973),
        j([0.0, 0.0, 0.0], y, -1.7628, 1.7628),
        j([0.0, 0.0, 0.316], z, -2.8973, 2.8973),
        j([0.0825, 0.0, 0.0], y, -3.0718, -0.0698),
        j([-0.0825, 0.0, 0.384], z, -2.8973, 2.8973),
        j([0.0, 0.0, 0.0], y, -0.0175, 3.7525),
        j([0.088, 0.0, 0.0], z, -2.8973, 2.8973),
    ]
    ee = Pose(np.array([0.0, 0.0, 0.107]), Rotation.identity())
    return KinematicChain(joints, ee)


FINGER_BASES = [(-0.045, 0.06, 0.0), (-0.015, 0.065, 0.0),
                (0.015, 0.065, 0.0), (0.045, 0.06, 0.0)]
FINGER_LINKS = (0.045, 0.030, 0.025)  # proximal, middle, distal, meters


def default_finger(base_xyz) -> KinematicChain:
    z = np.array([0.0, 0.0, 1.0])
    x = np.array([1.0, 0.0, 0.0])
    zero = np.zeros(3)
    l1, l2, _ = FINGER_LINKS
    joints = [
        Joint(np.array(base_xyz), zero, z, -0.35, 0.35),        # abduction
        Joint(np.zeros(3), zero, x, -0.10, 1.80),               # MCP flexion
        Joint(np.array([0.0, l1, 0.0]), zero, x, -0.10, 1.90),  # PIP flexion
        Joint(np.array([0.0, l2, 0.0]), zero, x, -0.10, 1.60),  # DIP flexion
    ]
    ee = Pose(np.array([0.0, FINGER_LINKS[2], 0.0]), Rotation.identity())
    return KinematicChain(joints, ee, solver_hint="planar-finger")


def default_hand() -> list[KinematicChain]:
    """Four 4-joint fingers, 16 DoF total, bases spread across the palm."""
    return [default_finger(b) for b in FINGER_BASES]


# --- chain file I/O ----------------------------------------------------------

def save_chain(path: str, chain: KinematicChain) -> None:
    doc = {
        "joints": [{"xyz": j.xyz.tolist(), "rpy": j.rpy.tolist(),
                    "axis": j.axis.tolist(), "lo": j.lo, "hi": j.hi}
                   for j in chain.joints],
        "ee_offset": {"xyz": chain.ee_offset.position.tolist(),
                      "quat": chain.ee_offset.rotation.quat.tolist()},
        "solver_hint": chain.solver_hint,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_chain(path: str) -> KinematicChain:
    with open(path) as f:
        doc = json.load(f)
    joints = [Joint(np.array(j["xyz"]), np.array(j["rpy"]), np.array(j["axis"]),
                    float(j["lo"]), float(j["hi"])) for j in doc["joints"]]
    eo = doc.get("ee_offset", {})
    if "quat" in eo:
        ee = Pose(np.array(eo["xyz"]), Rotation(np.array(eo["quat"])))
    elif "rpy" in eo:
        ee = Pose(np.array(eo["xyz"]), _rpy_rotation(np.array(eo["rpy"])))
    else:
        ee = Pose.identity()
    return KinematicChain(joints, ee, doc.get("solver_hint", ""))
