"""Contact detection, planar perturbation, retargeting, reach, resampling."""

import math

import numpy as np
import pytest

from hoikit import augment as A
from hoikit.data import HoiFrame, HoiTrajectory
from hoikit.errors import LengthMismatch, NoContact, TooShort
from hoikit.geom import Pose, Rotation, compose, inverse, pose_distance


def approach_traj(n=20, t_contact=8, task="pick", dt=0.05):
    """Wrist approaches a static object, touches at t_contact, then both move."""
    frames = []
    obj0 = Pose(np.array([0.5, 0.2, 0.1]), Rotation.rot_z(0.3))
    for t in range(n):
        if t < t_contact:
            # linear approach from 0.5 m away down to just under the threshold
            frac = t / t_contact
            offset = (1 - frac) * 0.5 + frac * 0.1
            wrist = Pose(obj0.position + np.array([offset, 0.0, 0.05]),
                         Rotation.rot_y(0.2 * frac))
            obj = obj0
        else:
            # rigid co-movement during manipulation
            s = (t - t_contact) * 0.01
            carry = Pose(np.array([s, 2 * s, s / 2]), Rotation.rot_z(0.05 * (t - t_contact)))
            obj = compose(carry, obj0)
            wrist = compose(carry, Pose(obj0.position + np.array([0.1, 0.0, 0.05]),
                                        Rotation.rot_y(0.2)))
        hand = np.tile(np.array([0.02, 0.0, -0.01]), (25, 1)) * (1 + 0.01 * t)
        frames.append(HoiFrame(wrist, obj, hand))
    return HoiTrajectory(frames, task, dt)


# --- contact detection ------------------------------------------------------

def test_contact_first_subthreshold_index():
    # distances 0.30, 0.20, 0.11, 0.05 against threshold 0.12
    frames = [HoiFrame(Pose(np.array([d, 0, 0])), Pose.identity(), np.zeros((25, 3)))
              for d in (0.30, 0.20, 0.11, 0.05)]
    traj = HoiTrajectory(frames)
    assert A.detect_contact_frame(traj, 0.12) == 2


def test_contact_never_met_raises():
    frames = [HoiFrame(Pose(np.array([1.0, 0, 0])), Pose.identity(), np.zeros((25, 3)))
              for _ in range(5)]
    with pytest.raises(NoContact):
        A.detect_contact_frame(HoiTrajectory(frames), 0.12)


def test_contact_matches_bruteforce_scan():
    traj = approach_traj(n=30, t_contact=11)
    thr = 0.2
    got = A.detect_contact_frame(traj, thr)
    brute = min(i for i, fr in enumerate(traj.frames)
                if np.linalg.norm(fr.object.position - fr.wrist.position) < thr)
    assert got == brute


# --- planar transform -------------------------------------------------------

def test_planar_identity_when_zero():
    tf = A.PlanarTransform(0.0, np.zeros(2), np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(tf.b, np.zeros(3))
    assert tf.G.rotation.is_identity()


def test_planar_direct_formula():
    # p0=(1,0,0), d=(0.1,0), theta=90 deg -> b = (1.1, -1, 0)
    tf = A.PlanarTransform(math.pi / 2, np.array([0.1, 0.0]), np.array([1.0, 0.0, 0.0]))
    assert np.allclose(tf.b, [1.1, -1.0, 0.0], atol=1e-12)


def test_planar_anchor_translates_by_d():
    rng = np.random.default_rng(0)
    cfg = A.AugmentConfig()
    for _ in range(20):
        p0 = rng.normal(size=3)
        tf = A.sample_planar_transform(p0, cfg, rng)
        moved = tf.G.apply(p0)
        assert np.allclose(moved[:2], p0[:2] + tf.d, atol=1e-12)
        assert abs(moved[2] - p0[2]) < 1e-12  # z preserved


def test_apply_planar_preserves_relation():
    traj = approach_traj()
    rng = np.random.default_rng(1)
    tf = A.sample_planar_transform(traj.frames[8].object.position,
                                   A.AugmentConfig(), rng)
    moved = A.apply_planar(traj.frames, tf)
    for a, b in zip(traj.frames, moved):
        rel_a = compose(inverse(a.object), a.wrist)
        rel_b = compose(inverse(b.object), b.wrist)
        dp, dr = pose_distance(rel_a, rel_b)
        assert dp < 1e-12 and dr < 1e-9
        assert np.array_equal(a.hand, b.hand)


def test_apply_planar_world_keypoints_transform():
    # world keypoint x = R(w) h + p(w) must move by exactly G
    traj = approach_traj()
    tf = A.PlanarTransform(0.7, np.array([0.05, -0.1]),
                           traj.frames[0].object.position)
    moved = A.apply_planar(traj.frames, tf)
    for a, b in zip(traj.frames, moved):
        for k in range(25):
            world_a = a.wrist.apply(a.hand[k])
            world_b = b.wrist.apply(b.hand[k])
            assert np.allclose(world_b, tf.G.apply(world_a), atol=1e-12)


def test_apply_planar_identity_passthrough():
    traj = approach_traj()
    tf = A.PlanarTransform(0.0, np.zeros(2), np.zeros(3))
    moved = A.apply_planar(traj.frames, tf)
    for a, b in zip(traj.frames, moved):
        assert np.array_equal(a.wrist.to_quat7(), b.wrist.to_quat7())
        assert np.array_equal(a.object.to_quat7(), b.object.to_quat7())


# --- reach regeneration -----------------------------------------------------

def test_reach_endpoints_exact():
    canonical = Pose(np.array([0.0, 0.0, 0.4]), Rotation.rot_x(0.1))
    hand0 = np.full((25, 3), 0.01)
    first = HoiFrame(Pose(np.array([0.5, 0.2, 0.15]), Rotation.rot_z(1.0)),
                     Pose(np.array([0.55, 0.2, 0.1])), np.full((25, 3), 0.03))
    seg = A.regenerate_reach(canonical, hand0, first, 11)
    assert len(seg) == 11
    assert np.array_equal(seg[0].wrist.to_quat7(), canonical.to_quat7())
    assert np.array_equal(seg[0].hand, hand0)
    assert np.array_equal(seg[-1].wrist.to_quat7(), first.wrist.to_quat7())
    assert np.array_equal(seg[-1].hand, first.hand)
    # midpoint position is the arithmetic mean
    mid = seg[5].wrist.position
    assert np.allclose(mid, 0.5 * (canonical.position + first.wrist.position), atol=1e-12)
    # object parked at its contact pose throughout
    for fr in seg:
        assert np.array_equal(fr.object.to_quat7(), first.object.to_quat7())


def test_reach_too_short():
    with pytest.raises(TooShort):
        A.regenerate_reach(Pose.identity(), np.zeros((25, 3)),
                           HoiFrame(Pose.identity(), Pose.identity(),
                                    np.zeros((25, 3))), 1)


# --- retargeting ------------------------------------------------------------

def test_retarget_identity():
    traj = approach_traj()
    out = A.retarget_wrist_to_object(traj.frames,
                                     [fr.object for fr in traj.frames])
    for a, b in zip(traj.frames, out):
        dp, dr = pose_distance(a.wrist, b.wrist)
        assert dp < 1e-12 and dr < 1e-9


def test_retarget_consistent_with_planar():
    traj = approach_traj()
    tf = A.PlanarTransform(0.4, np.array([0.1, 0.05]), traj.frames[0].object.position)
    planar = A.apply_planar(traj.frames, tf)
    retgt = A.retarget_wrist_to_object(
        traj.frames, [compose(tf.G, fr.object) for fr in traj.frames])
    for a, b in zip(planar, retgt):
        dp, dr = pose_distance(a.wrist, b.wrist)
        assert dp < 1e-9 and dr < 1e-9


def test_retarget_defining_relation():
    rng = np.random.default_rng(2)
    traj = approach_traj()
    new_objs = [Pose(rng.normal(size=3), Rotation.from_rotvec(rng.normal(size=3)))
                for _ in traj.frames]
    out = A.retarget_wrist_to_object(traj.frames, new_objs)
    for src, new in zip(traj.frames, out):
        want = compose(inverse(src.object), src.wrist)
        got = compose(inverse(new.object), new.wrist)
        dp, dr = pose_distance(want, got)
        assert dp < 1e-12 and dr < 1e-9


def test_retarget_length_mismatch():
    traj = approach_traj(n=5)
    with pytest.raises(LengthMismatch):
        A.retarget_wrist_to_object(traj.frames, [Pose.identity()] * 4)


# --- symmetry ---------------------------------------------------------------

def test_symmetry_phi_zero_unchanged():
    rots = [Rotation.rot_z(0.1 * i) for i in range(5)]
    out = A.apply_symmetry_axis(rots, np.array([0.0, 0.0, 1.0]), 0.0)
    for a, b in zip(rots, out):
        assert np.array_equal(a.quat, b.quat)


def test_symmetry_identity_rotations_get_axis_spin():
    rots = [Rotation.identity() for _ in range(4)]
    out = A.apply_symmetry_axis(rots, np.array([0.0, 0.0, 1.0]), math.pi / 2)
    for r in out:
        assert r.angle_to(Rotation.rot_z(math.pi / 2)) < 1e-12


def test_symmetry_relative_rotation_conjugated():
    rng = np.random.default_rng(3)
    rots = [Rotation.from_rotvec(rng.normal(size=3)) for _ in range(6)]
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    phi = 1.234
    out = A.apply_symmetry_axis(rots, axis, phi)
    spin = Rotation.from_axis_angle(axis, phi)
    for i in range(5):
        rel_src = rots[i].inverse().multiply(rots[i + 1])
        rel_new = out[i].inverse().multiply(out[i + 1])
        conj = spin.inverse().multiply(rel_src).multiply(spin)
        assert rel_new.angle_to(conj) < 1e-9
        # geodesic angle is conjugation-invariant
        assert abs(rel_new.angle_to(Rotation.identity())
                   - rel_src.angle_to(Rotation.identity())) < 1e-9


def test_symmetry_single_phi_per_trajectory():
    rots = [Rotation.rot_x(0.2 * i) for i in range(8)]
    out, phi = A.randomize_symmetry_axis(rots, np.array([0.0, 0.0, 1.0]),
                                         np.random.default_rng(4))
    assert -math.pi <= phi <= math.pi
    spin = Rotation.rot_z(phi)
    for a, b in zip(rots, out):
        assert a.multiply(spin).angle_to(b) < 1e-12


# --- resample ---------------------------------------------------------------

def test_resample_same_length_identity():
    traj = approach_traj(n=20)
    out = A.resample(traj, 20)
    for a, b in zip(traj.frames, out.frames):
        assert np.array_equal(a.wrist.to_quat7(), b.wrist.to_quat7())
        assert np.array_equal(a.object.to_quat7(), b.object.to_quat7())
        assert np.array_equal(a.hand, b.hand)


def test_resample_two_frames_geodesic():
    f0 = HoiFrame(Pose(np.zeros(3)), Pose.identity(), np.zeros((25, 3)))
    f1 = HoiFrame(Pose(np.array([1.0, 0, 0]), Rotation.rot_z(1.0)),
                  Pose.identity(), np.ones((25, 3)))
    out = A.resample(HoiTrajectory([f0, f1]), 220)
    assert out.horizon == 220
    assert np.array_equal(out.frames[0].wrist.to_quat7(), f0.wrist.to_quat7())
    assert np.array_equal(out.frames[-1].wrist.to_quat7(), f1.wrist.to_quat7())
    # constant-speed straight line
    xs = [fr.wrist.position[0] for fr in out.frames]
    assert np.allclose(xs, np.linspace(0, 1, 220), atol=1e-12)


def test_resample_knot_recovery():
    traj = approach_traj(n=12)
    up = A.resample(traj, 12 + 11 * 9)  # knots land on the fine grid
    down_idx = [i * (up.horizon - 1) // 11 for i in range(12)]
    for src_i, up_i in zip(range(12), down_idx):
        dp, dr = pose_distance(traj.frames[src_i].wrist, up.frames[up_i].wrist)
        assert dp < 1e-9 and dr < 1e-9
        assert np.allclose(traj.frames[src_i].hand, up.frames[up_i].hand, atol=1e-9)


def test_resample_too_short():
    f = HoiFrame(Pose.identity(), Pose.identity(), np.zeros((25, 3)))
    with pytest.raises(TooShort):
        A.resample(HoiTrajectory([f]), 220)


# --- full pipeline ----------------------------------------------------------

def test_augment_counts():
    traj = approach_traj()
    cfg = A.AugmentConfig(contact_threshold=0.2, samples_per_demo=43)
    outs, params = A.augment_demo(traj, cfg, base_seed=11)
    assert len(outs) == 43
    assert 7 * 43 == 301  # 7 demos x 43 samples ~ 300 per task
    for t in outs:
        assert t.horizon == 220


def test_augment_zero_ranges_reproduces_original():
    traj = approach_traj(t_contact=8)
    cfg = A.AugmentConfig(contact_threshold=0.2, xy_range=0.0, yaw_range=0.0,
                          samples_per_demo=1)
    outs, params = A.augment_demo(traj, cfg, base_seed=0)
    out = outs[0]
    t_c = params[0].t_c
    # manual pipeline without perturbation
    manip = traj.frames[t_c:]
    reach = A.regenerate_reach(traj.frames[0].wrist, traj.frames[0].hand,
                               manip[0], params[0].n_reach + 1)
    want = A.resample(HoiTrajectory(reach[:-1] + manip, traj.task_name, traj.dt), 220)
    for a, b in zip(want.frames, out.frames):
        assert np.array_equal(a.wrist.to_quat7(), b.wrist.to_quat7())
        assert np.array_equal(a.object.to_quat7(), b.object.to_quat7())
        assert np.array_equal(a.hand, b.hand)


def test_augment_frame0_is_canonical_start():
    traj = approach_traj()
    canon = Pose(np.array([0.1, -0.1, 0.5]), Rotation.rot_y(0.3))
    hand = np.full((25, 3), 0.02)
    cfg = A.AugmentConfig(contact_threshold=0.2, canonical_wrist=canon,
                          canonical_hand=hand, samples_per_demo=5)
    outs, _ = A.augment_demo(traj, cfg, base_seed=3)
    for t in outs:
        dp, dr = pose_distance(t.frames[0].wrist, canon)
        assert dp < 1e-9 and dr < 1e-9
        assert np.allclose(t.frames[0].hand, hand, atol=1e-9)


def test_augment_initial_object_shifted_by_d():
    traj = approach_traj()
    cfg = A.AugmentConfig(contact_threshold=0.2, samples_per_demo=8)
    outs, params = A.augment_demo(traj, cfg, base_seed=5)
    t_c = params[0].t_c
    p0 = traj.frames[t_c].object.position
    for t, p in zip(outs, params):
        got = t.frames[0].object.position
        assert np.allclose(got[:2], p0[:2] + p.d, atol=1e-9)
        assert abs(got[2] - p0[2]) < 1e-9  # z untouched


def test_augment_relation_preserved_at_knots():
    # build so that reach + manip - 1 == target: every output frame is a knot
    n, t_contact = 20, 8
    traj = approach_traj(n=n, t_contact=t_contact)
    t_c = A.detect_contact_frame(traj, 0.2)
    horizon = t_c + (n - t_c)  # n_reach = t_c reach frames then manip
    cfg = A.AugmentConfig(contact_threshold=0.2, target_horizon=horizon,
                          samples_per_demo=6,
                          symmetry_axis=np.array([0.0, 0.0, 1.0]))
    outs, params = A.augment_demo(traj, cfg, base_seed=9)
    for t, p in zip(outs, params):
        assert t.horizon == horizon
        for k in range(t_c, n):  # manipulation phase
            src = traj.frames[k]
            new = t.frames[k]
            want = compose(inverse(src.object), src.wrist)
            got = compose(inverse(new.object), new.wrist)
            dp, dr = pose_distance(want, got)
            assert dp < 1e-9 and dr < 1e-9


def test_augment_deterministic_per_seed():
    traj = approach_traj()
    cfg = A.AugmentConfig(contact_threshold=0.2, samples_per_demo=4)
    a, pa = A.augment_demo(traj, cfg, base_seed=21)
    b, pb = A.augment_demo(traj, cfg, base_seed=21)
    for x, y in zip(a, b):
        for fx, fy in zip(x.frames, y.frames):
            assert np.array_equal(fx.wrist.to_quat7(), fy.wrist.to_quat7())
    assert all(p.theta == q.theta for p, q in zip(pa, pb))


def test_manifest_roundtrip(tmp_path):
    traj = approach_traj()
    cfg = A.AugmentConfig(contact_threshold=0.2, samples_per_demo=3,
                          symmetry_axis=np.array([0.0, 0.0, 1.0]))
    _, params = A.augment_demo(traj, cfg, base_seed=2)
    p = tmp_path / "m.aug.json"
    A.save_manifest(str(p), params)
    back = A.load_manifest(str(p))
    for x, y in zip(params, back):
        assert x.seed == y.seed and x.theta == y.theta
        assert np.array_equal(x.d, y.d)
        assert x.phi == y.phi and x.t_c == y.t_c and x.n_reach == y.n_reach
