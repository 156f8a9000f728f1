"""Feature codec, normalization, splitting, embeddings, and trajectory files."""

import numpy as np
import pytest

from hoikit import data as D
from hoikit.errors import DatasetTooSmall, EmptyDataset, UnknownTask, WrongDimensions
from hoikit.geom import Pose, Rotation, pose_distance


def make_traj(rng, T=12, task="pick up the cup", dt=0.05):
    frames = []
    for _ in range(T):
        frames.append(D.HoiFrame(
            Pose(rng.normal(size=3), Rotation.from_rotvec(rng.normal(size=3))),
            Pose(rng.normal(size=3), Rotation.from_rotvec(rng.normal(size=3))),
            rng.normal(size=(25, 3)) * 0.05,
        ))
    return D.HoiTrajectory(frames, task, dt)


# --- feature codec ----------------------------------------------------------

def test_identity_frame_encoding():
    fr = D.HoiFrame(Pose.identity(), Pose.identity(), np.zeros((25, 3)))
    row = D.encode_frame(fr)
    expect = np.zeros(93)
    expect[3], expect[7] = 1.0, 1.0       # wrist rot6d of identity
    expect[12], expect[16] = 1.0, 1.0     # object rot6d of identity
    assert np.array_equal(row, expect)


def test_row_width_is_93():
    rng = np.random.default_rng(0)
    f = D.encode_features(make_traj(rng, T=7))
    assert f.shape == (7, 93)


def test_codec_roundtrip_poses_and_keypoints():
    rng = np.random.default_rng(1)
    traj = make_traj(rng, T=9)
    back = D.decode_features(D.encode_features(traj), traj.task_name, traj.dt)
    for a, b in zip(traj.frames, back.frames):
        dp, dr = pose_distance(a.wrist, b.wrist)
        assert dp < 1e-9 and dr < 1e-9
        dp, dr = pose_distance(a.object, b.object)
        assert dp < 1e-9 and dr < 1e-9
        assert np.array_equal(a.hand, b.hand)  # keypoints pass through bit-exact


def test_encode_decode_encode_fixed_point():
    rng = np.random.default_rng(2)
    f = D.encode_features(make_traj(rng, T=5))
    f2 = D.encode_features(D.decode_features(f))
    assert np.allclose(f, f2, atol=1e-12)


def test_wrong_keypoint_count_raises():
    fr = D.HoiFrame(Pose.identity(), Pose.identity(), np.zeros((10, 3)))
    with pytest.raises(WrongDimensions):
        D.encode_frame(fr)


def test_decode_rejects_bad_width():
    with pytest.raises(WrongDimensions):
        D.decode_features(np.zeros((4, 92)))


# --- normalization ----------------------------------------------------------

def test_norm_stats_zero_mean_unit_std():
    rng = np.random.default_rng(3)
    mats = [D.encode_features(make_traj(rng)) for _ in range(4)]
    stats = D.fit_norm_stats(mats)
    stacked = np.concatenate([D.normalize(m, stats) for m in mats])
    live = stats.std > D.STD_FLOOR
    assert np.all(np.abs(stacked.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(stacked.std(axis=0)[live] - 1.0) < 1e-6)


def test_constant_column_clamped_to_floor():
    m = np.zeros((10, 93))
    m[:, 5] = 2.5  # constant, nonzero
    stats = D.fit_norm_stats([m])
    assert stats.std[5] == D.STD_FLOOR
    assert np.all(D.normalize(m, stats)[:, 5] == 0.0)


def test_two_sample_column():
    m = np.zeros((2, 93))
    m[0, 0], m[1, 0] = 0.0, 2.0
    stats = D.fit_norm_stats([m])
    assert stats.mean[0] == 1.0
    z = D.normalize(m, stats)
    assert np.allclose(z[:, 0], [-1.0, 1.0])


def test_normalize_roundtrip():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(30, 93))
    stats = D.fit_norm_stats([m])
    assert np.allclose(D.denormalize(D.normalize(m, stats), stats), m, atol=1e-9)


def test_stats_order_independent():
    rng = np.random.default_rng(5)
    mats = [rng.normal(size=(8, 93)) for _ in range(5)]
    a = D.fit_norm_stats(mats)
    b = D.fit_norm_stats(mats[::-1])
    assert np.allclose(a.mean, b.mean, atol=1e-12)
    assert np.allclose(a.std, b.std, atol=1e-12)


def test_empty_dataset_raises():
    with pytest.raises(EmptyDataset):
        D.fit_norm_stats([])


# --- splitting --------------------------------------------------------------

def test_split_100_items():
    train, val = D.split_dataset(list(range(100)), seed=1)
    assert len(train) == 95 and len(val) == 5
    assert sorted(train + val) == list(range(100))


def test_split_two_items():
    train, val = D.split_dataset([10, 20], seed=0)
    assert len(train) == 1 and len(val) == 1
    assert sorted(train + val) == [10, 20]


def test_split_deterministic():
    items = list(range(40))
    assert D.split_dataset(items, seed=7) == D.split_dataset(items, seed=7)
    # a different seed reshuffles (40 items: collision vanishingly unlikely)
    assert D.split_dataset(items, seed=7) != D.split_dataset(items, seed=8)


def test_split_too_small():
    with pytest.raises(DatasetTooSmall):
        D.split_dataset([1], seed=0)


# --- embeddings -------------------------------------------------------------

def test_stub_embedding_deterministic_and_unit():
    a = D.stub_embedding("pick up and hammer")
    b = D.stub_embedding("pick up and hammer")
    assert np.array_equal(a, b)
    assert a.shape == (384,)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-6


def test_stub_embeddings_distinct_across_tasks():
    names = ["hammering", "stacking", "pouring", "drill-and-place", "functional grasp"]
    vecs = [D.stub_embedding(n) for n in names]
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            assert abs(float(vecs[i] @ vecs[j])) < 0.9


def test_sidecar_lookup_bit_exact():
    u = D.stub_embedding("x")
    table = {"x": u.copy()}
    out = D.embed_task("x", sidecar=table)
    assert np.array_equal(out, u)


def test_unknown_task_with_stub_disabled():
    with pytest.raises(UnknownTask):
        D.embed_task("nope", sidecar={}, allow_stub=False)


def test_condition_from_trajectory():
    rng = np.random.default_rng(6)
    traj = make_traj(rng, T=4)
    cond = D.condition_from(traj, D.stub_embedding(traj.task_name))
    assert cond.o0_vector().shape == (9,)
    assert np.array_equal(cond.o0_position, traj.frames[0].object.position)


def test_condition_rejects_unnormalized_embedding():
    with pytest.raises(WrongDimensions):
        D.TaskCondition(np.ones(384), np.zeros(3), np.zeros(6))


# --- file I/O ---------------------------------------------------------------

def test_trajectory_file_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    traj = make_traj(rng, T=6, task="pour water", dt=0.04)
    p = tmp_path / "demo.hoi.jsonl"
    D.save_trajectory(str(p), traj)
    back = D.load_trajectory(str(p))
    assert back.task_name == "pour water"
    assert back.dt == 0.04
    assert back.horizon == 6
    for a, b in zip(traj.frames, back.frames):
        assert np.array_equal(a.hand, b.hand)
        assert np.array_equal(a.wrist.to_quat7(), b.wrist.to_quat7())


def test_trajectory_file_header_first_line(tmp_path):
    import json
    traj = D.HoiTrajectory(
        [D.HoiFrame(Pose.identity(), Pose.identity(), np.zeros((25, 3)))],
        "stack", 0.05)
    p = tmp_path / "t.hoi.jsonl"
    D.save_trajectory(str(p), traj)
    lines = p.read_text().splitlines()
    header = json.loads(lines[0])
    assert header == {"task": "stack", "dt": 0.05, "K": 25}
    frame = json.loads(lines[1])
    assert set(frame) == {"w", "o", "h"}
    assert len(frame["w"]) == 7 and len(frame["o"]) == 7
    assert len(frame["h"]) == 25 and len(frame["h"][0]) == 3


def test_load_dataset_lexicographic(tmp_path):
    rng = np.random.default_rng(8)
    for name, task in [("b.hoi.jsonl", "two"), ("a.hoi.jsonl", "one")]:
        D.save_trajectory(str(tmp_path / name), make_traj(rng, T=3, task=task))
    out = D.load_dataset([str(tmp_path / "b.hoi.jsonl"), str(tmp_path / "a.hoi.jsonl")])
    assert [t.task_name for t in out] == ["one", "two"]


def test_embeddings_file_roundtrip(tmp_path):
    table = {"a": D.stub_embedding("a"), "b": D.stub_embedding("b")}
    p = tmp_path / "tasks.emb.json"
    D.save_embeddings(str(p), table)
    back = D.load_embeddings(str(p))
    assert set(back) == {"a", "b"}
    assert np.array_equal(back["a"], table["a"])  # json float repr round-trips


def test_norm_stats_file_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    stats = D.fit_norm_stats([rng.normal(size=(20, 93))])
    p = tmp_path / "s.norm.json"
    D.save_norm_stats(str(p), stats)
    back = D.load_norm_stats(str(p))
    assert np.array_equal(back.mean, stats.mean)
    assert np.array_equal(back.std, stats.std)
