"""End-to-end CLI tests with click's runner: every verb, config resolution,
exit codes, and output determinism."""

import hashlib
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from hoikit import calib as calib_mod
from hoikit import control as control_mod
from hoikit import data as data_mod
from hoikit import geom, nn, prior
from hoikit.cli import cli
from hoikit.geom import Pose, Rotation

runner = CliRunner()


def invoke(*args, **kwargs):
    return runner.invoke(cli, [str(a) for a in args],
                         catch_exceptions=False, **kwargs)


def _sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def make_demo(seed: int, n: int = 60) -> data_mod.HoiTrajectory:
    rng = np.random.default_rng(seed)
    obj0 = np.array([0.45, 0.05 * seed, 0.10])
    kp = rng.normal(size=(25, 3)) * 0.02 + np.array([0.0, 0.05, 0.0])
    frames = []
    for t in range(n):
        s = t / (n - 1)
        reach = min(1.0, 2.5 * s)
        wrist_p = ((1 - reach) * np.array([0.1, 0.0, 0.4])
                   + reach * (obj0 + [0.0, 0.0, 0.06]))
        obj_p = obj0 + np.array([0.15, 0.1, 0.05]) * max(0.0, s - 0.4) ** 2
        frames.append(data_mod.HoiFrame(
            data_mod.Pose(wrist_p + obj_p - obj0,
                          Rotation.from_rotvec([0.0, 0.3 * s, 0.2 * s])),
            data_mod.Pose(obj_p, Rotation.rot_z(0.5 * max(0.0, s - 0.4))),
            kp + 0.01 * math.sin(3 * s)))
    return data_mod.HoiTrajectory(frames, "pick", 0.05)


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("demos")
    for k in range(3):
        data_mod.save_trajectory(str(d / f"demo{k}.hoi.jsonl"), make_demo(k))
    return d


@pytest.fixture(scope="module")
def aug_dir(tmp_path_factory, demo_dir):
    d = tmp_path_factory.mktemp("aug")
    res = invoke("--out", d, "--seed", 1, "augment",
                 *sorted(demo_dir.glob("*.hoi.jsonl")),
                 "--samples-per-demo", 6, "--horizon", 40)
    assert res.exit_code == 0, res.output
    return d


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, aug_dir):
    """Toy AE + flow trained for a couple of epochs through the CLI."""
    d = tmp_path_factory.mktemp("run")
    res = invoke("--out", d, "--seed", 3, "--preset", "toy", "train", "ae",
                 aug_dir, "--epochs", 2)
    assert res.exit_code == 0, res.output
    res = invoke("--out", d, "--seed", 3, "--preset", "toy", "train", "flow",
                 aug_dir, "--epochs", 2)
    assert res.exit_code == 0, res.output
    return d


# ---------------------------------------------------------------- calibrate

def _write_calib(path, n=20, seed=0):
    rng = np.random.default_rng(seed)
    truth = Pose(np.array([0.01, -0.02, 0.03]),
                 Rotation.from_rotvec([0.05, 0.1, -0.04]))
    samples = []
    for _ in range(n):
        p_s = rng.uniform(-0.2, 0.2, 3)
        p_w = truth.rotation.apply(p_s) + truth.position
        t_cw = Pose(rng.uniform(-0.5, 0.5, 3),
                    Rotation.from_rotvec(rng.normal(size=3) * 0.3))
        p_c = t_cw.rotation.apply(p_w) + t_cw.position
        samples.append(calib_mod.CalibSample(p_s, p_c, t_cw))
    calib_mod.save_samples(str(path), samples)
    return truth


def test_calibrate_clean_and_deterministic(tmp_path):
    sfile = tmp_path / "s.calib.json"
    truth = _write_calib(sfile)
    out = tmp_path / "o1"
    res = invoke("--out", out, "calibrate", sfile)
    assert res.exit_code == 0, res.output
    assert "rmse" in res.output
    got = calib_mod.load_result(str(out / "calibration.json"))
    assert got.rmse < 1e-9
    assert np.linalg.norm(got.T_W_S.position - truth.position) < 1e-9

    out2 = tmp_path / "o2"
    invoke("--out", out2, "calibrate", sfile)
    assert _sha(out / "calibration.json") == _sha(out2 / "calibration.json")


def test_calibrate_too_few_exits_2(tmp_path):
    sfile = tmp_path / "few.calib.json"
    _write_calib(sfile, n=2)
    res = invoke("--out", tmp_path, "calibrate", sfile)
    assert res.exit_code == 2
    assert "error:" in res.output


# ---------------------------------------------------------------- augment

def test_augment_output_counts(aug_dir):
    files = sorted(aug_dir.glob("*_aug*.hoi.jsonl"))
    assert len(files) == 18
    manifests = sorted(aug_dir.glob("*.aug.json"))
    assert len(manifests) == 3
    traj = data_mod.load_trajectory(str(files[0]))
    assert len(traj.frames) == 40


def test_augment_rerun_identical(tmp_path, demo_dir):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        res = invoke("--out", d, "--seed", 1, "augment",
                     demo_dir / "demo0.hoi.jsonl", "--samples-per-demo", 3,
                     "--horizon", 40)
        assert res.exit_code == 0, res.output
    for f in sorted(a.glob("*")):
        assert _sha(f) == _sha(b / f.name), f.name


def test_augment_no_contact_exits_2(tmp_path):
    # wrist never approaches the object
    frames = [data_mod.HoiFrame(
        Pose(np.array([1.0, 1.0, 1.0]), Rotation.identity()),
        Pose(np.zeros(3), Rotation.identity()),
        np.zeros((25, 3))) for _ in range(30)]
    bad = tmp_path / "far.hoi.jsonl"
    data_mod.save_trajectory(str(bad), data_mod.HoiTrajectory(frames, "x", 0.05))
    res = invoke("--out", tmp_path, "augment", bad, "--samples-per-demo", 2)
    assert res.exit_code == 2
    assert "far.hoi.jsonl" in res.output


# ---------------------------------------------------------------- train

def test_train_outputs(run_dir):
    for name in ("ae.ckpt.json", "flow.ckpt.json", "norm.stats.json",
                 "ae_curves.csv", "flow_curves.csv", "ae_curves.png",
                 "flow_curves.png"):
        assert (run_dir / name).exists(), name
    first = (run_dir / "ae_curves.csv").read_text().splitlines()
    assert first[0].startswith("# schema=")
    assert first[1].split(",")[0] == "epoch"


def test_train_deterministic(tmp_path, aug_dir):
    hashes = []
    for sub in ("r1", "r2"):
        d = tmp_path / sub
        res = invoke("--out", d, "--seed", 11, "--preset", "toy", "train",
                     "ae", aug_dir, "--epochs", 1)
        assert res.exit_code == 0, res.output
        hashes.append(_sha(d / "ae.ckpt.json"))
    assert hashes[0] == hashes[1]


def test_train_flow_without_ae_exits_2(tmp_path, aug_dir):
    res = invoke("--out", tmp_path / "empty", "--preset", "toy", "train",
                 "flow", aug_dir, "--epochs", 1)
    assert res.exit_code == 2
    assert "autoencoder checkpoint" in res.output


# ---------------------------------------------------------------- synthesize

def test_synthesize_schema_and_determinism(tmp_path, run_dir):
    args = ("--seed", 5, "synthesize", "--ae", run_dir / "ae.ckpt.json",
            "--flow", run_dir / "flow.ckpt.json",
            "--stats", run_dir / "norm.stats.json",
            "--task", "pick", "--o0", "0.45,0,0.1,0", "--steps", 3)
    f1, f2 = tmp_path / "s1.hoi.jsonl", tmp_path / "s2.hoi.jsonl"
    for f in (f1, f2):
        res = invoke("--out", tmp_path, *args, "--out-file", f)
        assert res.exit_code == 0, res.output
    assert _sha(f1) == _sha(f2)
    traj = data_mod.load_trajectory(str(f1))
    assert len(traj.frames) == 40          # toy horizon
    assert traj.frames[0].hand.shape == (25, 3)


def test_synthesize_unknown_task_exits_2(tmp_path, run_dir):
    side = tmp_path / "emb.json"
    data_mod.save_embeddings(str(side), {"known": np.ones(384) / math.sqrt(384.0)})
    res = invoke("--out", tmp_path, "synthesize",
                 "--ae", run_dir / "ae.ckpt.json",
                 "--flow", run_dir / "flow.ckpt.json",
                 "--stats", run_dir / "norm.stats.json",
                 "--task", "mystery", "--embeddings", side, "--no-stub",
                 "--steps", 2)
    assert res.exit_code == 2


# ---------------------------------------------------------------- sweep

CANON = "0.1,0,0.4,1,0,0,0"


def test_sweep_requires_canonical(tmp_path, run_dir):
    res = invoke("--out", tmp_path, "sweep", "--ae", run_dir / "ae.ckpt.json",
                 "--flow", run_dir / "flow.ckpt.json",
                 "--stats", run_dir / "norm.stats.json", "--steps", 2)
    assert res.exit_code == 2
    assert "canonical" in res.output


def test_sweep_strided_grid(tmp_path, run_dir):
    res = invoke("--out", tmp_path, "--seed", 7, "sweep",
                 "--ae", run_dir / "ae.ckpt.json",
                 "--flow", run_dir / "flow.ckpt.json",
                 "--stats", run_dir / "norm.stats.json",
                 "--task", "pick", "--o0", "0.45,0,0.1,0",
                 "--canonical", CANON, "--steps", 2, "--stride", 10)
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# schema=x,y,yaw_deg,")
    assert len(lines) == 2 + 5 * 5 * 13    # 325 cells
    summary = json.loads((tmp_path / "sweep_summary.json").read_text())
    assert summary["cells"] == 325
    assert (tmp_path / "sweep_pos_err.png").exists()
    assert (tmp_path / "sweep_rot_err.png").exists()


def test_sweep_zero_cell_consistency(tmp_path, run_dir):
    """Reproduce the whole strided grid library-side from the seed alone and
    require the unperturbed cell's CSV row to match bit for bit."""
    seed, steps, stride = 7, 2, 10
    res = invoke("--out", tmp_path, "--seed", seed, "sweep",
                 "--ae", run_dir / "ae.ckpt.json",
                 "--flow", run_dir / "flow.ckpt.json",
                 "--stats", run_dir / "norm.stats.json",
                 "--task", "pick", "--o0", "0.45,0,0.1,0",
                 "--canonical", CANON, "--steps", steps, "--stride", stride)
    assert res.exit_code == 0, res.output
    rows = (tmp_path / "sweep.csv").read_text().splitlines()[2:]
    cells = [r.split(",") for r in rows]
    idx = next(i for i, c in enumerate(cells)
               if float(c[0]) == 0.0 and float(c[1]) == 0.0
               and float(c[2]) == 0.0)
    # x-major, then y, then yaw ordering puts the zero cell mid-grid
    assert idx == (2 * 5 + 2) * 13 + 6

    ae, _ = _load_ckpt(run_dir / "ae.ckpt.json", prior.TrajectoryAutoencoder)
    flow, _ = _load_ckpt(run_dir / "flow.ckpt.json", prior.LatentFlow)
    stats = data_mod.load_norm_stats(str(run_dir / "norm.stats.json"))
    u = data_mod.embed_task("pick")
    base = Pose(np.array([0.45, 0.0, 0.1]), Rotation.rot_z(0.0))
    xs = np.round(np.arange(-20, 21) * 0.01, 10)[::stride]
    yaws = np.arange(-30, 31, 5).astype(float)
    grid = [(x, y, yaw) for x in xs for y in xs for yaw in yaws]
    n = len(grid)
    o0_mat = np.empty((n, 9))
    for i, (x, y, yaw) in enumerate(grid):
        rot = Rotation.rot_z(math.radians(yaw)) * base.rotation
        o0_mat[i, :3] = base.position + [x, y, 0.0]
        o0_mat[i, 3:] = data_mod.rot6d_encode(rot)
    u_mat = np.repeat(u[None], n, axis=0)
    z0 = np.random.default_rng(seed).standard_normal((n, flow.preset.latent_dim))
    z1 = prior.heun_sample_cached(flow, u_mat, o0_mat, z0, steps=steps)
    with nn.no_grad():
        feats = ae.decode(nn.Tensor(z1)).data
    first = data_mod.denormalize(feats[idx], stats)[0]
    canon = Pose(np.array([0.1, 0.0, 0.4]), Rotation.identity())
    pos_err = float(np.linalg.norm(first[:3] - canon.position))
    rot_err = math.degrees(
        data_mod.rot6d_decode(first[3:9]).angle_to(canon.rotation))
    assert float(cells[idx][3]) == pos_err
    assert float(cells[idx][4]) == rot_err


def _load_ckpt(path, ctor):
    state, meta = nn.load_checkpoint(str(path))
    model = ctor(prior.get_preset(meta["preset"]), np.random.default_rng(0))
    model.load_state_dict(state)
    return model, meta


def test_sweep_rerun_identical(tmp_path, run_dir):
    hashes = []
    for sub in ("s1", "s2"):
        d = tmp_path / sub
        res = invoke("--out", d, "--seed", 7, "sweep",
                     "--ae", run_dir / "ae.ckpt.json",
                     "--flow", run_dir / "flow.ckpt.json",
                     "--stats", run_dir / "norm.stats.json",
                     "--canonical", CANON, "--steps", 2, "--stride", 20)
        assert res.exit_code == 0, res.output
        hashes.append(_sha(d / "sweep.csv"))
    assert hashes[0] == hashes[1]


# ---------------------------------------------------------------- rollout

def _reachable_reference(tmp_path, n=8):
    """Reference whose wrist poses are FK images -> IK always converges."""
    stack = control_mod.default_stack()
    rng = np.random.default_rng(0)
    frames = []
    q = stack.arm.mid_q()
    kp = np.zeros((25, 3))
    kp[:, 1] = 0.05
    for i, ch in enumerate(stack.fingers):
        tip = control_mod.fk(ch, np.array([0.0, 0.4, 0.3, 0.2])).position
        kp[control_mod.FINGERTIP_KEYPOINTS[i]] = tip
    for t in range(n):
        q = np.clip(q + rng.normal(0, 0.02, 7), *stack.arm.limits())
        ee = control_mod.fk(stack.arm, q)
        frames.append(data_mod.HoiFrame(
            Pose(ee.position, ee.rotation),
            Pose(np.array([0.5, 0.0, 0.1]), Rotation.identity()), kp))
    path = tmp_path / "ref.hoi.jsonl"
    data_mod.save_trajectory(str(path), data_mod.HoiTrajectory(
        frames, "ref", 0.05))
    return path


def test_rollout_zero_policy(tmp_path):
    ref = _reachable_reference(tmp_path)
    res = invoke("--out", tmp_path, "rollout", ref, "--policy", "zero",
                 "--emit-commands")
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "rollout.csv").read_text().splitlines()
    assert lines[0].startswith("# schema=t,")
    rows = [ln.split(",") for ln in lines[2:]]
    assert len(rows) == 8
    for r in rows:
        assert float(r[4]) == 0.0 and float(r[5]) == 0.0 and float(r[6]) == 0.0
        assert r[8] == "1"                       # every IK step converged
        assert float(r[1]) < 1e-4                # wrist tracks the reference
    cmd_lines = (tmp_path / "commands_120hz.csv").read_text().splitlines()
    assert len(cmd_lines) == 2 + 6 * 7 + 1       # 6x upsample of 8 keyframes
    assert (tmp_path / "rollout_limits.csv").exists()
    assert (tmp_path / "rollout_errors.png").exists()


def test_rollout_constant_policy_saturates(tmp_path):
    # 0.02 m/s * 0.05 s = 1 mm per step once the EMA warms up, so 120 steps
    # comfortably pins the accumulated offset at the 0.10 m clip bound
    n = 120
    ref = _reachable_reference(tmp_path, n=n)
    pol = tmp_path / "pol.csv"
    rows = np.zeros((n, 18))
    rows[:, 0] = 1.0
    np.savetxt(pol, rows, delimiter=",")
    res = invoke("--out", tmp_path, "rollout", ref, "--policy", pol,
                 "--fail-fraction", 1.0)
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "rollout.csv").read_text().splitlines()[2:]
    d_pos = [float(ln.split(",")[4]) for ln in lines]
    assert max(d_pos) <= 0.10 + 1e-12
    assert d_pos[-1] == pytest.approx(0.10, abs=1e-12)
    assert d_pos[5] < d_pos[-1]
    steps_in = np.diff(d_pos)
    assert np.all(steps_in >= -1e-15)            # monotone accumulation
    assert np.max(steps_in) <= 0.02 * 0.05 + 1e-12


def test_rollout_policy_width_mismatch(tmp_path):
    ref = _reachable_reference(tmp_path)
    pol = tmp_path / "bad.csv"
    np.savetxt(pol, np.zeros((8, 5)), delimiter=",")
    res = invoke("--out", tmp_path, "rollout", ref, "--policy", pol)
    assert res.exit_code == 2
    assert "width" in res.output


# ---------------------------------------------------------------- metrics

def test_metrics_constant_pose(tmp_path):
    frames = [data_mod.HoiFrame(Pose(np.array([0.1, 0.2, 0.3]),
                                     Rotation.from_rotvec([0.1, 0, 0])),
                                Pose(np.zeros(3), Rotation.identity()),
                                np.zeros((25, 3))) for _ in range(12)]
    path = tmp_path / "const.hoi.jsonl"
    data_mod.save_trajectory(str(path), data_mod.HoiTrajectory(frames, "c", 0.05))
    res = invoke("--out", tmp_path, "metrics", path)
    assert res.exit_code == 0, res.output
    row = (tmp_path / "metrics.csv").read_text().splitlines()[2].split(",")
    assert float(row[1]) == 0.0 and float(row[2]) == 0.0


def test_metrics_matches_library(tmp_path, run_dir, aug_dir):
    f = sorted(aug_dir.glob("*_aug*.hoi.jsonl"))[0]
    res = invoke("--out", tmp_path, "metrics", f)
    assert res.exit_code == 0, res.output
    row = (tmp_path / "metrics.csv").read_text().splitlines()[2].split(",")
    traj = data_mod.load_trajectory(str(f))
    jp, jr = geom.rms_jerk(np.stack([fr.wrist.position for fr in traj.frames]),
                           [fr.wrist.rotation for fr in traj.frames], traj.dt)
    assert float(row[1]) == jp and float(row[2]) == jr


def test_metrics_malformed_exits_2(tmp_path):
    bad = tmp_path / "bad.hoi.jsonl"
    bad.write_text("{not json at all\n")
    res = invoke("--out", tmp_path, "metrics", bad)
    assert res.exit_code == 2


# ---------------------------------------------------------------- latents

def test_export_latents_width(tmp_path, run_dir, aug_dir):
    res = invoke("--out", tmp_path, "export-latents", aug_dir,
                 "--ae", run_dir / "ae.ckpt.json",
                 "--stats", run_dir / "norm.stats.json")
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "latents.csv").read_text().splitlines()
    width = len(lines[1].split(","))
    assert width == prior.TOY.latent_dim
    assert len(lines) == 2 + 18


# ---------------------------------------------------------------- dr-sample

def test_dr_sample_zero(tmp_path):
    res = invoke("--out", tmp_path, "dr-sample", "--n", 0)
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "dr_configs.json").read_text()) == []


def test_dr_sample_ranges_and_determinism(tmp_path):
    from hoikit.adapt import DR_RANGES
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for f in (a, b):
        res = invoke("--out", tmp_path, "--seed", 21, "dr-sample", "--n", 50,
                     "--out-file", f)
        assert res.exit_code == 0, res.output
    assert _sha(a) == _sha(b)
    for cfg in json.loads(a.read_text()):
        for k, (lo, hi) in DR_RANGES.items():
            assert lo <= cfg[k] <= hi


# ---------------------------------------------------------------- config

def test_config_file_resolution(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[global]\nseed = 77\nout = {}\n".format(tmp_path / "cfgout"))
    res = invoke("--config", cfg, "dr-sample", "--n", 1)
    assert res.exit_code == 0, res.output
    direct = invoke("--out", tmp_path / "d", "--seed", 77, "dr-sample", "--n", 1)
    assert direct.exit_code == 0
    assert (json.loads((tmp_path / "cfgout" / "dr_configs.json").read_text())
            == json.loads((tmp_path / "d" / "dr_configs.json").read_text()))


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[global]\nseed = 77\nout = {tmp_path / 'x'}\n")
    res = invoke("--config", cfg, "--seed", 78, "--out", tmp_path / "y",
                 "dr-sample", "--n", 1)
    assert res.exit_code == 0, res.output
    assert (tmp_path / "y" / "dr_configs.json").exists()
    got = json.loads((tmp_path / "y" / "dr_configs.json").read_text())
    want = invoke("--out", tmp_path / "z", "--seed", 78, "dr-sample", "--n", 1)
    assert want.exit_code == 0
    assert got == json.loads((tmp_path / "z" / "dr_configs.json").read_text())


def test_config_env_var(tmp_path):
    cfg = tmp_path / "env.ini"
    cfg.write_text(f"[global]\nseed = 5\nout = {tmp_path / 'envout'}\n")
    res = runner.invoke(cli, ["dr-sample", "--n", "1"],
                        env={"HOIKIT_CONFIG": str(cfg)},
                        catch_exceptions=False)
    assert res.exit_code == 0, res.output
    assert (tmp_path / "envout" / "dr_configs.json").exists()


def test_missing_config_exits_2(tmp_path):
    res = invoke("--config", tmp_path / "nope.ini", "dr-sample", "--n", 1)
    assert res.exit_code == 2
