"""Command-line harness wiring the pipeline end to end.

Verbs: calibrate, augment, train, synthesize, sweep, rollout, metrics,
export-latents, dr-sample.  Global flags (--config/--seed/--out/--preset/
--threads) resolve as flag > config file > built-in default; the config is
an INI file with one section per module, default path from $HOIKIT_CONFIG.

Exit codes: 0 success, 2 for domain/user-input errors, 1 for anything else.
Every command is deterministic given (config, seed); report commands write
schema-tagged CSVs and render companion PNG figures next to them.
"""

from __future__ import annotations

import configparser
import csv
import functools
import glob
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from .. import adapt as adapt_mod
from .. import augment as augment_mod
from .. import calib as calib_mod
from .. import control as control_mod
from .. import data as data_mod
from .. import geom, nn, prior
from ..errors import HoikitError
from ..geom import Pose, Rotation

DEFAULT_SWEEP_STEPS = prior.HEUN_STEPS
SWEEP_CHUNK = 4096
DECODE_BATCH = 512


class RunContext:
    """Resolved global options plus the parsed config file (may be None)."""

    def __init__(self, cfg: configparser.ConfigParser | None, seed: int,
                 out: str, preset: str, threads: int):
        self.cfg = cfg
        self.seed = seed
        self.out = out
        self.preset = preset
        self.threads = threads

    def opt(self, section: str, key: str, flag, default, cast=str):
        """flag > config > default."""
        if flag is not None:
            return flag
        if self.cfg is not None and self.cfg.has_option(section, key):
            raw = self.cfg.get(section, key)
            return cast(raw)
        return default

    def path(self, name: str) -> str:
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    raise SystemExit(2)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HoikitError as exc:
            _fail(str(exc))
    return wrapper


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _savefig(fig, path: str):
    # strip the Software chunk so reruns are byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None})


def _write_csv(path: str, cols: list[str], rows):
    with open(path, "w", newline="") as fh:
        fh.write("# schema=" + ",".join(cols) + "\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


def _read_policy_csv(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        _fail(f"{path}: malformed policy file ({exc})")


def _expand_datasets(paths: tuple[str, ...]) -> list[str]:
    out: list[str] = []
    for p in paths:
        if os.path.isdir(p):
            out.extend(sorted(glob.glob(os.path.join(p, "*.hoi.jsonl"))))
        else:
            out.append(p)
    if not out:
        _fail("no trajectory files found")
    return out


# ---------------------------------------------------------------- group

@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              envvar="HOIKIT_CONFIG", default=None,
              help="INI config file; flags override its values.")
@click.option("--seed", type=int, default=None, help="Master RNG seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory.")
@click.option("--preset", type=click.Choice(["toy", "paper"]), default=None)
@click.option("--threads", type=int, default=None,
              help="Worker threads for sweep/augment batches.")
@click.pass_context
def cli(ctx, config_path, seed, out, preset, threads):
    """Hand-object interaction synthesis and residual-control toolkit."""
    cfg = None
    if config_path is not None:
        if not os.path.exists(config_path):
            _fail(f"config file not found: {config_path}")
        cfg = configparser.ConfigParser()
        cfg.read(config_path)

    def gopt(key, flag, default, cast):
        if flag is not None:
            return flag
        if cfg is not None and cfg.has_option("global", key):
            return cast(cfg.get("global", key))
        return default

    ctx.obj = RunContext(
        cfg,
        seed=gopt("seed", seed, 0, int),
        out=gopt("out", out, ".", str),
        preset=gopt("preset", preset, "toy", str),
        threads=gopt("threads", threads, 1, int),
    )


# ---------------------------------------------------------------- calibrate

@cli.command()
@click.argument("samples", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-file", default=None, help="Result JSON path.")
@click.pass_obj
@_guarded
def calibrate(run: RunContext, samples, out_file):
    """Solve wrist-sensor extrinsics from paired point samples."""
    recs = calib_mod.load_samples(samples)
    result = calib_mod.irls_huber_refine(recs)
    out_file = out_file or run.path("calibration.json")
    calib_mod.save_result(out_file, result)
    n = len(result.inlier_mask)
    n_in = int(np.count_nonzero(result.inlier_mask))
    pose = result.T_W_S
    angle = math.degrees(pose.rotation.angle_to(Rotation.identity()))
    click.echo(f"calibration: rmse={result.rmse:.3e} m  "
               f"inliers={n_in}/{n}  iterations={result.iterations}")
    click.echo(f"T_W_S: t=({pose.position[0]:.4f}, {pose.position[1]:.4f}, "
               f"{pose.position[2]:.4f}) m  rot={angle:.3f} deg")
    click.echo(f"wrote {out_file}")


# ---------------------------------------------------------------- augment

def _augment_config(run: RunContext, samples_per_demo, xy_range, yaw_range,
                    horizon, symmetry_axis) -> augment_mod.AugmentConfig:
    axis = None
    raw_axis = run.opt("augment", "symmetry_axis", symmetry_axis, None)
    if raw_axis:
        axis = np.array([float(v) for v in raw_axis.split(",")])
    return augment_mod.AugmentConfig(
        xy_range=run.opt("augment", "xy_range", xy_range,
                         augment_mod.XY_RANGE, float),
        yaw_range=run.opt("augment", "yaw_range", yaw_range,
                          augment_mod.YAW_RANGE, float),
        target_horizon=run.opt("augment", "target_horizon", horizon,
                               augment_mod.TARGET_HORIZON, int),
        samples_per_demo=run.opt("augment", "samples_per_demo",
                                 samples_per_demo, 43, int),
        symmetry_axis=axis,
    )


@cli.command()
@click.argument("demos", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--samples-per-demo", type=int, default=None)
@click.option("--xy-range", type=float, default=None, help="Meters.")
@click.option("--yaw-range", type=float, default=None, help="Radians.")
@click.option("--horizon", type=int, default=None)
@click.option("--symmetry-axis", default=None,
              help="Object symmetry axis 'x,y,z' (off when omitted).")
@click.pass_obj
@_guarded
def augment(run: RunContext, demos, samples_per_demo, xy_range, yaw_range,
            horizon, symmetry_axis):
    """Expand demos into spatially randomized training trajectories."""
    cfg = _augment_config(run, samples_per_demo, xy_range, yaw_range, horizon,
                          symmetry_axis)

    def one_demo(item):
        d_idx, path = item
        traj = data_mod.load_trajectory(path)
        base_seed = run.seed + 65537 * d_idx   # disjoint per-demo streams
        try:
            trajs, params = augment_mod.augment_demo(traj, cfg, base_seed)
        except HoikitError as exc:
            raise HoikitError(f"{path}: {exc}") from exc
        return d_idx, path, trajs, params

    jobs = list(enumerate(demos))
    if run.threads > 1:
        with ThreadPoolExecutor(run.threads) as pool:
            results = list(pool.map(one_demo, jobs))
    else:
        results = [one_demo(j) for j in jobs]

    total = 0
    for d_idx, path, trajs, params in sorted(results):
        stem = os.path.basename(path).split(".")[0]
        for i, t in enumerate(trajs):
            data_mod.save_trajectory(run.path(f"{stem}_aug{i:03d}.hoi.jsonl"), t)
        augment_mod.save_manifest(run.path(f"{stem}.aug.json"), params)
        total += len(trajs)
    click.echo(f"augmented {len(demos)} demo(s) -> {total} trajectories "
               f"in {run.out}")


# ---------------------------------------------------------------- train

def _load_feats(paths: list[str], preset: prior.PriorPreset):
    trajs = data_mod.load_dataset(paths)
    feats = [data_mod.encode_features(t) for t in trajs]
    for p, f in zip(paths, feats):
        if f.shape[0] != preset.horizon:
            _fail(f"{p}: horizon {f.shape[0]} != preset horizon "
                  f"{preset.horizon}")
    return trajs, feats


def _conditions(trajs) -> tuple[np.ndarray, np.ndarray]:
    us, o0s = [], []
    for t in trajs:
        u = data_mod.embed_task(t.task_name)
        cond = data_mod.condition_from(t, u)
        us.append(u)
        o0s.append(cond.o0_vector())
    return np.stack(us), np.stack(o0s)


def _save_model(path: str, model, kind: str, preset_name: str, seed: int,
                stats_path: str | None = None):
    meta = {"kind": kind, "preset": preset_name, "seed": seed}
    if stats_path:
        meta["stats"] = os.path.basename(stats_path)
    nn.save_checkpoint(path, model.state_dict(), meta)


def _load_model(path: str, expect_kind: str):
    if not os.path.exists(path):
        _fail(f"missing {expect_kind} checkpoint: {path}")
    state, meta = nn.load_checkpoint(path)
    if meta.get("kind") != expect_kind:
        _fail(f"{path} is a '{meta.get('kind')}' checkpoint, "
              f"expected '{expect_kind}'")
    preset = prior.get_preset(meta["preset"])
    ctor = {"ae": prior.TrajectoryAutoencoder, "flow": prior.LatentFlow,
            "dit-full": prior.TrajectoryFlow}[expect_kind]
    model = ctor(preset, np.random.default_rng(0))
    model.load_state_dict(state)
    return model, meta


def _plot_curves(history: list[dict], png_path: str, title: str):
    if not history:
        return
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h["epoch"] for h in history]
    for key in history[0]:
        if key == "epoch" or not isinstance(history[0][key], float):
            continue
        ax.plot(epochs, [h[key] for h in history], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _savefig(fig, png_path)
    plt.close(fig)


@cli.command()
@click.argument("kind", type=click.Choice(["ae", "flow", "dit-full"]))
@click.argument("data", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--epochs", type=int, default=None)
@click.option("--ae-checkpoint", type=click.Path(dir_okay=False), default=None,
              help="Frozen encoder for flow training.")
@click.option("--val-fraction", type=float, default=0.05)
@click.pass_obj
@_guarded
def train(run: RunContext, kind, data, epochs, ae_checkpoint, val_fraction):
    """Fit the trajectory autoencoder, the latent flow, or the full-trajectory
    flow ablation on a dataset of .hoi.jsonl files."""
    preset = prior.get_preset(run.preset)
    epochs = run.opt("train", "epochs", epochs, None, int)
    paths = _expand_datasets(data)
    trajs, feats = _load_feats(paths, preset)

    idx_train, idx_val = data_mod.split_dataset(
        list(range(len(feats))), 1.0 - val_fraction, seed=run.seed)
    stats = data_mod.fit_norm_stats([feats[i] for i in idx_train])
    stats_path = run.path("norm.stats.json")
    data_mod.save_norm_stats(stats_path, stats)
    norm = np.stack([data_mod.normalize(f, stats) for f in feats])
    tr, va = norm[idx_train], norm[idx_val]
    rng = np.random.default_rng(run.seed)

    if kind == "ae":
        model = prior.TrajectoryAutoencoder(preset, rng)
        history = prior.train_ae(model, tr, va if len(va) else None,
                                 epochs=epochs, seed=run.seed)
        ckpt = run.path("ae.ckpt.json")
    elif kind == "flow":
        ae_path = ae_checkpoint or run.path("ae.ckpt.json")
        if not os.path.exists(ae_path):
            _fail(f"flow training requires an autoencoder checkpoint "
                  f"(looked for {ae_path})")
        ae, _ = _load_model(ae_path, "ae")
        u, o0 = _conditions(trajs)
        z = prior.encode_dataset(ae, norm)
        model = prior.LatentFlow(preset, rng)
        val = (z[idx_val], u[idx_val], o0[idx_val]) if len(idx_val) else None
        history = prior.train_flow(model, z[idx_train], u[idx_train],
                                   o0[idx_train], val=val, epochs=epochs,
                                   seed=run.seed)
        ckpt = run.path("flow.ckpt.json")
    else:
        u, o0 = _conditions(trajs)
        model = prior.TrajectoryFlow(preset, rng)
        history = prior.train_trajectory_flow(model, tr, u[idx_train],
                                              o0[idx_train], epochs=epochs,
                                              seed=run.seed)
        ckpt = run.path("dit.ckpt.json")

    _save_model(ckpt, model, kind, run.preset, run.seed, stats_path)
    curves = run.path(f"{kind.replace('-', '_')}_curves.csv")
    prior.save_history_csv(curves, history)
    _plot_curves(history, curves.replace(".csv", ".png"),
                 f"{kind} training ({run.preset})")
    last = history[-1] if history else {}
    click.echo(f"trained {kind} on {len(feats)} trajectories "
               f"({len(idx_train)} train / {len(idx_val)} val)")
    if last:
        click.echo("final: " + "  ".join(
            f"{k}={v:.5f}" for k, v in last.items()
            if isinstance(v, float)))
    click.echo(f"wrote {ckpt}")


# ---------------------------------------------------------------- synthesize

def _parse_o0(text: str) -> Pose:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        _fail("--o0 must be 'x,y,z,yaw_deg'")
    return Pose(np.array(vals[:3]), Rotation.rot_z(math.radians(vals[3])))


def _condition(task: str, o0: Pose, embeddings: str | None,
               allow_stub: bool) -> data_mod.TaskCondition:
    sidecar = data_mod.load_embeddings(embeddings) if embeddings else None
    u = data_mod.embed_task(task, sidecar, allow_stub=allow_stub)
    return data_mod.TaskCondition(u, o0.position,
                                  data_mod.rot6d_encode(o0.rotation))


@cli.command()
@click.option("--ae", "ae_path", default=None)
@click.option("--flow", "flow_path", default=None)
@click.option("--stats", "stats_path", default=None)
@click.option("--task", default="pick")
@click.option("--o0", default="0,0,0,0", help="Initial object pose "
              "'x,y,z,yaw_deg'.")
@click.option("--steps", type=int, default=None, help="Flow ODE steps.")
@click.option("--embeddings", type=click.Path(dir_okay=False), default=None,
              help="Task embedding sidecar (.json).")
@click.option("--no-stub", is_flag=True,
              help="Fail on tasks missing from the sidecar.")
@click.option("--out-file", default=None)
@click.pass_obj
@_guarded
def synthesize(run: RunContext, ae_path, flow_path, stats_path, task, o0,
               steps, embeddings, no_stub, out_file):
    """Sample one reference trajectory for a task and object placement."""
    ae, _ = _load_model(ae_path or run.path("ae.ckpt.json"), "ae")
    flow, _ = _load_model(flow_path or run.path("flow.ckpt.json"), "flow")
    stats = data_mod.load_norm_stats(stats_path or run.path("norm.stats.json"))
    steps = run.opt("synthesize", "steps", steps, prior.HEUN_STEPS, int)
    cond = _condition(task, _parse_o0(o0), embeddings, not no_stub)
    traj = prior.synthesize(ae, flow, stats, cond, seed=run.seed, steps=steps,
                            task_name=task)
    out_file = out_file or run.path("synth.hoi.jsonl")
    data_mod.save_trajectory(out_file, traj)
    click.echo(f"synthesized {len(traj.frames)} frames "
               f"(task={task}, seed={run.seed}) -> {out_file}")


# ---------------------------------------------------------------- sweep

def _parse_pose7(text: str) -> Pose:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 7:
        _fail("pose must be 'px,py,pz,qw,qx,qy,qz'")
    return Pose(np.array(vals[:3]), Rotation(np.array(vals[3:])))


def _sweep_grid(stride: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs = np.round(np.arange(-20, 21) * 0.01, 10)[::stride]
    ys = np.round(np.arange(-20, 21) * 0.01, 10)[::stride]
    yaws = np.arange(-30, 31, 5).astype(float)   # degrees; stride not applied
    return xs, ys, yaws


@cli.command()
@click.option("--ae", "ae_path", default=None)
@click.option("--flow", "flow_path", default=None)
@click.option("--stats", "stats_path", default=None)
@click.option("--task", default="pick")
@click.option("--o0", default="0,0,0,0", help="Canonical object pose "
              "'x,y,z,yaw_deg' the grid perturbs.")
@click.option("--canonical", default=None,
              help="Canonical wrist pose 'px,py,pz,qw,qx,qy,qz'.")
@click.option("--steps", type=int, default=None)
@click.option("--stride", type=int, default=None,
              help="Sub-grid thinning for x/y.")
@click.option("--chunk", type=int, default=SWEEP_CHUNK)
@click.pass_obj
@_guarded
def sweep(run: RunContext, ae_path, flow_path, stats_path, task, o0,
          canonical, steps, stride, chunk):
    """Grid the initial object pose (x/y +-20 cm, yaw +-30 deg) and report
    first-frame wrist error against the canonical start."""
    canonical = run.opt("sweep", "canonical_wrist", canonical, None)
    if canonical is None:
        _fail("canonical wrist pose required (--canonical or "
              "[sweep] canonical_wrist)")
    canon = _parse_pose7(canonical)
    steps = run.opt("sweep", "steps", steps, DEFAULT_SWEEP_STEPS, int)
    stride = run.opt("sweep", "stride", stride, 1, int)
    if stride < 1:
        _fail("stride must be >= 1")

    ae, _ = _load_model(ae_path or run.path("ae.ckpt.json"), "ae")
    flow, _ = _load_model(flow_path or run.path("flow.ckpt.json"), "flow")
    stats = data_mod.load_norm_stats(stats_path or run.path("norm.stats.json"))
    base = _parse_o0(o0)
    u = data_mod.embed_task(task)

    xs, ys, yaws = _sweep_grid(stride)
    cells = [(x, y, yaw) for x in xs for y in ys for yaw in yaws]
    n = len(cells)
    o0_mat = np.empty((n, 9))
    for i, (x, y, yaw) in enumerate(cells):
        rot = Rotation.rot_z(math.radians(yaw)) * base.rotation
        o0_mat[i, :3] = base.position + [x, y, 0.0]
        o0_mat[i, 3:] = data_mod.rot6d_encode(rot)
    u_mat = np.repeat(u[None], n, axis=0)
    # one z0 row per cell in grid order, independent of chunking/threads
    z0 = np.random.default_rng(run.seed).standard_normal(
        (n, flow.preset.latent_dim))

    pos_err = np.empty(n)
    rot_err = np.empty(n)

    def run_chunk(lo: int):
        hi = min(lo + chunk, n)
        z1 = prior.heun_sample_cached(flow, u_mat[lo:hi], o0_mat[lo:hi],
                                      z0[lo:hi], steps=steps)
        for dlo in range(lo, hi, DECODE_BATCH):
            dhi = min(dlo + DECODE_BATCH, hi)
            with nn.no_grad():
                feats = ae.decode(nn.Tensor(z1[dlo - lo:dhi - lo])).data
            for j in range(dhi - dlo):
                first = data_mod.denormalize(feats[j], stats)[0]
                pos = first[:3]
                rot = data_mod.rot6d_decode(first[3:9])
                pos_err[dlo + j] = np.linalg.norm(pos - canon.position)
                rot_err[dlo + j] = math.degrees(rot.angle_to(canon.rotation))

    starts = list(range(0, n, chunk))
    if run.threads > 1:
        with ThreadPoolExecutor(run.threads) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for lo in starts:
            run_chunk(lo)

    csv_path = run.path("sweep.csv")
    _write_csv(csv_path, ["x", "y", "yaw_deg", "pos_err", "rot_err_deg"],
               [(float(x), float(y), float(yaw), float(pos_err[i]),
                 float(rot_err[i])) for i, (x, y, yaw) in enumerate(cells)])
    summary = {"cells": n,
               "pos_err_mean": float(pos_err.mean()),
               "pos_err_std": float(pos_err.std()),
               "rot_err_mean": float(rot_err.mean()),
               "rot_err_std": float(rot_err.std())}
    with open(run.path("sweep_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)

    # heatmaps over x/y at yaw = 0
    if 0.0 in yaws:
        plt = _plt()
        k = int(np.where(yaws == 0.0)[0][0])
        nx, ny, nyaw = len(xs), len(ys), len(yaws)
        for arr, name, unit in ((pos_err, "pos", "m"),
                                (rot_err, "rot", "deg")):
            grid = arr.reshape(nx, ny, nyaw)[:, :, k]
            fig, ax = plt.subplots(figsize=(5, 4))
            im = ax.imshow(grid.T, origin="lower",
                           extent=[xs[0], xs[-1], ys[0], ys[-1]],
                           aspect="auto")
            fig.colorbar(im, ax=ax, label=f"first-frame wrist err [{unit}]")
            ax.set_xlabel("x offset [m]")
            ax.set_ylabel("y offset [m]")
            ax.set_title(f"{name} error at yaw=0")
            fig.tight_layout()
            _savefig(fig, run.path(f"sweep_{name}_err.png"))
            plt.close(fig)

    click.echo(f"sweep: {n} cells  "
               f"pos {summary['pos_err_mean']:.4f} +- "
               f"{summary['pos_err_std']:.4f} m  "
               f"rot {summary['rot_err_mean']:.3f} +- "
               f"{summary['rot_err_std']:.3f} deg")
    click.echo(f"wrote {csv_path}")


# ---------------------------------------------------------------- rollout

@cli.command()
@click.argument("reference", type=click.Path(exists=True, dir_okay=False))
@click.option("--adapter", type=click.Choice(sorted(control_mod.ADAPTERS)),
              default="task-residual")
@click.option("--policy", default="zero",
              help="'zero' or a CSV of per-step policy outputs.")
@click.option("--arm-chain", type=click.Path(dir_okay=False), default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--fail-fraction", type=float, default=None,
              help="Tolerated IK failure fraction before exit 2.")
@click.option("--emit-commands", is_flag=True,
              help="Also write the 6x-upsampled command stream.")
@click.pass_obj
@_guarded
def rollout(run: RunContext, reference, adapter, policy, arm_chain, max_steps,
            fail_fraction, emit_commands):
    """Kinematic rollout of a reference under an action adapter: IK per step,
    FK verification, tracking errors, joint-limit report."""
    fail_fraction = run.opt("rollout", "fail_fraction", fail_fraction, 0.02,
                            float)
    traj = data_mod.load_trajectory(reference)
    frames = traj.frames[:max_steps] if max_steps else traj.frames
    targets = [control_mod.target_from_frame(fr) for fr in frames]
    n = len(targets)

    stack = control_mod.default_stack()
    if arm_chain:
        stack = control_mod.ControlStack(control_mod.load_chain(arm_chain),
                                         stack.fingers)
    state = control_mod.AdapterState(stack)
    dim = control_mod.ADAPTER_DIMS[adapter]
    if policy == "zero":
        u_rows = np.zeros((n, dim))
    else:
        u_rows = _read_policy_csv(policy)
        if u_rows.shape[1] != dim:
            _fail(f"policy rows have width {u_rows.shape[1]}, adapter "
                  f"'{adapter}' needs {dim}")
        if u_rows.shape[0] < n:
            _fail(f"policy file has {u_rows.shape[0]} rows for {n} steps")

    step_fn = control_mod.ADAPTERS[adapter]
    arm_dof = stack.arm_dof
    rows = []
    q_trace = np.empty((n, arm_dof + stack.hand_dof))
    failures = 0
    lo_all = np.concatenate([stack.arm.limits()[0], stack.hand_limits()[0]])
    hi_all = np.concatenate([stack.arm.limits()[1], stack.hand_limits()[1]])
    for t, target in enumerate(targets):
        stack.last_solve = None    # absolute-joint adapters never run IK
        q = step_fn(u_rows[t], target, state)
        q_trace[t] = q
        arm_ok, finger_ok = stack.last_solve if stack.last_solve else (True,
                                                                       None)
        ik_ok = bool(arm_ok and (finger_ok is None or finger_ok.all()))
        failures += not ik_ok
        ee = control_mod.fk(stack.arm, q[:arm_dof])
        wrist_pos_err = float(np.linalg.norm(ee.position
                                             - target.wrist.position))
        wrist_rot_err = math.degrees(ee.rotation.angle_to(
            target.wrist.rotation))
        tips = np.stack([control_mod.fk(ch, q[arm_dof + 4 * i:
                                              arm_dof + 4 * i + 4]).position
                         for i, ch in enumerate(stack.fingers)])
        tip_err = float(np.mean(np.linalg.norm(tips - target.fingertips,
                                               axis=1)))
        d = state.residual.delta
        margin = float(np.minimum(q - lo_all, hi_all - q).min())
        rows.append((t, wrist_pos_err, wrist_rot_err, tip_err,
                     float(np.linalg.norm(d.wrist_pos)),
                     math.degrees(np.linalg.norm(d.wrist_rot)),
                     float(np.abs(d.fingers).max()), margin, int(ik_ok)))

    csv_path = run.path("rollout.csv")
    _write_csv(csv_path, ["t", "wrist_pos_err", "wrist_rot_err_deg",
                          "tip_err", "d_wrist_pos", "d_wrist_rot_deg",
                          "d_finger_max", "min_margin", "ik_ok"], rows)

    report = control_mod.joint_limit_report(q_trace[:, :arm_dof], stack.arm)
    _write_csv(run.path("rollout_limits.csv"), ["joint", "saturated_steps"],
               [(j, int(c)) for j, c in enumerate(report.counts)])

    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ts = [r[0] for r in rows]
    ax.plot(ts, [r[1] for r in rows], label="wrist pos err [m]")
    ax.plot(ts, [r[3] for r in rows], label="fingertip err [m]")
    ax.set_xlabel("step")
    ax.set_ylabel("tracking error")
    ax.set_title(f"rollout ({adapter}, policy={os.path.basename(policy)})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _savefig(fig, run.path("rollout_errors.png"))
    plt.close(fig)

    if emit_commands:
        stream = control_mod.upsample_commands(targets, factor=6)
        cmd_rows = []
        for i, cmd in enumerate(stream):
            cmd_rows.append((i, *[float(v) for v in cmd.wrist.position],
                             *[float(v) for v in cmd.wrist.rotation.quat],
                             *[float(v) for v in cmd.fingertips.ravel()]))
        cols = (["i", "px", "py", "pz", "qw", "qx", "qy", "qz"]
                + [f"tip{f}{ax_}" for f in range(4) for ax_ in "xyz"])
        _write_csv(run.path("commands_120hz.csv"), cols, cmd_rows)

    frac = failures / max(n, 1)
    mean_pos = float(np.mean([r[1] for r in rows]))
    mean_tip = float(np.mean([r[3] for r in rows]))
    click.echo(f"rollout: {n} steps  wrist_pos_err mean {mean_pos:.5f} m  "
               f"tip_err mean {mean_tip:.5f} m  "
               f"ik failures {failures} ({frac:.1%})  "
               f"limit events {report.total_events}")
    click.echo(f"wrote {csv_path}")
    if frac > fail_fraction:
        _fail(f"IK failure fraction {frac:.3f} exceeds {fail_fraction:.3f}")


# ---------------------------------------------------------------- metrics

@cli.command()
@click.argument("trajs", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@_guarded
def metrics(run: RunContext, trajs):
    """Wrist-jerk report per trajectory (translational + rotational RMS)."""
    rows = []
    for path in trajs:
        try:
            traj = data_mod.load_trajectory(path)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            _fail(f"{path}: malformed trajectory file ({exc})")
        pos = np.stack([fr.wrist.position for fr in traj.frames])
        rots = [fr.wrist.rotation for fr in traj.frames]
        jp, jr = geom.rms_jerk(pos, rots, traj.dt)
        rows.append((os.path.basename(path), float(jp), float(jr)))

    csv_path = run.path("metrics.csv")
    _write_csv(csv_path, ["file", "jerk_pos", "jerk_rot"], rows)
    jp = np.array([r[1] for r in rows])
    jr = np.array([r[2] for r in rows])

    plt = _plt()
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(rows)), 4))
    x = np.arange(len(rows))
    ax.bar(x - 0.2, jp, width=0.4, label="translational [m/s^3]")
    ax.bar(x + 0.2, jr, width=0.4, label="rotational [rad/s^3]")
    ax.set_xticks(x)
    ax.set_xticklabels([r[0] for r in rows], rotation=45, ha="right",
                       fontsize=7)
    ax.set_ylabel("RMS jerk")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _savefig(fig, run.path("metrics.png"))
    plt.close(fig)

    click.echo(f"jerk over {len(rows)} trajectories: "
               f"pos {jp.mean():.4f} +- {jp.std():.4f} m/s^3  "
               f"rot {jr.mean():.4f} +- {jr.std():.4f} rad/s^3")
    click.echo(f"wrote {csv_path}")


# ---------------------------------------------------------------- latents

@cli.command("export-latents")
@click.argument("data", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--ae", "ae_path", default=None)
@click.option("--stats", "stats_path", default=None)
@click.option("--out-file", default=None)
@click.pass_obj
@_guarded
def export_latents(run: RunContext, data, ae_path, stats_path, out_file):
    """Encode trajectories into latent rows (one per trajectory)."""
    ae, _ = _load_model(ae_path or run.path("ae.ckpt.json"), "ae")
    stats = data_mod.load_norm_stats(stats_path or run.path("norm.stats.json"))
    paths = _expand_datasets(data)
    _, feats = _load_feats(paths, ae.preset)
    norm = np.stack([data_mod.normalize(f, stats) for f in feats])
    z = prior.encode_dataset(ae, norm)
    out_file = out_file or run.path("latents.csv")
    cols = [f"z{i}" for i in range(z.shape[1])]
    _write_csv(out_file, cols, [tuple(float(v) for v in row) for row in z])
    click.echo(f"wrote {z.shape[0]} x {z.shape[1]} latents -> {out_file}")


# ---------------------------------------------------------------- dr-sample

@cli.command("dr-sample")
@click.option("--n", type=int, default=1)
@click.option("--out-file", default=None)
@click.pass_obj
@_guarded
def dr_sample_cmd(run: RunContext, n, out_file):
    """Draw domain-randomization configs, all fields inside their ranges."""
    if n < 0:
        _fail("--n must be >= 0")
    rng = np.random.default_rng(run.seed)
    configs = [adapt_mod.dr_sample(rng).flat() for _ in range(n)]
    out_file = out_file or run.path("dr_configs.json")
    with open(out_file, "w") as fh:
        json.dump(configs, fh, indent=2)
    click.echo(f"wrote {n} config(s) -> {out_file}")


if __name__ == "__main__":
    cli()
