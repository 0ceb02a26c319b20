"""Command-line pipeline: synth, train, sample, eval, gradcheck, export.

Configuration is resolved in a fixed precedence order: built-in
defaults, then the MD_SEED environment variable (seed only), then the
`--config` key=value file, then explicit flags.  Unknown config keys
are rejected.  Every run writes its outputs into a fresh timestamped
directory under `out` together with a run_manifest.json recording the
fully resolved configuration; runs with identical manifests produce
identical primary outputs.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .denoiser import DenoiserConfig
from .diffusion import build_schedule, sample_deterministic, sample_stochastic
from .errors import (ConfigError, ContractError, DimensionError, IntegrityError,
                     NumericsError, ParseError, SamplingDivergedError,
                     TrainingDivergedError, UndefinedMetricError)
from .gradcheck import run_suite
from .metrics import SampleSet, compute_report, write_report_csv
from .motion_data import (MotionSequence, Normalizer, fit_normalizer,
                          load_dataset, load_motion_file, save_manifest,
                          save_motion_file, split_sequences, synth_dataset,
                          window_split)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

BUILD_ID = f"motion-diffusion/{__version__}"

# (key, type, default, help); required keys use the REQUIRED sentinel
REQUIRED = object()

_SPLIT_KEYS = [
    ("t_obs", int, 16, "observed frames per task"),
    ("l_pred", int, 20, "future frames per task"),
    ("stride", int, 4, "window start stride"),
    ("train_fraction", float, 0.8, "sequence fraction assigned to training"),
    ("split_seed", int, 0, "seed for the train/val sequence split"),
]

COMMAND_KEYS: dict[str, list[tuple]] = {
    "synth": [
        ("out", str, "runs", "base output directory"),
        ("n_joints", int, 5, "joints per skeleton (D = 3*joints)"),
        ("n_sequences", int, 8, "sequences to generate"),
        ("frames", int, 60, "frames per sequence"),
        ("fps", float, 25.0, "frame rate"),
        ("actions", str, "walk:1", "action mix, e.g. walk:0.5,idle:0.5"),
        ("representation", str, "euler", "pose representation"),
        ("seed", int, 0, "generation seed"),
    ],
    "train": [
        ("out", str, "runs", "base output directory"),
        ("data", str, REQUIRED, "dataset manifest path"),
        ("variant", str, "series", "denoiser variant: series or parallel"),
        ("model_dim", int, 64, "attention width"),
        ("n_heads", int, 4, "attention heads"),
        ("k_steps", int, 20, "diffusion steps"),
        ("beta_min", float, 0.001, "smallest noise-schedule beta"),
        ("beta_max", float, 0.333, "largest noise-schedule beta"),
        ("batch_size", int, 64, "tasks per iteration"),
        ("iterations", int, 2000, "optimizer steps"),
        ("lr", float, 1e-4, "Adam learning rate"),
        ("checkpoint_every", int, 500, "snapshot interval (iterations)"),
        ("grad_clip", float, 0.0, "global-norm gradient clip, 0 disables"),
        ("seed", int, 0, "training seed"),
        ("resume", str, "", "checkpoint to resume from"),
        *_SPLIT_KEYS,
    ],
    "sample": [
        ("out", str, "runs", "base output directory"),
        ("checkpoint", str, REQUIRED, "trained checkpoint path"),
        ("data", str, REQUIRED, "dataset manifest path"),
        ("mode", str, "stochastic", "stochastic or deterministic"),
        ("n", int, 50, "samples per task (stochastic mode)"),
        ("seed", int, 0, "sampling seed"),
        ("split", str, "val", "task source: train, val or all"),
        ("limit", int, 4, "max tasks to sample (0 = no limit)"),
        *_SPLIT_KEYS,
    ],
    "eval": [
        ("out", str, "runs", "base output directory"),
        ("samples", str, REQUIRED, "sample run directory (stochastic)"),
        ("det", str, "", "optional deterministic sample run directory"),
        ("horizons", str, "80,160,320,400,560,1000",
         "euler MSE horizons in milliseconds"),
    ],
    "gradcheck": [
        ("out", str, "runs", "base output directory"),
        ("seed", int, 0, "probe seed"),
        ("probes", int, 8, "parameter probes per variant"),
    ],
    "export": [
        ("out", str, "runs", "base output directory"),
        ("input", str, REQUIRED, "motion file (.mseq) to convert"),
    ],
}


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def parse_config_file(path: str) -> dict[str, str]:
    """Flat `key = value` lines; `#` starts a comment; blanks ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """defaults < MD_SEED < config file < flags; unknown keys rejected."""
    spec = COMMAND_KEYS[command]
    known = {key: (typ, default) for key, typ, default, _ in spec}
    resolved = {key: default for key, (_, default) in known.items()}

    env_seed = os.environ.get("MD_SEED")
    if env_seed is not None and "seed" in known:
        try:
            resolved["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"MD_SEED must be an integer, got {env_seed!r}")

    if args.config:
        for key, text in parse_config_file(args.config).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} for {command!r}")
            typ = known[key][0]
            try:
                resolved[key] = typ(text)
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot parse {text!r}")

    for key in known:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value

    missing = [k for k, v in resolved.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(sorted(missing))}")
    return resolved


def parse_action_mix(text: str) -> dict[str, float]:
    mix: dict[str, float] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, weight = part.partition(":")
        try:
            mix[name.strip()] = float(weight) if weight else 1.0
        except ValueError:
            raise ConfigError(f"bad action weight in {part!r}")
    if not mix:
        raise ConfigError(f"action mix {text!r} is empty")
    return mix


def _parse_horizons(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"horizons must be comma-separated integers, got {text!r}")


# ---------------------------------------------------------------------------
# run directories and manifests
# ---------------------------------------------------------------------------


def make_run_dir(base: str, command: str) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    for suffix in range(100):
        name = f"{command}-{stamp}" + (f"-{suffix}" if suffix else "")
        path = os.path.join(base, name)
        try:
            os.makedirs(path)
            return path
        except FileExistsError:
            continue
    raise ConfigError(f"could not allocate a fresh run directory under {base!r}")


def write_run_manifest(run_dir: str, command: str, resolved: dict) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in resolved.items()},
        "seed": resolved.get("seed"),
        "build": BUILD_ID,
    }
    with open(os.path.join(run_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dataset_tasks(cfg: dict, manifest_path: str):
    """Load sequences, window them, and split train/val by sequence."""
    seqs = load_dataset(manifest_path)
    if not seqs:
        raise ConfigError(f"dataset manifest {manifest_path!r} lists no sequences")
    train_seqs, val_seqs = split_sequences(
        seqs, train_fraction=cfg["train_fraction"], seed=cfg["split_seed"])
    def windows(group):
        tasks = []
        for seq in group:
            tasks.extend(window_split(seq, cfg["t_obs"], cfg["l_pred"], cfg["stride"]))
        return tasks
    meta = {"fps": seqs[0].fps, "representation": seqs[0].representation,
            "dim": seqs[0].dim}
    return windows(train_seqs), windows(val_seqs), meta


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    mix = parse_action_mix(cfg["actions"])
    seqs = synth_dataset(
        n_joints=cfg["n_joints"], n_sequences=cfg["n_sequences"],
        frames_per_sequence=cfg["frames"], fps=cfg["fps"], action_mix=mix,
        seed=cfg["seed"], representation=cfg["representation"])
    run_dir = make_run_dir(cfg["out"], "synth")
    write_run_manifest(run_dir, "synth", cfg)
    names = []
    for i, seq in enumerate(seqs):
        name = f"seq_{i:03d}.mseq"
        save_motion_file(os.path.join(run_dir, name), seq)
        names.append(name)
    save_manifest(os.path.join(run_dir, "manifest.json"), names)
    print(f"run directory: {run_dir}")
    print(f"wrote {len(names)} sequences and manifest.json")
    return 0


def cmd_train(cfg: dict) -> int:
    train_tasks, _, meta = _dataset_tasks(cfg, cfg["data"])
    if not train_tasks:
        raise ConfigError(
            "no training windows: sequences shorter than t_obs + l_pred")
    den_cfg = DenoiserConfig(
        variant=cfg["variant"], model_dim=cfg["model_dim"], n_heads=cfg["n_heads"],
        t_obs=cfg["t_obs"], l_pred=cfg["l_pred"], dim=meta["dim"],
        k_steps=cfg["k_steps"])
    tr_cfg = TrainConfig(
        batch_size=cfg["batch_size"], iterations=cfg["iterations"], lr=cfg["lr"],
        seed=cfg["seed"], checkpoint_every=cfg["checkpoint_every"],
        grad_clip=cfg["grad_clip"])
    sched = build_schedule(cfg["k_steps"], cfg["beta_min"], cfg["beta_max"])

    start = None
    if cfg["resume"]:
        start = load_checkpoint(cfg["resume"], expect_denoiser=den_cfg)
        normalizer = start.normalizer
    else:
        normalizer = fit_normalizer(train_tasks)
    norm_tasks = [normalizer.apply_task(t) for t in train_tasks]

    run_dir = make_run_dir(cfg["out"], "train")
    write_run_manifest(run_dir, "train", cfg)
    ckpt_path = os.path.join(run_dir, "checkpoint.ckpt")
    print(f"run directory: {run_dir}")
    try:
        result = train(norm_tasks, den_cfg, tr_cfg, sched, normalizer=normalizer,
                       start=start, log_path=os.path.join(run_dir, "loss_log.csv"))
    except TrainingDivergedError as exc:
        if exc.checkpoint is not None:
            save_checkpoint(exc.checkpoint, ckpt_path)
            print(f"saved last good checkpoint at iteration "
                  f"{exc.checkpoint.iteration}", file=sys.stderr)
        raise
    save_checkpoint(result.checkpoint, ckpt_path)
    print(f"final loss: {result.losses[-1]:.6f}" if result.losses
          else "no iterations run")
    print("wrote checkpoint.ckpt and loss_log.csv")
    return 0


def _task_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=(seed, index)).generate_state(1)[0])


def cmd_sample(cfg: dict) -> int:
    if cfg["mode"] not in ("stochastic", "deterministic"):
        raise ConfigError(f"mode must be stochastic or deterministic, "
                          f"got {cfg['mode']!r}")
    if cfg["split"] not in ("train", "val", "all"):
        raise ConfigError(f"split must be train, val or all, got {cfg['split']!r}")
    ckpt = load_checkpoint(cfg["checkpoint"])
    den_cfg = ckpt.denoiser_config
    if (cfg["t_obs"], cfg["l_pred"]) != (den_cfg.t_obs, den_cfg.l_pred):
        raise ConfigError(
            f"window extents ({cfg['t_obs']}, {cfg['l_pred']}) do not match "
            f"the checkpoint ({den_cfg.t_obs}, {den_cfg.l_pred})")
    train_tasks, val_tasks, meta = _dataset_tasks(cfg, cfg["data"])
    if meta["dim"] != den_cfg.dim:
        raise ConfigError(
            f"dataset dimension {meta['dim']} != checkpoint dimension {den_cfg.dim}")
    tasks = {"train": train_tasks, "val": val_tasks,
             "all": train_tasks + val_tasks}[cfg["split"]]
    if cfg["limit"] > 0:
        tasks = tasks[:cfg["limit"]]
    if not tasks:
        raise ConfigError("no tasks to sample for the requested split")

    model = ckpt.build_model()
    norm = ckpt.normalizer or Normalizer(np.zeros(den_cfg.dim), np.ones(den_cfg.dim))
    run_dir = make_run_dir(cfg["out"], "sample")
    write_run_manifest(run_dir, "sample", cfg)
    print(f"run directory: {run_dir}")

    def write_seq(path, frames):
        save_motion_file(path, MotionSequence(
            frames=frames, fps=meta["fps"], representation=meta["representation"]))

    index = []
    for i, task in enumerate(tasks):
        task_dir = os.path.join(run_dir, f"task_{i:03d}")
        os.makedirs(task_dir)
        obs_n = norm.apply(task.p_obs)
        entry = {"index": i, "dir": f"task_{i:03d}", "files": []}
        if task.p_gt is not None:
            write_seq(os.path.join(task_dir, "gt.mseq"), task.p_gt)
            entry["gt"] = "gt.mseq"
        if cfg["mode"] == "deterministic":
            pred = norm.invert(sample_deterministic(model, obs_n, ckpt.schedule))
            write_seq(os.path.join(task_dir, "det.mseq"), pred)
            entry["files"].append("det.mseq")
        else:
            sset = sample_stochastic(model, obs_n, cfg["n"],
                                     _task_seed(cfg["seed"], i), ckpt.schedule)
            for j in range(sset.n_samples):
                name = f"sample_{j:03d}.mseq"
                write_seq(os.path.join(task_dir, name), norm.invert(sset.samples[j]))
                entry["files"].append(name)
        index.append(entry)

    with open(os.path.join(run_dir, "samples_manifest.json"), "w") as fh:
        json.dump({"mode": cfg["mode"], "n": cfg["n"], "seed": cfg["seed"],
                   "fps": meta["fps"], "representation": meta["representation"],
                   "l_pred": den_cfg.l_pred, "dim": den_cfg.dim, "tasks": index},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote samples for {len(tasks)} task(s)")
    return 0


def _load_samples_manifest(path: str) -> tuple[dict, str]:
    if os.path.isdir(path):
        path = os.path.join(path, "samples_manifest.json")
    with open(path) as fh:
        return json.load(fh), os.path.dirname(os.path.abspath(path))


def cmd_eval(cfg: dict) -> int:
    manifest, base = _load_samples_manifest(cfg["samples"])
    if manifest["mode"] != "stochastic":
        raise ConfigError("eval needs a stochastic sample run as `samples`")
    det_by_index = {}
    det_repr = None
    if cfg["det"]:
        det_manifest, det_base = _load_samples_manifest(cfg["det"])
        if det_manifest["mode"] != "deterministic":
            raise ConfigError("`det` must point at a deterministic sample run")
        det_repr = det_manifest["representation"]
        for entry in det_manifest["tasks"]:
            det_by_index[entry["index"]] = os.path.join(
                det_base, entry["dir"], entry["files"][0])
    horizons = _parse_horizons(cfg["horizons"])

    rows = []
    for entry in manifest["tasks"]:
        idx = entry["index"]
        task_dir = os.path.join(base, entry["dir"])
        if "gt" not in entry:
            raise ContractError(f"task {idx}: no ground truth; cannot evaluate")
        gt = load_motion_file(os.path.join(task_dir, entry["gt"])).frames
        sample_frames = [load_motion_file(os.path.join(task_dir, name)).frames
                         for name in entry["files"]]
        try:
            sset = SampleSet(samples=np.stack(sample_frames), ground_truth=gt,
                             fps=manifest["fps"])
        except (DimensionError, ContractError, ValueError) as exc:
            raise ContractError(f"task {idx}: {exc}") from exc
        det_pred = None
        if idx in det_by_index and det_repr == "euler":
            det_pred = load_motion_file(det_by_index[idx]).frames
        report = compute_report(sset, deterministic_pred=det_pred,
                                horizons_ms=horizons,
                                representation=det_repr or "none")
        rows.append((f"task_{idx:03d}", report))

    run_dir = make_run_dir(cfg["out"], "eval")
    write_run_manifest(run_dir, "eval", cfg)
    csv_path = os.path.join(run_dir, "metrics.csv")
    write_report_csv(rows, csv_path)
    print(f"run directory: {run_dir}")
    print(f"wrote metrics.csv with {len(rows)} task row(s) plus aggregate")
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    report = run_suite(seed=cfg["seed"], n_probes=cfg["probes"])
    run_dir = make_run_dir(cfg["out"], "gradcheck")
    write_run_manifest(run_dir, "gradcheck", cfg)
    lines = report.lines()
    with open(os.path.join(run_dir, "gradcheck.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"run directory: {run_dir}")
    for line in lines:
        print(line)
    return 0 if report.passed else 1


def cmd_export(cfg: dict) -> int:
    seq = load_motion_file(cfg["input"])
    run_dir = make_run_dir(cfg["out"], "export")
    write_run_manifest(run_dir, "export", cfg)
    stem = os.path.splitext(os.path.basename(cfg["input"]))[0]
    csv_path = os.path.join(run_dir, f"{stem}.csv")
    with open(csv_path, "w") as fh:
        fh.write("frame," + ",".join(f"d{j}" for j in range(seq.dim)) + "\n")
        for i, row in enumerate(seq.frames):
            fh.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    print(f"run directory: {run_dir}")
    print(f"wrote {os.path.basename(csv_path)} ({seq.n_frames} frames)")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_HANDLERS = {
    "synth": cmd_synth, "train": cmd_train, "sample": cmd_sample,
    "eval": cmd_eval, "gradcheck": cmd_gradcheck, "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motiondiff",
        description="Conditional diffusion for 3D human motion prediction")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, keys in COMMAND_KEYS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key = value config file")
        for key, typ, default, help_text in keys:
            shown = "required" if default is REQUIRED else repr(default)
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ,
                           default=None, help=f"{help_text} (default: {shown})")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        resolved = resolve_config(args.command, args)
        return _HANDLERS[args.command](resolved)
    except (ConfigError, ParseError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, DimensionError, IntegrityError, NumericsError,
            SamplingDivergedError, TrainingDivergedError,
            UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
