"""Training loop, Adam optimizer, and checkpoint persistence.

One seeded root stream drives every random choice (batch indices, the
per-item diffusion step k, the per-item noise draw), so a fixed seed
reproduces the loss trajectory bit for bit, and a checkpoint reload
continues it bit for bit.

Checkpoint files use the CKPT1 layout: a single JSON manifest line
(version, configs, iteration, RNG state, tensor index with per-tensor
name/shape/offset/CRC32) followed by the concatenated little-endian
float64 tensor payload.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .denoiser import DenoiserConfig, DenoiserModel, init_denoiser, param_shapes
from .diffusion import NoiseSchedule, batch_noise_loss, build_schedule
from .errors import (ConfigError, ContractError, DimensionError, IntegrityError,
                     TrainingDivergedError)
from .motion_data import Normalizer, PredictionTask

CKPT_VERSION = 1
LOG_EVERY = 100
DIVERGE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    iterations: int = 2000
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 500
    grad_clip: float = 0.0  # global-norm clip; 0 disables

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch_size, iterations, checkpoint_every must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps must be positive")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "batch_size", "iterations", "lr", "adam_beta1", "adam_beta2",
            "adam_eps", "seed", "checkpoint_every", "grad_clip")}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              m: dict[str, np.ndarray], v: dict[str, np.ndarray],
              t: int, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update, in place; t is the 1-based step count."""
    if set(params) != set(grads) or set(params) != set(m) or set(params) != set(v):
        raise ContractError("params, grads and moments must share one name set")
    if t < 1:
        raise ContractError(f"step count t must be >= 1, got {t}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"gradient for {name!r} is non-finite", t)
    if cfg.grad_clip > 0:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > cfg.grad_clip:
            grads = {k: g * (cfg.grad_clip / total) for k, g in grads.items()}
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        m[name] = b1 * m[name] + (1.0 - b1) * g
        v[name] = b2 * v[name] + (1.0 - b2) * (g * g)
        params[name] = params[name] - cfg.lr * (m[name] / c1) / (
            np.sqrt(v[name] / c2) + cfg.adam_eps)


@dataclass(eq=False)
class Checkpoint:
    """A full training snapshot; arrays are private copies."""

    version: int
    denoiser_config: DenoiserConfig
    schedule: NoiseSchedule
    normalizer: Normalizer | None
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    iteration: int
    rng_state: dict

    def build_model(self) -> DenoiserModel:
        return DenoiserModel(config=self.denoiser_config,
                             params={k: v.copy() for k, v in self.params.items()})


def _snapshot(den_cfg: DenoiserConfig, sched: NoiseSchedule,
              normalizer: Normalizer | None, model: DenoiserModel,
              m: dict, v: dict, iteration: int,
              rng: np.random.Generator) -> Checkpoint:
    return Checkpoint(
        version=CKPT_VERSION, denoiser_config=den_cfg, schedule=sched,
        normalizer=normalizer,
        params={k: a.copy() for k, a in model.params.items()},
        adam_m={k: a.copy() for k, a in m.items()},
        adam_v={k: a.copy() for k, a in v.items()},
        iteration=iteration,
        rng_state=json.loads(json.dumps(rng.bit_generator.state)))


@dataclass(frozen=True)
class TrainResult:
    model: DenoiserModel
    checkpoint: Checkpoint
    losses: list[float]  # one entry per iteration run in this call


def train(tasks: list[PredictionTask], den_cfg: DenoiserConfig,
          tr_cfg: TrainConfig, sched: NoiseSchedule,
          normalizer: Normalizer | None = None,
          start: Checkpoint | None = None,
          log_path=None) -> TrainResult:
    """Run the noise-prediction training loop until tr_cfg.iterations.

    Every iteration draws batch indices, per-item steps k in 1..K and
    fresh noise from the root stream, then applies one Adam update.
    Pass a Checkpoint as `start` to resume: the continuation is bit
    identical to an uninterrupted run with the same configs.  On
    divergence (non-finite or exploding loss) the raised error carries
    the last good checkpoint.
    """
    if not tasks:
        raise ContractError("training needs at least one task")
    if sched.k_steps != den_cfg.k_steps:
        raise ConfigError(
            f"schedule K={sched.k_steps} != denoiser K={den_cfg.k_steps}")
    for task in tasks:
        if task.p_gt is None:
            raise ContractError("every training task needs ground-truth frames")
        if task.p_obs.shape != (den_cfg.t_obs, den_cfg.dim):
            raise DimensionError(
                f"task observation shape {task.p_obs.shape} != "
                f"config {(den_cfg.t_obs, den_cfg.dim)}")
    obs = np.stack([t.p_obs for t in tasks])
    gt = np.stack([t.p_gt for t in tasks])
    if gt.shape[1:] != (den_cfg.l_pred, den_cfg.dim):
        raise ConfigError(
            f"task future shape {gt.shape[1:]} != config {(den_cfg.l_pred, den_cfg.dim)}")

    if start is None:
        model = init_denoiser(den_cfg, tr_cfg.seed)
        m = {k: np.zeros_like(a) for k, a in model.params.items()}
        v = {k: np.zeros_like(a) for k, a in model.params.items()}
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=tr_cfg.seed, spawn_key=(1,)))
        start_iter = 0
    else:
        if start.denoiser_config != den_cfg:
            raise ConfigError("checkpoint denoiser config does not match")
        model = start.build_model()
        m = {k: a.copy() for k, a in start.adam_m.items()}
        v = {k: a.copy() for k, a in start.adam_v.items()}
        rng = np.random.default_rng()
        rng.bit_generator.state = start.rng_state
        start_iter = start.iteration

    last_good = _snapshot(den_cfg, sched, normalizer, model, m, v, start_iter, rng)
    losses: list[float] = []
    log_rows: list[tuple[int, float]] = []
    n = len(tasks)

    for it in range(start_iter + 1, tr_cfg.iterations + 1):
        idx = rng.integers(0, n, size=tr_cfg.batch_size)
        ks = rng.integers(1, sched.k_steps + 1, size=tr_cfg.batch_size)
        eps = rng.standard_normal((tr_cfg.batch_size, den_cfg.l_pred, den_cfg.dim))
        tape = nm.Tape()
        loss_t, leaves = batch_noise_loss(model, tape, obs[idx], gt[idx], ks, eps, sched)
        loss_val = float(loss_t.data)
        if not np.isfinite(loss_val) or loss_val > DIVERGE_LIMIT:
            raise TrainingDivergedError(
                f"loss {loss_val} exceeded limits", it, checkpoint=last_good)
        grads = tape.gradients(loss_t, leaves)
        try:
            adam_step(model.params, grads, m, v, it, tr_cfg)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(str(exc), it, checkpoint=last_good) from exc
        losses.append(loss_val)
        if it == 1 or it % LOG_EVERY == 0 or it == tr_cfg.iterations:
            log_rows.append((it, loss_val))
        if it % tr_cfg.checkpoint_every == 0:
            last_good = _snapshot(den_cfg, sched, normalizer, model, m, v, it, rng)

    final = _snapshot(den_cfg, sched, normalizer, model, m, v,
                      tr_cfg.iterations, rng)
    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("iteration,loss\n")
            for it, val in log_rows:
                fh.write(f"{it},{val!r}\n")
    return TrainResult(model=model, checkpoint=final, losses=losses)


# ---------------------------------------------------------------------------
# CKPT1 persistence
# ---------------------------------------------------------------------------


def _tensor_items(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    order = list(param_shapes(ckpt.denoiser_config))
    items = [(f"param.{k}", ckpt.params[k]) for k in order]
    items += [(f"adam_m.{k}", ckpt.adam_m[k]) for k in order]
    items += [(f"adam_v.{k}", ckpt.adam_v[k]) for k in order]
    if ckpt.normalizer is not None:
        items += [("norm.mean", ckpt.normalizer.mean), ("norm.std", ckpt.normalizer.std)]
    return items


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    index = []
    chunks = []
    offset = 0
    for name, arr in _tensor_items(ckpt):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "crc32": zlib.crc32(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "version": ckpt.version,
        "denoiser_config": ckpt.denoiser_config.to_dict(),
        "schedule": {"k_steps": ckpt.schedule.k_steps,
                     "beta_min": ckpt.schedule.beta_min,
                     "beta_max": ckpt.schedule.beta_max},
        "normalizer": ckpt.normalizer is not None,
        "iteration": ckpt.iteration,
        "rng_state": ckpt.rng_state,
        "tensors": index,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path, expect_denoiser: DenoiserConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise IntegrityError("checkpoint has no manifest line")
    try:
        manifest = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"checkpoint manifest is not valid JSON: {exc}") from exc
    if manifest.get("version") != CKPT_VERSION:
        raise IntegrityError(
            f"unsupported checkpoint version {manifest.get('version')!r}")
    den_cfg = DenoiserConfig(**manifest["denoiser_config"])
    if expect_denoiser is not None and den_cfg != expect_denoiser:
        raise ConfigError("checkpoint denoiser config does not match the expected one")
    sched = build_schedule(**manifest["schedule"])
    payload = blob[nl + 1:]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 8
        raw = payload[entry["offset"]:entry["offset"] + size]
        if len(raw) != size:
            raise IntegrityError(f"tensor {entry['name']!r} is truncated")
        if zlib.crc32(raw) != entry["crc32"]:
            raise IntegrityError(f"tensor {entry['name']!r} failed its checksum")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    expected = param_shapes(den_cfg)
    params, m_mom, v_mom = {}, {}, {}
    for name in expected:
        for prefix, dest in (("param.", params), ("adam_m.", m_mom), ("adam_v.", v_mom)):
            key = prefix + name
            if key not in tensors:
                raise IntegrityError(f"checkpoint is missing tensor {key!r}")
            dest[name] = tensors[key]
    normalizer = None
    if manifest["normalizer"]:
        if "norm.mean" not in tensors or "norm.std" not in tensors:
            raise IntegrityError("checkpoint is missing normalizer tensors")
        normalizer = Normalizer(mean=tensors["norm.mean"], std=tensors["norm.std"])
    return Checkpoint(version=CKPT_VERSION, denoiser_config=den_cfg, schedule=sched,
                      normalizer=normalizer, params=params, adam_m=m_mom,
                      adam_v=v_mom, iteration=int(manifest["iteration"]),
                      rng_state=manifest["rng_state"])
