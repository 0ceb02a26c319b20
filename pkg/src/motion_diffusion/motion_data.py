"""Pose-sequence data model: synthetic motion, windowing, normalization, file I/O.

A motion sequence is an F x D matrix of pose vectors (D = 3n for n
joints), tagged with its frame rate and representation.  The on-disk
container is the MSEQ1 format: one JSON header line followed by the
frames as little-endian float64, row-major.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ParseError

REPRESENTATIONS = ("euler", "axis-angle", "xyz")

# Synthetic-generator constants.  Frequencies in Hz, amplitudes/drift in
# the pose unit (radians for the default euler representation).
ACTION_BANDS = {
    "walk": (1.0, 2.0),
    "idle": (0.1, 0.3),
    "wave": (2.0, 4.0),
}
AMPLITUDE_RANGE = (0.1, 0.8)
DRIFT_MAX = 0.05
OFFSET_RANGE = (-0.5, 0.5)


def _check_frames(frames: np.ndarray) -> np.ndarray:
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ContractError(f"frames must be 2-D, got shape {frames.shape}")
    f, d = frames.shape
    if f < 1:
        raise ContractError("sequence must contain at least one frame")
    if d < 3 or d % 3 != 0:
        raise ContractError(f"pose dimension {d} is not a positive multiple of 3")
    if not np.all(np.isfinite(frames)):
        raise ContractError("frames contain non-finite values")
    return frames


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """An F x D pose matrix with frame rate and representation tag."""

    frames: np.ndarray
    fps: float
    representation: str = "euler"
    action_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", _check_frames(self.frames))
        if self.fps <= 0:
            raise ContractError(f"fps must be positive, got {self.fps}")
        if self.representation not in REPRESENTATIONS:
            raise ContractError(
                f"unknown representation {self.representation!r}, "
                f"expected one of {REPRESENTATIONS}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class PredictionTask:
    """An (observation, future) pair; the future is optional at inference."""

    p_obs: np.ndarray
    p_gt: np.ndarray | None = None

    def __post_init__(self):
        obs = np.ascontiguousarray(self.p_obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[0] < 1:
            raise ContractError(f"p_obs must be T x D with T >= 1, got {obs.shape}")
        object.__setattr__(self, "p_obs", obs)
        if self.p_gt is not None:
            gt = np.ascontiguousarray(self.p_gt, dtype=np.float64)
            if gt.ndim != 2 or gt.shape[0] < 1:
                raise ContractError(f"p_gt must be L x D with L >= 1, got {gt.shape}")
            if gt.shape[1] != obs.shape[1]:
                raise ContractError(
                    f"p_obs and p_gt disagree on pose dimension: "
                    f"{obs.shape[1]} vs {gt.shape[1]}")
            object.__setattr__(self, "p_gt", gt)

    @property
    def n_obs(self) -> int:
        return self.p_obs.shape[0]

    @property
    def dim(self) -> int:
        return self.p_obs.shape[1]


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def synth_dataset(n_joints: int, n_sequences: int, frames_per_sequence: int,
                  fps: float, action_mix: dict[str, float], seed: int,
                  representation: str = "euler") -> list[MotionSequence]:
    """Generate seeded synthetic motion: per-dimension sinusoids plus drift.

    Each sequence draws an action from `action_mix`; the action selects
    the sinusoid frequency band (see ACTION_BANDS).  Output is a pure
    function of the arguments.
    """
    if n_joints < 2:
        raise ConfigError(f"n_joints must be >= 2, got {n_joints}")
    if n_sequences < 0:
        raise ConfigError(f"n_sequences must be >= 0, got {n_sequences}")
    if frames_per_sequence < 1:
        raise ConfigError(f"frames_per_sequence must be >= 1, got {frames_per_sequence}")
    if fps <= 0:
        raise ConfigError(f"fps must be positive, got {fps}")
    if not action_mix:
        raise ConfigError("action_mix is empty")
    for name in action_mix:
        if name not in ACTION_BANDS:
            raise ConfigError(
                f"unknown action {name!r}, expected one of {sorted(ACTION_BANDS)}")
    weights = np.array([float(action_mix[a]) for a in sorted(action_mix)])
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ConfigError("action_mix weights must be nonnegative with positive sum")
    names = sorted(action_mix)
    probs = weights / weights.sum()

    rng = np.random.default_rng(seed)
    d = 3 * n_joints
    t = np.arange(frames_per_sequence)[:, None] / fps  # seconds, (F, 1)
    out = []
    for _ in range(n_sequences):
        action = names[rng.choice(len(names), p=probs)]
        f_lo, f_hi = ACTION_BANDS[action]
        amp = rng.uniform(*AMPLITUDE_RANGE, size=d)
        freq = rng.uniform(f_lo, f_hi, size=d)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=d)
        drift = rng.uniform(-DRIFT_MAX, DRIFT_MAX, size=d)
        offset = rng.uniform(*OFFSET_RANGE, size=d)
        frames = offset + amp * np.sin(2.0 * np.pi * freq * t + phase) + drift * t
        out.append(MotionSequence(frames, fps, representation, action))
    return out


def window_split(seq: MotionSequence, t_obs: int, l_pred: int,
                 stride: int) -> list[PredictionTask]:
    """Cut a sequence into (observation, future) windows.

    Windows start at 0, stride, 2*stride, ...; a window spans t_obs
    observed frames followed by l_pred future frames.  Too-short
    sequences yield an empty list, not an error.
    """
    if t_obs < 1 or l_pred < 1:
        raise ContractError(f"window extents must be >= 1, got T={t_obs}, L={l_pred}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    f = seq.n_frames
    span = t_obs + l_pred
    tasks = []
    for start in range(0, f - span + 1, stride):
        tasks.append(PredictionTask(
            p_obs=seq.frames[start:start + t_obs],
            p_gt=seq.frames[start + t_obs:start + span],
        ))
    return tasks


def split_sequences(seqs: list[MotionSequence], train_fraction: float = 0.8,
                    seed: int = 0) -> tuple[list[MotionSequence], list[MotionSequence]]:
    """Seeded train/test split by whole sequence (never by window)."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(seqs))
    n_train = int(round(train_fraction * len(seqs)))
    n_train = min(max(n_train, 1), max(len(seqs) - 1, 1)) if len(seqs) > 1 else len(seqs)
    train = [seqs[i] for i in order[:n_train]]
    test = [seqs[i] for i in order[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-dimension z-score transform fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def apply_task(self, task: PredictionTask) -> PredictionTask:
        gt = self.apply(task.p_gt) if task.p_gt is not None else None
        return PredictionTask(self.apply(task.p_obs), gt)


def fit_normalizer(train_tasks: list[PredictionTask]) -> Normalizer:
    """Fit per-dimension mean/std over all frames of the training tasks."""
    if not train_tasks:
        raise ConfigError("cannot fit a normalizer on an empty training set")
    blocks = []
    for task in train_tasks:
        blocks.append(task.p_obs)
        if task.p_gt is not None:
            blocks.append(task.p_gt)
    stacked = np.concatenate(blocks, axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return Normalizer(mean, std)


# ---------------------------------------------------------------------------
# MSEQ1 file format
# ---------------------------------------------------------------------------

MSEQ_VERSION = 1


def save_motion_file(path: str, seq: MotionSequence) -> None:
    """Write one sequence: JSON header line + little-endian float64 frames."""
    header = {
        "version": MSEQ_VERSION,
        "F": seq.n_frames,
        "D": seq.dim,
        "fps": float(seq.fps),
        "repr": seq.representation,
        "label": seq.action_label,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f8").tobytes())


def load_motion_file(path: str) -> MotionSequence:
    """Read an MSEQ1 file; a malformed file raises ParseError with the byte offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise ParseError("missing header line terminator", offset=len(blob))
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", 0)
        raise ParseError(f"malformed header: {exc}", offset=pos) from exc
    if not isinstance(header, dict):
        raise ParseError("header is not a JSON object", offset=0)
    if header.get("version") != MSEQ_VERSION:
        raise ParseError(f"unsupported version {header.get('version')!r}", offset=0)
    try:
        n_frames = int(header["F"])
        dim = int(header["D"])
        fps = float(header["fps"])
        representation = header["repr"]
        label = header["label"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad header field: {exc}", offset=0) from exc
    if n_frames < 1:
        raise ParseError(f"header F={n_frames} must be >= 1", offset=0)
    if dim < 3 or dim % 3 != 0:
        raise ParseError(f"header D={dim} is not a positive multiple of 3", offset=0)
    if representation not in REPRESENTATIONS:
        raise ParseError(f"unknown representation {representation!r}", offset=0)
    if label is not None and not isinstance(label, str):
        raise ParseError("label must be a string or null", offset=0)

    payload = blob[newline + 1:]
    expected = n_frames * dim * 8
    if len(payload) != expected:
        raise ParseError(
            f"payload has {len(payload)} bytes, expected {expected}",
            offset=newline + 1 + len(payload))
    flat = np.frombuffer(payload, dtype="<f8")
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise ParseError("non-finite value in payload",
                         offset=newline + 1 + int(bad[0]) * 8)
    frames = flat.astype(np.float64).reshape(n_frames, dim)
    return MotionSequence(frames, fps, representation, label)


def save_manifest(path: str, file_paths: list[str]) -> None:
    """Write a dataset manifest: a JSON list of motion file paths."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(file_paths), fh, indent=0)
        fh.write("\n")


def load_manifest(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not all(isinstance(p, str) for p in entries):
        raise ParseError("manifest must be a JSON list of file paths", offset=0)
    base = os.path.dirname(os.path.abspath(path))
    return [p if os.path.isabs(p) else os.path.join(base, p) for p in entries]


def load_dataset(manifest_path: str) -> list[MotionSequence]:
    return [load_motion_file(p) for p in load_manifest(manifest_path)]
