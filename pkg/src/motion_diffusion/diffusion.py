"""Noise schedule, forward/reverse diffusion, conditional loss, samplers.

The forward process corrupts a clean future motion x0 into x^k in closed
form; the reverse process walks k = K..1 with a learned noise predictor
conditioned on the observed motion.  One trained model serves both
sampling modes: stochastic (seeded Gaussian start and step noise) and
deterministic (zero start, zero step noise).

All sampling operates in normalized pose space; denormalization is the
caller's step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, DimensionError, SamplingDivergedError
from .metrics import SampleSet
from .motion_data import PredictionTask


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Noise-level tables for K diffusion steps.

    beta holds beta_k for k = 1..K (zero-based storage); alpha holds the
    cumulative products alpha_k for k = 0..K with alpha_0 = 1, so the
    step-1 reverse variance is exactly zero.
    """

    k_steps: int
    beta_min: float
    beta_max: float
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)

    def beta(self, k: int) -> float:
        self._check_step(k)
        return float(self.betas[k - 1])

    def alpha_hat(self, k: int) -> float:
        self._check_step(k)
        return 1.0 - float(self.betas[k - 1])

    def alpha(self, k: int) -> float:
        if not 0 <= k <= self.k_steps:
            raise ContractError(f"alpha index k={k} outside [0, {self.k_steps}]")
        return float(self.alphas[k])

    def sigma2(self, k: int) -> float:
        self._check_step(k)
        return (1.0 - self.alphas[k - 1]) / (1.0 - self.alphas[k]) * float(self.betas[k - 1])

    def sigma(self, k: int) -> float:
        return float(np.sqrt(self.sigma2(k)))

    def _check_step(self, k: int) -> None:
        if not 1 <= k <= self.k_steps:
            raise ContractError(f"diffusion step k={k} outside [1, {self.k_steps}]")


def build_schedule(k_steps: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Linear beta schedule: beta_1 = beta_min, beta_K = beta_max exactly."""
    if k_steps < 1:
        raise ConfigError(f"k_steps must be >= 1, got {k_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(
            f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    if k_steps == 1:
        betas = np.array([beta_min])
    else:
        betas = beta_min + np.arange(k_steps) / (k_steps - 1) * (beta_max - beta_min)
    alphas = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    sched = NoiseSchedule(k_steps, beta_min, beta_max, betas, alphas)
    _validate_schedule(sched)
    return sched


def _validate_schedule(s: NoiseSchedule) -> None:
    if np.any(s.betas <= 0.0) or np.any(s.betas >= 1.0):
        raise ConfigError("beta values must lie strictly inside (0, 1)")
    if np.any(np.diff(s.betas) < 0.0):
        raise ConfigError("beta values must be non-decreasing")
    if np.any(np.diff(s.alphas) >= 0.0):
        raise ConfigError("alpha must be strictly decreasing")
    if s.sigma2(1) != 0.0:
        raise ConfigError("sigma^2(1) must be exactly zero")


@dataclass(frozen=True, eq=False)
class DiffusionState:
    """A partially noised future motion at diffusion step k."""

    x: np.ndarray
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ContractError(f"diffusion step k={self.k} must be >= 0")


# ---------------------------------------------------------------------------
# forward / reverse processes
# ---------------------------------------------------------------------------


def _check_same_shape(name_a: str, a: np.ndarray, name_b: str, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name_a} shape {a.shape} != {name_b} shape {b.shape}")


def forward_noise(x0: np.ndarray, k: int, eps: np.ndarray,
                  sched: NoiseSchedule) -> np.ndarray:
    """Closed-form corruption: sqrt(alpha_k) x0 + sqrt(1 - alpha_k) eps."""
    sched._check_step(k)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_same_shape("x0", x0, "eps", eps)
    a = sched.alpha(k)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def mu_theta(x_k: np.ndarray, k: int, eps_hat: np.ndarray,
             sched: NoiseSchedule) -> np.ndarray:
    """Reverse-process mean given the predicted noise at step k."""
    sched._check_step(k)
    x_k = np.asarray(x_k, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_same_shape("x_k", x_k, "eps_hat", eps_hat)
    coef = sched.beta(k) / np.sqrt(1.0 - sched.alpha(k))
    return (x_k - coef * eps_hat) / np.sqrt(sched.alpha_hat(k))


def reverse_step(x_k: np.ndarray, k: int, eps_hat: np.ndarray,
                 z: np.ndarray | None, sched: NoiseSchedule) -> np.ndarray:
    """One reverse transition: mu_theta plus sigma(k)-scaled noise.

    At k = 1 the variance is exactly zero, so z is ignored entirely
    (avoids any 0 * non-finite hazard).
    """
    mean = mu_theta(x_k, k, eps_hat, sched)
    if k == 1 or z is None:
        return mean
    z = np.asarray(z, dtype=np.float64)
    _check_same_shape("x_k", x_k, "z", z)
    return mean + sched.sigma(k) * z


# ---------------------------------------------------------------------------
# training loss
# ---------------------------------------------------------------------------


def batch_noise_loss(model, tape: nm.Tape | None, p_obs: np.ndarray,
                     p_gt: np.ndarray, ks: np.ndarray, eps: np.ndarray,
                     sched: NoiseSchedule):
    """Mean-squared noise-prediction loss over a batch.

    p_obs is (B, T, D), p_gt and eps are (B, L, D), ks is (B,) with each
    entry in 1..K.  Returns (loss_tensor, leaves); leaves is the name ->
    Tensor map for the model parameters on `tape` (constants if tape is
    None).  The loss is mean-reduced over every batch entry so the
    learning-rate default transfers across pose dimensions.
    """
    ks = np.asarray(ks, dtype=np.intp)
    if ks.ndim != 1 or ks.shape[0] != p_gt.shape[0]:
        raise ContractError("ks must be one diffusion step per batch item")
    for k in ks:
        sched._check_step(int(k))
    a = sched.alphas[ks][:, None, None]
    x_k = np.sqrt(a) * p_gt + np.sqrt(1.0 - a) * eps
    leaves = model.bind(tape)
    eps_hat = model.forward_batch(leaves, p_obs, x_k, ks)
    resid = nm.sub(nm.constant(eps), eps_hat)
    return nm.mean_all(nm.mul(resid, resid)), leaves


def loss(model, task: PredictionTask, k: int, eps: np.ndarray,
         sched: NoiseSchedule) -> tuple[float, dict[str, np.ndarray]]:
    """Single-task conditional loss and its parameter gradients.

    The caller samples k uniformly from 1..K and draws eps ~ N(0, I);
    both are passed in for testability.
    """
    if task.p_gt is None:
        raise ContractError("loss requires a task with ground-truth future frames")
    eps = np.asarray(eps, dtype=np.float64)
    _check_same_shape("p_gt", task.p_gt, "eps", eps)
    tape = nm.Tape()
    value, leaves = batch_noise_loss(
        model, tape, task.p_obs[None], task.p_gt[None],
        np.array([k]), eps[None], sched)
    grads = tape.gradients(value, leaves)
    return float(value.data), grads


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _sample_streams(seed: int, n_samples: int) -> list[np.random.Generator]:
    # One stream per sample, derived from (seed, index): results do not
    # depend on batching or thread scheduling.
    return [np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
            for i in range(n_samples)]


def _reverse_loop(model, p_obs: np.ndarray, x: np.ndarray,
                  streams: list[np.random.Generator] | None,
                  sched: NoiseSchedule) -> np.ndarray:
    """Run k = K..1 on a batch of states x (N, L, D); None streams = zero noise."""
    n = x.shape[0]
    obs = np.broadcast_to(p_obs, (n,) + p_obs.shape)
    ks = np.empty(n, dtype=np.intp)
    for k in range(sched.k_steps, 0, -1):
        ks[:] = k
        eps_hat = model.eval_batch(obs, x, ks)
        if not np.all(np.isfinite(eps_hat)):
            raise SamplingDivergedError("denoiser output is non-finite", step=k)
        mean = mu_theta(x, k, eps_hat, sched)
        if k > 1 and streams is not None:
            z = np.stack([st.standard_normal(x.shape[1:]) for st in streams])
            x = mean + sched.sigma(k) * z
        else:
            x = mean
        if not np.all(np.isfinite(x)):
            raise SamplingDivergedError("reverse state is non-finite", step=k)
    return x


def sample_stochastic(model, p_obs: np.ndarray, n_samples: int, seed: int,
                      sched: NoiseSchedule, fps: float | None = None) -> SampleSet:
    """Draw n_samples future motions for one observation.

    Each sample starts from its own seeded N(0, I) state and receives
    fresh step noise down to k = 2 (step 1 is noiseless).  Same seed,
    same samples, bit for bit.
    """
    if n_samples < 1:
        raise ContractError(f"n_samples must be >= 1, got {n_samples}")
    l_pred, dim = model.pred_shape
    streams = _sample_streams(seed, n_samples)
    x = np.stack([st.standard_normal((l_pred, dim)) for st in streams])
    x = _reverse_loop(model, np.asarray(p_obs, dtype=np.float64), x, streams, sched)
    return SampleSet(samples=x, ground_truth=None, fps=fps)


def sample_deterministic(model, p_obs: np.ndarray,
                         sched: NoiseSchedule) -> np.ndarray:
    """One fixed prediction: zero initial state, zero noise at every step.

    Identical to the stochastic sampler with its random stream replaced
    by zeros; a pure function of (model, p_obs).
    """
    l_pred, dim = model.pred_shape
    x = np.zeros((1, l_pred, dim))
    x = _reverse_loop(model, np.asarray(p_obs, dtype=np.float64), x, None, sched)
    return x[0]
