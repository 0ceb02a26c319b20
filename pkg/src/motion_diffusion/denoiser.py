"""Transformer noise predictors over the observed + noised motion grid.

Both variants see the same assembled input: the observation (T frames)
stacked above the noised future (L frames), every scalar pose parameter
lifted to a model_dim feature, plus three additive encodings (temporal
sinusoid, spatial sinusoid, learnable step vector).  The series variant
runs spatial attention then temporal attention; the parallel variant
runs both branches on the encoded input and fuses their two scalar maps
with a learned per-position 2 -> 1 kernel.

Attention is bidirectional everywhere: no causal mask.  Spatial
attention treats the D scalar pose parameters as tokens (time folded
into the batch); temporal attention treats the T+L frames as tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, DimensionError

VARIANTS = ("series", "parallel")

FF_RATIO = 4          # feedforward hidden width / model_dim
STEP_EMB_STD = 0.02   # init scale of the step-embedding table
OUT_HEAD_SCALE = 0.05 # shrink output heads so initial predictions sit near zero


@dataclass(frozen=True)
class DenoiserConfig:
    variant: str
    model_dim: int
    n_heads: int
    t_obs: int
    l_pred: int
    dim: int
    k_steps: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("model_dim", "n_heads", "t_obs", "l_pred", "dim", "k_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.model_dim % self.n_heads:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}")
        if self.model_dim % 2:
            raise ConfigError("model_dim must be even for sinusoidal encodings")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "model_dim": self.model_dim,
                "n_heads": self.n_heads, "t_obs": self.t_obs,
                "l_pred": self.l_pred, "dim": self.dim, "k_steps": self.k_steps}


def _layer_shapes(prefix: str, c: int) -> dict[str, tuple]:
    h = FF_RATIO * c
    return {
        f"{prefix}.ln1_g": (c,), f"{prefix}.ln1_b": (c,),
        f"{prefix}.wq": (c, c), f"{prefix}.bq": (c,),
        f"{prefix}.wk": (c, c), f"{prefix}.bk": (c,),
        f"{prefix}.wv": (c, c), f"{prefix}.bv": (c,),
        f"{prefix}.wo": (c, c), f"{prefix}.bo": (c,),
        f"{prefix}.ln2_g": (c,), f"{prefix}.ln2_b": (c,),
        f"{prefix}.ff1_w": (c, h), f"{prefix}.ff1_b": (h,),
        f"{prefix}.ff2_w": (h, c), f"{prefix}.ff2_b": (c,),
    }


def param_shapes(config: DenoiserConfig) -> dict[str, tuple]:
    """The closed, ordered parameter name -> shape map for a config."""
    c = config.model_dim
    shapes: dict[str, tuple] = {
        "in_w": (c,), "in_b": (c,),
        "step_emb": (config.k_steps + 1, c),
    }
    shapes.update(_layer_shapes("spat", c))
    shapes.update(_layer_shapes("temp", c))
    if config.variant == "series":
        shapes.update({"out_w": (c, 1), "out_b": (1,)})
    else:
        shapes.update({"out_s_w": (c, 1), "out_s_b": (1,),
                       "out_t_w": (c, 1), "out_t_b": (1,),
                       "fuse_w": (2, 1), "fuse_b": (1,)})
    return shapes


def param_count(config: DenoiserConfig) -> int:
    return sum(int(np.prod(shape)) for shape in param_shapes(config).values())


def _init_array(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    if name == "step_emb":
        return rng.normal(0.0, STEP_EMB_STD, shape)
    if name.endswith(("_g",)):
        return np.ones(shape)
    if name.endswith(("_b", ".bq", ".bk", ".bv", ".bo")) or name == "in_b":
        return np.zeros(shape)
    # weight matrices and the scalar input lift: Glorot uniform
    fan_in = shape[0] if len(shape) == 2 else 1
    fan_out = shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, shape)
    if name.startswith(("out_", "fuse_")) or name == "out_w":
        w *= OUT_HEAD_SCALE
    return w


@dataclass(eq=False)
class DenoiserModel:
    """Parameter container plus forward passes; immutable between optimizer steps."""

    config: DenoiserConfig
    params: dict[str, np.ndarray]
    eval_count: int = 0

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(self.params) != set(expected):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigError(
                f"parameter names do not match config (missing={missing}, extra={extra})")
        for name, arr in self.params.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != expected[name]:
                raise DimensionError(
                    f"parameter {name}: shape {arr.shape} != expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"parameter {name} contains non-finite values")
            self.params[name] = arr

    @property
    def pred_shape(self) -> tuple[int, int]:
        return self.config.l_pred, self.config.dim

    def bind(self, tape: nm.Tape | None) -> dict[str, nm.Tensor]:
        """Wrap parameters as tape leaves (trainable) or constants (inference)."""
        if tape is None:
            return {k: nm.constant(v) for k, v in self.params.items()}
        return {k: tape.param(v) for k, v in self.params.items()}

    def forward_batch(self, leaves: dict[str, nm.Tensor], p_obs: np.ndarray,
                      x_k: np.ndarray, ks: np.ndarray) -> nm.Tensor:
        return _forward(self.config, leaves, p_obs, x_k, ks)

    def eval_batch(self, p_obs: np.ndarray, x_k: np.ndarray,
                   ks: np.ndarray) -> np.ndarray:
        """Inference forward; counts one evaluation per batch item."""
        out = _forward(self.config, self.bind(None), p_obs, x_k, ks)
        self.eval_count += int(np.asarray(x_k).shape[0])
        return out.data


def init_denoiser(config: DenoiserConfig, seed: int) -> DenoiserModel:
    """Fresh model: Glorot weights, zero biases, unit norm gains.

    Output heads are scaled down so the untrained prediction is near
    zero and the initial loss sits near the noise energy (about 1).
    """
    rng = np.random.default_rng(seed)
    params = {name: _init_array(name, shape, rng)
              for name, shape in param_shapes(config).items()}
    return DenoiserModel(config=config, params=params)


# ---------------------------------------------------------------------------
# input assembly and encodings
# ---------------------------------------------------------------------------


def assemble_input(p_obs: np.ndarray, p_k: np.ndarray) -> np.ndarray:
    """Stack observation rows above noised-future rows: (T+L, D)."""
    p_obs = np.asarray(p_obs, dtype=np.float64)
    p_k = np.asarray(p_k, dtype=np.float64)
    if p_obs.ndim != 2 or p_k.ndim != 2:
        raise DimensionError("assemble_input expects two 2-D arrays")
    if p_obs.shape[0] < 1:
        raise DimensionError("observation must contribute at least one row")
    if p_obs.shape[1] != p_k.shape[1]:
        raise DimensionError(
            f"column mismatch: observation D={p_obs.shape[1]}, future D={p_k.shape[1]}")
    return np.concatenate([p_obs, p_k], axis=0)


def positional_encoding(axis_len: int, model_dim: int) -> np.ndarray:
    """Sinusoid table: PE[p, 2i] = sin(p / 10000^(2i/dim)), PE[p, 2i+1] = cos."""
    if model_dim % 2:
        raise ConfigError(f"model_dim must be even, got {model_dim}")
    if axis_len < 1 or model_dim < 2:
        raise ConfigError("positional encoding needs axis_len >= 1 and model_dim >= 2")
    pos = np.arange(axis_len)[:, None]
    freq = np.power(10000.0, -np.arange(0, model_dim, 2) / model_dim)
    table = np.empty((axis_len, model_dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


# ---------------------------------------------------------------------------
# forward graph
# ---------------------------------------------------------------------------


def _attention(x, leaves, prefix: str, n_heads: int):
    """Pre-norm multi-head self-attention block on (M, S, C) tokens."""
    m, s, c = x.data.shape
    hd = c // n_heads
    h = nm.layer_norm(x, leaves[f"{prefix}.ln1_g"], leaves[f"{prefix}.ln1_b"])

    def heads(t):
        t = nm.reshape(t, (m, s, n_heads, hd))
        return nm.transpose(t, (0, 2, 1, 3))

    q = heads(nm.add(nm.matmul(h, leaves[f"{prefix}.wq"]), leaves[f"{prefix}.bq"]))
    k = heads(nm.add(nm.matmul(h, leaves[f"{prefix}.wk"]), leaves[f"{prefix}.bk"]))
    v = heads(nm.add(nm.matmul(h, leaves[f"{prefix}.wv"]), leaves[f"{prefix}.bv"]))
    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    ctx = nm.matmul(nm.softmax_rows(scores), v)
    ctx = nm.reshape(nm.transpose(ctx, (0, 2, 1, 3)), (m, s, c))
    out = nm.add(nm.matmul(ctx, leaves[f"{prefix}.wo"]), leaves[f"{prefix}.bo"])
    return nm.add(x, out)


def _feedforward(x, leaves, prefix: str):
    h = nm.layer_norm(x, leaves[f"{prefix}.ln2_g"], leaves[f"{prefix}.ln2_b"])
    h = nm.relu(nm.add(nm.matmul(h, leaves[f"{prefix}.ff1_w"]), leaves[f"{prefix}.ff1_b"]))
    h = nm.add(nm.matmul(h, leaves[f"{prefix}.ff2_w"]), leaves[f"{prefix}.ff2_b"])
    return nm.add(x, h)


def _encoder_layer(tokens, leaves, prefix: str, n_heads: int):
    return _feedforward(_attention(tokens, leaves, prefix, n_heads), leaves, prefix)


def _spatial_layer(feat, leaves, n_heads: int):
    """Attend across the D pose parameters; time rides the batch axis."""
    b, s, d, c = feat.data.shape
    tokens = nm.reshape(feat, (b * s, d, c))
    tokens = _encoder_layer(tokens, leaves, "spat", n_heads)
    return nm.reshape(tokens, (b, s, d, c))


def _temporal_layer(feat, leaves, n_heads: int):
    """Attend across the T+L frames; pose parameters ride the batch axis."""
    b, s, d, c = feat.data.shape
    tokens = nm.reshape(nm.transpose(feat, (0, 2, 1, 3)), (b * d, s, c))
    tokens = _encoder_layer(tokens, leaves, "temp", n_heads)
    return nm.transpose(nm.reshape(tokens, (b, d, s, c)), (0, 2, 1, 3))


def _project_out(feat, leaves, w_name: str, b_name: str):
    return nm.add(nm.matmul(feat, leaves[w_name]), leaves[b_name])


def _forward(cfg: DenoiserConfig, leaves: dict[str, nm.Tensor], p_obs: np.ndarray,
             x_k: np.ndarray, ks: np.ndarray):
    """Batched noise prediction: (B, T, D), (B, L, D), (B,) -> (B, L, D)."""
    p_obs = np.asarray(p_obs, dtype=np.float64)
    x_k = np.asarray(x_k, dtype=np.float64)
    ks = np.asarray(ks, dtype=np.intp)
    b = x_k.shape[0]
    t, l, d, c = cfg.t_obs, cfg.l_pred, cfg.dim, cfg.model_dim
    if p_obs.shape != (b, t, d):
        raise DimensionError(f"observation batch shape {p_obs.shape} != {(b, t, d)}")
    if x_k.shape != (b, l, d):
        raise DimensionError(f"noised-future batch shape {x_k.shape} != {(b, l, d)}")
    if ks.shape != (b,):
        raise DimensionError(f"ks shape {ks.shape} != ({b},)")
    if np.any(ks < 0) or np.any(ks > cfg.k_steps):
        raise ContractError(f"step indices must lie in [0, {cfg.k_steps}]")
    s = t + l

    cells = np.concatenate([p_obs, x_k], axis=1)[..., None]      # (B, S, D, 1)
    feat = nm.add(nm.mul(nm.constant(cells), leaves["in_w"]), leaves["in_b"])
    feat = nm.add(feat, nm.constant(positional_encoding(s, c)[:, None, :]))
    feat = nm.add(feat, nm.constant(positional_encoding(d, c)))
    step = nm.reshape(nm.take_rows(leaves["step_emb"], ks), (b, 1, 1, c))
    feat = nm.add(feat, step)

    if cfg.variant == "series":
        feat = _spatial_layer(feat, leaves, cfg.n_heads)
        feat = _temporal_layer(feat, leaves, cfg.n_heads)
        y = _project_out(feat, leaves, "out_w", "out_b")          # (B, S, D, 1)
    else:
        ya = _project_out(_spatial_layer(feat, leaves, cfg.n_heads),
                          leaves, "out_s_w", "out_s_b")
        yb = _project_out(_temporal_layer(feat, leaves, cfg.n_heads),
                          leaves, "out_t_w", "out_t_b")
        stacked = nm.concat([ya, yb], axis=-1)                    # (B, S, D, 2)
        y = nm.add(nm.matmul(stacked, leaves["fuse_w"]), leaves["fuse_b"])

    tail = nm.narrow(y, axis=1, start=t, length=l)                # (B, L, D, 1)
    return nm.reshape(tail, (b, l, d))


def _denoise_single(model: DenoiserModel, p_obs: np.ndarray, p_k: np.ndarray,
                    k: int, variant: str) -> np.ndarray:
    if model.config.variant != variant:
        raise ContractError(
            f"model variant is {model.config.variant!r}, not {variant!r}")
    if not 1 <= k <= model.config.k_steps:
        raise ContractError(
            f"diffusion step k={k} outside [1, {model.config.k_steps}]")
    p_obs = np.asarray(p_obs, dtype=np.float64)
    p_k = np.asarray(p_k, dtype=np.float64)
    return model.eval_batch(p_obs[None], p_k[None], np.array([k]))[0]


def denoise_series(model: DenoiserModel, p_obs: np.ndarray, p_k: np.ndarray,
                   k: int) -> np.ndarray:
    """Series variant: spatial attention, then temporal, then readout."""
    return _denoise_single(model, p_obs, p_k, k, "series")


def denoise_parallel(model: DenoiserModel, p_obs: np.ndarray, p_k: np.ndarray,
                     k: int) -> np.ndarray:
    """Parallel variant: both branches fused by the learned 1x1 kernel."""
    return _denoise_single(model, p_obs, p_k, k, "parallel")
