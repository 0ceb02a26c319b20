"""Dense float64 arrays plus a reverse-mode differentiation tape.

Every value is a C-contiguous float64 numpy array wrapped in a `Tensor`.
Ops are free functions: they compute with numpy, verify the result is
finite (NaN/Inf is an error state, not a value), and append a pullback
record to the tape any of their inputs live on.  A tape is built fresh
for every training step; `backward` walks the records once, in reverse
creation order, which is a valid reverse topological order by
construction.

Inference never touches a tape: wrap inputs with `constant` and the ops
skip recording.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericsError

LAYER_NORM_EPS = 1e-5


def as_array(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array and verify finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericsError("non-finite value in array input")
    return arr


class Tensor:
    """A value, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: np.ndarray, tape: "Tape | None" = None, node_id: int | None = None):
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        where = "const" if self.tape is None else f"node {self.node_id}"
        return f"Tensor(shape={self.data.shape}, {where})"


def constant(x) -> Tensor:
    """Wrap a value as an off-tape constant (no gradient flows into it)."""
    return Tensor(as_array(x))


class _Record:
    """One taped op: output node, input nodes, and the pullback closure.

    `pullback(g)` maps the output gradient to one gradient per input,
    aligned with `in_ids`; positions with `in_ids[i] is None` (constant
    inputs) may be returned as None.
    """

    __slots__ = ("name", "out_id", "in_ids", "pullback")

    def __init__(self, name, out_id, in_ids, pullback):
        self.name = name
        self.out_id = out_id
        self.in_ids = in_ids
        self.pullback = pullback


class Tape:
    """Ordered op records; rebuilt every training step, never reused."""

    def __init__(self):
        self.records: list[_Record] = []
        self.param_ids: list[int] = []
        self._next_id = 0

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def param(self, x) -> Tensor:
        """Register a parameter leaf; `backward` reports its gradient."""
        t = Tensor(as_array(x), self, self._new_id())
        self.param_ids.append(t.node_id)
        return t

    def gradients(self, loss: Tensor, named: dict[str, Tensor]) -> dict[str, np.ndarray]:
        """Run backward and key the parameter gradients by name."""
        by_id = backward(self, loss)
        out = {}
        for name, leaf in named.items():
            g = by_id.get(leaf.node_id)
            out[name] = g if g is not None else np.zeros_like(leaf.data)
        return out


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) for every parameter leaf on the tape.

    Visits each record exactly once, in reverse creation order.  Returns
    a map node_id -> gradient for the parameter leaves that the loss
    actually depends on; constants never appear.
    """
    if loss.tape is not tape:
        raise ContractError("loss tensor does not belong to this tape")
    if loss.data.ndim != 0:
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")

    grads: dict[int, np.ndarray] = {loss.node_id: np.asarray(1.0)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.out_id, None)
        if g is None:
            continue
        gins = rec.pullback(g)
        for in_id, gin in zip(rec.in_ids, gins):
            if in_id is None or gin is None:
                continue
            acc = grads.get(in_id)
            grads[in_id] = gin if acc is None else acc + gin
    param_ids = set(tape.param_ids)
    return {nid: g for nid, g in grads.items() if nid in param_ids}


# ---------------------------------------------------------------------------
# op plumbing
# ---------------------------------------------------------------------------


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _find_tape(tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("inputs belong to two different tapes")
    return tape


def _emit(name: str, out_data: np.ndarray, inputs: list[Tensor], make_pullback) -> Tensor:
    """Finite-check the result; record a pullback if any input is taped.

    `make_pullback` is called lazily (only when taping) with the list of
    per-input need-gradient flags and must return the pullback closure.
    """
    if not np.all(np.isfinite(out_data)):
        raise NumericsError(f"op '{name}' produced a non-finite value")
    tape = _find_tape(inputs)
    if tape is None:
        return Tensor(out_data)
    out = Tensor(out_data, tape, tape._new_id())
    in_ids = [t.node_id if t.tape is not None else None for t in inputs]
    need = [nid is not None for nid in in_ids]
    tape.records.append(_Record(name, out.node_id, in_ids, make_pullback(need)))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return np.ascontiguousarray(g)


# Backward kernels live at module level so diagnostics (and the
# gradcheck negative control) can intercept them.


def _matmul_backward_a(g, b):
    return np.matmul(g, np.swapaxes(b, -1, -2))


def _matmul_backward_b(g, a):
    return np.matmul(np.swapaxes(a, -1, -2), g)


def _softmax_backward(g, y):
    return y * (g - np.sum(g * y, axis=-1, keepdims=True))


def _relu_backward(g, x):
    return g * (x > 0.0)


def _layer_norm_backward_x(g, gain, y, inv):
    h = g * gain
    return inv * (h - h.mean(axis=-1, keepdims=True) - y * (h * y).mean(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def make(need):
        def pull(g):
            return (_unbroadcast(g, ash) if need[0] else None,
                    _unbroadcast(g, bsh) if need[1] else None)
        return pull

    return _emit("add", out, [a, b], make)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data
    ash, bsh = a.data.shape, b.data.shape

    def make(need):
        def pull(g):
            return (_unbroadcast(g, ash) if need[0] else None,
                    _unbroadcast(-g, bsh) if need[1] else None)
        return pull

    return _emit("sub", out, [a, b], make)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def make(need):
        def pull(g):
            return (_unbroadcast(g * bd, ad.shape) if need[0] else None,
                    _unbroadcast(g * ad, bd.shape) if need[1] else None)
        return pull

    return _emit("mul", out, [a, b], make)


def scale(a, s: float) -> Tensor:
    a = _coerce(a)
    s = float(s)
    out = a.data * s

    def make(need):
        def pull(g):
            return (g * s,)
        return pull

    return _emit("scale", out, [a], make)


def matmul(a, b) -> Tensor:
    """Matrix product over the two trailing axes, numpy batch semantics.

    Pullbacks: dL/da = g @ b^T, dL/db = a^T @ g (transposes on the two
    trailing axes, batch axes unbroadcast).
    """
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul requires arrays with ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}")
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def make(need):
        def pull(g):
            ga = _unbroadcast(_matmul_backward_a(g, bd), ad.shape) if need[0] else None
            gb = _unbroadcast(_matmul_backward_b(g, ad), bd.shape) if need[1] else None
            return (ga, gb)
        return pull

    return _emit("matmul", out, [a, b], make)


def relu(a) -> Tensor:
    a = _coerce(a)
    out = np.maximum(a.data, 0.0)
    ad = a.data

    def make(need):
        def pull(g):
            return (_relu_backward(g, ad),)
        return pull

    return _emit("relu", out, [a], make)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, with max-subtraction for stability.

    For a 2-D input this is row-wise softmax: each output row is
    nonnegative and sums to 1.
    """
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def make(need):
        def pull(g):
            return (_softmax_backward(g, y),)
        return pull

    return _emit("softmax_rows", y, [a], make)


def layer_norm(a, gain, bias) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Variance is the population variance; the denominator is
    sqrt(var + 1e-5), so a zero-variance row maps to zeros (then the
    affine part), with no singularity.
    """
    a, gain, bias = _coerce(a), _coerce(gain), _coerce(bias)
    n = a.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise DimensionError(
            f"gain/bias must have shape ({n},), got {gain.data.shape} and {bias.data.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    y = xc * inv
    out = y * gain.data + bias.data
    gdata = gain.data

    def make(need):
        def pull(g):
            gx = _layer_norm_backward_x(g, gdata, y, inv) if need[0] else None
            ggain = (g * y).reshape(-1, n).sum(axis=0) if need[1] else None
            gbias = g.reshape(-1, n).sum(axis=0) if need[2] else None
            return (gx, ggain, gbias)
        return pull

    return _emit("layer_norm", out, [a, gain, bias], make)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    out = np.ascontiguousarray(a.data.reshape(shape))
    ash = a.data.shape

    def make(need):
        def pull(g):
            return (g.reshape(ash),)
        return pull

    return _emit("reshape", out, [a], make)


def transpose(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def make(need):
        def pull(g):
            return (np.ascontiguousarray(g.transpose(inverse)),)
        return pull

    return _emit("transpose", out, [a], make)


def concat(parts, axis: int) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero arrays")
    out = np.concatenate([p.data for p in parts], axis=axis)
    extents = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + extents)

    def make(need):
        def pull(g):
            gs = []
            for i in range(len(extents)):
                if not need[i]:
                    gs.append(None)
                    continue
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offsets[i], offsets[i + 1])
                gs.append(np.ascontiguousarray(g[tuple(idx)]))
            return tuple(gs)
        return pull

    return _emit("concat", out, parts, make)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice `[start, start+length)` along one axis."""
    a = _coerce(a)
    if start < 0 or start + length > a.data.shape[axis]:
        raise DimensionError(
            f"narrow [{start}, {start + length}) out of range for axis {axis} "
            f"of shape {a.data.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(a.data[idx])
    ash = a.data.shape

    def make(need):
        def pull(g):
            z = np.zeros(ash)
            z[idx] = g
            return (z,)
        return pull

    return _emit("narrow", out, [a], make)


def take_rows(a, indices) -> Tensor:
    """Gather rows (axis 0) by an integer index array."""
    a = _coerce(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("take_rows expects a 1-D index array")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise DimensionError("take_rows index out of range")
    out = np.ascontiguousarray(a.data[idx])
    ash = a.data.shape

    def make(need):
        def pull(g):
            z = np.zeros(ash)
            np.add.at(z, idx, g)
            return (z,)
        return pull

    return _emit("take_rows", out, [a], make)


def sum_all(a) -> Tensor:
    a = _coerce(a)
    out = np.asarray(a.data.sum())
    ash = a.data.shape

    def make(need):
        def pull(g):
            return (np.broadcast_to(g, ash).copy(),)
        return pull

    return _emit("sum_all", out, [a], make)


def mean_all(a) -> Tensor:
    a = _coerce(a)
    out = np.asarray(a.data.mean())
    ash = a.data.shape
    n = a.data.size

    def make(need):
        def pull(g):
            return (np.broadcast_to(g / n, ash).copy(),)
        return pull

    return _emit("mean_all", out, [a], make)
