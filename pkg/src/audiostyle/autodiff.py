"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation in insertion order, which is also a
valid topological order, so :meth:`Tape.backward` is a single reverse sweep.
Each recorded :class:`Tensor` is a graph node: it keeps its value, the ids of
its inputs and a vector-Jacobian-product closure over whatever forward values
the backward rule needs.

Arrays keep the dtype they are created with; use float64 inputs for
gradient checks and float32 for training throughput.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, NumericError, ShapeError

Vjp = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "_tape", "id", "op", "inputs", "vjp", "requires_grad")

    def __init__(self, data, tape, id, op, inputs=(), vjp=None, requires_grad=False):
        self.data = data
        self._tape = tape
        self.id = id
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.requires_grad = requires_grad

    @property
    def tape(self) -> Tape:
        return self._tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(id={self.id}, op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)


class Gradients(dict):
    """Node id -> gradient array; also indexable by the Tensor itself."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return super().__getitem__(key)


class Tape:
    def __init__(self):
        self.nodes: list[Tensor] = []

    def __len__(self):
        return len(self.nodes)

    def release(self) -> None:
        """Drop the recorded graph.

        Tensors and the tape reference each other, so without this a finished
        graph waits for the cycle collector; loops that build one graph per
        step call it to free memory immediately.
        """
        self.nodes = []

    def variable(self, value, op: str = "variable") -> Tensor:
        """Leaf that receives a gradient."""
        return self._leaf(value, op, requires_grad=True)

    def constant(self, value) -> Tensor:
        return self._leaf(value, "constant", requires_grad=False)

    def _leaf(self, value, op, requires_grad):
        data = np.array(value, copy=True)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        _check_finite(data, op)
        node = Tensor(data, self, len(self.nodes), op, requires_grad=requires_grad)
        self.nodes.append(node)
        return node

    def record(self, op: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: Vjp) -> Tensor:
        _check_finite(value, op)
        needs = any(t.requires_grad for t in inputs)
        node = Tensor(value, self, len(self.nodes), op, tuple(t.id for t in inputs),
                      vjp if needs else None, needs)
        self.nodes.append(node)
        return node

    def backward(self, loss: Tensor) -> Gradients:
        """Gradient of scalar ``loss`` for every node that requires one.

        Nodes the loss does not depend on get zero arrays.
        """
        if loss.tape is not self:
            raise InvalidInputError("loss tensor belongs to a different tape")
        if loss.data.size != 1:
            raise InvalidInputError(f"backward needs a scalar loss, got shape {loss.shape}")
        acc: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.id + 1]):
            g = acc.get(node.id)
            if g is None or node.vjp is None:
                continue
            for inp_id, ig in zip(node.inputs, node.vjp(g)):
                if ig is None or not self.nodes[inp_id].requires_grad:
                    continue
                if not np.all(np.isfinite(ig)):
                    raise NumericError(f"non-finite gradient flowing out of op {node.op!r} (node {node.id})")
                prev = acc.get(inp_id)
                acc[inp_id] = ig if prev is None else prev + ig
        out = Gradients()
        for node in self.nodes:
            if node.requires_grad:
                g = acc.get(node.id)
                out[node.id] = np.zeros_like(node.data) if g is None else g
        return out


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"op {op!r} produced non-finite values")


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise InvalidInputError("at least one operand must be a Tensor")


def _lift(x, tape: Tape) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise InvalidInputError("operands belong to different tapes")
        return x
    return tape.constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _broadcast_shapes("add", a, b)
    return tape.record("add", a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _broadcast_shapes("sub", a, b)
    return tape.record("sub", a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return mul_scalar(a, float(b))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return mul_scalar(b, float(a))
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _broadcast_shapes("mul", a, b)
    return tape.record("mul", a.data * b.data, (a, b),
                       lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return mul_scalar(a, 1.0 / float(b))
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _broadcast_shapes("div", a, b)
    out = a.data / b.data
    return tape.record("div", out, (a, b),
                       lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return a.tape.record("mul_scalar", a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return a.tape.record("add_scalar", a.data + c, (a,), lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return a.tape.record("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return a.tape.record("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by the finiteness check
        out = np.exp(a.data)
    return a.tape.record("exp", out, (a,), lambda g: (g * out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return a.tape.record("relu", np.maximum(a.data, 0), (a,), lambda g: (g * mask,))


# reductions and reshapes


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return a.tape.record("sum", np.asarray(out), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if np.ndim(axis) == 0 else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul_scalar(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return a.tape.record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def sse(a, b) -> Tensor:
    """Sum of squared differences."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape != b.shape:
        raise ShapeError(f"sse: shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    return tape.record("sse", np.asarray(np.sum(d * d)), (a, b),
                       lambda g: (2.0 * g * d, -2.0 * g * d))


def standardize(x: Tensor, axes: tuple[int, ...] | None = None, floor: float = 1e-8) -> Tensor:
    """(x - mean) / max(std, floor) over ``axes`` (all axes by default)."""
    axes = tuple(range(x.ndim)) if axes is None else tuple(axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    sigma = np.sqrt((centered * centered).mean(axis=axes, keepdims=True))
    engaged = sigma <= floor
    scale = np.where(engaged, floor, sigma)
    y = centered / scale

    def vjp(g):
        gm = g.mean(axis=axes, keepdims=True)
        gy = (g * y).mean(axis=axes, keepdims=True)
        return (np.where(engaged, g - gm, g - gm - y * gy) / scale,)

    return x.tape.record("standardize", y, (x,), vjp)


# network layers


def _as_batch(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"{op}: expected C x H x W or N x C x H x W input, got {x.shape}")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Same-padded cross-correlation; kernels are K x K x C_in x C_out."""
    if stride != 1:
        raise InvalidInputError("conv2d supports stride 1 only")
    tape = _tape_of(x, kernels, bias)
    x, kernels, bias = _lift(x, tape), _lift(kernels, tape), _lift(bias, tape)
    xb, squeeze = _as_batch(x, "conv2d")
    if kernels.ndim != 4 or kernels.shape[0] != kernels.shape[1] or kernels.shape[0] % 2 == 0:
        raise ShapeError(f"conv2d: kernels must be K x K x C_in x C_out with odd K, got {kernels.shape}")
    k, _, c_in, c_out = kernels.shape
    if xb.shape[1] != c_in:
        raise ShapeError(f"conv2d: input {x.shape} has {xb.shape[1]} channels, kernels {kernels.shape} expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernels {kernels.shape}")
    n, _, h, w = xb.shape
    p = k // 2
    # channel-major copy makes every shifted slice below a contiguous block
    xp = np.pad(xb.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (p, p), (p, p)))
    dtype = np.result_type(xb, kernels.data)
    cols = np.empty((k, k, c_in, n, h, w), dtype=dtype)
    for i in range(k):
        for j in range(k):
            cols[i, j] = xp[:, :, i : i + h, j : j + w]
    cols = cols.reshape(k * k * c_in, n * h * w)
    wmat = kernels.data.reshape(k * k * c_in, c_out)
    out = (wmat.T @ cols + bias.data[:, None]).reshape(c_out, n, h, w).transpose(1, 0, 2, 3)
    out = out[0] if squeeze else np.ascontiguousarray(out)

    def vjp(g):
        gb = g[None] if squeeze else g
        gmat = gb.transpose(1, 0, 2, 3).reshape(c_out, n * h * w)
        gk = (cols @ gmat.T).reshape(kernels.shape)
        gbias = gmat.sum(axis=1)
        dcols = (wmat @ gmat).reshape(k, k, c_in, n, h, w)
        dxp = np.zeros((c_in, n, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + h, j : j + w] += dcols[i, j]
        dx = dxp[:, :, p : p + h, p : p + w].transpose(1, 0, 2, 3)
        return (np.ascontiguousarray(dx[0] if squeeze else dx), gk, gbias)

    return tape.record("conv2d", np.ascontiguousarray(out), (x, kernels, bias), vjp)


def pooled_extent(n: int) -> int:
    return (n + 1) // 2


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling; odd extents first replicate their last row/column.

    Ties send the whole gradient to the earliest (row-major) maximum.
    """
    xb, squeeze = _as_batch(x, "maxpool2x2")
    n, c, h, w = xb.shape
    ph, pw = h % 2, w % 2
    xp = np.pad(xb, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge") if ph or pw else xb
    quads = [xp[:, :, di::2, dj::2] for di in (0, 1) for dj in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    # earliest quadrant attaining the max, in row-major window order
    idx = np.where(quads[0] == out, 0, np.where(quads[1] == out, 1, np.where(quads[2] == out, 2, 3)))
    idx = idx.astype(np.int8)

    def vjp(g):
        gb = g[None] if squeeze else g
        dxp = np.zeros(xp.shape, dtype=gb.dtype)
        for q, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            dxp[:, :, di::2, dj::2] = np.where(idx == q, gb, 0)
        dx = dxp[:, :, :h, :w].copy()
        if ph:
            dx[:, :, h - 1, :] += dxp[:, :, h, :w]
        if pw:
            dx[:, :, :, w - 1] += dxp[:, :, :h, w]
        if ph and pw:
            dx[:, :, h - 1, w - 1] += dxp[:, :, h, w]
        return (dx[0] if squeeze else dx,)

    return x.tape.record("maxpool2x2", out[0] if squeeze else out, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    xb, squeeze = _as_batch(x, "global_avg_pool")
    hw = xb.shape[2] * xb.shape[3]
    out = xb.mean(axis=(2, 3))
    if squeeze:
        out = out[0]

    def vjp(g):
        return (np.broadcast_to(g[..., None, None] / hw, x.shape).copy(),)

    return x.tape.record("global_avg_pool", out, (x,), vjp)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    tape = _tape_of(x, weights, bias)
    x, weights, bias = _lift(x, tape), _lift(weights, tape), _lift(bias, tape)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape} incompatible")
    x2 = x.data.reshape(-1, x.shape[-1])

    def vjp(g):
        g2 = g.reshape(-1, weights.shape[1])
        return ((g2 @ weights.data.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0))

    return tape.record("dense", x.data @ weights.data + bias.data, (x, weights, bias), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of ``logits`` (N x K, or K for one example)."""
    labels = np.atleast_1d(np.asarray(labels))
    z = logits.data if logits.ndim == 2 else logits.data[None]
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise InvalidInputError(f"labels must lie in [0, {z.shape[1]})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - log_norm
    rows = np.arange(len(labels))
    loss = -logp[rows, labels].mean()

    def vjp(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        d *= g / len(labels)
        return (d.reshape(logits.shape),)

    return logits.tape.record("softmax_cross_entropy", np.asarray(loss), (logits,), vjp)


def gram(features: Tensor) -> Tensor:
    """C x C matrix of channel inner products of C x H x W features."""
    if features.ndim != 3:
        raise ShapeError(f"gram: expected C x H x W features, got {features.shape}")
    c = features.shape[0]
    f = features.data.reshape(c, -1)

    def vjp(g):
        return (((g + g.T) @ f).reshape(features.shape),)

    return features.tape.record("gram", f @ f.T, (features,), vjp)


# finite-difference checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    failing_index: tuple[int, ...] | None
    indices: list[tuple[int, ...]]
    analytic: np.ndarray
    numeric: np.ndarray
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def grad_check(builder: Callable[[Tape, Tensor], Tensor], x, step: float = 1e-4,
               tolerance: float = 1e-4, seed: int = 0, max_full: int = 1000,
               sample_size: int = 100, floor: float = 1e-8,
               indices: Sequence[tuple[int, ...]] | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of ``builder`` against central differences.

    ``builder(tape, x_tensor)`` must return a scalar loss.  Inputs with more
    than ``max_full`` elements are checked on a seeded random subsample,
    unless explicit ``indices`` are given.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if step <= 0:
        raise InvalidInputError(f"step must be positive, got {step}")
    x = np.array(x, dtype=np.float64)

    tape = Tape()
    xt = tape.variable(x)
    analytic_full = tape.backward(builder(tape, xt))[xt]
    tape.release()

    def f(v):
        t = Tape()
        value = float(builder(t, t.variable(v)).data)
        t.release()
        return value

    if indices is not None:
        indices = [tuple(int(j) for j in i) for i in indices]
    else:
        if x.size > max_full:
            rng = np.random.default_rng(seed)
            flat = rng.choice(x.size, size=min(sample_size, x.size), replace=False)
        else:
            flat = np.arange(x.size)
        indices = [tuple(int(i) for i in np.unravel_index(k, x.shape)) for k in flat]
    analytic = np.array([analytic_full[i] for i in indices])
    numeric = np.empty(len(indices))
    for n, i in enumerate(indices):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        numeric[n] = (f(xp) - f(xm)) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if len(rel) else 0
    max_rel = float(rel[worst]) if len(rel) else 0.0
    failing = indices[worst] if max_rel >= tolerance else None
    return GradCheckReport(max_rel, failing, indices, analytic, numeric, tolerance)
