"""Dense float64 tensors with reverse-mode differentiation on a recording tape.

The op set is the closure needed by the generator/discriminator/encoder
forward passes and the recovery losses: elementwise arithmetic, matmul,
conv2d (stride 1, zero padding), nearest upsample x2, average pooling, crop,
the usual activations, and full reductions. Ops compute eagerly in numpy and
record a backward rule on the active ``Tape`` whenever any input requires
gradients. Without an active tape they are plain numpy with shape checking.

Tapes are entered per thread (contextvars), so independent graphs can be
evaluated concurrently without shared mutable state.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf (checked at every op boundary)."""


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "latentaudit_active_tape", default=None
)


class Tensor:
    """n-d float64 array, optionally participating in gradient recording."""

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all routed through the module-level primitives
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, 1.0 / float(other))
        raise TypeError("tensor/tensor division is not a primitive")

    def __neg__(self):
        return smul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def wrap(data: np.ndarray, requires_grad: bool = False) -> Tensor:
    """Tensor sharing ``data`` without the finite check.

    For hot paths re-wrapping arrays already validated at an op boundary
    (model parameters between steps); any later non-finite value still trips
    the per-op check.
    """
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(data, dtype=np.float64)
    t.requires_grad = requires_grad
    t.node_id = None
    return t


@dataclass
class TapeNode:
    op: str
    input_ids: tuple[int, ...]
    output_id: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive ops; inputs always precede consumers."""

    nodes: list[TapeNode] = field(default_factory=list)
    _ids: dict[int, int] = field(default_factory=dict)
    _leaves: dict[int, Tensor] = field(default_factory=dict)
    _refs: list[Tensor] = field(default_factory=list)
    _next_id: int = 0
    _token: object = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)

    def node_id_of(self, t: Tensor) -> int | None:
        return self._ids.get(id(t))

    def watch(self, t: Tensor) -> int:
        """Register a leaf so it always appears in the gradient map."""
        return self._ensure_id(t)

    def _ensure_id(self, t: Tensor) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = self._next_id
            self._next_id += 1
            self._ids[id(t)] = nid
            self._refs.append(t)  # keep alive so id() stays unique
            t.node_id = nid
            if t.requires_grad:
                self._leaves[nid] = t
        return nid

    def _record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward) -> None:
        input_ids = tuple(self._ensure_id(t) for t in inputs)
        out_id = self._ensure_id(output)
        self._leaves.pop(out_id, None)  # op outputs are interior, not leaves
        self.nodes.append(TapeNode(op, input_ids, out_id, backward))


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def backward(tape: Tape, output: Tensor) -> dict[int, Tensor]:
    """Reverse sweep; returns gradients for every requires_grad leaf.

    Leaves the output does not reach get zero gradients. The output must be
    scalar. Tensors never recorded on this tape are treated as constants.
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {}
    out_id = tape.node_id_of(output)
    if out_id is not None:
        grads[out_id] = np.ones_like(output.data)
        for node in reversed(tape.nodes):
            g = grads.pop(node.output_id, None)
            if g is None:
                continue
            for iid, gi in zip(node.input_ids, node.backward(g)):
                if gi is None:
                    continue
                acc = grads.get(iid)
                grads[iid] = gi if acc is None else acc + gi
    return {
        nid: Tensor(grads.get(nid, np.zeros_like(leaf.data)))
        for nid, leaf in tape._leaves.items()
    }


def _finish(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, make_backward) -> Tensor:
    """Finite-check the result, propagate requires_grad, record if taping."""
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")
    needs = tuple(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(needs)
    out.node_id = None
    tape = _ACTIVE_TAPE.get()
    if out.requires_grad and tape is not None:
        tape._record(op, inputs, out, make_backward(needs))
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo numpy broadcasting by summing the expanded axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e

    def bwd(needs):
        return lambda g: (
            _sum_to_shape(g, a.shape) if needs[0] else None,
            _sum_to_shape(g, b.shape) if needs[1] else None,
        )

    return _finish("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from e

    def bwd(needs):
        return lambda g: (
            _sum_to_shape(g, a.shape) if needs[0] else None,
            _sum_to_shape(-g, b.shape) if needs[1] else None,
        )

    return _finish("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e
    ad, bd = a.data, b.data

    def bwd(needs):
        return lambda g: (
            _sum_to_shape(g * bd, a.shape) if needs[0] else None,
            _sum_to_shape(g * ad, b.shape) if needs[1] else None,
        )

    return _finish("mul", (a, b), out, bwd)


def smul(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def bwd(needs):
        return lambda g: (g * c,)

    return _finish("smul", (a,), a.data * c, bwd)


def mask_mul(a: Tensor, mask) -> Tensor:
    """Elementwise multiply by a constant {0,1} mask; no gradient to the mask."""
    a = _as_tensor(a)
    m = np.asarray(mask, dtype=np.float64)
    try:
        out = a.data * m
    except ValueError as e:
        raise ShapeError(f"mask_mul: {a.shape} vs {m.shape}") from e

    def bwd(needs):
        return lambda g: (_sum_to_shape(g * m, a.shape),)

    return _finish("mask_mul", (a,), out, bwd)


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(needs):
        return lambda g: (
            g @ bd.T if needs[0] else None,
            ad.T @ g if needs[1] else None,
        )

    return _finish("matmul", (a, b), ad @ bd, bwd)


def conv2d(x: Tensor, k: Tensor, padding: int = 0) -> Tensor:
    """Cross-correlation, stride 1, zero padding. x: (N,C,H,W), k: (O,C,kh,kw)."""
    x, k = _as_tensor(x), _as_tensor(k)
    if x.data.ndim != 4 or k.data.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape}, kernel {k.shape}")
    kh, kw = k.shape[2], k.shape[3]
    p = int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {k.shape} larger than padded input")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.einsum("nchwij,ocij->nohw", win, k.data, optimize=True)
    kd = k.data
    in_shape = x.shape

    def bwd(needs):
        def run(g):
            gx = gk = None
            if needs[1]:
                gk = np.einsum("nchwij,nohw->ocij", win, g, optimize=True)
            if needs[0]:
                gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
                kflip = kd[:, :, ::-1, ::-1]
                gx_full = np.einsum("nohwij,ocij->nchw", gwin, kflip, optimize=True)
                gx = gx_full[:, :, p : p + in_shape[2], p : p + in_shape[3]] if p else gx_full
            return (gx, gk)

        return run

    return _finish("conv2d", (x, k), out, bwd)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling of (N,C,H,W)."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2: expected 4-d input, got {x.shape}")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    n, c, h, w = x.shape

    def bwd(needs):
        return lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _finish("upsample2", (x,), out, bwd)


def avgpool(x: Tensor, k: int) -> Tensor:
    """Average pooling over k x k blocks of (N,C,H,W) or (C,H,W)."""
    x = _as_tensor(x)
    k = int(k)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or xd.shape[2] % k or xd.shape[3] % k:
        raise ShapeError(f"avgpool: factor {k} does not divide {x.shape}")
    n, c, h, w = xd.shape
    out = xd.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
    if squeeze:
        out = out[0]

    def bwd(needs):
        def run(g):
            gd = g[None] if squeeze else g
            gx = np.repeat(np.repeat(gd, k, axis=2), k, axis=3) / (k * k)
            return (gx[0] if squeeze else gx,)

        return run

    return _finish("avgpool", (x,), out, bwd)


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Extract a spatial rectangle from (..., H, W); backward zero-pads."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"crop2d: need spatial dims, got {x.shape}")
    H, W = x.shape[-2], x.shape[-1]
    if not (0 <= top and 0 <= left and top + height <= H and left + width <= W and height > 0 and width > 0):
        raise ShapeError(f"crop2d: rectangle {(top, left, height, width)} outside {x.shape}")
    out = x.data[..., top : top + height, left : left + width].copy()
    full_shape = x.shape

    def bwd(needs):
        def run(g):
            gx = np.zeros(full_shape)
            gx[..., top : top + height, left : left + width] = g
            return (gx,)

        return run

    return _finish("crop2d", (x,), out, bwd)


# ---------------------------------------------------------------------------
# activations and pointwise transcendentals


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    xd = x.data

    def bwd(needs):
        return lambda g: (g * (xd > 0),)

    return _finish("relu", (x,), np.maximum(xd, 0.0), bwd)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    out = np.where(xd > 0, xd, alpha * xd)

    def bwd(needs):
        return lambda g: (g * np.where(xd > 0, 1.0, alpha),)

    return _finish("leaky_relu", (x,), out, bwd)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def bwd(needs):
        return lambda g: (g * (1.0 - out * out),)

    return _finish("tanh", (x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(needs):
        return lambda g: (g * out * (1.0 - out),)

    return _finish("sigmoid", (x,), out, bwd)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    xd = x.data

    def bwd(needs):
        return lambda g: (g / xd,)

    return _finish("log", (x,), out, bwd)


# ---------------------------------------------------------------------------
# shape and reductions


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {x.shape} -> {shape}") from e
    old = x.shape

    def bwd(needs):
        return lambda g: (g.reshape(old),)

    return _finish("reshape", (x,), out.copy(), bwd)


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def bwd(needs):
        return lambda g: (np.broadcast_to(g, shape).copy(),)

    return _finish("sum", (x,), np.asarray(x.data.sum()), bwd)


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape, n = x.shape, x.size

    def bwd(needs):
        return lambda g: (np.broadcast_to(g / n, shape).copy(),)

    return _finish("mean", (x,), np.asarray(x.data.mean()), bwd)


def squared_l2(x: Tensor) -> Tensor:
    """Scalar sum of squares."""
    x = _as_tensor(x)
    xd = x.data

    def bwd(needs):
        return lambda g: (2.0 * g * xd,)

    return _finish("squared_l2", (x,), np.asarray((xd * xd).sum()), bwd)


def l1_norm(x: Tensor) -> Tensor:
    """Scalar sum of absolute values; subgradient 0 at exact zeros."""
    x = _as_tensor(x)
    xd = x.data

    def bwd(needs):
        return lambda g: (g * np.sign(xd),)

    return _finish("l1_norm", (x,), np.asarray(np.abs(xd).sum()), bwd)


# ---------------------------------------------------------------------------
# gradient utilities


def grad(objective: Callable[[Tensor], Tensor], x: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient of a scalar objective at x (one fresh tape)."""
    xt = Tensor(np.asarray(x, dtype=np.float64).copy(), requires_grad=True)
    with Tape() as tape:
        tape.watch(xt)
        out = objective(xt)
    g = backward(tape, out)[tape.node_id_of(xt)]
    return out.item(), g.data


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    relative error per coordinate: |ad - fd| / max(1, |fd|).
    """
    x0 = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    _, g_ad = grad(f, x0)
    flat = x0.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        xs = flat.copy()
        xs[i] += step
        fp = f(Tensor(xs.reshape(x0.shape))).item()
        xs[i] -= 2 * step
        fm = f(Tensor(xs.reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError("grad_check: objective non-finite near x")
        fd = (fp - fm) / (2 * step)
        err = abs(g_ad.reshape(-1)[i] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst
