"""Dense float64 tensors with reverse-mode automatic differentiation.

Implements exactly the operations the tracking network and its losses need:
valid (unpadded) 2-D convolution, max pooling, global average pooling, affine
layers, numerically stable softmax / softplus / log-sum-exp reductions,
bilinear ROI sampling and channel gating. Every operation that produces a
tensor from at least one ``requires_grad`` input records its backward rule;
``backward`` replays the records in reverse execution order.

Array arithmetic is delegated to numpy; the oracles in the test suite stay
independent (plain nested loops and central finite differences).
"""

from __future__ import annotations

import itertools
import math
import struct
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes cannot be combined."""


class ContractError(ValueError):
    """An operation was called outside its contract."""


_SEQ = itertools.count()


class _Op:
    """Backward record: which tensors fed an op and how to push gradients back."""

    __slots__ = ("name", "inputs", "backward")

    def __init__(self, name: str, inputs: tuple["Tensor", ...],
                 backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]):
        self.name = name
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """Row-major float64 array, optionally participating in gradient recording.

    ``grad`` is populated (same shape as ``data``) by :func:`backward` for every
    ``requires_grad`` tensor on a path to the differentiated scalar.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op: _Op | None = None
        self.seq = next(_SEQ)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        old = self.data.shape
        out_data = self.data.reshape(shape)

        def bw(g):
            return (g.reshape(old),)

        return _result(out_data, "reshape", (self,), bw)

    def sum(self) -> "Tensor":
        src = self

        def bw(g):
            return (np.full_like(src.data, float(g)),)

        return _result(np.array(self.data.sum()), "sum", (self,), bw)

    def mean(self) -> "Tensor":
        src = self
        n = self.data.size

        def bw(g):
            return (np.full_like(src.data, float(g) / n),)

        return _result(np.array(self.data.mean()), "mean", (self,), bw)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, name: str, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.op = _Op(name, inputs, backward)
    return out


class Tape:
    """The operations reachable from a root tensor, in execution order.

    ``replay_backward`` visits each record exactly once, newest first, and
    accumulates gradients into the ``grad`` buffers of the record inputs.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if t.op is None or id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t.op.inputs)
        nodes.sort(key=lambda t: t.seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def replay_backward(self) -> None:
        for t in reversed(self.nodes):
            g = t.grad
            if g is None:
                continue
            grads = t.op.backward(g)
            for inp, gi in zip(t.op.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi.reshape(inp.data.shape)


def backward(out: Tensor) -> None:
    """Populate ``grad`` on every requires_grad ancestor of a scalar output."""
    if out.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {out.data.shape}")
    if not out.requires_grad:
        return
    out.grad = np.ones_like(out.data)
    Tape.trace(out).replay_backward()


def zero_grads(tensors: Sequence[Tensor] | Mapping[str, Tensor]) -> None:
    vals = tensors.values() if isinstance(tensors, Mapping) else tensors
    for t in vals:
        t.grad = None


# -- elementwise ops -------------------------------------------------------


def _fit(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # reduce a broadcast gradient back onto a size-1 operand
    if g.shape == shape:
        return g
    return np.array(g.sum()).reshape(shape)


def _check_pair(a: Tensor, b: Tensor, name: str) -> None:
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{name}: shapes {a.data.shape} and {b.data.shape} do not align")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "add")

    def bw(g):
        return _fit(g, a.data.shape), _fit(g, b.data.shape)

    return _result(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "sub")

    def bw(g):
        return _fit(g, a.data.shape), _fit(-g, b.data.shape)

    return _result(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "mul")

    def bw(g):
        ga = _fit(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _fit(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, "mul", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        return (-g,)

    return _result(-a.data, "neg", (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        return (g * out_data,)

    return _result(out_data, "exp", (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        return (g / a.data,)

    return _result(np.log(a.data), "log", (a,), bw)


def relu(a: Tensor) -> Tensor:
    """max(0, t); subgradient at 0 is 0."""
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), "relu", (a,), bw)


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    """1 / (1 + e^(-t)), overflow-safe on both tails."""
    s = _sigmoid_arr(a.data)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _result(s, "sigmoid", (a,), bw)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^t) computed as logaddexp(0, t)."""
    def bw(g):
        return (g * _sigmoid_arr(a.data),)

    return _result(np.logaddexp(0.0, a.data), "softplus", (a,), bw)


# -- network building blocks -----------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, stride: int, bias: Tensor) -> Tensor:
    """Valid 2-D convolution of an H×W×Cin map with a k×k×Cin×Cout kernel.

    Output side is floor((H - k) / stride) + 1; no padding.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: input {x.data.shape} must be H×W×Cin and "
                         f"kernel {kernel.data.shape} must be k×k×Cin×Cout")
    H, W, cin = x.data.shape
    k, k2, kin, cout = kernel.data.shape
    if k != k2 or kin != cin:
        raise ShapeError(f"conv2d: input {x.data.shape} does not match kernel {kernel.data.shape}")
    if H < k or W < k:
        raise ShapeError(f"conv2d: input {x.data.shape} smaller than kernel {kernel.data.shape}")
    if stride < 1:
        raise ContractError(f"conv2d: stride must be positive, got {stride}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.data.shape} must be ({cout},)")

    windows = sliding_window_view(x.data, (k, k), axis=(0, 1))[::stride, ::stride]
    out = np.tensordot(windows, kernel.data, axes=([3, 4, 2], [0, 1, 2])) + bias.data

    def bw(g):
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = np.tensordot(windows, g, axes=([0, 1], [0, 1]))  # (Cin, k, k, Cout)
            gk = np.transpose(gk, (1, 2, 0, 3))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            hp, wp = g.shape[:2]
            for i in range(k):
                for j in range(k):
                    gx[i:i + stride * hp:stride, j:j + stride * wp:stride, :] += \
                        np.tensordot(g, kernel.data[i, j], axes=([2], [1]))
        if bias.requires_grad:
            gb = g.sum(axis=(0, 1))
        return gx, gk, gb

    return _result(out, "conv2d", (x, kernel, bias), bw)


def max_pool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Channel-wise max over window×window patches; ties route gradient to the
    first (row-major) maximum."""
    if x.data.ndim != 3:
        raise ShapeError(f"max_pool2d: input {x.data.shape} must be H×W×C")
    H, W, C = x.data.shape
    if window > H or window > W:
        raise ShapeError(f"max_pool2d: window {window} exceeds input {x.data.shape}")

    w = sliding_window_view(x.data, (window, window), axis=(0, 1))[::stride, ::stride]
    hp, wp = w.shape[:2]
    flat = w.reshape(hp, wp, C, window * window)
    idx = flat.argmax(axis=3)
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]

    def bw(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros_like(x.data)
        wy, wx = np.divmod(idx, window)
        ys = np.arange(hp)[:, None, None] * stride + wy
        xs = np.arange(wp)[None, :, None] * stride + wx
        cs = np.broadcast_to(np.arange(C)[None, None, :], idx.shape)
        np.add.at(gx, (ys, xs, cs), g)
        return (gx,)

    return _result(out, "max_pool2d", (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: H×W×C -> C."""
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool: input {x.data.shape} must be H×W×C")
    H, W, _ = x.data.shape

    def bw(g):
        return (np.broadcast_to(g / (H * W), x.data.shape).copy(),)

    return _result(x.data.mean(axis=(0, 1)), "global_avg_pool", (x,), bw)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map weight @ x + bias for a 1-D input."""
    if x.data.ndim != 1 or weight.data.ndim != 2:
        raise ShapeError(f"fully_connected: input {x.data.shape} must be 1-D and "
                         f"weight {weight.data.shape} 2-D")
    dout, din = weight.data.shape
    if x.data.shape != (din,):
        raise ShapeError(f"fully_connected: input {x.data.shape} does not match weight {weight.data.shape}")
    if bias.data.shape != (dout,):
        raise ShapeError(f"fully_connected: bias {bias.data.shape} must be ({dout},)")

    def bw(g):
        gx = weight.data.T @ g if x.requires_grad else None
        gw = np.outer(g, x.data) if weight.requires_grad else None
        gb = g if bias.requires_grad else None
        return gx, gw, gb

    return _result(weight.data @ x.data + bias.data, "fully_connected", (x, weight, bias), bw)


def softmax(x: Tensor) -> Tensor:
    """Stable softmax over a 1-D input; outputs are positive and sum to 1."""
    if x.data.ndim != 1 or x.data.size < 1:
        raise ShapeError(f"softmax: input {x.data.shape} must be a non-empty vector")
    z = x.data - x.data.max()
    e = np.exp(z)
    p = e / e.sum()

    def bw(g):
        return (p * (g - float(p @ g)),)

    return _result(p, "softmax", (x,), bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two vectors of equal length."""
    if a.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"dot: shapes {a.data.shape} and {b.data.shape} must be equal vectors")

    def bw(g):
        ga = float(g) * b.data if a.requires_grad else None
        gb = float(g) * a.data if b.requires_grad else None
        return ga, gb

    return _result(np.array(a.data @ b.data), "dot", (a, b), bw)


def stack(ts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if not ts:
        raise ContractError("stack: need at least one tensor")
    shape = ts[0].data.shape
    for t in ts:
        if t.data.shape != shape:
            raise ShapeError(f"stack: mixed shapes {shape} and {t.data.shape}")
    inputs = tuple(ts)

    def bw(g):
        return tuple(g[i] if inputs[i].requires_grad else None for i in range(len(inputs)))

    return _result(np.stack([t.data for t in ts], axis=0), "stack", inputs, bw)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], computed without forming exp overflow."""
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy: logits {logits.data.shape} must be a vector")
    n = logits.data.size
    if not 0 <= label < n:
        raise ContractError(f"cross_entropy: label {label} out of range for {n} classes")
    m = logits.data.max()
    z = logits.data - m
    lse = m + math.log(np.exp(z).sum())

    def bw(g):
        p = np.exp(logits.data - lse)
        p[label] -= 1.0
        return (float(g) * p,)

    return _result(np.array(lse - logits.data[label]), "cross_entropy", (logits,), bw)


def log1p_sum_exp(v: Tensor) -> Tensor:
    """log(1 + sum_k exp(v_k)), stable for large positive and negative entries."""
    if v.data.ndim != 1:
        raise ShapeError(f"log1p_sum_exp: input {v.data.shape} must be a vector")
    m = max(float(v.data.max()), 0.0) if v.data.size else 0.0
    denom = math.exp(-m) + np.exp(v.data - m).sum()
    out = m + math.log(denom)

    def bw(g):
        return (float(g) * np.exp(v.data - m) / denom,)

    return _result(np.array(out), "log1p_sum_exp", (v,), bw)


def l2_normalize(v: Tensor) -> Tensor:
    """v / ||v||2; rejects the all-zero vector."""
    if v.data.ndim != 1:
        raise ShapeError(f"l2_normalize: input {v.data.shape} must be a vector")
    n = float(np.linalg.norm(v.data))
    if n == 0.0:
        raise ContractError("l2_normalize: cannot normalize an all-zero vector")
    y = v.data / n

    def bw(g):
        return ((g - y * float(y @ g)) / n,)

    return _result(y, "l2_normalize", (v,), bw)


def channel_scale(f: Tensor, a: Tensor) -> Tensor:
    """Scale channel l of an H×W×C map by a[l]."""
    if f.data.ndim != 3 or a.data.ndim != 1 or f.data.shape[2] != a.data.shape[0]:
        raise ShapeError(f"channel_scale: map {f.data.shape} does not match gains {a.data.shape}")

    def bw(g):
        gf = g * a.data if f.requires_grad else None
        ga = (g * f.data).sum(axis=(0, 1)) if a.requires_grad else None
        return gf, ga

    return _result(f.data * a.data, "channel_scale", (f, a), bw)


def roi_align(f: Tensor, box: tuple[float, float, float, float], out_side: int) -> Tensor:
    """Bilinearly sample an out_side² grid of bin centres over a continuous box.

    The box is (x, y, w, h) in feature corner coordinates: cell (r, c) spans
    [c, c+1) × [r, r+1), so its centre sits at (c+0.5, r+0.5). One sample per
    bin; samples outside the grid replicate the border cell. Differentiable
    with respect to the feature map only.
    """
    if f.data.ndim != 3:
        raise ShapeError(f"roi_align: input {f.data.shape} must be H×W×C")
    H, W, _ = f.data.shape
    x, y, w, h = (float(t) for t in box)
    if w <= 0.0 or h <= 0.0:
        raise ContractError(f"roi_align: degenerate box {(x, y, w, h)}")
    if x + w <= 0.0 or y + h <= 0.0 or x >= W or y >= H:
        raise ContractError(f"roi_align: box {(x, y, w, h)} does not intersect the {H}×{W} grid")

    us = x + (np.arange(out_side) + 0.5) * (w / out_side) - 0.5
    vs = y + (np.arange(out_side) + 0.5) * (h / out_side) - 0.5
    x0f, y0f = np.floor(us), np.floor(vs)
    tx, ty = us - x0f, vs - y0f
    x0 = np.clip(x0f, 0, W - 1).astype(int)
    x1 = np.clip(x0f + 1, 0, W - 1).astype(int)
    y0 = np.clip(y0f, 0, H - 1).astype(int)
    y1 = np.clip(y0f + 1, 0, H - 1).astype(int)
    w00 = np.outer(1 - ty, 1 - tx)
    w01 = np.outer(1 - ty, tx)
    w10 = np.outer(ty, 1 - tx)
    w11 = np.outer(ty, tx)
    corners = ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1))
    out = sum(wgt[:, :, None] * f.data[np.ix_(yy, xx)] for wgt, yy, xx in corners)

    def bw(g):
        if not f.requires_grad:
            return (None,)
        gf = np.zeros_like(f.data)
        for wgt, yy, xx in corners:
            np.add.at(gf, (yy[:, None], xx[None, :]), g * wgt[:, :, None])
        return (gf,)

    return _result(out, "roi_align", (f,), bw)


# -- verification ----------------------------------------------------------


def grad_check(function: Callable[[], Tensor], params: Sequence[Tensor],
               h: float = 1e-5, sample_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central finite-difference grads.

    Per element: |analytic - (f(p+h) - f(p-h)) / 2h| / max(1e-8, |analytic|).
    ``sample_per_param`` bounds the number of probed elements per parameter
    (all elements when None); sampling positions come from ``rng``.
    """
    out = function()
    if out.data.size != 1:
        raise ContractError(f"grad_check: function output {out.data.shape} is not scalar")
    zero_grads(params)
    backward(out)
    worst = 0.0
    for pi, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        n = flat.size
        if sample_per_param is None or sample_per_param >= n:
            positions = range(n)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            positions = sorted(rng.choice(n, size=sample_per_param, replace=False))
        for j in positions:
            orig = flat[j]
            flat[j] = orig + h
            f1 = function().item()
            flat[j] = orig - h
            f0 = function().item()
            flat[j] = orig
            if not (math.isfinite(f1) and math.isfinite(f0)):
                raise ContractError(f"grad_check: non-finite value at parameter {pi}, element {j}")
            numeric = (f1 - f0) / (2.0 * h)
            rel = abs(aflat[j] - numeric) / max(1e-8, abs(aflat[j]))
            worst = max(worst, rel)
    return worst


# -- parameter checkpoints ---------------------------------------------------

CHECKPOINT_MAGIC = b"UMA1"


def save_tensors(path, named: Mapping[str, Tensor | np.ndarray]) -> None:
    """Write named tensors: magic, then per tensor name-length/name/rank/dims
    (uint32 LE) followed by raw little-endian float64 data. Bit-exact."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, t in named.items():
            arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by :func:`save_tensors`."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ContractError(f"{path}: not a parameter checkpoint")
        while True:
            head = fh.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ContractError(f"{path}: truncated data for tensor '{name}'")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    return out
