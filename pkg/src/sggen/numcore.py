"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything differentiable in the pipeline is composed from the operations in
this module. Tensors wrap a numpy array; each operation whose inputs require
gradients attaches a ``TapeNode`` to its output. ``backward(loss)`` traces the
graph reachable from a scalar loss into a ``ComputeTape`` (forward order) and
replays it in reverse, accumulating gradients into every tensor that requires
them. Fan-out therefore sums path gradients instead of overwriting.

Broadcasting is deliberately minimal: elementwise ops accept operands of
identical shape, or one scalar (0-d) operand. Anything wider raises
``ShapeError``.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "ComputeTape",
    "backward",
    "grad_value",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "matvec",
    "tanh",
    "relu",
    "leaky_relu",
    "sigmoid",
    "absval",
    "exp",
    "log",
    "clamp",
    "smooth_l1",
    "softmax",
    "tsum",
    "tmean",
    "spatial_mean",
    "concat",
    "reshape",
    "row",
    "at",
    "tile_rows",
    "tile_spatial",
    "conv2d",
    "avg_pool2d",
    "upsample_nearest",
    "bilinear_warp",
    "linear",
    "stack_rows",
    "dot",
]


class TapeNode:
    """One executed differentiable operation: inputs, output, and its pullback.

    ``backward_fn(out_grad)`` returns one gradient array per parent (``None``
    for parents that do not require gradients).
    """

    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """A fixed-shape float64 array, immutable after creation except for
    gradient accumulation (and in-place parameter updates between tapes)."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        """A gradient-free view of the same values (copies the array)."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the primary API.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def grad_value(t: Tensor) -> np.ndarray:
    """Gradient of ``t`` after a backward pass; zeros if it was unreachable."""
    if t.grad is None:
        return np.zeros(t.shape, dtype=np.float64)
    return t.grad


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = TapeNode(tuple(parents), backward_fn)
    return out


class ComputeTape:
    """Ordered record of the differentiable ops reachable from one output.

    The record is in forward (topological) order, so replaying it back to
    front visits every node after all of its consumers.
    """

    def __init__(self, ordered_tensors):
        self._order = ordered_tensors

    @classmethod
    def trace(cls, output: Tensor) -> "ComputeTape":
        order = []
        seen = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t._node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._node.parents:
                if p._node is not None and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def backward(self, output: Tensor) -> None:
        grads = {id(output): np.ones(output.shape, dtype=np.float64)}
        holders = {id(output): output}
        for t in reversed(self._order):
            g = grads.get(id(t))
            if g is None:
                continue
            parent_grads = t._node.backward_fn(g)
            for p, pg in zip(t._node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg.astype(np.float64, copy=False)
                    holders[key] = p
        for key, t in holders.items():
            if not t.requires_grad:
                continue
            g = np.asarray(grads[key], dtype=np.float64).reshape(t.shape)
            if t.grad is None:
                t.grad = g.copy()
            else:
                t.grad = t.grad + g


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires_grad tensor reachable from a
    scalar loss. Repeated calls accumulate."""
    if loss.shape != ():
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    ComputeTape.trace(loss).backward(loss)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _binary_shapes(a, b, opname):
    if a.shape == b.shape:
        return a.shape
    if a.shape == ():
        return b.shape
    if b.shape == ():
        return a.shape
    raise ShapeError(f"{opname}: operand shapes disagree: {a.shape} vs {b.shape}")


def _reduce_to(g, shape):
    # Inverse of the scalar broadcast: a 0-d operand receives the summed grad.
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bwd(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _make(ad * bd, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), bwd)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """w @ x for a 2-d matrix and a 1-d vector."""
    if w.ndim != 2 or x.ndim != 1:
        raise ShapeError(f"matvec expects (m,n) @ (n,), got {w.shape} and {x.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: inner dimensions disagree: {w.shape} vs {x.shape}")
    wd, xd = w.data, x.data

    def bwd(g):
        return np.outer(g, xd), wd.T @ g

    return _make(wd @ xd, (w, x), bwd)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Scalar product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"dot: operand shapes disagree: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g * bd, g * ad

    return _make(np.asarray((ad * bd).sum()), (a, b), bwd)


def linear(w: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map w @ x (+ b) on a 1-d input."""
    out = matvec(w, x)
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def absval(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def smooth_l1(a: Tensor) -> Tensor:
    """Elementwise smooth-L1: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside."""
    x = a.data
    quad = np.abs(x) < 1.0
    y = np.where(quad, 0.5 * x * x, np.abs(x) - 0.5)
    dydx = np.where(quad, x, np.sign(x))
    return _make(y, (a,), lambda g: (g * dydx,))


# ---------------------------------------------------------------------------
# reductions and normalization


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.size == 0:
        raise ShapeError("softmax on an empty tensor")
    ax = axis if axis >= 0 else x.ndim + axis
    if not 0 <= ax < max(x.ndim, 1):
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=ax, keepdims=True)
        return ((g - inner) * y,)

    return _make(y, (x,), bwd)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    shape = a.shape

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), bwd)


def tmean(a: Tensor) -> Tensor:
    n = a.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def spatial_mean(a: Tensor) -> Tensor:
    """(C, H, W) -> (C,) mean over the spatial grid."""
    if a.ndim != 3:
        raise ShapeError(f"spatial_mean expects (C,H,W), got {a.shape}")
    c, h, w = a.shape
    n = h * w

    def bwd(g):
        return (np.repeat(g, n).reshape(c, h, w) / n,)

    return _make(a.data.mean(axis=(1, 2)), (a,), bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            o != b for d, (o, b) in enumerate(zip(other, base)) if d != axis % max(len(base), 1)
        ):
            raise ShapeError(
                f"concat: shapes disagree off axis {axis}: {tensors[0].shape} vs {t.shape}"
            )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def stack_rows(vectors) -> Tensor:
    """Stack 1-d tensors of equal length into a (k, n) matrix."""
    vectors = list(vectors)
    if not vectors:
        raise ShapeError("stack_rows of an empty sequence")
    n = vectors[0].shape[0]
    for v in vectors:
        if v.ndim != 1 or v.shape[0] != n:
            raise ShapeError(f"stack_rows: inconsistent row shape {v.shape}, expected ({n},)")

    def bwd(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _make(np.stack([v.data for v in vectors]), tuple(vectors), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def row(a: Tensor, i: int) -> Tensor:
    """Row i of a 2-d tensor, differentiable into the source."""
    if a.ndim != 2:
        raise ShapeError(f"row expects a 2-d tensor, got {a.shape}")

    def bwd(g):
        out = np.zeros(a.shape, dtype=np.float64)
        out[i] = g
        return (out,)

    return _make(a.data[i].copy(), (a,), bwd)


def at(a: Tensor, i: int) -> Tensor:
    """Scalar element i of a 1-d tensor."""
    if a.ndim != 1:
        raise ShapeError(f"at expects a 1-d tensor, got {a.shape}")

    def bwd(g):
        out = np.zeros(a.shape, dtype=np.float64)
        out[i] = g
        return (out,)

    return _make(np.asarray(a.data[i]), (a,), bwd)


def tile_rows(v: Tensor, k: int) -> Tensor:
    """(n,) -> (k, n) by duplication; backward sums over the copies."""
    if v.ndim != 1:
        raise ShapeError(f"tile_rows expects a 1-d tensor, got {v.shape}")
    return _make(np.tile(v.data, (k, 1)), (v,), lambda g: (g.sum(axis=0),))


def tile_spatial(v: Tensor, h: int, w: int) -> Tensor:
    """(C,) -> (C, h, w) by duplication; backward sums over the grid."""
    if v.ndim != 1:
        raise ShapeError(f"tile_spatial expects a 1-d tensor, got {v.shape}")
    c = v.shape[0]

    def bwd(g):
        return (g.sum(axis=(1, 2)),)

    return _make(np.broadcast_to(v.data.reshape(c, 1, 1), (c, h, w)).copy(), (v,), bwd)


# ---------------------------------------------------------------------------
# spatial operations


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a (C,H,W) input with an (O,C,kh,kw) kernel."""
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W) and (O,C,kh,kw), got {x.shape} and {kernel.shape}")
    c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: kernel {kernel.shape} does not fit padded input {x.shape} (pad={pad})")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise ShapeError(
            f"conv2d: non-integral output size for input {x.shape}, kernel {kernel.shape}, "
            f"stride={stride}, pad={pad}"
        )
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1

    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # im2col: one strided slice per kernel offset.
    cols = np.empty((c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = padded[:, i : i + oh * stride : stride, j : j + ow * stride : stride]
    cols2 = cols.reshape(c * kh * kw, oh * ow)
    kflat = kernel.data.reshape(o, c * kh * kw)
    out = (kflat @ cols2).reshape(o, oh, ow)

    def bwd(g):
        gflat = g.reshape(o, oh * ow)
        gk = (gflat @ cols2.T).reshape(o, c, kh, kw)
        gcols = (kflat.T @ gflat).reshape(c, kh, kw, oh, ow)
        gpad = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                gpad[:, i : i + oh * stride : stride, j : j + ow * stride : stride] += gcols[:, i, j]
        gx = gpad[:, pad : pad + h, pad : pad + w] if pad else gpad
        return gx, gk

    return _make(out, (x, kernel), bwd)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping factor x factor average pooling of a (C,H,W) tensor."""
    if x.ndim != 3:
        raise ShapeError(f"avg_pool2d expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool2d: {x.shape} not divisible by factor {factor}")
    oh, ow = h // factor, w // factor
    blocks = x.data.reshape(c, oh, factor, ow, factor)
    out = blocks.mean(axis=(2, 4))
    n = factor * factor

    def bwd(g):
        g4 = np.repeat(np.repeat(g, factor, axis=1), factor, axis=2)
        return (g4 / n,)

    return _make(out, (x,), bwd)


def upsample_nearest(x: Tensor) -> Tensor:
    """Each cell of a (C,H,W) tensor replicated into a 2x2 block."""
    if x.ndim != 3:
        raise ShapeError(f"upsample_nearest expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _make(out, (x,), bwd)


def bilinear_warp(embedding: Tensor, box, out_h: int, out_w: int) -> Tensor:
    """Stretch a (D, gh, gw) grid over ``box`` on an (out_h, out_w) canvas.

    Output pixels whose centers fall outside the box are zero. The grid is
    sampled at pixel centers mapped into box-normalized coordinates, with
    edge clamping.
    """
    if embedding.ndim != 3:
        raise ShapeError(f"bilinear_warp expects (D,gh,gw) embedding, got {embedding.shape}")
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"bilinear_warp: output dims must be positive, got {out_h}x{out_w}")
    if box.w <= 0 or box.h <= 0:
        raise ShapeError(f"bilinear_warp: zero-area box {box}")
    if box.x >= out_w or box.y >= out_h or box.x + box.w <= 0 or box.y + box.h <= 0:
        raise ShapeError(f"bilinear_warp: box {box} does not intersect the {out_h}x{out_w} canvas")
    d, gh, gw = embedding.shape

    ys = np.arange(out_h) + 0.5
    xs = np.arange(out_w) + 0.5
    u = (xs - box.x) / box.w   # (out_w,)
    v = (ys - box.y) / box.h   # (out_h,)
    inside = (v[:, None] >= 0) & (v[:, None] < 1) & (u[None, :] >= 0) & (u[None, :] < 1)

    gx = np.clip(u * gw - 0.5, 0.0, gw - 1.0)
    gy = np.clip(v * gh - 0.5, 0.0, gh - 1.0)
    x0 = np.floor(gx).astype(int)
    y0 = np.floor(gy).astype(int)
    x1 = np.minimum(x0 + 1, gw - 1)
    y1 = np.minimum(y0 + 1, gh - 1)
    fx = gx - x0
    fy = gy - y0

    w00 = (1 - fy)[:, None] * (1 - fx)[None, :] * inside
    w01 = (1 - fy)[:, None] * fx[None, :] * inside
    w10 = fy[:, None] * (1 - fx)[None, :] * inside
    w11 = fy[:, None] * fx[None, :] * inside
    iy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
    iy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
    ix0 = np.broadcast_to(x0[None, :], (out_h, out_w))
    ix1 = np.broadcast_to(x1[None, :], (out_h, out_w))

    e = embedding.data
    out = (
        e[:, iy0, ix0] * w00
        + e[:, iy0, ix1] * w01
        + e[:, iy1, ix0] * w10
        + e[:, iy1, ix1] * w11
    )

    def bwd(g):
        ge = np.zeros((d, gh, gw), dtype=np.float64)
        for ch in range(d):
            np.add.at(ge[ch], (iy0, ix0), g[ch] * w00)
            np.add.at(ge[ch], (iy0, ix1), g[ch] * w01)
            np.add.at(ge[ch], (iy1, ix0), g[ch] * w10)
            np.add.at(ge[ch], (iy1, ix1), g[ch] * w11)
        return (ge,)

    return _make(out, (embedding,), bwd)
