"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays in NCHW layout for images and activations (1-D for
conv biases, 0-D for scalar losses). Operations are pure functions; when a
:class:`GradTape` is active and an input requires gradients, the op appends
a node to the tape. `GradTape.backward` then walks the recorded nodes in
reverse, which is reverse-topological order because ops record in execution
order.

f32 is the working precision; every op also runs in f64 so that gradient
checks against central finite differences have meaningful tolerances. No op
uses an unordered reduction, so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Tensor:
    """Immutable-by-convention dense array plus a requires_grad flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, order="C")
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(np.asarray(other, self.data.dtype)))

    def __sub__(self, other):
        return sub(self, other if isinstance(other, Tensor) else Tensor(np.asarray(other, self.data.dtype)))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


class Parameter:
    """Named trainable tensor with a zero-initialized gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = Tensor(value, requires_grad=True)
        self.grad = np.zeros_like(self.value.data)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def astype(self, dtype):
        self.value = Tensor(self.value.data.astype(dtype), requires_grad=True)
        self.grad = self.grad.astype(dtype)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Gradients:
    """Read-only view of the gradients produced by one backward pass."""

    def __init__(self, table: dict):
        self._table = table

    def get(self, tensor: Tensor) -> np.ndarray:
        """Gradient of the loss w.r.t. ``tensor`` (zeros if unused)."""
        g = self._table.get(id(tensor))
        if g is None:
            return np.zeros_like(tensor.data)
        return g


_ACTIVE_TAPE: Optional["GradTape"] = None


class GradTape:
    """Recorded computation graph for one reverse-mode backward pass.

    Nodes are appended in execution order, which is a topological order of
    the graph, so a single reverse sweep propagates gradients. A tape is
    meant to cover one training step and must not be shared across steps.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a GradTape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss: Tensor) -> Gradients:
        """Accumulate d(loss)/d(tensor) for every tensor reachable from loss.

        ``loss`` must be a 0-d tensor recorded on this tape. Tensors with
        ``requires_grad`` also receive the result in-place via the gradient
        table returned; unused parameters simply read back zeros.
        """
        if loss.data.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        table: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        for node in reversed(self.nodes):
            g_out = table.get(id(node.output))
            if g_out is None:
                continue
            grads = node.backward_fn(g_out)
            for tens, g in zip(node.inputs, grads):
                if g is None or not tens.requires_grad:
                    continue
                prev = table.get(id(tens))
                table[id(tens)] = g if prev is None else prev + g
        return Gradients(table)


def _record(op: str, inputs: Sequence[Tensor], output: Tensor,
            backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
    if _ACTIVE_TAPE is not None and output.requires_grad:
        _ACTIVE_TAPE.nodes.append(_Node(op, tuple(inputs), output, backward_fn))


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _check_same_shape(op, a, b):
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast_scalar(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    if like.ndim == 0:
        return np.asarray(g.sum(), dtype=like.dtype)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b; shapes must match or one operand is 0-d."""
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data, _needs_grad(a, b))

    def backward(g):
        return (_unbroadcast_scalar(g, a.data), _unbroadcast_scalar(g, b.data))

    _record("add", (a, b), out, backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a - b; shapes must match or one operand is 0-d."""
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data, _needs_grad(a, b))

    def backward(g):
        return (_unbroadcast_scalar(g, a.data), _unbroadcast_scalar(-g, b.data))

    _record("sub", (a, b), out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a * b; shapes must match or one operand is 0-d."""
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data, _needs_grad(a, b))

    def backward(g):
        return (_unbroadcast_scalar(g * b.data, a.data),
                _unbroadcast_scalar(g * a.data, b.data))

    _record("mul", (a, b), out, backward)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """a * c for a python scalar c."""
    c = a.data.dtype.type(c)
    out = Tensor(a.data * c, a.requires_grad)
    _record("scale", (a,), out, lambda g: (g * c,))
    return out


def reciprocal(a: Tensor, eps: float = 0.0) -> Tensor:
    """Elementwise 1 / (a + eps); eps guards division by zero."""
    denom = a.data + a.data.dtype.type(eps)
    out = Tensor(1.0 / denom, a.requires_grad)
    inv = out.data

    def backward(g):
        return (-g * inv * inv,)

    _record("reciprocal", (a,), out, backward)
    return out


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """max(x, slope*x); the subgradient at 0 takes the positive branch."""
    if not (0.0 <= slope < 1.0):
        raise ValueError(f"leaky_relu slope must be in [0, 1), got {slope}")
    s = x.data.dtype.type(slope)
    out = Tensor(np.where(x.data >= 0, x.data, x.data * s), x.requires_grad)
    mask = x.data >= 0

    def backward(g):
        return (np.where(mask, g, g * s),)

    _record("leaky_relu", (x,), out, backward)
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), overflow-free for |x| up to at least 80."""
    d = x.data
    out_data = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
    out = Tensor(out_data, x.requires_grad)
    # sigmoid(x) written via tanh stays finite for any x
    sig = 0.5 * (1.0 + np.tanh(0.5 * d))

    def backward(g):
        return (g * sig,)

    _record("softplus", (x,), out, backward)
    return out


def detach(x: Tensor) -> Tensor:
    """Same values, cut off from the graph."""
    return Tensor(x.data, requires_grad=False)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), x.requires_grad)
    orig = x.data.shape
    _record("reshape", (x,), out, lambda g: (g.reshape(orig),))
    return out


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along C; N, H, W must agree."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels: empty input list")
    first = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != 4 or s[0] != first[0] or s[2:] != first[2:]:
            raise ShapeError(f"concat_channels: incompatible shapes {first} vs {s}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1),
                 _needs_grad(*tensors))
    sizes = [t.data.shape[1] for t in tensors]

    def backward(g):
        grads = []
        start = 0
        for c in sizes:
            grads.append(g[:, start:start + c])
            start += c
        return grads

    _record("concat_channels", tensors, out, backward)
    return out


def pixel_unshuffle(x: Tensor, factor: int) -> Tensor:
    """Space-to-depth: (N,C,H,W) -> (N, C*f^2, H/f, W/f), row-major blocks."""
    if factor < 1:
        raise ValueError(f"pixel_unshuffle factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.data.shape
    if h % factor or w % factor:
        raise ShapeError(
            f"pixel_unshuffle: H={h}, W={w} not divisible by factor {factor}")
    f = factor
    out_data = (x.data.reshape(n, c, h // f, f, w // f, f)
                .transpose(0, 1, 3, 5, 2, 4)
                .reshape(n, c * f * f, h // f, w // f))
    out = Tensor(np.ascontiguousarray(out_data), x.requires_grad)

    def backward(g):
        gx = (g.reshape(n, c, f, f, h // f, w // f)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(n, c, h, w))
        return (np.ascontiguousarray(gx),)

    _record("pixel_unshuffle", (x,), out, backward)
    return out


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Depth-to-space, the exact inverse of :func:`pixel_unshuffle`."""
    if factor < 1:
        raise ValueError(f"pixel_shuffle factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.data.shape
    f = factor
    if c % (f * f):
        raise ShapeError(f"pixel_shuffle: C={c} not divisible by factor^2={f * f}")
    co = c // (f * f)
    out_data = (x.data.reshape(n, co, f, f, h, w)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(n, co, h * f, w * f))
    out = Tensor(np.ascontiguousarray(out_data), x.requires_grad)

    def backward(g):
        gx = (g.reshape(n, co, h, f, w, f)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(n, c, h, w))
        return (np.ascontiguousarray(gx),)

    _record("pixel_shuffle", (x,), out, backward)
    return out


# ---------------------------------------------------------------------------
# resampling ops
# ---------------------------------------------------------------------------

def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    """Replicate each pixel factor x factor; gradient sums the replicas."""
    if factor < 1:
        raise ValueError(f"nearest_upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.data.shape
    f = factor
    out = Tensor(np.repeat(np.repeat(x.data, f, axis=2), f, axis=3), x.requires_grad)

    def backward(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    _record("nearest_upsample", (x,), out, backward)
    return out


def _up2_axis(d: np.ndarray, axis: int) -> np.ndarray:
    # bilinear x2 with half-pixel centers: out[2k] = .25 x[k-1] + .75 x[k],
    # out[2k+1] = .75 x[k] + .25 x[k+1], edges clamped.
    def shift(arr, off):
        sl = [slice(None)] * arr.ndim
        edge = [slice(None)] * arr.ndim
        if off == -1:
            sl[axis] = slice(None, -1)
            edge[axis] = slice(None, 1)
            return np.concatenate([arr[tuple(edge)], arr[tuple(sl)]], axis=axis)
        sl[axis] = slice(1, None)
        edge[axis] = slice(-1, None)
        return np.concatenate([arr[tuple(sl)], arr[tuple(edge)]], axis=axis)

    even = 0.25 * shift(d, -1) + 0.75 * d
    odd = 0.75 * d + 0.25 * shift(d, +1)
    stacked = np.stack([even, odd], axis=axis + 1)
    new_shape = list(d.shape)
    new_shape[axis] *= 2
    return stacked.reshape(new_shape)


def _up2_axis_grad(g: np.ndarray, axis: int) -> np.ndarray:
    def take(arr, sl):
        full = [slice(None)] * arr.ndim
        full[axis] = sl
        return arr[tuple(full)]

    ge = take(g, slice(0, None, 2))
    go = take(g, slice(1, None, 2))
    gx = 0.75 * (ge + go)
    gx_main = [slice(None)] * g.ndim
    gx_main[axis] = slice(None, -1)
    gx_tail = [slice(None)] * g.ndim
    gx_tail[axis] = slice(1, None)
    gx[tuple(gx_main)] += 0.25 * take(ge, slice(1, None))
    gx[tuple(gx_tail)] += 0.25 * take(go, slice(None, -1))
    first = [slice(None)] * g.ndim
    first[axis] = slice(0, 1)
    last = [slice(None)] * g.ndim
    last[axis] = slice(-1, None)
    gx[tuple(first)] += 0.25 * take(ge, slice(0, 1))
    gx[tuple(last)] += 0.25 * take(go, slice(-1, None))
    return gx


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear x2 upsampling with half-pixel alignment, differentiable."""
    d = _up2_axis(x.data, 2)
    d = _up2_axis(d, 3)
    out = Tensor(np.ascontiguousarray(d.astype(x.data.dtype, copy=False)), x.requires_grad)

    def backward(g):
        gx = _up2_axis_grad(g, 3)
        gx = _up2_axis_grad(gx, 2)
        return (gx.astype(x.data.dtype, copy=False),)

    _record("bilinear_upsample2x", (x,), out, backward)
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_out_size(hw: int, k: int, stride: int, padding: int) -> int:
    return (hw + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """Window buffer (N, C*kh*kw, Ho*Wo) filled by per-tap strided copies."""
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(wd, kw, stride, padding)
    buf = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return buf.reshape(n, c * kh * kw, ho * wo), ho, wo


def _conv_forward_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    co = w.shape[0]
    cols, ho, wo = _im2col(x, w.shape[2], w.shape[3], stride, padding)
    out = np.matmul(w.reshape(co, -1), cols)
    return out.reshape(x.shape[0], co, ho, wo)


def _dilate(g: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return g
    n, c, h, w = g.shape
    out = np.zeros((n, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=g.dtype)
    out[:, :, ::stride, ::stride] = g
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over an NCHW tensor (zero padding).

    Output spatial size is floor((H + 2p - kh)/stride) + 1 per axis.
    Differentiable with respect to the input, the weight, and the bias; the
    input gradient is computed as a convolution with the flipped, transposed
    kernel over the stride-dilated upstream gradient, so everything runs in
    ordered matrix multiplies.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be NCHW, got shape {x.shape}")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (Cout,Cin,kh,kw), got {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} padding={padding}")
    n, c, h, wsz = x.data.shape
    co, ci, kh, kw = weight.data.shape
    if c != ci:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {ci}")
    if kh > h + 2 * padding or kw > wsz + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{wsz + 2 * padding}")
    if bias is not None and bias.data.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({co},)")

    out_data = _conv_forward_raw(x.data, weight.data, stride, padding)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_data, _needs_grad(*inputs))

    ho, wo = out_data.shape[2], out_data.shape[3]

    def backward(g):
        # weight gradient: contraction of input windows with upstream grads
        cols, _, _ = _im2col(x.data, kh, kw, stride, padding)
        gmat = g.reshape(n, co, ho * wo)
        gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape)

        # input gradient: transposed convolution expressed as a full
        # convolution of the stride-dilated upstream gradient
        gd = _dilate(g, stride)
        gdp = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        wt = np.ascontiguousarray(weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        full = _conv_forward_raw(gdp, wt, 1, 0)  # grad w.r.t. padded input, head-aligned
        hp, wp = h + 2 * padding, wsz + 2 * padding
        if full.shape[2] != hp or full.shape[3] != wp:
            gxp = np.zeros((n, c, hp, wp), dtype=full.dtype)
            gxp[:, :, : full.shape[2], : full.shape[3]] = full
        else:
            gxp = full
        gx = gxp[:, :, padding:padding + h, padding:padding + wsz]

        if bias is not None:
            return (gx, gw, g.sum(axis=(0, 2, 3)))
        return (gx, gw)

    _record("conv2d", inputs, out, backward)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype), x.requires_grad)

    def backward(g):
        return (np.full_like(x.data, g),)

    _record("sum_all", (x,), out, backward)
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype), x.requires_grad)

    def backward(g):
        return (np.full_like(x.data, g / n),)

    _record("mean_all", (x,), out, backward)
    return out


def mean_abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements (the L1 criterion)."""
    if a.shape != b.shape:
        raise ShapeError(f"mean_abs_diff: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = Tensor(np.asarray(np.abs(diff).mean(), dtype=a.data.dtype), _needs_grad(a, b))
    n = a.data.size
    sgn = np.sign(diff)

    def backward(g):
        ga = sgn * (g / n)
        return (ga, -ga)

    _record("mean_abs_diff", (a, b), out, backward)
    return out
