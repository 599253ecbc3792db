"""Dense float64 tensors with taped reverse-mode differentiation.

Every operator the neck modules need is expressed through the functions in
this module, so the full model can be gradient-checked end to end against
finite differences. Ops compute in 64-bit floats, validate their inputs,
and refuse to emit NaN/Inf silently.

Recording is explicit: wrap the forward pass in a `Tape` context and call
`backward(tape, loss)`. Without an active tape, ops run forward-only.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import counting

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "TapeError",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_scalar",
    "neg",
    "exp",
    "sqrt",
    "sigmoid",
    "relu",
    "tsum",
    "tmean",
    "concat",
    "narrow",
    "roll",
    "reshape",
    "transpose",
    "broadcast_to",
    "pad2d",
    "conv2d",
    "bilinear_upsample_x2",
    "maxpool2d",
    "global_avg_pool",
    "softmax",
    "channel_norm",
]


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """Tape misuse: nested recording, double backward, or a detached loss."""


class Tensor:
    """N-dimensional float64 array with an optional gradient accumulator.

    Data is row-major and conceptually immutable once constructed; only
    `grad` is written to (by `backward`). `name` is set for learnable
    parameters so the counting harness can attribute them to operators.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; scalars take the cheap constant path
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of executed ops; execution order is topological.

    One tape may be active at a time (recording is confined to a single
    execution context). `backward` may run once per tape until `reset`.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, list[Tensor], Callable[[np.ndarray], None]]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a tape is already recording; nested tapes are not allowed")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, inputs: list[Tensor], bw: Callable[[np.ndarray], None]):
        self._nodes.append((out, inputs, bw))

    def reset(self):
        """Clear all gradients recorded through this tape and re-arm it."""
        for out, inputs, _ in self._nodes:
            out.grad = None
            for t in inputs:
                t.grad = None
        self._spent = False


_ACTIVE_TAPE: Tape | None = None


def backward(tape: Tape, loss: Tensor):
    """Reverse-sweep `tape`, accumulating dLoss/dLeaf into leaf `.grad`s.

    `loss` must be a scalar produced on this tape. A second sweep without
    `tape.reset()` raises, since grads would silently double.
    """
    if loss.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    if tape._spent:
        raise TapeError("backward already ran on this tape; call reset() first")
    idx = None
    for i in range(len(tape._nodes) - 1, -1, -1):
        if tape._nodes[i][0] is loss:
            idx = i
            break
    if idx is None:
        raise TapeError("loss is not on the tape (detached graph)")
    loss.grad = np.ones_like(loss.data)
    for out, _, bw in reversed(tape._nodes[: idx + 1]):
        if out.grad is not None:
            bw(out.grad)
    tape._spent = True


def _accumulate(t: Tensor, g: np.ndarray):
    if g.shape != t.data.shape:
        raise TapeError(f"gradient shape {g.shape} != tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


def _make(op: str, data: np.ndarray, vjps: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    """Finalize an op: finite-check, note params, record on the active tape."""
    _finite(op, data)
    for t, _ in vjps:
        if t.name is not None:
            counting.saw_param(t)
    out = Tensor(data)
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t, _ in vjps):
        out.requires_grad = True
        inputs = [t for t, _ in vjps]

        def bw(g, _vjps=tuple(vjps)):
            for t, vjp in _vjps:
                if t.requires_grad:
                    _accumulate(t, vjp(g))

        _ACTIVE_TAPE._record(out, inputs, bw)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and broadcasting ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    return _make(
        "add",
        a.data + b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    return _make(
        "sub",
        a.data - b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(-g, b.shape))],
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    return _make(
        "mul",
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ],
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make(
        "div",
        out,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        ],
    )


def scale(a: Tensor, s: float) -> Tensor:
    return _make("scale", a.data * s, [(a, lambda g: g * s)])


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make("add_scalar", a.data + c, [(a, lambda g: g)])


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, [(a, lambda g: g * out)])


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make("sqrt", out, [(a, lambda g: g * (0.5 / out))])


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make("sigmoid", out, [(a, lambda g: g * out * (1.0 - out))])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient 0 at 0
    return _make("relu", np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)])


def tsum(a: Tensor, axes: tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims and axes is not None:
            g = np.expand_dims(g, axes)
        elif axes is None and not keepdims:
            g = np.asarray(g).reshape((1,) * a.ndim)
        return np.broadcast_to(g, a.shape)

    return _make("sum", out, [(a, vjp)])


def tmean(a: Tensor, axes: tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    if axes is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axes, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# shape and layout ops


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = [_tensor(t) for t in tensors]
    ref = ts[0].shape
    for t in ts[1:]:
        for ax, (da, db) in enumerate(zip(ref, t.shape)):
            if ax != axis % len(ref) and da != db:
                raise ValueError(
                    f"concat: axis {ax} extents differ ({da} vs {db}); only axis {axis} may vary"
                )
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(k):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offsets[k]), int(offsets[k + 1]))
            return g[tuple(sl)]

        return vjp

    return _make("concat", out, [(t, make_vjp(k)) for k, t in enumerate(ts)])


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.shape[axis]:
        raise ValueError(
            f"narrow: [{start}, {start + length}) out of range for axis {axis} "
            f"of extent {a.shape[axis]}"
        )
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def vjp(g):
        full = np.zeros(a.shape, dtype=np.float64)
        full[sl] = g
        return full

    return _make("narrow", a.data[sl].copy(), [(a, vjp)])


def roll(a: Tensor, shift: int, axis: int) -> Tensor:
    """Circular rotation along one axis; a pure copy, zero arithmetic."""
    out = np.roll(a.data, shift, axis=axis)
    return _make("roll", out, [(a, lambda g: np.roll(g, -shift, axis=axis))])


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make("reshape", a.data.reshape(shape), [(a, lambda g: g.reshape(a.shape))])


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _make(
        "transpose", a.data.transpose(axes), [(a, lambda g: g.transpose(inverse))]
    )


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()
    return _make("broadcast_to", out, [(a, lambda g: _unbroadcast(g, a.shape))])


def pad2d(a: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the trailing two axes; padding may be asymmetric."""
    if min(top, bottom, left, right) < 0:
        raise ValueError("pad2d: negative padding")
    width = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(a.data, width)
    H, W = a.shape[-2], a.shape[-1]
    sl = (Ellipsis, slice(top, top + H), slice(left, left + W))
    return _make("pad2d", out, [(a, lambda g: g[sl])])


# ---------------------------------------------------------------------------
# structured ops


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided cross-correlation of NCHW input with OIHW weights plus bias.

    Output extents must divide exactly: H' = (H + 2*padding - kh)/stride + 1
    (and likewise for W'); a fractional extent is an error, not a floor.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be 4-D [N,C,H,W], got {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d: weight must be 4-D [Cout,Cin,kh,kw], got {weight.shape}")
    N, Cin, H, W = x.shape
    Cout, Cw, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if Cw != Cin:
        raise ValueError(f"conv2d: input channels {Cin} != weight in-channels {Cw}")
    if bias.shape != (Cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({Cout},)")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if (H + 2 * padding - kh) % stride or (W + 2 * padding - kw) % stride:
        raise ValueError(
            f"conv2d: non-integer output extent for input {H}x{W}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    Hp = (H + 2 * padding - kh) // stride + 1
    Wp = (W + 2 * padding - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((N, Cin, kh, kw, Hp, Wp), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * Hp : stride, j : j + stride * Wp : stride]
    out = np.tensordot(weight.data, cols, axes=([1, 2, 3], [1, 2, 3]))
    out = out.transpose(1, 0, 2, 3) + bias.data[None, :, None, None]

    counting.add_macs(N * Cout * Hp * Wp * Cin * kh * kw)

    def vjp_x(g):
        gcols = np.tensordot(weight.data, g, axes=([0], [1]))  # [Cin,kh,kw,N,Hp,Wp]
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * Hp : stride, j : j + stride * Wp : stride] += (
                    gcols[:, i, j].transpose(1, 0, 2, 3)
                )
        if padding:
            return gxp[:, :, padding : padding + H, padding : padding + W]
        return gxp

    def vjp_w(g):
        return np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))

    return _make(
        "conv2d",
        out,
        [(x, vjp_x), (weight, vjp_w), (bias, lambda g: g.sum(axis=(0, 2, 3)))],
    )


def _up2_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel-center sampling: output o reads input coordinate (o+0.5)/2-0.5,
    # neighbors clamped at the border
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.floor(src)
    t = src - i0
    lo = np.clip(i0, 0, n - 1).astype(np.intp)
    hi = np.clip(i0 + 1, 0, n - 1).astype(np.intp)
    return lo, hi, t


def bilinear_upsample_x2(x: Tensor) -> Tensor:
    """Double the trailing two axes by bilinear interpolation.

    Alignment is half-pixel centers (align-corners OFF): this is the one
    interpolation convention used everywhere in the package, so any oracle
    must use the same formula.
    """
    if x.ndim < 2:
        raise ValueError(f"bilinear_upsample_x2: need at least 2 axes, got {x.shape}")
    H, W = x.shape[-2], x.shape[-1]
    rlo, rhi, rt = _up2_indices(H)
    clo, chi, ct = _up2_indices(W)
    rt_ = rt.reshape((1,) * (x.ndim - 2) + (2 * H, 1))
    ct_ = ct.reshape((1,) * (x.ndim - 2) + (1, 2 * W))

    rows = x.data[..., rlo, :] * (1.0 - rt_) + x.data[..., rhi, :] * rt_
    out = rows[..., :, clo] * (1.0 - ct_) + rows[..., :, chi] * ct_

    def vjp(g):
        gw = np.zeros(x.shape[:-2] + (2 * H, W), dtype=np.float64)
        np.add.at(gw, (Ellipsis, clo), g * (1.0 - ct_))
        np.add.at(gw, (Ellipsis, chi), g * ct_)
        gx = np.zeros(x.shape, dtype=np.float64)
        np.add.at(gx, (Ellipsis, rlo, slice(None)), gw * (1.0 - rt_))
        np.add.at(gx, (Ellipsis, rhi, slice(None)), gw * rt_)
        return gx

    return _make("bilinear_upsample_x2", out, [(x, vjp)])


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Per-window maximum over the trailing two axes of an NCHW tensor.

    Backward routes the whole gradient to the window argmax; ties go to the
    first element in row-major window order, so backward is deterministic.
    """
    if x.ndim != 4:
        raise ValueError(f"maxpool2d: input must be 4-D [N,C,H,W], got {x.shape}")
    N, C, H, W = x.shape
    if (H - k) % stride or (W - k) % stride:
        raise ValueError(
            f"maxpool2d: extent {H}x{W} not divisible for window {k}, stride {stride}"
        )
    Hp = (H - k) // stride + 1
    Wp = (W - k) // stride + 1
    cand = np.empty((N, C, Hp, Wp, k * k), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cand[..., i * k + j] = x.data[:, :, i : i + stride * Hp : stride, j : j + stride * Wp : stride]
    am = np.argmax(cand, axis=-1)
    out = np.take_along_axis(cand, am[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(x.data)
        for i in range(k):
            for j in range(k):
                mask = am == (i * k + j)
                gx[:, :, i : i + stride * Hp : stride, j : j + stride * Wp : stride] += g * mask
        return gx

    return _make("maxpool2d", out, [(x, vjp)])


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the trailing two (spatial) axes, keeping them as 1x1."""
    if x.ndim < 3:
        raise ValueError(f"global_avg_pool: need at least 3 axes, got {x.shape}")
    H, W = x.shape[-2], x.shape[-1]
    out = x.data.mean(axis=(-2, -1), keepdims=True)
    inv = 1.0 / (H * W)
    return _make(
        "global_avg_pool", out, [(x, lambda g: np.broadcast_to(g * inv, x.shape).copy())]
    )


def softmax(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    """Exp-normalize jointly over `axes`, with max-subtraction for stability."""
    if not axes:
        raise ValueError("softmax: empty axis set")
    shift = Tensor(x.data.max(axis=axes, keepdims=True))  # constant; softmax is shift-invariant
    e = exp(sub(x, shift))
    return div(e, tsum(e, axes, keepdims=True))


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization over (batch, spatial), then gamma*x + beta.

    Batch-statistics (training-mode) semantics only; gradients flow through
    the mean and the biased variance.
    """
    if x.ndim != 4:
        raise ValueError(f"channel_norm: input must be 4-D [N,C,H,W], got {x.shape}")
    if eps <= 0:
        raise ValueError("channel_norm: eps must be positive")
    N, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(
            f"channel_norm: gamma/beta must have shape ({C},), got {gamma.shape}/{beta.shape}"
        )
    if N * H * W < 2:
        raise ValueError(f"channel_norm: {N * H * W} values per channel; variance undefined")
    axes = (0, 2, 3)
    mu = tmean(x, axes, keepdims=True)
    d = sub(x, mu)
    var = tmean(mul(d, d), axes, keepdims=True)
    xh = div(d, sqrt(add_scalar(var, eps)))
    g4 = reshape(gamma, (1, C, 1, 1))
    b4 = reshape(beta, (1, C, 1, 1))
    return add(mul(xh, g4), b4)
