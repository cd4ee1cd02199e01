"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything trainable in this package runs on the primitives below. Design
constraints: 64-bit floats only, no implicit broadcasting beyond explicit
size-1 dims or a leading batch prefix, and a tape per training step so
backward replays nodes in reverse topological order exactly once.
"""

from __future__ import annotations

import math
import threading
import numpy as np


class GradientError(Exception):
    """Raised for misuse of the tape: non-scalar loss, off-tape parameters."""


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array plus the bookkeeping needed for backward."""

    __slots__ = ("data", "requires_grad", "_src")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self._src = None  # tape that produced this tensor, if any

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as constant tensors
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

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return subscript(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Ordered record of primitive applications.

    Use as a context manager around a forward pass; `gradient` then replays
    the record backwards. A tape must not be shared across threads.
    """

    def __init__(self):
        self._nodes = []  # (inputs, out, backward_fn)
        self._ids = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def _append(self, inputs, out, backward, needs):
        self._nodes.append((inputs, out, backward, needs))
        for t in inputs:
            self._ids.add(id(t))
        self._ids.add(id(out))

    def __len__(self):
        return len(self._nodes)

    def gradient(self, loss: Tensor, params, allow_unused: bool = False) -> dict:
        """d(loss)/d(param) for every param, as a dict keyed by the param.

        A parameter that never touched the tape raises GradientError unless
        allow_unused is set, in which case it is simply omitted (training
        loops use this for pathways a stage intentionally leaves idle).
        """
        if loss.shape != ():
            raise GradientError(f"loss must be scalar, got shape {loss.shape}")
        if not np.isfinite(loss.data):
            raise GradientError("loss is not finite")
        params = list(params)
        grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for inputs, out, backward, needs in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, ig in zip(inputs, backward(g, needs)):
                if ig is None:
                    continue
                prev = grads.get(id(inp))
                grads[id(inp)] = ig if prev is None else prev + ig
        result = {}
        for p in params:
            g = grads.get(id(p))
            if g is None:
                if id(p) not in self._ids and p is not loss:
                    if allow_unused:
                        continue
                    raise GradientError(
                        "parameter was never used on this tape; refusing to "
                        "return a silent zero gradient"
                    )
                g = np.zeros(p.shape)
            result[p] = Tensor(np.ascontiguousarray(g, dtype=np.float64))
        return result


def grad(loss: Tensor, params, allow_unused: bool = False) -> dict:
    """Gradient of a recorded scalar loss w.r.t. each param."""
    tape = loss._src
    if tape is None:
        raise GradientError("loss was not recorded on a GradTape")
    return tape.gradient(loss, params, allow_unused=allow_unused)


def _tracked(t: Tensor, tape) -> bool:
    return t.requires_grad or t._src is tape


def _emit(inputs, out_data, backward) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        needs = tuple(_tracked(t, tape) for t in inputs)
        if any(needs):
            tape._append(inputs, out, backward, needs)
            out._src = tape
    return out


# ---------------------------------------------------------------------------
# broadcasting: identical shapes, explicit size-1 dims at equal rank, or one
# operand being a trailing suffix of the other (leading batch dims).

def _bcast_ok(sa, sb) -> bool:
    if sa == sb:
        return True
    if len(sa) == len(sb):
        return all(a == b or a == 1 or b == 1 for a, b in zip(sa, sb))
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    return small == big[len(big) - len(small):]


def _check_bcast(a: Tensor, b: Tensor, opname: str):
    if not _bcast_ok(a.shape, b.shape):
        raise ValueError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    if g.shape == tuple(shape):
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_bcast(a, b, "add")
    def backward(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)
    return _emit([a, b], a.data + b.data, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_bcast(a, b, "sub")
    def backward(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)
    return _emit([a, b], a.data - b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_bcast(a, b, "mul")
    ad, bd = a.data, b.data
    def backward(g, needs):
        return (_unbroadcast(g * bd, a.shape) if needs[0] else None,
                _unbroadcast(g * ad, b.shape) if needs[1] else None)
    return _emit([a, b], ad * bd, backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_bcast(a, b, "div")
    ad, bd = a.data, b.data
    def backward(g, needs):
        return (_unbroadcast(g / bd, a.shape) if needs[0] else None,
                _unbroadcast(-g * ad / (bd * bd), b.shape) if needs[1] else None)
    return _emit([a, b], ad / bd, backward)


def neg(a: Tensor) -> Tensor:
    return _emit([a], -a.data, lambda g, needs: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    ad = a.data
    out = ad ** p
    def backward(g, needs):
        return (g * p * ad ** (p - 1.0),)
    return _emit([a], out, backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit([a], out, lambda g, needs: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _emit([a], np.log(ad), lambda g, needs: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit([a], out, lambda g, needs: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit([a], out, lambda g, needs: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit([a], out, lambda g, needs: (g * out * (1.0 - out),))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return _emit([a], np.abs(ad), lambda g, needs: (g * np.sign(ad),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    mask = (ad >= lo) & (ad <= hi)
    def backward(g, needs):
        return (g * mask,)
    return _emit([a], np.clip(ad, lo, hi), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ad = a.data
    out = ad.sum(axis=axis, keepdims=keepdims)
    def backward(g, needs):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)
    return _emit([a], out, backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ad = a.data
    if axis is None:
        n = ad.size
    elif isinstance(axis, tuple):
        n = int(np.prod([ad.shape[i] for i in axis]))
    else:
        n = ad.shape[axis]
    out = ad.mean(axis=axis, keepdims=keepdims)
    def backward(g, needs):
        g = np.asarray(g) / n
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)
    return _emit([a], out, backward)


def sorted_mean(a: Tensor, axis: int) -> Tensor:
    """Mean along `axis` with values sorted before summation.

    The reduction is bit-invariant to any permutation of the input along
    `axis`, which plain pairwise summation is not; the gradient is the usual
    constant 1/n so backward is unaffected by the sort.
    """
    ad = a.data
    n = ad.shape[axis]
    out = np.sort(ad, axis=axis).sum(axis=axis) / n
    def backward(g, needs):
        g = np.expand_dims(np.asarray(g) / n, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)
    return _emit([a], out, backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _emit([a], a.data.reshape(shape), lambda g, needs: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit([a], a.data.transpose(axes), lambda g, needs: (g.transpose(inv),))


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def backward(g, needs):
        return tuple(np.split(g, splits, axis=axis))
    return _emit(tensors, np.concatenate([t.data for t in tensors], axis=axis), backward)


def subscript(a: Tensor, key) -> Tensor:
    """Basic slicing/int indexing; backward scatters into zeros."""
    ad = a.data
    def backward(g, needs):
        ga = np.zeros_like(ad)
        ga[key] = g
        return (ga,)
    return _emit([a], ad[key].copy(), backward)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows along axis 0 by integer index (used for depth sorting)."""
    idx = np.asarray(idx)
    ad = a.data
    def backward(g, needs):
        ga = np.zeros_like(ad)
        np.add.at(ga, idx, g)
        return (ga,)
    return _emit([a], ad[idx].copy(), backward)


def expand_axis(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert an axis of length n by repetition; backward sums it away."""
    out = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    def backward(g, needs):
        return (g.sum(axis=axis),)
    return _emit([a], out, backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ad = a.data
    shifted = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    def backward(g, needs):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)
    return _emit([a], out, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D matmul or batched 3D matmul (leading batch dim, matching or absent)."""
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or bd.ndim not in (2, 3):
        raise ValueError(f"matmul: ranks must be 2 or 3, got {ad.ndim} and {bd.ndim}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul: inner dims {ad.shape} @ {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ValueError("matmul: batch dims differ")
    def backward(g, needs):
        ga = gb = None
        if needs[0]:
            ga = g @ bd.swapaxes(-1, -2)
            if ad.ndim == 2 and ga.ndim == 3:
                ga = ga.sum(axis=0)
        if needs[1]:
            gb = ad.swapaxes(-1, -2) @ g
            if bd.ndim == 2 and gb.ndim == 3:
                gb = gb.sum(axis=0)
        return ga, gb
    return _emit([a, b], ad @ bd, backward)


# ---------------------------------------------------------------------------
# structured primitives

def _corr2d(xd: np.ndarray, wd: np.ndarray, stride: int, pad: int):
    """Raw NCHW correlation via im2col; returns (out, cols)."""
    B = xd.shape[0]
    Cout, _, kh, kw = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]              # [B,Cin,OH,OW,kh,kw]
    OH, OW = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * OH * OW, -1)
    out = (cols @ wd.reshape(Cout, -1).T).reshape(B, OH, OW, Cout)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """NCHW convolution via im2col; w is [Cout, Cin, kh, kw].

    Requires pad <= k-1 (always true here); the data gradient is computed as
    a stride-1 correlation with the flipped kernel rather than col2im, which
    avoids materializing the [B,OH,OW,Cin,kh,kw] gradient tensor.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[1] != wd.shape[1]:
        raise ValueError(f"conv2d: bad shapes {xd.shape}, {wd.shape}")
    B, Cin, H, W = xd.shape
    Cout, _, kh, kw = wd.shape
    if pad > kh - 1 or pad > kw - 1:
        raise ValueError("conv2d: pad must be <= k-1")
    out, cols = _corr2d(xd, wd, stride, pad)
    OH, OW = out.shape[2], out.shape[3]
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g, needs):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, Cout)
        gw = (gm.T @ cols).reshape(wd.shape) if needs[1] else None
        gb = gm.sum(axis=0) if (b is not None and needs[2]) else None
        gx = None
        if needs[0]:
            if stride > 1:
                gs = np.zeros((B, Cout, (OH - 1) * stride + 1, (OW - 1) * stride + 1))
                gs[:, :, ::stride, ::stride] = g
            else:
                gs = g
            eh = (H + 2 * pad - kh) % stride
            ew = (W + 2 * pad - kw) % stride
            ph, pw = kh - 1 - pad, kw - 1 - pad
            gs = np.pad(gs, ((0, 0), (0, 0), (ph, ph + eh), (pw, pw + ew)))
            wflip = np.ascontiguousarray(
                wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx, _ = _corr2d(gs, wflip, 1, 0)
        if b is not None:
            return gx, gw, gb
        return gx, gw
    inputs = [x, w] if b is None else [x, w, b]
    return _emit(inputs, out, backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of an NCHW tensor."""
    xd = x.data
    B, C, H, W = xd.shape
    out = xd.repeat(2, axis=2).repeat(2, axis=3)
    def backward(g, needs):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)
    return _emit([x], out, backward)


def grid_sample2d(grid: Tensor, u: Tensor, v: Tensor) -> Tensor:
    """Bilinear sample of a [R0,R1,C] grid at continuous (u,v) in grid units.

    Differentiable in the grid values and in both coordinates; coordinates
    are clamped to the grid, with zero coordinate gradient outside.
    """
    gd, ud, vd = grid.data, u.data, v.data
    if gd.ndim != 3 or ud.shape != vd.shape or ud.ndim != 1:
        raise ValueError("grid_sample2d: grid [R0,R1,C], u and v 1-D")
    R0, R1, _ = gd.shape
    uc = np.clip(ud, 0.0, R0 - 1.0)
    vc = np.clip(vd, 0.0, R1 - 1.0)
    in_u = (ud > 0.0) & (ud < R0 - 1.0)
    in_v = (vd > 0.0) & (vd < R1 - 1.0)
    i0 = np.minimum(np.floor(uc).astype(np.int64), R0 - 2)
    j0 = np.minimum(np.floor(vc).astype(np.int64), R1 - 2)
    fu = (uc - i0)[:, None]
    fv = (vc - j0)[:, None]
    g00 = gd[i0, j0]
    g10 = gd[i0 + 1, j0]
    g01 = gd[i0, j0 + 1]
    g11 = gd[i0 + 1, j0 + 1]
    out = ((1 - fu) * (1 - fv) * g00 + fu * (1 - fv) * g10
           + (1 - fu) * fv * g01 + fu * fv * g11)

    def backward(g, needs):
        gg = du = dv = None
        if needs[0]:
            gg = np.zeros_like(gd)
            np.add.at(gg, (i0, j0), (1 - fu) * (1 - fv) * g)
            np.add.at(gg, (i0 + 1, j0), fu * (1 - fv) * g)
            np.add.at(gg, (i0, j0 + 1), (1 - fu) * fv * g)
            np.add.at(gg, (i0 + 1, j0 + 1), fu * fv * g)
        if needs[1]:
            du = (((1 - fv) * (g10 - g00) + fv * (g11 - g01)) * g).sum(axis=1) * in_u
        if needs[2]:
            dv = (((1 - fu) * (g01 - g00) + fu * (g11 - g10)) * g).sum(axis=1) * in_v
        return gg, du, dv
    return _emit([grid, u, v], out, backward)


def exclusive_cumprod(x: Tensor, axis: int = 0) -> Tensor:
    """out[i] = prod(x[:i]) along `axis` (out[0] = 1). Requires x > 0."""
    xd = x.data
    cp = np.cumprod(xd, axis=axis)
    pad = [(0, 0)] * xd.ndim
    pad[axis] = (1, 0)
    out = np.pad(cp, pad, constant_values=1.0)
    sl = [slice(None)] * xd.ndim
    sl[axis] = slice(0, xd.shape[axis])
    out = out[tuple(sl)]
    def backward(g, needs):
        s = g * out
        rs = np.flip(np.cumsum(np.flip(s, axis=axis), axis=axis), axis=axis)
        # sum over strictly-later entries: shift the inclusive reverse cumsum
        shifted = np.pad(rs, [(0, 1) if i == axis else (0, 0) for i in range(xd.ndim)])[
            tuple(slice(1, None) if i == axis else slice(None) for i in range(xd.ndim))]
        return (shifted / xd,)
    return _emit([x], out, backward)


# ---------------------------------------------------------------------------
# composite helpers

def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two same-shape tensors."""
    return tsum(mul(a, b))

def l2norm(a: Tensor) -> Tensor:
    return sqrt(tsum(mul(a, a)))


def mean_sq(a: Tensor) -> Tensor:
    return tmean(mul(a, a))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    exp = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concatenate(exp, axis=axis)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two dims; supports a batch dim."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"attention: feature dims differ, {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention: key/value counts differ, {k.shape} vs {v.shape}")
    if k.shape[-2] < 1:
        raise ValueError("attention: need at least one key")
    d = q.shape[-1]
    kt = transpose(k, list(range(k.ndim - 2)) + [k.ndim - 1, k.ndim - 2])
    logits = mul(matmul(q, kt), Tensor(1.0 / math.sqrt(d)))
    return matmul(softmax(logits, axis=-1), v)


# ---------------------------------------------------------------------------
# gradient verification

def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor and must be deterministic. The
    relative error at each coordinate is |analytic - numeric| / (|analytic|
    + 1e-8).
    """
    if not (0.0 < step <= 1e-2):
        raise ValueError(f"step must be in (0, 1e-2], got {step}")
    probe = Tensor(x.data.copy(), requires_grad=True)
    with GradTape() as tape:
        y = f(probe)
    analytic = tape.gradient(y, [probe])[probe].data
    numeric = np.zeros(analytic.shape)
    flat = probe.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(Tensor(probe.data)).data)
        flat[i] = orig - step
        fm = float(f(Tensor(probe.data)).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * step)
    if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
        raise GradientError("non-finite gradient estimate in finite_diff_check")
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
    return float(rel.max()) if rel.size else 0.0


def check_params(loss_fn, params: dict, step: float = 1e-5) -> dict:
    """Central-difference check per named parameter of a multi-param model.

    `loss_fn()` recomputes the scalar loss from the current parameter values,
    so the same relative-error definition as finite_diff_check applies to
    models whose parameters live inside layer objects.
    """
    if not (0.0 < step <= 1e-2):
        raise ValueError(f"step must be in (0, 1e-2], got {step}")
    out = {}
    for name, p in params.items():
        with GradTape() as tape:
            y = loss_fn()
        analytic = tape.gradient(y, [p])[p].data
        numeric = np.zeros(analytic.shape)
        flat = np.ascontiguousarray(p.data).reshape(-1)
        p.data = flat.reshape(p.data.shape)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(loss_fn().data)
            flat[i] = orig - step
            fm = float(loss_fn().data)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * step)
        if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
            raise GradientError(f"non-finite gradient estimate for {name}")
        rel = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
        out[name] = float(rel.max()) if rel.size else 0.0
    return out
