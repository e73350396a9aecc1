"""Differentiable operations used by the URL, similarity and logo models.

Every op takes :class:`Tensor` inputs, computes the forward value with numpy
and, when any input requires grad, records a backward closure. Broadcasting
is limited to three cases: identical shapes, a trailing bias vector, and a
single-element operand.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NonFiniteError, ShapeError, Tensor, UnsupportedOpError, _wrap

# ---------------------------------------------------------------------------
# elementwise binary


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    if len(sb) == 1 and len(sa) >= 1 and sa[-1] == sb[0]:
        return
    if len(sa) == 1 and len(sb) >= 1 and sb[-1] == sa[0]:
        return
    raise ShapeError(f"{op}: shapes {sa} and {sb} are not compatible")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), bw, "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return Tensor._from_op(ad @ bd, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# elementwise unary


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor._from_op(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return Tensor._from_op(e, (x,), lambda g: (g * e,), "exp")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(xd * xd, (x,), lambda g: (2.0 * xd * g,), "square")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=np.float64), (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis), Tensor(1.0 / n))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not xs:
        raise ShapeError("concat needs at least one input")
    datas = [t.data for t in xs]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[d.shape for d in datas]}") from exc
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tuple(xs), bw, "concat")


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """Select one position (or a slice) along ``axis``."""
    shape = x.shape
    sl = [slice(None)] * x.data.ndim
    sl[axis] = index
    sl = tuple(sl)
    out = x.data[sl]

    def bw(g):
        full = np.zeros(shape)
        full[sl] = g
        return (full,)

    return Tensor._from_op(np.array(out), (x,), bw, "take")


# ---------------------------------------------------------------------------
# layers


def embedding_lookup(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("embedding_lookup: indices must be integers")
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-d, got {table.shape}")
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise ShapeError(f"embedding_lookup: index out of range for vocabulary of {vocab}")
    out = table.data[idx]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return Tensor._from_op(out, (table,), bw, "embedding_lookup")


def dropout(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    keep = gen.random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return Tensor._from_op(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor, mask=None) -> Tensor:
    """One LSTM step for a batch.

    ``w`` has shape (input + units, 4 * units) with gate blocks ordered
    input, forget, output, candidate. Returns the packed state
    ``[h_new, c_new]`` of shape (batch, 2 * units); use :func:`split_state`.
    Rows where ``mask`` is 0 carry the previous state through unchanged.
    """
    xd, hd, cd = x.data, h.data, c.data
    if xd.ndim != 2 or hd.ndim != 2 or cd.ndim != 2:
        raise ShapeError("lstm_cell expects (batch, features) operands")
    n, units = hd.shape
    if cd.shape != (n, units) or xd.shape[0] != n:
        raise ShapeError(f"lstm_cell: state shapes {hd.shape}/{cd.shape} vs input {xd.shape}")
    if w.shape != (xd.shape[1] + units, 4 * units) or b.shape != (4 * units,):
        raise ShapeError(
            f"lstm_cell: weights {w.shape}/{b.shape} do not fit input {xd.shape[1]} and {units} units"
        )
    xh = np.concatenate([xd, hd], axis=1)
    z = xh @ w.data + b.data
    i = _sigmoid(z[:, :units])
    f = _sigmoid(z[:, units:2 * units])
    o = _sigmoid(z[:, 2 * units:3 * units])
    gg = np.tanh(z[:, 3 * units:])
    c_new = f * cd + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64).reshape(n, 1)
        h_out = m * h_new + (1.0 - m) * hd
        c_out = m * c_new + (1.0 - m) * cd
    else:
        m = None
        h_out, c_out = h_new, c_new
    wd = w.data

    def bw(g):
        gh, gc = g[:, :units], g[:, units:]
        if m is not None:
            gh_prev_direct = (1.0 - m) * gh
            gc_prev_direct = (1.0 - m) * gc
            gh = m * gh
            gc = m * gc
        else:
            gh_prev_direct = gc_prev_direct = 0.0
        dc = gc + gh * o * (1.0 - tc * tc)
        do = gh * tc
        di = dc * gg
        dg = dc * i
        df = dc * cd
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - gg * gg)], axis=1
        )
        dxh = dz @ wd.T
        dx = dxh[:, : xd.shape[1]]
        dh = dxh[:, xd.shape[1]:] + gh_prev_direct
        dcp = dc * f + gc_prev_direct
        return dx, dh, dcp, xh.T @ dz, dz.sum(axis=0)

    out = np.concatenate([h_out, c_out], axis=1)
    return Tensor._from_op(out, (x, h, c, w, b), bw, "lstm_cell")


def split_state(state: Tensor) -> tuple[Tensor, Tensor]:
    units = state.shape[1] // 2
    return take(state, slice(0, units), axis=1), take(state, slice(units, None), axis=1)


def _pad_amount(padding, kh: int, kw: int) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("'same' padding needs odd kernel sizes")
        return kh // 2, kw // 2
    p = int(padding)
    return p, p


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding="valid") -> Tensor:
    """2-d cross-correlation, NHWC input and (kh, kw, in, out) kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input and 4-d kernel, got {x.shape} and {w.shape}")
    n, hh, ww, cin = x.shape
    kh, kw, kin, cout = w.shape
    if kin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {kin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")
    ph, pw = _pad_amount(padding, kh, kw)
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    hp, wp = xp.shape[1], xp.shape[2]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    # (n, oh, ow, cin, kh, kw) -> (n, oh, ow, kh, kw, cin)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * oh * ow, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    out = out.reshape(n, oh, ow, cout)

    def bw(g):
        g2 = g.reshape(n * oh * ow, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        gcols = (g2 @ wmat.T).reshape(n, oh, ow, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, ph:hp - ph, pw:wp - pw, :] if (ph or pw) else gxp
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, bw, "conv2d")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d expects NHWC input, got {x.shape}")
    n, hh, ww, c = x.shape
    oh, ow = hh // size, ww // size
    if oh == 0 or ow == 0:
        raise ShapeError(f"max_pool2d: window {size} larger than input {hh}x{ww}")
    xc = x.data[:, : oh * size, : ow * size, :]
    blocks = xc.reshape(n, oh, size, ow, size, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, oh, ow, c, size, size).transpose(0, 1, 4, 2, 5, 3).reshape(n, oh * size, ow * size, c)
        gx = np.zeros(x.shape)
        gx[:, : oh * size, : ow * size, :] = gb
        return (gx,)

    return Tensor._from_op(out, (x,), bw, "max_pool2d")


def global_max_pool(x: Tensor) -> Tensor:
    """(N, H, W, C) -> (N, C), max over the spatial positions."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_max_pool expects NHWC input, got {x.shape}")
    n, hh, ww, c = x.shape
    flat = x.data.reshape(n, hh * ww, c)
    arg = flat.argmax(axis=1)
    out = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]

    def bw(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, arg[:, None, :], g[:, None, :], axis=1)
        return (gf.reshape(x.shape),)

    return Tensor._from_op(out, (x,), bw, "global_max_pool")


# ---------------------------------------------------------------------------
# losses


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    z = logits.data
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    s = _sigmoid(z)
    return Tensor._from_op(np.asarray(loss.mean()), (logits,), lambda g: (g * (s - y) / n,), "bce_with_logits")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), bw, "log_softmax")


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy softmax (no graph), used for decoding."""
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values in {what}")
    return t


# ---------------------------------------------------------------------------
# dispatcher

_FORWARD = {
    "matmul": lambda ins, at: matmul(*ins),
    "add": lambda ins, at: add(*ins),
    "mul": lambda ins, at: mul(*ins),
    "sub": lambda ins, at: sub(*ins),
    "conv2d": lambda ins, at: conv2d(*ins, stride=at.get("stride", 1), padding=at.get("padding", "valid")),
    "relu": lambda ins, at: relu(*ins),
    "sigmoid": lambda ins, at: sigmoid(*ins),
    "tanh": lambda ins, at: tanh(*ins),
    "embedding_lookup": lambda ins, at: embedding_lookup(ins[0], at["indices"]),
    "lstm_cell": lambda ins, at: lstm_cell(*ins, mask=at.get("mask")),
    "global_max_pool": lambda ins, at: global_max_pool(*ins),
    "max_pool2d": lambda ins, at: max_pool2d(ins[0], at.get("size", 2)),
    "dropout": lambda ins, at: dropout(ins[0], at.get("rate", 0.5), at.get("training", True), at.get("seed", 0)),
    "concat": lambda ins, at: concat(ins, at.get("axis", -1)),
    "reshape": lambda ins, at: reshape(ins[0], at["shape"]),
}


def forward_op(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Apply the op named ``kind``; the by-name entry point used in tests and tooling."""
    try:
        fn = _FORWARD[kind]
    except KeyError:
        raise UnsupportedOpError(f"unsupported op: {kind!r}") from None
    return fn([_wrap(t) for t in inputs], attrs or {})


SUPPORTED_OPS = tuple(_FORWARD)
