"""Differentiable operations over :class:`Tensor`.

Spatial tensors are laid out ``rows x cols x channels``; convolution weights
are ``k x k x Cin x Cout`` with the first kernel axis running along rows.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor, as_tensor, make


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride=1, padding: int = 0) -> Tensor:
    """Cross-correlation of a single feature map.

    ``stride`` is an int or a (rows, cols) pair; kernels may be rectangular.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 3 or weight.ndim != 4 or bias.ndim != 1:
        raise DimensionError(f"conv2d expects 3-D input, 4-D weight, 1-D bias; got {x.shape}, {weight.shape}, {bias.shape}")
    kr, kc, cin, cout = weight.shape
    if x.shape[2] != cin or bias.shape[0] != cout:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    sr, sc = (stride, stride) if np.isscalar(stride) else tuple(stride)
    if kr < 1 or kc < 1 or sr < 1 or sc < 1 or padding < 0:
        raise ContractError("conv2d needs kernel >= 1, stride >= 1 and padding >= 0")
    rows, cols = x.shape[0] + 2 * padding, x.shape[1] + 2 * padding
    if rows < kr or cols < kc:
        raise DimensionError(f"padded input {rows}x{cols} smaller than kernel {kr}x{kc}")
    out_r = (rows - kr) // sr + 1
    out_c = (cols - kc) // sc + 1

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    w = weight.data
    span_r = sr * (out_r - 1) + 1
    span_c = sc * (out_c - 1) + 1
    out = np.broadcast_to(bias.data, (out_r, out_c, cout)).copy()
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is reported by make()
        for a in range(kr):
            for b in range(kc):
                out += xp[a:a + span_r:sr, b:b + span_c:sc, :] @ w[a, b]

    def backward(g):
        gx = np.zeros_like(xp)
        gw = np.empty_like(w)
        g2 = g.reshape(-1, cout)
        for a in range(kr):
            for b in range(kc):
                gx[a:a + span_r:sr, b:b + span_c:sc, :] += g @ w[a, b].T
                patch = xp[a:a + span_r:sr, b:b + span_c:sc, :].reshape(-1, cin)
                gw[a, b] = patch.T @ g2
        if padding:
            gx = gx[padding:-padding, padding:-padding, :]
        return gx, gw, g.sum(axis=(0, 1))

    return make(out, (x, weight, bias), backward, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd + bias.data
    lead = xd.shape[:-1]

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        x2 = xd.reshape(-1, wd.shape[0])
        return (g @ wd.T).reshape(xd.shape), x2.T @ g2, g2.sum(axis=0)

    out = out.reshape(lead + (wd.shape[1],))
    return make(out, (x, weight, bias), backward, "linear")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def einsum2(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; each subscript may appear at most once per operand."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out_sub = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    ad, bd = a.data, b.data
    try:
        out = np.einsum(spec, ad, bd)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def backward(g):
        return (np.einsum(f"{out_sub},{sb}->{sa}", g, bd),
                np.einsum(f"{out_sub},{sa}->{sb}", g, ad))

    return make(out, (a, b), backward, "einsum")


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError("transpose expects a matrix")
    return make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def log(x: Tensor) -> Tensor:
    d = x.data
    if np.any(d <= 0):
        raise ContractError("log of a non-positive value")
    return make(np.log(d), (x,), lambda g: (g / d,), "log")


def absolute(x: Tensor) -> Tensor:
    d = x.data
    return make(np.abs(d), (x,), lambda g: (g * np.sign(d),), "abs")


def power(x: Tensor, k: float) -> Tensor:
    """Elementwise x ** k; non-integer k needs positive inputs."""
    d = x.data
    k = float(k)
    if not k.is_integer() and np.any(d <= 0):
        raise ContractError("non-integer power of a non-positive value")
    return make(d ** k, (x,), lambda g: (g * k * d ** (k - 1.0),), "power")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    d = x.data
    inside = (d >= lo) & (d <= hi)
    return make(np.clip(d, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax axis {axis} invalid for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make(y, (x,), backward, "softmax")


def bilinear_sample(grid: Tensor, locations) -> Tensor:
    """Sample ``grid`` (A x B x C) at fractional ``(u, v)`` rows of ``locations``.

    ``u`` indexes the first axis and ``v`` the second. Corners outside the
    grid contribute zero.
    """
    grid = as_tensor(grid)
    locations = as_tensor(locations)
    if grid.ndim != 3 or locations.ndim != 2 or locations.shape[1] != 2:
        raise DimensionError(f"bilinear_sample expects A x B x C grid and M x 2 locations, got {grid.shape}, {locations.shape}")
    g_data = grid.data
    A, B, C = g_data.shape
    u = locations.data[:, 0]
    v = locations.data[:, 1]
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0

    def corner(du, dv):
        ui, vi = u0 + du, v0 + dv
        ok = (ui >= 0) & (ui < A) & (vi >= 0) & (vi < B)
        vals = np.zeros((u.shape[0], C))
        vals[ok] = g_data[ui[ok], vi[ok]]
        return ui, vi, ok, vals

    c00, c10, c01, c11 = corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1)
    w00 = (1 - fu) * (1 - fv)
    w10 = fu * (1 - fv)
    w01 = (1 - fu) * fv
    w11 = fu * fv
    out = (w00[:, None] * c00[3] + w10[:, None] * c10[3]
           + w01[:, None] * c01[3] + w11[:, None] * c11[3])

    def backward(g):
        ggrid = np.zeros_like(g_data)
        for (ui, vi, ok, _), w in ((c00, w00), (c10, w10), (c01, w01), (c11, w11)):
            np.add.at(ggrid, (ui[ok], vi[ok]), w[ok, None] * g[ok])
        d_u = (1 - fv)[:, None] * (c10[3] - c00[3]) + fv[:, None] * (c11[3] - c01[3])
        d_v = (1 - fu)[:, None] * (c01[3] - c00[3]) + fu[:, None] * (c11[3] - c10[3])
        gloc = np.stack([(d_u * g).sum(axis=1), (d_v * g).sum(axis=1)], axis=1)
        return ggrid, gloc

    return make(out, (grid, locations), backward, "bilinear_sample")


def scatter_max(values: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Per-segment, per-channel maximum of ``values`` (P x C).

    Empty segments are zero. Ties resolve to the lowest point index, which
    receives the whole gradient.
    """
    values = as_tensor(values)
    if values.ndim != 2:
        raise DimensionError("scatter_max expects a P x C matrix")
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (values.shape[0],):
        raise DimensionError("scatter_max needs one segment id per row")
    P, C = values.shape
    out = np.zeros((num_segments, C))
    if P == 0:
        return make(out, (values,), lambda g: (np.zeros((0, C)),), "scatter_max")
    if segments.min() < 0 or segments.max() >= num_segments:
        raise DimensionError("segment id out of range")

    vd = values.data
    occupied = np.unique(segments)
    winners = np.empty((occupied.size, C), dtype=np.int64)
    for c in range(C):
        # lexsort is stable: equal values keep ascending point order
        order = np.lexsort((-vd[:, c], segments))
        starts = np.searchsorted(segments[order], occupied)
        winners[:, c] = order[starts]
    cols = np.arange(C)
    out[occupied] = vd[winners, cols]

    def backward(g):
        gv = np.zeros_like(vd)
        np.add.at(gv, (winners, np.broadcast_to(cols, winners.shape)), g[occupied])
        return (gv,)

    return make(out, (values,), backward, "scatter_max")


def upsample_nearest(x: Tensor, factor_rows: int, factor_cols: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError("upsample_nearest expects rows x cols x channels")
    a, b, c = x.shape
    out = np.repeat(np.repeat(x.data, factor_rows, axis=0), factor_cols, axis=1)

    def backward(g):
        return (g.reshape(a, factor_rows, b, factor_cols, c).sum(axis=(1, 3)),)

    return make(out, (x,), backward, "upsample_nearest")
