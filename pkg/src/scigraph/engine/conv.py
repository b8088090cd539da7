"""Convolution primitives (channels-last, stride 1, zero-padded 'same').

Forward and backward are expressed as im2col + BLAS matmuls; the column
matrix is rebuilt in the backward pass instead of being retained, which keeps
per-layer memory at one padded copy of the input.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, ShapeError, Tensor, _check_finite, _record

__all__ = ["conv2d", "conv3d", "pointwise_linear"]


def _offsets(kernel: tuple[int, ...]):
    grids = np.meshgrid(*[np.arange(k) for k in kernel], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _im2col(xp: np.ndarray, kernel: tuple[int, ...], out_spatial: tuple[int, ...]) -> np.ndarray:
    """Columns (prod(out_spatial)*lead, prod(kernel)*C) from padded input."""
    offs = _offsets(kernel)
    cols = np.empty((int(np.prod(xp.shape[:-1 - len(kernel)] or (1,))) * int(np.prod(out_spatial)),
                     offs.shape[0], xp.shape[-1]), dtype=xp.dtype)
    lead = xp.ndim - 1 - len(kernel)
    for i, off in enumerate(offs):
        key = (slice(None),) * lead + tuple(slice(int(o), int(o) + n) for o, n in zip(off, out_spatial))
        cols[:, i, :] = xp[key].reshape(-1, xp.shape[-1])
    return cols.reshape(cols.shape[0], -1)


def _col2im(gcols: np.ndarray, xp_shape: tuple[int, ...], kernel: tuple[int, ...],
            out_spatial: tuple[int, ...]) -> np.ndarray:
    """Adjoint of _im2col: scatter-add column gradients back to padded input."""
    offs = _offsets(kernel)
    cin = xp_shape[-1]
    lead = len(xp_shape) - 1 - len(kernel)
    g3 = gcols.reshape(-1, offs.shape[0], cin)
    gxp = np.zeros(xp_shape, dtype=gcols.dtype)
    lead_shape = xp_shape[:lead]
    for i, off in enumerate(offs):
        key = (slice(None),) * lead + tuple(slice(int(o), int(o) + n) for o, n in zip(off, out_spatial))
        gxp[key] += g3[:, i, :].reshape(lead_shape + out_spatial + (cin,))
    return gxp


def _conv_nd(x: Tensor, w: Tensor, b: Tensor | None, nsp: int, name: str) -> Tensor:
    """Shared core: x (..., S1..Sn, Cin), w (k1..kn, Cin, Cout), b (Cout,)."""
    if w.ndim != nsp + 2:
        raise ShapeError(f"{name}: weight must have {nsp + 2} dims, got {w.ndim}")
    if x.ndim < nsp + 1:
        raise ShapeError(f"{name}: input must have at least {nsp + 1} dims, got {x.ndim}")
    kernel = w.shape[:nsp]
    cin, cout = w.shape[nsp], w.shape[nsp + 1]
    if x.shape[-1] != cin:
        raise ShapeError(f"{name}: input channels {x.shape[-1]} != weight channels {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"{name}: bias shape {b.shape} != ({cout},)")
    if any(k % 2 == 0 for k in kernel):
        raise ShapeError(f"{name}: only odd kernel sizes supported, got {kernel}")
    _check_finite(*( (x, w, b) if b is not None else (x, w) ))

    spatial = x.shape[-1 - nsp:-1]
    lead = x.shape[:-1 - nsp]
    pads = tuple(k // 2 for k in kernel)
    pad_spec = [(0, 0)] * len(lead) + [(p, p) for p in pads] + [(0, 0)]
    xp = np.pad(x.data, pad_spec)
    w2 = w.data.reshape(-1, cout)

    cols = _im2col(xp, kernel, spatial)
    out2 = cols @ w2
    if b is not None:
        out2 += b.data
    out_data = out2.reshape(lead + spatial + (cout,))

    xp_shape = xp.shape

    def bwd(g):
        g2 = g.reshape(-1, cout)
        grads: list[np.ndarray | None] = [None, None] if b is None else [None, None, None]
        need_x = x.requires_grad
        need_w = w.requires_grad
        if need_x or need_w:
            if need_w:
                cols_b = _im2col(xp, kernel, spatial)
                grads[1] = (cols_b.T @ g2).reshape(w.shape)
            if need_x:
                gcols = g2 @ w2.T
                gxp = _col2im(gcols, xp_shape, kernel, spatial)
                crop = (slice(None),) * len(lead) + tuple(
                    slice(p, p + n) for p, n in zip(pads, spatial)) + (slice(None),)
                grads[0] = np.ascontiguousarray(gxp[crop])
        if b is not None and b.requires_grad:
            grads[2] = g2.sum(axis=0)
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record(inputs, out_data, bwd)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """2D convolution over the last two spatial axes.

    x: (..., H, W, Cin) with optional leading axes treated as batch;
    w: (kh, kw, Cin, Cout); output (..., H, W, Cout).
    """
    return _conv_nd(x, w, b, 2, "conv2d")


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3D convolution, x: (D, H, W, Cin), w: (kd, kh, kw, Cin, Cout)."""
    return _conv_nd(x, w, b, 3, "conv3d")


def pointwise_linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-position linear map over channels (a 1x1x1 convolution).

    x: (..., Cin), w: (Cin, Cout), b: (Cout,).
    """
    if w.ndim != 2:
        raise ShapeError(f"pointwise_linear: weight must be 2D, got {w.ndim}D")
    cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"pointwise_linear: channels {x.shape[-1]} != {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"pointwise_linear: bias shape {b.shape} != ({cout},)")
    _check_finite(*( (x, w, b) if b is not None else (x, w) ))

    x2 = x.data.reshape(-1, cin)
    out2 = x2 @ w.data
    if b is not None:
        out2 += b.data
    out_shape = x.shape[:-1] + (cout,)

    def bwd(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0) if b.requires_grad else None)
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record(inputs, out2.reshape(out_shape), bwd)
