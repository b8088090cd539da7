"""Bilinear grid sampling and the fused sparse-neighbor aggregation kernel.

Sampling positions are (row, col) fractional coordinates, clamped to the
image rectangle (border clamp, no zero padding).  At exactly-integer
coordinates the position gradient uses the right-continuous sub-gradient, so
both forward and backward are deterministic.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .tensor import ShapeError, Tensor, _check_finite, _check_same_dtype, _record

__all__ = ["bilinear_grid_sample", "neighbor_aggregate"]


def _corner_data(pos: np.ndarray, H: int, W: int):
    """Corner indices/weights for flattened (..., 2) positions.

    Returns flat per-sample arrays: 4 corner row-indices into an (H*W) map,
    4 corner weights, and the in-range masks for the position gradient.
    """
    py = pos[..., 0].ravel()
    px = pos[..., 1].ravel()
    cy = np.clip(py, 0, H - 1)
    cx = np.clip(px, 0, W - 1)
    y0 = np.clip(np.floor(cy), 0, max(H - 2, 0)).astype(np.int64)
    x0 = np.clip(np.floor(cx), 0, max(W - 2, 0)).astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (cy - y0).astype(pos.dtype)
    wx = (cx - x0).astype(pos.dtype)
    idx = (y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1)
    wts = ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)
    # Right-continuous convention: zero slope once the clamp is active.
    my = ((py >= 0) & (py < H - 1)).astype(pos.dtype)
    mx = ((px >= 0) & (px < W - 1)).astype(pos.dtype)
    return idx, wts, (wy, wx), (my, mx)


def bilinear_grid_sample(fmap: Tensor, pos: Tensor) -> Tensor:
    """Sample feature vectors at fractional positions.

    fmap: (H, W, C) or (B, H, W, C); pos: (M, 2) or (B, M, 2) paired per
    frame.  Output: (M, C) or (B, M, C).  Differentiable with respect to
    both the feature map and the positions.
    """
    batched = fmap.ndim == 4
    if batched:
        if pos.ndim != 3 or pos.shape[0] != fmap.shape[0]:
            raise ShapeError(f"batched sample: fmap {fmap.shape} vs pos {pos.shape}")
    elif fmap.ndim != 3 or pos.ndim != 2:
        raise ShapeError(f"sample: fmap {fmap.shape} vs pos {pos.shape}")
    if pos.shape[-1] != 2:
        raise ShapeError(f"positions must end in a (row, col) pair, got {pos.shape}")
    _check_same_dtype(fmap, pos)
    _check_finite(fmap, pos)

    if batched:
        B, H, W, C = fmap.shape
        M = pos.shape[1]
        out_shape = (B, M, C)
    else:
        H, W, C = fmap.shape
        M = pos.shape[0]
        B = 1
        out_shape = (M, C)

    fm2 = fmap.data.reshape(-1, C)
    idx, wts, _, (my, mx) = _corner_data(pos.data, H, W)
    if batched:
        base = np.repeat(np.arange(B, dtype=np.int64) * (H * W), M)
        idx = tuple(i + base for i in idx)

    out2 = (wts[0][:, None] * fm2[idx[0]] + wts[1][:, None] * fm2[idx[1]]
            + wts[2][:, None] * fm2[idx[2]] + wts[3][:, None] * fm2[idx[3]])

    def bwd(g):
        g2 = g.reshape(-1, C)
        gmap = None
        if fmap.requires_grad:
            n = g2.shape[0]
            A = sp.csr_matrix(
                (np.stack(wts, axis=1).ravel(),
                 np.stack(idx, axis=1).ravel(),
                 np.arange(n + 1, dtype=np.int64) * 4),
                shape=(n, B * H * W))
            gmap = (A.T @ g2).reshape(fmap.shape)
        gpos = None
        if pos.requires_grad:
            c00, c01 = fm2[idx[0]], fm2[idx[1]]
            c10, c11 = fm2[idx[2]], fm2[idx[3]]
            wy, wx = wts[2] + wts[3], wts[1] + wts[3]
            ddy = (1 - wx)[:, None] * (c10 - c00) + wx[:, None] * (c11 - c01)
            ddx = (1 - wy)[:, None] * (c01 - c00) + wy[:, None] * (c11 - c10)
            gy = np.einsum("mc,mc->m", g2, ddy) * my
            gx = np.einsum("mc,mc->m", g2, ddx) * mx
            gpos = np.stack([gy, gx], axis=-1).reshape(pos.shape)
        return gmap, gpos

    return _record((fmap, pos), out2.reshape(out_shape), bwd)


def neighbor_aggregate(q: Tensor, g: Tensor, w: Tensor, temperature: float,
                       logit_clamp: float = 30.0, return_alpha: bool = False):
    """Normalized exp-affinity aggregation over sampled neighbors.

    q: (N, Q, C) query embeddings for N spatial nodes in Q frames;
    g: (N, Bt, J, C) neighbor embeddings, shared by every query frame;
    w: (Bt,) positive per-frame weights.

    out[n, q] = sum_{bt,j} R * g[n,bt,j] / sum_{bt,j} R, with
    R = exp(clamp(<q, g>/temperature)) * w[bt].  The (Bt) axis is processed
    in chunks so the full logit tensor is never materialized.

    With ``return_alpha`` the normalized weights (N, Q, Bt, J) are also
    returned as a plain array (diagnostic, not taped).
    """
    if q.ndim != 3 or g.ndim != 4 or w.ndim != 1:
        raise ShapeError(f"neighbor_aggregate: q {q.shape}, g {g.shape}, w {w.shape}")
    N, Q, C = q.shape
    if g.shape[0] != N or g.shape[3] != C:
        raise ShapeError(f"neighbor_aggregate: q {q.shape} vs g {g.shape}")
    Bt, J = g.shape[1], g.shape[2]
    if w.shape != (Bt,):
        raise ShapeError(f"neighbor_aggregate: w {w.shape} != ({Bt},)")
    _check_finite(q, g, w)

    dt = q.dtype
    inv_t = dt.type(1.0 / temperature)
    lo, hi = dt.type(-logit_clamp), dt.type(logit_clamp)

    qd, gd, wd = q.data, g.data, w.data
    num = np.zeros((N, Q, C), dtype=dt)
    den = np.zeros((N, Q), dtype=dt)
    R_all: list[np.ndarray] = []
    for bt in range(Bt):
        gb = gd[:, bt]                                       # (N, J, C)
        logits = np.matmul(qd, gb.swapaxes(1, 2)) * inv_t    # (N, Q, J)
        np.clip(logits, lo, hi, out=logits)
        R = np.exp(logits, out=logits)
        R *= wd[bt]
        R_all.append(R)
        den += R.sum(axis=2)
        num += np.matmul(R, gb)
    out = num / den[:, :, None]

    # Same-arithmetic thresholds so clamped entries compare equal exactly.
    exp_hi = np.exp(hi) * wd
    exp_lo = np.exp(lo) * wd

    def bwd(G):
        gq = np.zeros_like(qd) if q.requires_grad else None
        gg = np.empty_like(gd) if g.requires_grad else None
        gw = np.zeros_like(wd) if w.requires_grad else None
        Gout = np.einsum("nqc,nqc->nq", G, out)
        for bt in range(Bt):
            gb = gd[:, bt]
            R = R_all[bt]
            alpha = R / den[:, :, None]
            Gg = np.matmul(G, gb.swapaxes(1, 2))             # (N, Q, J)
            t = alpha * (Gg - Gout[:, :, None])              # dL/dR * R
            if gw is not None:
                gw[bt] = t.sum(dtype=np.float64) / wd[bt]
            # Zero slope where the logit clamp was active.
            s = t * ((R < exp_hi[bt]) & (R > exp_lo[bt]))
            s *= inv_t
            if gq is not None:
                gq += np.matmul(s, gb)
            if gg is not None:
                gg[:, bt] = np.matmul(alpha.swapaxes(1, 2), G) + np.matmul(s.swapaxes(1, 2), qd)
        return gq, gg, gw

    result = _record((q, g, w), out, bwd)
    if return_alpha:
        alpha = np.stack([R / den[:, :, None] for R in R_all], axis=2)  # (N, Q, Bt, J)
        return result, alpha
    return result
