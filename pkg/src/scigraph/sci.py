"""Hardware-side model: coded masks, snapshot measurement, re-masking, and a
training-free alternating-projection/TV backbone for coarse reconstruction.

All functions here are pure numpy over immutable inputs; the differentiable
re-masking used inside the enhancer network is built separately from engine
primitives and is pinned to these reference semantics by tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VideoCube", "MaskSet", "Measurement",
    "generate_masks", "forward_measure", "remask",
    "gap_tv_reconstruct", "measurement_consistency", "tv_denoise",
]


@dataclass
class VideoCube:
    """B grayscale frames, stored frame-major (B, H, W), values nominally in
    [0, 1].  Values are clipped only at export, never during computation."""

    frames: np.ndarray
    role: str = "ground-truth"  # ground-truth | coarse | fine

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"VideoCube needs (B, H, W) with B >= 1, got {self.frames.shape}")

    @property
    def b(self) -> int:
        return self.frames.shape[0]

    @property
    def hw(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass
class MaskSet:
    """B coding masks (B, H, W); binary masks take values in {0, 1}."""

    masks: np.ndarray
    kind: str = "binary"

    def __post_init__(self):
        self.masks = np.asarray(self.masks)
        if self.masks.ndim != 3:
            raise ValueError(f"MaskSet needs (B, H, W), got {self.masks.shape}")
        if self.kind == "binary":
            vals = np.unique(self.masks)
            if not np.all(np.isin(vals, (0, 1))):
                raise ValueError("binary MaskSet must contain only 0/1")

    @property
    def b(self) -> int:
        return self.masks.shape[0]


@dataclass
class Measurement:
    """A single coded snapshot frame (H, W) plus the noise level it was
    synthesized with."""

    y: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.y.ndim != 2:
            raise ValueError(f"Measurement needs (H, W), got {self.y.shape}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("measurement contains non-finite values")


def generate_masks(h: int, w: int, b: int, seed: int, density: float = 0.5,
                   dtype=np.float32) -> MaskSet:
    """I.i.d. Bernoulli(density) binary masks, reproducible from the seed."""
    if h < 1 or w < 1 or b < 1:
        raise ValueError(f"mask dims must be positive, got {(h, w, b)}")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    masks = (rng.random((b, h, w)) < density).astype(dtype)
    return MaskSet(masks, kind="binary")


def _check_pair(video: VideoCube, masks: MaskSet) -> None:
    if video.frames.shape != masks.masks.shape:
        raise ValueError(f"video {video.frames.shape} vs masks {masks.masks.shape}")


def forward_measure(video: VideoCube, masks: MaskSet, noise_sigma: float = 0.0,
                    rng: np.random.Generator | None = None) -> Measurement:
    """Y = sum_b X_b * M_b + Z with Z ~ N(0, noise_sigma^2) i.i.d."""
    _check_pair(video, masks)
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    y = np.einsum("bhw,bhw->hw", video.frames, masks.masks,
                  dtype=video.frames.dtype)
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        y = y + noise_sigma * rng.standard_normal(y.shape).astype(y.dtype)
    return Measurement(y, noise_sigma=float(noise_sigma))


def remask(measurement: Measurement, coarse: VideoCube, masks: MaskSet) -> np.ndarray:
    """Per-frame re-modulated inputs: X^re_b = Y - sum_{t != b} X^co_t * M_t.

    Returns a (B, H, W) array.
    """
    _check_pair(coarse, masks)
    if masks.b < 1:
        raise ValueError("need at least one frame")
    masked = coarse.frames * masks.masks
    total = masked.sum(axis=0)
    return (measurement.y - total)[None] + masked


def measurement_consistency(video: VideoCube, masks: MaskSet,
                            measurement: Measurement) -> float:
    """RMSE between the noiseless re-measurement of `video` and `measurement`."""
    pred = forward_measure(video, masks, 0.0).y
    return float(np.sqrt(np.mean((pred - measurement.y) ** 2)))


def _grad2(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy = np.zeros_like(u)
    gx = np.zeros_like(u)
    gy[:-1] = u[1:] - u[:-1]
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    return gy, gx


def _div2(py: np.ndarray, px: np.ndarray) -> np.ndarray:
    d = np.zeros_like(py)
    d[0] = py[0]
    d[1:-1] = py[1:-1] - py[:-2]
    d[-1] = -py[-2]
    d[:, 0] += px[:, 0]
    d[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
    d[:, -1] += -px[:, -2]
    return d


def tv_denoise(v: np.ndarray, weight: float, iters: int = 5) -> np.ndarray:
    """Anisotropic TV denoising of one frame by projected dual ascent.

    Solves min_x 0.5||x - v||^2 + weight * (|Dx x|_1 + |Dy x|_1); the dual
    variables are box-projected to [-weight, weight] each step (tau = 0.25).
    """
    if weight <= 0 or iters < 1:
        return v.copy()
    py = np.zeros_like(v)
    px = np.zeros_like(v)
    tau = 0.25
    for _ in range(iters):
        x = v - _div2(py, px)
        gy, gx = _grad2(x)
        py = np.clip(py + tau * gy, -weight, weight)
        px = np.clip(px + tau * gx, -weight, weight)
    return v - _div2(py, px)


def gap_tv_reconstruct(measurement: Measurement, masks: MaskSet,
                       iterations: int = 50, tv_weight: float = 0.07,
                       tv_iters: int = 5, eps: float = 1e-6,
                       record_trace: bool = False):
    """Training-free coarse reconstruction by alternating projection.

    Each iteration applies the mask-normalized data step
    ``x <- x + M * (Y - A(x)) / (sum_b M_b^2 + eps)`` followed by per-frame
    anisotropic TV denoising.  Returns a coarse VideoCube; with
    ``record_trace`` also the per-iteration measurement-consistency RMSE.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    m = masks.masks.astype(np.float64)
    y = measurement.y.astype(np.float64)
    norm = (m * m).sum(axis=0)
    if np.any(norm == 0):
        warnings.warn("mask column with zero energy; data step is eps-guarded",
                      RuntimeWarning)
    norm = norm + eps
    x = np.zeros_like(m)
    trace = []
    for _ in range(iterations):
        resid = y - np.einsum("bhw,bhw->hw", x, m)
        x = x + m * (resid / norm)[None]
        if tv_weight > 0:
            for b in range(x.shape[0]):
                x[b] = tv_denoise(x[b], tv_weight, tv_iters)
        if record_trace:
            pred = np.einsum("bhw,bhw->hw", x, m)
            trace.append(float(np.sqrt(np.mean((pred - y) ** 2))))
    cube = VideoCube(x.astype(measurement.y.dtype), role="coarse")
    if record_trace:
        return cube, trace
    return cube
