"""File I/O for cubes, masks, measurements, flows and 8-bit frame exports.

On-disk ".tns" axis order is (H, W, B) for cubes/masks and (H, W, 2, B) for
flow stacks; in memory everything is frame-major.  Frame exports clip to
[0, 1] and scale to 0..255 (the only place values are clipped).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .engine.tns import TnsFormatError, load_tns, save_tns
from .sci import MaskSet, Measurement, VideoCube

__all__ = [
    "save_cube", "load_cube", "save_masks", "load_masks",
    "save_measurement", "load_measurement",
    "export_frames", "load_frames_dir", "flow_to_png",
]


def save_cube(path, cube: VideoCube) -> None:
    save_tns(path, np.moveaxis(cube.frames, 0, -1))


def load_cube(path, role: str = "ground-truth") -> VideoCube:
    arr = load_tns(path)
    if arr.ndim != 3:
        raise TnsFormatError(f"{path}: cube file must be rank 3 (H, W, B), got {arr.ndim}")
    return VideoCube(np.ascontiguousarray(np.moveaxis(arr, -1, 0)), role=role)


def save_masks(path, masks: MaskSet) -> None:
    save_tns(path, np.moveaxis(masks.masks, 0, -1))


def load_masks(path, kind: str = "binary") -> MaskSet:
    arr = load_tns(path)
    if arr.ndim != 3:
        raise TnsFormatError(f"{path}: mask file must be rank 3 (H, W, B), got {arr.ndim}")
    return MaskSet(np.ascontiguousarray(np.moveaxis(arr, -1, 0)), kind=kind)


def save_measurement(path, measurement: Measurement) -> None:
    save_tns(path, measurement.y)


def load_measurement(path, noise_sigma: float = 0.0) -> Measurement:
    arr = load_tns(path)
    if arr.ndim != 2:
        raise TnsFormatError(f"{path}: measurement must be rank 2, got {arr.ndim}")
    return Measurement(arr, noise_sigma=noise_sigma)


def _to_u8(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def export_frames(out_dir, cube: VideoCube, fmt: str = "png", prefix: str = "frame") -> list[Path]:
    """Write each frame as an 8-bit grayscale PNG or PGM."""
    if fmt not in ("png", "pgm"):
        raise ValueError(f"unsupported frame format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for b in range(cube.b):
        p = out_dir / f"{prefix}_{b:04d}.{fmt}"
        Image.fromarray(_to_u8(cube.frames[b]), mode="L").save(p)
        paths.append(p)
    return paths


def load_frames_dir(path) -> np.ndarray:
    """Load a directory of numerically ordered 8-bit grayscale frames.

    Returns (B, H, W) float32 in [0, 1]; frames must share one size.
    """
    path = Path(path)
    files = sorted(p for p in path.iterdir()
                   if p.suffix.lower() in (".png", ".pgm"))
    if not files:
        raise FileNotFoundError(f"no .png/.pgm frames in {path}")
    frames = []
    for p in files:
        img = Image.open(p).convert("L")
        frames.append(np.asarray(img, dtype=np.float32) / 255.0)
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ValueError(f"non-uniform frame sizes in {path}: {sorted(shapes)}")
    return np.stack(frames, axis=0)


def flow_to_png(path, uv: np.ndarray, max_mag: float | None = None) -> None:
    """HSV-encode one flow field (hue = direction, value = magnitude)."""
    u, v = uv[..., 0], uv[..., 1]
    mag = np.hypot(u, v)
    if max_mag is None:
        max_mag = max(float(mag.max()), 1e-6)
    hue = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0
    val = np.clip(mag / max_mag, 0, 1)
    hsv = np.stack([hue, np.ones_like(hue), val], axis=-1)
    rgb = (_hsv_to_rgb(hsv) * 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0] * 6.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    rgb = np.zeros(hsv.shape, dtype=hsv.dtype)
    for idx, (r, g, b) in enumerate([(v, t, p), (q, v, p), (p, v, t),
                                     (p, q, v), (t, p, v), (v, p, q)]):
        m = i == idx
        rgb[..., 0][m] = r[m]
        rgb[..., 1][m] = g[m]
        rgb[..., 2][m] = b[m]
    return rgb
