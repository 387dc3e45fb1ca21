"""Online image augmentation for word images.

Images are 2-D float arrays in [0, 1] with 0 = ink and 1 = background.
The pipeline applies, in order: blur-or-sharpen, elastic mesh-grid
distortion, a composed shear/rotation/translation/scale warp, gamma
correction, and blending with a procedurally generated background
texture.  Every operation is a pure function of (input, parameters,
seed), so data-loading workers can run it in parallel with per-sample
seeds derived from a base seed and the sample index.

Range semantics: each parameter is drawn uniformly from its configured
[lo, hi] range and a draw equal to the operation's neutral value (0 for
every range, including the scale and gamma ranges, where 0 is interpreted
as "stage disabled") makes that stage an exact no-op.  A config with all
ranges [0, 0] therefore returns its input bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import ndimage

from .errors import InvalidConfig

Range = Tuple[float, float]

# Legibility caps: transforms stay mild enough that the text remains readable.
_CAPS = {
    "blur_sigma_range": (0.0, 5.0),
    "sharpen_amount_range": (0.0, 3.0),
    "elastic_magnitude_range": (0.0, 10.0),
    "shear_range": (-45.0, 45.0),
    "rotation_range": (-30.0, 30.0),
    "translate_range": (0.0, 0.2),
    "scale_range": (0.5, 2.0),
    "gamma_range": (0.2, 5.0),
    "background_blend_range": (0.0, 0.9),
}
# Ranges where [0, 0] means "stage disabled" because 0 itself is invalid.
_ZERO_DISABLES = {"scale_range", "gamma_range"}


@dataclass
class AugmentConfig:
    blur_sigma_range: Range = (0.0, 1.5)
    sharpen_amount_range: Range = (0.0, 1.0)
    elastic_grid: Tuple[int, int] = (4, 4)
    elastic_magnitude_range: Range = (0.0, 2.0)
    shear_range: Range = (-15.0, 15.0)
    rotation_range: Range = (-5.0, 5.0)
    translate_range: Range = (0.0, 0.02)
    scale_range: Range = (0.9, 1.1)
    gamma_range: Range = (0.5, 2.0)
    background_blend_range: Range = (0.0, 0.2)
    apply_probability: float = 0.5

    def validate(self) -> None:
        for name, (cap_lo, cap_hi) in _CAPS.items():
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise InvalidConfig(f"{name}: need lo <= hi, got ({lo}, {hi})")
            if name in _ZERO_DISABLES and (lo, hi) == (0.0, 0.0):
                continue
            if lo < cap_lo or hi > cap_hi:
                raise InvalidConfig(f"{name}=({lo}, {hi}) outside legibility caps ({cap_lo}, {cap_hi})")
        gx, gy = self.elastic_grid
        if gx < 1 or gy < 1:
            raise InvalidConfig(f"elastic_grid must have >=1 cell per axis, got {self.elastic_grid}")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise InvalidConfig(f"apply_probability must be in [0,1], got {self.apply_probability}")

    def to_dict(self) -> dict:
        return {
            "blur_sigma_range": list(self.blur_sigma_range),
            "sharpen_amount_range": list(self.sharpen_amount_range),
            "elastic_grid": list(self.elastic_grid),
            "elastic_magnitude_range": list(self.elastic_magnitude_range),
            "shear_range": list(self.shear_range),
            "rotation_range": list(self.rotation_range),
            "translate_range": list(self.translate_range),
            "scale_range": list(self.scale_range),
            "gamma_range": list(self.gamma_range),
            "background_blend_range": list(self.background_blend_range),
            "apply_probability": self.apply_probability,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AugmentConfig":
        kwargs = {}
        for name in cls.__dataclass_fields__:
            if name in payload:
                value = payload[name]
                kwargs[name] = tuple(value) if isinstance(value, (list, tuple)) else value
        return cls(**kwargs)


def check_gray_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidConfig(f"expected a 2-D image, got shape {img.shape}")
    if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > 1.0:
        raise InvalidConfig("image values must be finite and in [0, 1]")
    return img


def derive_seed(base_seed: int, *indices: int) -> int:
    """Stable per-sample seed from a base seed plus indices (e.g. epoch, row)."""
    return int(np.random.SeedSequence([int(base_seed), *map(int, indices)]).generate_state(1)[0])


def _bilinear_upsample(grid: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Sample a coarse lattice at pixel resolution with bilinear weights."""
    h, w = shape
    gy, gx = grid.shape
    ys = np.linspace(0.0, gy - 1.0, h)
    xs = np.linspace(0.0, gx - 1.0, w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(grid, [yy, xx], order=1, mode="nearest")


def elastic_control_offsets(grid: Tuple[int, int], magnitude: float, seed: int) -> np.ndarray:
    """Random (dy, dx) offsets for the (cells_y+1, cells_x+1) mesh nodes."""
    cells_x, cells_y = grid
    rng = np.random.default_rng(seed)
    return rng.uniform(-magnitude, magnitude, size=(cells_y + 1, cells_x + 1, 2))


def elastic_warp(img: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Warp with given mesh-node (dy, dx) offsets.

    The node lattice is bilinearly interpolated to a per-pixel
    displacement field and each output pixel samples the input at
    (pixel + displacement), border value 1.0.
    """
    img = check_gray_image(img)
    h, w = img.shape
    dy = _bilinear_upsample(offsets[..., 0], (h, w))
    dx = _bilinear_upsample(offsets[..., 1], (h, w))
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    warped = ndimage.map_coordinates(img, [yy + dy, xx + dx], order=1, mode="grid-constant", cval=1.0)
    return np.clip(warped, 0.0, 1.0)


def elastic_transform(img: np.ndarray, grid: Tuple[int, int], magnitude: float, seed: int) -> np.ndarray:
    """Mesh-grid elastic warp with uniform random node offsets in [-magnitude, +magnitude]."""
    img = check_gray_image(img)
    cells_x, cells_y = grid
    if cells_x < 1 or cells_y < 1:
        raise InvalidConfig(f"grid cells must be >= 1, got {grid}")
    if magnitude < 0:
        raise InvalidConfig(f"magnitude must be >= 0, got {magnitude}")
    if magnitude == 0:
        return img.copy()
    return elastic_warp(img, elastic_control_offsets(grid, magnitude, seed))


def affine_transform(img: np.ndarray, shear_deg: float, rot_deg: float,
                     translate: Tuple[float, float], scale: float) -> np.ndarray:
    """Composed affine warp about the image center with bilinear sampling.

    Positive rotation turns the content counterclockwise; positive shear
    slants the top of the glyphs to the right; ``translate`` is a (fx, fy)
    fraction of the width/height.  Exposed borders are filled with the
    background value 1.0.
    """
    img = check_gray_image(img)
    if scale <= 0:
        raise InvalidConfig(f"scale must be > 0, got {scale}")
    fx, fy = translate
    if shear_deg == 0 and rot_deg == 0 and fx == 0 and fy == 0 and scale == 1:
        return img.copy()
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(rot_deg)
    phi = math.radians(shear_deg)
    # Forward maps in (x, y-down) coordinates relative to the center.
    rot = np.array([[math.cos(theta), math.sin(theta)],
                    [-math.sin(theta), math.cos(theta)]])
    shear = np.array([[1.0, -math.tan(phi)], [0.0, 1.0]])
    fwd = rot @ shear * scale
    inv = np.linalg.inv(fwd)
    tx, ty = fx * w, fy * h
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    px = xx - cx - tx
    py = yy - cy - ty
    src_x = inv[0, 0] * px + inv[0, 1] * py + cx
    src_y = inv[1, 0] * px + inv[1, 1] * py + cy
    warped = ndimage.map_coordinates(img, [src_y, src_x], order=1, mode="grid-constant", cval=1.0)
    return np.clip(warped, 0.0, 1.0)


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(img, sigma=sigma, mode="nearest")


def _sharpen(img: np.ndarray, amount: float) -> np.ndarray:
    # Unsharp masking with a fixed 1px-sigma smoothing kernel.
    return img + amount * (img - ndimage.gaussian_filter(img, sigma=1.0, mode="nearest"))


def random_background(shape: Tuple[int, int], seed: int) -> np.ndarray:
    """Low-frequency paper-like texture in [~0.6, 1.0]."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.6, 1.0, size=(4, 4))
    return _bilinear_upsample(coarse, shape)


def photometric_transform(img: np.ndarray, gamma: float, blur_sigma: float,
                          sharpen: float, bg: np.ndarray, blend: float) -> np.ndarray:
    """blend * bg + (1 - blend) * sharpen_or_blur(img) ** gamma, clamped to [0, 1]."""
    img = check_gray_image(img)
    if gamma <= 0:
        raise InvalidConfig(f"gamma must be > 0, got {gamma}")
    if not 0.0 <= blend <= 1.0:
        raise InvalidConfig(f"blend must be in [0,1], got {blend}")
    if blur_sigma < 0 or sharpen < 0:
        raise InvalidConfig("blur_sigma and sharpen must be >= 0")
    if blend > 0:
        bg = check_gray_image(bg)
        if bg.shape != img.shape:
            raise InvalidConfig(f"background shape {bg.shape} != image shape {img.shape}")
    if gamma == 1.0 and blur_sigma == 0 and sharpen == 0 and blend == 0:
        return img.copy()
    out = img
    if blur_sigma > 0:
        out = _blur(out, blur_sigma)
    if sharpen > 0:
        out = _sharpen(out, sharpen)
    out = np.clip(out, 0.0, 1.0)
    if gamma != 1.0:
        out = out ** gamma
    if blend > 0:
        out = blend * bg + (1.0 - blend) * out
    return np.clip(out, 0.0, 1.0)


def apply_pipeline(img: np.ndarray, cfg: AugmentConfig, seed: int) -> np.ndarray:
    """Run the full augmentation chain, deterministically under ``seed``.

    With probability ``apply_probability`` the stages run in the fixed
    order blur-or-sharpen, elastic, shear/rotation/translation/scale,
    gamma, background blend, each with parameters drawn uniformly from its
    range; otherwise the input is returned unchanged.
    """
    cfg.validate()
    img = check_gray_image(img)
    rng = np.random.default_rng(seed)
    if rng.random() >= cfg.apply_probability:
        return img.copy()

    use_blur = rng.integers(0, 2) == 0
    blur_sigma = rng.uniform(*cfg.blur_sigma_range)
    sharpen_amount = rng.uniform(*cfg.sharpen_amount_range)
    elastic_magnitude = rng.uniform(*cfg.elastic_magnitude_range)
    elastic_seed = int(rng.integers(0, 2**31 - 1))
    shear = rng.uniform(*cfg.shear_range)
    rotation = rng.uniform(*cfg.rotation_range)
    tx = rng.uniform(*cfg.translate_range) * (1 if rng.random() < 0.5 else -1)
    ty = rng.uniform(*cfg.translate_range) * (1 if rng.random() < 0.5 else -1)
    scale = rng.uniform(*cfg.scale_range)
    gamma = rng.uniform(*cfg.gamma_range)
    blend = rng.uniform(*cfg.background_blend_range)
    bg_seed = int(rng.integers(0, 2**31 - 1))

    out = img
    if use_blur and blur_sigma > 0:
        out = np.clip(_blur(out, blur_sigma), 0.0, 1.0)
    elif not use_blur and sharpen_amount > 0:
        out = np.clip(_sharpen(out, sharpen_amount), 0.0, 1.0)
    if elastic_magnitude > 0:
        out = elastic_transform(out, cfg.elastic_grid, elastic_magnitude, elastic_seed)
    if scale == 0.0:  # disabled scale range
        scale = 1.0
    if shear != 0 or rotation != 0 or tx != 0 or ty != 0 or scale != 1.0:
        out = affine_transform(out, shear, rotation, (tx, ty), scale)
    if gamma not in (0.0, 1.0):  # 0 means the gamma range is disabled
        out = np.clip(out, 0.0, 1.0) ** gamma
    if blend > 0:
        out = blend * random_background(out.shape, bg_seed) + (1.0 - blend) * out
    return np.clip(out, 0.0, 1.0)
