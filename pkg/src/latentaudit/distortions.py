"""Image distortions probing how specific a generator's manifold is.

Three families, all parameterized by a strength sigma_d and exactly the
identity at strength zero:

  * warp           - bilinear resampling along a Gaussian random displacement
                     field smoothed with a normalized Gaussian kernel
  * patch_noise    - one square patch replaced by clipped Gaussian noise
  * additive_noise - clipped i.i.d. Gaussian noise on every pixel
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng, derive_seed

KINDS = ("warp", "patch_noise", "additive_noise")


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    sigma_d: float = 0.0
    smoothing_radius: float = 2.0  # warp only
    patch_size: int = 0  # patch_noise only
    seed: int = 0

    def validate(self, side: int) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if self.sigma_d < 0:
            raise ValueError("sigma_d must be >= 0")
        if self.kind == "patch_noise" and not 0 <= self.patch_size <= side:
            raise ValueError(f"patch_size must be in [0, {side}]")


def apply_distortion(spec: DistortionSpec, image: np.ndarray, rng: Rng) -> np.ndarray:
    spec.validate(image.shape[-1])
    if spec.kind == "warp":
        return warp(image, spec.sigma_d, spec.smoothing_radius, rng)
    if spec.kind == "patch_noise":
        return patch_noise(image, spec.patch_size, spec.sigma_d, rng)
    return additive_noise(image, spec.sigma_d, rng)


def distort_dataset(spec: DistortionSpec, images: np.ndarray, seed: int) -> np.ndarray:
    """Distort a (n, c, h, w) batch, image i on stream i."""
    base = derive_seed(seed, f"distort-{spec.kind}")
    return np.stack([apply_distortion(spec, img, Rng(base, i)) for i, img in enumerate(images)])


# ---------------------------------------------------------------------------


def _gaussian_kernel(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    sigma = max(radius / 2.0, 1e-9)
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _smooth2d(field: np.ndarray, radius: float) -> np.ndarray:
    """Separable truncated-Gaussian smoothing with per-pixel renormalization,
    so border displacements keep their magnitude."""
    if radius <= 0:
        return field
    k = _gaussian_kernel(radius)
    r = (len(k) - 1) // 2
    ones = np.ones_like(field)

    def along(values, axis):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        padded = np.pad(values, pad)
        out = np.zeros_like(values)
        for i, w in enumerate(k):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(i, i + values.shape[axis])
            out += w * padded[tuple(sl)]
        return out

    num = along(along(field, 0), 1)
    den = along(along(ones, 0), 1)
    return num / den


def warp_with_field(image: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Pull-style bilinear resampling: out[y, x] = image(y + dy, x + dx),
    sample coordinates clamped to the image rectangle."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    c, h, w = img.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sy = np.clip(ys + dy, 0.0, h - 1.0)
    sx = np.clip(xs + dx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    out = np.empty_like(img)
    for ch in range(c):
        p = img[ch]
        out[ch] = (
            p[y0, x0] * (1 - fy) * (1 - fx)
            + p[y0, x1] * (1 - fy) * fx
            + p[y1, x0] * fy * (1 - fx)
            + p[y1, x1] * fy * fx
        )
    return out[0] if squeeze else out


def warp(image: np.ndarray, sigma_d: float, smoothing_radius: float, rng: Rng) -> np.ndarray:
    """Smooth random vector-field warp; sigma_d = 0 returns the input exactly."""
    img = np.asarray(image, dtype=np.float64)
    if sigma_d == 0:
        return img.copy()
    h, w = img.shape[-2], img.shape[-1]
    dy = rng.normals(h, w) * sigma_d
    dx = rng.normals(h, w) * sigma_d
    return warp_with_field(img, _smooth2d(dy, smoothing_radius), _smooth2d(dx, smoothing_radius))


def patch_noise(image: np.ndarray, patch_size: int, sigma_d: float, rng: Rng) -> np.ndarray:
    """Replace one randomly placed square patch with N(0, sigma_d^2) noise
    clipped to [-1, 1]; patch_size = 0 returns the input exactly."""
    img = np.asarray(image, dtype=np.float64).copy()
    if patch_size == 0:
        return img
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    c, h, w = img.shape
    if patch_size > min(h, w):
        raise ValueError(f"patch_size {patch_size} exceeds image side {min(h, w)}")
    top = rng.randbelow(h - patch_size + 1)
    left = rng.randbelow(w - patch_size + 1)
    noise = np.clip(rng.normals(c, patch_size, patch_size) * sigma_d, -1.0, 1.0)
    img[:, top : top + patch_size, left : left + patch_size] = noise
    return img[0] if squeeze else img


def additive_noise(image: np.ndarray, sigma_d: float, rng: Rng) -> np.ndarray:
    """clip(image + N(0, sigma_d^2), -1, 1); sigma_d = 0 returns the input."""
    img = np.asarray(image, dtype=np.float64)
    if sigma_d == 0:
        return img.copy()
    noise = rng.normals(*img.shape) * sigma_d
    return np.clip(img + noise, -1.0, 1.0)


# ---------------------------------------------------------------------------
# sweep grids spanning identity to destroyed, and the "small" middle points


def grid_for(kind: str, side: int) -> list[DistortionSpec]:
    if kind == "warp":
        return [DistortionSpec("warp", sigma_d=s) for s in (0.0, 0.5, 1.0, 2.0, 4.0)]
    if kind == "patch_noise":
        sizes = [0, side // 4, side // 2, 3 * side // 4, side]
        return [DistortionSpec("patch_noise", sigma_d=0.5, patch_size=ps) for ps in sizes]
    if kind == "additive_noise":
        return [DistortionSpec("additive_noise", sigma_d=s) for s in (0.0, 0.05, 0.1, 0.2, 0.4)]
    raise ValueError(f"unknown distortion kind {kind!r}")


def small_distortion(kind: str, side: int) -> DistortionSpec:
    """Middle grid point; the 'small distort' column of the audit."""
    return grid_for(kind, side)[2]


def grid_strength(spec: DistortionSpec) -> float:
    """The swept quantity for a grid point (sigma_d, or patch size)."""
    return float(spec.patch_size) if spec.kind == "patch_noise" else spec.sigma_d
