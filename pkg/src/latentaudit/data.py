"""Datasets and image I/O.

Images are float64 in [-1, 1] with layout (channels, height, width); datasets
stack them as (n, c, h, w). The synthetic family renders antialiased ellipses
over gradient backgrounds from a handful of per-image parameters, giving a
registered image class whose memorization-vs-generalization behavior is
controllable purely through the training-set size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import Rng, derive_seed


class FormatError(ValueError):
    """Malformed input file (bad magic, truncated payload, bad header)."""


@dataclass
class ImageDataset:
    images: np.ndarray  # (n, c, h, w), values in [-1, 1]
    source: str
    seed: int = 0

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise ValueError(f"dataset images must be (n,c,h,w), got {self.images.shape}")
        if self.images.min() < -1.0 or self.images.max() > 1.0:
            raise ValueError("dataset values must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    policy: str = "first-n"


def split(dataset: ImageDataset, spec: SplitSpec) -> tuple[ImageDataset, ImageDataset]:
    """First n_train images to train, remainder to validation; order kept."""
    n = len(dataset)
    if spec.policy != "first-n":
        raise ValueError(f"unknown split policy {spec.policy!r}")
    if not 0 < spec.n_train < n:
        raise ValueError(f"n_train must be in (0, {n}), got {spec.n_train}")
    train = ImageDataset(dataset.images[: spec.n_train].copy(), dataset.source + "[train]", dataset.seed)
    val = ImageDataset(dataset.images[spec.n_train :].copy(), dataset.source + "[val]", dataset.seed)
    return train, val


def gen_synthetic(n: int, side: int, seed: int) -> ImageDataset:
    """n grayscale side x side images of one rotated ellipse each.

    Per image the stream supplies: center jitter, axes, rotation, foreground
    level, background base level and gradient. Object stays roughly centered
    so the family behaves like a registered dataset; edges are antialiased.
    """
    if side not in (16, 32):
        raise ValueError(f"side must be 16 or 32, got {side}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = Rng(derive_seed(seed, "synthetic-data"), 0)
    ys, xs = np.meshgrid(np.arange(side, dtype=np.float64), np.arange(side, dtype=np.float64), indexing="ij")
    images = np.empty((n, 1, side, side), dtype=np.float64)
    half = side / 2.0
    for i in range(n):
        cx = half + (rng.uniform() - 0.5) * side / 4.0
        cy = half + (rng.uniform() - 0.5) * side / 4.0
        ax = side / 6.0 + rng.uniform() * side / 6.0
        bx = side / 6.0 + rng.uniform() * side / 6.0
        theta = rng.uniform() * np.pi
        fg = 0.2 + 0.8 * rng.uniform()
        bg = -0.9 + 0.5 * rng.uniform()
        gdir = rng.uniform() * 2.0 * np.pi
        gamp = 0.3 * rng.uniform()
        images[i, 0] = _render_ellipse(xs, ys, cx, cy, ax, bx, theta, fg, bg, gdir, gamp, side)
    np.clip(images, -1.0, 1.0, out=images)
    return ImageDataset(images, f"synthetic(n={n},side={side})", seed)


def _render_ellipse(xs, ys, cx, cy, ax, bx, theta, fg, bg, gdir, gamp, side):
    ct, st = np.cos(theta), np.sin(theta)
    u = ((xs - cx) * ct + (ys - cy) * st) / ax
    v = (-(xs - cx) * st + (ys - cy) * ct) / bx
    r = np.sqrt(u * u + v * v)
    # ~1.5 px antialiasing band at the r = 1 boundary
    edge = 1.5 / min(ax, bx)
    alpha = np.clip((1.0 - r) / edge + 0.5, 0.0, 1.0)
    grad = gamp * (((xs - cx) * np.cos(gdir) + (ys - cy) * np.sin(gdir)) / side)
    background = bg + grad
    return background + (fg - background) * alpha


# ---------------------------------------------------------------------------
# IDX (MNIST-style) ingestion

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def load_idx(images_path: str, labels_path: str | None = None, pad_to_32: bool = False) -> ImageDataset:
    """Load big-endian IDX image (and optional label) files.

    Pixels map affinely from [0, 255] to [-1, 1]. With pad_to_32, 28x28
    images are zero-padded (value -1) to 32x32.
    """
    with open(images_path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise FormatError(f"{images_path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != _IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad IDX image magic 0x{magic:08x}")
    expected = 16 + n * rows * cols
    if n < 1 or rows < 1 or cols < 1 or n * rows * cols > 1 << 40:
        raise FormatError(f"{images_path}: implausible dimensions {(n, rows, cols)}")
    if len(raw) != expected:
        raise FormatError(f"{images_path}: payload is {len(raw)} bytes, header implies {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols)
    images = pixels.astype(np.float64) / 255.0 * 2.0 - 1.0

    labels = None
    if labels_path is not None:
        with open(labels_path, "rb") as fh:
            lraw = fh.read()
        if len(lraw) < 8:
            raise FormatError(f"{labels_path}: truncated IDX header")
        lmagic, ln = struct.unpack(">II", lraw[:8])
        if lmagic != _IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad IDX label magic 0x{lmagic:08x}")
        if len(lraw) != 8 + ln:
            raise FormatError(f"{labels_path}: payload is {len(lraw)} bytes, header implies {8 + ln}")
        if ln != n:
            raise FormatError(f"label count {ln} does not match image count {n}")
        labels = np.frombuffer(lraw, dtype=np.uint8, offset=8).copy()

    if pad_to_32:
        if rows > 32 or cols > 32:
            raise FormatError(f"cannot pad {(rows, cols)} images to 32x32")
        top, left = (32 - rows) // 2, (32 - cols) // 2
        padded = np.full((n, 1, 32, 32), -1.0)
        padded[:, :, top : top + rows, left : left + cols] = images
        images = padded

    ds = ImageDataset(images, f"idx({images_path})")
    ds.labels = labels  # type: ignore[attr-defined]
    return ds


# ---------------------------------------------------------------------------
# PGM (P5) / PPM (P6) image files, maxval 255

def write_image(path: str, image: np.ndarray) -> None:
    """Write (1,h,w) as binary PGM or (3,h,w) as binary PPM.

    [-1, 1] maps to [0, 255] with round-half-to-even, so write-read-write is
    byte-idempotent.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (1,h,w) or (3,h,w), got {img.shape}")
    c, h, w = img.shape
    payload = np.clip(np.rint((img + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    header = (b"P5" if c == 1 else b"P6") + b"\n%d %d\n255\n" % (w, h)
    # planar (c,h,w) -> interleaved rows for PPM; PGM is a single plane
    body = payload[0].tobytes() if c == 1 else np.moveaxis(payload, 0, -1).tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def read_image(path: str) -> np.ndarray:
    """Read binary PGM/PPM back to float64 (c,h,w) in [-1, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    channels = 1 if magic == b"P5" else 3
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise FormatError(f"{path}: non-numeric header field") from e
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    expected = w * h * channels
    body = raw[pos : pos + expected]
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    img = flat.reshape(h, w) [None] if channels == 1 else np.moveaxis(flat.reshape(h, w, 3), -1, 0)
    return img / 255.0 * 2.0 - 1.0
