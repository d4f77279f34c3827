"""Label-aware image augmentation layers.

Every layer takes and returns an ImageSample, so class ids, boxes, and
segmentation masks stay geometrically consistent with the pixels. Layers
are pure functions of (sample, parameters, rng draw); randomness comes
only from an explicit Rng, one documented draw sequence per layer, so a
fixed seed reproduces the output bit for bit.

Images are [h, w, c] with c of 1 or 3, either uint8 in 0..255 or float32
in 0..1 (normalize intentionally leaves that range). Boxes use absolute
pixel corners (x_min, y_min, x_max, y_max) with x in [0, w] and y in
[0, h]. uint8 rounding is always half-up: floor(v + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ChannelError, DtypeError, ShapeError
from .rng import Rng
from .tensor import Tensor

GRAY_WEIGHTS = (0.299, 0.587, 0.114)  # BT.601 luma


@dataclass(frozen=True)
class LabelSet:
    class_id: Optional[int] = None
    boxes: Optional[np.ndarray] = None  # [n, 4] float32 corners
    mask: Optional[np.ndarray] = None  # [h, w] int32 class ids

    def __post_init__(self):
        if self.boxes is not None:
            b = np.asarray(self.boxes, dtype=np.float32).reshape(-1, 4)
            object.__setattr__(self, "boxes", b)
        if self.mask is not None:
            m = np.asarray(self.mask)
            if m.ndim != 2:
                raise ShapeError(f"mask must be [h, w], got shape {list(m.shape)}")
            object.__setattr__(self, "mask", m.astype(np.int32, copy=False))


EMPTY_LABELS = LabelSet()


@dataclass(frozen=True)
class ImageSample:
    image: np.ndarray
    labels: LabelSet = EMPTY_LABELS

    def __post_init__(self):
        img = self.image
        if isinstance(img, Tensor):
            img = img.to_numpy()
        img = np.asarray(img)
        if img.ndim != 3 or img.shape[2] not in (1, 3):
            raise ShapeError(f"image must be [h, w, c] with c in {{1, 3}}, got {list(img.shape)}")
        h, w = img.shape[:2]
        if h < 1 or w < 1:
            raise ShapeError(f"image extents must be >= 1, got {h}x{w}")
        if img.dtype not in (np.uint8, np.float32):
            raise DtypeError(f"image dtype must be uint8 or float32, got {img.dtype}")
        object.__setattr__(self, "image", img)
        lbl = self.labels if self.labels is not None else EMPTY_LABELS
        if not isinstance(lbl, LabelSet):
            raise TypeError("labels must be a LabelSet")
        if lbl.boxes is not None and len(lbl.boxes):
            b = lbl.boxes
            bad = (
                (b[:, 0] < 0)
                | (b[:, 1] < 0)
                | (b[:, 0] >= b[:, 2])
                | (b[:, 1] >= b[:, 3])
                | (b[:, 2] > w)
                | (b[:, 3] > h)
            )
            if bad.any():
                raise ShapeError(f"box {b[bad][0].tolist()} outside 0..{w} x 0..{h}")
        if lbl.mask is not None and lbl.mask.shape != (h, w):
            raise ShapeError(
                f"mask shape {list(lbl.mask.shape)} must match image {h}x{w}"
            )
        object.__setattr__(self, "labels", lbl)

    @property
    def height(self):
        return self.image.shape[0]

    @property
    def width(self):
        return self.image.shape[1]

    def with_image(self, image) -> "ImageSample":
        return ImageSample(image, self.labels)


def _round_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def _clamp_like(values: np.ndarray, dtype) -> np.ndarray:
    if dtype == np.uint8:
        return _round_u8(values)
    return np.clip(values, 0.0, 1.0).astype(np.float32)


# -- layers -------------------------------------------------------------


def grayscale(s: ImageSample) -> ImageSample:
    """BT.601 luma; labels pass through untouched."""
    if s.image.shape[2] != 3:
        raise ChannelError(f"grayscale needs 3 channels, got {s.image.shape[2]}")
    r, g, b = GRAY_WEIGHTS
    luma = (
        r * s.image[:, :, 0].astype(np.float64)
        + g * s.image[:, :, 1].astype(np.float64)
        + b * s.image[:, :, 2].astype(np.float64)
    )
    if s.image.dtype == np.uint8:
        out = _round_u8(luma)
    else:
        out = luma.astype(np.float32)
    return s.with_image(out[:, :, None])


def random_flip_horizontal(s: ImageSample, p: float, rng: Rng) -> ImageSample:
    """One float draw; flips when draw < p. Boxes reflect about x = w/2."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if rng.next_float() >= p:
        return s
    w = s.width
    image = np.ascontiguousarray(s.image[:, ::-1])
    lbl = s.labels
    boxes = lbl.boxes
    if boxes is not None and len(boxes):
        boxes = np.stack(
            [w - boxes[:, 2], boxes[:, 1], w - boxes[:, 0], boxes[:, 3]], axis=1
        ).astype(np.float32)
    mask = None if lbl.mask is None else np.ascontiguousarray(lbl.mask[:, ::-1])
    return ImageSample(image, LabelSet(lbl.class_id, boxes, mask))


def random_crop(s: ImageSample, out_h: int, out_w: int, rng: Rng) -> ImageSample:
    """Two uint draws, row offset first. Boxes are translated, clipped to
    the crop, and dropped once their area reaches zero."""
    h, w = s.height, s.width
    if out_h > h or out_w > w:
        raise ShapeError(f"crop {out_h}x{out_w} exceeds image {h}x{w}")
    oy = rng.next_uint(h - out_h + 1)
    ox = rng.next_uint(w - out_w + 1)
    image = np.ascontiguousarray(s.image[oy : oy + out_h, ox : ox + out_w])
    lbl = s.labels
    boxes = lbl.boxes
    if boxes is not None and len(boxes):
        shifted = boxes - np.array([ox, oy, ox, oy], np.float32)
        shifted[:, 0::2] = np.clip(shifted[:, 0::2], 0, out_w)
        shifted[:, 1::2] = np.clip(shifted[:, 1::2], 0, out_h)
        keep = (shifted[:, 2] > shifted[:, 0]) & (shifted[:, 3] > shifted[:, 1])
        boxes = np.ascontiguousarray(shifted[keep])
    mask = None if lbl.mask is None else np.ascontiguousarray(
        lbl.mask[oy : oy + out_h, ox : ox + out_w]
    )
    return ImageSample(image, LabelSet(lbl.class_id, boxes, mask))


def _bilinear_coords(out_n: int, in_n: int):
    # half-pixel centers: src = (dst + 0.5) * in/out - 0.5, clamped
    src = (np.arange(out_n, dtype=np.float64) + 0.5) * (in_n / out_n) - 0.5
    src = np.clip(src, 0.0, in_n - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_n - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(s: ImageSample, out_h: int, out_w: int) -> ImageSample:
    """Half-pixel-centers bilinear resample; masks use nearest-neighbor
    (class ids must not blend); boxes scale by the extent ratio."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target extents must be >= 1, got {out_h}x{out_w}")
    h, w = s.height, s.width
    y0, y1, fy = _bilinear_coords(out_h, h)
    x0, x1, fx = _bilinear_coords(out_w, w)
    img = s.image.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    if s.image.dtype == np.uint8:
        image = _round_u8(out)
    else:
        image = out.astype(np.float32)
    lbl = s.labels
    boxes = lbl.boxes
    if boxes is not None and len(boxes):
        sx, sy = out_w / w, out_h / h
        boxes = (boxes * np.array([sx, sy, sx, sy], np.float32)).astype(np.float32)
        boxes = np.clip(boxes, 0, [out_w, out_h, out_w, out_h]).astype(np.float32)
    mask = lbl.mask
    if mask is not None:
        # nearest neighbor, half-pixel centers, ties rounded half-up
        cy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
        cx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
        ys = np.clip(np.floor(cy + 0.5), 0, h - 1).astype(np.int64)
        xs = np.clip(np.floor(cx + 0.5), 0, w - 1).astype(np.int64)
        mask = np.ascontiguousarray(mask[ys][:, xs])
    return ImageSample(image, LabelSet(lbl.class_id, boxes, mask))


def _per_channel(values, c: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32).reshape(-1)
    if arr.size == 1:
        arr = np.repeat(arr, c)
    if arr.size != c:
        raise ShapeError(f"{name} must have 1 or {c} entries, got {arr.size}")
    return arr


def normalize(s: ImageSample, mean, std) -> ImageSample:
    """(x - mean) / std per channel; output range intentionally
    unrestricted."""
    if s.image.dtype != np.float32:
        raise DtypeError("normalize expects a float32 image; convert uint8 first")
    c = s.image.shape[2]
    mean = _per_channel(mean, c, "mean")
    std = _per_channel(std, c, "std")
    if (std <= 0).any():
        raise ValueError(f"std must be positive, got {std.tolist()}")
    return s.with_image(((s.image - mean) / std).astype(np.float32))


def denormalize(s: ImageSample, mean, std) -> ImageSample:
    """Inverse of normalize with the same mean/std."""
    if s.image.dtype != np.float32:
        raise DtypeError("denormalize expects a float32 image")
    c = s.image.shape[2]
    mean = _per_channel(mean, c, "mean")
    std = _per_channel(std, c, "std")
    if (std <= 0).any():
        raise ValueError(f"std must be positive, got {std.tolist()}")
    return s.with_image((s.image * std + mean).astype(np.float32))


def random_brightness(s: ImageSample, max_delta: float, rng: Rng) -> ImageSample:
    """One float draw; adds delta in [-max_delta, max_delta] (fraction of
    full range) and clamps back to the dtype range."""
    if max_delta < 0:
        raise ValueError(f"max_delta must be >= 0, got {max_delta}")
    delta = -max_delta + 2.0 * max_delta * rng.next_float()
    if s.image.dtype == np.uint8:
        out = _round_u8(s.image.astype(np.float64) + delta * 255.0)
    else:
        out = _clamp_like(s.image.astype(np.float64) + delta, np.float32)
    return s.with_image(out)


def _rot90_boxes(boxes: np.ndarray, w: int) -> np.ndarray:
    # counter-clockwise quarter turn: (x, y) -> (y, w - x)
    return np.stack(
        [boxes[:, 1], w - boxes[:, 2], boxes[:, 3], w - boxes[:, 0]], axis=1
    ).astype(np.float32)


def random_rotation_90(s: ImageSample, rng: Rng) -> ImageSample:
    """One uint draw k in 0..3; rotates counter-clockwise k quarter
    turns. k=0 is the identity."""
    k = rng.next_uint(4)
    image, lbl = s.image, s.labels
    boxes, mask = lbl.boxes, lbl.mask
    for _ in range(k):
        w = image.shape[1]
        image = np.ascontiguousarray(np.rot90(image))
        if boxes is not None and len(boxes):
            boxes = _rot90_boxes(boxes, w)
        if mask is not None:
            mask = np.ascontiguousarray(np.rot90(mask))
    return ImageSample(image, LabelSet(lbl.class_id, boxes, mask))


def cutout(s: ImageSample, size_h: int, size_w: int, rng: Rng, fill: float = 0.0) -> ImageSample:
    """Two uint draws for the patch center (row first); zeroes (or fills)
    a size_h x size_w window clipped to the image. Labels unchanged."""
    if size_h < 0 or size_w < 0:
        raise ShapeError(f"patch extents must be >= 0, got {size_h}x{size_w}")
    h, w = s.height, s.width
    cy = rng.next_uint(h)
    cx = rng.next_uint(w)
    if size_h == 0 or size_w == 0:
        return s
    y0 = max(0, cy - size_h // 2)
    x0 = max(0, cx - size_w // 2)
    y1 = min(h, y0 + size_h)
    x1 = min(w, x0 + size_w)
    image = s.image.copy()
    if s.image.dtype == np.uint8:
        image[y0:y1, x0:x1, :] = _round_u8(np.asarray(fill * 255.0))
    else:
        image[y0:y1, x0:x1, :] = np.float32(np.clip(fill, 0.0, 1.0))
    return s.with_image(image)


def compose(*layers):
    """Chain sample-to-sample callables into one augmentation function."""

    def apply(sample: ImageSample) -> ImageSample:
        for layer in layers:
            sample = layer(sample)
        return sample

    return apply


def to_float(s: ImageSample) -> ImageSample:
    """uint8 0..255 -> float32 0..1 (identity for float images)."""
    if s.image.dtype == np.float32:
        return s
    return s.with_image((s.image.astype(np.float32) / 255.0).astype(np.float32))


def rasterize_boxes(boxes, h: int, w: int) -> np.ndarray:
    """Paint box interiors as 1 on an [h, w] int32 grid (tests use this
    to compare box and mask geometry)."""
    grid = np.zeros((h, w), np.int32)
    if boxes is None:
        return grid
    for x0, y0, x1, y1 in np.asarray(boxes, np.float64):
        grid[int(np.ceil(y0 - 0.5)) : int(np.floor(y1 + 0.5)),
             int(np.ceil(x0 - 0.5)) : int(np.floor(x1 + 0.5))] = 1
    return grid
