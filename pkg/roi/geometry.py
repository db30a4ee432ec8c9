"""
Detection post-processing: confidence gating, best-detection selection,
padding, power-of-two square enlargement, cropping and paste-back.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.core.exceptions import ValidationError

from corpus.samples import BinaryMask


@dataclass(frozen=True)
class Detection:
    box: tuple
    confidence: float

    def __post_init__(self):
        x_min, y_min, x_max, y_max = self.box
        if not (x_min < x_max and y_min < y_max):
            raise ValidationError(f"Degenerate detection box {self.box}.")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"Detection confidence {self.confidence} outside [0, 1].")

    @property
    def width(self):
        return self.box[2] - self.box[0]

    @property
    def height(self):
        return self.box[3] - self.box[1]

    def clamped(self, image_size):
        """
        Clip the box to the image, or ``None`` when nothing of it remains inside.
        """
        width, height = image_size
        x_min, y_min, x_max, y_max = self.box
        box = (max(0, x_min), max(0, y_min), min(width, x_max), min(height, y_max))
        if box[0] >= box[2] or box[1] >= box[3]:
            return None
        return Detection(box, self.confidence)


@dataclass(frozen=True)
class RoiBox:
    crop: tuple
    side: int
    is_fallback: bool = False
    clamped_axes: tuple = ()

    @property
    def width(self):
        return self.crop[2] - self.crop[0]

    @property
    def height(self):
        return self.crop[3] - self.crop[1]

    @classmethod
    def full_image(cls, image_size):
        width, height = image_size
        return cls(crop=(0, 0, width, height), side=max(width, height), is_fallback=True)


def select_detection(detections, image_size, threshold=0.25):
    """
    Keep the single most confident detection at or above ``threshold``.

    Args:
        detections (list[Detection]): Raw detector output, any order.
        image_size (tuple): ``(width, height)`` of the original image.
        threshold (float): Minimum confidence.

    Returns:
        Detection | None: The winner, clipped to the image, or ``None`` meaning
        "segment the full image". Ties go to the earliest detection.
    """
    best = None
    for detection in detections:
        if detection.confidence < threshold:
            continue
        clamped = detection.clamped(image_size)
        if clamped is None:
            continue
        if best is None or clamped.confidence > best.confidence:
            best = clamped
    return best


def _next_power_of_two(value):
    return 1 << max(0, (value - 1).bit_length())


def _place(center, side, limit):
    """
    Position a ``side``-long interval around ``center`` inside ``[0, limit]``.
    Returns ``(start, end, clamped)``.
    """
    if side > limit:
        return 0, limit, True
    start = math.floor(center - side / 2)
    start = min(max(start, 0), limit - side)
    return start, start + side, False


def pad_and_square(box, image_size, pad_fraction=0.10):
    """
    Grow a detection box into the square crop the segmenter consumes.

    The box is padded by ``pad_fraction`` of its width/height on every side
    (and clipped to the image), then enlarged to the smallest power-of-two
    square covering it, centred on the padded box and shifted to stay inside
    the image. An axis on which the square cannot fit is clamped to the image
    and listed in ``clamped_axes``.

    Raises:
        ValidationError: If the box is degenerate or lies outside the image.
    """
    width, height = image_size
    x_min, y_min, x_max, y_max = box
    if not (x_min < x_max and y_min < y_max):
        raise ValidationError(f"Degenerate box {box}.")
    if x_min < 0 or y_min < 0 or x_max > width or y_max > height:
        raise ValidationError(f"Box {box} is outside the {width}x{height} image.")
    if pad_fraction < 0:
        raise ValidationError(f"pad_fraction must be non-negative, got {pad_fraction}.")

    pad_x = round(pad_fraction * (x_max - x_min), 6)
    pad_y = round(pad_fraction * (y_max - y_min), 6)
    padded = (
        max(0, math.floor(x_min - pad_x)),
        max(0, math.floor(y_min - pad_y)),
        min(width, math.ceil(x_max + pad_x)),
        min(height, math.ceil(y_max + pad_y)),
    )
    side = _next_power_of_two(max(padded[2] - padded[0], padded[3] - padded[1]))

    x0, x1, clamp_x = _place((padded[0] + padded[2]) / 2, side, width)
    y0, y1, clamp_y = _place((padded[1] + padded[3]) / 2, side, height)
    clamped_axes = tuple(axis for axis, hit in (('x', clamp_x), ('y', clamp_y)) if hit)
    return RoiBox(crop=(x0, y0, x1, y1), side=side, is_fallback=False, clamped_axes=clamped_axes)


def roi_for(detection, image_size, pad_fraction=0.10):
    """
    RoiBox for a selected detection, or the full-image fallback for ``None``.
    """
    if detection is None:
        return RoiBox.full_image(image_size)
    return pad_and_square(detection.box, image_size, pad_fraction)


@dataclass(frozen=True)
class RoiTransform:
    """
    Where a crop came from, enough to paste a crop-sized mask back.
    """
    offset_x: int
    offset_y: int
    width: int
    height: int
    full_width: int
    full_height: int

    @property
    def is_identity(self):
        return (self.offset_x, self.offset_y, self.width, self.height) == (0, 0, self.full_width, self.full_height)

    def crop_mask(self, mask):
        y0, x0 = self.offset_y, self.offset_x
        return BinaryMask(mask.labels[y0:y0 + self.height, x0:x0 + self.width])

    def paste(self, mask):
        """
        Place a crop-sized mask into a blank full-resolution mask.
        """
        if mask.size != (self.width, self.height):
            raise ValidationError(f"Mask is {mask.size}, crop is {(self.width, self.height)}.")
        full = np.zeros((self.full_height, self.full_width), dtype=np.uint8)
        full[self.offset_y:self.offset_y + self.height, self.offset_x:self.offset_x + self.width] = mask.labels
        return BinaryMask(full)


def crop_roi(image, roi):
    """
    Cut the ROI out of an image array (``height x width [x channels]``).

    Returns:
        tuple: ``(crop, RoiTransform)``; the crop is a copy.
    """
    full_height, full_width = image.shape[:2]
    x0, y0, x1, y1 = roi.crop
    crop = np.array(image[y0:y1, x0:x1], copy=True)
    return crop, RoiTransform(x0, y0, x1 - x0, y1 - y0, full_width, full_height)
