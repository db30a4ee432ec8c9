import logging
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from PIL import Image

from iris_segmentation.runtime import get_setting

from .samples import BinaryMask

logger = logging.getLogger(__name__)


def image_size(path):
    """
    Read ``(width, height)`` from the image header without decoding pixels.
    """
    with Image.open(Path(path)) as image:
        return image.size


def load_image(path):
    """
    Load an eye image as a ``height x width x 3`` uint8 array.

    Grayscale (NIR) images are replicated to three channels so one encoder
    serves both spectra.
    """
    with Image.open(Path(path)) as image:
        return np.asarray(image.convert('RGB'), dtype=np.uint8).copy()


def save_image(array, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)
    return path


def _single_channel(image, path):
    if image.mode in ('1', 'L'):
        return np.asarray(image.convert('L'))
    if image.mode in ('I', 'I;16', 'F'):
        return np.clip(np.asarray(image, dtype=np.float64), 0, 255)
    channels = np.asarray(image.convert('RGBA') if 'A' in image.getbands() else image.convert('RGB'))
    colour = channels[..., :3]
    if not (np.array_equal(colour[..., 0], colour[..., 1]) and np.array_equal(colour[..., 0], colour[..., 2])):
        raise ValidationError(f"Mask {path} has unequal colour channels.")
    return colour[..., 0]


def load_mask(path):
    """
    Load a mask image, mapping intensities at or above the configured threshold
    (128) to iris.

    Raises:
        OSError: If the file is missing or unreadable.
        ValidationError: If a multi-channel or palette file has unequal channels.
    """
    with Image.open(Path(path)) as image:
        intensities = _single_channel(image, path)
    return BinaryMask((intensities >= get_setting('MASK_THRESHOLD')).astype(np.uint8))


def save_mask(mask, path):
    """
    Write a mask as a single-channel 8-bit image with iris pixels at 255.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.labels * np.uint8(255)).save(path)
    logger.debug("Wrote %dx%d mask to %s", mask.width, mask.height, path)
    return path
