from dataclasses import dataclass

import numpy as np
import torch
from django.core.exceptions import ImproperlyConfigured

from corpus.samples import BinaryMask
from iris_segmentation.runtime import get_setting

from .model import DOWNSAMPLING

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class Padding:
    top: int
    bottom: int
    left: int
    right: int


def padding_multiple():
    """
    The configured FCN padding multiple; it must be a positive multiple of the
    encoder's downsampling factor.
    """
    multiple = get_setting('FCN_MULTIPLE')
    if multiple < DOWNSAMPLING or multiple % DOWNSAMPLING:
        raise ImproperlyConfigured(f"FCN_MULTIPLE must be a positive multiple of {DOWNSAMPLING}, got {multiple}.")
    return multiple


def pad_to_multiple(image, multiple=None):
    """
    Zero-pad an ``H x W [x C]`` array symmetrically up to the next multiple
    (``FCN_MULTIPLE`` by default).

    Returns:
        tuple: ``(padded, Padding)``.
    """
    if multiple is None:
        multiple = padding_multiple()
    height, width = image.shape[:2]
    extra_h = -height % multiple
    extra_w = -width % multiple
    padding = Padding(extra_h // 2, extra_h - extra_h // 2, extra_w // 2, extra_w - extra_w // 2)
    widths = [(padding.top, padding.bottom), (padding.left, padding.right)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, widths), padding


def strip_padding(mask, padding):
    labels = mask.labels
    height, width = labels.shape
    return BinaryMask(labels[padding.top:height - padding.bottom, padding.left:width - padding.right])


def image_to_tensor(image):
    """
    ``H x W x 3`` uint8 image -> ``3 x H x W`` float tensor normalised with
    ImageNet statistics.
    """
    array = np.asarray(image, dtype=np.float32) / 255.0
    if array.ndim == 2:
        array = np.repeat(array[..., None], 3, axis=-1)
    array = (array - IMAGENET_MEAN) / IMAGENET_STD
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1)))


def mask_to_tensor(mask):
    return torch.from_numpy(mask.labels.astype(np.int64))
