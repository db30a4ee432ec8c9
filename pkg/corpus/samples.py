from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from django.core.exceptions import ValidationError
from django.db import models


class Spectrum(models.TextChoices):
    NIR = 'NIR', 'Near-infrared'
    VIS = 'VIS', 'Visible'


class SplitTag(models.TextChoices):
    TRAIN = 'train', 'Train'
    TEST = 'test', 'Test'


@dataclass(frozen=True)
class ImageSample:
    id: str
    image_path: Path
    mask_path: Optional[Path]
    dataset: str
    subject: str
    spectrum: Spectrum
    width: int
    height: int
    box: Optional[tuple] = None
    split: Optional[SplitTag] = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"Sample '{self.id}' has invalid dimensions {self.width}x{self.height}."
            )

    @property
    def size(self):
        return self.width, self.height

    @property
    def has_mask(self):
        return self.mask_path is not None


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """
    Iris/non-iris label grid stored row-major as an ``(height, width)`` uint8 array.
    """
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
            raise ValidationError(f"Mask labels must be a non-empty 2-D grid, got shape {labels.shape}.")
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError("Mask labels must be 0 (non-iris) or 1 (iris).")
        labels = labels.astype(np.uint8, copy=True)
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def from_bool(cls, array):
        return cls(np.asarray(array, dtype=bool).astype(np.uint8))

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def size(self):
        return self.width, self.height

    def complement(self):
        return BinaryMask(1 - self.labels)

    def bounding_box(self):
        """
        Tight box around the iris pixels as ``(x_min, y_min, x_max, y_max)``,
        maxima exclusive, or ``None`` for an empty mask.
        """
        rows = np.flatnonzero(self.labels.any(axis=1))
        cols = np.flatnonzero(self.labels.any(axis=0))
        if rows.size == 0:
            return None
        return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.labels.shape == other.labels.shape and bool(np.array_equal(self.labels, other.labels))

    def __hash__(self):
        return hash((self.labels.shape, self.labels.tobytes()))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: Optional[int]
    train_ids: tuple = field(default_factory=tuple)
    test_ids: tuple = field(default_factory=tuple)

    def partition(self, samples):
        """
        Return ``(train, test)`` sample lists in split order.
        """
        by_id = {sample.id: sample for sample in samples}
        return [by_id[i] for i in self.train_ids], [by_id[i] for i in self.test_ids]


@dataclass(frozen=True, eq=False)
class LabelledImage:
    """
    An image array (``height x width x 3`` uint8) paired with its optional mask.
    """
    sample_id: str
    image: np.ndarray
    mask: Optional[BinaryMask] = None
    dataset: str = ''

    @property
    def width(self):
        return self.image.shape[1]

    @property
    def height(self):
        return self.image.shape[0]
