from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from corpus.imaging import save_image
from corpus.samples import BinaryMask

GREEN = np.array([0, 255, 0], dtype=np.uint8)
RED = np.array([255, 0, 0], dtype=np.uint8)


@dataclass(frozen=True, eq=False)
class OverlayImage:
    """
    An eye image with false positives painted green and false negatives red.
    """
    pixels: np.ndarray
    false_positives: BinaryMask
    false_negatives: BinaryMask

    def save(self, path):
        return save_image(self.pixels, path)


def _blend(source, colour, alpha):
    mixed = (1.0 - alpha) * source.astype(np.float64) + alpha * colour
    return np.clip(np.rint(mixed), 0, 255).astype(np.uint8)


def render_overlay(image, pred, truth, alpha=1.0):
    """
    Tint FP pixels (predicted iris, not iris) green and FN pixels (missed
    iris) red; every other pixel keeps its value.

    ``alpha`` blends the tint over the source pixel, rounding to the nearest
    level; at the default 1.0 the tint is solid. A solid tint cannot be told
    apart from a source pixel that is already pure green or red, so the
    ``false_positives`` and ``false_negatives`` masks are the authoritative
    record of what was tinted.

    Raises:
        ValidationError: If image, prediction and truth sizes differ, or
            ``alpha`` is outside (0, 1].
    """
    if not 0.0 < alpha <= 1.0:
        raise ValidationError(f"Overlay alpha must lie in (0, 1], got {alpha}.")
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    height, width = image.shape[:2]
    if pred.size != (width, height) or truth.size != (width, height):
        raise ValidationError(
            f"Overlay inputs differ in size: image {(width, height)}, prediction {pred.size}, truth {truth.size}."
        )
    p = pred.labels.astype(bool)
    t = truth.labels.astype(bool)
    fp = p & ~t
    fn = ~p & t
    pixels = image.copy()
    pixels[fp] = _blend(image[fp], GREEN, alpha)
    pixels[fn] = _blend(image[fn], RED, alpha)
    return OverlayImage(pixels, BinaryMask.from_bool(fp), BinaryMask.from_bool(fn))


def tinted_pixels(overlay, original, colour):
    """
    Pixels of ``overlay`` that were changed to ``colour``.
    """
    changed = np.any(overlay.pixels != np.asarray(original, dtype=np.uint8), axis=-1)
    return BinaryMask.from_bool(changed & np.all(overlay.pixels == colour, axis=-1))
