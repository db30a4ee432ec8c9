"""
Synthetic eye images with exact iris masks, for desk-scale runs without the
licensed iris datasets.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from django.core.exceptions import ValidationError

from corpus.imaging import save_image, save_mask
from corpus.manifest import write_manifest
from corpus.samples import BinaryMask, ImageSample, Spectrum
from ganseg.config import is_power_of_two

logger = logging.getLogger(__name__)

# VIS iris colours (RGB): brown, hazel, green, blue
IRIS_COLOURS = np.array([[110, 70, 40], [140, 110, 60], [90, 120, 80], [80, 110, 150]], dtype=np.float64)
SKIN = np.array([205, 160, 140], dtype=np.float64)


@dataclass(frozen=True)
class EyeParameters:
    """
    Everything needed to redraw one synthetic eye and its mask.
    """
    sample_id: str
    center_x: float
    center_y: float
    iris_radius: float
    pupil_radius: float
    sclera_axes: tuple
    eyelid_y: Optional[float]
    iris_intensity: float
    pupil_intensity: float

    def iris_box(self, side):
        x0 = max(0, int(np.ceil(self.center_x - self.iris_radius)))
        y0 = max(0, int(np.ceil(self.center_y - self.iris_radius)))
        x1 = min(side, int(np.floor(self.center_x + self.iris_radius)) + 1)
        y1 = min(side, int(np.floor(self.center_y + self.iris_radius)) + 1)
        return x0, y0, x1, y1


def iris_mask(params, side):
    """
    Annulus between pupil and iris radius, minus anything above the eyelid.
    """
    yy, xx = np.mgrid[:side, :side]
    d2 = (xx - params.center_x) ** 2 + (yy - params.center_y) ** 2
    mask = (d2 <= params.iris_radius ** 2) & (d2 > params.pupil_radius ** 2)
    if params.eyelid_y is not None:
        mask &= yy >= params.eyelid_y
    return BinaryMask.from_bool(mask)


def _sample_parameters(sample_id, side, rng, eyelid_probability):
    iris_radius = rng.uniform(0.15, 0.25) * side
    margin = iris_radius + 2
    center_x = rng.uniform(margin, side - margin)
    center_y = rng.uniform(margin, side - margin)
    eyelid_y = None
    if rng.random() < eyelid_probability:
        eyelid_y = center_y - iris_radius + rng.uniform(0.2, 0.6) * iris_radius
    return EyeParameters(
        sample_id=sample_id,
        center_x=float(center_x),
        center_y=float(center_y),
        iris_radius=float(iris_radius),
        pupil_radius=float(iris_radius * rng.uniform(0.25, 0.5)),
        sclera_axes=(float(iris_radius * rng.uniform(1.8, 2.4)), float(iris_radius * rng.uniform(1.05, 1.3))),
        eyelid_y=None if eyelid_y is None else float(eyelid_y),
        iris_intensity=float(rng.uniform(80, 140)),
        pupil_intensity=float(rng.uniform(5, 30)),
    )


def draw_synthetic_eye(params, side, rng, spectrum=Spectrum.NIR):
    """
    Render the eye described by ``params`` as a ``side x side x 3`` uint8 image.

    Layers, back to front: textured skin, elliptical sclera, radially textured
    iris, pupil, then the eyelid band. NIR images are gray; VIS images are
    tinted with a random iris colour.
    """
    yy, xx = np.mgrid[:side, :side].astype(np.float64)
    dx, dy = xx - params.center_x, yy - params.center_y
    d2 = dx ** 2 + dy ** 2
    angle = np.arctan2(dy, dx)

    gray = 60 + 25 * rng.random((side, side))
    a, b = params.sclera_axes
    sclera = (dx / a) ** 2 + (dy / b) ** 2 <= 1
    gray[sclera] = rng.uniform(190, 230)
    iris = d2 <= params.iris_radius ** 2
    texture = 15 * np.sin(angle * rng.integers(12, 30)) + 10 * rng.standard_normal((side, side))
    gray[iris] = params.iris_intensity + texture[iris]
    gray[d2 <= params.pupil_radius ** 2] = params.pupil_intensity
    eyelid = yy < params.eyelid_y if params.eyelid_y is not None else np.zeros((side, side), dtype=bool)
    gray[eyelid] = 150 + 20 * rng.random(int(eyelid.sum()))
    gray = np.clip(gray, 0, 255)

    if spectrum == Spectrum.NIR:
        rgb = np.repeat(gray[..., None], 3, axis=-1)
    else:
        colour = IRIS_COLOURS[rng.integers(len(IRIS_COLOURS))]
        rgb = np.repeat(gray[..., None], 3, axis=-1)
        skin = eyelid | ~(sclera | iris)
        rgb[iris] = gray[iris][:, None] / 128.0 * colour
        rgb[skin] = gray[skin][:, None] / 128.0 * SKIN
    return np.clip(rgb, 0, 255).astype(np.uint8)


def generate_synthetic_dataset(n, side, seed, output_dir, dataset='SYNTH', spectrum=Spectrum.NIR,
                               eyelid_probability=0.3):
    """
    Write ``n`` synthetic eye images, their iris masks, a manifest and the
    drawing parameters of every image. Output is fully determined by the
    arguments.

    Args:
        n (int): Number of images, at least 1.
        side (int): Image side, a power of two of at least 64.
        seed (int): Random seed.
        output_dir (str | Path): Destination; ``images/``, ``masks/``,
            ``manifest.jsonl`` and ``parameters.jsonl`` are created in it.

    Returns:
        Path: The manifest.

    Raises:
        ValidationError: On a bad count or side.
        OSError: If the directory cannot be written.
    """
    if n < 1:
        raise ValidationError(f"Need at least one image, got {n}.")
    if not is_power_of_two(side) or side < 64:
        raise ValidationError(f"side must be a power of two of at least 64, got {side}.")
    if not 0 <= eyelid_probability <= 1:
        raise ValidationError(f"eyelid_probability must lie in [0, 1], got {eyelid_probability}.")
    spectrum = Spectrum(spectrum)
    output_dir = Path(output_dir)
    (output_dir / 'images').mkdir(parents=True, exist_ok=True)
    (output_dir / 'masks').mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    samples = []
    with (output_dir / 'parameters.jsonl').open('w', encoding='utf-8') as handle:
        for index in range(n):
            sample_id = f"{dataset}-{index:04d}"
            params = _sample_parameters(sample_id, side, rng, eyelid_probability)
            image = draw_synthetic_eye(params, side, rng, spectrum)
            image_path = save_image(image, output_dir / 'images' / f"{sample_id}.png")
            mask_path = save_mask(iris_mask(params, side), output_dir / 'masks' / f"{sample_id}.png")
            handle.write(json.dumps(asdict(params), sort_keys=True) + '\n')
            samples.append(ImageSample(
                id=sample_id,
                image_path=image_path,
                mask_path=mask_path,
                dataset=dataset,
                subject=f"{dataset}-s{index // 2:03d}",
                spectrum=spectrum,
                width=side,
                height=side,
                box=params.iris_box(side),
            ))
    manifest = write_manifest(samples, output_dir / 'manifest.jsonl')
    logger.info("Generated %d synthetic %s images (%dx%d, seed %d) in %s", n, spectrum, side, side, seed, output_dir)
    return manifest


def load_parameters(path):
    with Path(path).open(encoding='utf-8') as handle:
        return [
            EyeParameters(**{**record, 'sclera_axes': tuple(record['sclera_axes'])})
            for record in map(json.loads, filter(str.strip, handle))
        ]
