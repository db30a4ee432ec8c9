"""
Line-delimited JSON manifests: one image record per line.
"""
import json
from collections import Counter
import logging
from pathlib import Path

from django.core.exceptions import ValidationError

from . import catalog
from .imaging import image_size
from .samples import ImageSample
from .serializers import ManifestRecordSerializer

logger = logging.getLogger(__name__)


class ManifestParseError(ValidationError):
    def __init__(self, path, line_number, detail):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}, line {line_number}: {detail}")


def _resolve(base_dir, value):
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base_dir / path


def _parse_line(path, line_number, line):
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(path, line_number, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(record, dict):
        raise ManifestParseError(path, line_number, "record must be a JSON object")
    serializer = ManifestRecordSerializer(data=record)
    if not serializer.is_valid():
        raise ManifestParseError(path, line_number, json.dumps(serializer.errors))
    return serializer.validated_data


def load_manifest(path):
    """
    Load every record of a manifest as an ``ImageSample``.

    Image dimensions are read from the image headers; when a mask is named its
    dimensions must match the image.

    Args:
        path (str | Path): Manifest file.

    Returns:
        list: Samples in file order.

    Raises:
        OSError: If the manifest or a referenced image cannot be read.
        ManifestParseError: If a line is malformed, is not UTF-8 or boxes a
            region outside its image (names the line number).
        ValidationError: On duplicate ids or image/mask size mismatch.
    """
    path = Path(path)
    base_dir = path.parent
    samples = []
    seen = set()
    with path.open('rb') as handle:
        for line_number, raw in enumerate(handle, start=1):
            try:
                line = raw.decode('utf-8')
            except UnicodeDecodeError as exc:
                raise ManifestParseError(path, line_number, f"invalid UTF-8 ({exc.reason})") from exc
            if not line.strip():
                continue
            data = _parse_line(path, line_number, line)
            if data['id'] in seen:
                raise ValidationError(f"{path}, line {line_number}: duplicate sample id '{data['id']}'.")
            seen.add(data['id'])

            image_path = _resolve(base_dir, data['image_path'])
            mask_path = _resolve(base_dir, data['mask_path'])
            width, height = image_size(image_path)
            if mask_path is not None and image_size(mask_path) != (width, height):
                raise ValidationError(
                    f"Sample '{data['id']}': mask {mask_path} is {image_size(mask_path)}, image is {(width, height)}."
                )
            box = data['box']
            if box is not None and (min(box) < 0 or box[2] > width or box[3] > height):
                raise ManifestParseError(
                    path, line_number, f"box {box} of sample '{data['id']}' lies outside its {width}x{height} image"
                )

            known = catalog.lookup(data['dataset'])
            if known is not None and known.spectrum != data['spectrum']:
                logger.warning(
                    "Sample '%s' tags %s as %s, catalogue lists it as %s",
                    data['id'], data['dataset'], data['spectrum'], known.spectrum,
                )

            samples.append(ImageSample(
                id=data['id'],
                image_path=image_path,
                mask_path=mask_path,
                dataset=data['dataset'],
                subject=data['subject'],
                spectrum=data['spectrum'],
                width=width,
                height=height,
                box=data['box'],
                split=data['split'],
            ))
    logger.info("Loaded %d samples from %s", len(samples), path)
    return samples


def write_manifest(samples, path):
    """
    Write samples as a manifest; paths are stored relative to the manifest when possible.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base_dir = path.parent.resolve()
    with path.open('w', encoding='utf-8') as handle:
        for sample in samples:
            record = ManifestRecordSerializer(sample).data
            for key in ('image_path', 'mask_path'):
                if record[key] is not None:
                    target = Path(record[key]).resolve()
                    if target.is_relative_to(base_dir):
                        record[key] = target.relative_to(base_dir).as_posix()
            handle.write(json.dumps(record, sort_keys=True) + '\n')
    return path


def merge_manifests(paths, output):
    """
    Concatenate manifests into one, rejecting ids that collide across them.
    """
    samples = []
    for manifest in paths:
        samples.extend(load_manifest(manifest))
    counts = Counter(sample.id for sample in samples)
    duplicates = sorted(i for i, n in counts.items() if n > 1)
    if duplicates:
        raise ValidationError(f"Sample ids collide across manifests: {', '.join(duplicates)}.")
    return write_manifest(samples, output)
