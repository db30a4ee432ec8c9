"""
Versioned checkpoint files shared by the detector, FCN and GAN.

A checkpoint is a ``torch.save`` dict with a header (``format_version``,
``kind``, ``config``) followed by arbitrary tensor payload entries.
"""
import logging
from pathlib import Path

import torch
from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def save_checkpoint(path, kind, config, **payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({'format_version': FORMAT_VERSION, 'kind': kind, 'config': config, **payload}, path)
    logger.info("Saved %s checkpoint to %s", kind, path)
    return path


def load_checkpoint(path, kind):
    """
    Load a checkpoint and check its header.

    Args:
        path (str | Path): Checkpoint file.
        kind (str): Expected kind, e.g. ``'fcn'``.

    Returns:
        dict: The checkpoint contents, header included.

    Raises:
        ImproperlyConfigured: If the file is of another kind or version.
    """
    checkpoint = torch.load(Path(path), map_location='cpu')
    if not isinstance(checkpoint, dict) or checkpoint.get('format_version') != FORMAT_VERSION:
        raise ImproperlyConfigured(f"{path} is not a version {FORMAT_VERSION} checkpoint.")
    if checkpoint.get('kind') != kind:
        raise ImproperlyConfigured(
            f"{path} holds a '{checkpoint.get('kind')}' checkpoint, expected '{kind}'."
        )
    return checkpoint


def checkpoint_kind(path):
    checkpoint = torch.load(Path(path), map_location='cpu')
    return checkpoint.get('kind') if isinstance(checkpoint, dict) else None
