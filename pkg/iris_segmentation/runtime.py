import logging
import random

import numpy as np
import torch
from django.conf import settings

logger = logging.getLogger(__name__)


def get_setting(name):
    """
    Look up a key of the ``IRIS_SEGMENTATION`` settings dict.

    Args:
        name (str): Key such as ``'DETECTION_THRESHOLD'``.

    Returns:
        The configured value.
    """
    return settings.IRIS_SEGMENTATION[name]


def get_device():
    return torch.device(get_setting('DEVICE'))


def seed_everything(seed):
    """
    Seed python, numpy and torch so CPU runs repeat exactly.
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    logger.debug("Seeded all generators with %d", seed)
