import logging
import math
from pathlib import Path

import numpy as np
import yaml
from django.core.exceptions import ValidationError

from .samples import SplitSpec, SplitTag

logger = logging.getLogger(__name__)


def _train_size(train_fraction, total):
    # round half up, not python's banker's rounding
    return int(math.floor(train_fraction * total + 0.5))


def split_dataset(samples, spec_seed, train_fraction=0.8):
    """
    Randomly divide samples into train and test subsets.

    The split is over images, not subjects, and is fully determined by the
    seed: ids are shuffled with a seeded permutation and the first
    ``round(train_fraction * N)`` become the training set.

    Raises:
        ValidationError: If there are no samples, the fraction is outside
            (0, 1), or either subset would end up empty.
    """
    if not samples:
        raise ValidationError("Cannot split an empty sample list.")
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction must lie in (0, 1), got {train_fraction}.")

    ids = [sample.id for sample in samples]
    if len(set(ids)) != len(ids):
        raise ValidationError("Sample ids must be unique to split them.")
    order = np.random.default_rng(spec_seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = _train_size(train_fraction, len(ids))
    if n_train == 0 or n_train == len(ids):
        raise ValidationError(
            f"Splitting {len(ids)} samples at {train_fraction} leaves "
            f"{'no training' if n_train == 0 else 'no test'} images."
        )

    split = SplitSpec(
        train_fraction=train_fraction,
        seed=spec_seed,
        train_ids=tuple(shuffled[:n_train]),
        test_ids=tuple(shuffled[n_train:]),
    )
    logger.info("Split %d samples into %d train / %d test (seed %s)",
                len(ids), len(split.train_ids), len(split.test_ids), spec_seed)
    return split


def fixed_split(samples):
    """
    Build the split carried by the samples' ``split`` tags, the way contest
    datasets ship a fixed train/test division.
    """
    untagged = [sample.id for sample in samples if sample.split is None]
    if untagged:
        raise ValidationError(f"Samples without a split tag: {', '.join(untagged)}.")
    train_ids = tuple(sample.id for sample in samples if sample.split == SplitTag.TRAIN)
    test_ids = tuple(sample.id for sample in samples if sample.split == SplitTag.TEST)
    if not train_ids or not test_ids:
        raise ValidationError("A fixed split needs both train and test samples.")
    return SplitSpec(
        train_fraction=len(train_ids) / len(samples),
        seed=None,
        train_ids=train_ids,
        test_ids=test_ids,
    )


def save_split(split, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as handle:
        yaml.safe_dump({
            'train_fraction': split.train_fraction,
            'seed': split.seed,
            'train_ids': list(split.train_ids),
            'test_ids': list(split.test_ids),
        }, handle, sort_keys=False)
    return path


def load_split(path):
    with Path(path).open(encoding='utf-8') as handle:
        data = yaml.safe_load(handle)
    train_ids, test_ids = tuple(data['train_ids']), tuple(data['test_ids'])
    if set(train_ids) & set(test_ids):
        raise ValidationError(f"{path}: train and test ids overlap.")
    return SplitSpec(
        train_fraction=float(data['train_fraction']),
        seed=data.get('seed'),
        train_ids=train_ids,
        test_ids=test_ids,
    )
