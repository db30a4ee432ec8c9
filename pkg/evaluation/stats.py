"""
Aggregate statistics over per-image records and the paired t-test used to
compare two segmenters on the same test images.
"""
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError
from scipy.special import betainc

from iris_segmentation.runtime import get_setting

logger = logging.getLogger(__name__)

POOLED = 'pooled'


@dataclass(frozen=True)
class AggregateResult:
    """
    Mean and sample standard deviation of per-image E and F1.

    Images with an undefined F1 enter the F1 statistics as 0 and are listed in
    ``undefined_f1``.
    """
    mean_e: float
    std_e: float
    mean_f1: float
    std_f1: float
    n: int
    undefined_f1: tuple = field(default_factory=tuple)
    label: str = POOLED


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    alpha: float
    significant: bool
    mean_difference: float = 0.0


def _mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def aggregate(records, label=POOLED):
    """
    Raises:
        ValidationError: If ``records`` is empty.
    """
    if not records:
        raise ValidationError("Cannot aggregate an empty list of records.")
    undefined = tuple(record.sample_id for record in records if record.f1 is None)
    if undefined:
        logger.warning("%d image(s) of '%s' have an undefined F1, scored as 0: %s",
                       len(undefined), label, ', '.join(undefined))
    mean_e, std_e = _mean_std([record.e for record in records])
    mean_f1, std_f1 = _mean_std([record.f1 if record.f1 is not None else 0.0 for record in records])
    return AggregateResult(mean_e, std_e, mean_f1, std_f1, len(records), undefined, label)


def aggregate_by_dataset(records):
    """
    One row per dataset, in first-seen order, followed by the pooled row.
    """
    groups = defaultdict(list)
    for record in records:
        groups[record.dataset].append(record)
    rows = [aggregate(group, label=dataset or 'unlabelled') for dataset, group in groups.items()]
    rows.append(aggregate(records, label=POOLED))
    return rows


def t_two_sided_p(t, df):
    """
    Two-sided p-value of Student's t with ``df`` degrees of freedom, through
    the regularised incomplete beta function.
    """
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(a, b, alpha=None):
    """
    Two-sided paired t-test on ``a - b``.

    Zero differences everywhere give ``t = 0, p = 1``; constant non-zero
    differences give an infinite ``t`` and ``p = 0``.

    Raises:
        ValidationError: On unequal lengths or fewer than two pairs.
    """
    if alpha is None:
        alpha = get_setting('DEFAULT_ALPHA')
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"Paired samples differ in length ({a.size} vs {b.size}).")
    n = a.size
    if n < 2:
        raise ValidationError("The paired t-test needs at least two pairs.")

    d = a - b
    mean = float(np.mean(d))
    df = n - 1
    if np.ptp(d) == 0:
        if mean == 0.0:
            t = 0.0
        else:
            t = math.copysign(math.inf, mean)
    else:
        t = mean / (float(np.std(d, ddof=1)) / math.sqrt(n))
    p = 1.0 if t == 0.0 else t_two_sided_p(t, df)
    return TTestResult(
        t_statistic=t,
        degrees_of_freedom=df,
        p_value=p,
        alpha=alpha,
        significant=p < alpha,
        mean_difference=mean,
    )
