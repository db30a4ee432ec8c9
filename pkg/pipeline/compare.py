import logging
from dataclasses import dataclass

from django.core.exceptions import ValidationError

from evaluation.stats import paired_t_test

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MethodComparison:
    """
    Paired t-tests of method A against method B on per-image E and F1.

    Differences are taken as A minus B, so a significant negative ``e.t_statistic``
    means A errs less and a significant positive ``f1.t_statistic`` means A
    scores higher.
    """
    e: object
    f1: object
    n: int

    def better(self, metric):
        result = self.e if metric == 'e' else self.f1
        if not result.significant or result.t_statistic == 0:
            return None
        a_larger = result.t_statistic > 0
        if metric == 'e':
            return 'b' if a_larger else 'a'
        return 'a' if a_larger else 'b'


def _f1(record):
    return record.f1 if record.f1 is not None else 0.0


def compare_methods(records_a, records_b, alpha=None):
    """
    Pair two methods' per-image records by sample id and test both metrics.

    Raises:
        ValidationError: If the id sets differ (the symmetric difference is
            listed) or either side repeats an id.
    """
    by_id_a = {record.sample_id: record for record in records_a}
    by_id_b = {record.sample_id: record for record in records_b}
    if len(by_id_a) != len(records_a) or len(by_id_b) != len(records_b):
        raise ValidationError("Each method must score every image once.")
    difference = sorted(set(by_id_a) ^ set(by_id_b))
    if difference:
        raise ValidationError(f"Methods were scored on different images: {', '.join(difference)}.")

    ids = sorted(by_id_a)
    comparison = MethodComparison(
        e=paired_t_test([by_id_a[i].e for i in ids], [by_id_b[i].e for i in ids], alpha),
        f1=paired_t_test([_f1(by_id_a[i]) for i in ids], [_f1(by_id_b[i]) for i in ids], alpha),
        n=len(ids),
    )
    for metric in ('e', 'f1'):
        result = getattr(comparison, metric)
        logger.info("%s: t=%.4f p=%.4g -> %s", metric.upper(), result.t_statistic, result.p_value,
                    f"method {comparison.better(metric).upper()} is better" if comparison.better(metric)
                    else "no significant difference")
    return comparison
