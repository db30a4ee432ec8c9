"""
Per-image CSV records and the YAML summary of a run.
"""
import logging
from pathlib import Path

import pandas as pd
import yaml

from .metrics import EvalRecord, PixelCounts

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ['sample_id', 'dataset', 'tp', 'fp', 'tn', 'fn', 'e', 'precision', 'recall', 'f1']
AGGREGATE_COLUMNS = ['label', 'n', 'mean_e', 'std_e', 'mean_f1', 'std_f1', 'undefined_f1']


def records_frame(records):
    return pd.DataFrame(
        [
            {
                'sample_id': r.sample_id,
                'dataset': r.dataset,
                'tp': r.counts.tp,
                'fp': r.counts.fp,
                'tn': r.counts.tn,
                'fn': r.counts.fn,
                'e': r.e,
                'precision': r.precision,
                'recall': r.recall,
                'f1': r.f1,
            }
            for r in records
        ],
        columns=RECORD_COLUMNS,
    )


def write_records_csv(records, path):
    """
    Write one row per image; undefined precision/recall/F1 cells stay empty.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_frame(records).to_csv(path, index=False)
    logger.info("Wrote %d per-image records to %s", len(records), path)
    return path


def _optional(value):
    return None if pd.isna(value) else float(value)


def read_records_csv(path):
    frame = pd.read_csv(path, dtype={'sample_id': str, 'dataset': str}, keep_default_na=False,
                        na_values={'precision': [''], 'recall': [''], 'f1': ['']})
    return [
        EvalRecord(
            sample_id=row.sample_id,
            counts=PixelCounts(int(row.tp), int(row.fp), int(row.tn), int(row.fn)),
            e=float(row.e),
            precision=_optional(row.precision),
            recall=_optional(row.recall),
            f1=_optional(row.f1),
            dataset=row.dataset,
        )
        for row in frame.itertuples(index=False)
    ]


def aggregates_frame(rows):
    return pd.DataFrame(
        [
            {
                'label': row.label,
                'n': row.n,
                'mean_e': row.mean_e,
                'std_e': row.std_e,
                'mean_f1': row.mean_f1,
                'std_f1': row.std_f1,
                'undefined_f1': len(row.undefined_f1),
            }
            for row in rows
        ],
        columns=AGGREGATE_COLUMNS,
    )


def write_aggregates_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    aggregates_frame(rows).to_csv(path, index=False)
    return path


def _percent(mean, std):
    return {'mean': round(100 * mean, 2), 'std': round(100 * std, 2)}


def summary_dict(rows, **context):
    """
    Mean and standard deviation in percent for each aggregate row, keyed by
    row label, plus any run context (model, scope, seed, ...).
    """
    return {
        **context,
        'results': {
            row.label: {
                'n': row.n,
                'f1_percent': _percent(row.mean_f1, row.std_f1),
                'e_percent': _percent(row.mean_e, row.std_e),
                'undefined_f1': list(row.undefined_f1),
            }
            for row in rows
        },
    }


def write_summary(rows, path, **context):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as handle:
        yaml.safe_dump(summary_dict(rows, **context), handle, sort_keys=False)
    logger.info("Wrote summary to %s", path)
    return path


def comparison_dict(comparison):
    """
    Plain-data view of a method comparison for YAML output.
    """
    return {
        metric: {
            't_statistic': float(result.t_statistic),
            'degrees_of_freedom': result.degrees_of_freedom,
            'p_value': float(result.p_value),
            'alpha': result.alpha,
            'significant': result.significant,
            'better': comparison.better(metric),
        }
        for metric, result in (('e', comparison.e), ('f1', comparison.f1))
    }
