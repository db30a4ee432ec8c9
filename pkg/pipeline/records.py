import logging

from django.db import transaction

from .models import ExperimentRun, ImageResult

logger = logging.getLogger(__name__)


@transaction.atomic
def record_run(result):
    """
    Persist a finished ``ExperimentResult`` and its per-image records.

    Returns:
        ExperimentRun: The stored run.
    """
    config = result.config
    pooled = result.pooled
    run = ExperimentRun.objects.create(
        model=str(config.model),
        scope=str(config.scope),
        seed=config.seed,
        iterations=config.iterations,
        use_roi_stage=config.use_roi_stage,
        output_dir=str(config.output_dir),
        n_train=result.n_train,
        n_test=pooled.n,
        mean_e=pooled.mean_e,
        std_e=pooled.std_e,
        mean_f1=pooled.mean_f1,
        std_f1=pooled.std_f1,
    )
    ImageResult.objects.bulk_create([
        ImageResult(
            run=run,
            sample_id=record.sample_id,
            dataset=record.dataset,
            tp=record.counts.tp,
            fp=record.counts.fp,
            tn=record.counts.tn,
            fn=record.counts.fn,
            e=record.e,
            precision=record.precision,
            recall=record.recall,
            f1=record.f1,
        )
        for record in result.records
    ])
    logger.info("Recorded run %s with %d image results", run.id, len(result.records))
    return run
