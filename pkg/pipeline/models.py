import uuid
from django.db import models

from .config import ModelKind


class ExperimentRun(models.Model):
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False, verbose_name='ID')
    model = models.CharField(max_length=8, choices=ModelKind.choices, db_index=True)
    scope = models.CharField(max_length=255, db_index=True)
    seed = models.IntegerField()
    iterations = models.IntegerField()
    use_roi_stage = models.BooleanField(default=False)
    output_dir = models.CharField(max_length=1024)
    n_train = models.IntegerField(default=0)
    n_test = models.IntegerField(default=0)
    mean_e = models.FloatField()
    std_e = models.FloatField()
    mean_f1 = models.FloatField()
    std_f1 = models.FloatField()
    created_at = models.DateTimeField(auto_now_add=True, db_index=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['model', 'scope'], name='pipeline_ex_model_scope_idx'),
            models.Index(fields=['created_at', 'updated_at'], name='pipeline_ex_created_idx'),
        ]

    def __str__(self):
        return f"{self.model} on {self.scope} (seed {self.seed})"


class ImageResult(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='results')
    sample_id = models.CharField(max_length=255, db_index=True)
    dataset = models.CharField(max_length=255, blank=True, db_index=True)
    tp = models.BigIntegerField()
    fp = models.BigIntegerField()
    tn = models.BigIntegerField()
    fn = models.BigIntegerField()
    e = models.FloatField()
    precision = models.FloatField(null=True, blank=True)
    recall = models.FloatField(null=True, blank=True)
    f1 = models.FloatField(null=True, blank=True)

    class Meta:
        ordering = ['sample_id']
        constraints = [
            models.UniqueConstraint(fields=['run', 'sample_id'], name='pipeline_unique_run_sample'),
        ]
        indexes = [
            models.Index(fields=['run', 'dataset'], name='pipeline_im_run_dataset_idx'),
        ]

    def __str__(self):
        return f"{self.sample_id}: E={self.e:.4f}"
