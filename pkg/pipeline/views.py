from rest_framework import viewsets
from rest_framework.response import Response
from drf_yasg.utils import swagger_auto_schema
from drf_yasg import openapi

from evaluation.stats import aggregate_by_dataset
from evaluation.metrics import EvalRecord, PixelCounts

from .models import ExperimentRun
from .serializers import ExperimentRunDetailSerializer, ExperimentRunSerializer


class ExperimentRunViewSet(viewsets.ReadOnlyModelViewSet):
    """
    Read-only access to recorded experiment runs.

    Actions:
        - `list`: Runs, newest first, filterable by model, scope and ROI stage.
        - `retrieve`: One run with its per-image results and per-dataset aggregates.
    """
    queryset = ExperimentRun.objects.all()
    serializer_class = ExperimentRunSerializer
    filterset_fields = ['model', 'scope', 'use_roi_stage']

    def get_serializer_class(self):
        if self.action == 'retrieve':
            return ExperimentRunDetailSerializer
        return ExperimentRunSerializer

    def get_aggregate_schema():
        return openapi.Schema(
            type=openapi.TYPE_OBJECT,
            properties={
                'label': openapi.Schema(type=openapi.TYPE_STRING),
                'n': openapi.Schema(type=openapi.TYPE_INTEGER),
                'mean_e': openapi.Schema(type=openapi.TYPE_NUMBER),
                'std_e': openapi.Schema(type=openapi.TYPE_NUMBER),
                'mean_f1': openapi.Schema(type=openapi.TYPE_NUMBER),
                'std_f1': openapi.Schema(type=openapi.TYPE_NUMBER),
            }
        )

    @swagger_auto_schema(
        responses={200: openapi.Response('Success', schema=openapi.Schema(
            type=openapi.TYPE_OBJECT,
            properties={
                'data': openapi.Schema(type=openapi.TYPE_OBJECT),
                'aggregates': openapi.Schema(type=openapi.TYPE_ARRAY, items=get_aggregate_schema()),
            }
        ))},
        operation_description="Retrieve an `ExperimentRun` with its per-image results and the per-dataset "
                              "and pooled mean/std of E and F1."
    )
    def retrieve(self, request, *args, **kwargs):
        instance = self.get_object()
        serializer = self.get_serializer(instance)
        return Response({
            'data': serializer.data,
            'aggregates': self.get_aggregates(instance),
        })

    def get_aggregates(self, run):
        """
        Per-dataset rows followed by the pooled row, recomputed from the
        stored per-image results.
        """
        records = [
            EvalRecord(
                sample_id=result.sample_id,
                counts=PixelCounts(result.tp, result.fp, result.tn, result.fn),
                e=result.e,
                precision=result.precision,
                recall=result.recall,
                f1=result.f1,
                dataset=result.dataset,
            )
            for result in run.results.all()
        ]
        if not records:
            return []
        return [
            {
                'label': row.label,
                'n': row.n,
                'mean_e': row.mean_e,
                'std_e': row.std_e,
                'mean_f1': row.mean_f1,
                'std_f1': row.std_f1,
            }
            for row in aggregate_by_dataset(records)
        ]
