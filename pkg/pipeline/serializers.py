from rest_framework import serializers
from .models import ExperimentRun, ImageResult


class ImageResultSerializer(serializers.ModelSerializer):
    class Meta:
        model = ImageResult
        fields = ['sample_id', 'dataset', 'tp', 'fp', 'tn', 'fn', 'e', 'precision', 'recall', 'f1']
        read_only_fields = fields


class ExperimentRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = ExperimentRun
        fields = [
            'id', 'model', 'scope', 'seed', 'iterations', 'use_roi_stage', 'output_dir',
            'n_train', 'n_test', 'mean_e', 'std_e', 'mean_f1', 'std_f1', 'created_at', 'updated_at',
        ]
        read_only_fields = fields

    def to_representation(self, instance):
        representation = super().to_representation(instance)
        representation['e_percent'] = round(100 * instance.mean_e, 2)
        representation['f1_percent'] = round(100 * instance.mean_f1, 2)
        return representation


class ExperimentRunDetailSerializer(ExperimentRunSerializer):
    results = ImageResultSerializer(many=True, read_only=True)

    class Meta(ExperimentRunSerializer.Meta):
        fields = ExperimentRunSerializer.Meta.fields + ['results']
        read_only_fields = fields
