from rest_framework import serializers

from .samples import Spectrum, SplitTag

BOX_FIELDS = ('x_min', 'y_min', 'x_max', 'y_max')


class ManifestRecordSerializer(serializers.Serializer):
    """
    Validates one manifest line. Paths are kept as given; the loader resolves
    them against the manifest's directory.
    """
    id = serializers.CharField(max_length=255)
    image_path = serializers.CharField()
    mask_path = serializers.CharField(required=False, allow_null=True, allow_blank=True, default=None)
    dataset = serializers.CharField(max_length=255)
    subject = serializers.CharField(max_length=255, allow_blank=True)
    spectrum = serializers.ChoiceField(choices=Spectrum.choices)
    x_min = serializers.IntegerField(required=False, allow_null=True, default=None)
    y_min = serializers.IntegerField(required=False, allow_null=True, default=None)
    x_max = serializers.IntegerField(required=False, allow_null=True, default=None)
    y_max = serializers.IntegerField(required=False, allow_null=True, default=None)
    split = serializers.ChoiceField(choices=SplitTag.choices, required=False, allow_null=True, default=None)

    def validate_spectrum(self, value):
        return Spectrum(value)

    def validate(self, attrs):
        given = [attrs.get(name) is not None for name in BOX_FIELDS]
        if any(given) and not all(given):
            raise serializers.ValidationError("Box annotations need all of x_min, y_min, x_max and y_max.")
        if all(given):
            if not (attrs['x_min'] < attrs['x_max'] and attrs['y_min'] < attrs['y_max']):
                raise serializers.ValidationError("Box annotation must satisfy x_min < x_max and y_min < y_max.")
            attrs['box'] = tuple(attrs[name] for name in BOX_FIELDS)
        else:
            attrs['box'] = None
        if attrs.get('split'):
            attrs['split'] = SplitTag(attrs['split'])
        if not attrs.get('mask_path'):
            attrs['mask_path'] = None
        return attrs

    def to_representation(self, instance):
        record = {
            'id': instance.id,
            'image_path': str(instance.image_path),
            'mask_path': str(instance.mask_path) if instance.mask_path is not None else None,
            'dataset': instance.dataset,
            'subject': instance.subject,
            'spectrum': str(instance.spectrum),
        }
        if instance.box is not None:
            record.update(zip(BOX_FIELDS, (int(v) for v in instance.box)))
        if instance.split is not None:
            record['split'] = str(instance.split)
        return record
