from django.conf import settings
from rest_framework import serializers

from .models import AXIS_CHOICES, LAYOUT_CHOICES


class ManifestEntrySerializer(serializers.Serializer):
    path = serializers.CharField()
    bearing_id = serializers.CharField()
    condition_id = serializers.CharField(allow_blank=True)
    seq_index = serializers.IntegerField(min_value=0)
    sampling_rate_hz = serializers.FloatField()
    fault_label = serializers.CharField(allow_null=True, required=False, default=None)
    axis = serializers.ChoiceField(choices=AXIS_CHOICES, default='horizontal')

    def validate_sampling_rate_hz(self, value):
        if value <= 0:
            raise serializers.ValidationError("Sampling rate must be positive")
        return value


class RejectSerializer(serializers.Serializer):
    path = serializers.CharField()
    reason = serializers.CharField()


class ManifestSerializer(serializers.Serializer):
    """Validates a manifest document read from disk."""
    schema_version = serializers.IntegerField()
    dataset_id = serializers.CharField()
    layout = serializers.ChoiceField(choices=LAYOUT_CHOICES)
    records = ManifestEntrySerializer(many=True)
    rejects = RejectSerializer(many=True, required=False, default=list)

    def validate_schema_version(self, value):
        current = settings.BENCHMARK_CONFIG['SCHEMA_VERSION']
        if value != current:
            raise serializers.ValidationError(
                f"Unsupported manifest schema_version {value} (expected {current})"
            )
        return value

    def validate(self, data):
        seen = set()
        duplicates = []
        for record in data['records']:
            key = (record['bearing_id'], record['seq_index'])
            if key in seen:
                duplicates.append(f"{key[0]}#{key[1]}")
            seen.add(key)
        if duplicates:
            raise serializers.ValidationError(
                {'records': f"Duplicate (bearing_id, seq_index): {', '.join(duplicates)}"}
            )
        return data
