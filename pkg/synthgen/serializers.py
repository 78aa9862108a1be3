import re

from django.conf import settings
from rest_framework import serializers

from core.exceptions import ConfigurationError
from core.utils import Seeding

from .models import (
    FAULT_TYPES, GROWTH_CHOICES, Degradation, NuisanceSpec, SynthBearing,
    SynthConfig, SynthDatasetSpec,
)

_FEMTO_BEARING_ID = re.compile(r'^\d+_\d+$')


class DegradationSerializer(serializers.Serializer):
    onset_fraction = serializers.FloatField()
    growth = serializers.ChoiceField(choices=GROWTH_CHOICES, default='linear')
    end_amplitude_g = serializers.FloatField()

    def validate_onset_fraction(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError("onset_fraction must lie strictly between 0 and 1")
        return value


class SynthConfigSerializer(serializers.Serializer):
    shaft_hz = serializers.FloatField()
    sampling_rate_hz = serializers.FloatField()
    fault_type = serializers.ChoiceField(choices=FAULT_TYPES)
    fault_char_freq_hz = serializers.FloatField()
    impulse_snr_db = serializers.FloatField()
    degradation = DegradationSerializer(required=False, allow_null=True, default=None)
    noise_sigma_g = serializers.FloatField()
    n_waveforms = serializers.IntegerField(min_value=1)
    waveform_len = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1)
    bearing_id = serializers.CharField(required=False, default='1_1')
    condition_id = serializers.CharField(required=False, default='1')
    carrier_hz = serializers.FloatField(required=False, allow_null=True, default=None)
    impulse_decay_per_s = serializers.FloatField(required=False, allow_null=True, default=None)
    shaft_amplitude_g = serializers.FloatField(required=False, allow_null=True, default=None)
    jitter_fraction = serializers.FloatField(required=False, allow_null=True, default=None)

    def validate_bearing_id(self, value):
        if not _FEMTO_BEARING_ID.match(value):
            raise serializers.ValidationError("bearing_id must look like <condition>_<unit>, e.g. 1_3")
        return value

    def validate(self, data):
        try:
            self.build(data)
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        return data

    @staticmethod
    def build(data) -> SynthConfig:
        data = dict(data)
        degradation = data.pop('degradation', None)
        return SynthConfig(
            degradation=Degradation(**degradation) if degradation else None,
            **data,
        )


class NuisanceSerializer(serializers.Serializer):
    gain_db = serializers.FloatField()
    freq_hz = serializers.FloatField()

    def validate_freq_hz(self, value):
        if value <= 0:
            raise serializers.ValidationError("Nuisance frequency must be positive")
        return value


class SynthBearingSerializer(serializers.Serializer):
    bearing_id = serializers.CharField()
    condition_id = serializers.CharField(required=False)
    seed = serializers.IntegerField(required=False, min_value=0)
    overrides = serializers.DictField(required=False, default=dict)
    nuisance = NuisanceSerializer(required=False, allow_null=True, default=None)


class SynthDatasetSerializer(serializers.Serializer):
    """
    A synthetic dataset: a base bearing config plus per-bearing overrides.

    Bearings without an explicit seed get a child seed of the dataset seed
    keyed by their position in the list.
    """
    schema_version = serializers.IntegerField(required=False, default=1)
    dataset_id = serializers.CharField()
    kind = serializers.ChoiceField(choices=('run_to_failure', 'injected'))
    seed = serializers.IntegerField(min_value=0, default=0)
    base = serializers.DictField()
    bearings = SynthBearingSerializer(many=True)

    def validate_schema_version(self, value):
        if value != settings.BENCHMARK_CONFIG['SCHEMA_VERSION']:
            raise serializers.ValidationError(f"Unsupported schema_version {value}")
        return value

    def validate(self, data):
        if not data['bearings']:
            raise serializers.ValidationError({'bearings': "At least one bearing is required"})
        ids = [b['bearing_id'] for b in data['bearings']]
        if len(set(ids)) != len(ids):
            raise serializers.ValidationError({'bearings': "bearing_id values must be unique"})

        built = []
        for index, bearing in enumerate(data['bearings']):
            merged = {**data['base'], **bearing['overrides'], 'bearing_id': bearing['bearing_id']}
            merged['condition_id'] = bearing.get('condition_id') or bearing['bearing_id'].split('_')[0]
            merged['seed'] = bearing.get('seed', Seeding.child_seed(data['seed'], index))
            config_serializer = SynthConfigSerializer(data=merged)
            if not config_serializer.is_valid():
                raise serializers.ValidationError({bearing['bearing_id']: config_serializer.errors})
            config = SynthConfigSerializer.build(config_serializer.validated_data)
            if data['kind'] == 'run_to_failure' and config.degradation is None:
                raise serializers.ValidationError(
                    {bearing['bearing_id']: "run_to_failure bearings need a degradation block"}
                )
            if data['kind'] == 'injected' and config.degradation is not None:
                raise serializers.ValidationError(
                    {bearing['bearing_id']: "injected bearings must not declare degradation"}
                )
            nuisance = bearing.get('nuisance')
            built.append(SynthBearing(
                config=config,
                nuisance=NuisanceSpec(**nuisance) if nuisance else None,
            ))
        data['spec'] = SynthDatasetSpec(dataset_id=data['dataset_id'], kind=data['kind'], bearings=built)
        return data
