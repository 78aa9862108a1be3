from rest_framework import serializers

from core.exceptions import ConfigurationError

from .models import MODEL_KINDS, WEIGHTING_CHOICES, ModelSpec


class ModelSpecSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=MODEL_KINDS)
    hyperparams = serializers.DictField(required=False, default=dict)
    class_weighting = serializers.ChoiceField(choices=WEIGHTING_CHOICES, required=False, allow_null=True, default=None)
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, required=False, default=0)

    def validate(self, data):
        try:
            self.build(data)
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        return data

    @staticmethod
    def build(data) -> ModelSpec:
        return ModelSpec(
            kind=data['kind'],
            hyperparams=dict(data.get('hyperparams') or {}),
            class_weighting=data.get('class_weighting'),
            seed=data.get('seed', 0),
        )


def parse_model_spec(data, default_seed: int = 0) -> ModelSpec:
    """A model spec document (or bare kind name) -> ``ModelSpec``."""
    if isinstance(data, str):
        data = {'kind': data}
    if not isinstance(data, dict):
        raise ConfigurationError(f"model spec must be an object or a kind name, got {data!r}")
    data = {'seed': default_seed, **data}
    serializer = ModelSpecSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigurationError("invalid model spec", serializer.errors)
    return ModelSpecSerializer.build(serializer.validated_data)
