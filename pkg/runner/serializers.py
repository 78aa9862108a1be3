from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from classifiers.serializers import parse_model_spec
from core.exceptions import ConfigurationError, SplitError
from core.utils import read_config
from features.models import WindowSpec, normalize_family
from ingest.models import LAYOUT_CHOICES
from labeling.models import METHOD_CHOICES
from metrics.models import REPORT_CHOICES
from splits.engine import check_fractions
from splits.models import STRATEGY_CHOICES

from .models import TASK_CHOICES, DatasetSource, ExperimentConfig, LabelingConfig, SplitConfig


class DatasetSourceSerializer(serializers.Serializer):
    manifest = serializers.CharField(required=False)
    root = serializers.CharField(required=False)
    layout = serializers.ChoiceField(choices=LAYOUT_CHOICES, required=False)
    sampling_rate_hz = serializers.FloatField(required=False, allow_null=True, default=None)
    synth = serializers.DictField(required=False)
    resample_hz = serializers.FloatField(required=False, allow_null=True, default=None)

    def validate(self, data):
        given = [k for k in ('manifest', 'root', 'synth') if data.get(k)]
        if len(given) != 1:
            raise serializers.ValidationError("dataset needs exactly one of manifest, root or synth")
        if 'root' in given and not data.get('layout'):
            raise serializers.ValidationError({'layout': "a scanned dataset root needs its layout"})
        return data


class LabelingSerializer(serializers.Serializer):
    method = serializers.ChoiceField(choices=METHOD_CHOICES)
    threshold_g = serializers.FloatField(required=False, allow_null=True, default=None)
    clusters = serializers.IntegerField(required=False, allow_null=True, default=None, min_value=2)
    components = serializers.IntegerField(required=False, allow_null=True, default=None, min_value=1)
    enrichment_threshold = serializers.FloatField(required=False, allow_null=True, default=None)
    force_final_cluster = serializers.BooleanField(required=False, allow_null=True, default=None)
    family = serializers.ChoiceField(choices=('RFFT', 'STFT'), required=False, default='RFFT')
    fault_types = serializers.CharField(required=False, allow_null=True, default=None)

    def validate_threshold_g(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError("threshold_g must be positive")
        return value


class WindowSerializer(serializers.Serializer):
    length = serializers.IntegerField(min_value=1)
    overlap = serializers.FloatField(required=False, default=None, allow_null=True)


class StftSerializer(serializers.Serializer):
    sub_len = serializers.IntegerField(min_value=2, required=False, allow_null=True, default=None)
    sub_overlap = serializers.FloatField(required=False, allow_null=True, default=None)


class SplitSerializer(serializers.Serializer):
    strategy = serializers.ChoiceField(choices=STRATEGY_CHOICES)
    table = serializers.JSONField(required=False, allow_null=True, default=None)
    fractions = serializers.ListField(
        child=serializers.FloatField(), min_length=3, max_length=3, required=False, allow_null=True, default=None,
    )

    def validate_table(self, value):
        if value is not None and not isinstance(value, (str, dict)):
            raise serializers.ValidationError("table must be a table name, a file path or an inline table")
        return value

    def validate(self, data):
        if data['strategy'] == 'by_bearing' and not data.get('table'):
            raise serializers.ValidationError({'table': "a by_bearing split needs a bearing table"})
        if data.get('fractions') is not None:
            try:
                check_fractions(data['fractions'])
            except SplitError as exc:
                raise serializers.ValidationError({'fractions': str(exc)})
        return data


class ExperimentConfigSerializer(serializers.Serializer):
    """
    An experiment document.

    Model entries are model-spec objects or bare kind names; specs without a
    seed take the experiment seed.
    """
    schema_version = serializers.IntegerField(required=False, default=1)
    name = serializers.CharField()
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, default=0)
    dataset = DatasetSourceSerializer()
    labeling = LabelingSerializer()
    task = serializers.ChoiceField(choices=TASK_CHOICES)
    window = WindowSerializer(required=False)
    stft = StftSerializer(required=False)
    families = serializers.ListField(child=serializers.CharField(), allow_empty=False)
    split = SplitSerializer()
    models = serializers.ListField(child=serializers.JSONField(), required=False, default=list)
    report = serializers.ChoiceField(choices=REPORT_CHOICES, required=False, default='positive')
    output_dir = serializers.CharField()

    def validate_schema_version(self, value):
        if value != settings.BENCHMARK_CONFIG['SCHEMA_VERSION']:
            raise serializers.ValidationError(f"Unsupported schema_version {value}")
        return value

    def validate_families(self, value):
        try:
            families = [normalize_family(f) for f in value]
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        if len(set(families)) != len(families):
            raise serializers.ValidationError("families must not repeat")
        return families

    def validate(self, data):
        specs = []
        for index, item in enumerate(data['models']):
            try:
                specs.append(parse_model_spec(item, default_seed=data['seed']))
            except ConfigurationError as exc:
                raise serializers.ValidationError({'models': f"entry {index}: {exc}"})
        data['model_specs'] = specs
        window = data.get('window') or {}
        try:
            data['window_spec'] = WindowSpec(
                window.get('length') or settings.BENCHMARK_CONFIG['WINDOW_LENGTH'],
                settings.BENCHMARK_CONFIG['WINDOW_OVERLAP'] if window.get('overlap') is None else window['overlap'],
            )
        except ConfigurationError as exc:
            raise serializers.ValidationError({'window': str(exc)})
        return data


def _resolve(base: Path, value):
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def build_experiment_config(data: dict, base_dir=None) -> ExperimentConfig:
    """Validate an experiment document; relative input paths resolve against ``base_dir``."""
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigurationError("invalid experiment config", serializer.errors)
    data = serializer.validated_data
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    config = settings.BENCHMARK_CONFIG

    dataset = data['dataset']
    synth = dataset.get('synth')
    if synth is not None:
        synth = {'seed': data['seed'], **synth}
    source = DatasetSource(
        manifest=_resolve(base, dataset.get('manifest')),
        root=_resolve(base, dataset.get('root')),
        layout=dataset.get('layout'),
        sampling_rate_hz=dataset.get('sampling_rate_hz'),
        synth=synth,
        resample_hz=dataset.get('resample_hz'),
    )
    if source.manifest is not None and not source.manifest.is_file():
        raise ConfigurationError(f"manifest {source.manifest} does not exist")
    if source.root is not None and not source.root.is_dir():
        raise ConfigurationError(f"dataset root {source.root} is not a directory")

    split = data['split']
    table = split.get('table')
    if isinstance(table, str) and (base / table).exists():
        table = str(base / table)
    fractions = tuple(split['fractions']) if split.get('fractions') else tuple(config['RANDOM_SPLIT_FRACTIONS'])

    output_dir = Path(data['output_dir'])
    if not output_dir.is_absolute():
        output_dir = Path(config['OUTPUT_ROOT']) / output_dir
    stft = data.get('stft') or {}

    return ExperimentConfig(
        name=data['name'],
        dataset=source,
        labeling=LabelingConfig(**data['labeling']),
        task=data['task'],
        window=data['window_spec'],
        families=tuple(data['families']),
        split=SplitConfig(strategy=split['strategy'], table=table, fractions=fractions),
        models=tuple(data['model_specs']),
        output_dir=output_dir,
        seed=data['seed'],
        report_mode=data['report'],
        stft_sub_len=stft.get('sub_len'),
        stft_sub_overlap=stft.get('sub_overlap'),
    )


def load_experiment_config(path) -> ExperimentConfig:
    """Read a JSON or YAML experiment file."""
    path = Path(path)
    return build_experiment_config(read_config(path), base_dir=path.resolve().parent)
