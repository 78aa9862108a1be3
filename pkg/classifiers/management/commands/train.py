from django.core.management.base import BaseCommand

from classifiers.engine import fit
from classifiers.serializers import parse_model_spec
from classifiers.utils import design_matrix, save_model
from core.exceptions import BenchmarkError, as_command_error
from core.utils import read_config
from features.utils import load_features
from labeling.engine import binarize
from labeling.utils import load_labels
from splits.models import TRAIN, VAL
from splits.utils import load_split


class Command(BaseCommand):
    help = 'Fit one classifier on the train partition of a labeled feature set'

    def add_arguments(self, parser):
        parser.add_argument('--spec', required=True, help='Model spec JSON/YAML')
        parser.add_argument('--features', required=True)
        parser.add_argument('--labels', required=True)
        parser.add_argument('--split', required=True)
        parser.add_argument('--task', choices=['binary', 'multiclass'], default='multiclass')
        parser.add_argument('--out', required=True)

    def handle(self, *args, **options):
        try:
            spec = parse_model_spec(read_config(options['spec']))
            samples = load_features(options['features'])
            assignments = load_labels(options['labels'])
            if options['task'] == 'binary':
                assignments = {b: binarize(a) for b, a in assignments.items()}
            split = load_split(options['split'])
            X, y = design_matrix(split.select(samples, TRAIN), assignments)
            X_val, y_val = design_matrix(split.select(samples, VAL), assignments)
            model = fit(spec, X, y, X_val if y_val else None, y_val or None)
            save_model(model, options['out'])
        except BenchmarkError as exc:
            raise as_command_error(exc) from exc
        self.stdout.write(f"  classes: {', '.join(model.classes)}")
        for key, value in model.fit_info.items():
            self.stdout.write(f'  {key}: {value}')
        self.stdout.write(self.style.SUCCESS(f"Wrote {spec.kind} model to {options['out']}"))
