from django.conf import settings

from core.commands import BenchCommand
from core.utils import parse_fractions
from features.utils import load_features
from splits.engine import leakage_audit, split_by_bearing, split_random
from splits.utils import load_bearing_table, load_split, save_split


class Command(BenchCommand):
    help = 'Assign feature samples to train/val/test by bearing or at random, and audit splits for leakage'

    def add_actions(self, subparsers):
        bearing = subparsers.add_parser('bearing', help='Leakage-free split from a bearing table')
        bearing.add_argument('--features', required=True)
        bearing.add_argument('--table', required=True, help='femto, xjtu, cwru or a JSON/YAML table')
        bearing.add_argument('--out', required=True)

        random = subparsers.add_parser('random', help='Leaky per-sample random split')
        random.add_argument('--features', required=True)
        random.add_argument('--fractions', type=parse_fractions,
                            default=settings.BENCHMARK_CONFIG['RANDOM_SPLIT_FRACTIONS'])
        random.add_argument('--seed', type=int, default=0)
        random.add_argument('--out', required=True)

        audit = subparsers.add_parser('audit', help='List bearings that span partitions')
        audit.add_argument('--split', required=True)
        audit.add_argument('--features', default=None)

    def _report(self, assignment, out):
        save_split(assignment, out)
        for partition, size in assignment.sizes().items():
            self.stdout.write(f'  {partition}: {size} samples, {len(assignment.bearings_in(partition))} bearings')
        self.success(f'Wrote {assignment.strategy} split to {out}')

    def action_bearing(self, features, table, out, **kwargs):
        self._report(split_by_bearing(load_features(features), load_bearing_table(table)), out)

    def action_random(self, features, fractions, seed, out, **kwargs):
        self._report(split_random(load_features(features), fractions, seed), out)

    def action_audit(self, split, features=None, **kwargs):
        samples = load_features(features) if features else None
        audit = leakage_audit(load_split(split), samples)
        if audit.leak_free:
            self.success(f'Leak-free: {audit.n_bearings} bearings, each in a single partition')
            return
        self.warn(f'{len(audit.leaking_bearings)} of {audit.n_bearings} bearings span several partitions')
        for bearing_id, counts in audit.leaking_bearings.items():
            shown = ', '.join(f'{p}={n}' for p, n in counts.items())
            self.stdout.write(f'  {bearing_id}: {shown}')
