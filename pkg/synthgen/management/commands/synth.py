from core.commands import BenchCommand
from core.utils import read_config
from synthgen.engine import materialize, parse_dataset_spec


class Command(BenchCommand):
    help = 'Generate a synthetic run-to-failure or injected-fault dataset tree'

    def add_actions(self, subparsers):
        for action, kind in (('r2f', 'run-to-failure'), ('injected', 'injected-fault')):
            sub = subparsers.add_parser(action, help=f'Write a {kind} dataset in femto_like layout')
            sub.add_argument('--config', required=True, help='Bearing config or dataset spec (JSON/YAML)')
            sub.add_argument('--out', required=True)

    def _generate(self, kind, config, out):
        spec = parse_dataset_spec(read_config(config), kind=kind)
        self.stdout.write(self.style.WARNING(f'Generating {len(spec.bearings)} bearings...'))
        truths = materialize(spec, out)
        for bearing_id, truth in truths.items():
            onset = truth.onset_index if truth.onset_index is not None else '-'
            self.stdout.write(f'  {bearing_id}: {truth.fault_label} onset={onset}')
        self.success(f'Wrote {spec.dataset_id} to {out}')

    def action_r2f(self, config, out, **kwargs):
        self._generate('run_to_failure', config, out)

    def action_injected(self, config, out, **kwargs):
        self._generate('injected', config, out)
