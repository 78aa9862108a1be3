from dataclasses import replace
from pathlib import Path

from core.commands import BenchCommand
from core.exceptions import PartialFailureError

from runner.engine import compare_labelers, compare_splits, run_experiment
from runner.models import FORMAT_CHOICES
from runner.serializers import load_experiment_config
from runner.utils import load_report, render_report


class Command(BenchCommand):
    help = 'Run benchmark experiments, compare split strategies or labelers, and render stored reports'

    def add_actions(self, subparsers):
        run = subparsers.add_parser('run', help='Run one experiment config end to end')
        run.add_argument('--config', required=True, help='Experiment JSON/YAML')

        splits = subparsers.add_parser('compare-splits', help='Same experiment under bearing-wise and random splits')
        splits.add_argument('--config', required=True)

        labelers = subparsers.add_parser('compare-labelers', help='Same experiment under threshold and PCA labels')
        labelers.add_argument('--config', required=True)
        labelers.add_argument('--threshold-g', type=float, default=None)

        report = subparsers.add_parser('report', help='Render a stored report.json')
        report.add_argument('--report', required=True)
        report.add_argument('--format', choices=FORMAT_CHOICES, default='markdown')
        report.add_argument('--out', default=None)

    def _finish(self, report, out_dir: Path):
        failed = report.failed_cells
        path = out_dir / 'report.md'
        if failed:
            self.warn(f'{len(failed)} cells failed:')
            for cell in failed:
                self.stdout.write(f'  {cell.label}/{cell.family}: {cell.error}')
            raise PartialFailureError(f'{len(failed)} cells failed; report written to {path}')
        self.success(f'Wrote report to {path}')

    def action_run(self, config, **kwargs):
        cfg = load_experiment_config(config)
        report = run_experiment(cfg)
        self.stdout.write(render_report(report, 'markdown'))
        self._finish(report, cfg.output_dir)

    def action_compare_splits(self, config, **kwargs):
        cfg = load_experiment_config(config)
        report = compare_splits(cfg)
        for delta in report.deltas:
            if delta['flagged']:
                self.warn(f"  {delta['model']}/{delta['family']}: random split higher by {delta['delta']:.3f}")
        self._finish(report, cfg.output_dir)

    def action_compare_labelers(self, config, threshold_g=None, **kwargs):
        cfg = load_experiment_config(config)
        if threshold_g is not None:
            cfg = cfg.with_labeling(replace(cfg.labeling, threshold_g=threshold_g))
        report = compare_labelers(cfg)
        for note in report.notes:
            self.stdout.write(f'  {note}')
        self._finish(report, cfg.output_dir)

    def action_report(self, report, format, out=None, **kwargs):
        document = render_report(load_report(report), format)
        if out is None:
            self.stdout.write(document, ending='')
            return
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(document, encoding='utf-8')
        self.success(f'Wrote {format} report to {out}')
