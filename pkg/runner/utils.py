import logging
from dataclasses import dataclass
from io import StringIO
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Union

import pandas as pd
from django.conf import settings

from core.exceptions import ConfigurationError, ContaminationError
from core.utils import dumps, read_json, write_json
from splits.models import TRAIN, VAL

from .models import FORMAT_CHOICES, MODEL_LABELS, CellResult, EvaluationReport, PairedReport

logger = logging.getLogger('runner')

# partitions each kind of fitted statistic may see
ALLOWED_PARTITIONS = {
    'standardizer': frozenset({TRAIN}),
    'model': frozenset({TRAIN}),
    'early_stopping': frozenset({TRAIN, VAL}),
}


@dataclass(frozen=True)
class ProvenanceEntry:
    statistic: str
    kind: str
    partitions: FrozenSet[str]

    def to_dict(self) -> dict:
        return {'statistic': self.statistic, 'kind': self.kind, 'partitions': sorted(self.partitions)}


class ProvenanceLedger:
    """
    Records which partitions fed every fitted statistic of a run.

    Standardizers and model parameters may only see train, early stopping
    train and val. Labeler statistics are per bearing; when a split puts one
    bearing in several partitions they are reported, not rejected.
    """

    def __init__(self):
        self._entries: Dict[str, ProvenanceEntry] = {}

    def record(self, statistic: str, kind: str, partitions: Iterable[str]):
        entry = ProvenanceEntry(statistic, kind, frozenset(partitions))
        previous = self._entries.get(statistic)
        if previous is not None:
            entry = ProvenanceEntry(statistic, kind, previous.partitions | entry.partitions)
        self._entries[statistic] = entry

    @property
    def entries(self) -> List[ProvenanceEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def assert_no_test_contamination(self) -> List[str]:
        """Raise on a statistic that saw a forbidden partition; return notes on spanning labelers."""
        violations = []
        notes = []
        for entry in self.entries:
            allowed = ALLOWED_PARTITIONS.get(entry.kind)
            if allowed is None:
                if len(entry.partitions) > 1:
                    notes.append(f"{entry.statistic} was fitted on data spanning {sorted(entry.partitions)}")
                continue
            extra = entry.partitions - allowed
            if extra:
                violations.append(f"{entry.statistic} ({entry.kind}) saw {sorted(extra)}")
        if violations:
            raise ContaminationError("test-set contamination: " + '; '.join(violations))
        return notes

    def to_list(self) -> List[dict]:
        return [e.to_dict() for e in self.entries]


# ==================== Reports ====================

def _fmt(value: Optional[float]) -> str:
    return '-' if value is None else f'{value:.3f}'


def _error_text(error: str) -> str:
    reason = error.replace('|', '/').replace('\n', ' ')
    if len(reason) > 80:
        reason = reason[:77] + '...'
    return f'ERR({reason})'


class ReportRenderer:
    """Markdown, CSV and JSON views of evaluation and paired reports."""

    @staticmethod
    def f_column(report: EvaluationReport) -> str:
        return 'F' if report.task == 'binary' and report.report_mode == 'positive' else 'F_mac'

    @staticmethod
    def cell_values(cell: CellResult, report: EvaluationReport) -> Dict[str, float]:
        values = cell.metrics.report_values(report.report_mode)
        return {'Acc': values['Acc'], 'F': values['F'], 'F_mac': values['F_mac'],
                'Prec': values['Prec'], 'Rec': values['Rec']}

    @staticmethod
    def results_table(report: EvaluationReport) -> List[str]:
        """Models as row groups, families as rows; the best cell of the table in bold."""
        f_name = ReportRenderer.f_column(report)
        columns = ['Acc', f_name, 'Prec', 'Rec']
        scored = [c for c in report.cells if c.ok]
        best = None
        if scored:
            best = max(ReportRenderer.cell_values(c, report)[f_name] for c in scored)

        lines = [
            '| Model | Features | ' + ' | '.join(columns) + ' |',
            '|---|---|' + '---:|' * len(columns),
        ]
        previous_model = None
        for cell in report.cells:
            model = cell.label if cell.model != previous_model else ''
            previous_model = cell.model
            if not cell.ok:
                values = [_error_text(cell.error)] * len(columns)
            else:
                numbers = ReportRenderer.cell_values(cell, report)
                values = [_fmt(numbers[c]) for c in columns]
                if best is not None and numbers[f_name] == best:
                    values = [f'**{v}**' for v in values]
            lines.append(f'| {model} | {cell.family} | ' + ' | '.join(values) + ' |')
        return lines

    @staticmethod
    def markdown(report: EvaluationReport, level: int = 1) -> str:
        h = '#' * level
        lines = [
            f'{h} {report.name}: {report.task} classification, {report.split_strategy} split',
            '',
            f'- Dataset: {report.dataset_id}',
            f'- Labeling: {report.labeling}',
            f'- Seed: {report.seed}',
            f'- Config hash: `{report.config_hash[:16]}`, code version {report.code_version}',
            '',
            f'{h}# Results',
            '',
        ]
        if report.cells:
            lines += ReportRenderer.results_table(report)
        else:
            lines.append('No model cells were configured.')

        lines += ['', f'{h}# Samples', '']
        classes = sorted({c for counts in report.sample_counts.values() for c in counts})
        if classes:
            lines.append('| Partition | ' + ' | '.join(classes) + ' | Total |')
            lines.append('|---|' + '---:|' * (len(classes) + 1))
            for partition, counts in report.sample_counts.items():
                row = [str(counts.get(c, 0)) for c in classes]
                lines.append(f'| {partition} | ' + ' | '.join(row) + f' | {sum(counts.values())} |')

        summary = report.label_summary
        if summary:
            lines += ['', f'{h}# Labels', '']
            lines.append(f"- Method: {summary.get('method')}")
            for view in ('multiclass_counts', 'binary_counts'):
                if summary.get(view):
                    shown = ', '.join(f'{k}={v}' for k, v in summary[view].items())
                    lines.append(f"- {view.replace('_', ' ')}: {shown}")
            if summary.get('discrepancy'):
                lines.append(f"- Binary failure windows minus multiclass fault windows: {summary['discrepancy']}")
            onsets = summary.get('onsets') or {}
            if onsets:
                shown = ', '.join(f"{b}={'-' if o is None else o}" for b, o in onsets.items())
                lines.append(f'- Onsets: {shown}')

        if report.audit:
            lines += ['', f'{h}# Leakage audit', '']
            if report.audit.get('leak_free'):
                lines.append(f"Leak-free: {report.audit.get('n_bearings')} bearings, each in a single partition.")
            else:
                leaking = report.audit.get('leaking_bearings', {})
                lines.append(f"{len(leaking)} of {report.audit.get('n_bearings')} bearings span several partitions.")

        if report.warnings:
            lines += ['', f'{h}# Warnings', '']
            lines += [f'- {w}' for w in report.warnings]

        confusions = [c for c in report.cells if c.confusion is not None]
        if confusions:
            lines += ['', f'{h}# Confusion matrices', '']
            for cell in confusions:
                classes = list(cell.confusion.classes)
                lines.append(f'{cell.label} / {cell.family} (rows true, columns predicted)')
                lines.append('')
                lines.append('| | ' + ' | '.join(classes) + ' |')
                lines.append('|---|' + '---:|' * len(classes))
                for name, row in zip(classes, cell.confusion.counts.tolist()):
                    lines.append(f'| {name} | ' + ' | '.join(str(v) for v in row) + ' |')
                lines.append('')
        return '\n'.join(lines).rstrip() + '\n'

    @staticmethod
    def rows(report: EvaluationReport) -> List[dict]:
        rows = []
        for cell in report.cells:
            row = {
                'dataset': report.dataset_id,
                'task': report.task,
                'split': report.split_strategy,
                'labeling': report.labeling,
                'model': MODEL_LABELS.get(cell.model, cell.model),
                'family': cell.family,
                'Acc': None, 'Prec': None, 'Rec': None, 'F': None, 'F_mac': None,
                'n_test': cell.n_test,
                'error': cell.error or '',
            }
            if cell.ok:
                row.update(ReportRenderer.cell_values(cell, report))
            rows.append(row)
        return rows

    @staticmethod
    def csv(rows: List[dict]) -> str:
        columns = ['dataset', 'task', 'split', 'labeling', 'model', 'family',
                   'Acc', 'Prec', 'Rec', 'F', 'F_mac', 'n_test', 'error']
        buffer = StringIO()
        frame = pd.DataFrame(rows, columns=columns)
        frame.to_csv(buffer, index=False, float_format=settings.BENCHMARK_CONFIG['CSV_FLOAT_FORMAT'],
                     lineterminator='\n')
        return buffer.getvalue()

    @staticmethod
    def paired_markdown(report: PairedReport) -> str:
        lines = [
            f'# {report.left.name}: {report.left_name} vs {report.right_name}',
            '',
            f'| Model | Features | F_mac {report.left_name} | F_mac {report.right_name} | Delta | Flag |',
            '|---|---|---:|---:|---:|---|',
        ]
        for delta in report.deltas:
            flag = 'inflated' if delta.get('flagged') else ''
            if delta.get('error'):
                flag = _error_text(delta['error'])
            lines.append(
                f"| {MODEL_LABELS.get(delta['model'], delta['model'])} | {delta['family']} | "
                f"{_fmt(delta.get('left_f_mac'))} | {_fmt(delta.get('right_f_mac'))} | "
                f"{_fmt(delta.get('delta'))} | {flag} |"
            )
        if report.notes:
            lines += ['', '## Notes', '']
            lines += [f'- {note}' for note in report.notes]
        onsets = report.details.get('onsets')
        if onsets:
            methods = [report.left_name, report.right_name]
            has_truth = any(row.get('truth') is not None for row in onsets.values())
            header = ['Bearing'] + methods + (['Ground truth'] if has_truth else [])
            lines += ['', '## Onsets', '', '| ' + ' | '.join(header) + ' |', '|---|' + '---:|' * (len(header) - 1)]
            for bearing, row in onsets.items():
                values = [row.get(m) for m in methods] + ([row.get('truth')] if has_truth else [])
                lines.append(f'| {bearing} | ' + ' | '.join('-' if v is None else str(v) for v in values) + ' |')
        lines += ['', ReportRenderer.markdown(report.left, level=2).rstrip(),
                  '', ReportRenderer.markdown(report.right, level=2).rstrip()]
        return '\n'.join(lines) + '\n'


def render_report(report: Union[EvaluationReport, PairedReport], format: str = 'markdown') -> str:
    if format not in FORMAT_CHOICES:
        raise ConfigurationError(f"format must be one of {FORMAT_CHOICES}, got {format!r}")
    if format == 'json':
        return dumps(report.to_dict()) + '\n'
    if isinstance(report, PairedReport):
        if format == 'csv':
            rows = []
            for side, name in ((report.left, report.left_name), (report.right, report.right_name)):
                rows += [{'side': name, **row} for row in ReportRenderer.rows(side)]
            buffer = StringIO()
            pd.DataFrame(rows).to_csv(buffer, index=False, lineterminator='\n',
                                      float_format=settings.BENCHMARK_CONFIG['CSV_FLOAT_FORMAT'])
            return buffer.getvalue()
        return ReportRenderer.paired_markdown(report)
    if format == 'csv':
        return ReportRenderer.csv(ReportRenderer.rows(report))
    return ReportRenderer.markdown(report)


def save_report(report: Union[EvaluationReport, PairedReport], out_dir) -> Path:
    """report.json, report.md and report.csv under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / 'report.json', report.to_dict())
    (out_dir / 'report.md').write_text(render_report(report, 'markdown'), encoding='utf-8')
    (out_dir / 'report.csv').write_text(render_report(report, 'csv'), encoding='utf-8')
    logger.info(f"💾 Wrote report to {out_dir}")
    return out_dir / 'report.json'


def load_report(path) -> Union[EvaluationReport, PairedReport]:
    data = read_json(path)
    if data.get('type') == 'paired':
        return PairedReport.from_dict(data)
    if data.get('type') == 'evaluation':
        return EvaluationReport.from_dict(data)
    raise ConfigurationError(f"{path} is not a benchmark report")
