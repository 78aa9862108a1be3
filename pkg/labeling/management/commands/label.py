from collections import defaultdict

from django.conf import settings

from core.commands import BenchCommand
from features.utils import load_features
from ingest.engine import group_by_bearing, load_manifest, load_records
from labeling.engine import (
    assign_fault_type, declared_labels, pca_kmeans_label, threshold_label,
)
from labeling.utils import documented_fault_types, save_labels


class Command(BenchCommand):
    help = 'Label run-to-failure bearings (threshold, PCA + k-means) or pass through declared labels'

    def add_actions(self, subparsers):
        config = settings.BENCHMARK_CONFIG

        threshold = subparsers.add_parser('threshold', help='First exceedance of an amplitude threshold')
        threshold.add_argument('--manifest', required=True)
        threshold.add_argument('--g', type=float, default=config['THRESHOLD_G'])
        threshold.add_argument('--fault-types', default=None,
                               help='Documented fault types (e.g. xjtu) for multiclass labels')
        threshold.add_argument('--out', required=True)

        pca = subparsers.add_parser('pca', help='PCA of spectral features + k-means enrichment')
        pca.add_argument('--features', required=True, help='RFFT or STFT feature CSV')
        pca.add_argument('--clusters', type=int, default=config['KMEANS_CLUSTERS'])
        pca.add_argument('--components', type=int, default=config['PCA_COMPONENTS'])
        pca.add_argument('--theta', type=float, default=config['ENRICHMENT_THRESHOLD'])
        pca.add_argument('--no-force-final', action='store_true')
        pca.add_argument('--seed', type=int, default=0)
        pca.add_argument('--fault-types', default=None)
        pca.add_argument('--out', required=True)

        declared = subparsers.add_parser('declared', help='Labels declared by an injected-fault dataset')
        declared.add_argument('--manifest', required=True)
        declared.add_argument('--out', required=True)

    def _finish(self, assignments, fault_types, out):
        if fault_types:
            documented = documented_fault_types(fault_types)
            assignments = {
                b: assign_fault_type(a, documented[b]) if b in documented else a
                for b, a in assignments.items()
            }
        save_labels(assignments, out)
        for bearing_id, assignment in assignments.items():
            onset = assignment.onset_seq_index if assignment.onset_seq_index is not None else '-'
            self.stdout.write(f'  {bearing_id}: onset={onset} classes={assignment.classes}')
        self.success(f'Wrote labels for {len(assignments)} bearings to {out}')

    def action_threshold(self, manifest, g, out, fault_types=None, **kwargs):
        records = load_records(load_manifest(manifest))
        assignments = {
            bearing_id: threshold_label(items, g)
            for bearing_id, items in group_by_bearing(records).items()
        }
        self._finish(assignments, fault_types, out)

    def action_pca(self, features, clusters, components, theta, seed, out,
                   no_force_final=False, fault_types=None, **kwargs):
        by_bearing = defaultdict(list)
        for sample in load_features(features):
            by_bearing[sample.bearing_id].append(sample)
        assignments = {
            bearing_id: pca_kmeans_label(
                samples, clusters, components, seed,
                enrichment_threshold=theta, force_final_cluster=not no_force_final,
            )
            for bearing_id, samples in by_bearing.items()
        }
        self._finish(assignments, fault_types, out)

    def action_declared(self, manifest, out, **kwargs):
        self._finish(declared_labels(load_manifest(manifest).records), None, out)
