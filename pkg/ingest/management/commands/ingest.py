from pathlib import Path

from core.commands import LAYOUT_ALIASES, BenchCommand
from ingest.engine import load_manifest, resample_dataset, save_manifest, scan_dataset


class Command(BenchCommand):
    help = 'Scan a dataset tree into a manifest, or write a resampled copy of a dataset'

    def add_actions(self, subparsers):
        scan = subparsers.add_parser('scan', help='Enumerate recordings into a manifest')
        scan.add_argument('--root', required=True)
        scan.add_argument('--layout', required=True, choices=sorted(LAYOUT_ALIASES))
        scan.add_argument('--out', required=True)
        scan.add_argument('--dataset-id', default=None)
        scan.add_argument('--rate', type=float, default=None,
                          help='Override the layout sampling rate (Hz)')

        resample = subparsers.add_parser('resample', help='Anti-alias and decimate a dataset')
        resample.add_argument('--manifest', required=True)
        resample.add_argument('--rate', type=float, required=True)
        resample.add_argument('--out', default=None,
                              help='Output root (default: <root>_<rate>Hz next to the dataset)')

    def action_scan(self, root, layout, out, dataset_id=None, rate=None, **kwargs):
        self.stdout.write(self.style.WARNING(f'Scanning {root} ({layout})...'))
        manifest = scan_dataset(root, LAYOUT_ALIASES[layout], dataset_id=dataset_id, sampling_rate_hz=rate)
        save_manifest(manifest, out)
        for reject in manifest.rejects:
            self.warn(f"  rejected {reject['path']}: {reject['reason']}")
        self.success(
            f'Wrote {out}: {len(manifest)} records, {len(manifest.bearing_ids())} bearings, '
            f'{len(manifest.rejects)} rejects'
        )

    def action_resample(self, manifest, rate, out=None, **kwargs):
        source = load_manifest(manifest)
        out_root = Path(out) if out else source.root.parent / f'{source.root.name}_{int(rate)}Hz'
        resampled = resample_dataset(source, rate, out_root)
        self.success(f'Wrote {len(resampled)} records at {rate} Hz to {out_root}')
