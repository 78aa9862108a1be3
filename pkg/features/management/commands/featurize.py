from django.conf import settings
from django.core.management.base import BaseCommand

from core.exceptions import BenchmarkError, as_command_error
from features.engine import extract
from features.models import FAMILY_CHOICES, WindowSpec
from features.utils import save_features
from ingest.engine import downsample, load_manifest, load_records


class Command(BaseCommand):
    help = 'Window every waveform of a manifest and write one feature family to CSV'

    def add_arguments(self, parser):
        config = settings.BENCHMARK_CONFIG
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--family', required=True,
                            choices=list(FAMILY_CHOICES) + [f.lower() for f in FAMILY_CHOICES])
        parser.add_argument('--window', type=int, default=config['WINDOW_LENGTH'])
        parser.add_argument('--overlap', type=float, default=config['WINDOW_OVERLAP'])
        parser.add_argument('--stft-sub-len', type=int, default=config['STFT_SUB_LEN'])
        parser.add_argument('--stft-sub-overlap', type=float, default=config['STFT_SUB_OVERLAP'])
        parser.add_argument('--resample', type=float, default=None,
                            help='Downsample every record to this rate (Hz) first')
        parser.add_argument('--out', required=True)

    def handle(self, *args, **options):
        try:
            spec = WindowSpec(options['window'], options['overlap'])
            manifest = load_manifest(options['manifest'])
            if options['resample']:
                source = [downsample(r, options['resample']) for r in load_records(manifest)]
            else:
                source = manifest
            samples = extract(source, options['family'], spec,
                              options['stft_sub_len'], options['stft_sub_overlap'])
            save_features(samples, options['out'], spec,
                          options['stft_sub_len'], options['stft_sub_overlap'])
        except BenchmarkError as exc:
            raise as_command_error(exc) from exc
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(samples)} samples to {options['out']}"))
