from pathlib import Path

from segmentation.cli import ConfigCommand, load_split
from segmentation.exceptions import DataValidationError
from segmentation.inference import load_predictions, write_overlays


class Command(ConfigCommand):
    help = 'Render predicted masks over the RGB frames as PNG overlays.'

    def add_command_arguments(self, parser):
        parser.add_argument('--split', default='val', help='train, val_seen, val_unseen or val')
        parser.add_argument('--sequence', action='append', default=[], help='Only these sequence ids')
        parser.add_argument('--predictions-dir', help='Predicted masks (default: <output_dir>/predictions)')
        parser.add_argument('--out-dir', help='Overlay directory (default: <output_dir>/overlays)')
        parser.add_argument('--alpha', type=float, default=0.5, help='Mask opacity')

    def run(self, run_config, **options):
        if not 0.0 <= options['alpha'] <= 1.0:
            raise DataValidationError('--alpha must lie in [0, 1].')
        out = Path(self.output_dir(run_config))
        sequences, _ = load_split(run_config, options['split'])
        wanted = set(options.get('sequence') or [])
        if wanted:
            missing = sorted(wanted - {seq.sequence_id for seq in sequences})
            if missing:
                raise DataValidationError(f"Sequences not in split {options['split']}: {missing}.")
            sequences = [seq for seq in sequences if seq.sequence_id in wanted]
        predictions = load_predictions(options.get('predictions_dir') or out / 'predictions', sequences)
        overlay_root = Path(options.get('out_dir') or out / 'overlays')
        for seq in sequences:
            write_overlays(seq, predictions[seq.sequence_id], overlay_root / seq.sequence_id, options['alpha'])
        self.stdout.write(self.style.SUCCESS(f'Rendered {len(sequences)} sequences to {overlay_root}'))
