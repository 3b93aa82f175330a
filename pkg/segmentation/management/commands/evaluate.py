from pathlib import Path

from segmentation.cli import ConfigCommand, load_split
from segmentation.evaluation import evaluate_dataset, plot_temporal_curves
from segmentation.inference import load_predictions
from segmentation.io import write_json


class Command(ConfigCommand):
    help = 'Score predicted masks with J and boundary F, split by seen / unseen categories.'

    def add_command_arguments(self, parser):
        parser.add_argument('--split', default='val', help='train, val_seen, val_unseen or val')
        parser.add_argument('--predictions-dir', help='Predicted masks (default: <output_dir>/predictions)')
        parser.add_argument('--report', help='Report path (default: <output_dir>/report.json)')

    def run(self, run_config, **options):
        out = Path(self.output_dir(run_config))
        sequences, labels = load_split(run_config, options['split'])
        predictions = load_predictions(options.get('predictions_dir') or out / 'predictions', sequences)
        settings = run_config.evaluation
        report = evaluate_dataset(
            predictions, sequences, labels, settings.boundary_tolerance, settings.compute_boundary,
            run_config.workers,
        )
        report_path = Path(options.get('report') or out / 'report.json')
        write_json(report.as_dict(), report_path)
        self.save_config(run_config, report_path.parent)
        if settings.plot_curves:
            plot_temporal_curves(
                {'prediction': (report.temporal_j, report.survival)}, report_path.parent / 'temporal_curve.png'
            )
        for key in ('J_seen', 'J_unseen', 'F_seen', 'F_unseen'):
            value = getattr(report, key)
            self.stdout.write(f"{key}: {'-' if value is None else f'{value:.4f}'}")
        self.stdout.write(self.style.SUCCESS(f'Report written to {report_path}'))
