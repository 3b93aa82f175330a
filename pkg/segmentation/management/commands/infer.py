from pathlib import Path

from segmentation.cli import ConfigCommand, load_split
from segmentation.cues import CueConfig
from segmentation.inference import benchmark_forward, save_predictions, segment_dataset, write_overlays
from segmentation.io import write_json
from segmentation.network import load_checkpoint
from segmentation.tracking import build_flow_provider, build_tube_provider


class Command(ConfigCommand):
    help = 'Segment a split with a trained checkpoint and write predicted mask directories.'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', help='Checkpoint file (default: <output_dir>/checkpoint.pt)')
        parser.add_argument('--split', default='val', help='train, val_seen, val_unseen or val')
        parser.add_argument('--predictions-dir', help='Where to write masks (default: <output_dir>/predictions)')
        parser.add_argument('--overlays', action='store_true', help='Also write RGB overlays per frame')
        parser.add_argument('--benchmark', action='store_true', help='Time the forward pass for M = 1..N')

    def run(self, run_config, **options):
        device = self.device(options)
        out = Path(self.output_dir(run_config))
        model, payload = load_checkpoint(options.get('checkpoint') or out / 'checkpoint.pt')
        if device is not None:
            model = model.to(device)
        extra = payload.get('extra', {})
        cues = CueConfig(**extra['cues']) if 'cues' in extra else run_config.train.cues
        instance_mode = extra.get('instance_mode', run_config.inference.instance_mode)

        settings = run_config.inference
        sequences, _ = load_split(run_config, options['split'])
        predictions = segment_dataset(
            sequences,
            model,
            build_flow_provider(settings.flow_provider, settings.flow_noise_std, run_config.seed),
            build_tube_provider(settings.tube_provider, settings.drift_rate, settings.dropout, run_config.seed),
            settings.tau,
            cues,
            instance_mode,
            run_config.workers,
            device,
        )
        predictions_dir = Path(options.get('predictions_dir') or out / 'predictions')
        save_predictions(predictions, predictions_dir)
        self.save_config(run_config, predictions_dir)

        if options.get('overlays'):
            for seq in sequences:
                write_overlays(seq, predictions[seq.sequence_id], out / 'overlays' / seq.sequence_id)
        if options.get('benchmark'):
            table = benchmark_forward(model, height=run_config.scene.height, width=run_config.scene.width,
                                      seed=run_config.seed, device=device)
            write_json(table.as_dict(), out / 'timing.json')
            self.stdout.write(f'Forward latency max/min ratio across M: {table.ratio:.3f}')
        self.stdout.write(self.style.SUCCESS(f'Wrote predictions for {len(predictions)} sequences to {predictions_dir}'))
