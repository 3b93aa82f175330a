from pathlib import Path

import torch

from segmentation.cli import ConfigCommand, load_split
from segmentation.losses import LOSS_NAMES
from segmentation.network import MultiAttentionNetwork, load_encoder_weights
from segmentation.training import Trainer, run_curriculum


class Command(ConfigCommand):
    help = (
        'Train the network through the cue curriculum. With --resume the model, optimizer, schedule, '
        'sampling state and curriculum position come from a checkpoint and training continues where it stopped.'
    )

    overrides = {'loss': 'train.loss', 'max_iterations': 'train.max_iterations'}

    def add_command_arguments(self, parser):
        parser.add_argument('--loss', choices=LOSS_NAMES, help='Training loss')
        parser.add_argument('--max-iterations', type=int, help='Iteration cap')
        parser.add_argument('--resume', help='Checkpoint to resume from')

    def run(self, run_config, **options):
        device = self.device(options)
        out = Path(self.output_dir(run_config))
        train, labels = load_split(run_config, 'train')
        validation, _ = load_split(run_config, 'val')
        self.save_config(run_config, out)

        trainer = None
        if options.get('resume'):
            trainer = Trainer.resume(options['resume'], run_config.train, run_config.loss, out, device=device)
            model = trainer.model
        else:
            torch.manual_seed(run_config.seed)
            model = MultiAttentionNetwork(run_config.network)
            if run_config.network.encoder_weights:
                load_encoder_weights(model, run_config.network.encoder_weights)

        result = run_curriculum(
            train, model, run_config.train, run_config.curriculum, run_config.loss,
            validation, labels, out, trainer=trainer, device=device,
        )
        for phase, scores in result.phase_scores.items():
            self.stdout.write(f"{phase}: J_seen={scores['J_seen']} J_unseen={scores['J_unseen']}")
        self.stdout.write(self.style.SUCCESS(
            f"Trained for {result.iterations} iterations; checkpoint in {out / 'checkpoint.pt'}"
        ))
