from pathlib import Path

from segmentation.cli import ConfigCommand
from segmentation.io import save_sequence, write_splits
from segmentation.scenes import generate_split


class Command(ConfigCommand):
    help = 'Generate synthetic train / val_seen / val_unseen scenes under the data root.'

    overrides = {'num_scenes': 'num_scenes', 'train_fraction': 'train_fraction'}

    def add_command_arguments(self, parser):
        parser.add_argument('--num-scenes', type=int, help='Total number of scenes')
        parser.add_argument('--train-fraction', type=float, help='Share of scenes used for training')

    def run(self, run_config, **options):
        split = generate_split(
            run_config.scene, run_config.train_fraction, run_config.num_scenes, run_config.workers
        )
        root = Path(run_config.data_root)
        for seq in split.train + split.validation:
            save_sequence(seq, root)
        write_splits(
            {
                'train': [seq.sequence_id for seq in split.train],
                'val_seen': [seq.sequence_id for seq in split.val_seen],
                'val_unseen': [seq.sequence_id for seq in split.val_unseen],
            },
            root,
        )
        self.save_config(run_config, root)
        self.stdout.write(self.style.SUCCESS(
            f'Wrote {len(split.train)} train, {len(split.val_seen)} val_seen and '
            f'{len(split.val_unseen)} val_unseen sequences to {root}'
        ))
