"""
Command-line entry point.

``python -m segmentation <subcommand> ...`` dispatches to the management
commands of the same name (hyphens become underscores), so
``python manage.py generate_data ...`` works as well. Exit codes: 0 on
success, 1 on validation or usage errors, 2 on runtime failures.
"""

import json
import logging
import os
import sys

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import BaseCommand, CommandError

from .config import load_run_config, write_effective_config
from .exceptions import DataValidationError, SegmentationError
from .io import SPLIT_NAMES, load_sequences, read_splits

logger = logging.getLogger(__name__)

SUBCOMMANDS = ('generate-data', 'train', 'infer', 'evaluate', 'ablate', 'render-overlay')
EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

USAGE = 'usage: python -m segmentation {%s} [--config FILE] [--set KEY=VALUE ...]' % ','.join(SUBCOMMANDS)


class ConfigCommand(BaseCommand):
    """
    Base for every subcommand: loads and validates the run config.

    Flags shared by all subcommands override config keys; ``--set`` accepts
    any dotted key. Subclasses implement ``run(run_config, **options)``.
    """

    overrides = {}

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON run configuration file')
        parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                            help='Override a config key, e.g. train.lr0=1e-3')
        parser.add_argument('--seed', type=int, help='Seed for every random generator')
        parser.add_argument('--data-root', help='Dataset root (default: MAIN_VOS_DATA_ROOT)')
        parser.add_argument('--output-dir', help='Directory for run artifacts')
        parser.add_argument('--workers', type=int, help='Parallel workers')
        parser.add_argument('--device', default=settings.MAIN_VOS['DEVICE'], help='torch device')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def collect_overrides(self, options):
        overrides = list(options.get('set') or [])
        for option, key in {'seed': 'seed', 'data_root': 'data_root', 'output_dir': 'output_dir',
                            'workers': 'workers', **self.overrides}.items():
            value = options.get(option)
            if value is not None:
                overrides.append(f'{key}={json.dumps(value)}')
        return overrides

    def handle(self, *args, **options):
        try:
            run_config = load_run_config(options.get('config'), self.collect_overrides(options))
            self.run(run_config, **options)
        except DataValidationError as exc:
            raise CommandError(str(exc), returncode=EXIT_INVALID) from exc
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=EXIT_RUNTIME) from exc

    def run(self, run_config, **options):
        raise NotImplementedError

    def device(self, options):
        device = options.get('device')
        return None if device in (None, '', 'cpu') else device

    def output_dir(self, run_config):
        path = run_config.output_dir
        os.makedirs(path, exist_ok=True)
        return path

    def save_config(self, run_config, directory):
        path = write_effective_config(run_config, directory)
        self.stdout.write(f'Effective config written to {path}')
        return path


def split_labels(splits):
    """Seen/unseen label per sequence id from ``splits.json``."""
    labels = {sequence_id: 'seen' for sequence_id in splits.get('train', [])}
    labels.update({sequence_id: 'seen' for sequence_id in splits.get('val_seen', [])})
    labels.update({sequence_id: 'unseen' for sequence_id in splits.get('val_unseen', [])})
    return labels


def load_split(run_config, name, num_channels=None):
    """
    Load the sequences of a split and their seen/unseen labels.

    ``name`` is one of the stored splits or ``val`` for both validation splits.
    """
    splits = read_splits(run_config.data_root)
    if name == 'val':
        ids = splits['val_seen'] + splits['val_unseen']
    elif name in SPLIT_NAMES:
        ids = splits[name]
    else:
        raise DataValidationError(f"Unknown split {name!r}; choose from {SPLIT_NAMES + ('val',)}.")
    sequences = load_sequences(
        run_config.data_root, ids, num_channels or run_config.scene.num_channels, run_config.workers
    )
    return sequences, split_labels(splits)


def main(argv=None):
    """Run one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ('-h', '--help'):
        sys.stdout.write(USAGE + '\n')
        return EXIT_OK if argv else EXIT_INVALID
    if argv[0] not in SUBCOMMANDS:
        sys.stderr.write(f'Unknown subcommand {argv[0]!r}\n{USAGE}\n')
        return EXIT_INVALID
    try:
        call_command(argv[0].replace('-', '_'), *argv[1:])
    except CommandError as exc:
        sys.stderr.write(f'Error: {exc}\n')
        return getattr(exc, 'returncode', EXIT_INVALID)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except Exception:
        logger.exception('%s failed', argv[0])
        return EXIT_RUNTIME
    return EXIT_OK
