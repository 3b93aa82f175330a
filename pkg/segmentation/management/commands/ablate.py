from pathlib import Path

from segmentation.ablation import GRID_NAMES, run_ablation
from segmentation.cli import ConfigCommand, load_split


class Command(ConfigCommand):
    help = 'Train every cell of an ablation grid across seeds and check the expected orderings.'

    overrides = {'grid': 'ablation.grid', 'seeds': 'ablation.seeds'}

    def add_command_arguments(self, parser):
        parser.add_argument('--grid', choices=GRID_NAMES, help='Which grid to run')
        parser.add_argument('--seeds', type=int, nargs='+', help='Training seeds')

    def run(self, run_config, **options):
        out = Path(self.output_dir(run_config)) / f'ablation_{run_config.ablation.grid}'
        train, labels = load_split(run_config, 'train')
        validation, _ = load_split(run_config, 'val')
        result = run_ablation(run_config, train, validation, labels, output_dir=out, device=self.device(options))
        self.save_config(run_config, out)
        self.stdout.write(result.summary.to_string(index=False))
        for check in result.trends:
            style = self.style.SUCCESS if check.passed else self.style.WARNING
            self.stdout.write(style(f"{'PASS' if check.passed else 'FAIL'} {check.name} ({check.detail})"))
        self.stdout.write(f"Results table: {out / 'results.csv'}")
