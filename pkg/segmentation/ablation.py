"""
Ablation grids: train every cell of a grid across seeds and compare validation J.

Each grid cell is a set of changes to the run configuration. Results come
back as pandas tables plus a list of ordering checks for the grid.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Tuple

import pandas as pd
import torch

from .cues import CueConfig
from .exceptions import DataValidationError
from .io import write_json
from .network import MultiAttentionNetwork
from .training import phase_plan, run_curriculum, validate

logger = logging.getLogger(__name__)

GRID_NAMES = ('loss', 'attention', 'flow', 'instances', 'decoder')
MULTI_INSTANCE_MINIMUM = 2


@dataclass(frozen=True)
class AblationConfig:
    grid: str = 'loss'
    seeds: Tuple[int, ...] = (0, 1, 2)
    min_gap: float = 0.03

    def __post_init__(self):
        if self.grid not in GRID_NAMES:
            raise DataValidationError(f'Unknown ablation grid {self.grid!r}; choose from {GRID_NAMES}.')
        if not self.seeds:
            raise DataValidationError('An ablation needs at least one seed.')


@dataclass(frozen=True)
class GridCell:
    """A named configuration delta: ``{section: {field: value}}``."""

    name: str
    changes: Dict[str, dict] = field(default_factory=dict)
    min_instances: int = 0


def _attention_cells():
    cells = []
    for use_flow, flow_name in ((False, 'rgb'), (True, 'uof')):
        for name, use_lta, use_sta in (('none', False, False), ('sta', False, True),
                                       ('lta', True, False), ('lta_sta', True, True)):
            changes = {'train': {'cues': CueConfig(use_flow, use_lta, use_sta)}}
            if not use_sta:
                changes['curriculum'] = {'phase3_enabled': False}
            cells.append(GridCell(f'{name}_{flow_name}', changes))
    return tuple(cells)


GRIDS = {
    'loss': tuple(GridCell(name, {'train': {'loss': name}}) for name in ('bce', 'dice', 'wid')),
    'attention': _attention_cells(),
    'flow': tuple(
        GridCell(name, {'train': {'cues': CueConfig(flow_encoding=name)}}) for name in ('raw', 'uof')
    ),
    'instances': (
        GridCell('single', {'train': {'instance_mode': 'single'}, 'network': {'num_channels': 1}},
                 MULTI_INSTANCE_MINIMUM),
        GridCell('multi', {}, MULTI_INSTANCE_MINIMUM),
    ),
    'decoder': tuple(
        GridCell(name, {'network': {'separable': separable, 'dilated': dilated}})
        for name, separable, dilated in (
            ('standard', False, False), ('dilated', False, True),
            ('separable', True, False), ('separable_dilated', True, True),
        )
    ),
}


def grid_cells(name):
    try:
        return GRIDS[name]
    except KeyError:
        raise DataValidationError(f'Unknown ablation grid {name!r}; choose from {GRID_NAMES}.') from None


def apply_cell(run_config, cell, seed):
    """The run configuration of one (cell, seed) pair; the dataset stays fixed."""
    sections = {}
    for section, changes in cell.changes.items():
        sections[section] = replace(getattr(run_config, section), **changes)
    train = sections.get('train', run_config.train)
    sections['train'] = replace(train, seed=seed)
    return replace(run_config, seed=seed, **sections)


def run_cell(run_config, cell, seed, train, validation, split_labels=None, output_dir=None, device=None):
    cfg = apply_cell(run_config, cell, seed)
    torch.manual_seed(seed)
    model = MultiAttentionNetwork(cfg.network)
    result = run_curriculum(
        train, model, cfg.train, cfg.curriculum, cfg.loss,
        output_dir=Path(output_dir) / f'{cell.name}_seed{seed}' if output_dir else None, device=device,
    )
    scored = [seq for seq in validation if seq.active_count >= cell.min_instances]
    final_phase = phase_plan(cfg.curriculum)[-1]
    j_seen, j_unseen = validate(result.model, scored, split_labels, cfg.train, final_phase, cfg.curriculum, device)
    logger.info('Cell %s seed %d: J_seen=%s J_unseen=%s', cell.name, seed, j_seen, j_unseen)
    return {'cell': cell.name, 'seed': seed, 'J_seen': j_seen, 'J_unseen': j_unseen, 'iterations': result.iterations}


def _with_j(runs):
    """Numeric split columns plus ``J``: the seen score, or the unseen one when nothing is seen."""
    runs = runs.copy()
    for column in ('J_seen', 'J_unseen'):
        runs[column] = pd.to_numeric(runs[column], errors='coerce')
    runs['J'] = runs['J_seen'].fillna(runs['J_unseen'])
    return runs


def summarize(runs):
    """Mean and population std of J per cell, in grid order."""
    runs = _with_j(runs)
    return runs.groupby('cell', sort=False).agg(
        J_mean=('J', 'mean'),
        J_std=('J', lambda s: s.std(ddof=0)),
        J_seen_mean=('J_seen', 'mean'),
        J_unseen_mean=('J_unseen', 'mean'),
        seeds=('seed', 'count'),
    ).reset_index()


@dataclass(frozen=True)
class TrendCheck:
    name: str
    passed: bool
    detail: str = ''


def _means(summary):
    return dict(zip(summary['cell'], summary['J_mean']))


def check_trends(grid, runs, min_gap=0.03):
    """Ordering checks expected from each grid."""
    summary = summarize(runs)
    means = _means(summary)
    checks = []
    if grid == 'loss':
        checks.append(TrendCheck('wid > dice > bce', bool(means['wid'] > means['dice'] > means['bce']),
                                 f"wid={means['wid']:.3f} dice={means['dice']:.3f} bce={means['bce']:.3f}"))
        gap = means['wid'] - means['bce']
        checks.append(TrendCheck(f'wid - bce >= {min_gap}', bool(gap >= min_gap), f'gap={gap:.3f}'))
    elif grid == 'attention':
        best = max(means, key=means.get)
        checks.append(TrendCheck('lta_sta_uof is the best cell', best == 'lta_sta_uof', f'best={best}'))
        per_seed = _with_j(runs).pivot(index='seed', columns='cell', values='J')
        needed = math.ceil(2 * len(per_seed) / 3)
        for base in ('none', 'sta', 'lta', 'lta_sta'):
            wins = int((per_seed[f'{base}_uof'] >= per_seed[f'{base}_rgb']).sum())
            checks.append(TrendCheck(f'{base}: uof >= rgb', wins >= needed, f'{wins}/{len(per_seed)} seeds'))
    elif grid == 'flow':
        checks.append(TrendCheck('uof >= raw', bool(means['uof'] >= means['raw']),
                                 f"uof={means['uof']:.3f} raw={means['raw']:.3f}"))
    elif grid == 'instances':
        checks.append(TrendCheck('multi >= single', bool(means['multi'] >= means['single']),
                                 f"multi={means['multi']:.3f} single={means['single']:.3f}"))
    elif grid == 'decoder':
        best = max(means, key=means.get)
        checks.append(TrendCheck('separable_dilated is the best cell', best == 'separable_dilated', f'best={best}'))
    return checks


@dataclass
class AblationResult:
    grid: str
    runs: pd.DataFrame
    summary: pd.DataFrame
    trends: List[TrendCheck]

    @property
    def passed(self):
        return all(check.passed for check in self.trends)


def run_ablation(run_config, train, validation, split_labels=None, grid=None, seeds=None, output_dir=None,
                 device=None):
    """
    Train every cell of ``grid`` for every seed and tabulate validation J.

    With ``output_dir`` the per-run table, the summary (``results.csv``) and
    the trend checks (``trends.json``) are written there.
    """
    grid = grid or run_config.ablation.grid
    seeds = tuple(seeds or run_config.ablation.seeds)
    cells = grid_cells(grid)
    if not validation:
        raise DataValidationError('An ablation needs validation sequences.')
    records = [
        run_cell(run_config, cell, seed, train, validation, split_labels, output_dir, device)
        for cell in cells
        for seed in seeds
    ]
    runs = pd.DataFrame.from_records(records)
    summary = summarize(runs)
    trends = check_trends(grid, runs, run_config.ablation.min_gap)
    for check in trends:
        logger.info('Trend %-32s %s (%s)', check.name, 'PASS' if check.passed else 'FAIL', check.detail)
    if output_dir:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        runs.to_csv(output_dir / 'runs.csv', index=False)
        summary.to_csv(output_dir / 'results.csv', index=False)
        write_json([check.__dict__ for check in trends], output_dir / 'trends.json')
    return AblationResult(grid, runs, summary, trends)
