"""
Run configuration: one JSON document covering every section of an experiment.

Files are validated by :class:`segmentation.serializers.RunConfigSerializer`;
``--set section.key=value`` overrides are applied to the raw document first,
so overridden values go through the same checks as file values.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from django.conf import settings

from .ablation import AblationConfig
from .evaluation import EvaluationConfig
from .exceptions import ConfigError
from .inference import InferenceConfig
from .io import read_json, write_json
from .losses import LossConfig
from .network import NetworkConfig
from .scenes import SceneSpec
from .training import CurriculumSchedule, TrainConfig

logger = logging.getLogger(__name__)

CONFIG_FILENAME = 'config.json'
SEEDED_SECTIONS = ('scene', 'train')


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = 1
    seed: int = 0
    workers: int = 1
    data_root: str = 'data'
    output_dir: str = 'runs'
    num_scenes: int = 100
    train_fraction: float = 0.75
    scene: SceneSpec = field(default_factory=SceneSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    curriculum: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def as_dict(self):
        """The effective configuration as a document the serializer accepts again."""
        payload = asdict(self)
        for section in SEEDED_SECTIONS:
            payload[section].pop('seed', None)
        return json.loads(json.dumps(payload))


def parse_override(text):
    """Split ``a.b=value``; the value is read as JSON when it parses, else kept as a string."""
    key, sep, raw = text.partition('=')
    if not sep or not key.strip():
        raise ConfigError(f'Override {text!r} is not of the form key=value.', {'--set': [text]})
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split('.'), value


def apply_overrides(payload, overrides):
    """Return a copy of ``payload`` with dotted ``key=value`` overrides applied."""
    payload = json.loads(json.dumps(payload))
    for text in overrides or ():
        path, value = parse_override(text)
        node = payload
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f'Override {text!r} descends into a non-section key.', {'--set': [text]})
            node = child
        node[path[-1]] = value
    return payload


def default_payload():
    return {
        'schema_version': settings.MAIN_VOS['CONFIG_SCHEMA_VERSION'],
        'data_root': str(settings.MAIN_VOS['DATA_ROOT']),
        'output_dir': str(settings.MAIN_VOS['OUTPUT_ROOT']),
        'workers': settings.MAIN_VOS['WORKERS'],
    }


def build_run_config(payload):
    from .serializers import RunConfigSerializer

    serializer = RunConfigSerializer(data=payload)
    if not serializer.is_valid():
        raise ConfigError(f'Invalid configuration: {json.dumps(serializer.errors)}', serializer.errors)
    return serializer.save()


def load_run_config(path=None, overrides=()):
    """
    Read a config file (or start from the defaults), apply overrides and validate.

    Keys missing from the file fall back to the process settings for
    ``data_root``, ``output_dir`` and ``workers``.
    """
    payload = default_payload()
    if path is not None:
        document = read_json(path)
        if not isinstance(document, dict):
            raise ConfigError(f'{path} must hold a JSON object.')
        payload.update(document)
    run_config = build_run_config(apply_overrides(payload, overrides))
    logger.debug('Loaded run config (seed %d) from %s', run_config.seed, path or 'defaults')
    return run_config


def write_effective_config(run_config, directory):
    path = Path(directory) / CONFIG_FILENAME
    write_json(run_config.as_dict(), path)
    return path
