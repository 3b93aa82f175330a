from django.conf import settings
from rest_framework import serializers

from .ablation import GRID_NAMES, AblationConfig
from .cues import CueConfig
from .evaluation import EvaluationConfig
from .exceptions import DataValidationError
from .inference import InferenceConfig
from .losses import LOSS_NAMES, LossConfig
from .network import NetworkConfig
from .scenes import SHAPE_FAMILIES, InstanceSpec, MotionModel, SceneSpec
from .training import CurriculumSchedule, TrainConfig


class StrictSerializerMixin:
    """
    Reject keys the serializer does not declare.

    A misspelled key in a config file would otherwise be dropped silently and
    the run would use the default instead.
    """

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown field.'] for key in unknown})
        return super().to_internal_value(data)


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


class ConfigSectionSerializer(StrictSerializerMixin, serializers.Serializer):
    """
    Base serializer for one config section.

    Every field is optional; missing keys take the dataclass defaults.
    ``create()`` returns the section's frozen dataclass.
    """

    config_class = None

    def to_config(self, attrs, **extra):
        values = {}
        for key, value in attrs.items():
            field = self.fields[key]
            if isinstance(field, serializers.ListSerializer):
                value = tuple(field.child.to_config(item) for item in value)
            elif isinstance(field, ConfigSectionSerializer):
                value = field.to_config(value)
            else:
                value = _freeze(value)
            values[key] = value
        values.update(extra)
        return self.config_class(**values)

    def validate(self, attrs):
        """Run the dataclass invariants so cross-field errors surface as validation errors."""
        try:
            self.to_config(attrs)
        except DataValidationError as exc:
            raise serializers.ValidationError(str(exc))
        return attrs

    def create(self, validated_data):
        return self.to_config(validated_data)


def _pair(child, **kwargs):
    return serializers.ListField(child=child, min_length=2, max_length=2, required=False, **kwargs)


class MotionModelSerializer(ConfigSectionSerializer):
    config_class = MotionModel

    max_speed = serializers.FloatField(min_value=0.0, required=False)
    max_rotation = serializers.FloatField(min_value=0.0, required=False)
    max_scale_rate = serializers.FloatField(min_value=0.0, required=False)
    camera_pan = _pair(serializers.FloatField())


class InstanceSpecSerializer(ConfigSectionSerializer):
    """An explicitly placed object."""

    config_class = InstanceSpec

    category = serializers.ChoiceField(choices=sorted(SHAPE_FAMILIES))
    center = serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2)
    size = serializers.FloatField(min_value=0.0)
    velocity = _pair(serializers.FloatField())
    angle = serializers.FloatField(required=False)
    rotation_rate = serializers.FloatField(required=False)
    scale_rate = serializers.FloatField(required=False)


class SceneSpecSerializer(ConfigSectionSerializer):
    """
    Serializer for the synthetic scene generator section.

    The seed is not part of the section; it comes from the run's top-level seed.
    """

    config_class = SceneSpec

    num_frames = serializers.IntegerField(min_value=2, required=False)
    height = serializers.IntegerField(min_value=16, required=False)
    width = serializers.IntegerField(min_value=16, required=False)
    num_channels = serializers.IntegerField(min_value=1, required=False)
    instance_count_distribution = serializers.ListField(
        child=serializers.FloatField(min_value=0.0), min_length=1, required=False
    )
    instance_count = serializers.IntegerField(min_value=1, allow_null=True, required=False)
    shape_catalog = serializers.ListField(
        child=serializers.ChoiceField(choices=sorted(SHAPE_FAMILIES)), min_length=1, required=False
    )
    unseen_categories = serializers.ListField(
        child=serializers.ChoiceField(choices=sorted(SHAPE_FAMILIES)), required=False
    )
    motion = MotionModelSerializer(required=False)
    occluder_probability = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    size_range = _pair(serializers.FloatField(min_value=0.0))
    instances = InstanceSpecSerializer(many=True, required=False)

    def validate_height(self, value):
        """Validate the decoder stride requirement."""
        if value % 16:
            raise serializers.ValidationError('Height must be divisible by 16.')
        return value

    def validate_width(self, value):
        """Validate the decoder stride requirement."""
        if value % 16:
            raise serializers.ValidationError('Width must be divisible by 16.')
        return value


class LossConfigSerializer(ConfigSectionSerializer):
    config_class = LossConfig

    eps_dice = serializers.FloatField(required=False)
    include_inactive_channels = serializers.BooleanField(required=False)
    overlap_term_enabled = serializers.BooleanField(required=False)

    def validate_eps_dice(self, value):
        if value <= 0:
            raise serializers.ValidationError('eps_dice must be positive.')
        return value


class NetworkConfigSerializer(ConfigSectionSerializer):
    config_class = NetworkConfig

    num_channels = serializers.IntegerField(min_value=1, required=False)
    stage_channels = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=4, max_length=4, required=False
    )
    fpn_width = serializers.IntegerField(min_value=1, required=False)
    dilations = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=3, max_length=3, required=False
    )
    separable = serializers.BooleanField(required=False)
    dilated = serializers.BooleanField(required=False)
    batch_norm = serializers.BooleanField(required=False)
    encoder_weights = serializers.CharField(allow_null=True, required=False)


class CueConfigSerializer(ConfigSectionSerializer):
    config_class = CueConfig

    use_flow = serializers.BooleanField(required=False)
    use_lta = serializers.BooleanField(required=False)
    use_sta = serializers.BooleanField(required=False)
    flow_encoding = serializers.ChoiceField(choices=['uof', 'raw'], required=False)


class TrainConfigSerializer(ConfigSectionSerializer):
    """
    Serializer for the optimization section.

    Resolution defaults to the scene size; the seed comes from the run.
    """

    config_class = TrainConfig

    lr0 = serializers.FloatField(required=False)
    anneal_gamma = serializers.FloatField(required=False)
    anneal_every = serializers.IntegerField(min_value=1, required=False)
    batch_size = serializers.IntegerField(min_value=1, required=False)
    height = serializers.IntegerField(min_value=16, required=False)
    width = serializers.IntegerField(min_value=16, required=False)
    loss = serializers.ChoiceField(choices=list(LOSS_NAMES), required=False)
    max_iterations = serializers.IntegerField(min_value=1, required=False)
    patience = serializers.IntegerField(min_value=1, allow_null=True, required=False)
    validate_every = serializers.IntegerField(min_value=1, required=False)
    log_every = serializers.IntegerField(min_value=1, required=False)
    grad_clip = serializers.FloatField(allow_null=True, required=False)
    backward_flow_probability = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    instance_shuffle = serializers.BooleanField(required=False)
    instance_mode = serializers.ChoiceField(choices=['multi', 'single'], required=False)
    betas = _pair(serializers.FloatField(min_value=0.0, max_value=1.0))
    adam_eps = serializers.FloatField(min_value=0.0, required=False)
    scale_range = _pair(serializers.FloatField(min_value=0.0))
    cues = CueConfigSerializer(required=False)

    def validate_lr0(self, value):
        if value <= 0:
            raise serializers.ValidationError('lr0 must be positive.')
        return value

    def validate_anneal_gamma(self, value):
        if not 0.0 < value <= 1.0:
            raise serializers.ValidationError('anneal_gamma must lie in (0, 1].')
        return value


class CurriculumScheduleSerializer(ConfigSectionSerializer):
    config_class = CurriculumSchedule

    phase1_epochs = serializers.IntegerField(min_value=0, required=False)
    phase2_epochs = serializers.IntegerField(min_value=0, required=False)
    horizons = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=2, max_length=2),
        required=False,
    )
    phase3_enabled = serializers.BooleanField(required=False)
    rollout_final_horizon = serializers.BooleanField(required=False)
    drift_rate = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    dropout = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)

    def validate_horizons(self, value):
        """Validate that frame horizons strictly increase."""
        limits = [h for h, _ in value]
        if any(b <= a for a, b in zip(limits, limits[1:])):
            raise serializers.ValidationError('Horizons must be strictly increasing.')
        return value


class InferenceConfigSerializer(ConfigSectionSerializer):
    config_class = InferenceConfig

    tau = serializers.FloatField(required=False)
    flow_provider = serializers.ChoiceField(choices=['gt', 'noisy'], required=False)
    tube_provider = serializers.ChoiceField(choices=['gt', 'noisy', 'tracker'], required=False)
    flow_noise_std = serializers.FloatField(min_value=0.0, required=False)
    drift_rate = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    dropout = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    instance_mode = serializers.ChoiceField(choices=['multi', 'single'], required=False)

    def validate_tau(self, value):
        if not 0.0 < value <= 1.0:
            raise serializers.ValidationError('tau must lie in (0, 1].')
        return value


class EvaluationConfigSerializer(ConfigSectionSerializer):
    config_class = EvaluationConfig

    boundary_tolerance = serializers.IntegerField(min_value=0, allow_null=True, required=False)
    compute_boundary = serializers.BooleanField(required=False)
    plot_curves = serializers.BooleanField(required=False)


class AblationConfigSerializer(ConfigSectionSerializer):
    config_class = AblationConfig

    grid = serializers.ChoiceField(choices=list(GRID_NAMES), required=False)
    seeds = serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=1, required=False)
    min_gap = serializers.FloatField(min_value=0.0, required=False)


class RunConfigSerializer(StrictSerializerMixin, serializers.Serializer):
    """
    Serializer for a whole experiment configuration file.

    Sections may be omitted. Cross-section defaults: the training resolution
    follows the scene size, the network channel count follows the scene's N
    (1 for single-instance training), and the top-level seed seeds the scene
    generator and the training loop.
    """

    SECTIONS = {
        'scene': SceneSpecSerializer,
        'loss': LossConfigSerializer,
        'network': NetworkConfigSerializer,
        'train': TrainConfigSerializer,
        'curriculum': CurriculumScheduleSerializer,
        'inference': InferenceConfigSerializer,
        'evaluation': EvaluationConfigSerializer,
        'ablation': AblationConfigSerializer,
    }

    schema_version = serializers.IntegerField()
    seed = serializers.IntegerField(min_value=0, required=False, default=0)
    workers = serializers.IntegerField(min_value=1, required=False, default=1)
    data_root = serializers.CharField(required=False, default='data')
    output_dir = serializers.CharField(required=False, default='runs')
    num_scenes = serializers.IntegerField(min_value=1, required=False, default=100)
    train_fraction = serializers.FloatField(min_value=0.0, max_value=1.0, required=False, default=0.75)
    scene = SceneSpecSerializer(required=False)
    loss = LossConfigSerializer(required=False)
    network = NetworkConfigSerializer(required=False)
    train = TrainConfigSerializer(required=False)
    curriculum = CurriculumScheduleSerializer(required=False)
    inference = InferenceConfigSerializer(required=False)
    evaluation = EvaluationConfigSerializer(required=False)
    ablation = AblationConfigSerializer(required=False)

    def validate_schema_version(self, value):
        """Validate that the file targets the schema this code reads."""
        expected = settings.MAIN_VOS['CONFIG_SCHEMA_VERSION']
        if value != expected:
            raise serializers.ValidationError(f'Unsupported schema_version {value}; expected {expected}.')
        return value

    def to_config(self, attrs):
        from .config import RunConfig

        seed = attrs.get('seed', 0)
        scene = self.fields['scene'].to_config(attrs.get('scene', {}), seed=seed)
        train_attrs = dict(attrs.get('train', {}))
        train_attrs.setdefault('height', scene.height)
        train_attrs.setdefault('width', scene.width)
        train = self.fields['train'].to_config(train_attrs, seed=seed)
        network_attrs = dict(attrs.get('network', {}))
        network_attrs.setdefault('num_channels', 1 if train.instance_mode == 'single' else scene.num_channels)
        sections = {
            name: self.fields[name].to_config(attrs.get(name, {}))
            for name in ('loss', 'curriculum', 'inference', 'evaluation', 'ablation')
        }
        top_level = {k: attrs[k] for k in ('schema_version', 'workers', 'data_root', 'output_dir',
                                           'num_scenes', 'train_fraction') if k in attrs}
        return RunConfig(
            seed=seed, scene=scene, train=train,
            network=self.fields['network'].to_config(network_attrs), **sections, **top_level,
        )

    def validate(self, attrs):
        """Validate the cross-section invariants of the assembled run."""
        try:
            run_config = self.to_config(attrs)
        except DataValidationError as exc:
            raise serializers.ValidationError(str(exc))
        if (run_config.train.height, run_config.train.width) != (run_config.scene.height, run_config.scene.width):
            raise serializers.ValidationError({'train': 'Training resolution must match the scene size.'})
        expected = 1 if run_config.train.instance_mode == 'single' else run_config.scene.num_channels
        if run_config.network.num_channels != expected:
            raise serializers.ValidationError(
                {'network': f'num_channels must be {expected} for {run_config.train.instance_mode}-instance training.'}
            )
        return attrs

    def create(self, validated_data):
        return self.to_config(validated_data)


class SequenceMetaSerializer(StrictSerializerMixin, serializers.Serializer):
    """
    Serializer for a sequence's ``meta.json``.
    """

    sequence_id = serializers.CharField()
    num_frames = serializers.IntegerField(min_value=2)
    num_instances = serializers.IntegerField(min_value=0)
    num_channels = serializers.IntegerField(min_value=1, required=False)
    height = serializers.IntegerField(min_value=16)
    width = serializers.IntegerField(min_value=16)
    categories = serializers.DictField(child=serializers.CharField(), required=False, default=dict)

    def validate_categories(self, value):
        """Validate that category keys are instance ids."""
        for key in value:
            if not str(key).isdigit() or int(key) < 1:
                raise serializers.ValidationError(f'Category key {key!r} is not a positive instance id.')
        return value

    def validate(self, attrs):
        """Validate the instance count against the channel count and frame size."""
        channels = attrs.get('num_channels')
        if channels is not None and attrs['num_instances'] > channels:
            raise serializers.ValidationError(
                {"num_instances": f"{attrs['num_instances']} instances exceed num_channels={channels}."}
            )
        if attrs['height'] % 16 or attrs['width'] % 16:
            raise serializers.ValidationError('Frame size must be divisible by 16.')
        return attrs
