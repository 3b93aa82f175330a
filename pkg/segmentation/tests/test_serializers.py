import json
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from segmentation.config import RunConfig, apply_overrides, load_run_config, parse_override, write_effective_config
from segmentation.exceptions import ConfigError
from segmentation.serializers import RunConfigSerializer, SceneSpecSerializer, SequenceMetaSerializer


class RunConfigSerializerTests(SimpleTestCase):
    """Test suite for run configuration validation."""

    def test_minimal_document_yields_defaults(self):
        """Test that a bare schema_version validates into the default run."""
        serializer = RunConfigSerializer(data={'schema_version': 1})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        run_config = serializer.save()
        self.assertIsInstance(run_config, RunConfig)
        self.assertEqual(run_config.train.lr0, 1e-4)
        self.assertEqual(run_config.network.num_channels, run_config.scene.num_channels)
        self.assertEqual((run_config.train.height, run_config.train.width), (64, 96))

    def test_missing_schema_version_fails_validation(self):
        """Test that every config must declare its schema version."""
        serializer = RunConfigSerializer(data={})
        self.assertFalse(serializer.is_valid())
        self.assertIn('schema_version', serializer.errors)

    def test_unsupported_schema_version_fails_validation(self):
        """Test that a newer schema is rejected rather than guessed at."""
        serializer = RunConfigSerializer(data={'schema_version': 2})
        self.assertFalse(serializer.is_valid())
        self.assertIn('schema_version', serializer.errors)

    def test_unknown_keys_fail_validation(self):
        """Test that misspelled keys are rejected at every level."""
        cases = [
            ({'schema_version': 1, 'sede': 3}, 'sede'),
            ({'schema_version': 1, 'scene': {'colour': 'red'}}, 'scene'),
            ({'schema_version': 1, 'train': {'cues': {'use_depth': True}}}, 'train'),
        ]
        for data, key in cases:
            with self.subTest(key=key):
                serializer = RunConfigSerializer(data=data)
                self.assertFalse(serializer.is_valid())
                self.assertIn(key, serializer.errors)

    def test_invalid_section_values_fail_validation(self):
        """Test that dataclass and field invariants surface as errors."""
        cases = [
            {'scene': {'height': 50}},
            {'scene': {'num_channels': 2, 'instance_count': 3}},
            {'curriculum': {'horizons': [[4, 1], [2, 1]]}},
            {'train': {'lr0': 0}},
            {'train': {'loss': 'focal'}},
            {'inference': {'tau': 0}},
            {'ablation': {'grid': 'everything'}},
        ]
        for section in cases:
            with self.subTest(section=section):
                serializer = RunConfigSerializer(data={'schema_version': 1, **section})
                self.assertFalse(serializer.is_valid())

    def test_seed_reaches_scene_and_training(self):
        """Test that the top-level seed drives both random streams."""
        run_config = RunConfigSerializer(data={'schema_version': 1, 'seed': 42})
        self.assertTrue(run_config.is_valid(), run_config.errors)
        saved = run_config.save()
        self.assertEqual(saved.scene.seed, 42)
        self.assertEqual(saved.train.seed, 42)

    def test_single_instance_training_defaults_network_to_one_channel(self):
        """Test that the single-instance baseline gets an N=1 network."""
        serializer = RunConfigSerializer(data={'schema_version': 1, 'train': {'instance_mode': 'single'}})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save().network.num_channels, 1)

    def test_network_channel_mismatch_fails_validation(self):
        """Test that the network must emit one map per scene channel."""
        serializer = RunConfigSerializer(data={'schema_version': 1, 'network': {'num_channels': 4}})
        self.assertFalse(serializer.is_valid())
        self.assertIn('network', serializer.errors)

    def test_training_resolution_must_match_scene(self):
        """Test that train.height/width cannot drift from the scene size."""
        serializer = RunConfigSerializer(data={'schema_version': 1, 'train': {'height': 128}})
        self.assertFalse(serializer.is_valid())
        self.assertIn('train', serializer.errors)

    def test_effective_config_validates_to_the_same_run(self):
        """Test that as_dict() output is accepted again and rebuilds an equal config."""
        serializer = RunConfigSerializer(data={
            'schema_version': 1, 'seed': 5,
            'scene': {'num_channels': 4, 'instances': [{'category': 'square', 'center': [20, 20], 'size': 6}]},
            'curriculum': {'horizons': [[2, 1], [6, 2]]},
        })
        self.assertTrue(serializer.is_valid(), serializer.errors)
        run_config = serializer.save()
        again = RunConfigSerializer(data=run_config.as_dict())
        self.assertTrue(again.is_valid(), again.errors)
        self.assertEqual(again.save(), run_config)

    def test_explicit_instances_become_instance_specs(self):
        """Test that nested instance lists build frozen dataclasses."""
        serializer = SceneSpecSerializer(data={'instances': [{'category': 'ring', 'center': [10, 12], 'size': 5,
                                                              'velocity': [1, 0]}]})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        spec = serializer.save()
        self.assertEqual(spec.instances[0].center, (10.0, 12.0))
        self.assertEqual(spec.instances[0].velocity, (1.0, 0.0))


class ConfigOverrideTests(SimpleTestCase):
    """Test suite for --set overrides and config files."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_override_values_are_read_as_json(self):
        """Test that numbers, lists and bare strings parse as expected."""
        self.assertEqual(parse_override('train.lr0=0.001'), (['train', 'lr0'], 0.001))
        self.assertEqual(parse_override('ablation.seeds=[1, 2]'), (['ablation', 'seeds'], [1, 2]))
        self.assertEqual(parse_override('train.loss=dice'), (['train', 'loss'], 'dice'))

    def test_malformed_override_raises_config_error(self):
        """Test that an override without '=' is rejected."""
        with self.assertRaises(ConfigError):
            parse_override('train.lr0')

    def test_override_into_scalar_raises_config_error(self):
        """Test that dotted keys cannot descend into a plain value."""
        with self.assertRaises(ConfigError):
            apply_overrides({'seed': 1}, ['seed.value=2'])

    def test_file_and_overrides_combine(self):
        """Test that overrides win over file values and are validated."""
        path = self.root / 'run.json'
        path.write_text(json.dumps({'schema_version': 1, 'train': {'lr0': 0.01, 'batch_size': 4}}))
        run_config = load_run_config(path, ['train.lr0=0.001'])
        self.assertEqual(run_config.train.lr0, 0.001)
        self.assertEqual(run_config.train.batch_size, 4)
        with self.assertRaises(ConfigError):
            load_run_config(path, ['train.batch_size=0'])

    def test_effective_config_file_reloads_equal(self):
        """Test that config.json written for a run loads back to the same config."""
        run_config = load_run_config(None, ['seed=9', f'output_dir={self.root}'])
        path = write_effective_config(run_config, self.root)
        self.assertEqual(load_run_config(path), run_config)

    def test_non_object_config_file_raises_config_error(self):
        """Test that a JSON list is not a config."""
        path = self.root / 'list.json'
        path.write_text('[1, 2]')
        with self.assertRaises(ConfigError):
            load_run_config(path)


class SequenceMetaSerializerTests(SimpleTestCase):
    """Test suite for meta.json validation."""

    def _meta(self, **changes):
        meta = {'sequence_id': 'scene000001', 'num_frames': 8, 'num_instances': 2, 'num_channels': 6,
                'height': 64, 'width': 96, 'categories': {'1': 'square', '2': 'circle'}}
        meta.update(changes)
        return meta

    def test_valid_meta_passes_validation(self):
        """Test that a well-formed meta document validates."""
        serializer = SequenceMetaSerializer(data=self._meta())
        self.assertTrue(serializer.is_valid(), serializer.errors)

    def test_invalid_meta_fails_validation(self):
        """Test that inconsistent metadata is rejected."""
        cases = [
            self._meta(num_instances=7),
            self._meta(categories={'a': 'square'}),
            self._meta(height=50),
            self._meta(num_frames=1),
            self._meta(fps=30),
        ]
        for meta in cases:
            with self.subTest(meta=meta):
                self.assertFalse(SequenceMetaSerializer(data=meta).is_valid())
