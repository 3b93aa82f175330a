import numpy as np
import torch
from django.test import SimpleTestCase

from segmentation.cues import (
    AttentionStack,
    CueConfig,
    ModelInput,
    assemble_input,
    box_map,
    box_noise,
    encode_flow,
    instance_shuffle,
    inverse_permutation,
    lta_from_boxes,
    morph_perturb,
    perturb_sta,
    raw_flow,
    scaled_kernel_range,
    sta_from_prediction,
    unit_optical_flow,
    warp,
    warp_tensor,
)
from segmentation.evaluation import jaccard
from segmentation.exceptions import DataValidationError
from segmentation.models import Box, BoxTube, FlowField, InstanceMaskSet, box_iou
from segmentation.scenes import InstanceSpec, MotionModel
from segmentation.tests.factories import SceneSpecFactory, StaticSceneSpecFactory, VideoSequenceFactory


class FlowEncodingTests(SimpleTestCase):
    """Test suite for unit optical flow and raw flow encodings."""

    def test_unit_flow_has_unit_directions_and_normalized_magnitude(self):
        """Test that moving pixels get unit vectors and the largest motion has magnitude 1."""
        vectors = np.random.default_rng(0).normal(0, 3, (16, 16, 2))
        vectors[0, 0] = 0.0
        encoded = unit_optical_flow(FlowField(vectors))
        norms = np.hypot(encoded[..., 0], encoded[..., 1])
        np.testing.assert_allclose(norms[1:], 1.0, atol=1e-5)
        self.assertEqual(norms[0, 0], 0.0)
        self.assertAlmostEqual(float(encoded[..., 2].max()), 1.0, places=6)
        self.assertGreaterEqual(float(encoded[..., 2].min()), 0.0)

    def test_unit_flow_invariants_hold_over_random_fields(self):
        """Test unit directions, magnitudes in [0, 1] and a peak of 1 on 1000 random fields."""
        rng = np.random.default_rng(11)
        for _ in range(1000):
            height, width = rng.integers(2, 12, size=2)
            vectors = rng.normal(0.0, rng.uniform(0.1, 20.0), (height, width, 2))
            vectors[rng.random((height, width)) < 0.2] = 0.0
            encoded = unit_optical_flow(FlowField(vectors))
            norms = np.hypot(encoded[..., 0], encoded[..., 1])
            moving = np.hypot(vectors[..., 0], vectors[..., 1]) > 0
            np.testing.assert_allclose(norms[moving], 1.0, atol=1e-5)
            self.assertFalse(encoded[~moving].any())
            self.assertTrue(np.all((encoded[..., 2] >= 0.0) & (encoded[..., 2] <= 1.0 + 1e-6)))
            if moving.any():
                self.assertAlmostEqual(float(encoded[..., 2].max()), 1.0, places=6)

    def test_zero_flow_encodes_to_zeros(self):
        """Test that a still frame has no direction and no magnitude."""
        encoded = unit_optical_flow(FlowField(np.zeros((8, 8, 2))))
        self.assertFalse(encoded.any())

    def test_raw_flow_is_scaled_and_padded(self):
        """Test that the raw encoding divides by a fixed scale and pads a zero channel."""
        field = FlowField(np.full((8, 8, 2), 4.0))
        encoded = raw_flow(field, scale=8.0)
        np.testing.assert_allclose(encoded[..., :2], 0.5)
        self.assertFalse(encoded[..., 2].any())
        np.testing.assert_array_equal(encode_flow(field, 'raw'), raw_flow(field))


class WarpTests(SimpleTestCase):
    """Test suite for backward bilinear warping."""

    def test_zero_flow_is_identity(self):
        """Test that warping by zero flow returns the source."""
        source = np.random.default_rng(1).random((16, 24)).astype(np.float32)
        np.testing.assert_array_equal(warp(source, FlowField(np.zeros((16, 24, 2)))), source)

    def test_integer_shift_moves_content_and_zero_fills(self):
        """Test that a +2 px horizontal flow reads two columns to the right."""
        source = np.random.default_rng(2).random((16, 24)).astype(np.float32)
        flow = np.zeros((16, 24, 2))
        flow[..., 0] = 2.0
        expected = np.zeros_like(source)
        expected[:, :-2] = source[:, 2:]
        np.testing.assert_allclose(warp(source, FlowField(flow)), expected, atol=1e-6)

    def test_warp_is_linear_in_the_source(self):
        """Test that warping a weighted sum equals the weighted sum of warps."""
        rng = np.random.default_rng(4)
        for _ in range(10):
            first = torch.from_numpy(rng.random((2, 3, 12, 20)))
            second = torch.from_numpy(rng.random((2, 3, 12, 20)))
            flow = torch.from_numpy(rng.normal(0.0, 3.0, (2, 2, 12, 20)))
            a, b = rng.normal(size=2)
            torch.testing.assert_close(
                warp_tensor(a * first + b * second, flow),
                a * warp_tensor(first, flow) + b * warp_tensor(second, flow),
                rtol=0.0, atol=1e-12,
            )

    def test_mismatched_flow_size_raises_error(self):
        """Test that a flow must cover the warped map."""
        with self.assertRaises(DataValidationError):
            warp(np.zeros((16, 16)), FlowField(np.zeros((8, 8, 2))))


class ShortTermAttentionTests(SimpleTestCase):
    """Test suite for STA maps warped from previous masks."""

    def test_sta_tracks_ground_truth_with_exact_flow(self):
        """Test that warped previous masks overlap the current masks closely."""
        spec = SceneSpecFactory(
            height=64, width=96, num_frames=6, motion=MotionModel(0.0, 0.0, 0.0),
            instances=(
                InstanceSpec('square', (22.0, 32.0), 15.0, velocity=(1.0, 0.0)),
                InstanceSpec('circle', (66.0, 32.0), 15.0, velocity=(1.0, 0.0)),
            ),
        )
        seq = VideoSequenceFactory(spec=spec)
        scores = []
        for t in range(1, seq.num_frames):
            sta = sta_from_prediction(seq.gt_masks[t - 1], seq.backward_flow(t))
            for channel in range(seq.active_count):
                scores.append(jaccard(sta[channel], seq.gt_masks[t].masks[channel]))
        self.assertGreaterEqual(float(np.mean(scores)), 0.95)

    def test_sta_tracks_random_unit_speed_scenes(self):
        """Test mean STA IoU of at least 0.95 over random occlusion-free 64x96 scenes."""
        rng = np.random.default_rng(21)
        scores = []
        for seed in range(5):
            instances = tuple(
                InstanceSpec(
                    str(rng.choice(['square', 'circle'])), (x, 32.0), float(rng.uniform(8.0, 11.0)),
                    velocity=(0.0, float(rng.choice([-1.0, 1.0]))),
                )
                for x in (18.0, 48.0, 78.0)
            )
            spec = SceneSpecFactory(
                seed=seed, height=64, width=96, num_frames=8, instance_count=3,
                motion=MotionModel(0.0, 0.0, 0.0), instances=instances,
            )
            seq = VideoSequenceFactory(spec=spec)
            for t in range(1, seq.num_frames):
                sta = sta_from_prediction(seq.gt_masks[t - 1], seq.backward_flow(t))
                for channel in range(seq.active_count):
                    scores.append(jaccard(sta[channel], seq.gt_masks[t].masks[channel]))
        self.assertEqual(len(scores), 5 * 7 * 3)
        self.assertGreaterEqual(float(np.mean(scores)), 0.95)

    def test_inactive_channels_stay_zero(self):
        """Test that STA only fills channels that hold an instance."""
        seq = VideoSequenceFactory(spec=StaticSceneSpecFactory(num_channels=4))
        sta = sta_from_prediction(seq.gt_masks[0], seq.backward_flow(1))
        self.assertFalse(sta[2:].any())
        self.assertLessEqual(float(sta.max()), 1.0)


class LongTermAttentionTests(SimpleTestCase):
    """Test suite for box maps and tracker drift."""

    def test_box_map_tests_pixel_centres(self):
        """Test that a pixel is inside when its centre lies in [x0, x1) x [y0, y1)."""
        canvas = box_map(Box(1.0, 1.0, 3.0, 4.0), 16, 16)
        self.assertEqual(canvas.sum(), 2 * 3)
        self.assertEqual(canvas[1:4, 1:3].min(), 1.0)
        self.assertFalse(box_map(Box(0.6, 0.0, 4.0, 4.0), 16, 16)[:, 0].any())
        self.assertFalse(box_map(None, 16, 16).any())

    def test_lta_binds_instance_to_channel(self):
        """Test that instance k fills channel k - 1 and absent boxes leave zeros."""
        tubes = BoxTube([{2: Box(0, 0, 4, 4)}], width=16, height=16)
        lta = lta_from_boxes(tubes, 0, 3, [1, 2])
        self.assertFalse(lta[0].any())
        self.assertEqual(lta[1].sum(), 16)
        self.assertFalse(lta[2].any())

    def _tube(self, frames=20):
        return BoxTube([{1: Box(180.0, 100.0, 240.0, 150.0)} for _ in range(frames)], width=416, height=256)

    def test_zero_noise_keeps_tube(self):
        """Test that no drift and no dropout is the identity."""
        tube = self._tube()
        noisy = box_noise(tube, np.random.default_rng(0), drift_rate=0.0, dropout=0.0)
        self.assertEqual(noisy.boxes, tube.boxes)

    def test_full_dropout_removes_every_box(self):
        """Test that dropout probability 1 hides every box."""
        noisy = box_noise(self._tube(), np.random.default_rng(0), drift_rate=0.05, dropout=1.0)
        self.assertTrue(all(not frame for frame in noisy.boxes))

    def test_frame_zero_carries_no_drift(self):
        """Test that the first box is never moved."""
        tube = self._tube()
        noisy = box_noise(tube, np.random.default_rng(4), drift_rate=0.2, dropout=0.0)
        self.assertEqual(noisy.boxes[0], tube.boxes[0])

    def test_noise_on_prefix_matches_truncated_tube(self):
        """Test that a truncated tube sees the same noise on its frames."""
        tube = self._tube()
        full = box_noise(tube, np.random.default_rng(9), 0.05, 0.02)
        prefix = box_noise(tube.truncated(5), np.random.default_rng(9), 0.05, 0.02)
        self.assertEqual(prefix.boxes, full.boxes[:5])

    def test_late_entering_instance_leaves_earlier_noise_alone(self):
        """Test that an instance first seen at frame 5 does not change the noise on frames 0-2."""
        frames = [{1: Box(10.0, 10.0, 20.0, 20.0)} for _ in range(8)]
        for frame in frames[5:]:
            frame[2] = Box(30.0, 5.0, 40.0, 15.0)
        tube = BoxTube(frames, width=64, height=32)
        for dropout in (0.0, 0.3):
            with self.subTest(dropout=dropout):
                full = box_noise(tube, np.random.default_rng(9), 0.05, dropout)
                prefix = box_noise(tube.truncated(3), np.random.default_rng(9), 0.05, dropout)
                self.assertEqual(prefix.boxes, full.boxes[:3])

    def test_drift_lowers_overlap_over_time(self):
        """Test that mean IoU with the clean box decreases with the frame index."""
        tube = self._tube()
        ious = np.zeros((200, len(tube)))
        for seed in range(200):
            noisy = box_noise(tube, np.random.default_rng(seed), 0.05, 0.0)
            ious[seed] = [box_iou(tube.box(t, 1), noisy.box(t, 1)) for t in range(len(tube))]
        mean = ious.mean(axis=0)
        self.assertEqual(mean[0], 1.0)
        self.assertGreater(mean[1], mean[5])
        self.assertGreater(mean[5], mean[10])
        self.assertGreater(mean[10], mean[19])

    def test_invalid_rates_raise_error(self):
        """Test that drift and dropout are probabilities."""
        with self.assertRaises(DataValidationError):
            box_noise(self._tube(), np.random.default_rng(0), drift_rate=-0.1)


class PerturbationTests(SimpleTestCase):
    """Test suite for perturbed ground-truth STA."""

    def setUp(self):
        self.mask = np.zeros((64, 96), dtype=np.float32)
        self.mask[20:40, 30:60] = 1.0

    def test_kernel_range_scales_with_resolution(self):
        """Test that the 6..30 px range is kept at 256x416 and shrinks below."""
        self.assertEqual(scaled_kernel_range(256, 416), (6, 30))
        self.assertEqual(scaled_kernel_range(64, 96), (2, 8))

    def test_neutral_perturbation_is_identity(self):
        """Test that a 1 px kernel, unit scale and no shift reproduce the mask."""
        out = perturb_sta(self.mask, np.random.default_rng(0), kernel_range=(1, 1),
                          scale_range=(1.0, 1.0), max_shift=0.0)
        np.testing.assert_array_equal(out, self.mask)

    def test_perturbed_mask_is_binary_and_same_shape(self):
        """Test that perturbations keep a binary mask of the input size."""
        rng = np.random.default_rng(5)
        for _ in range(20):
            out = perturb_sta(self.mask, rng, {-1: self.mask, 1: None})
            self.assertEqual(out.shape, self.mask.shape)
            self.assertTrue(np.all((out == 0) | (out == 1)))


    def test_kernel_three_turns_a_pixel_into_a_block(self):
        """Test that a 3 px dilation grows a single pixel into a 3x3 block and erosion removes it."""
        pixel = np.zeros((9, 9), dtype=np.float32)
        pixel[4, 4] = 1.0
        block = np.zeros_like(pixel)
        block[3:6, 3:6] = 1.0
        np.testing.assert_array_equal(morph_perturb(pixel, 3, dilate=True), block)
        self.assertFalse(morph_perturb(pixel, 3, dilate=False).any())
        rng = np.random.default_rng(8)
        outcomes = set()
        for _ in range(20):
            out = perturb_sta(pixel, rng, kernel_range=(3, 3), scale_range=(1.0, 1.0), max_shift=0.0)
            self.assertTrue(np.array_equal(out, block) or not out.any())
            outcomes.add(int(out.sum()))
        self.assertEqual(outcomes, {0, 9})


class InstanceShuffleTests(SimpleTestCase):
    """Test suite for the shared channel permutation."""

    def test_attention_and_targets_move_together(self):
        """Test that slot i holds canonical channel perm[i] in every stack."""
        masks = np.zeros((4, 16, 16), dtype=np.float32)
        masks[0, 0:4, 0:4] = 1
        masks[1, 8:12, 8:12] = 1
        targets = InstanceMaskSet(masks, 2)
        attn = AttentionStack(masks * 1.0, masks * 0.5)
        rng = np.random.default_rng(3)
        for _ in range(10):
            shuffled_attn, shuffled_targets, perm = instance_shuffle(attn, targets, rng)
            for slot, canonical in enumerate(perm):
                np.testing.assert_array_equal(shuffled_attn.lta[slot], attn.lta[canonical])
                np.testing.assert_array_equal(shuffled_attn.sta[slot], attn.sta[canonical])
                np.testing.assert_array_equal(shuffled_targets.masks[slot], masks[canonical])
            self.assertEqual(shuffled_targets.active_flags().tolist(), [p < 2 for p in perm])

    def test_inverse_permutation_restores_every_stack(self):
        """Test that shuffling and then applying the inverse returns the inputs bit for bit."""
        rng = np.random.default_rng(6)
        masks = (rng.random((5, 8, 8)) < 0.3).astype(np.float32)
        masks[3:] = 0.0
        targets = InstanceMaskSet(masks, 3)
        attn = AttentionStack(rng.random((5, 8, 8)).astype(np.float32), rng.random((5, 8, 8)).astype(np.float32))
        for _ in range(10):
            shuffled_attn, shuffled_targets, perm = instance_shuffle(attn, targets, rng)
            inverse = inverse_permutation(perm)
            restored_attn, restored_targets, _ = instance_shuffle(shuffled_attn, shuffled_targets, rng, inverse)
            np.testing.assert_array_equal(restored_attn.lta, attn.lta)
            np.testing.assert_array_equal(restored_attn.sta, attn.sta)
            np.testing.assert_array_equal(restored_targets.masks, targets.masks)
            np.testing.assert_array_equal(restored_targets.active_flags(), targets.active_flags())

    def test_permutations_are_uniform(self):
        """Test that over 10^4 draws with N=6 every slot gets every channel 1/6 of the time."""
        attn = AttentionStack(np.zeros((6, 2, 2)), np.zeros((6, 2, 2)))
        targets = InstanceMaskSet(np.zeros((6, 2, 2), dtype=np.float32), 0)
        rng = np.random.default_rng(12)
        counts = np.zeros((6, 6))
        draws = 10000
        for _ in range(draws):
            _, _, perm = instance_shuffle(attn, targets, rng)
            counts[np.arange(6), perm] += 1
        np.testing.assert_allclose(counts / draws, 1.0 / 6.0, atol=0.02)

    def test_channel_count_mismatch_raises_error(self):
        """Test that attention and targets must share N."""
        attn = AttentionStack(np.zeros((3, 16, 16)), np.zeros((3, 16, 16)))
        with self.assertRaises(DataValidationError):
            instance_shuffle(attn, InstanceMaskSet(np.zeros((2, 16, 16)), 0), np.random.default_rng(0))


class AssembleInputTests(SimpleTestCase):
    """Test suite for the fixed input channel layout."""

    def setUp(self):
        self.pixels = np.full((16, 32, 3), 0.5, dtype=np.float32)
        self.flow = np.ones((16, 32, 3), dtype=np.float32)
        self.lta = np.ones((2, 16, 32), dtype=np.float32)
        self.sta = np.full((2, 16, 32), 0.25, dtype=np.float32)

    def test_channel_order_is_rgb_flow_lta_sta(self):
        """Test that the input is [RGB | flow | LTA | STA] with 6 + 2N channels."""
        model_input = assemble_input(self.pixels, self.flow, self.lta, self.sta)
        self.assertEqual(model_input.tensor.shape, (10, 16, 32))
        self.assertEqual(model_input.num_channels, 2)
        np.testing.assert_array_equal(model_input.rgb, 0.5)
        np.testing.assert_array_equal(model_input.flow, 1.0)
        np.testing.assert_array_equal(model_input.lta, 1.0)
        np.testing.assert_array_equal(model_input.sta, 0.25)

    def test_disabled_cues_are_zero_filled(self):
        """Test that switching off a cue group keeps its channels as zeros."""
        cues = CueConfig(use_flow=False, use_lta=True, use_sta=False)
        model_input = assemble_input(self.pixels, self.flow, self.lta, self.sta, cues)
        self.assertEqual(model_input.tensor.shape, (10, 16, 32))
        self.assertFalse(model_input.flow.any())
        self.assertFalse(model_input.sta.any())
        np.testing.assert_array_equal(model_input.lta, 1.0)

    def test_mismatched_shapes_raise_error(self):
        """Test that cue maps must match the frame size."""
        with self.assertRaises(DataValidationError):
            assemble_input(self.pixels, self.flow, self.lta, np.zeros((3, 16, 32)))
        with self.assertRaises(DataValidationError):
            ModelInput(np.zeros((7, 16, 16)))
        with self.assertRaises(DataValidationError):
            CueConfig(flow_encoding='hsv')
