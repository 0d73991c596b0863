import io
import tempfile
import unittest
from pathlib import Path

import numpy as np

from acis.core import environment
from acis.core.environment import Scene, SceneConfig
from acis.core.exceptions import ContractViolation, SceneFormatError, SceneGenerationError, ShapeMismatch
from acis.core.scoring import potential


def single_instance_scene(mask: np.ndarray) -> Scene:
    return Scene(seed=0, image=mask.astype(np.float64), gt_masks=(mask,), full_areas=(int(mask.sum()),))


class TestSceneGeneration(unittest.TestCase):
    def test_is_deterministic(self):
        first = environment.generate_scene(11)
        second = environment.generate_scene(11)
        np.testing.assert_array_equal(first.image, second.image)
        self.assertEqual(first.instance_count, second.instance_count)
        for a, b in zip(first.gt_masks, second.gt_masks):
            np.testing.assert_array_equal(a, b)

    def test_instance_count_is_drawn_first(self):
        config = SceneConfig()
        for seed in range(20):
            drawn = int(np.random.default_rng(seed).integers(config.n_min, config.n_max + 1))
            self.assertEqual(drawn, environment.generate_scene(seed, config).instance_count)

    def test_masks_are_disjoint_and_visible(self):
        config = SceneConfig()
        for seed in range(200):
            scene = environment.generate_scene(seed, config)
            self.assertTrue(config.n_min <= scene.instance_count <= config.n_max)
            self.assertEqual((32, 32), scene.image.shape)
            self.assertTrue(np.all((scene.image >= 0.0) & (scene.image <= 1.0)))

            stacked = np.stack(scene.gt_masks).astype(int)
            self.assertLessEqual(stacked.sum(axis=0).max(), 1)
            self.assertTrue(all(mask.sum() >= environment.MIN_PIXELS for mask in scene.gt_masks))
            np.testing.assert_array_equal(stacked.sum(axis=0) > 0, scene.foreground)

    def test_no_overlap_keeps_full_shapes(self):
        config = SceneConfig(overlap_prob=0.0)
        for seed in range(30):
            scene = environment.generate_scene(seed, config)
            self.assertFalse(scene.occluded)
            self.assertEqual(scene.full_areas, tuple(int(mask.sum()) for mask in scene.gt_masks))

    def test_shape_kinds(self):
        config = SceneConfig(shape_kinds=("rectangle",), overlap_prob=0.0)
        scene = environment.generate_scene(3, config)
        for mask in scene.gt_masks:
            ys, xs = np.nonzero(mask)
            self.assertEqual(mask.sum(), (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1))

    def test_gives_up_when_shapes_do_not_fit(self):
        config = SceneConfig(
            height=16, width=16, n_min=10, n_max=10, overlap_prob=0.0, min_extent=6, max_extent=7, max_attempts=2
        )
        with self.assertRaises(SceneGenerationError):
            environment.generate_scene(0, config)

    def test_config_validation(self):
        for config in (
            SceneConfig(height=8),
            SceneConfig(n_min=3, n_max=2),
            SceneConfig(n_max=11),
            SceneConfig(shape_kinds=("hexagon",)),
            SceneConfig(overlap_prob=1.5),
        ):
            with self.assertRaises(ContractViolation):
                config.validate()

    def test_split_streams_are_independent(self):
        config = SceneConfig(height=16, width=16, n_min=1, n_max=3)
        train = environment.scene_split(config, 4, seed=0, stream=0)
        test = environment.scene_split(config, 4, seed=0, stream=2)
        self.assertEqual(environment.scene_seeds(0, 4, 0), [scene.seed for scene in train])
        self.assertNotEqual([scene.seed for scene in train], [scene.seed for scene in test])


class TestAngleQuantization(unittest.TestCase):
    def test_bins_around_the_centroid(self):
        mask = np.zeros((16, 16), dtype=bool)
        mask[5:8, 5:8] = True
        bins = environment.angle_quantization(single_instance_scene(mask)).angle_bins

        self.assertTrue(bins[0, 6, 7])
        self.assertTrue(bins[0, 6, 6])
        self.assertTrue(bins[1, 7, 7])
        self.assertTrue(bins[2, 7, 6])
        self.assertTrue(bins[4, 6, 5])
        self.assertTrue(bins[6, 5, 6])

    def test_rotation_shifts_bins_by_two(self):
        mask = np.zeros((16, 16), dtype=bool)
        mask[3:7, 4:10] = True
        mask[7, 4] = True
        bins = environment.angle_quantization(single_instance_scene(mask)).angle_bins
        rotated = environment.angle_quantization(single_instance_scene(np.rot90(mask, k=-1).copy())).angle_bins

        for k in range(environment.ANGLE_BINS):
            np.testing.assert_array_equal(np.rot90(bins[k], k=-1), rotated[(k + 2) % environment.ANGLE_BINS])

    def test_bins_partition_the_foreground(self):
        for seed in range(20):
            scene = environment.generate_scene(seed)
            aux = environment.angle_quantization(scene)
            counts = aux.angle_bins.sum(axis=0)
            np.testing.assert_array_equal(scene.foreground, aux.foreground)
            np.testing.assert_array_equal(aux.foreground.astype(int), counts)

    def test_aux_stack(self):
        aux = environment.angle_quantization(environment.generate_scene(0))
        stack = aux.stack()
        self.assertEqual((1 + environment.ANGLE_BINS, 32, 32), stack.shape)
        self.assertEqual(np.float64, stack.dtype)

    def test_corruption(self):
        aux = environment.angle_quantization(environment.generate_scene(0))
        rng = np.random.default_rng(0)
        self.assertIs(aux, environment.corrupt_aux(aux, 0.0, rng))

        flipped = environment.corrupt_aux(aux, 1.0, rng)
        np.testing.assert_array_equal(~aux.foreground, flipped.foreground)
        np.testing.assert_array_equal(~aux.angle_bins, flipped.angle_bins)


class TestTransitions(unittest.TestCase):
    def setUp(self):
        self.scene = environment.generate_scene(5)
        self.state = environment.empty_state(self.scene)

    def test_empty_state(self):
        self.assertEqual(0.0, self.state.accumulated.max())
        self.assertEqual((environment.STATE_CHANNELS, 32, 32), self.state.stack().shape)
        self.assertEqual((environment.STATE_CHANNELS - 1, 32, 32), self.state.context().shape)

    def test_zero_mask_changes_nothing(self):
        after = environment.transition(self.state, np.zeros((32, 32)))
        np.testing.assert_array_equal(self.state.accumulated, after.accumulated)
        self.assertIs(self.state.image, after.image)

    def test_transition_is_a_pixelwise_max(self):
        first = np.zeros((32, 32))
        first[0:4, 0:4] = 0.7
        second = np.zeros((32, 32))
        second[2:6, 2:6] = 0.4

        one_way = environment.transition(environment.transition(self.state, first), second)
        other_way = environment.transition(environment.transition(self.state, second), first)
        np.testing.assert_array_equal(one_way.accumulated, other_way.accumulated)
        self.assertEqual(0.7, one_way.accumulated[3, 3])
        self.assertEqual(0.4, one_way.accumulated[5, 5])

        again = environment.transition(one_way, first)
        np.testing.assert_array_equal(one_way.accumulated, again.accumulated)
        self.assertEqual(0.0, self.state.accumulated.max())

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            environment.transition(self.state, np.zeros((16, 16)))

    def test_initial_state_with_everything_remaining(self):
        n = self.scene.instance_count
        state, targets = environment.initial_state(self.scene, n, np.random.default_rng(0))
        self.assertEqual(0.0, state.accumulated.max())
        self.assertEqual(n, len(targets))

    def test_initial_state_with_one_remaining(self):
        n = self.scene.instance_count
        state, targets = environment.initial_state(self.scene, 1, np.random.default_rng(0))
        self.assertEqual(1, len(targets))
        np.testing.assert_array_equal(self.scene.foreground & ~targets[0], state.accumulated > 0)

        done = [mask for mask in self.scene.gt_masks if not any(mask is target for target in targets)]
        self.assertEqual(n - 1, len(done))
        self.assertAlmostEqual(n - 1, potential(done, list(self.scene.gt_masks)))

    def test_initial_state_range(self):
        for remaining in (0, self.scene.instance_count + 1):
            with self.assertRaises(ContractViolation):
                environment.initial_state(self.scene, remaining, np.random.default_rng(0))


class TestStatePyramid(unittest.TestCase):
    def setUp(self):
        self.state = environment.empty_state(environment.generate_scene(2))

    def test_single_scale_is_the_stack(self):
        pyramid = environment.build_state_pyramid(self.state, 1)
        self.assertEqual(1, pyramid.num_scales)
        np.testing.assert_array_equal(self.state.stack(), pyramid.levels[0])

    def test_scales_halve(self):
        pyramid = environment.build_state_pyramid(self.state, 4)
        self.assertEqual([32, 16, 8, 4], [level.shape[-1] for level in pyramid.levels])

    def test_downsampling_composes(self):
        pyramid = environment.build_state_pyramid(self.state, 3)
        stack = self.state.stack()
        direct = stack.reshape(environment.STATE_CHANNELS, 8, 4, 8, 4).mean(axis=(2, 4))
        np.testing.assert_allclose(direct, pyramid.levels[2], atol=1e-12)

    def test_constant_image_stays_constant(self):
        levels = environment.pyramid_levels(np.full((1, 16, 16), 0.3), 3)
        for level in levels:
            np.testing.assert_allclose(0.3, level.data)

    def test_indivisible_dims(self):
        with self.assertRaises(ContractViolation):
            environment.pyramid_levels(np.zeros((1, 20, 20)), 4)
        with self.assertRaises(ContractViolation):
            environment.pyramid_levels(np.zeros((1, 16, 16)), 0)


class TestSceneFiles(unittest.TestCase):
    def setUp(self):
        self.config = SceneConfig(height=16, width=16, n_min=1, n_max=3)
        self.scenes = environment.scene_split(self.config, 3, seed=4)

    def test_split_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = environment.save_split(Path(tmp) / "val.bin", self.scenes)
            loaded = environment.load_split(path, self.config)

        self.assertEqual([scene.seed for scene in self.scenes], [scene.seed for scene in loaded])
        self.assertEqual(environment.split_hash(self.scenes), environment.split_hash(loaded))

    def test_split_hash_depends_on_the_scenes(self):
        self.assertNotEqual(environment.split_hash(self.scenes), environment.split_hash(self.scenes[:2]))

    def test_rejects_a_different_config(self):
        buffer = io.BytesIO()
        environment.write_split(buffer, self.scenes)
        buffer.seek(0)
        with self.assertRaises(SceneFormatError):
            environment.read_split(buffer, SceneConfig(height=32, width=32, n_min=1, n_max=3))

    def test_rejects_bad_files(self):
        with self.assertRaises(SceneFormatError):
            environment.read_split(io.BytesIO(b"nothing"), self.config)

        buffer = io.BytesIO()
        environment.write_split(buffer, self.scenes)
        with self.assertRaises(SceneFormatError):
            environment.read_split(io.BytesIO(buffer.getvalue()[:-1]), self.config)

        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(SceneFormatError):
                environment.load_split(Path(tmp) / "missing.bin", self.config)

    def test_export_scene(self):
        scene = self.scenes[0]
        with tempfile.TemporaryDirectory() as tmp:
            paths = environment.export_scene(tmp, scene, 7)
            self.assertEqual(1 + scene.instance_count, len(paths))
            self.assertEqual("scene_0007.pgm", paths[0].name)

            pgm = paths[0].read_bytes()
            self.assertTrue(pgm.startswith(b"P5\n16 16\n255\n"))
            self.assertEqual(len(b"P5\n16 16\n255\n") + 256, len(pgm))

            pbm = paths[1].read_bytes()
            self.assertTrue(pbm.startswith(b"P4\n16 16\n"))
            self.assertEqual(len(b"P4\n16 16\n") + 32, len(pbm))
