"""Synthetic scenes, analytic renderer, dataset, pose oracle, and metrics."""

import numpy as np
import pytest

from fieldgan import camera as cam
from fieldgan import synthdata as syn
from fieldgan.conditions import ToyEncoder, encode_condition


class TestSampleScene:
    def test_same_seed_identical(self):
        a = syn.sample_scene(np.random.default_rng(42))
        b = syn.sample_scene(np.random.default_rng(42))
        assert len(a.primitives) == len(b.primitives)
        for pa, pb in zip(a.primitives, b.primitives):
            np.testing.assert_array_equal(pa.center, pb.center)
            np.testing.assert_array_equal(pa.albedo, pb.albedo)
        np.testing.assert_array_equal(a.background, b.background)

    def test_centers_within_half_radius(self):
        for seed in range(50):
            scene = syn.sample_scene(np.random.default_rng(seed))
            for prim in scene.primitives:
                assert np.linalg.norm(prim.center) <= 0.5

    def test_primitives_inside_unit_ball(self):
        for seed in range(50):
            scene = syn.sample_scene(np.random.default_rng(seed))
            for prim in scene.primitives:
                assert np.linalg.norm(prim.center) + prim.radii.max() <= 1.0

    def test_seeds_give_distinct_albedos(self):
        base = syn.sample_scene(np.random.default_rng(0)).primitives[0].albedo
        differing = sum(
            not np.allclose(syn.sample_scene(np.random.default_rng(s)).primitives[0].albedo, base)
            for s in range(1, 101)
        )
        assert differing == 100

    def test_distinct_albedos_within_scene(self):
        for seed in range(30):
            scene = syn.sample_scene(np.random.default_rng(seed))
            names = [p.color_name for p in scene.primitives]
            assert len(names) == len(set(names))


class TestOracleRender:
    def test_empty_scene_is_background(self):
        scene = syn.SyntheticScene((), np.array([0.1, 0.2, 0.3]),
                                   np.array([0.0, 0.0, 1.0]))
        img = syn.oracle_render(scene, cam.CameraPose(), 16, 16)
        np.testing.assert_allclose(img, np.broadcast_to([0.1, 0.2, 0.3], (16, 16, 3)))

    def test_centered_sphere_silhouette_is_centered(self, rng):
        prim = syn.Primitive(np.zeros(3), np.full(3, 0.2), np.array([0.9, 0.1, 0.1]), "red")
        scene = syn.SyntheticScene((prim,), np.zeros(3), np.array([0.0, 0.0, 1.0]))
        for _ in range(5):
            pose = cam.sample_pose(cam.PosePrior(-np.pi, np.pi, 0.3, np.pi - 0.3), rng)
            img = syn.oracle_render(scene, pose, 33, 33)
            mask = img.sum(axis=2) > 0
            ys, xs = np.where(mask)
            assert abs(ys.mean() - 16.0) < 1.0 and abs(xs.mean() - 16.0) < 1.0

    def test_head_on_light_center_shade(self):
        albedo = np.array([0.5, 0.4, 0.3])
        prim = syn.Primitive(np.zeros(3), np.full(3, 0.25), albedo, "gray")
        pose = cam.CameraPose(1.0, 0.4, 1.2)
        position, *_ = cam.pose_to_camera(pose)
        scene = syn.SyntheticScene((prim,), np.zeros(3), position / np.linalg.norm(position))
        img = syn.oracle_render(scene, pose, 17, 17)
        expected = np.clip(albedo * (1.0 + syn.AMBIENT), 0.0, 1.0)
        np.testing.assert_allclose(img[8, 8], expected, atol=1e-9)

    def test_deterministic(self):
        scene = syn.sample_scene(np.random.default_rng(5))
        a = syn.oracle_render(scene, syn.CANONICAL_POSE, 32, 32)
        b = syn.oracle_render(scene, syn.CANONICAL_POSE, 32, 32)
        np.testing.assert_array_equal(a, b)


class TestMakeDataset:
    def test_record_count(self, rng):
        records = syn.make_dataset(3, 4, rng, image_size=32)
        assert len(records) == 12

    def test_low_res_condition_ratio(self, rng):
        records = syn.make_dataset(1, 1, rng, image_size=64)
        low = records[0].conditions["lowres"].image
        assert low.shape == (4, 4, 3)

    def test_views_of_one_scene_share_conditions(self, rng):
        records = syn.make_dataset(1, 3, rng, image_size=32)
        base = records[0].conditions
        for rec in records[1:]:
            assert rec.conditions is base

    def test_determinism(self):
        a = syn.make_dataset(2, 2, np.random.default_rng(9), image_size=32)
        b = syn.make_dataset(2, 2, np.random.default_rng(9), image_size=32)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.image, rb.image)
            assert ra.pose == rb.pose and ra.text == rb.text

    def test_conditions_encode_to_unit_norm(self, rng):
        records = syn.make_dataset(2, 1, rng, image_size=32)
        enc = ToyEncoder(dim=16, seed=0)
        for rec in records:
            lengths = set()
            for c in rec.conditions.values():
                vec = encode_condition(c, enc)
                lengths.add(vec.shape)
                assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-9)
            assert lengths == {(16,)}

    def test_save_load_roundtrip(self, rng, tmp_path):
        records = syn.make_dataset(2, 2, rng, image_size=32)
        syn.save_dataset(records, str(tmp_path), image_size=32)
        assert (tmp_path / "metadata.txt").exists()
        assert len(list(tmp_path.glob("*.png"))) == 4
        loaded = syn.load_dataset(str(tmp_path))
        assert len(loaded) == len(records)
        for ra, rb in zip(records, loaded):
            np.testing.assert_array_equal(ra.image, rb.image)
            assert ra.text == rb.text and ra.scene_seed == rb.scene_seed


class TestPoseOracle:
    def test_constant_pose_dataset_converges(self):
        rng = np.random.default_rng(0)
        scene = syn.sample_scene(rng)
        pose = cam.CameraPose(1.0, 0.2, 1.5)
        img = syn.oracle_render(scene, pose, 16, 16)
        records = [syn.DatasetRecord(0, 0, pose, img, {}, "x") for _ in range(8)]
        oracle = syn.train_pose_oracle(records, np.random.default_rng(1),
                                       epochs=150, batch_size=8, lr=5e-3,
                                       base_channels=8, divergence_threshold=1e-3)
        pred = oracle(img)
        from fieldgan.losses import pose_reconstruction_discriminator
        loss = pose_reconstruction_discriminator(
            pred[None], np.array([[pose.rotation, pose.elevation]]))
        assert loss.item() < 1e-3

    def test_predictions_within_bounds(self, rng):
        oracle = syn.PoseRegressor(16, rng, base_channels=4, max_channels=8, hidden=8)
        pred = oracle(rng.uniform(-10, 10, (16, 16, 3)))
        assert 0.0 <= pred[0] <= 2 * np.pi
        assert 0.0 <= pred[1] <= np.pi

    def test_divergence_is_reported(self, rng):
        records = syn.make_dataset(2, 2, rng, image_size=16)
        with pytest.raises(RuntimeError):
            syn.train_pose_oracle(records, np.random.default_rng(0), epochs=1,
                                  batch_size=4, lr=0.0, divergence_threshold=1e-9)

    @pytest.mark.slow
    def test_heldout_rotation_error_median_of_three_seeds(self):
        errors = []
        for seed in range(3):
            rng = np.random.default_rng(seed)
            train = syn.make_dataset(96, 4, rng, image_size=32)
            held = syn.make_dataset(12, 4, rng, image_size=32)
            oracle = syn.train_pose_oracle(train, np.random.default_rng(seed + 100))
            preds = np.stack([oracle(r.image) for r in held])
            gts = np.stack([[r.pose.rotation, r.pose.elevation] for r in held])
            errors.append(syn.angular_error(preds[:, 0], gts[:, 0]).mean())
        assert np.median(errors) < 0.2


class TestMetrics:
    def test_constant_oracle_gives_zero_std(self, rng):
        sample = lambda r: r.uniform(0, 1, (8, 8, 3))
        oracle = lambda img: np.array([1.0, 2.0])
        std_r, std_e = syn.pose_consistency_std(sample, oracle, 16, rng)
        assert std_r == pytest.approx(0.0, abs=1e-9)
        assert std_e == pytest.approx(0.0, abs=1e-9)

    def test_wraparound_respected(self):
        estimates = [np.array([np.pi - 0.01, 1.0]), np.array([-np.pi + 0.01, 1.0])]
        it = iter(estimates * 1)
        sample = lambda r: np.zeros((2, 2, 3))
        oracle = lambda img: next(it)
        std_r, _ = syn.pose_consistency_std(sample, oracle, 2, np.random.default_rng(0))
        assert std_r < 0.05  # not ~pi: the seam costs nothing

    def test_global_shift_invariance(self):
        angles = np.array([0.1, 0.4, -0.2, 0.3])
        assert syn.circular_std(angles + 2 * np.pi) == pytest.approx(
            syn.circular_std(angles), abs=1e-12)

    def test_diversity_of_constant_generator(self, rng):
        sample = lambda r: np.full((4, 4, 3), 0.5)
        assert syn.diversity_score(sample, 6, rng) == 0.0

    def test_diversity_of_ones_zeros_pair(self):
        flip = iter([np.ones((4, 4, 3)), np.zeros((4, 4, 3))])
        sample = lambda r: next(flip)
        assert syn.diversity_score(sample, 2, np.random.default_rng(0)) == 1.0

    def test_diversity_permutation_invariance(self, rng):
        imgs = [rng.uniform(0, 1, (4, 4, 3)) for _ in range(4)]
        fwd = iter(imgs)
        rev = iter(imgs[::-1])
        a = syn.diversity_score(lambda r: next(fwd), 4, rng)
        b = syn.diversity_score(lambda r: next(rev), 4, rng)
        assert a == pytest.approx(b, abs=1e-12)

    def test_sample_count_validation(self, rng):
        with pytest.raises(ValueError):
            syn.diversity_score(lambda r: np.zeros((2, 2, 3)), 1, rng)
        with pytest.raises(ValueError):
            syn.pose_consistency_std(lambda r: np.zeros((2, 2, 3)),
                                     lambda i: np.zeros(2), 1, rng)
