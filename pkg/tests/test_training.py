"""Adam, training-step isolation, determinism, config and checkpoint IO."""

import dataclasses

import numpy as np
import pytest

from fieldgan import checkpoint as ckpt
from fieldgan import training as tr
from fieldgan.optim import adam_step


def tiny_config(**overrides):
    base = dict(
        condition_dim=6, shape_noise_dim=4, appearance_noise_dim=4,
        feature_dim=8, shape_layers=2, appearance_layers=1, mapping_hidden=8,
        feature_grid=8, image_size=16, samples_per_ray=3,
        decoder_channels=8, disc_base_channels=8, disc_max_channels=16,
        disc_head_hidden=16, n_scenes=2, views_per_scene=2, batch_size=2,
        steps=2, seed=0, metric_every=2, metric_samples=2, checkpoint_every=2,
    )
    base.update(overrides)
    return tr.TrainConfig(**base)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        p = np.array([1.0, -2.0])
        new_p, m, v = adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2),
                                t=1, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        np.testing.assert_array_equal(new_p, p)
        np.testing.assert_array_equal(m, 0.0)

    def test_zero_learning_rate_keeps_parameters(self, rng):
        p = rng.normal(size=5)
        g = rng.normal(size=5)
        new_p, _, _ = adam_step(p, g, np.zeros(5), np.zeros(5),
                                t=1, lr=0.0, beta1=0.9, beta2=0.999, eps=1e-8)
        np.testing.assert_array_equal(new_p, p)

    def test_first_step_closed_form(self):
        # Hand evaluation of the recurrence at t=1 from zero moments:
        # m_hat = g, sqrt(v_hat) = |g|, so the update is lr * g / (|g| + eps).
        g = np.array([2.0, -0.5])
        lr, eps = 0.1, 1e-8
        p = np.array([1.0, 1.0])
        new_p, _, _ = adam_step(p, g, np.zeros(2), np.zeros(2),
                                t=1, lr=lr, beta1=0.9, beta2=0.999, eps=eps)
        expected = p - lr * g / (np.abs(g) + eps)
        np.testing.assert_allclose(new_p, expected, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(3), np.zeros(4), np.zeros(3), np.zeros(3),
                      t=1, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)


class TestDiscriminatorStep:
    def test_generator_untouched(self):
        state = tr.build_state(tiny_config())
        before = {k: p.data.copy() for k, p in state.generator.params.items()}
        tr.train_discriminator_step(state)
        for k, p in state.generator.params.items():
            np.testing.assert_array_equal(p.data, before[k])

    def test_zero_head_no_penalty_closed_form(self):
        state = tr.build_state(tiny_config(penalty_k=0.0))
        d = state.discriminator
        for name in ("match.0", "match.1", "match.out"):
            d.params[f"{name}.w"].data[...] = 0.0
            d.params[f"{name}.b"].data[...] = 0.0
        losses = tr.train_discriminator_step(state)
        assert losses["loss_d_adv"] == pytest.approx(2.0 * np.log(2.0), abs=1e-6)
        assert losses["loss_d"] == pytest.approx(
            losses["loss_d_adv"] + losses["loss_d_pose"], abs=1e-6)
        assert losses["penalty"] == 0.0

    def test_losses_finite_over_several_steps(self):
        state = tr.build_state(tiny_config(steps=8))
        for _ in range(8):
            d = tr.train_discriminator_step(state)
            g = tr.train_generator_step(state)
            assert np.isfinite(list(d.values()) + list(g.values())).all()


class TestGeneratorStep:
    def test_discriminator_untouched(self):
        state = tr.build_state(tiny_config())
        tr.train_discriminator_step(state)
        before = {k: p.data.copy() for k, p in state.discriminator.params.items()}
        tr.train_generator_step(state)
        for k, p in state.discriminator.params.items():
            np.testing.assert_array_equal(p.data, before[k])

    def test_identical_noise_pair_zeroes_pair_terms(self, monkeypatch):
        state = tr.build_state(tiny_config())
        fixed = None

        def duplicated(state_, n):
            nonlocal fixed
            if fixed is None:
                cfg = state_.config
                fixed = (np.full((n, cfg.shape_noise_dim), 0.3, dtype=cfg.np_dtype()),
                         np.full((n, cfg.appearance_noise_dim), -0.2, dtype=cfg.np_dtype()))
            return fixed

        monkeypatch.setattr(tr, "_draw_latents", duplicated)
        losses = tr.train_generator_step(state)
        assert losses["l_div"] == 0.0
        assert losses["l_pose"] == 0.0

    def test_disabled_switches_match_zero_weights(self):
        cfg_a = tiny_config(enable_div=False, enable_pose_penalty=False,
                            lambda_div=1.0, lambda_pose=1.0)
        cfg_b = tiny_config(lambda_div=0.0, lambda_pose=0.0)
        state_a, state_b = tr.build_state(cfg_a), tr.build_state(cfg_b)
        for _ in range(2):
            la_d = tr.train_discriminator_step(state_a)
            lb_d = tr.train_discriminator_step(state_b)
            la_g = tr.train_generator_step(state_a)
            lb_g = tr.train_generator_step(state_b)
        assert la_d["loss_d"] == lb_d["loss_d"]
        assert la_g["loss_g"] == lb_g["loss_g"]
        for k, p in state_a.generator.params.items():
            np.testing.assert_array_equal(p.data, state_b.generator.params[k].data)


class TestTrainLoop:
    def test_zero_steps_initial_checkpoint_only(self, tmp_path):
        result = tr.train_loop(tiny_config(steps=0), out_dir=str(tmp_path))
        assert (tmp_path / "checkpoint.bin").exists()
        assert result.metric_rows == [",".join(tr.METRIC_COLUMNS)]
        loaded = ckpt.load_checkpoint(str(tmp_path / "checkpoint.bin"))
        assert loaded.step == 0

    def test_same_seed_identical_logs(self):
        a = tr.train_loop(tiny_config(steps=3))
        b = tr.train_loop(tiny_config(steps=3))
        assert a.metric_rows == b.metric_rows

    def test_different_seeds_differ(self):
        a = tr.train_loop(tiny_config(steps=2, seed=0))
        b = tr.train_loop(tiny_config(steps=2, seed=1))
        assert a.metric_rows != b.metric_rows

    def test_metric_rows_have_metrics_on_schedule(self):
        result = tr.train_loop(tiny_config(steps=3, metric_every=2))
        rows = [r.split(",") for r in result.metric_rows[1:]]
        assert rows[0][5] == "" and rows[1][5] != "" and rows[2][5] != ""


class TestCheckpointIO:
    def test_save_load_save_byte_identical(self, tmp_path):
        state = tr.build_state(tiny_config())
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        tr.save_state(state, p1)
        loaded = tr.load_state(p1)
        tr.save_state(loaded, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_corrupted_payload_raises_checksum_error(self, tmp_path):
        state = tr.build_state(tiny_config())
        path = str(tmp_path / "c.bin")
        tr.save_state(state, path)
        blob = bytearray(open(path, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        with pytest.raises(ckpt.ChecksumError):
            ckpt.load_checkpoint(path)

    def test_truncated_file_raises(self, tmp_path):
        state = tr.build_state(tiny_config())
        path = str(tmp_path / "t.bin")
        tr.save_state(state, path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:17])
        with pytest.raises(ckpt.CheckpointError):
            ckpt.load_checkpoint(path)

    def test_bad_magic_raises(self, tmp_path):
        path = str(tmp_path / "m.bin")
        open(path, "wb").write(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ckpt.BadMagicError):
            ckpt.load_checkpoint(path)

    def test_conflicting_config_dimension_error(self, tmp_path):
        state = tr.build_state(tiny_config())
        path = str(tmp_path / "d.bin")
        tr.save_state(state, path)
        loaded = ckpt.load_checkpoint(path)
        other = tr.build_state(tiny_config(feature_dim=12))
        with pytest.raises(ckpt.DimensionMismatchError):
            ckpt.restore_params(other.generator.params, loaded.tensors, "g")

    def test_resume_reproduces_continued_log(self, tmp_path):
        straight = tr.train_loop(tiny_config(steps=4))
        split = tr.train_loop(tiny_config(steps=2), out_dir=str(tmp_path / "half"))
        resumed = tr.train_loop(tiny_config(steps=4),
                                resume_from=str(tmp_path / "half" / "checkpoint.bin"))
        assert resumed.metric_rows[1:] == straight.metric_rows[3:]
        final_straight = {k: p.data for k, p in straight.state.generator.params.items()}
        for k, p in resumed.state.generator.params.items():
            np.testing.assert_array_equal(p.data, final_straight[k])

    def test_resume_with_conflicting_config_rejected(self, tmp_path):
        tr.train_loop(tiny_config(steps=1), out_dir=str(tmp_path))
        with pytest.raises(ckpt.DimensionMismatchError):
            tr.train_loop(tiny_config(steps=2, lr_g=9e-4),
                          resume_from=str(tmp_path / "checkpoint.bin"))


class TestTrainConfig:
    def test_file_roundtrip(self, tmp_path):
        cfg = tiny_config(lambda_div=0.75, enable_pose_penalty=False,
                          condition_type="sketch")
        path = str(tmp_path / "run.cfg")
        cfg.to_file(path)
        assert tr.TrainConfig.from_file(path) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("steps=5\nwarp_drive=on\n")
        with pytest.raises(ValueError, match="unknown config key"):
            tr.TrainConfig.from_file(str(path))

    def test_missing_keys_use_defaults(self, tmp_path):
        path = tmp_path / "partial.cfg"
        path.write_text("seed=7\nsteps=3\n")
        cfg = tr.TrainConfig.from_file(str(path))
        assert cfg.seed == 7 and cfg.steps == 3
        assert cfg.image_size == tr.TrainConfig().image_size

    def test_validation(self):
        with pytest.raises(ValueError):
            tiny_config(batch_size=1)
        with pytest.raises(ValueError):
            tiny_config(condition_type="voxels")
        with pytest.raises(ValueError):
            tiny_config(image_size=20)
        with pytest.raises(ValueError):
            tiny_config(dtype="float16")

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# experiment\n\nseed=3\n")
        assert tr.TrainConfig.from_file(str(path)).seed == 3
