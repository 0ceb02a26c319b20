"""Adam updates, training-loop reproducibility, divergence handling,
and checkpoint persistence."""

import json

import numpy as np
import pytest

import motion_diffusion as md
from motion_diffusion.errors import (ConfigError, ContractError, DimensionError,
                                     IntegrityError, TrainingDivergedError)
from motion_diffusion.training import LOG_EVERY, TrainConfig, adam_step


def toy_den_cfg(variant="series", **over):
    base = dict(variant=variant, model_dim=16, n_heads=2, t_obs=3, l_pred=4,
                dim=5, k_steps=5)
    base.update(over)
    return md.DenoiserConfig(**base)


def toy_tasks(cfg, n=6, seed=0):
    rng = np.random.default_rng(seed)
    return [md.PredictionTask(rng.normal(size=(cfg.t_obs, cfg.dim)),
                              rng.normal(size=(cfg.l_pred, cfg.dim)))
            for _ in range(n)]


def toy_sched(cfg):
    return md.build_schedule(cfg.k_steps, 0.02, 0.3)


def quick_train(variant="series", iterations=20, seed=3, **over):
    cfg = toy_den_cfg(variant)
    tr = TrainConfig(batch_size=8, iterations=iterations, lr=1e-3, seed=seed,
                     checkpoint_every=10, **over)
    tasks = toy_tasks(cfg)
    return md.train(tasks, cfg, tr, toy_sched(cfg)), cfg, tr, tasks


class TestAdam:
    def opt_cfg(self, **over):
        base = dict(batch_size=1, iterations=1, lr=0.01, seed=0)
        base.update(over)
        return TrainConfig(**base)

    def fresh(self, values):
        params = {k: np.array(v, dtype=np.float64) for k, v in values.items()}
        zeros = lambda: {k: np.zeros_like(a) for k, a in params.items()}
        return params, zeros(), zeros()

    def test_zero_gradient_is_identity(self):
        params, m, v = self.fresh({"w": [1.0, -2.0]})
        before = params["w"].copy()
        adam_step(params, {"w": np.zeros(2)}, m, v, 1, self.opt_cfg())
        np.testing.assert_array_equal(params["w"], before)
        np.testing.assert_array_equal(m["w"], np.zeros(2))

    def test_matches_textbook_recurrence(self):
        # independent scalar implementation straight from the update rule
        cfg = self.opt_cfg(lr=0.05)
        params, m, v = self.fresh({"w": [0.3]})
        theta, m_ref, v_ref = 0.3, 0.0, 0.0
        for t in range(1, 51):
            g = np.sin(0.7 * t)
            m_ref = cfg.adam_beta1 * m_ref + (1 - cfg.adam_beta1) * g
            v_ref = cfg.adam_beta2 * v_ref + (1 - cfg.adam_beta2) * g * g
            m_hat = m_ref / (1 - cfg.adam_beta1 ** t)
            v_hat = v_ref / (1 - cfg.adam_beta2 ** t)
            theta -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            adam_step(params, {"w": np.array([g])}, m, v, t, cfg)
            assert params["w"][0] == pytest.approx(theta, abs=1e-15)

    def test_constant_gradient_step_size_approaches_lr(self):
        cfg = self.opt_cfg(lr=0.01)
        params, m, v = self.fresh({"w": [0.0]})
        for t in range(1, 400):
            prev = params["w"][0]
            adam_step(params, {"w": np.array([3.7])}, m, v, t, cfg)
        assert abs(prev - params["w"][0]) == pytest.approx(cfg.lr, rel=1e-6)

    def test_update_is_deterministic(self):
        cfg = self.opt_cfg()
        g = {"w": np.array([0.5, -0.25])}
        pa, ma, va = self.fresh({"w": [1.0, 1.0]})
        pb, mb, vb = self.fresh({"w": [1.0, 1.0]})
        adam_step(pa, g, ma, va, 1, cfg)
        adam_step(pb, g, mb, vb, 1, cfg)
        np.testing.assert_array_equal(pa["w"], pb["w"])

    def test_name_sets_must_match(self):
        params, m, v = self.fresh({"w": [1.0]})
        with pytest.raises(ContractError):
            adam_step(params, {"x": np.array([1.0])}, m, v, 1, self.opt_cfg())

    def test_step_count_must_be_positive(self):
        params, m, v = self.fresh({"w": [1.0]})
        with pytest.raises(ContractError):
            adam_step(params, {"w": np.array([1.0])}, m, v, 0, self.opt_cfg())

    def test_non_finite_gradient_aborts(self):
        params, m, v = self.fresh({"w": [1.0]})
        with pytest.raises(TrainingDivergedError) as err:
            adam_step(params, {"w": np.array([np.nan])}, m, v, 3, self.opt_cfg())
        assert "'w'" in str(err.value)
        assert err.value.iteration == 3

    def test_clip_equals_prescaled_gradients(self):
        grads = {"a": np.array([30.0, 40.0]), "b": np.array([120.0])}
        total = np.sqrt(30.0 ** 2 + 40.0 ** 2 + 120.0 ** 2)
        clipped = {k: g * (5.0 / total) for k, g in grads.items()}
        pa, ma, va = self.fresh({"a": [1.0, 1.0], "b": [2.0]})
        pb, mb, vb = self.fresh({"a": [1.0, 1.0], "b": [2.0]})
        adam_step(pa, grads, ma, va, 1, self.opt_cfg(grad_clip=5.0))
        adam_step(pb, clipped, mb, vb, 1, self.opt_cfg())
        for k in pa:
            np.testing.assert_array_equal(pa[k], pb[k])

    def test_clip_inactive_below_threshold(self):
        g = {"w": np.array([0.1])}
        pa, ma, va = self.fresh({"w": [1.0]})
        pb, mb, vb = self.fresh({"w": [1.0]})
        adam_step(pa, g, ma, va, 1, self.opt_cfg(grad_clip=100.0))
        adam_step(pb, g, mb, vb, 1, self.opt_cfg())
        np.testing.assert_array_equal(pa["w"], pb["w"])


class TestTrainConfig:
    def test_validation(self):
        for kw in (dict(batch_size=0), dict(lr=0.0), dict(adam_beta1=1.0),
                   dict(grad_clip=-1.0), dict(iterations=0)):
            with pytest.raises(ConfigError):
                TrainConfig(**kw)

    def test_dict_round_trip(self):
        cfg = TrainConfig(lr=3e-3, seed=9)
        assert TrainConfig(**cfg.to_dict()) == cfg


class TestTrainLoop:
    def test_initial_loss_near_noise_energy(self):
        # small output heads leave eps_hat ~ 0, so the first loss is the
        # mean square of unit noise: 1 within sampling error
        cfg = toy_den_cfg()
        tr = TrainConfig(batch_size=64, iterations=1, lr=1e-4, seed=0)
        result = md.train(toy_tasks(cfg), cfg, tr, toy_sched(cfg))
        assert abs(result.losses[0] - 1.0) < 0.2

    def test_seed_reproduces_run_bit_for_bit(self):
        a, cfg, _, _ = quick_train(seed=3)
        b, _, _, _ = quick_train(seed=3)
        assert a.losses == b.losses
        for name in a.model.params:
            np.testing.assert_array_equal(a.model.params[name],
                                          b.model.params[name])

    def test_seed_changes_run(self):
        a, _, _, _ = quick_train(seed=3)
        b, _, _, _ = quick_train(seed=4)
        assert a.losses != b.losses

    def test_resume_matches_uninterrupted_run(self):
        full, cfg, tr20, tasks = quick_train(iterations=20, seed=5)
        half, _, _, _ = quick_train(iterations=10, seed=5)
        tr_resume = TrainConfig(**{**tr20.to_dict(), "iterations": 20})
        cont = md.train(tasks, cfg, tr_resume, toy_sched(cfg),
                        start=half.checkpoint)
        assert cont.losses == full.losses[10:]
        for name in full.model.params:
            np.testing.assert_array_equal(cont.model.params[name],
                                          full.model.params[name])
            np.testing.assert_array_equal(cont.checkpoint.adam_m[name],
                                          full.checkpoint.adam_m[name])
            np.testing.assert_array_equal(cont.checkpoint.adam_v[name],
                                          full.checkpoint.adam_v[name])

    @pytest.mark.parametrize("variant", ["series", "parallel"])
    def test_every_tensor_gets_gradient_signal(self, variant):
        cfg = toy_den_cfg(variant)
        tr = TrainConfig(batch_size=8, iterations=100, lr=1e-3, seed=1)
        result = md.train(toy_tasks(cfg), cfg, tr, toy_sched(cfg))
        quiet = [name for name, mom in result.checkpoint.adam_m.items()
                 if not np.any(mom)]
        assert quiet == []

    def test_divergence_carries_last_good_checkpoint(self):
        cfg = toy_den_cfg()
        tr = TrainConfig(batch_size=8, iterations=200, lr=1e6, seed=2,
                         checkpoint_every=1)
        with pytest.raises(TrainingDivergedError) as err:
            md.train(toy_tasks(cfg), cfg, tr, toy_sched(cfg))
        exc = err.value
        assert "iteration" in str(exc)
        assert exc.checkpoint is not None
        assert exc.checkpoint.iteration < exc.iteration
        rebuilt = exc.checkpoint.build_model()
        assert set(rebuilt.params) == set(md.param_shapes(cfg))

    def test_loss_log_rows(self, tmp_path):
        cfg = toy_den_cfg()
        tr = TrainConfig(batch_size=4, iterations=150, lr=1e-3, seed=0)
        log = tmp_path / "loss.csv"
        result = md.train(toy_tasks(cfg), cfg, tr, toy_sched(cfg), log_path=log)
        lines = log.read_text().splitlines()
        assert lines[0] == "iteration,loss"
        rows = [line.split(",") for line in lines[1:]]
        assert [int(r[0]) for r in rows] == [1, LOG_EVERY, 150]
        assert float(rows[0][1]) == result.losses[0]
        assert float(rows[1][1]) == result.losses[LOG_EVERY - 1]
        assert float(rows[2][1]) == result.losses[-1]

    def test_input_validation(self):
        cfg = toy_den_cfg()
        tr = TrainConfig(batch_size=2, iterations=1, seed=0)
        sched = toy_sched(cfg)
        with pytest.raises(ContractError):
            md.train([], cfg, tr, sched)
        with pytest.raises(ContractError):
            md.train([md.PredictionTask(np.zeros((3, 5)))], cfg, tr, sched)
        with pytest.raises(DimensionError):
            md.train([md.PredictionTask(np.zeros((4, 5)), np.zeros((4, 5)))],
                     cfg, tr, sched)
        with pytest.raises(ConfigError):
            md.train(toy_tasks(cfg), cfg, tr, md.build_schedule(7, 0.02, 0.3))

    def test_result_checkpoint_rebuilds_the_model(self):
        result, _, _, _ = quick_train(iterations=5)
        rebuilt = result.checkpoint.build_model()
        for name in result.model.params:
            np.testing.assert_array_equal(rebuilt.params[name],
                                          result.model.params[name])


class TestCheckpointIO:
    def trained_checkpoint(self, tmp_path, with_norm=True):
        cfg = toy_den_cfg()
        tr = TrainConfig(batch_size=4, iterations=6, lr=1e-3, seed=7,
                         checkpoint_every=3)
        norm = None
        if with_norm:
            norm = md.fit_normalizer(toy_tasks(cfg, n=2, seed=11))
        result = md.train(toy_tasks(cfg), cfg, tr, toy_sched(cfg),
                          normalizer=norm)
        path = tmp_path / "model.ckpt"
        md.save_checkpoint(result.checkpoint, path)
        return result, path, cfg

    def test_round_trip_bit_exact(self, tmp_path):
        result, path, cfg = self.trained_checkpoint(tmp_path)
        loaded = md.load_checkpoint(path, expect_denoiser=cfg)
        src = result.checkpoint
        assert loaded.iteration == src.iteration
        assert loaded.rng_state == src.rng_state
        assert loaded.denoiser_config == cfg
        assert loaded.schedule.k_steps == src.schedule.k_steps
        assert loaded.schedule.beta_min == src.schedule.beta_min
        np.testing.assert_array_equal(loaded.normalizer.mean,
                                      src.normalizer.mean)
        np.testing.assert_array_equal(loaded.normalizer.std,
                                      src.normalizer.std)
        for name in src.params:
            np.testing.assert_array_equal(loaded.params[name], src.params[name])
            np.testing.assert_array_equal(loaded.adam_m[name], src.adam_m[name])
            np.testing.assert_array_equal(loaded.adam_v[name], src.adam_v[name])

    def test_resume_from_file_matches_resume_from_memory(self, tmp_path):
        full, cfg, tr20, tasks = quick_train(iterations=20, seed=5)
        half, _, _, _ = quick_train(iterations=10, seed=5)
        path = tmp_path / "half.ckpt"
        md.save_checkpoint(half.checkpoint, path)
        tr_resume = TrainConfig(**{**tr20.to_dict(), "iterations": 20})
        cont = md.train(tasks, cfg, tr_resume, toy_sched(cfg),
                        start=md.load_checkpoint(path))
        assert cont.losses == full.losses[10:]
        for name in full.model.params:
            np.testing.assert_array_equal(cont.model.params[name],
                                          full.model.params[name])

    def test_missing_normalizer_stays_none(self, tmp_path):
        _, path, _ = self.trained_checkpoint(tmp_path, with_norm=False)
        assert md.load_checkpoint(path).normalizer is None

    def edit_manifest(self, path, mutate):
        blob = path.read_bytes()
        nl = blob.index(b"\n")
        manifest = json.loads(blob[:nl])
        mutate(manifest)
        path.write_bytes(json.dumps(manifest, sort_keys=True).encode() +
                         b"\n" + blob[nl + 1:])

    def test_version_mismatch_rejected(self, tmp_path):
        _, path, _ = self.trained_checkpoint(tmp_path)
        self.edit_manifest(path, lambda m: m.update(version=2))
        with pytest.raises(IntegrityError, match="version"):
            md.load_checkpoint(path)

    def test_flipped_payload_byte_fails_checksum(self, tmp_path):
        _, path, _ = self.trained_checkpoint(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(IntegrityError, match="checksum"):
            md.load_checkpoint(path)

    def test_truncated_payload_detected(self, tmp_path):
        _, path, _ = self.trained_checkpoint(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-20])
        with pytest.raises(IntegrityError, match="truncated"):
            md.load_checkpoint(path)

    def test_missing_tensor_detected(self, tmp_path):
        _, path, _ = self.trained_checkpoint(tmp_path)
        self.edit_manifest(
            path, lambda m: m.update(tensors=[e for e in m["tensors"]
                                              if e["name"] != "adam_v.in_w"]))
        with pytest.raises(IntegrityError, match="missing"):
            md.load_checkpoint(path)

    def test_manifest_must_be_json(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not json\npayload")
        with pytest.raises(IntegrityError):
            md.load_checkpoint(path)

    def test_manifest_line_required(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"\x00\x01\x02")
        with pytest.raises(IntegrityError):
            md.load_checkpoint(path)

    def test_unexpected_config_rejected(self, tmp_path):
        _, path, _ = self.trained_checkpoint(tmp_path)
        other = toy_den_cfg(model_dim=32)
        with pytest.raises(ConfigError):
            md.load_checkpoint(path, expect_denoiser=other)


class TestConvergence:
    def test_smoothed_loss_decreases(self, overfit_run):
        # window width sized to smooth over the minibatch noise at the floor
        losses = overfit_run["result"].losses
        window = 400
        means = [float(np.mean(losses[i:i + window]))
                 for i in range(0, len(losses), window)]
        assert len(means) >= 4
        for before, after in zip(means, means[1:]):
            assert after < before
        assert means[-1] < 0.05 * means[0]
