import numpy as np
import pytest

from stagestyle.backend import Backend
from stagestyle.errors import NumericError, ValidationError
from stagestyle.prompts import CaptionRecord
from stagestyle.stagespace import StageSchedule, init_table, stage_of
from stagestyle.trainer import (
    StyleDataset,
    StyleImage,
    TrainConfig,
    init_train_state,
    loss_and_grad,
    smoothed_loss_drop,
    train,
    train_step,
)

from conftest import make_style_image
from oracles import central_fd_gradient


class TestConfigAndDataset:
    def test_invalid_configs(self):
        with pytest.raises(ValidationError):
            TrainConfig(steps=-1)
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=-0.1)
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValidationError):
            TrainConfig(stage_count=0)
        with pytest.raises(ValidationError):
            TrainConfig(timestep_sampling="importance")

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            StyleDataset((), {})

    def test_missing_caption_rejected(self):
        with pytest.raises(ValidationError):
            StyleDataset((StyleImage("a", make_style_image()),), {})

    def test_empty_caption_warns(self, caplog):
        with caplog.at_level("WARNING"):
            StyleDataset(
                (StyleImage("a", make_style_image()),),
                {"a": CaptionRecord("a", "")},
            )
        assert any("empty context caption" in r.message for r in caplog.records)


class TestTrainStep:
    def test_only_active_stage_changes(self, backend, dataset):
        config = TrainConfig(stage_count=6, seed=4)
        state = init_train_state(backend, dataset, config)
        table = init_table(StageSchedule(6, 50), backend.encoder.token_embedding("painting"))
        rng = np.random.default_rng(4)
        for _ in range(10):
            before = table
            table, loss = train_step(state, backend, table, dataset, config, rng)
            active = stage_of(table.schedule, state.last_step["t"])
            assert state.last_step["stage"] == active
            for k in range(6):
                if k == active:
                    assert not np.array_equal(table.vectors[k], before.vectors[k])
                else:
                    assert np.array_equal(table.vectors[k], before.vectors[k])
            assert np.isfinite(loss)

    def test_zero_learning_rate_keeps_table(self, backend, dataset):
        config = TrainConfig(stage_count=6, seed=1, learning_rate=0.0)
        state = init_train_state(backend, dataset, config)
        table = init_table(StageSchedule(6, 50), backend.encoder.token_embedding("painting"))
        updated, loss = train_step(state, backend, table, dataset, config, np.random.default_rng(1))
        assert np.array_equal(updated.vectors, table.vectors)
        assert loss > 0

    def test_non_finite_loss_diagnostics(self, backend, dataset):
        class NaNDenoiser:
            latent_shape = backend.denoiser.latent_shape
            differentiable = True

            def predict(self, z_t, t, cond, structure=None):
                return np.full(self.latent_shape, np.nan)

            def vjp_cond(self, z_t, t, cond, cot, structure=None):
                return np.zeros_like(cond.values)

        broken = Backend(NaNDenoiser(), backend.codec, backend.encoder, backend.schedule)
        config = TrainConfig(stage_count=6, seed=0)
        state = init_train_state(broken, dataset, config)
        table = init_table(StageSchedule(6, 50), backend.encoder.token_embedding("painting"))
        with pytest.raises(NumericError, match=r"t=\d+ stage=\d+"):
            train_step(state, broken, table, dataset, config, np.random.default_rng(0))


class TestGradients:
    def test_matches_finite_differences(self, backend, dataset):
        config = TrainConfig(stage_count=6)
        state = init_train_state(backend, dataset, config)
        rng = np.random.default_rng(17)
        for _ in range(5):
            t = int(rng.integers(50))
            k = stage_of(StageSchedule(6, 50), t)
            seq = state.sequences[(dataset.images[0].image_id, k)]
            z0 = state.z0[dataset.images[0].image_id]
            v = rng.normal(0, 0.25, backend.encoder.embedding_dim)
            eps = rng.standard_normal((1, *backend.denoiser.latent_shape))
            _, grad = loss_and_grad(backend, seq, v, z0, t, eps)
            fd = central_fd_gradient(lambda x: loss_and_grad(backend, seq, x, z0, t, eps)[0], v)
            assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-4

    def test_loss_agrees_with_base_loss(self, backend, dataset):
        from stagestyle.backend import base_loss
        from stagestyle.textcond import ConditioningVector

        config = TrainConfig(stage_count=6)
        state = init_train_state(backend, dataset, config)
        seq = state.sequences[(dataset.images[0].image_id, 1)]
        z0 = state.z0[dataset.images[0].image_id]
        rng = np.random.default_rng(8)
        v = rng.normal(0, 0.25, backend.encoder.embedding_dim)
        eps = rng.standard_normal(backend.denoiser.latent_shape)
        loss, _ = loss_and_grad(backend, seq, v, z0, 10, eps[None])
        pos, _ = seq.placeholder
        cond = ConditioningVector(backend.encoder.encode(seq, {pos: v}))
        assert loss == base_loss(backend.denoiser, backend.schedule, z0, 10, eps, cond)

    def test_loss_independent_of_inactive_stages(self, backend, dataset):
        # the stage-k prompt contains only stage token k, so other vectors
        # cannot enter the computation at all
        config = TrainConfig(stage_count=6)
        state = init_train_state(backend, dataset, config)
        table = init_table(StageSchedule(6, 50), backend.encoder.token_embedding("painting"))
        seq = state.sequences[(dataset.images[0].image_id, 2)]
        z0 = state.z0[dataset.images[0].image_id]
        eps = np.random.default_rng(0).standard_normal((1, *backend.denoiser.latent_shape))
        t = 20  # stage 2 of 6 over 50 timesteps
        base, _ = loss_and_grad(backend, seq, table.vectors[2].astype(np.float64), z0, t, eps)
        for other in (0, 1, 3, 4, 5):
            perturbed = table.vectors.copy()
            perturbed[other] += 10.0
            again, _ = loss_and_grad(backend, seq, perturbed[2].astype(np.float64), z0, t, eps)
            assert again == base


class TestTrain:
    def test_reproducible_trajectory(self, backend, dataset):
        config = TrainConfig(steps=40, stage_count=6, seed=9)
        a = train(backend, dataset, config)
        b = train(backend, dataset, config)
        assert a.metadata["loss_history"] == b.metadata["loss_history"]
        assert np.array_equal(a.vectors, b.vectors)

    def test_zero_steps_equals_initialization(self, backend, dataset):
        config = TrainConfig(steps=0, stage_count=6)
        checkpoint = train(backend, dataset, config)
        seed_vec = backend.encoder.token_embedding("painting").astype(np.float32)
        assert np.array_equal(checkpoint.vectors, np.tile(seed_vec, (6, 1)))

    def test_backend_frozen(self, backend, dataset):
        before = (backend.denoiser.weights_digest(), backend.encoder.weights_digest())
        train(backend, dataset, TrainConfig(steps=30, stage_count=6, seed=2))
        after = (backend.denoiser.weights_digest(), backend.encoder.weights_digest())
        assert before == after

    def test_image_sampling_covers_all_ids(self, backend):
        images = tuple(
            StyleImage(f"img{i}", make_style_image(kind))
            for i, kind in enumerate(["waves", "blobs", "grid", "waves", "blobs"])
        )
        captions = {img.image_id: CaptionRecord(img.image_id, f"subject {i}") for i, img in enumerate(images)}
        dataset = StyleDataset(images, captions)
        seen = set()
        train(
            backend,
            dataset,
            TrainConfig(steps=500, stage_count=6, seed=0, batch_size=1),
            on_step=lambda record: seen.add(record["image_id"]),
        )
        assert seen == set(dataset.image_ids)

    def test_every_stage_updated(self, backend, dataset):
        checkpoint = train(backend, dataset, TrainConfig(steps=120, stage_count=6, seed=0))
        assert all(c > 0 for c in checkpoint.metadata["stage_update_counts"])

    def test_step_log_records(self, backend, dataset):
        records = []
        train(backend, dataset, TrainConfig(steps=15, stage_count=6, seed=0), on_step=records.append)
        assert len(records) == 15
        assert [r["step"] for r in records] == list(range(15))
        for r in records:
            assert 0 <= r["t"] < 50
            assert r["stage"] == stage_of(StageSchedule(6, 50), r["t"])
            assert np.isfinite(r["loss"])

    def test_convergence_smoke(self, backend, dataset):
        checkpoint = train(backend, dataset, TrainConfig(steps=200, stage_count=6, seed=0))
        drop = smoothed_loss_drop(checkpoint.metadata["loss_history"], 20)
        assert drop >= 0.2


class TestSmoothedDrop:
    def test_needs_enough_samples(self):
        with pytest.raises(ValidationError):
            smoothed_loss_drop([1.0] * 10, window=20)

    def test_drop_arithmetic(self):
        losses = [2.0] * 20 + [1.0] * 20
        assert smoothed_loss_drop(losses, 20) == pytest.approx(0.5)
