import math

import numpy as np
import pytest

from promptforge.data import generate_synthetic
from promptforge.encoders import EncoderWeights, encode_image
from promptforge.prompts import PromptMode
from promptforge.seeding import keyed_normal
from promptforge.tensor import Tensor
from promptforge.training import (
    CONTEXT_TOKENS,
    FewShotSample,
    SplitSpec,
    TrainConfig,
    TrainedState,
    contrastive_loss,
    lr_at,
    sample_few_shot,
    train,
)


@pytest.fixture(scope="module")
def small_dataset():
    return generate_synthetic(4, 8, seed=5)


@pytest.fixture(scope="module")
def small_split():
    return SplitSpec.halves(4)


def small_config(**kw):
    defaults = dict(epochs=2, shots=4, seed=0, method="coop")
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 10
        assert cfg.base_lr == 0.002
        assert cfg.lam == 0.2
        assert cfg.tau == 0.01
        assert cfg.shots == 16
        assert cfg.method == "full"

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainConfig(base_lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(shots=0)
        with pytest.raises(ValueError):
            TrainConfig(method="bogus")
        with pytest.raises(ValueError):
            TrainConfig(tau=-0.5)

    def test_spec_carries_blend_and_temperature(self):
        spec = TrainConfig(lam=0.5, tau=0.1, method="tft").spec()
        assert spec.lam == 0.5 and spec.tau == 0.1


class TestSplitSpec:
    def test_halves_even(self):
        split = SplitSpec.halves(8)
        assert split.base_classes == (0, 1, 2, 3)
        assert split.new_classes == (4, 5, 6, 7)

    def test_halves_odd_differ_by_one(self):
        split = SplitSpec.halves(7)
        assert len(split.base_classes) == 4 and len(split.new_classes) == 3

    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            SplitSpec((0, 1), (1, 2))

    def test_coverage_required(self):
        with pytest.raises(ValueError):
            SplitSpec((0,), (2,))

    def test_imbalance_rejected(self):
        with pytest.raises(ValueError, match="at most 1"):
            SplitSpec((0, 1, 2, 3), (4,))


class TestFewShotSampling:
    def test_exact_count_per_class(self, small_dataset, small_split):
        sample = sample_few_shot(small_dataset, small_split, shots=4, seed=1)
        for c in small_split.base_classes:
            indices = sample.per_class[c]
            assert len(indices) == 4
            assert len(set(indices)) == 4  # without replacement
            assert all(small_dataset.labels[i] == c for i in indices)

    def test_reproducible(self, small_dataset, small_split):
        a = sample_few_shot(small_dataset, small_split, shots=4, seed=9)
        b = sample_few_shot(small_dataset, small_split, shots=4, seed=9)
        assert a == b

    def test_insufficient_shots_names_class(self, small_dataset, small_split):
        with pytest.raises(ValueError, match="red block"):
            sample_few_shot(small_dataset, small_split, shots=9, seed=0)


class TestContrastiveLoss:
    def test_uniform_gives_log_m(self):
        probs = Tensor([0.25, 0.25, 0.25, 0.25])
        assert contrastive_loss(probs, 2).item() == pytest.approx(math.log(4), abs=1e-6)

    def test_certain_prediction_gives_zero(self):
        probs = Tensor([0.0, 1.0, 0.0])
        assert contrastive_loss(probs, 1).item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        probs = Tensor([0.7311, 0.2689])
        assert contrastive_loss(probs, 1).item() == pytest.approx(1.3133, abs=1e-3)

    def test_out_of_range_label(self):
        with pytest.raises(IndexError):
            contrastive_loss(Tensor([0.5, 0.5]), 2)
        with pytest.raises(IndexError):
            contrastive_loss(Tensor([0.5, 0.5]), -1)

    def test_zero_probability_stays_finite(self):
        assert np.isfinite(contrastive_loss(Tensor([1.0, 0.0]), 1).item())


class TestLearningRateSchedule:
    def test_starts_at_base(self):
        assert lr_at(0, 100, 0.002) == pytest.approx(0.002)

    def test_midpoint_is_half(self):
        assert lr_at(50, 100, 0.002) == pytest.approx(0.001, abs=1e-12)

    def test_hand_value_step_three_of_ten(self):
        assert lr_at(3, 10, 0.002) == pytest.approx(0.0015878, abs=1e-6)

    def test_monotone_non_increasing(self):
        values = [lr_at(s, 40, 0.002) for s in range(40)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_zero_total_steps_rejected(self):
        with pytest.raises(ValueError):
            lr_at(0, 0, 0.002)

    def test_step_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            lr_at(10, 10, 0.002)


class TestTrain:
    def test_zero_epochs_returns_bitwise_initialization(self, small_dataset, small_split):
        cfg = small_config(epochs=0)
        state = train(small_dataset, small_split, cfg)
        expected = keyed_normal(cfg.seed, "train.context", (CONTEXT_TOKENS, 64))
        assert np.array_equal(state.context.data, expected)
        assert state.loss_history == ()

    def test_deterministic_given_seed(self, small_dataset, small_split):
        cfg = small_config(epochs=2, method="full")
        a = train(small_dataset, small_split, cfg)
        b = train(small_dataset, small_split, cfg)
        assert np.array_equal(a.context.data, b.context.data)
        assert a.loss_history == b.loss_history

    def test_encoder_weights_frozen_through_training(self, small_dataset, small_split):
        weights = EncoderWeights(0)
        before = weights.checksum()
        train(small_dataset, small_split, small_config(epochs=2, method="full"),
              weights=weights)
        assert weights.checksum() == before

    def test_loss_history_finite(self, small_dataset, small_split):
        state = train(small_dataset, small_split, small_config(epochs=3, method="tft"))
        assert len(state.loss_history) == 3
        assert all(np.isfinite(v) for v in state.loss_history)

    def test_training_moves_only_learnable_parameters(self, small_dataset, small_split):
        cfg = small_config(epochs=1, method="cocoop")
        state = train(small_dataset, small_split, cfg)
        init_ctx = keyed_normal(cfg.seed, "train.context", (CONTEXT_TOKENS, 64))
        assert not np.array_equal(state.context.data, init_ctx)
        assert state.prompt_net is not None
        assert state.image_net is None

    def test_handcrafted_prompts_never_train(self, small_dataset, small_split):
        cfg = small_config(epochs=1, method="clip")
        state = train(small_dataset, small_split, cfg)
        assert not state.context.requires_grad
        assert state.learnable_parameters() == []

    def test_method_wiring(self, small_dataset, small_split):
        state = train(small_dataset, small_split, small_config(epochs=0, method="mlp"))
        assert state.prompt_net is not None and state.image_net is not None
        state = train(small_dataset, small_split, small_config(epochs=0, method="mlp_ft"))
        assert state.prompt_net is None and state.image_net is not None

    def test_shared_features_match_internal_encoding(self, small_dataset, small_split):
        cfg = small_config(epochs=1)
        weights = EncoderWeights(cfg.seed)
        features = [encode_image(img, weights) for img in small_dataset.images]
        a = train(small_dataset, small_split, cfg, weights=weights, features=features)
        b = train(small_dataset, small_split, cfg)
        assert np.array_equal(a.context.data, b.context.data)


class TestCheckpoint:
    def test_round_trip_plain_method(self, tmp_path, small_dataset, small_split):
        cfg = small_config(epochs=1, method="coop", seed=3)
        state = train(small_dataset, small_split, cfg)
        path = tmp_path / "coop.ckpt"
        state.save(path)
        loaded = TrainedState.load(path)
        assert loaded.config == cfg
        assert np.array_equal(loaded.context.data, state.context.data)
        assert loaded.context.requires_grad
        assert loaded.prompt_net is None and loaded.image_net is None
        assert loaded.weights.checksum() == state.weights.checksum()

    def test_round_trip_with_residual_networks(self, tmp_path, small_dataset, small_split):
        cfg = small_config(epochs=1, method="mlp", seed=4)
        state = train(small_dataset, small_split, cfg)
        path = tmp_path / "mlp.ckpt"
        state.save(path)
        loaded = TrainedState.load(path)
        for a, b in zip(state.prompt_net.parameters(), loaded.prompt_net.parameters()):
            assert np.array_equal(a.data, b.data)
        for a, b in zip(state.image_net.parameters(), loaded.image_net.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_header_is_textual_and_ordered(self, tmp_path, small_dataset, small_split):
        state = train(small_dataset, small_split, small_config(epochs=0))
        path = tmp_path / "c.ckpt"
        state.save(path)
        head = path.read_bytes().split(b"\nend\n")[0].decode()
        assert head.startswith("promptforge-checkpoint 1")
        assert "lambda=0.2" in head and "method=coop" in head

    def test_handcrafted_checkpoint_stays_frozen(self, tmp_path, small_dataset, small_split):
        state = train(small_dataset, small_split, small_config(epochs=0, method="clip"))
        path = tmp_path / "clip.ckpt"
        state.save(path)
        assert not TrainedState.load(path).context.requires_grad

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError, match="checkpoint"):
            TrainedState.load(path)
