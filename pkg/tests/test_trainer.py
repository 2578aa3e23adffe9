import json

import numpy as np
import pytest

from tsadp.checkpoint import checkpoint_bytes, load_checkpoint, read_checkpoint, save_checkpoint
from tsadp.errors import (EmptyInputError, FormatError, MagicError, NonFiniteLossError,
                          ShapeError, TruncationError, VersionError)
from tsadp.gradients import backward
from tsadp.model import PARAM_NAMES, TrainingBatch, forward_losses, init_model
from tsadp.objectives import LossConfig
from tsadp.synthbench import SynthConfig, generate_dataset
from tsadp.trainer import (MaskSpec, TrainConfig, init_optimizer_state, mask_rng,
                           optimizer_step, sample_mask, train)


@pytest.fixture(scope="module")
def small_data():
    return generate_dataset(SynthConfig(num_sequences=12, T=6, d_visual=5, d_language=4,
                                        latent_dim=3, seed=2))


def fresh_model(seed=0):
    return init_model(5, 4, d_proj=4, d_out=4, d_prompt=4, d_emb=4, seed=seed)


class TestMasks:
    def test_zero_rate_masks_nothing(self):
        spec = MaskSpec(0.0, seed=3)
        assert all(sample_mask(9, spec, mask_rng(spec, i)) == frozenset() for i in range(50))

    def test_single_frame_is_never_masked(self):
        spec = MaskSpec(0.99, seed=0)
        assert all(sample_mask(1, spec, mask_rng(spec, i)) == frozenset() for i in range(50))

    def test_full_draw_keeps_last_frame(self):
        spec = MaskSpec(0.999, seed=0)
        for i in range(20):
            m = sample_mask(4, spec, mask_rng(spec, i))
            assert 3 not in m and len(m) < 4

    def test_draw_is_reproducible(self):
        spec = MaskSpec(0.5, seed=7)
        first = [sample_mask(10, spec, mask_rng(spec, i)) for i in range(5)]
        again = [sample_mask(10, spec, mask_rng(spec, i)) for i in range(5)]
        assert first == again
        assert len(set(first)) > 1

    def test_rate_is_respected_on_average(self):
        spec = MaskSpec(0.25, seed=1)
        sizes = [len(sample_mask(8, spec, mask_rng(spec, i))) for i in range(2000)]
        assert abs(np.mean(sizes) / 8 - 0.25) < 0.02

    def test_validation(self):
        with pytest.raises(ValueError):
            MaskSpec(1.0)
        with pytest.raises(ValueError):
            MaskSpec(0.1, policy="block")
        with pytest.raises(ValueError):
            sample_mask(0, MaskSpec(), mask_rng(MaskSpec(), 0))


class TestOptimizer:
    def test_sgd_zero_gradient(self):
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.5)
        params = {"a": np.array([1.0, -2.0])}
        new, _ = optimizer_step(params, {"a": np.zeros(2)}, None, cfg)
        assert np.array_equal(new["a"], params["a"])

    def test_sgd_one_step(self):
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.1)
        new, _ = optimizer_step({"a": np.array([1.0])}, {"a": np.array([2.0])}, None, cfg)
        assert new["a"][0] == pytest.approx(0.8, abs=1e-15)

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
    def test_adam_first_step_is_learning_rate(self, scale):
        cfg = TrainConfig(learning_rate=1e-3)
        params = {"a": np.zeros(3)}
        g = np.array([1.0, -2.0, 0.5]) * scale
        state = init_optimizer_state(params, cfg)
        new, state = optimizer_step(params, {"a": g}, state, cfg)
        expected = -1e-3 * g / (np.abs(g) + 1e-8)
        assert np.allclose(new["a"], expected, rtol=1e-12, atol=0)
        assert state.step == 1

    def test_adam_matches_reference_over_steps(self):
        cfg = TrainConfig(learning_rate=0.01, beta1=0.8, beta2=0.9, adam_eps=1e-6)
        rng = np.random.default_rng(0)
        theta = {"a": rng.normal(size=4)}
        ref, m, v = theta["a"].copy(), np.zeros(4), np.zeros(4)
        state = init_optimizer_state(theta, cfg)
        for t in range(1, 6):
            g = rng.normal(size=4)
            theta, state = optimizer_step(theta, {"a": g}, state, cfg)
            m = 0.8 * m + 0.2 * g
            v = 0.9 * v + 0.1 * g * g
            ref = ref - 0.01 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.9 ** t)) + 1e-6)
        assert np.allclose(theta["a"], ref, rtol=1e-13, atol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            optimizer_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, None,
                           TrainConfig(optimizer="sgd"))


class TestConfig:
    @pytest.mark.parametrize("bad", [{"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1.0},
                                     {"optimizer": "rmsprop"}, {"ablation": "no_mtp"}])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_ablations_rewrite_loss(self):
        assert TrainConfig(ablation="no_tcl").effective_loss().lambda1 == 0.0
        assert TrainConfig(ablation="no_dpg").effective_loss().k == 0
        assert TrainConfig(ablation="no_dpg").window().k == 0
        assert TrainConfig().effective_loss() == LossConfig()


class TestTrain:
    def test_zero_learning_rate_keeps_weights(self, small_data):
        model = fresh_model()
        for opt in ("adam", "sgd"):
            trained, _ = train(model, small_data,
                               TrainConfig(epochs=1, learning_rate=0.0, optimizer=opt))
            assert checkpoint_bytes(trained) == checkpoint_bytes(model)

    def test_runs_are_bit_identical(self, small_data):
        cfg = TrainConfig(epochs=3, batch_size=5, learning_rate=1e-2, seed=4)
        a, hist_a = train(fresh_model(), small_data, cfg)
        b, hist_b = train(fresh_model(), small_data, cfg)
        assert checkpoint_bytes(a) == checkpoint_bytes(b)
        strip = lambda h: [{k: v for k, v in r.items() if k != "wall_ms"} for r in h]
        assert strip(hist_a) == strip(hist_b)
        c, _ = train(fresh_model(), small_data, TrainConfig(epochs=3, batch_size=5,
                                                            learning_rate=1e-2, seed=5))
        assert checkpoint_bytes(c) != checkpoint_bytes(a)

    def test_input_model_is_not_modified(self, small_data):
        model = fresh_model()
        before = checkpoint_bytes(model)
        train(model, small_data, TrainConfig(epochs=1, learning_rate=0.1))
        assert checkpoint_bytes(model) == before

    def test_loss_goes_down(self, small_data):
        _, hist = train(fresh_model(), small_data, TrainConfig(epochs=40, learning_rate=1e-2))
        assert hist[-1]["loss_total"] < hist[0]["loss_total"]

    def test_default_run_ends_below_first_epoch(self):
        # default synthetic data and TrainConfig: 200 sequences, 200 epochs
        _, hist = train(init_model(16, 16, seed=0), generate_dataset(SynthConfig()), TrainConfig())
        assert hist[-1]["loss_total"] < hist[0]["loss_total"], (
            f"epoch 1 total {hist[0]['loss_total']:.3f}, epoch {hist[-1]['epoch']} total "
            f"{hist[-1]['loss_total']:.3f} (tcl {hist[-1]['loss_tcl']:.3f}, "
            f"mtp {hist[-1]['loss_mtp']:.3f})")

    def test_metrics_file(self, small_data, tmp_path):
        path = tmp_path / "m.jsonl"
        _, hist = train(fresh_model(), small_data, TrainConfig(epochs=4), metrics_path=path)
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(rows) == 4
        assert [r["epoch"] for r in rows] == [1, 2, 3, 4]
        assert all(set(r) == {"epoch", "loss_total", "loss_tcl", "loss_mtp", "wall_ms"}
                   for r in rows)
        assert rows == hist

    def test_no_tcl_reports_but_ignores_contrastive_loss(self, small_data):
        _, hist = train(fresh_model(), small_data, TrainConfig(epochs=2, ablation="no_tcl"))
        for r in hist:
            assert r["loss_tcl"] > 0
            assert r["loss_total"] == pytest.approx(r["loss_mtp"], rel=1e-12)

    def test_no_tcl_gradient_from_contrastive_path_is_zero(self, small_data):
        model = fresh_model()
        batch = TrainingBatch([(s.visual, s.language) for s in small_data[:3]])
        cfg = TrainConfig(ablation="no_tcl").effective_loss()
        _, grads = backward(model, batch, cfg)
        # no masks: the only remaining objective is absent, so nothing moves
        assert all(not grads[n].any() for n in PARAM_NAMES)

    def test_no_dpg_trains_self_only_prompts(self, small_data):
        model, _ = train(fresh_model(), small_data, TrainConfig(epochs=2, ablation="no_dpg"))
        batch = TrainingBatch([(s.visual, s.language) for s in small_data[:2]])
        _, grads = backward(model, batch, LossConfig(k=0))
        # a single-frame window has constant attention, so queries and keys get no signal
        assert not grads["w_q"].any() and not grads["w_k"].any()

    def test_non_finite_loss_aborts(self, small_data):
        bad = [(s.visual.copy(), s.language) for s in small_data[:4]]
        bad[2][0][1, 1] = np.nan
        with pytest.raises(NonFiniteLossError, match=r"epoch 1, batch \d"):
            train(fresh_model(), bad, TrainConfig(epochs=2, batch_size=2))

    def test_empty_dataset(self):
        with pytest.raises(EmptyInputError):
            train(fresh_model(), [], TrainConfig(epochs=1))


class TestCheckpoint:
    def test_round_trip_is_byte_exact(self, tmp_path):
        model = fresh_model(3)
        model.mask_token[:] = np.linspace(-1, 1, 5)
        p1, p2 = tmp_path / "a.tsdp", tmp_path / "b.tsdp"
        save_checkpoint(model, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_model_gives_identical_losses(self, tmp_path, small_data):
        model = fresh_model(4)
        save_checkpoint(model, tmp_path / "m.tsdp")
        back = load_checkpoint(tmp_path / "m.tsdp")
        batch = TrainingBatch([(s.visual, s.language) for s in small_data[:3]], [{0}, {2, 3}, set()])
        assert forward_losses(model, batch, LossConfig()) == forward_losses(back, batch, LossConfig())

    def test_layout(self):
        data = checkpoint_bytes(fresh_model())
        assert data[:4] == b"TSDP"
        assert int.from_bytes(data[4:8], "little") == 1
        assert int.from_bytes(data[8:12], "little") == len(PARAM_NAMES)
        assert list(read_checkpoint(data)) == list(PARAM_NAMES)
        assert read_checkpoint(data)["mask_token"].shape == (1, 5)

    def test_bad_magic(self):
        data = bytearray(checkpoint_bytes(fresh_model()))
        data[0:4] = b"XXXX"
        with pytest.raises(MagicError):
            read_checkpoint(bytes(data))

    def test_bad_version(self):
        data = bytearray(checkpoint_bytes(fresh_model()))
        data[4:8] = (7).to_bytes(4, "little")
        with pytest.raises(VersionError):
            read_checkpoint(bytes(data))

    @pytest.mark.parametrize("cut", [2, 10, 30, -1])
    def test_truncation(self, cut):
        data = checkpoint_bytes(fresh_model())
        with pytest.raises(TruncationError):
            read_checkpoint(data[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(FormatError):
            read_checkpoint(checkpoint_bytes(fresh_model()) + b"\0")

    def test_errors_are_distinct(self):
        assert len({MagicError, VersionError, TruncationError}) == 3
        assert not issubclass(MagicError, TruncationError)
