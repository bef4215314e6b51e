import numpy as np
import pytest

from dimemo.dsp import NormStats
from dimemo.errors import (
    DimensionMismatchError,
    ModelFormatError,
    TrainingDivergedError,
    ValidationError,
)
from dimemo.metrics import ccc_loss
from dimemo.neural import (
    ModelConfig,
    adam_step,
    backward,
    count_steps,
    forward,
    init_adam,
    init_model,
    load_model,
    parameter_count,
    restore_parameters,
    run_layers,
    save_model,
    snapshot_parameters,
)

from conftest import rng_for


def direction_params(d_in, w):
    # packed gates: W (4w, d_in), U (4w, w), b (4w,)
    return 4 * w * d_in + 4 * w * w + 4 * w


def expected_count(input_dim, widths):
    total = 0
    d_in = input_dim
    for w in widths:
        total += 2 * direction_params(d_in, w)
        d_in = 2 * w
    return total + d_in + 1  # linear head


def tiny_model(input_dim=3, widths=(3, 2), seed=0):
    return init_model(ModelConfig(input_dim=input_dim, widths=widths, seed=seed))


def batch_loss(model, batch, refs):
    preds = np.concatenate([forward(model, x) for x in batch])
    return ccc_loss(preds, np.concatenate(refs))


class TestInit:
    def test_deterministic(self):
        a = tiny_model(seed=4)
        b = tiny_model(seed=4)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa, pb)

    def test_seed_changes_weights(self):
        a = tiny_model(seed=4)
        b = tiny_model(seed=5)
        assert not np.array_equal(a.layers[0].fwd.w, b.layers[0].fwd.w)

    def test_parameter_count_hand_case(self):
        # input 3, one layer of width 2 per direction:
        # per direction 4*2*(3+2) + 4*2 = 48, both directions 96, head 4+1
        model = tiny_model(widths=(2,))
        assert parameter_count(model) == 101

    def test_parameter_count_formula(self):
        for widths in [(2,), (3, 2), (4, 4, 2), (5, 3, 3, 2)]:
            model = tiny_model(input_dim=6, widths=widths)
            assert parameter_count(model) == expected_count(6, widths)

    def test_total_units_split_across_directions(self):
        per_dir = init_model(ModelConfig(input_dim=3, widths=(2, 2)))
        total = init_model(ModelConfig(input_dim=3, widths=(4, 4), units_are_total=True))
        assert parameter_count(per_dir) == parameter_count(total)
        assert total.layers[0].width == 2

    def test_odd_total_units_rejected(self):
        with pytest.raises(ValidationError):
            ModelConfig(input_dim=3, widths=(3,), units_are_total=True)

    def test_forget_gate_bias_starts_open(self):
        model = tiny_model(widths=(5,))
        b = model.layers[0].fwd.b
        assert np.array_equal(b[5:10], np.ones(5))
        assert np.max(np.abs(b[:5])) == 0.0
        assert np.max(np.abs(b[10:])) == 0.0

    def test_init_ranges_follow_fan_in(self):
        model = tiny_model(input_dim=16, widths=(9,))
        d = model.layers[0].fwd
        assert np.max(np.abs(d.w)) <= 1.0 / 4.0
        assert np.max(np.abs(d.u)) <= 1.0 / 3.0


class TestForward:
    def test_output_shape(self):
        model = tiny_model()
        x = rng_for("fwd-shape").normal(0, 1, (11, 3))
        pred = forward(model, x)
        assert pred.shape == (11,)
        assert pred.dtype == np.float64

    def test_zero_weights_output_bias(self):
        model = tiny_model()
        for _, arr in model.named_parameters():
            arr[...] = 0.0
        model.out_b[0] = 0.7
        x = rng_for("fwd-bias").normal(0, 1, (6, 3))
        assert np.allclose(forward(model, x), 0.7, atol=1e-15)

    def test_direction_swap_symmetry(self):
        # swapping the two directions' weights, the matching halves of the
        # head, and reversing time must exactly reverse the predictions
        model = tiny_model(widths=(4,), seed=9)
        x = rng_for("fwd-swap").normal(0, 1, (13, 3))
        base = forward(model, x)

        swapped = tiny_model(widths=(4,), seed=9)
        layer = swapped.layers[0]
        layer.fwd, layer.bwd = layer.bwd, layer.fwd
        w = 4
        swapped.out_w = np.concatenate([model.out_w[w:], model.out_w[:w]])
        assert np.allclose(forward(swapped, x[::-1]), base[::-1], atol=1e-12)

    def test_hidden_states_stay_bounded_on_long_input(self):
        model = tiny_model(widths=(6, 4), seed=2)
        x = rng_for("fwd-long").normal(0, 3, (5000, 3))
        last, _ = run_layers(model.layers, x, need_cache=False)
        assert np.all(np.isfinite(last))
        # h = o * tanh(c) with sigmoid o keeps every unit inside (-1, 1)
        assert np.max(np.abs(last)) < 1.0

    def test_normalization_is_inside_the_model(self):
        model = tiny_model(widths=(3,))
        rng = rng_for("fwd-norm")
        x = rng.normal(5.0, 3.0, (20, 3))
        base = forward(model, x)
        model.norm = NormStats(mean=np.full(3, 5.0), std=np.full(3, 3.0))
        shifted = forward(model, x)
        assert not np.allclose(base, shifted)
        # feeding pre-standardized input to the identity-norm model matches
        plain = tiny_model(widths=(3,))
        assert np.allclose(forward(plain, (x - 5.0) / 3.0), shifted, atol=1e-12)

    def test_wrong_dim_rejected(self):
        model = tiny_model()
        with pytest.raises(DimensionMismatchError):
            forward(model, np.zeros((4, 7)))

    def test_empty_stream_rejected(self):
        model = tiny_model()
        with pytest.raises(ValidationError):
            forward(model, np.zeros((0, 3)))

    def test_step_counter(self):
        model = tiny_model()
        rng = rng_for("steps")
        with count_steps() as counter:
            forward(model, rng.normal(0, 1, (7, 3)))
            forward(model, rng.normal(0, 1, (9, 3)))
        assert counter.steps == 16

    def test_precision_env_var(self, monkeypatch):
        model = tiny_model(widths=(4, 3), seed=1)
        x = rng_for("precision").normal(0, 1, (40, 3))
        monkeypatch.delenv("DIMEMO_PRECISION", raising=False)
        full = forward(model, x)
        monkeypatch.setenv("DIMEMO_PRECISION", "f32")
        half = forward(model, x)
        assert half.dtype == np.float64
        assert not np.array_equal(full, half)
        assert np.max(np.abs(full - half)) < 1e-3
        monkeypatch.setenv("DIMEMO_PRECISION", "bogus")
        with pytest.raises(ValidationError):
            forward(model, x)


class TestBackward:
    def test_loss_matches_forward_loss(self):
        model = tiny_model(seed=3)
        rng = rng_for("bwd-loss")
        batch = [rng.normal(0, 1, (8, 3)), rng.normal(0, 1, (5, 3))]
        refs = [rng.uniform(0, 1, 8), rng.uniform(0, 1, 5)]
        _, loss = backward(model, batch, refs)
        assert loss == pytest.approx(batch_loss(model, batch, refs), abs=1e-12)

    def test_gradients_match_finite_differences(self):
        model = tiny_model(input_dim=3, widths=(3, 2), seed=7)
        rng = rng_for("bwd-fd")
        batch = [rng.normal(0, 1, (7, 3)), rng.normal(0, 1, (4, 3))]
        refs = [rng.uniform(0, 1, 7), rng.uniform(0, 1, 4)]
        grads, _ = backward(model, batch, refs)
        h = 1e-5
        for name, param in model.named_parameters():
            numeric = np.zeros_like(param)
            flat_p = param.reshape(-1)
            flat_n = numeric.reshape(-1)
            for j in range(flat_p.size):
                keep = flat_p[j]
                flat_p[j] = keep + h
                up = batch_loss(model, batch, refs)
                flat_p[j] = keep - h
                down = batch_loss(model, batch, refs)
                flat_p[j] = keep
                flat_n[j] = (up - down) / (2 * h)
            a, n = grads[name], numeric
            block = np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
            assert block <= 1e-4, f"{name}: block error {block:.3e}"

    def test_gradient_keys_cover_all_parameters(self):
        model = tiny_model()
        rng = rng_for("bwd-keys")
        grads, _ = backward(model, [rng.normal(0, 1, (6, 3))], [rng.uniform(0, 1, 6)])
        names = {name for name, _ in model.named_parameters()}
        assert set(grads) == names
        for name, param in model.named_parameters():
            assert grads[name].shape == param.shape

    def test_unreachable_direction_gets_zero_gradient(self):
        # silence the backward half of the head: the last layer's backward
        # direction no longer reaches the output, so its gradients vanish
        model = tiny_model(input_dim=3, widths=(3, 2), seed=1)
        model.out_w[2:] = 0.0
        rng = rng_for("bwd-cut")
        grads, _ = backward(model, [rng.normal(0, 1, (9, 3))], [rng.uniform(0, 1, 9)])
        for part in ("w", "u", "b"):
            assert np.max(np.abs(grads[f"layer1.bwd.{part}"])) == 0.0
            assert np.max(np.abs(grads[f"layer1.fwd.{part}"])) > 0.0
        # earlier layers still feed the forward direction of the last layer
        assert np.max(np.abs(grads["layer0.bwd.w"])) > 0.0

    def test_length_mismatch_rejected(self):
        model = tiny_model()
        with pytest.raises(ValidationError):
            backward(model, [np.zeros((4, 3))], [np.zeros(5)])

    def test_diverged_model_detected(self):
        model = tiny_model()
        model.layers[0].fwd.w[...] = np.nan
        rng = rng_for("bwd-nan")
        with pytest.raises(TrainingDivergedError):
            backward(model, [rng.normal(0, 1, (4, 3))], [rng.uniform(0, 1, 4)])


def reference_adam(params, grad_fn, steps, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook reference implementation on detached copies."""
    params = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(val) for k, val in params.items()}
    for t in range(1, steps + 1):
        grads = grad_fn(params, t)
        for k in params:
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
            mhat = m[k] / (1 - b1**t)
            vhat = v[k] / (1 - b2**t)
            params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return params


class TestAdam:
    def test_first_step_hand_value(self):
        model = tiny_model(widths=(2,))
        state = init_adam(model)
        before = model.out_b.copy()
        grads = {name: np.zeros_like(p) for name, p in model.named_parameters()}
        grads["out.b"] = np.array([0.3])
        adam_step(model, grads, state)
        # bias-corrected first step: lr * g / (|g| + eps)
        expected = 0.001 * 0.3 / (0.3 + 1e-8)
        assert model.out_b[0] == pytest.approx(before[0] - expected, abs=1e-12)

    def test_zero_gradient_is_a_no_op(self):
        model = tiny_model(widths=(2,))
        state = init_adam(model)
        snap = snapshot_parameters(model)
        grads = {name: np.zeros_like(p) for name, p in model.named_parameters()}
        adam_step(model, grads, state)
        for name, param in model.named_parameters():
            assert np.array_equal(param, snap[name])

    def test_matches_reference_over_steps(self):
        model = tiny_model(widths=(2,), seed=6)
        state = init_adam(model, lr=0.01)
        start = snapshot_parameters(model)
        rng = rng_for("adam-ref")
        sequences = [
            {name: rng.normal(0, 1, p.shape) for name, p in model.named_parameters()}
            for _ in range(5)
        ]
        for grads in sequences:
            adam_step(model, grads, state)
        expected = reference_adam(start, lambda p, t: sequences[t - 1], 5, lr=0.01)
        for name, param in model.named_parameters():
            assert np.allclose(param, expected[name], atol=1e-14)

    def test_nonfinite_gradient_rejected(self):
        model = tiny_model(widths=(2,))
        state = init_adam(model)
        grads = {name: np.zeros_like(p) for name, p in model.named_parameters()}
        grads["out.w"] = np.full_like(model.out_w, np.inf)
        with pytest.raises(TrainingDivergedError):
            adam_step(model, grads, state)

    def test_missing_gradient_rejected(self):
        model = tiny_model(widths=(2,))
        state = init_adam(model)
        with pytest.raises(ValidationError):
            adam_step(model, {}, state)


class TestSnapshots:
    def test_restore_round_trip(self):
        model = tiny_model()
        snap = snapshot_parameters(model)
        for _, arr in model.named_parameters():
            arr += 1.0
        restore_parameters(model, snap)
        fresh = tiny_model()
        for (_, a), (_, b) in zip(model.named_parameters(), fresh.named_parameters()):
            assert np.array_equal(a, b)

    def test_snapshot_is_detached(self):
        model = tiny_model()
        snap = snapshot_parameters(model)
        model.out_w += 5.0
        assert not np.array_equal(snap["out.w"], model.out_w)


class TestModelFiles:
    def test_round_trip_bitwise(self, tmp_path):
        model = tiny_model(input_dim=4, widths=(3, 2), seed=11)
        rng = rng_for("model-io")
        model.norm = NormStats(mean=rng.normal(0, 1, 4), std=rng.uniform(0.5, 2.0, 4))
        path = tmp_path / "m.dmdl"
        save_model(model, path)
        back = load_model(path)
        assert back.config == model.config
        assert np.array_equal(back.norm.mean, model.norm.mean)
        assert np.array_equal(back.norm.std, model.norm.std)
        for (na, a), (nb, b) in zip(model.named_parameters(), back.named_parameters()):
            assert na == nb
            assert np.array_equal(a, b)
        x = rng.normal(0, 1, (9, 4))
        assert np.array_equal(forward(model, x), forward(back, x))

    def test_saved_twice_is_identical(self, tmp_path):
        model = tiny_model(seed=2)
        p1, p2 = tmp_path / "a.dmdl", tmp_path / "b.dmdl"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_names_block(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.dmdl"
        save_model(model, path)
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(ModelFormatError) as err:
            load_model(path)
        assert "truncated" in str(err.value)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.dmdl"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ModelFormatError):
            load_model(path)
