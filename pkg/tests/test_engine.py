import math

import numpy as np
import pytest

from roofgen import engine
from roofgen.engine import (
    AdamState,
    Tensor,
    adam_step,
    add,
    concat,
    conv2d,
    cross_entropy,
    dropout,
    embedding_lookup,
    gelu,
    layer_norm,
    load_checkpoint,
    matmul,
    mean_,
    multiply,
    relu,
    reshape,
    rng_stream,
    save_checkpoint,
    softmax,
    sum_,
    transpose,
)
from roofgen.errors import MissingGrad, ShapeError


def numeric_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued fn at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn()
        flat[i] = orig - h
        lo = fn()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def check_grad(build, *tensors, rtol=1e-4, atol=1e-6):
    """build() -> scalar Tensor; checks analytic vs numeric for each input."""
    loss = build()
    for t in tensors:
        t.zero_grad()
    loss = build()
    loss.backward()
    for t in tensors:
        got = t.grad.copy()
        want = numeric_grad(lambda: build().item(), t.data)
        np.testing.assert_allclose(got, want, rtol=rtol, atol=atol)


def rand_param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestForward:
    def test_softmax_uniform(self):
        y = softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(y.data, [1 / 3] * 3)

    def test_softmax_rows_sum_to_one(self, rng):
        y = softmax(Tensor(rng.normal(size=(4, 9)) * 30), axis=-1)
        assert np.all(y.data >= 0)
        assert np.allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_cross_entropy_uniform(self):
        k = 7
        loss = cross_entropy(Tensor(np.zeros((3, k))), np.array([0, 3, 6]))
        assert loss.item() == pytest.approx(math.log(k), abs=1e-12)

    def test_matmul_shape(self, rng):
        out = matmul(rand_param(rng, 2, 3), rand_param(rng, 3, 4))
        assert out.shape == (2, 4)

    def test_matmul_shape_error(self, rng):
        with pytest.raises(ShapeError):
            matmul(rand_param(rng, 2, 3), rand_param(rng, 4, 4))

    def test_add_shape_error(self, rng):
        with pytest.raises(ShapeError):
            add(rand_param(rng, 2, 3), rand_param(rng, 4))

    def test_dropout_eval_identity(self, rng):
        x = rand_param(rng, 5, 5)
        y = dropout(x, 0.5, train=False, rng=rng_stream(0, "d"))
        assert np.array_equal(y.data, x.data)

    def test_dropout_preserves_mean(self):
        x = Tensor(np.ones(200_000))
        y = dropout(x, 0.3, train=True, rng=rng_stream(0, "drop"))
        # mean of inverted dropout stays 1 within 3 sigma
        p = 0.7
        sigma = math.sqrt((1 / p - 1) / x.size)
        assert abs(y.data.mean() - 1.0) < 3 * sigma

    def test_dropout_bad_rate(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 1.0, True, rng_stream(0))

    def test_embedding_range_check(self, rng):
        with pytest.raises(ShapeError):
            embedding_lookup(rand_param(rng, 4, 8), [5])


class TestGradients:
    def test_sum_gives_ones(self, rng):
        p = rand_param(rng, 3, 3)
        sum_(p).backward()
        assert np.array_equal(p.grad, np.ones((3, 3)))

    def test_sum_of_squares(self, rng):
        p = rand_param(rng, 4)
        sum_(multiply(p, p)).backward()
        assert np.allclose(p.grad, 2 * p.data)

    def test_backward_accumulates_until_zero_grad(self, rng):
        p = rand_param(rng, 2)
        sum_(p).backward()
        sum_(p).backward()
        assert np.allclose(p.grad, 2.0)
        p.zero_grad()
        sum_(p).backward()
        assert np.allclose(p.grad, 1.0)

    def test_non_scalar_backward_raises(self, rng):
        with pytest.raises(ShapeError):
            rand_param(rng, 3).backward()

    def test_add_broadcast(self, rng):
        a, b = rand_param(rng, 3, 4), rand_param(rng, 4)
        check_grad(lambda: sum_(multiply(add(a, b), add(a, b))), a, b)

    def test_multiply(self, rng):
        a, b = rand_param(rng, 3, 4), rand_param(rng, 3, 4)
        check_grad(lambda: sum_(multiply(a, b)), a, b)

    def test_matmul(self, rng):
        a, b = rand_param(rng, 3, 4), rand_param(rng, 4, 5)
        r = Tensor(rng.normal(size=(3, 5)))
        check_grad(lambda: sum_(multiply(matmul(a, b), r)), a, b)

    def test_matmul_batched(self, rng):
        a, b = rand_param(rng, 2, 3, 4), rand_param(rng, 2, 4, 5)
        check_grad(lambda: sum_(multiply(matmul(a, b), 0.3)), a, b)

    def test_matmul_broadcast_weight(self, rng):
        a, b = rand_param(rng, 2, 3, 4), rand_param(rng, 4, 5)
        check_grad(lambda: sum_(multiply(matmul(a, b), 0.3)), a, b)

    def test_relu(self, rng):
        a = Tensor(rng.normal(size=(4, 4)) + 0.05, requires_grad=True)
        check_grad(lambda: sum_(multiply(relu(a), relu(a))), a)

    def test_gelu(self, rng):
        a = rand_param(rng, 4, 4)
        check_grad(lambda: sum_(gelu(a)), a)

    def test_softmax(self, rng):
        a = rand_param(rng, 3, 6)
        r = Tensor(rng.normal(size=(3, 6)))
        check_grad(lambda: sum_(multiply(softmax(a, axis=-1), r)), a)

    def test_layer_norm(self, rng):
        x = rand_param(rng, 3, 8)
        gain = rand_param(rng, 8)
        bias = rand_param(rng, 8)
        r = Tensor(rng.normal(size=(3, 8)))
        check_grad(lambda: sum_(multiply(layer_norm(x, gain, bias), r)),
                   x, gain, bias)

    def test_embedding(self, rng):
        table = rand_param(rng, 6, 4)
        idx = np.array([0, 2, 2, 5])
        r = Tensor(rng.normal(size=(4, 4)))
        check_grad(lambda: sum_(multiply(embedding_lookup(table, idx), r)), table)

    def test_concat(self, rng):
        a, b = rand_param(rng, 2, 3), rand_param(rng, 2, 5)
        r = Tensor(rng.normal(size=(2, 8)))
        check_grad(lambda: sum_(multiply(concat([a, b], axis=1), r)), a, b)

    def test_slice(self, rng):
        a = rand_param(rng, 4, 6)
        r = Tensor(rng.normal(size=(2, 3)))
        check_grad(lambda: sum_(multiply(a[1:3, :3], r)), a)

    def test_reshape_transpose(self, rng):
        a = rand_param(rng, 3, 4)
        r = Tensor(rng.normal(size=(4, 3)))
        check_grad(
            lambda: sum_(multiply(transpose(reshape(a, (3, 4)), (1, 0)), r)), a)

    def test_mean(self, rng):
        a = rand_param(rng, 5, 5)
        check_grad(lambda: mean_(multiply(a, a)), a)

    def test_dropout_train_mode(self, rng):
        a = rand_param(rng, 6, 6)
        # same mask each rebuild: fixed stream per call
        check_grad(
            lambda: sum_(multiply(dropout(a, 0.4, True, rng_stream(7, "x")),
                                  dropout(a, 0.4, True, rng_stream(7, "x")))), a)

    def test_cross_entropy(self, rng):
        logits = rand_param(rng, 5, 7)
        targets = np.array([0, 6, 3, 2, 1])
        check_grad(lambda: cross_entropy(logits, targets), logits)

    def test_cross_entropy_ignore_index(self, rng):
        logits = rand_param(rng, 6, 5)
        targets = np.array([0, -1, 3, -1, 1, 4])
        check_grad(lambda: cross_entropy(logits, targets, ignore_index=-1), logits)

    def test_conv2d(self, rng):
        x = rand_param(rng, 2, 3, 6, 6)
        w = rand_param(rng, 4, 3, 3, 3)
        b = rand_param(rng, 4)
        r = Tensor(rng.normal(size=(2, 4, 3, 3)))
        check_grad(
            lambda: sum_(multiply(conv2d(x, w, b, stride=2, pad=1), r)), x, w, b)

    def test_conv2d_stride1_nopad(self, rng):
        x = rand_param(rng, 1, 2, 5, 5)
        w = rand_param(rng, 3, 2, 3, 3)
        r = Tensor(rng.normal(size=(1, 3, 3, 3)))
        check_grad(lambda: sum_(multiply(conv2d(x, w), r)), x, w)

    def test_composite_graph(self, rng):
        # a little network: linear -> gelu -> layernorm -> linear -> ce
        x = Tensor(rng.normal(size=(3, 5)))
        w1, b1 = rand_param(rng, 5, 8), rand_param(rng, 8)
        gain, bias = rand_param(rng, 8), rand_param(rng, 8)
        w2 = rand_param(rng, 8, 4)
        tgt = np.array([0, 1, 3])

        def build():
            h = gelu(add(matmul(x, w1), b1))
            h = layer_norm(h, gain, bias)
            return cross_entropy(matmul(h, w2), tgt)

        check_grad(build, w1, b1, gain, bias, w2)


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        state = AdamState(learning_rate=0.1)
        adam_step({"p": p}, state)
        assert np.array_equal(p.data, [1.0, 2.0])

    def test_first_step_magnitude(self):
        # constant gradient: bias-corrected first step is -lr * g/(|g| + eps)
        g = 0.37
        lr = 2e-5
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([g])
        state = AdamState()
        adam_step({"p": p}, state)
        expected = 1.0 - lr * g / (abs(g) + state.epsilon)
        assert p.data[0] == pytest.approx(expected, abs=1e-9)

    def test_missing_grad(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(MissingGrad):
            adam_step({"p": p}, AdamState())

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(3)
            p = Tensor(rng.normal(size=4), requires_grad=True)
            state = AdamState(learning_rate=1e-2)
            for _ in range(10):
                loss = sum_(multiply(p, p))
                p.zero_grad()
                loss.backward()
                adam_step({"p": p}, state)
            return p.data.copy()

        assert np.array_equal(run(), run())

    def test_defaults_match_training_recipe(self):
        state = AdamState()
        assert state.learning_rate == 2e-5
        assert state.beta1 == 0.9
        assert state.beta2 == 0.99


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        params = {
            "enc.w": rand_param(rng, 4, 4),
            "enc.b": rand_param(rng, 4),
            "scalar": Tensor(np.array(3.25), requires_grad=True),
        }
        meta = {"seed": 11, "hidden": 16, "init": "normal(0.02)"}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, meta)
        loaded, got_meta = load_checkpoint(path)
        assert got_meta == meta
        assert list(loaded) == list(params)
        for name in params:
            assert np.array_equal(loaded[name].data, params[name].data)

    def test_save_is_stable(self, tmp_path, rng):
        params = {"w": rand_param(rng, 3, 3)}
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, params, {"k": 1})
        save_checkpoint(p2, params, {"k": 1})
        assert p1.read_bytes() == p2.read_bytes()


def test_rng_stream_stable():
    a = rng_stream(5, "dropout", 3).random(4)
    b = rng_stream(5, "dropout", 3).random(4)
    c = rng_stream(5, "dropout", 4).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
