"""Gradient and behavior tests for the autodiff core.

Every op gets a central finite-difference check in float64 at 1e-5
relative tolerance, per the numeric-core contract.
"""

import numpy as np
import pytest

import event2vec.autodiff as ad
from event2vec.autodiff import Tensor
from tests.gradcheck import assert_gradients_match, relative_error, numeric_grad


def leaf(rng, *shape, scale=1.0, positive=False, offset=0.0):
    data = rng.standard_normal(shape) * scale
    if positive:
        data = np.abs(data) + 0.5
    data = data + offset
    # keep relu/max inputs away from kinks
    data[np.abs(data) < 0.05] += 0.1
    return Tensor(data, requires_grad=True)


def project(t: Tensor, rng) -> Tensor:
    """Reduce any tensor to a scalar through a fixed random weighting."""
    w = Tensor(rng.standard_normal(t.shape))
    return ad.sum_(ad.mul(t, w))


class TestBackwardBasics:
    def test_sum_gradient_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ad.sum_(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_quadratic_gradient(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        ad.sum_(ad.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_fanout_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.add(ad.mul(x, 3.0), ad.mul(x, 4.0))
        ad.sum_(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()

    def test_graph_freed_after_backward(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = ad.sum_(ad.mul(x, x))
        y.backward()
        assert y._backward is None and y._parents == ()

    def test_no_grad_path_builds_no_graph(self):
        x = Tensor(np.ones(3))
        y = ad.mul(x, 2.0)
        assert not y.requires_grad and y._parents == ()


class TestElementwiseExamples:
    def test_relu_example(self):
        np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_softmax_single_element(self):
        np.testing.assert_allclose(ad.softmax(Tensor([[3.7]])).data, [[1.0]])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        y = ad.softmax(Tensor(rng.standard_normal((8, 16)) * 5))
        np.testing.assert_allclose(y.data.sum(-1), np.ones(8), atol=1e-12)

    def test_layer_norm_constant_row(self):
        x = Tensor(np.full((2, 5), 3.3))
        out = ad.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


OP_CASES = {}


def op_case(name):
    def register(fn):
        OP_CASES[name] = fn
        return fn
    return register


@op_case("add_broadcast")
def _(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    return lambda: ad.add(a, b), [a, b]


@op_case("sub")
def _(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 3)
    return lambda: ad.sub(a, b), [a, b]


@op_case("mul_broadcast")
def _(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 3, 1)
    return lambda: ad.mul(a, b), [a, b]


@op_case("div")
def _(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4, positive=True)
    return lambda: ad.div(a, b), [a, b]


@op_case("matmul_2d")
def _(rng):
    a, b = leaf(rng, 4, 5), leaf(rng, 5, 3)
    return lambda: ad.matmul(a, b), [a, b]


@op_case("matmul_nd_by_2d")
def _(rng):
    a, b = leaf(rng, 2, 3, 5), leaf(rng, 5, 4)
    return lambda: ad.matmul(a, b), [a, b]


@op_case("matmul_batched")
def _(rng):
    a, b = leaf(rng, 2, 3, 4, 5), leaf(rng, 2, 3, 5, 2)
    return lambda: ad.matmul(a, b), [a, b]


@op_case("relu")
def _(rng):
    x = leaf(rng, 3, 4)
    return lambda: ad.relu(x), [x]


@op_case("tanh")
def _(rng):
    x = leaf(rng, 3, 4)
    return lambda: ad.tanh(x), [x]


@op_case("sigmoid")
def _(rng):
    x = leaf(rng, 3, 4, scale=2.0)
    return lambda: ad.sigmoid(x), [x]


@op_case("exp")
def _(rng):
    x = leaf(rng, 3, 4)
    return lambda: ad.exp(x), [x]


@op_case("log")
def _(rng):
    x = leaf(rng, 3, 4, positive=True)
    return lambda: ad.log(x), [x]


@op_case("logsigmoid")
def _(rng):
    x = leaf(rng, 3, 4, scale=3.0)
    return lambda: ad.logsigmoid(x), [x]


@op_case("reshape")
def _(rng):
    x = leaf(rng, 3, 4)
    return lambda: ad.reshape(x, (2, 6)), [x]


@op_case("transpose")
def _(rng):
    x = leaf(rng, 2, 3, 4)
    return lambda: ad.transpose(x, (2, 0, 1)), [x]


@op_case("reverse")
def _(rng):
    x = leaf(rng, 3, 4)
    return lambda: ad.reverse(x, 1), [x]


@op_case("concat")
def _(rng):
    a, b = leaf(rng, 3, 2), leaf(rng, 3, 4)
    return lambda: ad.concat([a, b], -1), [a, b]


@op_case("repeat_heads")
def _(rng):
    x = leaf(rng, 2, 2, 3, 4)
    return lambda: ad.repeat_heads(x, 2), [x]


@op_case("sum_axis")
def _(rng):
    x = leaf(rng, 3, 4, 5)
    return lambda: ad.sum_(x, 1), [x]


@op_case("mean_axis_keepdims")
def _(rng):
    x = leaf(rng, 3, 4)
    return lambda: ad.mean(x, -1, True), [x]


@op_case("cumsum")
def _(rng):
    x = leaf(rng, 3, 5)
    return lambda: ad.cumsum(x, 1), [x]


@op_case("gather_rows_with_duplicates")
def _(rng):
    table = leaf(rng, 6, 4)
    idx = np.array([[0, 2, 2], [5, 0, 1]])
    return lambda: ad.gather_rows(table, idx), [table]


@op_case("masked_select_rows")
def _(rng):
    x = leaf(rng, 3, 4, 5)
    mask = np.random.default_rng(1).random((3, 4)) < 0.5
    return lambda: ad.masked_select_rows(x, mask), [x]


@op_case("layer_norm")
def _(rng):
    x, gain, bias = leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)
    return lambda: ad.layer_norm(x, gain, bias), [x, gain, bias]


@op_case("group_norm")
def _(rng):
    x, gain, bias = leaf(rng, 2, 3, 8), leaf(rng, 8), leaf(rng, 8)
    return lambda: ad.group_norm(x, gain, bias, groups=2), [x, gain, bias]


@op_case("softmax")
def _(rng):
    x = leaf(rng, 3, 7, scale=2.0)
    return lambda: ad.softmax(x), [x]


@op_case("decay_softmax")
def _(rng):
    scores = leaf(rng, 2, 2, 5, 5)
    c = leaf(rng, 2, 2, 5)
    return lambda: ad.decay_softmax(scores, c), [scores, c]


@op_case("depthwise_conv1d")
def _(rng):
    x, w, b = leaf(rng, 2, 6, 3), leaf(rng, 6, 3), leaf(rng, 6)
    return lambda: ad.depthwise_conv1d(x, w, b, multiplier=2), [x, w, b]


@op_case("avg_pool_even")
def _(rng):
    x = leaf(rng, 2, 6, 3)
    return lambda: ad.avg_pool_seq(x), [x]


@op_case("avg_pool_odd")
def _(rng):
    x = leaf(rng, 2, 5, 3)
    return lambda: ad.avg_pool_seq(x), [x]


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**31)
    build, params = OP_CASES[name](rng)
    wrng = np.random.default_rng(7)
    w = None

    def loss():
        nonlocal w
        out = build()
        if w is None:
            w = Tensor(wrng.standard_normal(out.shape))
        return ad.sum_(ad.mul(out, w))

    assert_gradients_match(loss, params, tol=1e-5)


class TestLossGradients:
    def test_mse_zero_at_equal(self):
        x = np.random.default_rng(2).random((3, 4))
        assert ad.mse(Tensor(x), Tensor(x.copy())).item() == 0.0

    def test_mse_gradient(self):
        rng = np.random.default_rng(3)
        pred, target = leaf(rng, 4, 3), Tensor(rng.standard_normal((4, 3)))
        assert_gradients_match(lambda: ad.mse(pred, target), [pred])

    def test_cross_entropy_uniform_logits(self):
        logits = Tensor(np.zeros((2, 10)))
        loss = ad.cross_entropy(logits, np.array([3, 7]))
        np.testing.assert_allclose(loss.item(), np.log(10), rtol=1e-12)

    def test_cross_entropy_smoothing_closed_form(self):
        # peaked logits: q = 0.9*onehot + 0.01; compare to direct formula
        rng = np.random.default_rng(4)
        logits_np = rng.standard_normal((4, 10)) * 3
        labels = np.array([0, 4, 9, 2])
        loss = ad.cross_entropy(Tensor(logits_np), labels, smoothing=0.1)
        z = logits_np - logits_np.max(-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
        q = np.full((4, 10), 0.01)
        q[np.arange(4), labels] += 0.9
        np.testing.assert_allclose(loss.item(), -(q * logp).sum() / 4, rtol=1e-12)

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(5)
        logits = leaf(rng, 5, 7)
        labels = np.array([0, 6, 3, 3, 1])
        assert_gradients_match(
            lambda: ad.cross_entropy(logits, labels, smoothing=0.1), [logits])

    def test_cross_entropy_label_range(self):
        with pytest.raises(ValueError):
            ad.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


class TestDecaySoftmax:
    def test_matches_composed_route(self):
        # same computation built from cumsum / add / softmax primitives
        rng = np.random.default_rng(6)
        L = 7
        scores = Tensor(rng.standard_normal((2, 3, L, L)), requires_grad=True)
        f_logit = Tensor(rng.standard_normal((2, 3, L)), requires_grad=True)

        c = ad.cumsum(ad.logsigmoid(f_logit), -1)
        fused = ad.decay_softmax(scores, c)

        c2 = ad.cumsum(ad.logsigmoid(f_logit), -1)
        bias = ad.sub(ad.reshape(c2, (2, 3, L, 1)), ad.reshape(c2, (2, 3, 1, L)))
        mask = np.triu(np.full((L, L), -1e30), k=1)
        composed = ad.softmax(ad.add(ad.add(scores, bias), Tensor(mask)))
        np.testing.assert_allclose(fused.data, composed.data, atol=1e-12)

        w = np.random.default_rng(7).standard_normal(fused.shape)
        ad.sum_(ad.mul(fused, Tensor(w))).backward()
        g_fused = (np.array(scores.grad), np.array(f_logit.grad))
        scores.grad = f_logit.grad = None
        ad.sum_(ad.mul(composed, Tensor(w))).backward()
        np.testing.assert_allclose(g_fused[0], scores.grad, atol=1e-10)
        np.testing.assert_allclose(g_fused[1], f_logit.grad, atol=1e-10)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        y = ad.decay_softmax(Tensor(rng.standard_normal((1, 2, 6, 6))),
                             Tensor(rng.standard_normal((1, 2, 6))))
        np.testing.assert_allclose(y.data.sum(-1), 1.0, atol=1e-12)

    def test_causality(self):
        rng = np.random.default_rng(9)
        y = ad.decay_softmax(Tensor(rng.standard_normal((1, 1, 5, 5))),
                             Tensor(rng.standard_normal((1, 1, 5))))
        upper = np.triu(np.ones((5, 5), bool), k=1)
        assert np.all(y.data[0, 0][upper] == 0.0)


class TestNumericHelpers:
    def test_relative_error_floor(self):
        assert relative_error(np.array([1e-9]), np.array([0.0])) < 1e-5

    def test_numeric_grad_linear(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        g = numeric_grad(lambda: float(3.0 * x.data[0] + 5.0 * x.data[1]), x)
        np.testing.assert_allclose(g, [3.0, 5.0], atol=1e-8)
