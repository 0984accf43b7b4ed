"""Autodiff engine: per-op finite-difference checks and graph mechanics."""

import numpy as np
import pytest

from episource.nnet import autodiff as ad


def numeric_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    grad = out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn()
        flat[i] = keep - h
        down = fn()
        flat[i] = keep
        grad[i] = (up - down) / (2 * h)
    return out


def check_op(build, *shapes, seed=0):
    """FD-check d(sum of op output)/d(input) for every input tensor."""
    rng = np.random.default_rng(seed)
    tensors = [ad.Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
    out = build(*tensors)
    loss = ad.mean(ad.mul(out, out))
    loss.backward()
    for t in tensors:
        def value():
            o = build(*tensors)
            return float(ad.mean(ad.mul(o, o)).data)
        fd = numeric_grad(value, t.data)
        assert np.allclose(t.grad, fd, rtol=1e-5, atol=1e-7), build.__name__


class TestOpGradients:
    def test_add_broadcast(self):
        check_op(lambda a, b: ad.add(a, b), (2, 3, 4), (4,))

    def test_sub(self):
        check_op(lambda a, b: ad.sub(a, b), (3, 4), (3, 4))

    def test_mul_broadcast(self):
        check_op(lambda a, b: ad.mul(a, b), (2, 3), (1, 3))

    def test_div(self):
        rng = np.random.default_rng(1)
        a = ad.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        b = ad.Tensor(rng.uniform(1.0, 2.0, size=(3, 3)), requires_grad=True)
        out = ad.div(a, b)
        loss = ad.mean(ad.mul(out, out))
        loss.backward()
        fd_a = numeric_grad(lambda: float(ad.mean(ad.mul(ad.div(a, b),
                                                         ad.div(a, b))).data), a.data)
        assert np.allclose(a.grad, fd_a, rtol=1e-5, atol=1e-7)

    def test_matmul_2d(self):
        check_op(lambda a, b: ad.matmul(a, b), (3, 4), (4, 2))

    def test_matmul_batched_adjacency(self):
        # (N, N) @ (B, N, F): the aggregation pattern
        check_op(lambda a, b: ad.matmul(a, b), (4, 4), (2, 4, 3))

    def test_square_sqrt(self):
        rng = np.random.default_rng(2)
        a = ad.Tensor(rng.uniform(0.5, 2.0, size=(4,)), requires_grad=True)
        out = ad.sqrt(ad.square(a))
        loss = ad.mean(out)
        loss.backward()
        fd = numeric_grad(lambda: float(ad.mean(ad.sqrt(ad.square(a))).data), a.data)
        assert np.allclose(a.grad, fd, rtol=1e-6)

    def test_mean_axes(self):
        check_op(lambda a: ad.mean(a, axis=(0, 1), keepdims=True), (3, 4, 2))
        check_op(lambda a: ad.mean(a, axis=1), (3, 5))
        check_op(lambda a: ad.mean(a), (4, 2))

    def test_prelu_both_inputs(self):
        rng = np.random.default_rng(3)
        x = ad.Tensor(rng.normal(size=(3, 4)) + 0.05, requires_grad=True)
        slope = ad.Tensor(np.array([0.3]), requires_grad=True)
        loss = ad.mean(ad.square(ad.prelu(x, slope)))
        loss.backward()
        fd_x = numeric_grad(lambda: float(
            ad.mean(ad.square(ad.prelu(x, slope))).data), x.data)
        fd_s = numeric_grad(lambda: float(
            ad.mean(ad.square(ad.prelu(x, slope))).data), slope.data)
        assert np.allclose(x.grad, fd_x, rtol=1e-5, atol=1e-8)
        assert np.allclose(slope.grad, fd_s, rtol=1e-5, atol=1e-8)

    def test_prelu_values(self):
        x = ad.Tensor(np.array([-1.0, 0.0, 2.0]))
        out = ad.prelu(x, ad.Tensor(np.array([0.25])))
        assert out.data.tolist() == [-0.25, 0.0, 2.0]

    def test_concat(self):
        check_op(lambda a, b: ad.concat([a, b], axis=-1), (2, 3), (2, 2))

    def test_log_softmax_grad(self):
        check_op(lambda a: ad.log_softmax(a, axis=1), (3, 5))

    def test_log_softmax_normalizes(self):
        rng = np.random.default_rng(4)
        x = ad.Tensor(rng.normal(size=(6, 9)) * 30)
        out = ad.log_softmax(x, axis=1)
        sums = np.exp(out.data).sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-12)

    def test_log_softmax_sorted_sum_is_permutation_stable(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 40))
        perm = rng.permutation(40)
        a = ad.log_softmax(ad.Tensor(x), axis=1).data[0]
        b = ad.log_softmax(ad.Tensor(x[:, perm]), axis=1).data[0]
        assert np.array_equal(a[perm], b)

    def test_gather_rows(self):
        rng = np.random.default_rng(6)
        x = ad.Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        idx = np.array([0, 3, 3, 1])
        out = ad.gather_rows(x, idx)
        assert out.data.tolist() == [x.data[0, 0], x.data[1, 3],
                                     x.data[2, 3], x.data[3, 1]]
        ad.mean(out).backward()
        expected = np.zeros((4, 5))
        expected[np.arange(4), idx] = 0.25
        assert np.allclose(x.grad, expected)

    def test_slice_axis1(self):
        check_op(lambda a: ad.slice_axis1(a, 1, 3), (2, 5, 3))

    def test_neg_mean(self):
        x = ad.Tensor(np.array([1.0, 2.0, 6.0]), requires_grad=True)
        loss = ad.neg_mean(x)
        assert loss.data == -3.0
        loss.backward()
        assert np.allclose(x.grad, [-1 / 3, -1 / 3, -1 / 3])


class TestGraphMechanics:
    def test_grad_accumulates_once_per_use(self):
        x = ad.Tensor(np.array([2.0]), requires_grad=True)
        y = ad.add(ad.mul(x, 3.0), ad.mul(x, 4.0))   # 7x
        ad.mean(y).backward()
        assert x.grad.tolist() == [7.0]

    def test_diamond_graph(self):
        x = ad.Tensor(np.array([1.5]), requires_grad=True)
        a = ad.mul(x, x)          # x^2
        b = ad.add(a, a)          # 2 x^2, reuses the same node twice
        ad.mean(b).backward()
        assert np.allclose(x.grad, [4 * 1.5])

    def test_backward_requires_scalar(self):
        x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()

    def test_no_grad_tracking_without_requires_grad(self):
        x = ad.Tensor(np.ones(3))
        y = ad.mul(x, 2.0)
        assert not y.requires_grad
        assert y._backward is None

    def test_detach_blocks_gradient(self):
        x = ad.Tensor(np.array([3.0]), requires_grad=True)
        y = ad.mul(x.detach(), 5.0)
        assert not y.requires_grad
