"""Layer semantics, equivariance, batching, and bundle persistence."""

import numpy as np
import pytest

from episource import netgraph
from episource.nnet import (ModelBundle, ModelConfig, adjacency_matrix,
                            build_stack, forward_log_probs, input_features,
                            predict)
from episource.nnet.autodiff import Tensor
from episource.nnet.layers import (BatchNorm, DenseLayer, LayerStack,
                                   MessagePassingLayer, OutputHead, dropout)
from episource.epidemics import Snapshot
from conftest import random_connected_graph


def identity_dense(n: int) -> DenseLayer:
    rng = np.random.default_rng(0)
    layer = DenseLayer.init(rng, n, n, use_bn=False)
    layer.lin.weight.data = np.eye(n)
    layer.lin.bias.data = np.zeros(n)
    return layer


class TestDenseLayer:
    def test_identity_weights_prelu_quarter(self):
        layer = identity_dense(3)
        out = layer(Tensor(np.array([[[-1.0, 0.5, -4.0]]])), training=False)
        assert out.data[0, 0].tolist() == [-0.25, 0.5, -1.0]

    def test_zero_input_zero_bias(self):
        layer = identity_dense(2)
        out = layer(Tensor(np.zeros((1, 3, 2))), training=False)
        assert np.all(out.data == 0.0)

    def test_batchnorm_training_moments(self):
        rng = np.random.default_rng(1)
        bn = BatchNorm.init(4)
        shift, scale = 0.7, 1.9
        bn.beta.data = np.full(4, shift)
        bn.gamma.data = np.full(4, scale)
        x = Tensor(rng.normal(loc=3.0, scale=2.5, size=(6, 5, 4)))
        out = bn(x, training=True).data
        assert np.allclose(out.mean(axis=(0, 1)), shift, atol=1e-9)
        # the epsilon inside the normalizer shrinks the variance by ~eps/var
        assert np.allclose(out.var(axis=(0, 1)), scale**2, rtol=1e-5)

    def test_batchnorm_eval_uses_running_stats(self):
        bn = BatchNorm.init(2)
        bn.running_mean = np.array([1.0, -1.0])
        bn.running_var = np.array([4.0, 0.25])
        x = Tensor(np.array([[[3.0, 0.0]]]))
        out = bn(x, training=False).data[0, 0]
        assert np.allclose(out, [(3 - 1) / np.sqrt(4 + 1e-5),
                                 (0 + 1) / np.sqrt(0.25 + 1e-5)])

    def test_running_stats_update(self):
        bn = BatchNorm.init(1)
        x = Tensor(np.full((2, 2, 1), 10.0))
        bn(x, training=True)
        assert np.allclose(bn.running_mean, [1.0])   # 0.9 * 0 + 0.1 * 10


class TestMessagePassing:
    @staticmethod
    def passthrough(n_in: int) -> MessagePassingLayer:
        rng = np.random.default_rng(0)
        layer = MessagePassingLayer.init(rng, n_in, n_in, use_bn=False)
        layer.w_self.data = np.zeros((n_in, n_in))
        layer.w_nbr.data = np.eye(n_in)
        layer.bias.data = np.zeros(n_in)
        layer.slope.data = np.array([1.0])    # PReLU with slope 1 == identity
        return layer

    def test_path_aggregation_sums_neighbors(self, path3):
        layer = self.passthrough(2)
        adj = Tensor(adjacency_matrix(path3))
        h = np.array([[[1.0, 2.0], [10.0, 20.0], [100.0, 200.0]]])
        out = layer(Tensor(h), adj, training=False).data
        assert out[0, 1].tolist() == [101.0, 202.0]   # h_0 + h_2
        assert out[0, 0].tolist() == [10.0, 20.0]
        assert out[0, 2].tolist() == [10.0, 20.0]

    def test_isolated_node_gets_zero_aggregate(self):
        g, _ = netgraph.induced_subgraph(netgraph.load_edge_list("a b\nb c"), [0, 2])
        rng = np.random.default_rng(2)
        layer = MessagePassingLayer.init(rng, 2, 3, use_bn=False)
        adj = Tensor(adjacency_matrix(g))
        h = rng.normal(size=(1, 2, 2))
        out = layer(Tensor(h), adj, training=False).data
        # equals the self-path alone: PReLU(W1 h + b)
        pre = h @ layer.w_self.data + layer.bias.data
        slope = layer.slope.data[0]
        expected = np.where(pre >= 0, pre, slope * pre)
        assert np.allclose(out, expected)

    def test_two_clique_symmetry(self):
        g = netgraph.load_edge_list("a b")
        rng = np.random.default_rng(3)
        layer = MessagePassingLayer.init(rng, 3, 4)
        adj = Tensor(adjacency_matrix(g))
        h = np.tile(rng.normal(size=(1, 1, 3)), (1, 2, 1))
        out = layer(Tensor(h), adj, training=True).data
        assert np.allclose(out[0, 0], out[0, 1])


class TestOutputHead:
    def test_equal_scores_give_uniform(self):
        rng = np.random.default_rng(4)
        head = OutputHead.init(rng, 3)
        head.lin.weight.data = np.zeros((3, 1))
        head.lin.bias.data = np.array([0.37])
        out = head(Tensor(np.ones((2, 5, 3))), None)
        assert np.allclose(out.data, -np.log(5))

    def test_exp_sums_to_one_per_graph(self):
        rng = np.random.default_rng(5)
        head = OutputHead.init(rng, 4)
        out = head(Tensor(rng.normal(size=(3, 7, 4))), None)
        assert np.allclose(np.exp(out.data).sum(axis=1), 1.0, atol=1e-12)

    def test_segments_normalize_independently(self):
        rng = np.random.default_rng(6)
        head = OutputHead.init(rng, 2)
        x = rng.normal(size=(1, 8, 2))
        batched = head(Tensor(x), None, segments=[(0, 3), (3, 8)]).data
        first = head(Tensor(x[:, :3]), None).data
        second = head(Tensor(x[:, 3:]), None).data
        assert np.array_equal(batched[:, :3], first)
        assert np.array_equal(batched[:, 3:], second)

    def test_skip_concatenates_input(self):
        rng = np.random.default_rng(7)
        head = OutputHead.init(rng, 5)   # 3 hidden + 2 input features
        h = rng.normal(size=(1, 4, 3))
        x = rng.normal(size=(1, 4, 2))
        out = head(Tensor(h), Tensor(x))
        manual = np.concatenate([h, x], axis=-1) @ head.lin.weight.data \
            + head.lin.bias.data
        manual = manual[..., 0]
        manual = manual - manual.max(axis=1, keepdims=True)
        manual = manual - np.log(np.exp(manual).sum(axis=1, keepdims=True))
        assert np.allclose(out.data, manual, atol=1e-12)


class TestDropout:
    def test_eval_mode_skips_dropout(self):
        cfg = ModelConfig(n_pre=1, dropout=0.3)
        stack = build_stack(cfg, seed=0)
        x = input_features(np.array([[0, 1, 2, 0]], dtype=np.uint8))
        adj = adjacency_matrix(netgraph.load_edge_list("0 1\n1 2\n2 3"))
        a = stack.forward(x, adj, training=False).data
        b = stack.forward(x, adj, training=False).data
        assert np.array_equal(a, b)

    def test_inverted_scaling_preserves_mean(self):
        rng = np.random.default_rng(8)
        x = Tensor(np.ones((200, 50)))
        out = dropout(x, 0.2, rng).data
        assert abs(out.mean() - 1.0) < 0.02
        kept = out[out != 0]
        assert np.allclose(kept, 1.0 / 0.8)


class TestForwardInvariances:
    def test_permutation_equivariance_eval_mode(self):
        rng = np.random.default_rng(9)
        g = random_connected_graph(rng, 9, 6)
        cfg = ModelConfig(n_pre=1, pre_dim=16, n_mp=3, mp_dim=16, n_post=1,
                          skip=True, dropout=0.0)
        stack = build_stack(cfg, seed=3)
        states = rng.integers(0, 3, size=(4, 9)).astype(np.uint8)
        x = input_features(states)
        adj = adjacency_matrix(g)
        base = stack.forward(x, adj, training=False).data
        for _ in range(5):
            perm = rng.permutation(9)
            adj_p = adj[np.ix_(perm, perm)]
            out_p = stack.forward(x[:, perm], adj_p, training=False).data
            assert np.max(np.abs(out_p - base[:, perm])) <= 1e-12

    def test_homogeneous_batch_equals_singles_bitwise(self, karate):
        cfg = ModelConfig()
        stack = build_stack(cfg, seed=1)
        rng = np.random.default_rng(10)
        states = rng.integers(0, 3, size=(6, karate.n)).astype(np.uint8)
        adj = adjacency_matrix(karate)
        batched = stack.forward(input_features(states), adj, training=False).data
        for i in range(6):
            single = stack.forward(input_features(states[i]), adj,
                                   training=False).data[0]
            assert np.array_equal(batched[i], single)

    def test_block_diagonal_batch_equals_per_graph(self):
        rng = np.random.default_rng(11)
        g1 = random_connected_graph(rng, 3, 1)
        g2 = random_connected_graph(rng, 5, 3)
        cfg = ModelConfig(n_pre=0, n_mp=2, mp_dim=16, skip=True, dropout=0.0)
        stack = build_stack(cfg, seed=2)
        a1, a2 = adjacency_matrix(g1), adjacency_matrix(g2)
        block = np.zeros((8, 8))
        block[:3, :3] = a1
        block[3:, 3:] = a2
        x = rng.normal(size=(2, 8, 3))
        full = stack.forward(x, block, training=False,
                             segments=[(0, 3), (3, 8)]).data
        p1 = stack.forward(x[:, :3], a1, training=False).data
        p2 = stack.forward(x[:, 3:], a2, training=False).data
        assert np.max(np.abs(full[:, :3] - p1)) <= 1e-12
        assert np.max(np.abs(full[:, 3:] - p2)) <= 1e-12


class TestModelConfig:
    def test_range_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(n_mp=1)
        with pytest.raises(ValueError):
            ModelConfig(mp_dim=48)
        with pytest.raises(ValueError):
            ModelConfig(dropout=0.5)
        with pytest.raises(ValueError):
            ModelConfig(in_features=5)
        with pytest.raises(ValueError):
            ModelConfig(n_pre=1, pre_dim=20)

    def test_round_trip_dict(self):
        cfg = ModelConfig(n_pre=2, pre_dim=32, n_mp=4, mp_dim=64, skip=False)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestModelBundle:
    def test_save_load_bit_exact(self, tmp_path, path3):
        cfg = ModelConfig(n_pre=1, n_mp=2, n_post=1)
        stack = build_stack(cfg, seed=5)
        # push the running stats away from their init values
        x = input_features(np.array([[0, 1, 2]], dtype=np.uint8))
        stack.forward(x, adjacency_matrix(path3), training=True,
                      rng=np.random.default_rng(0))
        bundle = ModelBundle.from_stack(cfg, stack)
        bundle.save(tmp_path / "m.bin")
        back = ModelBundle.load(tmp_path / "m.bin")
        assert back.config == cfg
        for name in bundle.params:
            assert np.array_equal(back.params[name], bundle.params[name])
        for name in bundle.buffers:
            assert np.array_equal(back.buffers[name], bundle.buffers[name])
        a = forward_log_probs(bundle.to_stack(), path3,
                              np.array([[1, 0, 0]], dtype=np.uint8))
        b = forward_log_probs(back.to_stack(), path3,
                              np.array([[1, 0, 0]], dtype=np.uint8))
        assert np.array_equal(a, b)

    def test_shapes_derive_from_config(self):
        cfg = ModelConfig(n_pre=1, pre_dim=16, n_mp=2, mp_dim=32, skip=True)
        names = {n for n, _ in build_stack(cfg, seed=0).named_parameters()}
        assert "pre0.weight" in names and "mp1.w_nbr" in names
        assert build_stack(cfg, seed=9).named_parameters()[0][1].data.shape \
            == (3, 16)


class TestPredict:
    def test_sums_to_one_and_masks_susceptible(self, path3):
        cfg = ModelConfig()
        bundle = ModelBundle.from_stack(cfg, build_stack(cfg, seed=6))
        snap = Snapshot(states=np.array([1, 1, 0], dtype=np.uint8), observed_at=1.0)
        dist = predict(bundle, path3, snap)
        assert abs(dist.probs.sum() - 1.0) < 1e-12
        assert dist.probs[2] == 0.0
        raw = predict(bundle, path3, snap, mask_susceptible=False)
        assert raw.probs[2] > 0.0
