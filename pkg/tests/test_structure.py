import numpy as np
import pytest
import torch

from coevolve.graph import SparseGraph, topk_mask, topk_sparsify
from coevolve.layers import zero_
from coevolve.structure import (
    MetricLearner,
    fuse_and_prune,
    fused_adjacency,
    gate_alpha,
    minmax_rescale,
    reconstruct,
    similarity_matrix,
)

from conftest import finite_difference_check, random_graph


def metric(d=4, heads=3, seed=0):
    return MetricLearner(d, heads=heads, gate_hidden=5, generator=torch.Generator().manual_seed(seed))


def set_identity(mp):
    with torch.no_grad():
        mp.weights.copy_(torch.eye(mp.weights.shape[1], dtype=torch.float64).expand_as(mp.weights))


class TestSimilarity:
    def test_identity_heads_orthonormal_rows(self, rng):
        # pairwise dot products are all zero, a constant that rescales to zeros
        mp = metric(d=6)
        set_identity(mp)
        # standard basis rows keep the products exactly zero
        np.testing.assert_array_equal(similarity_matrix(mp, np.eye(6)[:5]).detach().numpy(), 0.0)

    def test_identity_heads_give_rescaled_dot_products(self, rng):
        mp = metric(d=6)
        set_identity(mp)
        h = rng.normal(size=(5, 6))
        s = similarity_matrix(mp, h).detach().numpy()
        dots = np.array([[sum(h[i][c] * h[j][c] for c in range(6)) for j in range(5)] for i in range(5)])
        off = ~np.eye(5, dtype=bool)
        lo, hi = dots[off].min(), dots[off].max()
        expected = np.where(off, (dots - lo) / (hi - lo), 0.0)
        np.testing.assert_allclose(s, expected, atol=1e-12)

    def test_zero_heads_give_zeros(self, rng):
        mp = metric()
        with torch.no_grad():
            mp.weights.zero_()
        assert torch.count_nonzero(similarity_matrix(mp, rng.normal(size=(5, 4)))) == 0

    def test_single_head_is_plain_bilinear(self, rng):
        mp = metric(heads=1)
        h = rng.normal(size=(6, 4))
        w = mp.weights[0].detach().numpy()
        raw = h @ w @ h.T
        got = similarity_matrix(mp, h).detach().numpy()
        off = ~np.eye(6, dtype=bool)
        np.testing.assert_allclose(got[off], (raw[off] - raw[off].min()) / np.ptp(raw[off]), atol=1e-12)

    def test_range_and_diagonal(self, rng):
        s = similarity_matrix(metric(), rng.normal(size=(9, 4))).detach().numpy()
        assert s.min() >= 0 and s.max() <= 1
        np.testing.assert_array_equal(np.diag(s), 0.0)

    def test_normalize_ignores_row_scale(self, rng):
        mp = metric()
        h = rng.normal(size=(7, 4))
        scaled = h * rng.uniform(0.1, 10.0, size=(7, 1))
        np.testing.assert_allclose(similarity_matrix(mp, h, normalize=True).detach().numpy(),
                                   similarity_matrix(mp, scaled, normalize=True).detach().numpy(), atol=1e-12)

    def test_shape_and_cap(self, rng):
        with pytest.raises(ValueError):
            similarity_matrix(metric(), rng.normal(size=(5, 3)))
        with pytest.raises(ValueError):
            similarity_matrix(metric(), rng.normal(size=(5, 4)), dense_cap=4)

    def test_minmax_constant(self):
        assert torch.count_nonzero(minmax_rescale(torch.full((3, 3), 2.5, dtype=torch.float64))) == 0


class TestGate:
    def test_zero_weights_half(self, rng):
        mp = metric()
        zero_(mp.gate)
        np.testing.assert_allclose(gate_alpha(mp, rng.normal(size=(5, 4))).detach().numpy(), 0.5)

    def test_large_logit(self, rng):
        mp = metric()
        zero_(mp.gate)
        with torch.no_grad():
            mp.gate.last.bias.fill_(40.0)
        assert gate_alpha(mp, rng.normal(size=(3, 4))).min() > 1 - 1e-12

    def test_open_interval(self, rng):
        a = gate_alpha(metric(), rng.normal(size=(20, 4)))
        assert a.min() > 0 and a.max() < 1

    def test_gradients(self, rng):
        mp = metric()
        h = torch.from_numpy(rng.normal(size=(6, 4)))
        target = torch.from_numpy(rng.uniform(size=6))
        loss = lambda: ((gate_alpha(mp, h) - target) ** 2).sum()
        assert finite_difference_check(loss, list(mp.gate.parameters()), h=1e-6) < 1e-4


class TestFuseAndPrune:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.a = random_graph(10, 0.4, rng)
        s = rng.uniform(size=(10, 10))
        s = (s + s.T) / 2
        np.fill_diagonal(s, 0)
        self.s = torch.from_numpy(s)

    def test_gate_closed(self):
        dyn = fuse_and_prune(self.a, self.s, torch.ones(10, dtype=torch.float64), k=3)
        static = set(map(tuple, self.a.undirected_pairs().tolist()))
        assert set(map(tuple, dyn.to_graph().undirected_pairs().tolist())) <= static
        assert dyn.to_graph() == topk_sparsify(self.a.to_dense(), 3)

    def test_gate_open(self):
        dyn = fuse_and_prune(self.a, self.s, torch.zeros(10, dtype=torch.float64), k=3)
        assert dyn.to_graph() == topk_sparsify(self.s.numpy(), 3)

    def test_half_gate_is_average(self):
        fused = fused_adjacency(self.a, self.s, torch.full((10,), 0.5, dtype=torch.float64)).numpy()
        a = self.a.to_dense()
        for i in range(10):
            for j in range(10):
                assert fused[i, j] == pytest.approx(0.5 * a[i, j] + 0.5 * self.s[i, j].item())

    def test_out_degree_bound(self, rng):
        for k in (1, 3, 6):
            alpha = torch.from_numpy(rng.uniform(size=10))
            dyn = fuse_and_prune(self.a, self.s, alpha, k=k)
            assert dyn.out_degree().max() <= k
            fused = fused_adjacency(self.a, self.s, alpha).numpy()
            np.testing.assert_array_equal(dyn.mask, topk_mask(fused, k))
            np.testing.assert_allclose(dyn.weights.numpy(), topk_sparsify(fused, k).to_dense())

    def test_weights_differentiable_with_fixed_mask(self, rng):
        mp = metric()
        h = torch.from_numpy(rng.normal(size=(10, 4)))
        mask = reconstruct(mp, h, self.a, 3).mask
        probe = torch.from_numpy(rng.normal(size=(10, 10)))
        loss = lambda: (reconstruct(mp, h, self.a, 3, mask=mask).weights * probe).sum()
        assert finite_difference_check(loss, list(mp.parameters()), h=1e-6) < 1e-4
        grads = torch.autograd.grad(loss(), [mp.weights])
        assert grads[0].abs().max() > 0

    def test_alpha_override(self, rng):
        mp = metric()
        h = rng.normal(size=(10, 4))
        dyn = reconstruct(mp, h, self.a, 3, alpha_override=1.0)
        assert dyn.to_graph() == topk_sparsify(self.a.to_dense(), 3)
