import numpy as np
import pytest
import torch

from coevolve.conflict import ConflictConfig, ConflictSets, conflict_loss, mine_conflicts
from coevolve.semantic import row_normalize

from conftest import finite_difference_check


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def example():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pi = np.array([[0.5, 0.1, 0.8], [0.1, 0.5, 0.8], [0.8, 0.8, 0.5]])
    return z, pi


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(tau=0.0), dict(epsilon=1.0), dict(ppr_pos_threshold=1.2),
                                    dict(margin_pos=0.1, margin_neg=0.2), dict(lam=-1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            ConflictConfig(**kw)


class TestMine:
    def test_three_node_example(self):
        z, pi = example()
        sets = mine_conflicts(z, pi, ConflictConfig())
        assert sets.negatives_of(0) == {1}
        assert sets.positives_of(0) == {2}

    def test_uniform_ppr(self, rng):
        n = 40
        z = unit_rows(rng, n, 3)
        sets = mine_conflicts(z, np.full((n, n), 1 / n), ConflictConfig())
        assert len(sets.positives) == 0
        sims = z @ z.T
        expected = {(i, j) for i in range(n) for j in range(n) if i != j and sims[i, j] > 0.5}
        assert set(map(tuple, sets.negatives.tolist())) == expected

    def test_tau_one_empties_negatives(self, rng):
        z = unit_rows(rng, 10, 2)
        z[1] = z[0]
        sets = mine_conflicts(z, np.zeros((10, 10)), ConflictConfig(tau=1.0))
        assert len(sets.negatives) == 0

    def test_set_invariants(self, rng):
        n = 25
        z = unit_rows(rng, n, 3)
        pi = rng.uniform(size=(n, n))
        cfg = ConflictConfig(tau=0.3, epsilon=0.8, ppr_pos_threshold=0.6)
        sets = mine_conflicts(z, pi, cfg)
        for i in range(n):
            pos, neg = sets.positives_of(i), sets.negatives_of(i)
            assert i not in pos and i not in neg and not pos & neg
            assert all(pi[i, j] > cfg.ppr_pos_threshold for j in pos)
            assert all(z[i] @ z[k] > cfg.tau and pi[i, k] < cfg.epsilon for k in neg)

    def test_requires_normalized(self, rng):
        with pytest.raises(ValueError):
            mine_conflicts(2 * unit_rows(rng, 4, 3), np.zeros((4, 4)), ConflictConfig())


class TestLoss:
    def test_inactive_hinges(self):
        z, pi = example()
        sets = ConflictSets(3, np.array([[0, 1]]), np.array([[0, 2]]))
        assert conflict_loss(z, sets, ConflictConfig()).item() == 0.0

    def test_positive_hinge_value(self):
        # z_0 . z_1 = 0.6 = margin_pos - 0.2
        z = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
        sets = ConflictSets(3, np.array([[0, 1]]), np.zeros((0, 2), dtype=int))
        assert conflict_loss(z, sets, ConflictConfig()).item() == pytest.approx(0.2 / 3)

    def test_nonnegative_and_zero_gradient_when_inactive(self, rng):
        z = torch.from_numpy(unit_rows(rng, 8, 3)).requires_grad_(True)
        sets = ConflictSets(8, np.zeros((0, 2), dtype=int), np.zeros((0, 2), dtype=int))
        loss = conflict_loss(z, sets, ConflictConfig())
        assert loss.item() == 0.0
        (g,) = torch.autograd.grad(loss, z)
        assert torch.count_nonzero(g) == 0

    def test_gradients(self, rng):
        h = torch.from_numpy(rng.normal(size=(12, 4))).requires_grad_(True)
        cfg = ConflictConfig(tau=0.2, epsilon=0.6, ppr_pos_threshold=0.5, lam=0.7)
        pi = rng.uniform(size=(12, 12))
        sets = mine_conflicts(row_normalize(h).detach(), pi, cfg)
        assert len(sets.positives) and len(sets.negatives)
        loss = lambda: conflict_loss(row_normalize(h), sets, cfg)
        assert finite_difference_check(loss, [h], h=1e-6) < 1e-4

    def test_permutation_invariance(self, rng):
        n = 15
        z = unit_rows(rng, n, 3)
        pi = rng.uniform(size=(n, n))
        cfg = ConflictConfig(tau=0.2, epsilon=0.5, ppr_pos_threshold=0.6)
        base = conflict_loss(z, mine_conflicts(z, pi, cfg), cfg).item()
        perm = rng.permutation(n)
        zp, pp = z[perm], pi[np.ix_(perm, perm)]
        assert conflict_loss(zp, mine_conflicts(zp, pp, cfg), cfg).item() == pytest.approx(base, rel=1e-12)

    def test_negative_term_monotone(self):
        cfg = ConflictConfig()
        sets = ConflictSets(2, np.zeros((0, 2), dtype=int), np.array([[0, 1]]))
        values = []
        for angle in (0.2, 0.4, 0.6, 0.8):
            z = np.array([[1.0, 0.0], [np.cos(angle), np.sin(angle)]])
            values.append(conflict_loss(z, sets, cfg).item())
        assert all(a > b for a, b in zip(values, values[1:]))
