"""Hard conflict negatives, structural positives and the margin loss over them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .layers import as_tensor


@dataclass(frozen=True)
class ConflictConfig:
    tau: float = 0.5
    epsilon: float = 0.3
    ppr_pos_threshold: float = 0.7
    margin_pos: float = 0.8
    margin_neg: float = 0.2
    lam: float = 1.0

    def __post_init__(self):
        for name in ("epsilon", "ppr_pos_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        # tau = 1 is allowed: the strict test cos > 1 then never fires
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if not self.margin_pos > self.margin_neg:
            raise ValueError("margin_pos must exceed margin_neg")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


@dataclass(frozen=True)
class ConflictSets:
    """Pairs as (M, 2) int arrays sorted by (i, j).

    Row ``[i, j]`` in ``positives`` means j is in P_i; likewise for
    ``negatives`` and H_i.
    """

    num_nodes: int
    positives: np.ndarray
    negatives: np.ndarray

    def positives_of(self, i: int) -> set[int]:
        return set(self.positives[self.positives[:, 0] == i, 1].tolist())

    def negatives_of(self, i: int) -> set[int]:
        return set(self.negatives[self.negatives[:, 0] == i, 1].tolist())


def mine_conflicts(z, ppr, cfg: ConflictConfig) -> ConflictSets:
    """Exact scan over ordered pairs.

    H_i: z_i.z_k > tau and Pi_ik < epsilon. P_i: Pi_ij > ppr_pos_threshold.
    A pair that qualifies for both is kept as a positive only.
    """
    z = z.detach().numpy() if isinstance(z, torch.Tensor) else np.asarray(z, dtype=np.float64)
    pi = np.asarray(ppr, dtype=np.float64)
    n = z.shape[0]
    if pi.shape != (n, n):
        raise ValueError("PPR matrix shape does not match embeddings")
    norms = np.linalg.norm(z, axis=1)
    if n and np.abs(norms - 1.0).max() > 1e-6:
        raise ValueError("embeddings must be row-normalized")
    off = ~np.eye(n, dtype=bool)
    pos = (pi > cfg.ppr_pos_threshold) & off
    cos = np.clip(z @ z.T, -1.0, 1.0)
    neg = (cos > cfg.tau) & (pi < cfg.epsilon) & off & ~pos
    return ConflictSets(n, np.argwhere(pos), np.argwhere(neg))


def pair_similarity(z: torch.Tensor, pairs: np.ndarray) -> torch.Tensor:
    # an empty index still yields an empty result attached to z's graph
    idx = torch.as_tensor(np.asarray(pairs, dtype=np.int64).reshape(-1, 2))
    return (z[idx[:, 0]] * z[idx[:, 1]]).sum(dim=1)


def conflict_loss(z, sets: ConflictSets, cfg: ConflictConfig) -> torch.Tensor:
    """Hinge pull on positives below margin_pos, hinge push on negatives above margin_neg.

    Sets are constants; the returned scalar is differentiable in ``z``.
    """
    z = as_tensor(z)
    n = z.shape[0]
    pos = torch.relu(cfg.margin_pos - pair_similarity(z, sets.positives)).sum()
    neg = torch.relu(pair_similarity(z, sets.negatives) - cfg.margin_neg).sum()
    return (pos + cfg.lam * neg) / max(n, 1)
