"""Dynamic graph reconstruction from semantic embeddings.

The top-k selection is computed on detached values and then held fixed;
the kept edge weights remain differentiable functions of the similarity
heads and the gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .graph import SparseGraph, _check_dense_cap, topk_mask
from .layers import MLP, as_tensor


class MetricLearner(nn.Module):
    def __init__(self, embed_dim: int, heads: int = 4, gate_hidden: int = 16, init_noise: float = 0.01,
                 generator: torch.Generator | None = None):
        super().__init__()
        if heads < 1:
            raise ValueError("need at least one similarity head")
        eye = torch.eye(embed_dim, dtype=torch.float64).expand(heads, -1, -1)
        noise = torch.randn(heads, embed_dim, embed_dim, dtype=torch.float64, generator=generator)
        self.weights = nn.Parameter(eye + init_noise * noise)
        dims = [embed_dim, gate_hidden, 1] if gate_hidden else [embed_dim, 1]
        self.gate = MLP(dims)

    @property
    def heads(self) -> int:
        return self.weights.shape[0]


def minmax_rescale(s: torch.Tensor) -> torch.Tensor:
    """Rescale off-diagonal entries to [0, 1] and zero the diagonal.

    A constant matrix maps to all zeros.
    """
    n = s.shape[0]
    off = ~torch.eye(n, dtype=torch.bool)
    if n < 2:
        return torch.zeros_like(s)
    vals = s[off]
    lo, hi = vals.min(), vals.max()
    span = hi - lo
    if float(span.detach()) <= 0.0:
        return torch.zeros_like(s)
    return torch.where(off, (s - lo) / span, torch.zeros_like(s))


def similarity_matrix(mp: MetricLearner, h_sem, dense_cap: int | None = None,
                      normalize: bool = False) -> torch.Tensor:
    """Head-averaged bilinear similarity, min-max rescaled, zero diagonal.

    With ``normalize`` the rows of ``h_sem`` are scaled to unit length
    first, which stops high-norm nodes from winning every row's top-k.
    """
    h = as_tensor(h_sem)
    _check_dense_cap(h.shape[0], dense_cap)
    if h.shape[1] != mp.weights.shape[1]:
        raise ValueError(f"expected embedding dim {mp.weights.shape[1]}, got {h.shape[1]}")
    if normalize:
        h = h / h.norm(dim=1, keepdim=True).clamp_min(1e-12)
    s = torch.einsum("id,kde,je->ij", h, mp.weights, h) / mp.heads
    return minmax_rescale(s)


def gate_alpha(mp: MetricLearner, h_sem) -> torch.Tensor:
    """Per-node trust in the static graph, in (0, 1)."""
    return torch.sigmoid(mp.gate(as_tensor(h_sem))).squeeze(-1)


def fused_adjacency(a_static, s: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Row-gated mix alpha_i A_ij + (1 - alpha_i) S_ij."""
    a = a_static if isinstance(a_static, torch.Tensor) else torch.from_numpy(_dense(a_static))
    return alpha[:, None] * a + (1.0 - alpha[:, None]) * s


def _dense(a_static) -> np.ndarray:
    if isinstance(a_static, SparseGraph):
        return a_static.to_dense()
    return np.asarray(a_static, dtype=np.float64)


@dataclass(frozen=True)
class DynamicGraph:
    """Result of one reconstruction.

    ``mask`` is the directed top-k selection (at most k per row); ``weights``
    is the symmetrized dense weight matrix, still attached to the autograd
    graph when its inputs were.
    """

    mask: np.ndarray
    weights: torch.Tensor

    def to_graph(self) -> SparseGraph:
        return SparseGraph.from_dense(self.weights.detach().numpy(), directed=False)

    def out_degree(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def apply_selection(fused: torch.Tensor, mask: np.ndarray) -> torch.Tensor:
    """Symmetrize a fixed directed selection, max weight where both directions are kept."""
    m = torch.from_numpy(mask)
    w = torch.where(m, fused, torch.zeros_like(fused))
    union = m | m.T
    return torch.where(union, torch.maximum(w, w.T), torch.zeros_like(w))


def fuse_and_prune(a_static, s: torch.Tensor, alpha: torch.Tensor, k: int = 10) -> DynamicGraph:
    fused = fused_adjacency(a_static, s, alpha)
    mask = topk_mask(fused.detach().numpy(), k)
    return DynamicGraph(mask, apply_selection(fused, mask))


def reconstruct(mp: MetricLearner, h_sem, a_static, k: int, mask: np.ndarray | None = None,
                alpha_override: float | None = None, normalize: bool = False) -> DynamicGraph:
    """Similarity, gate, fusion and pruning in one call.

    Passing ``mask`` reuses an earlier selection so only the weights are
    recomputed; ``alpha_override`` pins the gate to a constant.
    """
    s = similarity_matrix(mp, h_sem, normalize=normalize)
    if alpha_override is None:
        alpha = gate_alpha(mp, h_sem)
    else:
        alpha = torch.full((s.shape[0],), float(alpha_override), dtype=s.dtype)
    if mask is None:
        return fuse_and_prune(a_static, s, alpha, k)
    return DynamicGraph(mask, apply_selection(fused_adjacency(a_static, s, alpha), mask))
