"""Uncertainty-gated consistency between the two views and entropy-aware fusion."""

from __future__ import annotations

import math

import torch
from torch import nn

from .layers import MLP, as_tensor

PROB_FLOOR = 1e-12


def _check_stochastic(p: torch.Tensor, atol: float = 1e-6) -> None:
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValueError("probabilities must be (N, C) with C >= 2")
    if bool((p < -atol).any()) or bool(((p.sum(dim=1) - 1.0).abs() > atol).any()):
        raise ValueError("probability rows must be non-negative and sum to 1")


def normalized_entropy(p) -> torch.Tensor:
    """Row entropy divided by log C, in [0, 1]; 0 log 0 is taken as 0."""
    p = as_tensor(p)
    _check_stochastic(p)
    plogp = torch.where(p > 0, p * torch.log(p.clamp_min(PROB_FLOOR)), torch.zeros_like(p))
    return (-plogp.sum(dim=1) / math.log(p.shape[1])).clamp(0.0, 1.0)


def kl_rows(teacher: torch.Tensor, student: torch.Tensor) -> torch.Tensor:
    t = teacher.clamp_min(PROB_FLOOR)
    s = student.clamp_min(PROB_FLOOR)
    return (teacher * (t.log() - s.log())).sum(dim=1)


def consistency_loss(p_gnn, p_llm) -> torch.Tensor:
    """Confidence-weighted bidirectional KL, averaged over nodes.

    In each term the teacher distribution and its confidence weight are
    detached, so only the student side receives gradient.
    """
    p_gnn, p_llm = as_tensor(p_gnn), as_tensor(p_llm)
    if p_gnn.shape != p_llm.shape:
        raise ValueError("both views must predict the same (N, C) shape")
    g_t, l_t = p_gnn.detach(), p_llm.detach()
    w_gnn = 1.0 - normalized_entropy(g_t)
    w_llm = 1.0 - normalized_entropy(l_t)
    per_node = w_gnn * kl_rows(g_t, p_llm) + w_llm * kl_rows(l_t, p_gnn)
    return per_node.mean()


class FusionGate(nn.Module):
    """beta = sigmoid(MLP([H(P_LLM), H(P_GNN), H_struct]))."""

    def __init__(self, struct_dim: int, hidden: int = 32):
        super().__init__()
        dims = [2 + struct_dim, hidden, 1] if hidden else [2 + struct_dim, 1]
        self.mlp = MLP(dims)

    def forward(self, ent_llm, ent_gnn, h_struct):
        z = torch.cat([as_tensor(ent_llm)[:, None], as_tensor(ent_gnn)[:, None], as_tensor(h_struct)], dim=1)
        return torch.sigmoid(self.mlp(z)).squeeze(-1)


def fuse_predictions(fp: FusionGate, p_llm, p_gnn, ent_llm, ent_gnn, h_struct):
    """Return (Y_final, beta) with Y_final = beta P_LLM + (1 - beta) P_GNN."""
    p_llm, p_gnn = as_tensor(p_llm), as_tensor(p_gnn)
    beta = fp(ent_llm, ent_gnn, h_struct)
    return beta[:, None] * p_llm + (1.0 - beta[:, None]) * p_gnn, beta
