"""Semantic view: structure-conditioned soft prompts and a stand-in text encoder.

``SemanticEncoder`` is the pluggable boundary. Anything that maps
``(prompts, text) -> (H_sem, P_LLM)`` with the same shapes can replace it;
the bundled encoder is a two-layer MLP over the concatenation of prompt
and text vector.
"""

from __future__ import annotations

import torch
from torch import nn

from .layers import MLP, as_tensor, stable_softmax


class Projector(nn.Module):
    """Maps structural embeddings (N, d_s) to one soft prompt vector per node (N, d_p)."""

    def __init__(self, struct_dim: int, prompt_dim: int = 32, hidden: int | None = 64,
                 activation: str = "relu"):
        super().__init__()
        dims = [struct_dim, prompt_dim] if not hidden else [struct_dim, hidden, prompt_dim]
        self.mlp = MLP(dims, activation=activation)
        self.prompt_dim = prompt_dim

    def forward(self, h_struct):
        h_struct = as_tensor(h_struct)
        if h_struct.shape[-1] != self.mlp.dims[0]:
            raise ValueError(f"expected structural dim {self.mlp.dims[0]}, got {h_struct.shape[-1]}")
        return self.mlp(h_struct)


def project_prompts(pp: Projector, h_struct):
    return pp(h_struct)


class SemanticEncoder(nn.Module):
    def __init__(self, prompt_dim: int, text_dim: int, num_classes: int, hidden: int = 64,
                 embed_dim: int = 64):
        super().__init__()
        self.prompt_dim = prompt_dim
        self.text_dim = text_dim
        self.body = MLP([prompt_dim + text_dim, hidden, embed_dim])
        self.head = MLP([embed_dim, num_classes])

    def forward(self, prompts, t):
        prompts, t = as_tensor(prompts), as_tensor(t)
        if prompts.shape[-1] != self.prompt_dim or t.shape[-1] != self.text_dim:
            raise ValueError(
                f"expected prompt/text dims ({self.prompt_dim}, {self.text_dim}), "
                f"got ({prompts.shape[-1]}, {t.shape[-1]})")
        if prompts.shape[0] != t.shape[0]:
            raise ValueError("prompt and text row counts differ")
        h_sem = self.body(torch.cat([prompts, t], dim=-1))
        return h_sem, stable_softmax(self.head(h_sem))


def encode(sp: SemanticEncoder, prompts, t):
    return sp(prompts, t)


def row_normalize(h, eps: float = 1e-12):
    """Scale every row to unit Euclidean norm; all-zero rows are an error."""
    h = as_tensor(h)
    norms = h.norm(dim=-1, keepdim=True)
    if bool((norms <= eps).any()):
        raise ValueError("cannot normalize an all-zero embedding row")
    return h / norms
