"""Structural view: a two-layer graph convolution with a softmax head."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .graph import SparseGraph
from .layers import ACTIVATIONS, as_tensor, stable_softmax


def dense_normalized(weights: torch.Tensor) -> torch.Tensor:
    """D^-1/2 (W + I) D^-1/2 for a dense symmetric weight matrix, differentiable in W."""
    n = weights.shape[0]
    a = weights + torch.eye(n, dtype=weights.dtype)
    inv_sqrt = a.sum(dim=1).rsqrt()
    return a * (inv_sqrt[:, None] * inv_sqrt[None, :])


def to_operator(a_norm) -> torch.Tensor:
    """Accept a SparseGraph, ndarray or tensor and return a dense float64 tensor."""
    if isinstance(a_norm, SparseGraph):
        return torch.from_numpy(a_norm.to_dense())
    if isinstance(a_norm, np.ndarray):
        return torch.from_numpy(np.asarray(a_norm, dtype=np.float64))
    return as_tensor(a_norm)


class GCN(nn.Module):
    """H1 = act(A X W1 + b1), H_struct = A H1 W2 + b2, P = softmax(H_struct Wc + bc)."""

    def __init__(self, in_dim: int, num_classes: int, hidden: int = 128, out_dim: int = 64,
                 activation: str = "relu"):
        super().__init__()
        self.layer1 = nn.Linear(in_dim, hidden, dtype=torch.float64)
        self.layer2 = nn.Linear(hidden, out_dim, dtype=torch.float64)
        self.head = nn.Linear(out_dim, num_classes, dtype=torch.float64)
        self.act = ACTIVATIONS[activation]()

    def forward(self, a_norm, x):
        a = to_operator(a_norm)
        x = as_tensor(x)
        if a.shape[0] != a.shape[1] or a.shape[0] != x.shape[0]:
            raise ValueError(f"operator {tuple(a.shape)} does not match features {tuple(x.shape)}")
        if x.shape[1] != self.layer1.in_features:
            raise ValueError(f"expected {self.layer1.in_features} feature columns, got {x.shape[1]}")
        h = self.act(self.layer1(a @ x))
        h_struct = self.layer2(a @ h)
        return h_struct, stable_softmax(self.head(h_struct))


def gnn_forward(params: GCN, a_norm, x):
    return params(a_norm, x)


def gnn_backward(params: GCN, a_norm, x, grad_h_struct=None, grad_p=None) -> dict[str, torch.Tensor]:
    """Parameter gradients of <grad_h, H_struct> + <grad_p, P_GNN>.

    Any scalar loss on the forward outputs is handled by passing its
    gradients with respect to those outputs.
    """
    h_struct, p = params(a_norm, x)
    outputs, grads = [], []
    if grad_h_struct is not None:
        outputs.append(h_struct)
        grads.append(as_tensor(grad_h_struct))
    if grad_p is not None:
        outputs.append(p)
        grads.append(as_tensor(grad_p))
    names, tensors = zip(*params.named_parameters())
    if not outputs:
        return {n: torch.zeros_like(t) for n, t in zip(names, tensors)}
    result = torch.autograd.grad(outputs, tensors, grads, allow_unused=True)
    return {n: (g if g is not None else torch.zeros_like(t)) for n, g, t in zip(names, result, tensors)}
