from __future__ import annotations

import torch
from torch import nn

ACTIVATIONS = {
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
    "identity": nn.Identity,
}


class MLP(nn.Sequential):
    """Plain feed-forward stack; no activation after the last layer."""

    def __init__(self, dims, activation="relu", bias=True):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        layers = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            layers.append(nn.Linear(d_in, d_out, bias=bias, dtype=torch.float64))
            if i < len(dims) - 2:
                layers.append(ACTIVATIONS[activation]())
        super().__init__(*layers)
        self.dims = tuple(dims)

    @property
    def last(self) -> nn.Linear:
        return self[-1]


def zero_(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def as_tensor(a, dtype=torch.float64) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a if a.dtype == dtype else a.to(dtype)
    return torch.as_tensor(a, dtype=dtype)


def stable_softmax(logits: torch.Tensor) -> torch.Tensor:
    shifted = logits - logits.max(dim=-1, keepdim=True).values.detach()
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)
