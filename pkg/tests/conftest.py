import numpy as np
import pytest
import torch

from coevolve.graph import SparseGraph


def random_graph(n, p, rng, weighted=False):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    w = rng.uniform(0.1, 2.0, size=(n, n)) if weighted else np.ones((n, n))
    dense = np.where(upper, w, 0.0)
    return SparseGraph.from_dense(dense + dense.T)


def finite_difference_check(loss_fn, params, h=1e-6, max_entries=40, seed=0, analytic_fn=None):
    """Central-difference gradient check for every tensor in ``params``.

    ``loss_fn`` is called with no arguments and must rebuild the scalar from
    the current parameter values. Returns the worst per-tensor relative error
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
    ``analytic_fn``, when given, supplies the autograd loss instead; used when
    ``loss_fn`` is an oracle that freezes stop-gradient terms at the current point.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = (analytic_fn or loss_fn)()
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, analytic):
        g = torch.zeros_like(p) if g is None else g
        flat = p.data.view(-1)
        idx = np.arange(flat.numel())
        if len(idx) > max_entries:
            idx = rng.choice(idx, size=max_entries, replace=False)
        num = np.zeros(len(idx))
        with torch.no_grad():
            for n, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                num[n] = (up - down) / (2 * h)
        ana = g.detach().reshape(-1).numpy()[idx]
        scale = max(np.linalg.norm(ana), np.linalg.norm(num))
        if scale < 1e-12:
            continue
        worst = max(worst, np.linalg.norm(ana - num) / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion; printed in the terminal summary."""
    def record(number: int, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
