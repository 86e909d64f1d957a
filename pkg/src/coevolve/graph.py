"""Sparse graph container and pure-topology routines.

Everything here works on numpy arrays and is side-effect free. Dense
N x N work (PPR, top-k over a similarity matrix) is guarded by
``DENSE_CAP``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DENSE_CAP = 20_000


class GraphError(ValueError):
    """Invalid graph input or an undefined topological quantity."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def _check_dense_cap(n: int, cap: int | None = None) -> None:
    cap = DENSE_CAP if cap is None else cap
    if n > cap:
        raise GraphError(f"{n} nodes exceeds the dense cap of {cap}")


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Weighted edge list. Undirected graphs store both directions."""

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    directed: bool = False
    _adj: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        w = np.asarray(self.weight, dtype=np.float64).ravel()
        if not (len(src) == len(dst) == len(w)):
            raise GraphError("src, dst and weight must have equal length")
        n = int(self.num_nodes)
        if n < 0:
            raise GraphError("num_nodes must be non-negative")
        if len(src) and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n):
            raise GraphError("node id out of range")
        if not np.all(np.isfinite(w)):
            raise GraphError("edge weights must be finite")
        if np.any(w < 0):
            raise GraphError("edge weights must be non-negative")
        keys = src * max(n, 1) + dst
        if len(np.unique(keys)) != len(keys):
            raise GraphError("duplicate (src, dst) pair")
        # canonical row-major order so equal graphs compare equal
        order = np.argsort(keys, kind="stable")
        src, dst, w = src[order], dst[order], w[order]
        adj = sp.csr_matrix((w, (src, dst)), shape=(n, n))
        if not self.directed:
            diff = adj - adj.T
            if diff.nnz and np.abs(diff.data).max() > 0:
                raise GraphError("undirected graph must have a symmetric edge set")
        for name, value in (("src", src), ("dst", dst), ("weight", w)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "_adj", adj)

    def __eq__(self, other):
        if not isinstance(other, SparseGraph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes and self.directed == other.directed
                and np.array_equal(self.src, other.src) and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.weight, other.weight))

    __hash__ = None

    @classmethod
    def from_edges(cls, num_nodes, edges, directed=False):
        """Build from ``(src, dst[, weight])`` tuples.

        For undirected graphs each pair may be given once; the reverse
        direction is added automatically.
        """
        edges = list(edges)
        if not edges:
            return cls(num_nodes, [], [], [], directed)
        src = [int(e[0]) for e in edges]
        dst = [int(e[1]) for e in edges]
        w = [float(e[2]) if len(e) > 2 else 1.0 for e in edges]
        if not directed:
            seen = {}
            for s, d, x in zip(src, dst, w):
                key = (min(s, d), max(s, d))
                if key in seen and seen[key] != x:
                    raise GraphError(f"conflicting weights for edge {key}")
                seen[key] = x
            src, dst, w = [], [], []
            for (a, b), x in seen.items():
                src.append(a)
                dst.append(b)
                w.append(x)
                if a != b:
                    src.append(b)
                    dst.append(a)
                    w.append(x)
        return cls(num_nodes, src, dst, w, directed)

    @classmethod
    def from_dense(cls, matrix, directed=False):
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise GraphError("dense adjacency must be square")
        src, dst = np.nonzero(m)
        return cls(m.shape[0], src, dst, m[src, dst], directed)

    @property
    def num_edges(self) -> int:
        """Stored directed entries (both directions for undirected graphs)."""
        return len(self.src)

    def to_scipy(self) -> sp.csr_matrix:
        return self._adj.copy()

    def to_dense(self) -> np.ndarray:
        return self._adj.toarray()

    def undirected_pairs(self, include_self_loops=False) -> np.ndarray:
        """Edges as an (E, 2) array with each undirected pair once (i <= j)."""
        if self.directed:
            pairs = np.stack([self.src, self.dst], axis=1)
        else:
            keep = self.src <= self.dst
            pairs = np.stack([self.src[keep], self.dst[keep]], axis=1)
        if not include_self_loops:
            pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        return pairs

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.num_nodes)

    def remove_pairs(self, pairs) -> "SparseGraph":
        """Drop the listed pairs (both directions when undirected)."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        n = max(self.num_nodes, 1)
        drop = set((pairs[:, 0] * n + pairs[:, 1]).tolist())
        if not self.directed:
            drop |= set((pairs[:, 1] * n + pairs[:, 0]).tolist())
        keys = self.src * n + self.dst
        keep = ~np.isin(keys, np.fromiter(drop, dtype=np.int64, count=len(drop)))
        return SparseGraph(self.num_nodes, self.src[keep], self.dst[keep], self.weight[keep], self.directed)


def read_edge_list(path, num_nodes=None, directed=False) -> SparseGraph:
    """Parse ``src dst [weight]`` lines; ``#`` starts a comment."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphError(f"{path}:{lineno}: expected 'src dst [weight]'")
        edges.append((int(parts[0]), int(parts[1]), float(parts[2]) if len(parts) == 3 else 1.0))
    if num_nodes is None:
        num_nodes = 1 + max((max(s, d) for s, d, _ in edges), default=-1)
    return SparseGraph.from_edges(num_nodes, edges, directed=directed)


def write_edge_list(graph: SparseGraph, path, header: str | None = None) -> None:
    pairs = graph.undirected_pairs(include_self_loops=True)
    dense = graph.to_scipy()
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.append(f"# nodes={graph.num_nodes} directed={int(graph.directed)}")
    for s, d in pairs:
        lines.append(f"{s} {d} {dense[s, d]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def normalize_adjacency(g: SparseGraph) -> SparseGraph:
    """Symmetric normalization with unit self-loops, D^-1/2 (A + I) D^-1/2."""
    if g.directed:
        raise GraphError("normalize_adjacency requires an undirected graph")
    a = g.to_scipy() + sp.identity(g.num_nodes, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    a = a.tocoo()
    # scale by the product s_i * s_j so (i, j) and (j, i) round identically
    data = a.data * (inv_sqrt[a.row] * inv_sqrt[a.col])
    return SparseGraph(g.num_nodes, a.row, a.col, data, directed=False)


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise GraphError(f"restart probability must lie in (0, 1), got {gamma}")


@dataclass(frozen=True)
class PprMatrix:
    values: np.ndarray
    gamma: float

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g",
                   header=",".join(f"n{j}" for j in range(self.values.shape[1])), comments="")


def ppr_closed_form(a_hat: SparseGraph, gamma: float = 0.15, dense_cap: int | None = None) -> PprMatrix:
    """Dense PPR via a linear solve of (I - (1 - gamma) A_hat) Pi = gamma I."""
    _check_gamma(gamma)
    n = a_hat.num_nodes
    _check_dense_cap(n, dense_cap)
    system = np.eye(n) - (1.0 - gamma) * a_hat.to_dense()
    try:
        values = np.linalg.solve(system, gamma * np.eye(n))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - impossible for valid inputs
        raise RuntimeError("PPR system is singular") from exc
    return PprMatrix(values, gamma)


def ppr_power_iteration(a_hat: SparseGraph, gamma: float = 0.15, tol: float = 1e-10,
                        max_iter: int = 10_000, dense_cap: int | None = None) -> PprMatrix:
    """Fixed-point iteration Pi <- gamma I + (1 - gamma) Pi A_hat."""
    _check_gamma(gamma)
    if tol <= 0:
        raise GraphError("tol must be positive")
    n = a_hat.num_nodes
    _check_dense_cap(n, dense_cap)
    adj = a_hat.to_scipy()
    restart = gamma * np.eye(n)
    pi = restart.copy()
    residual = np.inf
    for _ in range(max_iter):
        nxt = restart + (1.0 - gamma) * (adj.T @ pi.T).T
        residual = float(np.abs(nxt - pi).max()) if n else 0.0
        pi = nxt
        if residual < tol:
            return PprMatrix(pi, gamma)
    raise ConvergenceError(f"PPR power iteration did not converge in {max_iter} iterations", residual)


def homophily_ratio(g: SparseGraph, y) -> float:
    """Fraction of (non-self-loop) edges whose endpoints share a label."""
    y = np.asarray(y)
    if len(y) != g.num_nodes:
        raise GraphError("label vector length must equal num_nodes")
    pairs = g.undirected_pairs()
    if len(pairs) == 0:
        raise GraphError("homophily ratio is undefined for a graph without edges")
    return float(np.mean(y[pairs[:, 0]] == y[pairs[:, 1]]))


def topk_mask(dense, k: int) -> np.ndarray:
    """Directed top-k selection: per row, the k largest positive off-diagonal entries.

    Ties go to the lowest column index.
    """
    m = np.asarray(dense, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise GraphError("top-k input must be a square matrix")
    n = m.shape[0]
    if k < 1:
        raise GraphError("k must be at least 1")
    if k >= n:
        raise GraphError(f"k={k} must be smaller than the node count {n}")
    scores = m.copy()
    np.fill_diagonal(scores, -np.inf)
    # stable sort on the negated values keeps lowest column first among ties
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = order.ravel()
    mask = np.zeros((n, n), dtype=bool)
    mask[rows, cols] = True
    mask &= m > 0
    np.fill_diagonal(mask, False)
    return mask


def symmetrize_max(dense, mask) -> np.ndarray:
    """Union of a directed selection with its transpose, max weight on overlap."""
    w = np.where(mask, dense, 0.0)
    wt = w.T
    return np.where(mask | mask.T, np.maximum(w, wt), 0.0)


def topk_sparsify(dense, k: int) -> SparseGraph:
    m = np.asarray(dense, dtype=np.float64)
    mask = topk_mask(m, k)
    return SparseGraph.from_dense(symmetrize_max(m, mask), directed=False)
