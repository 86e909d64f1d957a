"""Text-attributed graph datasets: synthetic generation, I/O and stress perturbations."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import PprMatrix, SparseGraph, read_edge_list, write_edge_list

SPLIT_NAMES = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class TagDataset:
    graph: SparseGraph
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.graph.num_nodes
        x = np.array(self.x, dtype=np.float64, copy=True)
        t = np.array(self.t, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.int64, copy=True)
        masks = [np.array(m, dtype=bool, copy=True) for m in (self.train_mask, self.val_mask, self.test_mask)]
        if x.ndim != 2 or t.ndim != 2 or x.shape[0] != n or t.shape[0] != n:
            raise DatasetError("x and t must be 2-D with one row per node")
        if y.shape != (n,) or any(m.shape != (n,) for m in masks):
            raise DatasetError("labels and masks must have one entry per node")
        if y.min(initial=0) < 0 or y.max(initial=0) >= self.num_classes:
            raise DatasetError("labels must lie in [0, num_classes)")
        if n and len(np.unique(y)) != self.num_classes:
            raise DatasetError("every class must be present in the label set")
        if (masks[0] & masks[1]).any() or (masks[0] & masks[2]).any() or (masks[1] & masks[2]).any():
            raise DatasetError("train/val/test masks must be disjoint")
        if not masks[0].any():
            raise DatasetError("train mask must be non-empty")
        for arr in (x, t, y, *masks):
            arr.setflags(write=False)
        for name, arr in zip(("x", "t", "y", "train_mask", "val_mask", "test_mask"), (x, t, y, *masks)):
            object.__setattr__(self, name, arr)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def mask(self, split: str) -> np.ndarray:
        return {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}[split]


@dataclass(frozen=True)
class PerturbationReport:
    kind: str
    rate: float
    affected: list
    seed: int
    eligible: int
    threshold: float
    details: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind, "rate": self.rate, "seed": self.seed,
            "threshold": self.threshold, "eligible": self.eligible,
            "affected": self.affected, "details": self.details,
        }, indent=2, sort_keys=True)


def _round_count(rate: float, n: int) -> int:
    # half-up rounding; Python's round() is banker's rounding
    return int(np.floor(rate * n + 0.5))


def random_split(n: int, rng: np.random.Generator, fractions=(0.6, 0.2, 0.2)):
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][perm[:n_train]] = True
    masks[1][perm[n_train:n_train + n_val]] = True
    masks[2][perm[n_train + n_val:]] = True
    return masks


def expected_homophily(n: int, c: int, p_in: float, p_out: float) -> float:
    sizes = np.bincount(np.arange(n) % c, minlength=c)
    in_pairs = float(np.sum(sizes * (sizes - 1) / 2))
    out_pairs = n * (n - 1) / 2 - in_pairs
    return p_in * in_pairs / (p_in * in_pairs + p_out * out_pairs)


def generate_synthetic(n: int = 400, c: int = 4, p_in: float = 0.02, p_out: float = 0.06,
                       d_t: int = 32, text_noise: float = 2.0, seed: int = 0,
                       split=(0.6, 0.2, 0.2)) -> TagDataset:
    """Stochastic block model graph with class-template text vectors.

    Labels are balanced; text rows are the class mean plus isotropic
    Gaussian noise scaled by ``text_noise``. Node features equal text.
    """
    for name, p in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= p <= 1.0:
            raise DatasetError(f"{name} must lie in [0, 1], got {p}")
    if c < 2:
        raise DatasetError("need at least two classes")
    if n < 4 * c:
        raise DatasetError(f"need at least 4 nodes per class (n >= {4 * c})")
    if d_t < 1 or text_noise < 0:
        raise DatasetError("d_t must be positive and text_noise non-negative")
    if p_in == 0 and p_out == 0:
        raise DatasetError("zero expected edges")
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % c)
    same = y[:, None] == y[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    src, dst = np.nonzero(upper)
    graph = SparseGraph(n, np.concatenate([src, dst]), np.concatenate([dst, src]),
                        np.ones(2 * len(src)), directed=False)
    means = rng.normal(0.0, 1.0, size=(c, d_t))
    t = means[y] + text_noise * rng.normal(0.0, 1.0, size=(n, d_t))
    masks = random_split(n, rng, split)
    return TagDataset(graph, t, t, y, *masks, num_classes=c)


def perturb_false_semantic_friends(d: TagDataset, ppr: PprMatrix, r: float, threshold: float = 0.3,
                                   seed: int = 0) -> tuple[TagDataset, PerturbationReport]:
    """Overwrite the text of victim nodes with text drawn from a structurally distant class.

    Eligible pairs are cross-class (i, j) with Pi_ij < threshold. A fraction
    ``r`` of the distinct nodes i that take part in such a pair become
    victims; each picks one partner j and copies the features of a random
    node of class y_j.
    """
    if not 0.0 < r <= 1.0:
        raise DatasetError("rate must lie in (0, 1]")
    pi = np.asarray(ppr)
    eligible = (d.y[:, None] != d.y[None, :]) & (pi < threshold)
    np.fill_diagonal(eligible, False)
    candidates = np.flatnonzero(eligible.any(axis=1))
    if len(candidates) == 0:
        raise DatasetError("no eligible cross-class pairs below the PPR threshold")
    rng = np.random.default_rng(seed)
    n_victims = _round_count(r, len(candidates))
    victims = np.sort(rng.choice(candidates, size=n_victims, replace=False))
    t, x = d.t.copy(), d.x.copy()
    by_class = [np.flatnonzero(d.y == c) for c in range(d.num_classes)]
    details = []
    for i in victims:
        j = int(rng.choice(np.flatnonzero(eligible[i])))
        donor = int(rng.choice(by_class[d.y[j]]))
        t[i] = d.t[donor]
        x[i] = d.x[donor]
        details.append({"node": int(i), "partner": j, "donor": donor})
    report = PerturbationReport("semantic_swap", r, [int(v) for v in victims], seed,
                                len(candidates), threshold, details)
    return replace(d, t=t, x=x), report


def perturb_missing_links(d: TagDataset, ppr: PprMatrix, r: float, threshold: float = 0.3,
                          seed: int = 0) -> tuple[TagDataset, PerturbationReport]:
    """Delete a fraction of same-class edges whose PPR score exceeds ``threshold``."""
    if not 0.0 < r <= 1.0:
        raise DatasetError("rate must lie in (0, 1]")
    pi = np.asarray(ppr)
    pairs = d.graph.undirected_pairs()
    keep = (d.y[pairs[:, 0]] == d.y[pairs[:, 1]]) & (pi[pairs[:, 0], pairs[:, 1]] > threshold)
    eligible = pairs[keep]
    if len(eligible) == 0:
        raise DatasetError("no eligible same-class edges above the PPR threshold")
    rng = np.random.default_rng(seed)
    n_drop = _round_count(r, len(eligible))
    pick = np.sort(rng.choice(len(eligible), size=n_drop, replace=False))
    removed = eligible[pick]
    report = PerturbationReport("edge_delete", r, [[int(a), int(b)] for a, b in removed], seed,
                                len(eligible), threshold)
    return replace(d, graph=d.graph.remove_pairs(removed)), report


def ppr_quantile_threshold(d: TagDataset, ppr: PprMatrix, q: float, kind: str) -> float:
    """PPR threshold at quantile ``q`` of the candidate pool of a perturbation.

    For ``msl`` the pool is same-class edges; for ``fsf`` it is cross-class pairs.
    """
    pi = np.asarray(ppr)
    if kind == "msl":
        pairs = d.graph.undirected_pairs()
        pairs = pairs[d.y[pairs[:, 0]] == d.y[pairs[:, 1]]]
        pool = pi[pairs[:, 0], pairs[:, 1]]
    elif kind == "fsf":
        pool = pi[d.y[:, None] != d.y[None, :]]
    else:
        raise DatasetError(f"unknown perturbation kind {kind!r}")
    if len(pool) == 0:
        raise DatasetError("empty candidate pool")
    return float(np.quantile(pool, q))


# --- directory format -------------------------------------------------------

def _write_matrix_csv(path: Path, m: np.ndarray, prefix: str) -> None:
    np.savetxt(path, m, delimiter=",", fmt="%.17g",
               header=",".join(f"{prefix}{j}" for j in range(m.shape[1])), comments="")


def _read_matrix_csv(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2))


def save_dataset(d: TagDataset, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(d.graph, out / "edges.txt")
    _write_matrix_csv(out / "features.csv", d.x, "x")
    _write_matrix_csv(out / "text.csv", d.t, "t")
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "label"])
        w.writerows((i, int(v)) for i, v in enumerate(d.y))
    with open(out / "splits.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "split"])
        for i in range(d.num_nodes):
            split = next((s for s in SPLIT_NAMES if d.mask(s)[i]), "none")
            w.writerow((i, split))
    meta = {"num_nodes": d.num_nodes, "num_classes": d.num_classes,
            "x_dim": int(d.x.shape[1]), "t_dim": int(d.t.shape[1]),
            "directed": bool(d.graph.directed)}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(directory) -> TagDataset:
    root = Path(directory)
    required = ["edges.txt", "features.csv", "text.csv", "labels.csv", "splits.csv", "meta.json"]
    missing = [f for f in required if not (root / f).exists()]
    if missing:
        raise DatasetError(f"{root}: missing {', '.join(missing)}")
    meta = json.loads((root / "meta.json").read_text())
    n = int(meta["num_nodes"])
    graph = read_edge_list(root / "edges.txt", num_nodes=n, directed=bool(meta.get("directed", False)))
    x = _read_matrix_csv(root / "features.csv")
    t = _read_matrix_csv(root / "text.csv")
    if x.shape != (n, meta["x_dim"]) or t.shape != (n, meta["t_dim"]):
        raise DatasetError("feature dimensions disagree with meta.json")
    with open(root / "labels.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    y = np.zeros(n, dtype=np.int64)
    for row in rows:
        y[int(row["node"])] = int(row["label"])
    masks = {s: np.zeros(n, dtype=bool) for s in SPLIT_NAMES}
    with open(root / "splits.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["split"] in masks:
                masks[row["split"]][int(row["node"])] = True
            elif row["split"] != "none":
                raise DatasetError(f"unknown split {row['split']!r}")
    return TagDataset(graph, x, t, y, masks["train"], masks["val"], masks["test"],
                      num_classes=int(meta["num_classes"]))


def fingerprint(directory) -> str:
    """SHA-256 over the dataset files, in a fixed order."""
    h = hashlib.sha256()
    for name in ["edges.txt", "features.csv", "text.csv", "labels.csv", "splits.csv", "meta.json"]:
        h.update(name.encode())
        h.update((Path(directory) / name).read_bytes())
    return h.hexdigest()
