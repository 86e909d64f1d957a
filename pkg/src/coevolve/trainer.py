"""Warm-up, Gauss-Seidel co-evolution (semantic step, graph rebuild, GNN step) and inference."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np
import torch
from torch import nn

from .config import TrainConfig
from .conflict import ConflictSets, conflict_loss, mine_conflicts, pair_similarity
from .data import TagDataset
from .fusion import FusionGate, consistency_loss, fuse_predictions, normalized_entropy
from .gnn import GCN, dense_normalized
from .graph import PprMatrix, homophily_ratio, normalize_adjacency, ppr_closed_form
from .metrics import accuracy, macro_f1
from .semantic import Projector, SemanticEncoder, row_normalize
from .structure import DynamicGraph, MetricLearner, reconstruct

HN_BINS = np.round(np.linspace(-1.0, 1.0, 41), 10)


class NumericalError(RuntimeError):
    pass


class CoEvolveModel(nn.Module):
    """All trainable parameter groups of both views."""

    def __init__(self, x_dim: int, t_dim: int, num_classes: int, cfg: TrainConfig):
        super().__init__()
        gen = torch.Generator().manual_seed(cfg.seed)
        torch.manual_seed(cfg.seed)
        self.gnn = GCN(x_dim, num_classes, hidden=cfg.gnn_hidden, out_dim=cfg.struct_dim)
        self.projector = Projector(cfg.struct_dim, cfg.prompt_dim, hidden=cfg.projector_hidden)
        self.encoder = SemanticEncoder(cfg.prompt_dim, t_dim, num_classes, hidden=cfg.encoder_hidden,
                                       embed_dim=cfg.embed_dim)
        self.metric = MetricLearner(cfg.embed_dim, heads=cfg.heads, gate_hidden=cfg.gate_hidden, generator=gen)
        self.fusion = FusionGate(cfg.struct_dim, hidden=cfg.fusion_hidden)
        with torch.no_grad():
            self.metric.gate.last.bias.fill_(cfg.gate_init_bias)

    @property
    def dims(self) -> dict:
        return {"x_dim": self.gnn.layer1.in_features, "t_dim": self.encoder.text_dim,
                "num_classes": self.gnn.head.out_features}

    def semantic_parameters(self):
        return [*self.encoder.parameters(), *self.projector.parameters()]

    def structural_parameters(self):
        return [*self.gnn.parameters(), *self.metric.parameters()]


@dataclass
class EpochLog:
    epoch: int
    phase: str
    a_task: float = math.nan
    a_conflict: float = math.nan
    a_cons: float = math.nan
    c_task: float = math.nan
    c_conflict: float = math.nan
    c_cons: float = math.nan
    warm_gnn_ce: float = math.nan
    warm_llm_ce: float = math.nan
    val_loss: float = math.nan
    train_acc: float = math.nan
    val_acc: float = math.nan
    test_acc: float = math.nan
    val_f1: float = math.nan
    test_f1: float = math.nan
    val_acc_gnn: float = math.nan
    val_acc_llm: float = math.nan
    test_acc_gnn: float = math.nan
    test_acc_llm: float = math.nan
    homophily: float = math.nan
    max_out_degree: float = math.nan
    alpha_mean: float = math.nan
    hn_pairs: float = math.nan
    hn_cos_mined: float = math.nan
    hn_cos_tracked: float = math.nan
    entropy_gnn: float = math.nan
    entropy_llm: float = math.nan
    beta_mean: float = math.nan
    beta_std: float = math.nan


def write_epoch_logs(logs: list[EpochLog], path) -> None:
    names = [f.name for f in fields(EpochLog)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for rec in logs:
            w.writerow([_fmt(getattr(rec, n)) for n in names])


def read_epoch_logs(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (v if k == "phase" else (int(v) if k == "epoch" else float(v))) for k, v in row.items()})
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


@dataclass
class InferenceResult:
    y_final: torch.Tensor
    beta: torch.Tensor
    p_gnn: torch.Tensor
    p_llm: torch.Tensor
    h_struct: torch.Tensor
    h_sem: torch.Tensor
    graph: DynamicGraph | None

    @property
    def predictions(self) -> np.ndarray:
        return self.y_final.argmax(dim=1).numpy()


def cross_entropy(prob: torch.Tensor, y: torch.Tensor, mask) -> torch.Tensor:
    idx = torch.from_numpy(np.flatnonzero(mask))
    picked = prob[idx, y[idx]]
    return -picked.clamp_min(1e-12).log().mean()


def cosine_warmup_schedule(total_steps: int, warmup_frac: float):
    warm = int(math.ceil(warmup_frac * total_steps))

    def factor(step: int) -> float:
        if step < warm:
            return (step + 1) / warm
        if total_steps <= warm:
            return 1.0
        progress = (step - warm) / (total_steps - warm)
        return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))

    return factor


class CoEvolveTrainer:
    """Holds one training run's data tensors, model, optimizers and dynamic graph."""

    def __init__(self, dataset: TagDataset, cfg: TrainConfig, model: CoEvolveModel | None = None,
                 ppr: PprMatrix | None = None):
        torch.set_num_threads(cfg.threads)
        self.cfg = cfg
        self.data = dataset
        self.model = model or CoEvolveModel(dataset.x.shape[1], dataset.t.shape[1], dataset.num_classes, cfg)
        self.x = torch.from_numpy(dataset.x.copy())
        self.t = torch.from_numpy(dataset.t.copy())
        self.y = torch.from_numpy(dataset.y.copy())
        self.a_static = torch.from_numpy(dataset.graph.to_dense())
        self.a_static_norm = torch.from_numpy(normalize_adjacency(dataset.graph).to_dense())
        self.ppr = ppr if ppr is not None else ppr_closed_form(
            normalize_adjacency(dataset.graph), cfg.gamma_ppr, dense_cap=cfg.dense_cap)
        self.dyn = DynamicGraph(dataset.graph.to_dense() > 0, self.a_static.clone())
        self.h_sem_fixed: torch.Tensor | None = None
        self.p_llm_fixed: torch.Tensor | None = None
        self.tracked_pairs: np.ndarray | None = None
        self.histograms: list[tuple[int, np.ndarray]] = []
        self.opt_sem = self.opt_gnn = None
        self.sched_sem = self.sched_gnn = None
        self._reset_optimizers()

    # -- helpers ---------------------------------------------------------------

    def _reset_optimizers(self):
        cfg, m = self.cfg, self.model
        self.opt_sem = torch.optim.AdamW(
            [*m.semantic_parameters(), *m.fusion.parameters()], lr=cfg.lr_semantic, weight_decay=cfg.weight_decay)
        self.opt_gnn = torch.optim.AdamW(
            [*m.structural_parameters(), *m.fusion.parameters()], lr=cfg.lr_gnn, weight_decay=cfg.weight_decay)
        n_sem = max(cfg.coevolve_epochs * cfg.steps_semantic, 1)
        n_gnn = max(cfg.coevolve_epochs * cfg.steps_gnn, 1)
        self.sched_sem = torch.optim.lr_scheduler.LambdaLR(
            self.opt_sem, cosine_warmup_schedule(n_sem, cfg.lr_warmup_frac))
        self.sched_gnn = torch.optim.lr_scheduler.LambdaLR(
            self.opt_gnn, cosine_warmup_schedule(n_gnn, cfg.lr_warmup_frac))

    def _prompts(self, h_struct: torch.Tensor) -> torch.Tensor:
        if self.cfg.no_sp:
            return h_struct.new_zeros(h_struct.shape[0], self.cfg.prompt_dim)
        return self.model.projector(h_struct)

    def _dyn_norm(self) -> torch.Tensor:
        return dense_normalized(self.dyn.weights.detach())

    def _step(self, opt, sched, terms: dict[str, torch.Tensor]) -> dict[str, float]:
        active = [v for v in terms.values() if v is not None]
        values = {k: (float(v.detach()) if v is not None else math.nan) for k, v in terms.items()}
        if not active:
            return values
        total = sum(active)
        if not torch.isfinite(total):
            raise NumericalError(f"non-finite loss: {values}")
        opt.zero_grad(set_to_none=True)
        if total.requires_grad:
            total.backward()
            for group in opt.param_groups:
                for p in group["params"]:
                    if p.grad is not None and not torch.isfinite(p.grad).all():
                        raise NumericalError("non-finite gradient")
            opt.step()
        if sched is not None:
            sched.step()
        return values

    def _loss_terms(self, y_final, z, sets, p_gnn, p_llm):
        cfg = self.cfg
        task = cfg.w_task * cross_entropy(y_final, self.y, self.data.train_mask) if cfg.w_task else None
        conflict = None
        if not cfg.no_cal and cfg.w_conflict:
            conflict = cfg.w_conflict * conflict_loss(z, sets, cfg.conflict)
        cons = None
        if not cfg.no_ugc and cfg.w_cons:
            cons = cfg.w_cons * consistency_loss(p_gnn, p_llm)
        return {"task": task, "conflict": conflict, "cons": cons}

    def _mine(self, z: torch.Tensor) -> ConflictSets:
        return mine_conflicts(z.detach(), self.ppr, self.cfg.conflict)

    # -- warm-up ---------------------------------------------------------------

    def warm_up(self) -> list[EpochLog]:
        """Independent CE pre-training of both views on the static graph with zero prompts."""
        cfg, m = self.cfg, self.model
        logs = []
        if cfg.warmup_epochs == 0:
            return logs
        opt_g = torch.optim.AdamW(m.gnn.parameters(), lr=cfg.lr_gnn, weight_decay=cfg.weight_decay)
        opt_l = torch.optim.AdamW(m.encoder.parameters(), lr=cfg.lr_semantic, weight_decay=cfg.weight_decay)
        zeros = torch.zeros(self.data.num_nodes, cfg.prompt_dim, dtype=torch.float64)
        for epoch in range(1, cfg.warmup_epochs + 1):
            for _ in range(cfg.steps_gnn):
                _, p_gnn = m.gnn(self.a_static_norm, self.x)
                g = self._step(opt_g, None, {"ce": cross_entropy(p_gnn, self.y, self.data.train_mask)})
            for _ in range(cfg.steps_semantic):
                _, p_llm = m.encoder(zeros, self.t)
                s = self._step(opt_l, None, {"ce": cross_entropy(p_llm, self.y, self.data.train_mask)})
            rec = EpochLog(epoch=epoch, phase="warmup", warm_gnn_ce=g["ce"], warm_llm_ce=s["ce"])
            with torch.no_grad():
                _, p_gnn = m.gnn(self.a_static_norm, self.x)
                _, p_llm = m.encoder(zeros, self.t)
            rec.entropy_gnn = float(normalized_entropy(p_gnn).mean())
            rec.entropy_llm = float(normalized_entropy(p_llm).mean())
            for split in ("val", "test"):
                mask = self.data.mask(split)
                setattr(rec, f"{split}_acc_gnn", accuracy(self.data.y[mask], p_gnn.argmax(1).numpy()[mask]))
                setattr(rec, f"{split}_acc_llm", accuracy(self.data.y[mask], p_llm.argmax(1).numpy()[mask]))
            rec.homophily = homophily_ratio(self.data.graph, self.data.y)
            logs.append(rec)
        self.dyn = DynamicGraph(self.data.graph.to_dense() > 0, self.a_static.clone())
        return logs

    # -- Gauss-Seidel steps ------------------------------------------------------

    def step_a_semantic_update(self) -> dict[str, float]:
        """GNN frozen; update encoder, projector and fusion gate."""
        m = self.model
        with torch.no_grad():
            h_struct, p_gnn = m.gnn(self._dyn_norm(), self.x)
        ent_gnn = normalized_entropy(p_gnn)
        sets = None
        values = {}
        for _ in range(self.cfg.steps_semantic):
            h_sem, p_llm = m.encoder(self._prompts(h_struct), self.t)
            z = row_normalize(h_sem)
            if sets is None:
                sets = self._mine(z)
            y_final, _ = fuse_predictions(m.fusion, p_llm, p_gnn, normalized_entropy(p_llm), ent_gnn, h_struct)
            values = self._step(self.opt_sem, self.sched_sem, self._loss_terms(y_final, z, sets, p_gnn, p_llm))
        return values

    def step_b_reconstruct(self) -> DynamicGraph:
        """Fresh semantic embeddings, then rebuild the dynamic graph from them."""
        m = self.model
        with torch.no_grad():
            h_struct, _ = m.gnn(self._dyn_norm(), self.x)
            h_sem, p_llm = m.encoder(self._prompts(h_struct), self.t)
            self.h_sem_fixed, self.p_llm_fixed = h_sem, p_llm
            if self.cfg.no_ssl:
                self.dyn = DynamicGraph(self.data.graph.to_dense() > 0, self.a_static.clone())
            else:
                self.dyn = reconstruct(m.metric, h_sem, self.a_static, self.cfg.k,
                                       normalize=self.cfg.sim_normalize)
        return self.dyn

    def step_c_gnn_update(self) -> dict[str, float]:
        """Semantic view frozen; update GNN, metric heads and gate, fusion gate."""
        if self.h_sem_fixed is None:
            self.step_b_reconstruct()
        m = self.model
        p_llm = self.p_llm_fixed
        ent_llm = normalized_entropy(p_llm)
        sets = None
        values = {}
        for _ in range(self.cfg.steps_gnn):
            if self.cfg.no_ssl:
                a_norm = self.a_static_norm
            else:
                weights = reconstruct(m.metric, self.h_sem_fixed, self.a_static, self.cfg.k,
                                      mask=self.dyn.mask, normalize=self.cfg.sim_normalize).weights
                a_norm = dense_normalized(weights)
            h_struct, p_gnn = m.gnn(a_norm, self.x)
            z = row_normalize(h_struct)
            if sets is None:
                sets = self._mine(z)
            y_final, _ = fuse_predictions(m.fusion, p_llm, p_gnn, ent_llm, normalized_entropy(p_gnn), h_struct)
            values = self._step(self.opt_gnn, self.sched_gnn, self._loss_terms(y_final, z, sets, p_gnn, p_llm))
        if not self.cfg.no_ssl:
            with torch.no_grad():
                self.dyn = reconstruct(m.metric, self.h_sem_fixed, self.a_static, self.cfg.k, mask=self.dyn.mask,
                                       normalize=self.cfg.sim_normalize)
        return values

    # -- evaluation ------------------------------------------------------------

    def evaluate_epoch(self, rec: EpochLog) -> InferenceResult:
        res = infer(self.data, self.model, self.cfg)
        d = self.data
        pred = res.predictions
        for split in ("train", "val", "test"):
            mask = d.mask(split)
            setattr(rec, f"{split}_acc", accuracy(d.y[mask], pred[mask]))
        for split in ("val", "test"):
            mask = d.mask(split)
            setattr(rec, f"{split}_f1", macro_f1(d.y[mask], pred[mask]))
            setattr(rec, f"{split}_acc_gnn", accuracy(d.y[mask], res.p_gnn.argmax(1).numpy()[mask]))
            setattr(rec, f"{split}_acc_llm", accuracy(d.y[mask], res.p_llm.argmax(1).numpy()[mask]))
        rec.val_loss = float(cross_entropy(res.y_final, self.y, d.val_mask)) if d.val_mask.any() else math.nan
        rec.entropy_gnn = float(normalized_entropy(res.p_gnn).mean())
        rec.entropy_llm = float(normalized_entropy(res.p_llm).mean())
        rec.beta_mean = float(res.beta.mean())
        rec.beta_std = float(res.beta.std(unbiased=False))
        z = row_normalize(res.h_sem)
        sets = mine_conflicts(z, self.ppr, self.cfg.conflict)
        rec.hn_pairs = float(len(sets.negatives))
        if len(sets.negatives):
            rec.hn_cos_mined = float(pair_similarity(z, sets.negatives).mean())
        if self.tracked_pairs is None:
            self.tracked_pairs = sets.negatives
        if len(self.tracked_pairs):
            sims = pair_similarity(z, self.tracked_pairs).numpy()
            rec.hn_cos_tracked = float(sims.mean())
            self.histograms.append((rec.epoch, np.histogram(sims, bins=HN_BINS)[0]))
        return res

    def run_epoch(self, epoch: int) -> EpochLog:
        rec = EpochLog(epoch=epoch, phase="coevolve")
        a = self.step_a_semantic_update()
        dyn = self.step_b_reconstruct()
        g = dyn.to_graph()
        rec.homophily = homophily_ratio(g, self.data.y) if g.num_edges else math.nan
        rec.max_out_degree = float(dyn.out_degree().max(initial=0))
        with torch.no_grad():
            rec.alpha_mean = float(torch.sigmoid(self.model.metric.gate(self.h_sem_fixed)).mean())
        c = self.step_c_gnn_update()
        rec.a_task, rec.a_conflict, rec.a_cons = a.get("task"), a.get("conflict"), a.get("cons")
        rec.c_task, rec.c_conflict, rec.c_cons = c.get("task"), c.get("conflict"), c.get("cons")
        for name in ("a_task", "a_conflict", "a_cons", "c_task", "c_conflict", "c_cons"):
            if getattr(rec, name) is None:
                setattr(rec, name, math.nan)
        with torch.no_grad():
            self.evaluate_epoch(rec)
        return rec


@dataclass
class TrainResult:
    model: CoEvolveModel
    logs: list[EpochLog]
    best_epoch: int
    ppr: PprMatrix
    graph: DynamicGraph
    histograms: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.model, self.logs))


def train(dataset: TagDataset, cfg: TrainConfig, ppr: PprMatrix | None = None) -> TrainResult:
    """Warm-up, then ``epochs - warmup_epochs`` co-evolution epochs.

    The returned model holds the parameters of the co-evolution epoch with
    the best fused validation accuracy (earliest on ties).
    """
    trainer = CoEvolveTrainer(dataset, cfg, ppr=ppr)
    logs = trainer.warm_up()
    best_state, best_acc, best_epoch = None, -math.inf, 0
    for epoch in range(1, cfg.coevolve_epochs + 1):
        rec = trainer.run_epoch(epoch)
        logs.append(rec)
        if rec.val_acc > best_acc:
            best_acc, best_epoch = rec.val_acc, epoch
            best_state = copy.deepcopy(trainer.model.state_dict())
    if best_state is not None:
        trainer.model.load_state_dict(best_state)
    return TrainResult(trainer.model, logs, best_epoch, trainer.ppr, trainer.dyn, trainer.histograms)


@torch.no_grad()
def infer(dataset: TagDataset, model: CoEvolveModel, cfg: TrainConfig) -> InferenceResult:
    """Five-stage inference.

    1. GNN on the static graph, projected to prompts.
    2. Semantic encoding of (prompt, text).
    3. Dynamic graph reconstruction from the semantic embeddings.
    4. Second GNN pass on the reconstructed graph.
    5. Entropy-aware fusion.
    """
    x = torch.from_numpy(dataset.x.copy())
    t = torch.from_numpy(dataset.t.copy())
    a_static = torch.from_numpy(dataset.graph.to_dense())
    a_static_norm = torch.from_numpy(normalize_adjacency(dataset.graph).to_dense())

    h_struct0, _ = model.gnn(a_static_norm, x)
    if cfg.no_sp:
        prompts = torch.zeros(x.shape[0], cfg.prompt_dim, dtype=torch.float64)
    else:
        prompts = model.projector(h_struct0)
    h_sem, p_llm = model.encoder(prompts, t)
    if cfg.no_ssl:
        dyn = DynamicGraph(dataset.graph.to_dense() > 0, a_static)
    else:
        dyn = reconstruct(model.metric, h_sem, a_static, cfg.k, normalize=cfg.sim_normalize)
    h_struct, p_gnn = model.gnn(dense_normalized(dyn.weights), x)
    y_final, beta = fuse_predictions(model.fusion, p_llm, p_gnn, normalized_entropy(p_llm),
                                     normalized_entropy(p_gnn), h_struct)
    return InferenceResult(y_final, beta, p_gnn, p_llm, h_struct, h_sem, dyn)


def evaluate(dataset: TagDataset, res: InferenceResult) -> dict:
    """Accuracy and macro-F1 per split for fused and per-view predictions."""
    preds = {"fused": res.predictions, "gnn": res.p_gnn.argmax(1).numpy(), "llm": res.p_llm.argmax(1).numpy()}
    out = {}
    for split in ("train", "val", "test"):
        mask = dataset.mask(split)
        out[split] = {view: {"acc": accuracy(dataset.y[mask], p[mask]), "f1": macro_f1(dataset.y[mask], p[mask])}
                      for view, p in preds.items()}
    return out
