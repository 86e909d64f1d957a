"""Command-line entry point.

    coevolve generate --nodes 400 --classes 4 --p-in 0.02 --p-out 0.06 --seed 1 --out data/
    coevolve train --data data/ --config configs/reference.toml --seed 1 --out runs/full
    coevolve perturb --data data/ --kind msl --rate 0.3 --threshold-quantile 0.5 --out data_msl/
    coevolve eval --data data/ --checkpoint runs/full/checkpoints/best.npz --out runs/full/eval
    coevolve report --run runs/full

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ABLATIONS, ConfigError, TrainConfig, load_config
from .data import (
    DatasetError,
    fingerprint,
    generate_synthetic,
    load_dataset,
    perturb_false_semantic_friends,
    perturb_missing_links,
    ppr_quantile_threshold,
    save_dataset,
)
from .graph import ConvergenceError, GraphError, normalize_adjacency, ppr_closed_form, write_edge_list
from .trainer import HN_BINS, NumericalError, evaluate, infer, train, write_epoch_logs

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _revision() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"coevolve-{__version__}"


def write_manifest(out: Path, command: str, cfg: dict | None, data_dir: Path | None, seed: int | None,
                   extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "revision": _revision(),
        "seed": seed,
        "output_dir": str(out),
        "dataset": str(data_dir) if data_dir else None,
        "dataset_fingerprint": fingerprint(data_dir) if data_dir else None,
        "config": cfg,
        **(extra or {}),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_matrix(path: Path, m, prefix: str) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    header = ",".join(["node"] + [f"{prefix}{j}" for j in range(m.shape[1])])
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for i, row in enumerate(m):
            fh.write(",".join([str(i)] + [f"{v:.17g}" for v in row]) + "\n")


def write_histograms(path: Path, histograms) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "bin_left", "bin_right", "count"])
        for epoch, counts in histograms:
            for lo, hi, c in zip(HN_BINS[:-1], HN_BINS[1:], counts):
                w.writerow([epoch, f"{lo:.17g}", f"{hi:.17g}", int(c)])


def export_inference(out: Path, res) -> None:
    _write_matrix(out / "y_final.csv", res.y_final.numpy(), "p")
    _write_matrix(out / "beta.csv", res.beta.numpy(), "beta")
    _write_matrix(out / "h_sem.csv", res.h_sem.numpy(), "h")
    _write_matrix(out / "h_struct.csv", res.h_struct.numpy(), "h")
    if res.graph is not None:
        write_edge_list(res.graph.to_graph(), out / "graph_dynamic.txt", header="dynamic graph at inference")


# --- commands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    for name in ("p_in", "p_out"):
        if not 0.0 <= getattr(args, name) <= 1.0:
            raise UsageError(f"--{name.replace('_', '-')} must lie in [0, 1]")
    try:
        d = generate_synthetic(args.nodes, args.classes, args.p_in, args.p_out, d_t=args.text_dim,
                               text_noise=args.text_noise, seed=args.seed)
    except DatasetError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    save_dataset(d, out)
    params = {k: getattr(args, k) for k in ("nodes", "classes", "p_in", "p_out", "text_dim", "text_noise")}
    write_manifest(out, "generate", None, None, args.seed, {"generator": params})
    print(f"wrote {d.num_nodes} nodes, {len(d.graph.undirected_pairs())} edges to {out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    over = {a: True for a in ABLATIONS if getattr(args, a)}
    for name in ("seed", "epochs", "warmup_epochs", "threads"):
        if getattr(args, name, None) is not None:
            over[name] = getattr(args, name)
    try:
        return cfg.with_overrides(**over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = _train_config(args)
    data_dir = Path(args.data)
    d = load_dataset(data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "train", _config_snapshot(cfg), data_dir, cfg.seed)
    result = train(d, cfg)
    write_epoch_logs(result.logs, out / "metrics.csv")
    write_histograms(out / "hn_hist.csv", result.histograms)
    save_checkpoint(result.model, cfg, out / "checkpoints" / "best.npz", {"best_epoch": result.best_epoch})
    res = infer(d, result.model, cfg)
    export_inference(out, res)
    summary = {"best_epoch": result.best_epoch, "ablations": cfg.ablations, "splits": evaluate(d, res)}
    _write_json(out / "results.json", summary)
    _print_summary(summary["splits"])
    return EXIT_OK


def _config_snapshot(cfg: TrainConfig) -> dict:
    return json.loads(json.dumps(cfg.to_dict()))


def cmd_eval(args) -> int:
    d = load_dataset(args.data)
    model, cfg, meta = load_checkpoint(args.checkpoint)
    dims = meta["dims"]
    got = {"x_dim": d.x.shape[1], "t_dim": d.t.shape[1], "num_classes": d.num_classes}
    if got != dims:
        raise CheckpointError(f"checkpoint dims {dims} do not match dataset dims {got}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = infer(d, model, cfg)
    export_inference(out, res)
    summary = {"best_epoch": meta.get("best_epoch"), "ablations": cfg.ablations, "splits": evaluate(d, res)}
    _write_json(out / "results.json", summary)
    _print_summary(summary["splits"])
    return EXIT_OK


def cmd_perturb(args) -> int:
    if not 0.0 < args.rate <= 1.0:
        raise UsageError("--rate must lie in (0, 1]")
    d = load_dataset(args.data)
    ppr = ppr_closed_form(normalize_adjacency(d.graph), args.gamma)
    threshold = args.threshold
    if args.threshold_quantile is not None:
        if not 0.0 <= args.threshold_quantile <= 1.0:
            raise UsageError("--threshold-quantile must lie in [0, 1]")
        threshold = ppr_quantile_threshold(d, ppr, args.threshold_quantile, args.kind)
    fn = perturb_false_semantic_friends if args.kind == "fsf" else perturb_missing_links
    new, report = fn(d, ppr, args.rate, threshold=threshold, seed=args.seed)
    out = Path(args.out)
    save_dataset(new, out)
    (out / "perturbation.json").write_text(report.to_json() + "\n")
    write_manifest(out, "perturb", None, Path(args.data), args.seed,
                   {"perturbation": {"kind": args.kind, "rate": args.rate, "threshold": threshold,
                                     "gamma": args.gamma, "eligible": report.eligible,
                                     "affected": len(report.affected)}})
    print(f"{args.kind}: {len(report.affected)} of {report.eligible} eligible affected (threshold {threshold:.6g})")
    return EXIT_OK


def cmd_ppr(args) -> int:
    d = load_dataset(args.data)
    ppr = ppr_closed_form(normalize_adjacency(d.graph), args.gamma)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ppr.to_csv(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_report

    run = Path(args.run)
    if not (run / "metrics.csv").exists():
        raise DatasetError(f"{run}: no metrics.csv")
    out = Path(args.out) if args.out else run / "figures"
    rows, figures = render_report(run, out, fmt=args.format)
    w = csv.writer(sys.stdout, delimiter=args.delimiter, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    for f in figures:
        print(f"figure\t{f}", file=sys.stderr)
    return EXIT_OK


def _print_summary(splits: dict) -> None:
    print("split,view,acc,macro_f1")
    for split, views in splits.items():
        for view, m in views.items():
            print(f"{split},{view},{m['acc']:.4f},{m['f1']:.4f}")


# --- parser -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coevolve", description="Dual-view GNN / semantic-encoder co-evolution at desk scale.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic text-attributed SBM dataset")
    g.add_argument("--nodes", type=int, default=400)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--p-in", type=float, default=0.02)
    g.add_argument("--p-out", type=float, default=0.06)
    g.add_argument("--text-dim", type=int, default=32)
    g.add_argument("--text-noise", type=float, default=2.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="warm-up plus co-evolution training")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--warmup-epochs", type=int)
    t.add_argument("--threads", type=int)
    for a in ABLATIONS:
        t.add_argument(f"--{a.replace('_', '-')}", dest=a, action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run multi-stage inference from a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("perturb", help="apply a stress perturbation to a dataset")
    q.add_argument("--data", required=True)
    q.add_argument("--kind", choices=["fsf", "msl"], required=True)
    q.add_argument("--rate", type=float, required=True)
    q.add_argument("--threshold", type=float, default=0.3)
    q.add_argument("--threshold-quantile", type=float,
                   help="use this quantile of the candidate pool's PPR values instead of --threshold")
    q.add_argument("--gamma", type=float, default=0.15)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_perturb)

    r = sub.add_parser("ppr", help="export the dense PPR matrix of a dataset as CSV")
    r.add_argument("--data", required=True)
    r.add_argument("--gamma", type=float, default=0.15)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_ppr)

    f = sub.add_parser("report", help="render figures and a summary table from a training run")
    f.add_argument("--run", required=True)
    f.add_argument("--out")
    f.add_argument("--format", default="png", choices=["png", "pdf", "svg"])
    f.add_argument("--delimiter", default=",")
    f.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, GraphError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
