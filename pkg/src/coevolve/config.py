"""Training configuration and its TOML representation.

The file has one table per group; keys inside a table are the
``TrainConfig`` field names (``[conflict]`` holds ``ConflictConfig``)::

    [train]
    epochs = 120
    warmup_epochs = 20
    seed = 1

    [conflict]
    tau = 0.5
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .conflict import ConflictConfig

ABLATIONS = ("no_sp", "no_ssl", "no_cal", "no_ugc")

SECTIONS = {
    "train": ("epochs", "warmup_epochs", "lr_semantic", "lr_gnn", "lr_warmup_frac", "weight_decay",
              "steps_semantic", "steps_gnn", "seed", "threads"),
    "graph": ("k", "gamma_ppr", "dense_cap", "gate_init_bias", "sim_normalize"),
    "model": ("gnn_hidden", "struct_dim", "prompt_dim", "projector_hidden", "encoder_hidden",
              "embed_dim", "heads", "gate_hidden", "fusion_hidden"),
    "loss": ("w_task", "w_conflict", "w_cons"),
    "ablation": ABLATIONS,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # schedule; ``epochs`` counts warm-up epochs too
    epochs: int = 120
    warmup_epochs: int = 20
    lr_semantic: float = 1e-4
    lr_gnn: float = 5e-3
    lr_warmup_frac: float = 0.1
    weight_decay: float = 0.01
    steps_semantic: int = 1
    steps_gnn: int = 1
    seed: int = 0
    threads: int = 1
    # graph
    k: int = 10
    gamma_ppr: float = 0.15
    dense_cap: int = 20_000
    gate_init_bias: float = 0.0
    sim_normalize: bool = True
    # dims
    gnn_hidden: int = 128
    struct_dim: int = 64
    prompt_dim: int = 32
    projector_hidden: int = 64
    encoder_hidden: int = 64
    embed_dim: int = 64
    heads: int = 4
    gate_hidden: int = 16
    fusion_hidden: int = 32
    # loss weights
    w_task: float = 1.0
    w_conflict: float = 1.0
    w_cons: float = 1.0
    # ablations
    no_sp: bool = False
    no_ssl: bool = False
    no_cal: bool = False
    no_ugc: bool = False
    conflict: ConflictConfig = field(default_factory=ConflictConfig)

    def __post_init__(self):
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError("need 0 <= warmup_epochs <= epochs")
        if self.lr_semantic <= 0 or self.lr_gnn <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.lr_warmup_frac < 1.0:
            raise ConfigError("lr_warmup_frac must lie in [0, 1)")
        if self.k < 1 or self.steps_semantic < 1 or self.steps_gnn < 1 or self.threads < 1:
            raise ConfigError("k, step counts and threads must be positive")
        if not 0.0 < self.gamma_ppr < 1.0:
            raise ConfigError("gamma_ppr must lie in (0, 1)")
        if min(self.w_task, self.w_conflict, self.w_cons, self.weight_decay) < 0:
            raise ConfigError("loss weights and weight decay must be non-negative")

    @property
    def coevolve_epochs(self) -> int:
        return self.epochs - self.warmup_epochs

    @property
    def ablations(self) -> list[str]:
        return [a for a in ABLATIONS if getattr(self, a)]

    def with_overrides(self, **kwargs) -> "TrainConfig":
        conflict = kwargs.pop("conflict", None) or {}
        if isinstance(conflict, dict):
            conflict = replace(self.conflict, **conflict)
        try:
            return replace(self, conflict=conflict, **kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def to_toml(self) -> str:
        lines = []
        for section, keys in SECTIONS.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_toml_value(getattr(self, k))}" for k in keys)
            lines.append("")
        lines.append("[conflict]")
        lines.extend(f"{f.name} = {_toml_value(getattr(self.conflict, f.name))}" for f in fields(ConflictConfig))
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_from_mapping(data: dict, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    known = {f.name for f in fields(TrainConfig)} - {"conflict"}
    flat, conflict = {}, {}
    for section, values in data.items():
        if not isinstance(values, dict):
            raise ConfigError(f"top-level key {section!r} must be a table")
        if section == "conflict":
            valid = {f.name for f in fields(ConflictConfig)}
            bad = set(values) - valid
            if bad:
                raise ConfigError(f"unknown [conflict] keys: {sorted(bad)}")
            conflict.update(values)
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        bad = set(values) - known
        if bad:
            raise ConfigError(f"unknown [{section}] keys: {sorted(bad)}")
        flat.update(values)
    try:
        return base.with_overrides(conflict=conflict, **flat)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_tables(cfg: TrainConfig) -> dict:
    """The config as nested tables, exactly as a file written by ``to_toml`` would load."""
    return tomllib.loads(cfg.to_toml())


def load_config(path) -> TrainConfig:
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data)
