"""Flat key=value experiment configuration.

One key per line, sections dotted (``finetune.optimizer.kind=recadam``).
Blank lines and ``#`` comments are allowed; unknown keys are hard errors.
"""

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .optim import SCHEDULE_KINDS, STEPPER_KINDS, AdamConfig, ScheduleMultiplier
from .recall import PENALTY_KINDS
from .shifting import AnnealSchedule
from .tasks import TASK_KINDS

INIT_KINDS = ("random", "pretrained")


@dataclass
class TransferSpec:
    kind: str
    rho: float
    seed: int = 0
    dim: int = 0
    n_samples: int = 512
    dim_in: int = 0
    hidden: int = 0
    classes: int = 0
    noise_std: Optional[float] = None
    center_scale: float = 1.0
    label_noise: float = 0.0


@dataclass
class PretrainSpec:
    steps: int
    batch_size: int = 32
    optimizer: AdamConfig = field(default_factory=lambda: AdamConfig(alpha=0.01))


@dataclass
class FinetuneSpec:
    steps: int
    batch_size: int = 32
    optimizer_kind: str = "adam"
    optimizer: AdamConfig = field(default_factory=lambda: AdamConfig(alpha=0.001))
    weight_decay: float = 0.0
    init: str = "pretrained"
    schedule: ScheduleMultiplier = field(default_factory=ScheduleMultiplier)
    loss_threshold: Optional[float] = None


@dataclass
class PenaltySpec:
    kind: str = "isotropic"
    gamma: float = 5000.0
    fisher_samples: int = 1000


@dataclass
class ExperimentConfig:
    transfer: TransferSpec
    pretrain: PretrainSpec
    finetune: FinetuneSpec
    penalty: PenaltySpec
    shifting: AnnealSchedule
    seeds: tuple
    output_dir: str

    def to_flat(self) -> dict:
        """Canonical flat key -> string mapping (round-trips via parse)."""
        t, p, f, pen, s = self.transfer, self.pretrain, self.finetune, self.penalty, self.shifting
        flat = {
            "transfer.kind": t.kind,
            "transfer.rho": repr(t.rho),
            "transfer.seed": str(t.seed),
            "transfer.n_samples": str(t.n_samples),
            "transfer.center_scale": repr(t.center_scale),
            "transfer.label_noise": repr(t.label_noise),
            "pretrain.steps": str(p.steps),
            "pretrain.batch_size": str(p.batch_size),
            "pretrain.optimizer.alpha": repr(p.optimizer.alpha),
            "pretrain.optimizer.beta1": repr(p.optimizer.beta1),
            "pretrain.optimizer.beta2": repr(p.optimizer.beta2),
            "pretrain.optimizer.eps": repr(p.optimizer.eps),
            "finetune.steps": str(f.steps),
            "finetune.batch_size": str(f.batch_size),
            "finetune.optimizer.kind": f.optimizer_kind,
            "finetune.optimizer.alpha": repr(f.optimizer.alpha),
            "finetune.optimizer.beta1": repr(f.optimizer.beta1),
            "finetune.optimizer.beta2": repr(f.optimizer.beta2),
            "finetune.optimizer.eps": repr(f.optimizer.eps),
            "finetune.optimizer.weight_decay": repr(f.weight_decay),
            "finetune.init": f.init,
            "finetune.schedule.kind": f.schedule.kind,
            "finetune.schedule.warmup_steps": str(f.schedule.warmup_steps),
            "finetune.schedule.total_steps": str(f.schedule.total_steps),
            "penalty.kind": pen.kind,
            "penalty.gamma": repr(pen.gamma),
            "penalty.fisher_samples": str(pen.fisher_samples),
            "shifting.k": repr(s.k),
            "shifting.t0": str(s.t0),
            "seeds": ",".join(str(x) for x in self.seeds),
            "output_dir": self.output_dir,
        }
        if t.kind == "mlp-1h":
            flat["transfer.dim_in"] = str(t.dim_in)
            flat["transfer.hidden"] = str(t.hidden)
            flat["transfer.classes"] = str(t.classes)
        else:
            flat["transfer.dim"] = str(t.dim)
        if t.noise_std is not None:
            flat["transfer.noise_std"] = repr(t.noise_std)
        if f.loss_threshold is not None:
            flat["finetune.loss_threshold"] = repr(f.loss_threshold)
        return flat

    def config_hash(self) -> str:
        """Hash of the experimental configuration (seeds/output_dir excluded)."""
        flat = self.to_flat()
        flat.pop("seeds", None)
        flat.pop("output_dir", None)
        text = "\n".join(f"{k}={v}" for k, v in sorted(flat.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _parse_scalar(key: str, raw: str, kind: type):
    try:
        if kind is bool:
            raise AssertionError("no boolean keys")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def _parse_choice(key: str, raw: str, choices) -> str:
    if raw not in choices:
        raise ConfigError(f"{key}: {raw!r} not in {sorted(choices)}")
    return raw


_SCHEMA = {
    "transfer.kind": ("choice", TASK_KINDS),
    "transfer.dim": ("scalar", int),
    "transfer.rho": ("scalar", float),
    "transfer.seed": ("scalar", int),
    "transfer.n_samples": ("scalar", int),
    "transfer.dim_in": ("scalar", int),
    "transfer.hidden": ("scalar", int),
    "transfer.classes": ("scalar", int),
    "transfer.noise_std": ("scalar", float),
    "transfer.center_scale": ("scalar", float),
    "transfer.label_noise": ("scalar", float),
    "pretrain.steps": ("scalar", int),
    "pretrain.batch_size": ("scalar", int),
    "pretrain.optimizer.alpha": ("scalar", float),
    "pretrain.optimizer.beta1": ("scalar", float),
    "pretrain.optimizer.beta2": ("scalar", float),
    "pretrain.optimizer.eps": ("scalar", float),
    "finetune.steps": ("scalar", int),
    "finetune.batch_size": ("scalar", int),
    "finetune.optimizer.kind": ("choice", STEPPER_KINDS),
    "finetune.optimizer.alpha": ("scalar", float),
    "finetune.optimizer.beta1": ("scalar", float),
    "finetune.optimizer.beta2": ("scalar", float),
    "finetune.optimizer.eps": ("scalar", float),
    "finetune.optimizer.weight_decay": ("scalar", float),
    "finetune.init": ("choice", INIT_KINDS),
    "finetune.schedule.kind": ("choice", SCHEDULE_KINDS),
    "finetune.schedule.warmup_steps": ("scalar", int),
    "finetune.schedule.total_steps": ("scalar", int),
    "finetune.loss_threshold": ("scalar", float),
    "penalty.kind": ("choice", PENALTY_KINDS),
    "penalty.gamma": ("scalar", float),
    "penalty.fisher_samples": ("scalar", int),
    "shifting.k": ("scalar", float),
    "shifting.t0": ("scalar", int),
    "seeds": ("seeds", None),
    "output_dir": ("str", None),
}


def parse_flat_text(text: str) -> dict:
    """Parse key=value lines into a typed dict, rejecting unknown keys."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        style, arg = _SCHEMA[key]
        if style == "choice":
            values[key] = _parse_choice(key, raw, arg)
        elif style == "scalar":
            values[key] = _parse_scalar(key, raw, arg)
        elif style == "seeds":
            try:
                values[key] = tuple(int(part) for part in raw.split(",") if part.strip())
            except ValueError as exc:
                raise ConfigError(f"seeds: cannot parse {raw!r}") from exc
            if not values[key]:
                raise ConfigError("seeds: need at least one seed")
        else:
            values[key] = raw
    return values


def _require(values: dict, key: str):
    if key not in values:
        raise ConfigError(f"missing required key {key!r}")
    return values[key]


def config_from_values(values: dict) -> ExperimentConfig:
    kind = _require(values, "transfer.kind")
    transfer = TransferSpec(
        kind=kind,
        rho=_require(values, "transfer.rho"),
        seed=values.get("transfer.seed", 0),
        dim=values.get("transfer.dim", 0),
        n_samples=values.get("transfer.n_samples", 512),
        dim_in=values.get("transfer.dim_in", 0),
        hidden=values.get("transfer.hidden", 0),
        classes=values.get("transfer.classes", 0),
        noise_std=values.get("transfer.noise_std"),
        center_scale=values.get("transfer.center_scale", 1.0),
        label_noise=values.get("transfer.label_noise", 0.0),
    )
    if kind == "mlp-1h":
        if min(transfer.dim_in, transfer.hidden, transfer.classes) < 1:
            raise ConfigError("mlp-1h needs transfer.dim_in/hidden/classes >= 1")
        derived = transfer.hidden * (transfer.dim_in + 1) + transfer.classes * (transfer.hidden + 1)
        if transfer.dim not in (0, derived):
            raise ConfigError(f"transfer.dim={transfer.dim} but mlp parameter count is {derived}")
        transfer.dim = derived
    elif transfer.dim < 1:
        raise ConfigError("transfer.dim must be >= 1")
    if not (0.0 <= transfer.rho <= 1.0):
        raise ConfigError("transfer.rho must lie in [0, 1]")

    def adam_cfg(prefix: str, default_alpha: float) -> AdamConfig:
        try:
            return AdamConfig(
                alpha=values.get(f"{prefix}.alpha", default_alpha),
                beta1=values.get(f"{prefix}.beta1", 0.9),
                beta2=values.get(f"{prefix}.beta2", 0.999),
                eps=values.get(f"{prefix}.eps", 1e-8),
            )
        except ValueError as exc:
            raise ConfigError(f"{prefix}: {exc}") from exc

    pretrain = PretrainSpec(
        steps=_require(values, "pretrain.steps"),
        batch_size=values.get("pretrain.batch_size", 32),
        optimizer=adam_cfg("pretrain.optimizer", 0.01),
    )
    try:
        schedule = ScheduleMultiplier(
            kind=values.get("finetune.schedule.kind", "constant"),
            warmup_steps=values.get("finetune.schedule.warmup_steps", 0),
            total_steps=values.get("finetune.schedule.total_steps", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"finetune.schedule: {exc}") from exc
    finetune = FinetuneSpec(
        steps=_require(values, "finetune.steps"),
        batch_size=values.get("finetune.batch_size", 32),
        optimizer_kind=values.get("finetune.optimizer.kind", "adam"),
        optimizer=adam_cfg("finetune.optimizer", 0.001),
        weight_decay=values.get("finetune.optimizer.weight_decay", 0.0),
        init=values.get("finetune.init", "pretrained"),
        schedule=schedule,
        loss_threshold=values.get("finetune.loss_threshold"),
    )
    penalty = PenaltySpec(
        kind=values.get("penalty.kind", "isotropic"),
        gamma=values.get("penalty.gamma", 5000.0),
        fisher_samples=values.get("penalty.fisher_samples", 1000),
    )
    if penalty.gamma < 0:
        raise ConfigError("penalty.gamma must be >= 0")
    try:
        shifting = AnnealSchedule(k=values.get("shifting.k", 0.1),
                                  t0=values.get("shifting.t0", 250))
    except ValueError as exc:
        raise ConfigError(f"shifting: {exc}") from exc

    for steps_key, steps in (("pretrain.steps", pretrain.steps),
                             ("finetune.steps", finetune.steps)):
        if steps < 1:
            raise ConfigError(f"{steps_key} must be >= 1")
    for bs_key, bs in (("pretrain.batch_size", pretrain.batch_size),
                       ("finetune.batch_size", finetune.batch_size)):
        if bs < 1:
            raise ConfigError(f"{bs_key} must be >= 1")
    if finetune.weight_decay < 0:
        raise ConfigError("finetune.optimizer.weight_decay must be >= 0")

    return ExperimentConfig(
        transfer=transfer,
        pretrain=pretrain,
        finetune=finetune,
        penalty=penalty,
        shifting=shifting,
        seeds=values.get("seeds", (0,)),
        output_dir=_require(values, "output_dir"),
    )


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return config_from_values(parse_flat_text(text))


def format_config(cfg: ExperimentConfig) -> str:
    return "\n".join(f"{k}={v}" for k, v in sorted(cfg.to_flat().items())) + "\n"


_GRID_SCHEMA = {"k": float, "t0": int, "gamma": float, "seeds": int}


def load_grid(path: str | os.PathLike) -> dict:
    """Sweep grid file: comma-separated lists for k, t0, gamma, seeds."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read grid file {path}: {exc}") from exc
    grid = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"grid line {lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _GRID_SCHEMA:
            raise ConfigError(f"grid line {lineno}: unknown key {key!r}")
        cast = _GRID_SCHEMA[key]
        try:
            grid[key] = tuple(cast(part) for part in raw.split(",") if part.strip())
        except ValueError as exc:
            raise ConfigError(f"grid {key}: cannot parse {raw!r}") from exc
        if not grid[key]:
            raise ConfigError(f"grid {key}: empty list")
    for key in _GRID_SCHEMA:
        grid.setdefault(key, None)
    return grid
