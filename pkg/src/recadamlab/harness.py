"""Experiment orchestration: pretrain, finetune, sweeps, and reports.

Each fine-tuning step logs one trace row describing the state the step
consumed: step index t, lambda(t), batch target loss and penalty value at
theta_{t-1}, their lambda-mixture, distance to the pretrained anchor,
gradient norm, and eta_t.  Trace files are CSV with 17-significant-digit
floats and are written row by row, so an aborted run leaves a usable
partial trace.  RunSummary.final_target_loss is evaluated on the full
dataset at the final parameters; best/steps-to-threshold come from the
per-step batch losses in the trace.
"""

import csv
import dataclasses
import itertools
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, NoDataError, NumericError
from .numkit import RandomSource, l2_distance
from .optim import (AdamState, ScheduleMultiplier, adam_step, adamw_step,
                    coupled_recadam_step, recadam_step, schedule_multiplier)
from .recall import PenaltyModel, estimate_diag_fisher, penalty_grad, penalty_loss
from .shifting import composite_loss, lambda_at
from .storage import read_vector, write_vector
from .tasks import TransferPair, batch_stream, gen_transfer_pair

TRACE_COLUMNS = ("step", "lambda", "target_loss", "penalty_value",
                 "composite_loss", "dist_to_pretrained", "grad_norm", "eta")

RANDOM_INIT_STD = 0.02  # scaled-normal random initialization


def _fmt(x: float) -> str:
    return "%.17g" % x


class TrainingTrace:
    """Per-step experiment record with column access."""

    def __init__(self):
        self.rows: list[tuple] = []

    def append(self, row: tuple) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        return np.array([row[i] for row in self.rows])

    def __len__(self):
        return len(self.rows)


class TraceWriter:
    """Streams trace rows to CSV as they are produced."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(",".join(TRACE_COLUMNS) + "\n")

    def write_row(self, row: tuple) -> None:
        step = str(int(row[0]))
        self._fh.write(step + "," + ",".join(_fmt(x) for x in row[1:]) + "\n")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def read_trace(path: str | os.PathLike) -> TrainingTrace:
    trace = TrainingTrace()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise NoDataError(f"unexpected trace header in {path}")
        for parts in reader:
            trace.append((int(parts[0]), *(float(x) for x in parts[1:])))
    return trace


@dataclass
class RunSummary:
    final_target_loss: float
    best_target_loss: float
    steps_to_threshold: Optional[int]
    final_dist_to_pretrained: float
    seed: int
    config_hash: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunSummary":
        return cls(**doc)


def build_transfer_pair(cfg: ExperimentConfig) -> TransferPair:
    t = cfg.transfer
    rng = RandomSource(t.seed)
    kwargs = dict(n_samples=t.n_samples, center_scale=t.center_scale,
                  label_noise=t.label_noise, noise_std=t.noise_std)
    if t.kind == "mlp-1h":
        kwargs["mlp_dims"] = (t.dim_in, t.hidden, t.classes)
    return gen_transfer_pair(t.kind, t.dim, t.rho, rng, **kwargs)


def build_penalty(cfg: ExperimentConfig, pair: TransferPair,
                  theta_star: np.ndarray) -> PenaltyModel:
    pen = cfg.penalty
    if pen.kind == "none":
        return PenaltyModel.none(theta_star)
    if pen.kind == "isotropic":
        return PenaltyModel.isotropic(theta_star, pen.gamma)
    fisher_rng = RandomSource(cfg.transfer.seed).child("fisher")
    fisher, n_obs = estimate_diag_fisher(pair.source, theta_star,
                                         pen.fisher_samples, fisher_rng)
    return PenaltyModel.diagonal_fisher(theta_star, fisher, n_obs)


def _run_loop(task, theta0, steps, batch_size, stepper, writer, rng_batches,
              theta_star, pen):
    """Shared training loop; returns (trace, theta_final)."""
    trace = TrainingTrace()
    theta = np.array(theta0, dtype=np.float64)
    state = AdamState.fresh(theta.size)
    batches = None
    if task.dataset_size() > 0:
        batches = batch_stream(task.dataset_size(), batch_size, rng_batches)
    try:
        for t in range(1, steps + 1):
            batch = next(batches) if batches is not None else None
            loss, grad = task.loss_and_grad(theta, batch)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NumericError(f"non-finite loss/gradient at step {t}", step=t)
            lam, eta, pgrad = stepper.prepare(t, theta)
            pval = penalty_loss(pen, theta)
            row = (t, lam, loss, pval, composite_loss(lam, loss, pval),
                   l2_distance(theta, theta_star), float(np.sqrt(np.sum(grad * grad))),
                   eta)
            trace.append(row)
            if writer is not None:
                writer.write_row(row)
            theta, state = stepper.step(theta, state, eta, grad, lam, pgrad)
    finally:
        if writer is not None:
            writer.close()
    return trace, theta


class _Stepper:
    """Binds optimizer kind + config + schedules into per-step callables."""

    def __init__(self, kind, adam_cfg, weight_decay, schedule, anneal, pen):
        self.kind = kind
        self.adam_cfg = adam_cfg
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.anneal = anneal
        self.pen = pen

    def prepare(self, t: int, theta):
        eta = schedule_multiplier(self.schedule, t)
        if self.kind in ("recadam", "recadam-coupled"):
            lam = lambda_at(self.anneal, t)
            pgrad = penalty_grad(self.pen, theta)
        else:
            lam, pgrad = 1.0, None
        return lam, eta, pgrad

    def step(self, theta, state, eta, grad, lam, pgrad):
        if self.kind == "adam":
            return adam_step(theta, state, self.adam_cfg, eta, grad)
        if self.kind == "adamw":
            return adamw_step(theta, state, self.adam_cfg, eta, grad, self.weight_decay)
        if self.kind == "recadam":
            return recadam_step(theta, state, self.adam_cfg, eta, grad, lam, pgrad)
        return coupled_recadam_step(theta, state, self.adam_cfg, eta, grad, lam, pgrad)


def pretrain(cfg: ExperimentConfig, write_outputs: bool = True):
    """Train on the source task with vanilla Adam from a seeded random init.

    Persists theta_star and the pretraining trace under cfg.output_dir.
    """
    pair = build_transfer_pair(cfg)
    task = pair.source
    root = RandomSource(cfg.transfer.seed)
    theta0 = RANDOM_INIT_STD * root.child("pretrain-init").normal(task.dim)
    zeros = np.zeros(task.dim)
    writer = None
    if write_outputs:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        writer = TraceWriter(out / "pretrain_trace.csv")
    no_pen = PenaltyModel.none(zeros)
    stepper = _Stepper("adam", cfg.pretrain.optimizer, 0.0,
                       ScheduleMultiplier(), None, no_pen)
    trace, theta = _run_loop(task, theta0, cfg.pretrain.steps,
                             cfg.pretrain.batch_size, stepper, writer,
                             root.child("pretrain-batches"), zeros, no_pen)
    theta_star = theta.copy()
    theta_star.flags.writeable = False
    if write_outputs:
        write_vector(Path(cfg.output_dir) / "theta_star.bin", theta_star)
    return theta_star, trace


def finetune(cfg: ExperimentConfig, theta_star: np.ndarray, seed: int,
             run_dir: str | os.PathLike | None = None):
    """Fine-tune on the target task under the configured optimizer.

    Returns (trace, summary); writes trace.csv, summary.json and
    config.json into run_dir when given.
    """
    pair = build_transfer_pair(cfg)
    task = pair.target
    if theta_star.size != task.dim:
        raise ConfigError(f"theta_star length {theta_star.size} != task dim {task.dim}")
    rng = RandomSource(seed)
    if cfg.finetune.init == "random":
        theta0 = RANDOM_INIT_STD * rng.child("init").normal(task.dim)
    else:
        theta0 = np.array(theta_star, dtype=np.float64)
    pen = build_penalty(cfg, pair, theta_star)
    writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        writer = TraceWriter(run_dir / "trace.csv")
        (run_dir / "config.json").write_text(
            json.dumps({**cfg.to_flat(), "run_seed": str(seed)}, sort_keys=True, indent=2))
    stepper = _Stepper(cfg.finetune.optimizer_kind, cfg.finetune.optimizer,
                       cfg.finetune.weight_decay, cfg.finetune.schedule,
                       cfg.shifting, pen)
    trace, theta = _run_loop(task, theta0, cfg.finetune.steps,
                             cfg.finetune.batch_size, stepper, writer,
                             rng.child("batches"), theta_star, pen)
    summary = summarize(trace, task, theta, theta_star, seed, cfg.config_hash(),
                        cfg.finetune.loss_threshold)
    if run_dir is not None:
        (run_dir / "summary.json").write_text(
            json.dumps(summary.to_dict(), sort_keys=True, indent=2))
    return trace, summary


def summarize(trace: TrainingTrace, task, theta_final, theta_star, seed: int,
              config_hash: str, loss_threshold: Optional[float]) -> RunSummary:
    losses = trace.column("target_loss")
    steps_to = None
    if loss_threshold is not None:
        hits = np.nonzero(losses < loss_threshold)[0]
        if hits.size:
            steps_to = int(trace.rows[hits[0]][0])
    final_full = task.loss_and_grad(theta_final, None)[0]
    return RunSummary(
        final_target_loss=float(final_full),
        best_target_loss=float(losses.min()),
        steps_to_threshold=steps_to,
        final_dist_to_pretrained=l2_distance(theta_final, theta_star),
        seed=seed,
        config_hash=config_hash,
    )


def reference_threshold(cfg: ExperimentConfig, theta_star: np.ndarray,
                        factor: float = 1.10, steps_multiplier: int = 2) -> float:
    """Default steps_to_threshold target: factor x best batch loss of a
    long vanilla-Adam run (pretrained init, constant schedule)."""
    ref_cfg = dataclasses.replace(
        cfg,
        finetune=dataclasses.replace(
            cfg.finetune,
            steps=cfg.finetune.steps * steps_multiplier,
            optimizer_kind="adam",
            init="pretrained",
            schedule=dataclasses.replace(cfg.finetune.schedule, kind="constant"),
        ),
    )
    trace, _ = finetune(ref_cfg, theta_star, cfg.seeds[0])
    return factor * float(trace.column("target_loss").min())


SUMMARY_FIELDS = ("k", "t0", "gamma", "seed", "status", "final_target_loss",
                  "best_target_loss", "steps_to_threshold",
                  "final_dist_to_pretrained", "config_hash")


def _run_id(k: float, t0: int, gamma: float, seed: int) -> str:
    return f"k{k:g}-t{t0}-g{gamma:g}-s{seed}"


def sweep(cfg: ExperimentConfig, grid: dict):
    """Run the Cartesian product of grid values over (k, t0, gamma, seeds).

    Grid entries left as None fall back to the base config's single value.
    Each run gets its own directory under output_dir/runs; failures are
    recorded in the summary table and skipped.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    theta_path = out / "theta_star.bin"
    if theta_path.exists():
        theta_star = read_vector(theta_path)
    else:
        theta_star, _ = pretrain(cfg)

    ks = grid.get("k") or (cfg.shifting.k,)
    t0s = grid.get("t0") or (cfg.shifting.t0,)
    gammas = grid.get("gamma") or (cfg.penalty.gamma,)
    seeds = grid.get("seeds") or cfg.seeds

    rows = []
    summaries = []
    for k, t0, gamma, seed in itertools.product(ks, t0s, gammas, seeds):
        run_cfg = dataclasses.replace(
            cfg,
            shifting=dataclasses.replace(cfg.shifting, k=k, t0=t0),
            penalty=dataclasses.replace(cfg.penalty, gamma=gamma),
        )
        run_dir = out / "runs" / _run_id(k, t0, gamma, seed)
        try:
            _, summary = finetune(run_cfg, theta_star, seed, run_dir=run_dir)
        except NumericError as exc:
            rows.append({"k": k, "t0": t0, "gamma": gamma, "seed": seed,
                         "status": f"failed:step{exc.step}", "config_hash":
                         run_cfg.config_hash()})
            continue
        summaries.append(summary)
        rows.append({"k": k, "t0": t0, "gamma": gamma, "seed": seed,
                     "status": "ok",
                     "final_target_loss": summary.final_target_loss,
                     "best_target_loss": summary.best_target_loss,
                     "steps_to_threshold": summary.steps_to_threshold,
                     "final_dist_to_pretrained": summary.final_dist_to_pretrained,
                     "config_hash": summary.config_hash})

    with open(out / "summaries.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for row in rows:
            writer.writerow([_format_cell(row.get(field)) for field in SUMMARY_FIELDS])

    best = _best_configuration(rows)
    if best is not None:
        line = (f"best configuration by median final_target_loss: "
                f"k={best[0]:g} t0={best[1]} gamma={best[2]:g} "
                f"(median={_fmt(best[3])})")
        (out / "best_config.txt").write_text(line + "\n")
    return summaries


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest exact round-trip
    return str(value)


def _best_configuration(rows):
    groups = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        groups.setdefault((row["k"], row["t0"], row["gamma"]), []).append(
            row["final_target_loss"])
    if not groups:
        return None
    scored = [(float(np.median(v)), key) for key, v in groups.items()]
    scored.sort(key=lambda item: (item[0], item[1]))
    median, (k, t0, gamma) = scored[0]
    return k, t0, gamma, median


# --- reporting ---------------------------------------------------------------

def _discover_runs(run_dir: Path):
    runs = []
    for config_path in sorted(run_dir.rglob("config.json")):
        trace_path = config_path.parent / "trace.csv"
        if not trace_path.exists():
            continue
        flat = json.loads(config_path.read_text())
        summary_path = config_path.parent / "summary.json"
        summary = None
        if summary_path.exists():
            summary = RunSummary.from_dict(json.loads(summary_path.read_text()))
        runs.append({"flat": flat, "trace": read_trace(trace_path),
                     "summary": summary, "dir": config_path.parent})
    return runs


def _median_or_none(values):
    vals = [math.inf if v is None else v for v in values]
    med = float(np.median(vals))
    return None if math.isinf(med) else med


def report(run_dir: str | os.PathLike) -> list:
    """Aggregate completed runs into CSV report files.

    Writes learning_curves.csv (per-k median target loss and distance,
    aligned on step), summary_median.csv (median metrics per configuration),
    and init_comparison.csv when both init modes are present.
    """
    run_dir = Path(run_dir)
    runs = _discover_runs(run_dir)
    if not runs:
        raise NoDataError(f"no trace/config pairs found under {run_dir}")
    written = []

    # (a) per-k learning curves
    by_k = {}
    for run in runs:
        by_k.setdefault(float(run["flat"]["shifting.k"]), []).append(run["trace"])
    ks = sorted(by_k)
    n_steps = min(min(len(tr) for tr in traces) for traces in by_k.values())
    curve_path = run_dir / "learning_curves.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["step"]
        for k in ks:
            header += [f"target_loss_k={k:g}", f"dist_k={k:g}"]
        writer.writerow(header)
        loss_cols = {k: np.stack([tr.column("target_loss")[:n_steps] for tr in by_k[k]])
                     for k in ks}
        dist_cols = {k: np.stack([tr.column("dist_to_pretrained")[:n_steps] for tr in by_k[k]])
                     for k in ks}
        for i in range(n_steps):
            row = [str(i + 1)]
            for k in ks:
                row.append(_fmt(float(np.median(loss_cols[k][:, i]))))
                row.append(_fmt(float(np.median(dist_cols[k][:, i]))))
            writer.writerow(row)
    written.append(curve_path)

    # (b) median-over-seeds summary per configuration
    summarable = [r for r in runs if r["summary"] is not None]
    by_cfg = {}
    for run in summarable:
        by_cfg.setdefault(run["summary"].config_hash, []).append(run)
    summary_path = run_dir / "summary_median.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config_hash", "optimizer_kind", "init", "k", "t0", "gamma",
                         "n_runs", "median_final_target_loss",
                         "median_best_target_loss", "median_steps_to_threshold",
                         "median_final_dist_to_pretrained"])
        for cfg_hash in sorted(by_cfg):
            group = by_cfg[cfg_hash]
            flat = group[0]["flat"]
            summaries = [r["summary"] for r in group]
            writer.writerow([
                cfg_hash, flat["finetune.optimizer.kind"], flat["finetune.init"],
                flat["shifting.k"], flat["shifting.t0"], flat["penalty.gamma"],
                str(len(group)),
                _fmt(float(np.median([s.final_target_loss for s in summaries]))),
                _fmt(float(np.median([s.best_target_loss for s in summaries]))),
                _format_cell(_median_or_none([s.steps_to_threshold for s in summaries])),
                _fmt(float(np.median([s.final_dist_to_pretrained for s in summaries]))),
            ])
    written.append(summary_path)

    # (c) init-strategy comparison when both modes are present
    inits = {r["flat"]["finetune.init"] for r in summarable}
    if {"random", "pretrained"} <= inits:
        comparison_path = run_dir / "init_comparison.csv"
        metrics = (("final_target_loss", lambda s: s.final_target_loss),
                   ("best_target_loss", lambda s: s.best_target_loss),
                   ("final_dist_to_pretrained", lambda s: s.final_dist_to_pretrained))
        with open(comparison_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "init", "median"])
            for name, getter in metrics:
                for init in ("random", "pretrained"):
                    vals = [getter(r["summary"]) for r in summarable
                            if r["flat"]["finetune.init"] == init]
                    writer.writerow([name, init, _fmt(float(np.median(vals)))])
        written.append(comparison_path)
    return written
