"""Replicated experiments and their CSV artifacts."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from spotafl import analysis, scheduler
from spotafl.channel import sample_round
from spotafl.config import ExperimentConfig
from spotafl.fedlearn import (
    LearningSchedule,
    LocalDataset,
    TrainingConfig,
    TrainingTrace,
    build_datasets,
    run_training,
)
from spotafl.sysmodel import Instance

SUMMARY_COLUMNS = (
    "scheduler", "aggregator", "replicates", "rounds",
    "final_loss", "final_gap", "mean_psi", "max_epsilon", "min_gamma_e",
)
COMPARE_COLUMNS = ("solver", "psi", "feasible", "elapsed_microseconds")
COMPARE_SOLVERS = ("spa", "esm", "closed-form", "random")


def replicate_seed(master_seed: int, index: int) -> int:
    """63-bit seed of replicate ``index``, independent of how replicates are scheduled."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, dtype=np.uint32)
    return int(state.view(np.uint64)[0] >> np.uint64(1))


def data_seed(cfg: ExperimentConfig) -> int:
    return cfg.data_seed if cfg.data_seed is not None else replicate_seed(cfg.master_seed, 2**32 - 1)


@dataclass
class Prepared:
    training: TrainingConfig
    datasets: list[LocalDataset]
    estimate: analysis.ConvexEstimate | None
    schedule: LearningSchedule


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Build the shared task (datasets, curvature constants, step sizes) once for all replicates."""
    lr = cfg.learning
    training = TrainingConfig(
        params=cfg.system, channel=cfg.channel, rounds=lr.rounds, loss_kind=lr.loss, iota=lr.iota,
        samples_per_device=lr.samples_per_device, batch_size=lr.batch_size,
        heterogeneity=lr.heterogeneity, label_noise=lr.label_noise, planted_scale=lr.planted_scale,
        verbatim_alignment=cfg.verbatim_alignment, data_seed=data_seed(cfg),
    )
    datasets = build_datasets(training, training.data_seed)
    needed = bound_applicable(cfg) or (lr.lr_mode == "theorem" and (lr.rho is None or lr.theta is None))
    try:
        estimate = analysis.estimate_convex_params(datasets, lr.loss, lr.iota)
    except analysis.SingularSystem:
        if needed:
            raise
        estimate = None
    rho = lr.rho if lr.rho is not None else (estimate.rho if estimate else 1.0)
    theta = lr.theta if lr.theta is not None else (estimate.theta if estimate else 1.0)
    sched = LearningSchedule(lr.lr_mode, lr.tau0, rho, theta)
    return Prepared(replace(training, learning=sched), datasets, estimate, sched)


def _run_one(args: tuple) -> TrainingTrace:
    training, choice, agg, seed, datasets = args
    return run_training(training, choice, agg, seed, datasets=datasets)


def run_replicates(cfg: ExperimentConfig, prepared: Prepared | None = None) -> tuple[Prepared, list[TrainingTrace]]:
    prepared = prepared or prepare(cfg)
    jobs = [(prepared.training, cfg.scheduler, cfg.aggregator, replicate_seed(cfg.master_seed, i), prepared.datasets)
            for i in range(cfg.replicates)]
    if cfg.workers > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            traces = list(pool.map(_run_one, jobs))
    else:
        traces = [_run_one(job) for job in jobs]
    return prepared, traces


def bound_report(cfg: ExperimentConfig, prepared: Prepared, traces: list[TrainingTrace]) -> analysis.BoundReport:
    est = prepared.estimate
    cp = analysis.ConvergenceParams.for_horizon(prepared.schedule.theta, prepared.schedule.rho,
                                                est.var_bound, est.gamma_het, cfg.learning.rounds)
    taus = [prepared.schedule.tau(t) for t in range(cfg.learning.rounds)]
    return analysis.validate_bound(traces, cp, taus, cfg.system.grad_bound)


def bound_applicable(cfg: ExperimentConfig) -> bool:
    return cfg.learning.loss == "linreg" and cfg.learning.lr_mode == "theorem" and cfg.learning.rounds > 0


def _num(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def summary_row(cfg: ExperimentConfig, traces: list[TrainingTrace]) -> list[str]:
    final_loss = float(np.mean([t.records[-1].loss for t in traces]))
    final_gap = float(np.mean([t.records[-1].gap_sq for t in traces]))
    psi = np.concatenate([t.column("psi")[1:] for t in traces])
    eps = np.concatenate([t.column("max_epsilon")[1:] for t in traces])
    gam = np.concatenate([t.column("gamma_e")[1:] for t in traces])
    finite_psi = psi[np.isfinite(psi)]
    return [
        cfg.scheduler, cfg.aggregator, str(cfg.replicates), str(cfg.learning.rounds),
        _num(final_loss), _num(final_gap),
        _num(float(finite_psi.mean()) if finite_psi.size else math.nan),
        _num(float(np.nanmax(eps)) if np.isfinite(eps).any() else math.nan),
        _num(float(np.nanmin(gam)) if np.isfinite(gam).any() else math.nan),
    ]


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Run every replicate and write traces, summary and (when applicable) the bound report."""
    if cfg.scheduler == "esm" and cfg.system.n_devices > scheduler.ESM_MAX_DEVICES:
        raise scheduler.TooLarge(
            f"exhaustive search is capped at N={scheduler.ESM_MAX_DEVICES} devices "
            f"(got N={cfg.system.n_devices}); use the spa solver"
        )
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prepared, traces = run_replicates(cfg)
    written = {}
    for i, tr in enumerate(traces):
        path = out / f"trace_{i:03d}.csv"
        path.write_text(tr.to_csv())
        written[f"trace_{i:03d}"] = path
    if bound_applicable(cfg):
        report = bound_report(cfg, prepared, traces)
        path = out / "bound_report.csv"
        path.write_text(report.to_csv())
        written["bound_report"] = path
    path = out / "summary.csv"
    _write_csv(path, SUMMARY_COLUMNS, [summary_row(cfg, traces)])
    written["summary"] = path
    return written


def solver_instances(cfg: ExperimentConfig) -> list[Instance]:
    """Instances for the solver comparison: round ``i`` of the configured channel."""
    channel = replace(cfg.channel, seed=replicate_seed(cfg.master_seed, cfg.channel.seed))
    kappa = cfg.system.kappa
    return [Instance(tuple(sample_round(channel, cfg.system, i)), cfg.system, kappa)
            for i in range(cfg.solver_instances)]


def compare_solvers(cfg: ExperimentConfig) -> list[tuple[str, float, bool, float]]:
    """Rows ``(solver, psi, feasible, elapsed_us)``, grouped by instance in a fixed solver order."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 0xC0DE]))
    rows = []
    for inst in solver_instances(cfg):
        for name in COMPARE_SOLVERS:
            if name == "esm" and inst.params.n_devices > scheduler.ESM_MAX_DEVICES:
                continue
            started = time.perf_counter()
            res = scheduler.schedule_round(inst, name, rng)
            elapsed = (time.perf_counter() - started) * 1e6
            rows.append((name, res.psi, res.feasible, elapsed))
    return rows


def compare_solvers_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for name, psi, feasible, elapsed in rows:
        w.writerow([name, repr(float(psi)), "true" if feasible else "false", f"{elapsed:.3f}"])
    return buf.getvalue()
