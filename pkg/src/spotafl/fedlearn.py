"""Desk-scale federated learners and the end-to-end training loop."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from spotafl import ota, privsec
from spotafl.channel import ChannelModel, sample_round
from spotafl.scheduler import schedule_round
from spotafl.sysmodel import Instance, SystemParams

LOSS_KINDS = ("linreg", "svm")
AGGREGATORS = ("cwpp", "aligned", "ideal")

TRACE_COLUMNS = (
    "round", "loss", "gap_sq", "psi", "gamma_e", "max_epsilon",
    "n_uploaders", "n_jammers", "scheduler", "aggregator", "seed",
)


class EmptyBatch(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass
class LocalDataset:
    features: np.ndarray  # (D, p)
    labels: np.ndarray  # (D,)
    batch_size: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionMismatch("features and labels disagree on the sample count")
        if not 1 <= self.batch_size <= len(self):
            raise ValueError(f"batch_size must lie in [1, {len(self)}], got {self.batch_size}")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def sample_batch(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.batch_size == len(self):
            return self.features, self.labels
        idx = rng.choice(len(self), size=self.batch_size, replace=False)
        return self.features[idx], self.labels[idx]


@dataclass(frozen=True)
class ModelState:
    weights: np.ndarray
    round: int = 0


@dataclass(frozen=True)
class LearningSchedule:
    mode: str = "constant"  # "constant" or "theorem"
    tau0: float = 0.1
    rho: float = 1.0
    theta: float = 1.0

    def tau(self, t: int) -> float:
        if self.mode == "theorem":
            return 2.0 / (self.rho * t + 2.0 * self.theta)
        return self.tau0


def stacked_loss_and_gradient(weights: np.ndarray, features: np.ndarray, labels: np.ndarray,
                              loss_kind: str = "linreg", iota: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Per-device batch losses ``(N,)`` and gradients ``(N, p)`` for stacked batches ``(N, B, p)``."""
    u = np.asarray(features, dtype=float)
    v = np.asarray(labels, dtype=float)
    if v.shape[-1] == 0:
        raise EmptyBatch("cannot evaluate a loss on an empty batch")
    m = np.asarray(weights, dtype=float)
    b = v.shape[-1]
    pred = u @ m
    if loss_kind == "linreg":
        resid = v - pred
        loss = 0.5 * np.einsum("nb,nb->n", resid, resid) / b
        return loss, -np.einsum("nbp,nb->np", u, resid) / b
    if loss_kind == "svm":
        margin = 1.0 - v * pred
        active = np.where(margin > 0.0, 1.0, 0.0)
        loss = 0.5 * iota * float(m @ m) + 0.5 * np.sum(margin * active, axis=-1) / b
        grad = iota * m - 0.5 * np.einsum("nbp,nb->np", u, v * active) / b
        return loss, grad
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def loss_and_gradient(weights: np.ndarray, features: np.ndarray, labels: np.ndarray,
                      loss_kind: str = "linreg", iota: float = 0.1) -> tuple[float, np.ndarray]:
    """Batch-averaged loss and (sub)gradient.

    ``linreg``: ``0.5 * (v - m.u)**2``. ``svm``: ``iota/2 |m|^2 + 0.5 max(0, 1 - v m.u)``;
    the hinge contributes nothing at its kink.
    """
    u = np.atleast_2d(np.asarray(features, dtype=float))
    v = np.atleast_1d(np.asarray(labels, dtype=float))
    loss, grad = stacked_loss_and_gradient(weights, u[None], v[None], loss_kind, iota)
    return float(loss[0]), grad[0]


def clip_gradient(g: np.ndarray, grad_bound: float) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm <= grad_bound:
        return g
    return g * (grad_bound / norm)


def clip_rows(g: np.ndarray, grad_bound: float) -> np.ndarray:
    """Row-wise :func:`clip_gradient`."""
    norms = np.linalg.norm(g, axis=1)
    scale = np.where(norms > grad_bound, grad_bound / np.where(norms > 0, norms, 1.0), 1.0)
    return g * scale[:, None]


def global_update(state: ModelState, tau: float, g_agg: np.ndarray) -> ModelState:
    g_agg = np.asarray(g_agg, dtype=float)
    if g_agg.shape != state.weights.shape:
        raise DimensionMismatch(f"gradient shape {g_agg.shape} vs model shape {state.weights.shape}")
    return ModelState(state.weights - tau * g_agg, state.round + 1)


def make_federated_data(n_devices: int, n_samples: int, dim: int, batch_size: int,
                        rng: np.random.Generator, heterogeneity: float = 0.0,
                        noise_std: float = 0.1, loss_kind: str = "linreg",
                        planted_scale: float = 1.0) -> tuple[list[LocalDataset], np.ndarray]:
    """IID Gaussian features with labels from a planted linear model.

    Each device perturbs the planted model by ``heterogeneity * N(0, I)``;
    for ``svm`` the labels are the signs of the noisy responses.
    """
    planted = planted_scale * rng.standard_normal(dim)
    datasets = []
    for _ in range(n_devices):
        local = planted + heterogeneity * rng.standard_normal(dim)
        u = rng.standard_normal((n_samples, dim))
        v = u @ local + noise_std * rng.standard_normal(n_samples)
        if loss_kind == "svm":
            v = np.where(v >= 0.0, 1.0, -1.0)
        datasets.append(LocalDataset(u, v, batch_size))
    return datasets, planted


def global_loss(weights: np.ndarray, datasets: Sequence[LocalDataset], loss_kind: str, iota: float) -> float:
    return float(np.mean([loss_and_gradient(weights, ds.features, ds.labels, loss_kind, iota)[0]
                          for ds in datasets]))


def least_squares_optimum(datasets: Sequence[LocalDataset]) -> np.ndarray:
    """Minimizer of the device-averaged linear-regression loss."""
    dim = datasets[0].features.shape[1]
    hess = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    for ds in datasets:
        hess += ds.features.T @ ds.features / len(ds)
        rhs += ds.features.T @ ds.labels / len(ds)
    return np.linalg.solve(hess, rhs)


@dataclass
class RoundRecord:
    round: int
    loss: float
    gap_sq: float
    psi: float = math.nan
    gamma_e: float = math.nan
    max_epsilon: float = math.nan
    n_uploaders: int = 0
    n_jammers: int = 0
    skipped: bool = False


@dataclass
class TrainingTrace:
    scheduler: str
    aggregator: str
    seed: int
    records: list[RoundRecord] = field(default_factory=list)
    final_weights: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def rows(self) -> list[list[str]]:
        out = []
        for r in self.records:
            out.append([
                str(r.round), _fmt(r.loss), _fmt(r.gap_sq), _fmt(r.psi), _fmt(r.gamma_e),
                _fmt(r.max_epsilon), str(r.n_uploaders), str(r.n_jammers),
                self.scheduler, self.aggregator, str(self.seed),
            ])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(self.rows())
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


@dataclass(frozen=True)
class TrainingConfig:
    """Everything one training run needs besides the scheduler/aggregator choice."""

    params: SystemParams
    channel: ChannelModel
    rounds: int
    learning: LearningSchedule = LearningSchedule()
    loss_kind: str = "linreg"
    iota: float = 0.1
    samples_per_device: int = 50
    batch_size: int = 10
    heterogeneity: float = 0.0
    label_noise: float = 0.1
    planted_scale: float = 1.0
    verbatim_alignment: bool = False
    # data are drawn from this seed so replicates can share or vary the task
    data_seed: int | None = None


def build_datasets(config: TrainingConfig, seed: int) -> list[LocalDataset]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    datasets, _ = make_federated_data(
        config.params.n_devices, config.samples_per_device, config.params.model_dim,
        config.batch_size, rng, config.heterogeneity, config.label_noise, config.loss_kind,
        config.planted_scale,
    )
    return datasets


def run_training(config: TrainingConfig, scheduler_choice: str, aggregation_choice: str, seed: int,
                 datasets: Sequence[LocalDataset] | None = None,
                 initial_weights: np.ndarray | None = None) -> TrainingTrace:
    """Run ``config.rounds`` rounds of secure/private OTA-FL and record a trace.

    Per round: fresh channels, local batch gradients at the current model,
    clipping, scheduling, OTA transmission, post-processing, global update.
    A round without uploaders leaves the model unchanged and is marked as
    skipped. ``seed`` drives channels, batches and noise; the datasets come
    from ``config.data_seed`` (or ``seed`` when unset) unless given.
    """
    if aggregation_choice not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {aggregation_choice!r}; choose from {AGGREGATORS}")
    params = config.params
    d = params.model_dim
    G = params.grad_bound
    if datasets is None:
        datasets = build_datasets(config, seed if config.data_seed is None else config.data_seed)
    m_star = least_squares_optimum(datasets) if config.loss_kind == "linreg" else None

    channel = replace(config.channel, seed=_mix(config.channel.seed, seed))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    sched_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C4E]))
    state = ModelState(np.zeros(d) if initial_weights is None else np.asarray(initial_weights, dtype=float).copy())
    kappa = privsec.kappa(params.zeta)

    trace = TrainingTrace(scheduler_choice, aggregation_choice, seed)

    sizes = {len(ds) for ds in datasets}
    if len(sizes) != 1 or len({ds.batch_size for ds in datasets}) != 1:
        raise ValueError("devices must hold equal-size datasets with a common batch size")
    features = np.stack([ds.features for ds in datasets])
    labels = np.stack([ds.labels for ds in datasets])
    batch = datasets[0].batch_size

    def record(**extra) -> RoundRecord:
        loss = float(np.mean(stacked_loss_and_gradient(state.weights, features, labels,
                                                       config.loss_kind, config.iota)[0]))
        gap = float(np.sum((state.weights - m_star) ** 2)) if m_star is not None else math.nan
        rec = RoundRecord(state.round, loss, gap, **extra)
        trace.records.append(rec)
        return rec

    record()
    for t in range(config.rounds):
        devices = sample_round(channel, params, t)
        u, v = _sample_batches(rng, features, labels, batch)
        _, g = stacked_loss_and_gradient(state.weights, u, v, config.loss_kind, config.iota)
        g = clip_rows(g, G)
        assert np.all(np.linalg.norm(g, axis=1) <= G * (1.0 + 1e-12))
        grads = {n: g[n] for n in range(params.n_devices)}

        instance = Instance(tuple(devices), params, kappa)
        result = schedule_round(instance, scheduler_choice, sched_rng)
        schedule = result.schedule
        ups = schedule.uploaders
        extra = dict(psi=result.metrics.psi, n_uploaders=len(ups), n_jammers=len(schedule.jammers))
        if not ups:
            state = ModelState(state.weights, state.round + 1)
            record(skipped=True, **extra)
            continue
        extra["max_epsilon"] = privsec.privacy_report(schedule, devices, params).max_epsilon
        extra["gamma_e"] = privsec.security_coefficient(schedule, devices, params)

        if aggregation_choice == "ideal":
            g_agg = sum(grads[n] for n in ups) / len(ups)
        else:
            aligned = aggregation_choice == "aligned"
            sig = ota.transmit_round(grads, schedule, devices, G, d, rng, params.sigma_b, params.sigma_e,
                                     aligned=aligned, verbatim_alignment=config.verbatim_alignment)
            if aligned:
                g_agg = ota.aligned_aggregate(sig.y_bs, schedule, devices, G, config.verbatim_alignment)
            else:
                g_agg = ota.cwpp_aggregate(sig.y_bs, schedule, devices, G)
        state = global_update(state, config.learning.tau(t), g_agg)
        record(**extra)

    trace.final_weights = state.weights
    return trace


def _sample_batches(rng: np.random.Generator, features: np.ndarray, labels: np.ndarray,
                    batch: int) -> tuple[np.ndarray, np.ndarray]:
    """One batch per device, drawn without replacement."""
    n, size = labels.shape
    if batch >= size:
        return features, labels
    idx = np.argsort(rng.random((n, size)), axis=1)[:, :batch]
    return np.take_along_axis(features, idx[:, :, None], axis=1), np.take_along_axis(labels, idx, axis=1)


def _mix(a: int, b: int) -> int:
    """Deterministic 64-bit key from two integers."""
    return int(np.random.SeedSequence([int(a), int(b)]).generate_state(2, dtype=np.uint32).view(np.uint64)[0])
