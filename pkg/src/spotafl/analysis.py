"""Convergence-bound evaluation and the Monte-Carlo eavesdropper MMSE oracle."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from spotafl.fedlearn import LocalDataset, TrainingTrace
from spotafl.scheduler import psi_value
from spotafl.sysmodel import Instance, Schedule

BOUND_COLUMNS = ("round", "omega_bound", "omega_empirical", "margin", "holds")


class SingularSystem(ValueError):
    pass


class MissingOptimum(ValueError):
    pass


@dataclass(frozen=True)
class ConvergenceParams:
    theta: float
    rho: float
    var_bound: float
    gamma_het: float
    varrho: float

    def __post_init__(self) -> None:
        if not (self.theta > 0 and self.rho > 0 and self.varrho > 0):
            raise ValueError("theta, rho and varrho must be positive")
        if self.var_bound < 0 or self.gamma_het < 0:
            raise ValueError("var_bound and gamma_het must be nonnegative")
        if self.rho > self.theta * (1.0 + 1e-12):
            raise ValueError(f"rho={self.rho} exceeds theta={self.theta}")

    @classmethod
    def for_horizon(cls, theta: float, rho: float, var_bound: float, gamma_het: float, rounds: int):
        return cls(theta, rho, var_bound, gamma_het, (rho * rounds + 2.0 * theta) / 2.0)


@dataclass(frozen=True)
class ConvexEstimate:
    theta: float
    rho: float
    m_star: np.ndarray
    local_optima: tuple[np.ndarray, ...]
    gamma_het: float
    var_bound: float

    def params(self, rounds: int) -> ConvergenceParams:
        return ConvergenceParams.for_horizon(self.theta, self.rho, self.var_bound, self.gamma_het, rounds)


def _solve(hess: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if np.linalg.matrix_rank(hess) < hess.shape[0]:
        raise SingularSystem("normal equations are rank deficient")
    return np.linalg.solve(hess, rhs)


def batch_gradient_variance(ds: LocalDataset, m: np.ndarray) -> float:
    """Exact ``E|g_batch - g_full|^2`` for a linreg batch drawn without replacement."""
    resid = ds.features @ m - ds.labels
    per_sample = resid[:, None] * ds.features
    n, b = len(ds), ds.batch_size
    if b >= n:
        return 0.0
    spread = float(np.sum((per_sample - per_sample.mean(axis=0)) ** 2)) / n
    return spread / b * (n - b) / (n - 1)


def estimate_convex_params(datasets: Sequence[LocalDataset], loss_kind: str = "linreg", iota: float = 0.1,
                           probes: Sequence[np.ndarray] | None = None) -> ConvexEstimate:
    """Curvature, optimum, heterogeneity and gradient-noise constants.

    For ``linreg`` everything is exact up to the choice of probe points for
    the variance bound: by default the segment from the origin to ``m*``
    and every local optimum. ``svm`` only supports the curvature pair
    ``(theta, rho)`` bounds and returns ``nan`` for the rest.
    """
    dim = datasets[0].features.shape[1]
    if loss_kind == "svm":
        if iota <= 0:
            raise ValueError("svm needs iota > 0 for strong convexity")
        nan = np.full(dim, np.nan)
        return ConvexEstimate(iota, iota, nan, (), math.nan, math.nan)
    if loss_kind != "linreg":
        raise ValueError(f"unknown loss kind {loss_kind!r}")

    hessians, rhss, local = [], [], []
    for ds in datasets:
        h = ds.features.T @ ds.features / len(ds)
        r = ds.features.T @ ds.labels / len(ds)
        hessians.append(h)
        rhss.append(r)
        local.append(_solve(h, r))
    hess = sum(hessians) / len(datasets)
    m_star = _solve(hess, sum(rhss) / len(datasets))
    eig = np.linalg.eigvalsh(hess)
    theta, rho = float(eig[-1]), float(eig[0])

    gamma = max(theta * dim / 2.0 * float(np.max(np.abs(m_star - mn))) ** 2 for mn in local)

    if probes is None:
        probes = [s * m_star for s in np.linspace(0.0, 1.0, 11)] + list(local)
    var = max(batch_gradient_variance(ds, np.asarray(m)) for ds in datasets for m in probes)
    return ConvexEstimate(theta, rho, m_star, tuple(local), gamma, var)


def psi_of_round(schedule: Schedule, instance: Instance) -> float:
    return psi_value(schedule, instance)


def theorem1_step(omega_t: float, tau: float, cp: ConvergenceParams, psi_t: float, grad_bound: float,
                  warn: bool = False) -> float:
    if warn and not (1.0 / cp.varrho <= tau * (1 + 1e-12) and tau <= (1 + 1e-12) / cp.theta):
        warnings.warn(f"step size {tau:.6g} outside [1/varrho, 1/theta]", stacklevel=2)
    noise = 2.0 * cp.varrho * cp.gamma_het + cp.var_bound + grad_bound ** 2 * psi_t
    return (1.0 - cp.rho * tau) * omega_t + tau * tau * noise


def corollary1_gap(rounds: int, cp: ConvergenceParams, max_psi: float, grad_bound: float) -> float:
    if rounds < 1:
        raise ValueError("need at least one round")
    lead = cp.theta / (cp.rho * rounds + 2.0 * cp.theta)
    return lead * (2.0 / cp.rho) * (cp.var_bound + grad_bound ** 2 * max_psi) + 2.0 * cp.gamma_het * cp.theta / cp.rho


def envelope(t: np.ndarray | float, cp: ConvergenceParams, psi: float, grad_bound: float, omega0: float):
    """``chi / (t + mu)`` dominating the recursion under the theorem step size and constant psi."""
    lam = 2.0 / cp.rho
    mu = 2.0 * cp.theta / cp.rho
    eta = 2.0 * cp.varrho * cp.gamma_het + cp.var_bound + grad_bound ** 2 * psi
    chi = max(lam * lam * eta / (lam * cp.rho - 1.0), mu * omega0)
    return chi / (np.asarray(t, dtype=float) + mu)


def bound_sequence(omega0: float, taus: Sequence[float], psis: Sequence[float], skipped: Sequence[bool],
                   cp: ConvergenceParams, grad_bound: float) -> np.ndarray:
    """Iterate the theorem step; a skipped round leaves the model, hence the bound, unchanged."""
    out = np.empty(len(taus) + 1)
    out[0] = omega = omega0
    for t, (tau, psi, skip) in enumerate(zip(taus, psis, skipped)):
        if not skip:
            omega = theorem1_step(omega, tau, cp, psi, grad_bound)
        out[t + 1] = omega
    return out


@dataclass
class BoundReport:
    rounds: np.ndarray
    omega_bound: np.ndarray
    omega_empirical: np.ndarray
    std_error: np.ndarray
    replicates: int
    var_bound: float
    margin_sigmas: float = 3.0
    notes: list[str] = field(default_factory=list)

    @property
    def margin(self) -> np.ndarray:
        return self.omega_bound - (self.omega_empirical - self.margin_sigmas * self.std_error)

    @property
    def holds_per_round(self) -> np.ndarray:
        # rounding slack: at t=0 bound and empirical mean are the same number
        return self.margin >= -1e-12 * np.maximum(1.0, np.abs(self.omega_bound))

    @property
    def holds(self) -> bool:
        return bool(np.all(self.holds_per_round))

    @property
    def high_variance(self) -> bool:
        return self.replicates < 2

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BOUND_COLUMNS)
        for t, b, e, m, h in zip(self.rounds, self.omega_bound, self.omega_empirical, self.margin,
                                 self.holds_per_round):
            w.writerow([int(t), repr(float(b)), repr(float(e)), repr(float(m)), "true" if h else "false"])
        return buf.getvalue()


def validate_bound(traces: Sequence[TrainingTrace] | TrainingTrace, cp: ConvergenceParams, taus: Sequence[float],
                   grad_bound: float, psi_scale: float = 1.0, margin_sigmas: float = 3.0) -> BoundReport:
    """Compare the replicate-mean squared distance to ``m*`` with the averaged bound.

    Each replicate contributes its own bound sequence (its own per-round psi
    and skipped rounds); the report compares the averages.
    """
    if isinstance(traces, TrainingTrace):
        traces = [traces]
    gaps, bounds = [], []
    for tr in traces:
        gap = tr.column("gap_sq")
        if np.isnan(gap).any():
            raise MissingOptimum("trace carries no distance to the optimum (needs a linreg run)")
        psi = tr.column("psi")[1:] * psi_scale
        skipped = [r.skipped for r in tr.records[1:]]
        bounds.append(bound_sequence(gap[0], taus[:len(psi)], psi, skipped, cp, grad_bound))
        gaps.append(gap)
    gaps = np.array(gaps)
    n = gaps.shape[0]
    se = gaps.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(gaps.shape[1])
    report = BoundReport(np.arange(gaps.shape[1]), np.mean(bounds, axis=0), gaps.mean(axis=0), se, n,
                         cp.var_bound, margin_sigmas)
    if report.high_variance:
        msg = "single replicate: the comparison carries no standard error"
        report.notes.append(msg)
        warnings.warn(msg, stacklevel=2)
    return report


def _truncated_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(phi(a) - phi(b)) / (Phi(b) - Phi(a))``, evaluated on the lower tail by symmetry."""
    flip = a + b > 0.0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    mass = ndtr(b) - ndtr(a)
    dens = (np.exp(-0.5 * a * a) - np.exp(-0.5 * b * b)) / math.sqrt(2.0 * math.pi)
    mean = dens / mass
    return np.where(flip, -mean, mean)


def empirical_eve_mmse(gamma_e: float, lo: float, hi: float, trials: int, rng: np.random.Generator,
                       chunk: int = 250_000) -> float:
    """Monte-Carlo MSE of the posterior-mean estimate of a uniform scalar in Gaussian noise.

    The posterior of ``x`` given ``y = x + sqrt(gamma_e) n`` is a normal
    centred on ``y`` truncated to ``[lo, hi]``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if hi == lo or gamma_e == 0.0:
        return 0.0
    sd = math.sqrt(gamma_e)
    total = 0.0
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        x = rng.uniform(lo, hi, size=k)
        y = x + sd * rng.standard_normal(k)
        est = y + sd * _truncated_mean((lo - y) / sd, (hi - y) / sd)
        total += float(np.sum((est - x) ** 2))
        done += k
    return total / trials
