"""Device scheduling: case classification, thresholding, and role solvers.

Uploader/jammer role vectors use ``a[n] = 1`` for uploaders and ``0`` for jammers.
The all-jammer vector is infeasible by convention (no uploader, infinite
objective). Solvers that sort devices break ties on ``p_b`` by index.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from spotafl import _kernels
from spotafl.sysmodel import Instance, Role, Schedule, ScheduleMetrics

ESM_MAX_DEVICES = 20
RANDOM_ATTEMPTS = 1000


class OfflineRolePresent(ValueError):
    pass


class EmptySelection(ValueError):
    """No device passes the threshold; fall back to the uploader/jammer solvers."""


class TooLarge(ValueError):
    pass


class NoFeasibleUploader(ValueError):
    pass


class Case(enum.Enum):
    CASE1 = 1  # every device below the critical point: all participate
    CASE2 = 2  # some devices below: threshold or uploader/jammer split
    CASE3 = 3  # no device below: uploader/jammer split only


@dataclass(frozen=True)
class SolverResult:
    schedule: Schedule
    metrics: ScheduleMetrics
    feasible: bool
    solver_name: str
    elapsed: float  # seconds, monotonic clock

    @property
    def psi(self) -> float:
        return self.metrics.psi


def _require_policy2(schedule: Schedule) -> None:
    if schedule.has_offline:
        raise OfflineRolePresent("uploader/jammer schedules assign every device a role of uploader or jammer")


def psi_value(schedule: Schedule, instance: Instance) -> float:
    """Noise-impact term of the convergence bound; offline devices add nothing."""
    p = instance.p_b
    h_sum = 0.0
    jam = 0.0
    for n, role in enumerate(schedule.roles):
        if role is Role.UPLOADER:
            h_sum += p[n]
        elif role is Role.JAMMER:
            jam += p[n] * p[n]
    if h_sum == 0.0:
        return math.inf
    params = instance.params
    return (params.n_devices * jam + params.model_dim * params.sigma_b) / (h_sum * h_sum)


def psi_objective(schedule: Schedule, instance: Instance) -> float:
    _require_policy2(schedule)
    return psi_value(schedule, instance)


def check_privacy_constraint(schedule: Schedule, instance: Instance) -> bool:
    params = instance.params
    p = instance.p_b
    jam = 0.0
    for n, role in enumerate(schedule.roles):
        if role is Role.JAMMER:
            jam += p[n] * p[n]
    root = math.sqrt(jam / params.model_dim + params.sigma_b)
    two_kappa = 2.0 * instance.kappa
    return all(two_kappa * p[n] / root <= params.epsilon for n in schedule.uploaders)


def check_security_constraint(schedule: Schedule, instance: Instance) -> bool:
    params = instance.params
    ups = schedule.uploaders
    if not ups:
        return False
    p, q = instance.p_b, instance.p_e
    jam_e = 0.0
    for n, role in enumerate(schedule.roles):
        if role is Role.JAMMER:
            jam_e += q[n] * q[n]
    count = params.n_devices if params.security_count_all else len(ups)
    max_p = max(p[n] for n in ups)
    denom = float(count * count) * (max_p * max_p)
    if denom == 0.0:
        return True
    g2 = params.grad_bound * params.grad_bound
    return g2 / denom * (jam_e / params.model_dim + params.sigma_e) >= params.upsilon


def is_feasible(schedule: Schedule, instance: Instance) -> bool:
    return check_privacy_constraint(schedule, instance) and check_security_constraint(schedule, instance)


def schedule_metrics(schedule: Schedule, instance: Instance) -> ScheduleMetrics:
    p = instance.p_b
    ups = schedule.uploaders
    h_sum = 0.0
    for n in ups:
        h_sum += p[n]
    return ScheduleMetrics(
        h_sum=h_sum,
        lambda_max=max((p[n] for n in ups), default=0.0),
        psi=psi_value(schedule, instance),
        uploader_count=len(ups),
        jammer_count=len(schedule.jammers),
    )


def _result(schedule: Schedule, instance: Instance, name: str, started: float) -> SolverResult:
    elapsed = time.perf_counter() - started
    return SolverResult(
        schedule=schedule,
        metrics=schedule_metrics(schedule, instance),
        feasible=is_feasible(schedule, instance),
        solver_name=name,
        elapsed=elapsed,
    )


def classify_case(instance: Instance, p_hat: float) -> Case:
    p = instance.p_b
    if p.max() <= p_hat:
        return Case.CASE1
    if p_hat < p.min():
        return Case.CASE3
    return Case.CASE2


def full_participation(instance: Instance) -> SolverResult:
    started = time.perf_counter()
    return _result(Schedule.all_uploaders(instance.params.n_devices), instance, "full", started)


def policy1_select(instance: Instance, p_hat: float) -> Schedule:
    roles = tuple(Role.UPLOADER if pb <= p_hat else Role.OFFLINE for pb in instance.p_b)
    if Role.UPLOADER not in roles:
        raise EmptySelection(f"no device has p_b <= {p_hat:.6g}")
    return Schedule(roles)


def _kernel_args(instance: Instance) -> tuple:
    params = instance.params
    p_b, p_e = instance.p_b, instance.p_e
    return (
        p_b, p_b * p_b, p_e * p_e,
        params.model_dim, params.sigma_b, params.sigma_e, instance.kappa,
        params.epsilon, params.grad_bound * params.grad_bound, params.upsilon,
        params.security_count_all,
    )


def solve_esm(instance: Instance) -> SolverResult:
    """Enumerate every role vector and keep the feasible minimizer of psi.

    Ties go to more uploaders, then to the lexicographically smallest
    vector. Without any feasible vector the all-jammer schedule comes back
    with ``feasible=False``.
    """
    n = instance.params.n_devices
    if n > ESM_MAX_DEVICES:
        raise TooLarge(
            f"exhaustive search is capped at N={ESM_MAX_DEVICES} devices (got N={n}); use the spa solver"
        )
    started = time.perf_counter()
    mask, _, _ = _kernels.esm_search(*_kernel_args(instance))
    if mask < 0:
        a = [0] * n
    else:
        a = [(mask >> (n - 1 - i)) & 1 for i in range(n)]
    return _result(Schedule.from_binary(a), instance, "esm", started)


def ascending_order(values: np.ndarray) -> np.ndarray:
    return np.argsort(values, kind="stable")


def solve_spa(instance: Instance) -> SolverResult:
    """Branch-and-bound style scheduling with one greedy pass per start index.

    Devices are visited in ascending ``p_b``. Pass ``k`` starts from the
    all-jammer vector and promotes devices ``k, k+1, ...`` to uploader in
    turn, undoing any promotion that makes the whole vector infeasible.
    The pass with the smallest psi wins (later passes win ties).
    """
    started = time.perf_counter()
    args = _kernel_args(instance)
    a, _ = _kernels.spa_search(ascending_order(instance.p_b), *args)
    return _result(Schedule.from_binary(a), instance, "spa", started)


def closed_form_candidates(instance: Instance) -> list[np.ndarray]:
    """Candidate blocks of the high-dimension problem, as 0/1 vectors in device order."""
    params = instance.params
    p = instance.p_b
    n = params.n_devices
    order = np.argsort(-p, kind="stable")  # descending p_b
    desc = p[order]
    threshold = 2.0 * instance.kappa / math.sqrt(params.sigma_b)
    first = next((i for i in range(n) if threshold * desc[i] <= params.epsilon), None)
    if first is None:
        raise NoFeasibleUploader("every device violates the noise-free privacy constraint")
    cap = params.grad_bound * math.sqrt(params.sigma_e) / math.sqrt(params.upsilon)
    candidates = []
    for start in range(first, n):
        room = n - start
        k = room if desc[start] == 0.0 else min(room, math.floor(cap / desc[start]))
        if k <= 0:
            continue
        a = np.zeros(n, dtype=np.int64)
        a[order[start:start + k]] = 1
        candidates.append(a)
    return candidates


def solve_closed_form_highdim(instance: Instance) -> SolverResult:
    """Best candidate block for the d -> infinity relaxation (maximize sum of p_b).

    ``feasible`` reports the finite-d constraints, which the relaxation
    does not guarantee.
    """
    started = time.perf_counter()
    n = instance.params.n_devices
    p = instance.p_b
    best, best_val = np.zeros(n, dtype=np.int64), -math.inf
    for a in closed_form_candidates(instance):
        val = 0.0
        for i in range(n):
            if a[i]:
                val += p[i]
        if val > best_val:
            best, best_val = a, val
    return _result(Schedule.from_binary(best), instance, "closed-form", started)


def solve_random(instance: Instance, rng: np.random.Generator) -> SolverResult:
    """Draw uniform role vectors until one is feasible (at most 1000 draws)."""
    started = time.perf_counter()
    n = instance.params.n_devices
    for _ in range(RANDOM_ATTEMPTS):
        schedule = Schedule.from_binary(rng.integers(0, 2, size=n))
        if is_feasible(schedule, instance):
            return _result(schedule, instance, "random", started)
    return _result(Schedule.from_binary([0] * n), instance, "random", started)


SOLVERS: dict[str, Callable[..., SolverResult]] = {
    "spa": solve_spa,
    "esm": solve_esm,
    "closed-form": solve_closed_form_highdim,
}

SCHEDULER_CHOICES = ("full", "policy1", "spa", "esm", "closed-form", "random")


def schedule_round(instance: Instance, choice: str, rng: np.random.Generator) -> SolverResult:
    """Pick this round's roles with the named policy or solver.

    ``policy1`` thresholds at the critical point and falls back to SPA
    when no device qualifies.
    """
    if choice == "full":
        return full_participation(instance)
    if choice == "policy1":
        from spotafl.privsec import critical_point

        started = time.perf_counter()
        try:
            schedule = policy1_select(instance, critical_point(instance.params))
        except EmptySelection:
            return solve_spa(instance)
        return _result(schedule, instance, "policy1", started)
    if choice == "random":
        return solve_random(instance, rng)
    if choice == "closed-form":
        try:
            return solve_closed_form_highdim(instance)
        except NoFeasibleUploader:
            started = time.perf_counter()
            return _result(Schedule.from_binary([0] * instance.params.n_devices), instance,
                           "closed-form", started)
    solver = SOLVERS.get(choice)
    if solver is None:
        raise ValueError(f"unknown scheduler {choice!r}; choose from {SCHEDULER_CHOICES}")
    return solver(instance)
