"""Privacy and security accounting for one aggregation round.

Covers the Gaussian-mechanism DP level of each uploader at the base station,
the eavesdropper's security coefficient, the normalized MMSE function ``xi``
of a uniform prior seen through unit Gaussian noise, and the channel-power
threshold below which receiver noise alone protects every device.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from spotafl import _kernels
from spotafl.sysmodel import DeviceRound, Schedule, SystemParams, ZetaOutOfRange


class ZeroNoise(ValueError):
    pass


class NoUploaders(ValueError):
    pass


class NegativeArgument(ValueError):
    pass


class InvalidRange(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyReport:
    per_uploader_epsilon: tuple[tuple[int, float], ...]
    zeta: float
    kappa: float

    @property
    def max_epsilon(self) -> float:
        return max((e for _, e in self.per_uploader_epsilon), default=math.nan)


@dataclass(frozen=True)
class SecurityReport:
    gamma_e: float
    mse_floor: float


def kappa(zeta: float) -> float:
    if not 0.0 < zeta < 1.25:
        raise ZetaOutOfRange(f"zeta must lie in (0, 1.25), got {zeta!r}")
    return math.sqrt(2.0 * math.log(1.25 / zeta))


def bs_noise_variance(schedule: Schedule, devices: Sequence[DeviceRound], params: SystemParams) -> float:
    """Per-entry variance of jammer noise plus receiver noise at the BS."""
    jam = 0.0
    for n in schedule.jammers:
        jam += devices[n].p_b * devices[n].p_b
    return jam / params.model_dim + params.sigma_b


def eve_noise_variance(schedule: Schedule, devices: Sequence[DeviceRound], params: SystemParams) -> float:
    jam = 0.0
    for n in schedule.jammers:
        jam += devices[n].p_e * devices[n].p_e
    return jam / params.model_dim + params.sigma_e


def dp_epsilon(uploader: DeviceRound, sigma_tot_sq: float, kappa: float) -> float:
    if sigma_tot_sq <= 0.0:
        raise ZeroNoise("aggregated noise variance must be positive")
    return 2.0 * uploader.p_b * kappa / math.sqrt(sigma_tot_sq)


def privacy_report(schedule: Schedule, devices: Sequence[DeviceRound], params: SystemParams) -> PrivacyReport:
    k = kappa(params.zeta)
    noise = bs_noise_variance(schedule, devices, params)
    eps = tuple((n, dp_epsilon(devices[n], noise, k)) for n in schedule.uploaders)
    return PrivacyReport(eps, params.zeta, k)


def lambda_max(schedule: Schedule, devices: Sequence[DeviceRound]) -> float:
    return max((devices[n].p_b for n in schedule.uploaders), default=0.0)


def security_coefficient(schedule: Schedule, devices: Sequence[DeviceRound], params: SystemParams) -> float:
    """Effective noise variance of the eavesdropper's best unbiased estimate.

    The scaling uses the largest BS-side coefficient among uploaders, as in
    the original derivation, and ``(|K| * Lambda)**2`` in the denominator.
    With ``params.security_count_all`` the uploader count is replaced by N.
    """
    ups = schedule.uploaders
    if not ups:
        raise NoUploaders("security coefficient needs at least one uploader")
    count = params.n_devices if params.security_count_all else len(ups)
    lam = lambda_max(schedule, devices)
    denom = float(count * count) * (lam * lam)
    if denom == 0.0:
        return math.inf
    return params.grad_bound ** 2 / denom * eve_noise_variance(schedule, devices, params)


# Observation-axis rule: 8-point Gauss-Legendre on unit panels.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_XI_TAIL = 10.0
_XI_TOL = 1e-5
_XI_MAX_DEPTH = 40
# widest starting panel for the outer rule; the prior-value integrand varies on unit scale
_XI_PANEL = 0.5


@lru_cache(maxsize=64)
def _observation_rule(t: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = -_XI_TAIL, t + _XI_TAIL
    panels = max(1, int(math.ceil(hi - lo)))
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def adaptive_simpson(f, a: float, b: float, tol: float = _XI_TOL, max_depth: int = _XI_MAX_DEPTH,
                     min_panels: int = 1) -> float:
    """Adaptive Simpson quadrature, refined breadth-first.

    ``f`` must accept a 1-D array of abscissae; every level of the
    recursion is evaluated in a single call. The interval is first cut into
    ``min_panels`` equal panels so that flat starting samples cannot hide
    local structure.
    """
    if b == a:
        return 0.0
    edges = np.linspace(a, b, min_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    f_lo, f_mid, f_hi = np.split(f(np.concatenate([lo, mid, hi])), 3)
    whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)
    # columns: lo, hi, f(lo), f(mid), f(hi), estimate, tolerance
    work = np.column_stack([lo, hi, f_lo, f_mid, f_hi, whole, np.full(min_panels, tol / min_panels)])
    total = 0.0
    for depth in range(max_depth + 1):
        lo, hi, f_lo, f_mid, f_hi, est, eps = work.T
        mid = 0.5 * (lo + hi)
        f_l, f_r = np.split(f(np.concatenate([0.5 * (lo + mid), 0.5 * (mid + hi)])), 2)
        left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_l + f_mid)
        right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_r + f_hi)
        delta = left + right - est
        done = np.abs(delta) <= 15.0 * eps
        if depth == max_depth:
            done[:] = True
        total += float(np.sum((left + right + delta / 15.0)[done]))
        keep = ~done
        if not keep.any():
            break
        work = np.concatenate([
            np.column_stack([lo, mid, f_lo, f_l, f_mid, left, eps / 2.0])[keep],
            np.column_stack([mid, hi, f_mid, f_r, f_hi, right, eps / 2.0])[keep],
        ])
    return total


def xi(t: float) -> float:
    """Normalized MMSE of a Uniform(0, t) value observed in unit Gaussian noise.

    Double integral over the prior value (outer, adaptive Simpson) and the
    observation (inner, composite Gauss-Legendre on ``[-10, t + 10]``).
    """
    t = float(t)
    if t < 0.0 or math.isnan(t):
        raise NegativeArgument(f"xi needs t >= 0, got {t!r}")
    if t == 0.0:
        return 0.0
    nodes, weights = _observation_rule(t)

    def integrand(u: np.ndarray) -> np.ndarray:
        return _kernels.xi_inner(u, t, nodes, weights) / t

    return adaptive_simpson(integrand, 0.0, t, min_panels=max(4, int(math.ceil(t / _XI_PANEL))))


def mse_security_floor(gamma_e: float, lo: float, hi: float) -> float:
    if hi < lo:
        raise InvalidRange(f"need hi >= lo, got [{lo}, {hi}]")
    if gamma_e == 0.0 or hi == lo:
        return 0.0
    if math.isinf(gamma_e):
        return (hi - lo) ** 2 / 12.0
    root = math.sqrt(gamma_e)
    return gamma_e * xi((hi - lo) / root)


def security_report(schedule: Schedule, devices: Sequence[DeviceRound], params: SystemParams) -> SecurityReport:
    gamma = security_coefficient(schedule, devices, params)
    return SecurityReport(gamma, mse_security_floor(gamma, params.grad_range_lo, params.grad_range_hi))


def critical_point(params: SystemParams) -> float:
    privacy_side = params.epsilon * math.sqrt(params.sigma_b) / (2.0 * kappa(params.zeta))
    security_side = (
        params.grad_bound * math.sqrt(params.sigma_e)
        / (params.n_devices * math.sqrt(params.upsilon))
    )
    return min(privacy_side, security_side)
