"""Analog over-the-air transmission, reception and post-processing.

Uploaders send ``sqrt(P)/G * g``; jammers send ``sqrt(P/d) * e`` with
``e ~ N(0, I)``. Both receivers see the superposition through real gains
plus their own white noise. The BS either rescales by ``G/H``
(channel-weighted post-processing) or uses the aligned baseline, where
every uploader pre-compensates its gain to a common coefficient ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from spotafl.privsec import NoUploaders
from spotafl.sysmodel import DeviceRound, Schedule

# relative slack when checking the clipping precondition
_NORM_SLACK = 1e-9


class GradientTooLarge(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass
class RoundSignals:
    uploader_signals: dict[int, np.ndarray] = field(default_factory=dict)
    jammer_signals: dict[int, np.ndarray] = field(default_factory=dict)
    y_bs: np.ndarray | None = None
    z_eve: np.ndarray | None = None

    def transmitted(self) -> dict[int, np.ndarray]:
        out = dict(self.uploader_signals)
        out.update(self.jammer_signals)
        return out


def encode_uploader(g: np.ndarray, power: float, grad_bound: float) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm > grad_bound * (1.0 + _NORM_SLACK):
        raise GradientTooLarge(f"gradient norm {norm:.6g} exceeds bound {grad_bound:.6g}; clip first")
    return math.sqrt(power) / grad_bound * g


def encode_aligned(g: np.ndarray, h_b: float, align: float, grad_bound: float) -> np.ndarray:
    """Aligned-baseline transmit signal: every uploader arrives with coefficient ``align/G``."""
    g = np.asarray(g, dtype=float)
    if np.linalg.norm(g) > grad_bound * (1.0 + _NORM_SLACK):
        raise GradientTooLarge("gradient exceeds the clipping bound; clip first")
    return align / (h_b * grad_bound) * g


def sample_jammer(rng: np.random.Generator, power: float, dim: int) -> np.ndarray:
    return math.sqrt(power / dim) * rng.standard_normal(dim)


def receive(signals: Sequence[np.ndarray] | Mapping[int, np.ndarray], gains: Sequence[float] | Mapping[int, float],
            noise_variance: float, rng: np.random.Generator | None, dim: int | None = None) -> np.ndarray:
    """Superpose ``sum_n h_n x_n`` and add white noise of the given variance.

    ``signals`` and ``gains`` are either aligned sequences or mappings keyed
    by device; with mappings only the keys of ``signals`` are used.
    """
    if isinstance(signals, Mapping):
        keys = sorted(signals)
        xs = [np.asarray(signals[k], dtype=float) for k in keys]
        hs = [float(gains[k]) for k in keys]
    else:
        xs = [np.asarray(x, dtype=float) for x in signals]
        hs = [float(h) for h in gains]
        if len(xs) != len(hs):
            raise DimensionMismatch(f"{len(xs)} signals but {len(hs)} gains")
    if dim is None:
        if not xs:
            raise DimensionMismatch("cannot infer the dimension of an empty transmission")
        dim = xs[0].shape[0]
    y = np.zeros(dim)
    for x, h in zip(xs, hs):
        if x.shape != (dim,):
            raise DimensionMismatch(f"signal of shape {x.shape}, expected ({dim},)")
        y += h * x
    if noise_variance > 0.0:
        y += math.sqrt(noise_variance) * rng.standard_normal(dim)
    return y


def aligned_coefficient(schedule: Schedule, devices: Sequence[DeviceRound], verbatim: bool = False) -> float:
    """Common coefficient of the aligned baseline.

    Default ``min h_B * sqrt(P)`` keeps every transmission within its power
    budget; ``verbatim`` uses ``min h_B * P`` instead.
    """
    ups = schedule.uploaders
    if not ups:
        raise NoUploaders("alignment needs at least one uploader")
    if verbatim:
        return min(devices[n].h_b * devices[n].power for n in ups)
    return min(devices[n].p_b for n in ups)


def transmit_round(gradients: Mapping[int, np.ndarray], schedule: Schedule, devices: Sequence[DeviceRound],
                   grad_bound: float, dim: int, rng: np.random.Generator,
                   sigma_b: float, sigma_e: float, aligned: bool = False,
                   verbatim_alignment: bool = False) -> RoundSignals:
    """Encode every active device, then receive at the BS and at Eve.

    Draw order is fixed (jammers by index, then BS noise, then Eve noise)
    so that a seed reproduces the round exactly.
    """
    sig = RoundSignals()
    align = aligned_coefficient(schedule, devices, verbatim_alignment) if aligned and schedule.uploaders else None
    for n in schedule.uploaders:
        if align is None:
            sig.uploader_signals[n] = encode_uploader(gradients[n], devices[n].power, grad_bound)
        else:
            sig.uploader_signals[n] = encode_aligned(gradients[n], devices[n].h_b, align, grad_bound)
    for n in schedule.jammers:
        sig.jammer_signals[n] = sample_jammer(rng, devices[n].power, dim)
    sent = sig.transmitted()
    sig.y_bs = receive(sent, {n: devices[n].h_b for n in sent}, sigma_b, rng, dim)
    sig.z_eve = receive(sent, {n: devices[n].h_e for n in sent}, sigma_e, rng, dim)
    return sig


def cwpp_aggregate(y_bs: np.ndarray, schedule: Schedule, devices: Sequence[DeviceRound], grad_bound: float) -> np.ndarray:
    h_sum = 0.0
    for n in schedule.uploaders:
        h_sum += devices[n].p_b
    if not schedule.uploaders:
        raise NoUploaders("channel-weighted post-processing needs at least one uploader")
    return grad_bound / h_sum * np.asarray(y_bs, dtype=float)


def aligned_aggregate(y_bs: np.ndarray, schedule: Schedule, devices: Sequence[DeviceRound], grad_bound: float,
                      verbatim: bool = False) -> np.ndarray:
    c = aligned_coefficient(schedule, devices, verbatim)
    return grad_bound / (len(schedule.uploaders) * c) * np.asarray(y_bs, dtype=float)


def cwpp_noise_variance(schedule: Schedule, devices: Sequence[DeviceRound], grad_bound: float,
                        bs_noise_var: float) -> float:
    """Per-entry variance of the noise left in the channel-weighted aggregate."""
    h_sum = sum(devices[n].p_b for n in schedule.uploaders)
    return (grad_bound / h_sum) ** 2 * bs_noise_var


def aligned_noise_variance(schedule: Schedule, devices: Sequence[DeviceRound], grad_bound: float,
                           bs_noise_var: float, verbatim: bool = False) -> float:
    c = aligned_coefficient(schedule, devices, verbatim)
    return (grad_bound / (len(schedule.uploaders) * c)) ** 2 * bs_noise_var


def weighted_gradient(gradients: Mapping[int, np.ndarray], schedule: Schedule,
                      devices: Sequence[DeviceRound]) -> np.ndarray:
    """Noise-free part of the channel-weighted aggregate (p_b-weighted mean)."""
    ups = schedule.uploaders
    h_sum = sum(devices[n].p_b for n in ups)
    return sum(devices[n].p_b / h_sum * np.asarray(gradients[n], dtype=float) for n in ups)


def eve_aligned_observation(z_eve: np.ndarray, gradients: Mapping[int, np.ndarray], schedule: Schedule,
                            devices: Sequence[DeviceRound], grad_bound: float) -> np.ndarray:
    """Eve's observation with every uploader seen through the common coefficient ``Lambda/G``.

    Eve is granted the schedule; the aggregated jammer-plus-receiver noise
    in ``z_eve`` is kept untouched.
    """
    ups = schedule.uploaders
    lam = max(devices[n].p_b for n in ups)
    z = np.asarray(z_eve, dtype=float).copy()
    for n in ups:
        g = np.asarray(gradients[n], dtype=float)
        z += (lam - devices[n].p_e) / grad_bound * g
    return z


def eve_unbiased_estimate(z_tilde: np.ndarray, schedule: Schedule, devices: Sequence[DeviceRound],
                          grad_bound: float) -> np.ndarray:
    """Lowest-variance unbiased estimate of the uploaders' mean gradient."""
    ups = schedule.uploaders
    if not ups:
        raise NoUploaders("Eve's estimator needs at least one uploader")
    lam = max(devices[n].p_b for n in ups)
    return grad_bound / (len(ups) * lam) * np.asarray(z_tilde, dtype=float)
