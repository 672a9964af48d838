"""Per-round Rayleigh channel realizations.

Draws are keyed on ``(seed, round, purpose)``; device ``n`` takes the
``n``-th variate of that stream, so appending devices never changes the
draws of existing ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from spotafl.sysmodel import DeviceRound, SystemParams

_PURPOSE_BS = 0
_PURPOSE_EVE = 1


class NegativeInput(ValueError):
    pass


@dataclass(frozen=True)
class ChannelModel:
    scale_b: float = 1.0
    scale_e: float = 1.0
    seed: int = 0
    # optional deterministic gains, overriding the Rayleigh draws (one per device)
    fixed_h_b: tuple[float, ...] | None = None
    fixed_h_e: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not (self.scale_b > 0 and self.scale_e > 0):
            raise ValueError("Rayleigh scales must be strictly positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def effective_coefficients(h_b: float, h_e: float, power: float) -> tuple[float, float]:
    if h_b < 0 or h_e < 0 or power < 0:
        raise NegativeInput(f"gains and power must be nonnegative: {(h_b, h_e, power)}")
    root = math.sqrt(power)
    return h_b * root, h_e * root


def rayleigh_stream(seed: int, round_index: int, purpose: int, count: int, scale: float) -> np.ndarray:
    """First ``count`` Rayleigh(scale) variates of one keyed stream."""
    ss = np.random.SeedSequence([int(seed), int(round_index), int(purpose)])
    rng = np.random.Generator(np.random.PCG64(ss))
    return rng.rayleigh(scale, size=count)


def _gains(model: ChannelModel, fixed: Sequence[float] | None, purpose: int,
           scale: float, round_index: int, n: int) -> np.ndarray:
    if fixed is not None:
        if len(fixed) != n:
            raise ValueError(f"fixed gains have {len(fixed)} entries, expected {n}")
        return np.asarray(fixed, dtype=float)
    return rayleigh_stream(model.seed, round_index, purpose, n, scale)


def sample_round(model: ChannelModel, params: SystemParams, round_index: int) -> list[DeviceRound]:
    n = params.n_devices
    h_b = _gains(model, model.fixed_h_b, _PURPOSE_BS, model.scale_b, round_index, n)
    h_e = _gains(model, model.fixed_h_e, _PURPOSE_EVE, model.scale_e, round_index, n)
    return [
        DeviceRound.from_gains(float(h_b[i]), float(h_e[i]), params.power_budgets[i])
        for i in range(n)
    ]
