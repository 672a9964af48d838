"""Shared configuration and domain types for the OTA-FL simulator.

Noise levels ``sigma_b`` and ``sigma_e`` are *variances* throughout the
package. Every formula that needs a standard deviation takes the square
root explicitly.
"""

from __future__ import annotations

import enum
import math
from functools import cached_property
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class ParamError(ValueError):
    """Base class for invalid system parameters."""


class NonPositiveVariance(ParamError):
    pass


class ZetaOutOfRange(ParamError):
    pass


class LengthMismatch(ParamError):
    pass


class EmptySystem(ParamError):
    pass


class Role(enum.IntEnum):
    JAMMER = 0
    UPLOADER = 1
    OFFLINE = 2


_ROLE_CHARS = {Role.UPLOADER: "U", Role.JAMMER: "J", Role.OFFLINE: "O"}


@dataclass(frozen=True)
class SystemParams:
    n_devices: int
    model_dim: int
    grad_bound: float
    sigma_b: float
    sigma_e: float
    power_budgets: tuple[float, ...]
    epsilon: float
    zeta: float
    upsilon: float
    grad_range_lo: float = 0.0
    grad_range_hi: float = 1.0
    # the security check counts the uploaders; True counts every device instead
    security_count_all: bool = False

    @property
    def kappa(self) -> float:
        from spotafl.privsec import kappa

        return kappa(self.zeta)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_devices": self.n_devices,
            "model_dim": self.model_dim,
            "grad_bound": self.grad_bound,
            "sigma_b": self.sigma_b,
            "sigma_e": self.sigma_e,
            "power_budgets": list(self.power_budgets),
            "epsilon": self.epsilon,
            "zeta": self.zeta,
            "upsilon": self.upsilon,
            "grad_range_lo": self.grad_range_lo,
            "grad_range_hi": self.grad_range_hi,
            "security_count_all": self.security_count_all,
        }


def _positive(name: str, value: float, exc: type[ParamError] = ParamError) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise exc(f"{name} must be a positive finite number, got {value!r}")
    return value


def validate_params(raw: Mapping[str, Any] | SystemParams) -> SystemParams:
    """Check a parameter record and return a frozen :class:`SystemParams`.

    ``raw`` may be a mapping with the field names of :class:`SystemParams`
    or an existing instance. A scalar ``power_budgets`` is broadcast to all
    devices.
    """
    if isinstance(raw, SystemParams):
        raw = raw.to_dict()
    n = int(raw["n_devices"])
    if n <= 0:
        raise EmptySystem(f"n_devices must be >= 1, got {n}")
    d = int(raw["model_dim"])
    if d <= 0:
        raise ParamError(f"model_dim must be >= 1, got {d}")

    sigma_b = _positive("sigma_b", raw["sigma_b"], NonPositiveVariance)
    sigma_e = _positive("sigma_e", raw["sigma_e"], NonPositiveVariance)
    grad_bound = _positive("grad_bound", raw["grad_bound"])

    zeta = float(raw["zeta"])
    if not 0.0 < zeta < 1.0:
        raise ZetaOutOfRange(f"zeta must lie in (0, 1), got {zeta!r}")

    budgets = raw["power_budgets"]
    if isinstance(budgets, (int, float)):
        budgets = [budgets] * n
    budgets = tuple(_positive("power_budgets", p, NonPositiveVariance) for p in budgets)
    if len(budgets) != n:
        raise LengthMismatch(f"power_budgets has {len(budgets)} entries but n_devices={n}")

    lo = float(raw.get("grad_range_lo", 0.0))
    hi = float(raw.get("grad_range_hi", 1.0))
    if not lo < hi:
        raise ParamError(f"grad_range_lo must be < grad_range_hi, got [{lo}, {hi}]")

    return SystemParams(
        n_devices=n,
        model_dim=d,
        grad_bound=grad_bound,
        sigma_b=sigma_b,
        sigma_e=sigma_e,
        power_budgets=budgets,
        epsilon=_positive("epsilon", raw["epsilon"]),
        zeta=zeta,
        upsilon=_positive("upsilon", raw["upsilon"]),
        grad_range_lo=lo,
        grad_range_hi=hi,
        security_count_all=bool(raw.get("security_count_all", False)),
    )


@dataclass(frozen=True)
class DeviceRound:
    """Channel realization of one device in one round."""

    h_b: float
    h_e: float
    power: float
    p_b: float
    p_e: float

    @classmethod
    def from_gains(cls, h_b: float, h_e: float, power: float) -> "DeviceRound":
        from spotafl.channel import effective_coefficients

        p_b, p_e = effective_coefficients(h_b, h_e, power)
        return cls(float(h_b), float(h_e), float(power), p_b, p_e)


def coefficient_arrays(devices: Sequence[DeviceRound]) -> tuple[np.ndarray, np.ndarray]:
    p_b = np.array([dev.p_b for dev in devices], dtype=float)
    p_e = np.array([dev.p_e for dev in devices], dtype=float)
    return p_b, p_e


@dataclass(frozen=True)
class Schedule:
    roles: tuple[Role, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "roles", tuple(Role(r) for r in self.roles))

    @classmethod
    def from_binary(cls, a: Iterable[int]) -> "Schedule":
        return cls(tuple(Role.UPLOADER if int(x) else Role.JAMMER for x in a))

    @classmethod
    def all_uploaders(cls, n: int) -> "Schedule":
        return cls((Role.UPLOADER,) * n)

    def __len__(self) -> int:
        return len(self.roles)

    @property
    def uploaders(self) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r is Role.UPLOADER]

    @property
    def jammers(self) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r is Role.JAMMER]

    @property
    def offline(self) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r is Role.OFFLINE]

    @property
    def binary(self) -> tuple[int, ...]:
        return tuple(1 if r is Role.UPLOADER else 0 for r in self.roles)

    @property
    def has_offline(self) -> bool:
        return any(r is Role.OFFLINE for r in self.roles)

    def label(self) -> str:
        return "".join(_ROLE_CHARS[r] for r in self.roles)


@dataclass(frozen=True)
class ScheduleMetrics:
    h_sum: float
    lambda_max: float
    psi: float
    uploader_count: int
    jammer_count: int


@dataclass(frozen=True)
class Instance:
    """One round's scheduling problem (devices + system parameters)."""

    devices: tuple[DeviceRound, ...]
    params: SystemParams
    kappa: float = field(default=0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "devices", tuple(self.devices))
        if len(self.devices) != self.params.n_devices:
            raise LengthMismatch(
                f"instance has {len(self.devices)} devices, params expect {self.params.n_devices}"
            )
        if self.kappa <= 0.0:
            object.__setattr__(self, "kappa", self.params.kappa)

    @cached_property
    def p_b(self) -> np.ndarray:
        return np.array([dev.p_b for dev in self.devices], dtype=float)

    @cached_property
    def p_e(self) -> np.ndarray:
        return np.array([dev.p_e for dev in self.devices], dtype=float)


SchedulingInstance = Instance
