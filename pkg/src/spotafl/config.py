"""INI experiment configuration: parsing, validation and serialization.

Sections and keys (all optional unless marked):

``[system]``      n_devices*, model_dim*, grad_bound*, sigma_b*, sigma_e*, power*
                  (scalar or comma list), channel_scale_b, channel_scale_e,
                  channel_seed, fixed_h_b, fixed_h_e (comma lists),
                  grad_range_lo, grad_range_hi
``[privacy]``     epsilon*, zeta*
``[security]``    upsilon*, count_all
``[learning]``    rounds*, loss, iota, lr_mode, tau0, rho, theta (``auto`` takes
                  the value estimated from the data), samples_per_device,
                  batch_size, heterogeneity, label_noise, planted_scale
``[experiment]``  scheduler, aggregator, replicates, master_seed, output_dir,
                  workers, data_seed, verbatim_alignment, solver_instances
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

from spotafl.channel import ChannelModel
from spotafl.fedlearn import AGGREGATORS, LOSS_KINDS
from spotafl.scheduler import SCHEDULER_CHOICES
from spotafl.sysmodel import ParamError, SystemParams, validate_params


class ConfigParseError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"[{key}] {message}")
        self.key = key


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _auto_float(text: str) -> float | None:
    return None if text.strip().lower() == "auto" else float(text)


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text
    return parse


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise ValueError("seed must fit in 64 unsigned bits")
    return value


# section -> key -> (parser, default); default None with required=True marks a mandatory key
_SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any, bool]]] = {
    "system": {
        "n_devices": (int, None, True),
        "model_dim": (int, None, True),
        "grad_bound": (float, None, True),
        "sigma_b": (float, None, True),
        "sigma_e": (float, None, True),
        "power": (_floats, None, True),
        "channel_scale_b": (float, 1.0, False),
        "channel_scale_e": (float, 1.0, False),
        "channel_seed": (_seed, 0, False),
        "fixed_h_b": (_floats, None, False),
        "fixed_h_e": (_floats, None, False),
        "grad_range_lo": (float, 0.0, False),
        "grad_range_hi": (float, 1.0, False),
    },
    "privacy": {
        "epsilon": (float, None, True),
        "zeta": (float, None, True),
    },
    "security": {
        "upsilon": (float, None, True),
        "count_all": (_bool, False, False),
    },
    "learning": {
        "rounds": (int, None, True),
        "loss": (_choice(LOSS_KINDS), "linreg", False),
        "iota": (float, 0.1, False),
        "lr_mode": (_choice(("constant", "theorem")), "constant", False),
        "tau0": (float, 0.1, False),
        "rho": (_auto_float, None, False),
        "theta": (_auto_float, None, False),
        "samples_per_device": (int, 50, False),
        "batch_size": (int, 10, False),
        "heterogeneity": (float, 0.0, False),
        "label_noise": (float, 0.1, False),
        "planted_scale": (float, 1.0, False),
    },
    "experiment": {
        "scheduler": (_choice(SCHEDULER_CHOICES), "spa", False),
        "aggregator": (_choice(AGGREGATORS), "cwpp", False),
        "replicates": (int, 1, False),
        "master_seed": (_seed, 0, False),
        "output_dir": (str, "runs", False),
        "workers": (int, 1, False),
        "data_seed": (_seed, None, False),
        "verbatim_alignment": (_bool, False, False),
        "solver_instances": (int, 20, False),
    },
}


@dataclass(frozen=True)
class LearningConfig:
    rounds: int
    loss: str = "linreg"
    iota: float = 0.1
    lr_mode: str = "constant"
    tau0: float = 0.1
    rho: float | None = None
    theta: float | None = None
    samples_per_device: int = 50
    batch_size: int = 10
    heterogeneity: float = 0.0
    label_noise: float = 0.1
    planted_scale: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemParams
    channel: ChannelModel
    learning: LearningConfig
    scheduler: str = "spa"
    aggregator: str = "cwpp"
    replicates: int = 1
    master_seed: int = 0
    output_dir: str = "runs"
    workers: int = 1
    data_seed: int | None = None
    verbatim_alignment: bool = False
    solver_instances: int = 20

    def with_overrides(self, **kwargs: Any) -> "ExperimentConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        if not kwargs:
            return self
        cfg = replace(self, **kwargs)
        _check(cfg)
        return cfg


def _check(cfg: ExperimentConfig) -> None:
    if cfg.replicates < 1:
        raise ConfigParseError("experiment.replicates", "must be >= 1")
    if cfg.workers < 1:
        raise ConfigParseError("experiment.workers", "must be >= 1")
    if cfg.learning.rounds < 0:
        raise ConfigParseError("learning.rounds", "must be >= 0")
    if cfg.solver_instances < 1:
        raise ConfigParseError("experiment.solver_instances", "must be >= 1")
    if not 1 <= cfg.learning.batch_size <= cfg.learning.samples_per_device:
        raise ConfigParseError("learning.batch_size", "must lie in [1, samples_per_device]")
    for key in ("tau0", "iota", "rho", "theta"):
        value = getattr(cfg.learning, key)
        if value is not None and value <= 0:
            raise ConfigParseError(f"learning.{key}", "must be positive")


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep keys case-sensitive so typos surface
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigParseError("syntax", str(exc).splitlines()[0]) from exc

    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigParseError(section, "unknown section")
    for section, keys in _SCHEMA.items():
        got = parser[section] if parser.has_section(section) else {}
        for key in got:
            if key not in keys:
                raise ConfigParseError(f"{section}.{key}", "unknown key")
        out = values.setdefault(section, {})
        for key, (conv, default, required) in keys.items():
            if key in got:
                try:
                    out[key] = conv(got[key])
                except ValueError as exc:
                    raise ConfigParseError(f"{section}.{key}", f"bad value {got[key]!r}: {exc}") from exc
            elif required:
                raise ConfigParseError(f"{section}.{key}", "missing required key")
            else:
                out[key] = default

    sysv, priv, sec = values["system"], values["privacy"], values["security"]
    power = sysv["power"]
    try:
        params = validate_params({
            "n_devices": sysv["n_devices"],
            "model_dim": sysv["model_dim"],
            "grad_bound": sysv["grad_bound"],
            "sigma_b": sysv["sigma_b"],
            "sigma_e": sysv["sigma_e"],
            "power_budgets": power[0] if len(power) == 1 else list(power),
            "epsilon": priv["epsilon"],
            "zeta": priv["zeta"],
            "upsilon": sec["upsilon"],
            "grad_range_lo": sysv["grad_range_lo"],
            "grad_range_hi": sysv["grad_range_hi"],
            "security_count_all": sec["count_all"],
        })
    except ParamError as exc:
        raise ConfigParseError(_param_key(str(exc)), str(exc)) from exc
    try:
        channel = ChannelModel(sysv["channel_scale_b"], sysv["channel_scale_e"], sysv["channel_seed"],
                               sysv["fixed_h_b"], sysv["fixed_h_e"])
    except ValueError as exc:
        raise ConfigParseError("system.channel_scale_b", str(exc)) from exc
    for key in ("fixed_h_b", "fixed_h_e"):
        fixed = sysv[key]
        if fixed is not None and (len(fixed) != params.n_devices or min(fixed) < 0):
            raise ConfigParseError(f"system.{key}", f"needs {params.n_devices} nonnegative gains")

    cfg = ExperimentConfig(system=params, channel=channel, learning=LearningConfig(**values["learning"]),
                           **values["experiment"])
    _check(cfg)
    return cfg


def _param_key(message: str) -> str:
    for section, keys in _SCHEMA.items():
        for key in keys:
            if message.startswith(key):
                return f"{section}.{key}"
    if message.startswith("power_budgets"):
        return "system.power"
    if message.startswith("zeta"):
        return "privacy.zeta"
    return "system"


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParseError("file", f"cannot read {path}: {exc}") from exc
    return parse_config(text)


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(float(v)) for v in value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that parses back to an equal :class:`ExperimentConfig`."""
    p, ch, lr = cfg.system, cfg.channel, cfg.learning
    sections: dict[str, dict[str, Any]] = {
        "system": {
            "n_devices": p.n_devices, "model_dim": p.model_dim, "grad_bound": p.grad_bound,
            "sigma_b": p.sigma_b, "sigma_e": p.sigma_e, "power": p.power_budgets,
            "channel_scale_b": ch.scale_b, "channel_scale_e": ch.scale_e, "channel_seed": ch.seed,
            "fixed_h_b": ch.fixed_h_b, "fixed_h_e": ch.fixed_h_e,
            "grad_range_lo": p.grad_range_lo, "grad_range_hi": p.grad_range_hi,
        },
        "privacy": {"epsilon": p.epsilon, "zeta": p.zeta},
        "security": {"upsilon": p.upsilon, "count_all": p.security_count_all},
        "learning": {k: getattr(lr, k) for k in _SCHEMA["learning"]},
        "experiment": {k: getattr(cfg, k) for k in _SCHEMA["experiment"]},
    }
    learning = sections["learning"]
    for key in ("rho", "theta"):
        if learning[key] is None:
            learning[key] = "auto"
    buf = io.StringIO()
    for name, items in sections.items():
        buf.write(f"[{name}]\n")
        for key, value in items.items():
            if value is not None:
                buf.write(f"{key} = {_fmt(value)}\n")
        buf.write("\n")
    return buf.getvalue()
