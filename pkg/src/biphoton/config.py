"""Experiment configuration files and seed derivation.

A configuration is a JSON object::

    {
      "name": "fig2a",
      "resonator": {"linewidth_mhz": 150, "signal_mode": 2, ...ResonatorSpec fields},
      "source": {"pump_power_mw": 1.96, "tau_ns": 1.06, ...SourceSpec fields},
      "detectors": {"default": {...}, "signal": {...}, "idler": {...}},
      "franson": {"delta_t_ns": 25, ..., "visibility_intrinsic": 1.0},
      "scan": {"span_fwhm": 10, "points": 2001, "noise_rms": 0.005},
      "correlation": {"bin_ps": 84, "span_ps": 50000},
      "powerscan": {"powers_mw": [0.5, 1, ...]},
      "fringe": {"phases_rad": [...]},
      "tune": {"max_delta_k": 14, "step_k": 0.05},
      "run": {"duration_s": 1.5, "seed": 1, "output_dir": "out"}
    }

Only ``run.seed`` and ``run.duration_s`` are mandatory. ``resonator.linewidth_mhz``
solves the coupling Q for that linewidth at ``signal_mode``. ``source.tau_ns``
defaults to the ring-down time of the signal line; when given it must agree
with that line to within :data:`TAU_CONSISTENCY`. ``source.q_loaded`` and
``source.ring_length_m`` default to the resonator's values.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .detection import DetectorSpec, Gate
from .franson import EntangledStateModel, FransonSpec
from .pair_source import SourceSpec, bandwidth_to_tau_ns, tau_to_bandwidth_mhz
from .resonator import InvalidSpecError, ResonatorSpec, _line

SEED_ENV = "BIPHOTON_SEED"
TAU_CONSISTENCY = 0.10

# stage identifiers mixed into the run seed
STAGE_PAIRS = 0
STAGE_ROUTE = 1
STAGE_DETECT_SIGNAL = 2
STAGE_DETECT_IDLER = 3
STAGE_SCAN = 4
STAGE_HBT = 5
STAGE_FRINGE = 6


class ConfigError(ValueError):
    """Unreadable or inconsistent configuration (CLI exit code 2)."""


def stage_seed(seed: int, stage: int, *index: int) -> int:
    """Seed for one pipeline stage: first word of ``SeedSequence([seed, stage, *index])``."""
    return int(np.random.SeedSequence([int(seed), int(stage), *map(int, index)]).generate_state(1)[0])


@dataclass(frozen=True)
class RunSpec:
    duration_s: float
    seed: int
    output_dir: str = "out"

    def __post_init__(self):
        if not self.duration_s > 0:
            raise InvalidSpecError(f"duration must be positive, got {self.duration_s}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidSpecError(f"seed must be a non-negative integer, got {self.seed!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    resonator: ResonatorSpec
    signal_mode: int
    source: SourceSpec
    detector_signal: DetectorSpec
    detector_idler: DetectorSpec
    franson: FransonSpec | None
    state: EntangledStateModel
    run: RunSpec
    options: dict

    @property
    def detectors(self) -> tuple[DetectorSpec, DetectorSpec]:
        return self.detector_signal, self.detector_idler

    def section(self, key: str) -> dict:
        return dict(self.options.get(key, {}))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))

    def with_source(self, **kw) -> "ExperimentConfig":
        return replace(self, source=replace(self.source, **kw))

    def with_duration(self, duration_s: float) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, duration_s=float(duration_s)))

    def resolved(self) -> dict:
        """Plain-data view with every derived field filled in."""
        out = {
            "name": self.name,
            "resonator": {**_asdict(self.resonator), "signal_mode": self.signal_mode},
            "source": _asdict(self.source),
            "detectors": {"signal": _detector_dict(self.detector_signal),
                          "idler": _detector_dict(self.detector_idler)},
            "run": _asdict(self.run),
        }
        if self.franson is not None:
            out["franson"] = {**_asdict(self.franson),
                              "visibility_intrinsic": self.state.visibility_intrinsic}
        out.update({k: v for k, v in self.options.items()})
        return out


def _asdict(obj) -> dict:
    d = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        d[f.name] = list(v) if isinstance(v, tuple) else v
    return d


def _detector_dict(spec: DetectorSpec) -> dict:
    d = _asdict(spec)
    d["gate"] = None if spec.gate is None else _asdict(spec.gate)
    return d


def _build(cls, data: dict, where: str, **extra):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**{**extra, **data})
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _detector(data: dict, where: str) -> DetectorSpec:
    data = dict(data)
    gate = data.pop("gate", None)
    if gate is not None:
        data["gate"] = _build(Gate, gate, f"{where}.gate")
    return _build(DetectorSpec, data, where)


_OPTION_KEYS = ("scan", "correlation", "powerscan", "fringe", "tune", "hbt")


def from_dict(data: dict[str, Any], name: str = "config") -> ExperimentConfig:
    """Validate a configuration mapping and derive the dependent fields."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {"name", "resonator", "source", "detectors", "franson", "run", *_OPTION_KEYS}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    if "source" not in data or "run" not in data:
        raise ConfigError("configuration needs 'source' and 'run' sections")

    res = dict(data.get("resonator", {}))
    signal_mode = int(res.pop("signal_mode", 2))
    linewidth = res.pop("linewidth_mhz", None)
    resonator = _build(ResonatorSpec, res, "resonator")
    if linewidth is not None:
        resonator = ResonatorSpec.for_bandwidth(float(linewidth), signal_mode, **res)
    line = _line(resonator, signal_mode)

    src = dict(data["source"])
    src.setdefault("q_loaded", resonator.q_loaded)
    src.setdefault("ring_length_m", resonator.ring_length_m)
    if "tau_ns" not in src:
        src["tau_ns"] = bandwidth_to_tau_ns(line.fwhm_mhz)
    else:
        bw = tau_to_bandwidth_mhz(float(src["tau_ns"]))
        if abs(bw - line.fwhm_mhz) > TAU_CONSISTENCY * line.fwhm_mhz:
            raise ConfigError(
                f"source tau {src['tau_ns']} ns ({bw:.1f} MHz) disagrees with the "
                f"resonator linewidth {line.fwhm_mhz:.1f} MHz by more than {TAU_CONSISTENCY:.0%}"
            )
    source = _build(SourceSpec, src, "source")

    dets = dict(data.get("detectors", {}))
    base = dets.pop("default", {})
    unknown = sorted(set(dets) - {"signal", "idler"})
    if unknown:
        raise ConfigError(f"detectors: unknown channel(s) {', '.join(unknown)}")
    det_s = _detector({**base, **dets.get("signal", {})}, "detectors.signal")
    det_i = _detector({**base, **dets.get("idler", {})}, "detectors.idler")
    if det_s.tick_ps != det_i.tick_ps:
        raise ConfigError("signal and idler detectors must share one tick")

    franson, state = None, EntangledStateModel()
    if data.get("franson") is not None:
        fr = dict(data["franson"])
        state = _build(EntangledStateModel, {"visibility_intrinsic": fr.pop("visibility_intrinsic", 1.0)},
                       "franson")
        if "splitter_ratios" in fr:
            fr["splitter_ratios"] = tuple(float(r) for r in fr["splitter_ratios"])
        franson = _build(FransonSpec, fr, "franson")

    run = dict(data["run"])
    if "seed" not in run:
        raise ConfigError("run.seed is required (no implicit entropy)")
    if "duration_s" not in run:
        raise ConfigError("run.duration_s is required")
    run_spec = _build(RunSpec, run, "run")

    options = {k: data[k] for k in _OPTION_KEYS if k in data}
    return ExperimentConfig(str(data.get("name", name)), resonator, signal_mode, source,
                            det_s, det_i, franson, state, run_spec, options)


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return from_dict(data, p.stem)


def preset_names() -> list[str]:
    root = resources.files("biphoton") / "presets"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    res = resources.files("biphoton") / "presets" / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return from_dict(json.loads(res.read_text()), name)


def effective_seed(config_seed: int, flag_seed: int | None = None, environ=None) -> int:
    """Seed precedence: command-line flag, then ``BIPHOTON_SEED``, then the config."""
    if flag_seed is not None:
        return int(flag_seed)
    env = (os.environ if environ is None else environ).get(SEED_ENV)
    if env not in (None, ""):
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
        if value < 0:
            raise ConfigError(f"{SEED_ENV} must be non-negative")
        return value
    return int(config_seed)
