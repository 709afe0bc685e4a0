"""Spectral model of a microring resonator.

Frequencies of optical carriers are in THz, linewidths in MHz, wavelengths in
nm and thermal shifts in pm, matching the units in which the device is
usually characterized.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

C_M_PER_S = 299_792_458.0


class InvalidSpecError(ValueError):
    """A resonator, source or detector parameter set violates its invariants."""


def wavelength_to_thz(wavelength_nm: float) -> float:
    return C_M_PER_S / wavelength_nm * 1e-3


def thz_to_wavelength(freq_thz: float) -> float:
    return C_M_PER_S / freq_thz * 1e-3


@dataclass(frozen=True)
class ResonatorSpec:
    """Geometric and optical parameters of one microring.

    Coupling is parameterized by the intrinsic and coupling quality factors
    rather than the bus-ring gap.
    """

    pump_wavelength_nm: float = 1551.7
    fsr_ghz: float = 200.0
    q_intrinsic: float = 7e7
    q_coupling: float = 2.0588235294e6  # Q_L = 2e6 with the default Qi
    radius_um: float = 115.0
    thermo_optic_pm_per_k: float = 21.90
    base_temperature_c: float = 22.0

    def __post_init__(self):
        if not (self.q_intrinsic > 0 and self.q_coupling > 0):
            raise InvalidSpecError("quality factors must be positive")
        if not self.fsr_ghz > 0:
            raise InvalidSpecError(f"fsr must be positive, got {self.fsr_ghz}")
        if not self.radius_um > 0:
            raise InvalidSpecError(f"radius must be positive, got {self.radius_um}")
        if not self.pump_wavelength_nm > 0:
            raise InvalidSpecError("pump wavelength must be positive")

    @property
    def q_loaded(self) -> float:
        return 1.0 / (1.0 / self.q_intrinsic + 1.0 / self.q_coupling)

    @property
    def coupling_ratio(self) -> float:
        """Qi/Qc; above 1 the ring is over-coupled."""
        return self.q_intrinsic / self.q_coupling

    @property
    def ring_length_m(self) -> float:
        return 2.0 * math.pi * self.radius_um * 1e-6

    @property
    def pump_frequency_thz(self) -> float:
        return wavelength_to_thz(self.pump_wavelength_nm)

    @classmethod
    def for_bandwidth(cls, fwhm_mhz: float, mode_index: int = 2, **kwargs) -> "ResonatorSpec":
        """Ring whose line ``mode_index`` has the requested loaded linewidth.

        ``q_intrinsic`` is kept and ``q_coupling`` solved for, so narrower
        lines come from weaker coupling.
        """
        spec = cls(**kwargs)
        nu = spec.pump_frequency_thz + mode_index * spec.fsr_ghz * 1e-3
        q_loaded = nu * 1e6 / fwhm_mhz
        if q_loaded >= spec.q_intrinsic:
            raise InvalidSpecError(
                f"linewidth {fwhm_mhz} MHz needs Q_L={q_loaded:.3g} >= Qi={spec.q_intrinsic:.3g}"
            )
        q_c = 1.0 / (1.0 / q_loaded - 1.0 / spec.q_intrinsic)
        return replace(spec, q_coupling=q_c)


@dataclass(frozen=True)
class ResonanceLine:
    center_frequency_thz: float
    fwhm_mhz: float
    mode_index: int

    @property
    def wavelength_nm(self) -> float:
        return thz_to_wavelength(self.center_frequency_thz)


def resonance_grid(spec: ResonatorSpec, max_order: int, offset_thz: float = 0.0) -> list[ResonanceLine]:
    """Lines m = -max_order..max_order on an ideal FSR grid around the pump.

    ``offset_thz`` rigidly translates the whole grid (used for thermal tuning).
    """
    if max_order < 1:
        raise ValueError(f"max_order must be >= 1, got {max_order}")
    if not spec.fsr_ghz > 0:
        raise InvalidSpecError("fsr must be positive")
    nu_p = spec.pump_frequency_thz + offset_thz
    fsr = spec.fsr_ghz * 1e-3
    q_l = spec.q_loaded
    lines = []
    for m in range(-max_order, max_order + 1):
        nu = nu_p + m * fsr
        lines.append(ResonanceLine(nu, bandwidth_from_q(nu, q_l), m))
    return lines


def lorentzian_transmission(line: ResonanceLine, coupling_ratio: float, freq_thz):
    """All-pass ring transmission near one resonance.

    Accepts a scalar or an array of frequencies; the result lies in [0, 1].
    """
    if not coupling_ratio > 0:
        raise ValueError("coupling_ratio must be positive")
    t_min = ((1.0 - coupling_ratio) / (1.0 + coupling_ratio)) ** 2
    detuning_mhz = (np.asarray(freq_thz, dtype=float) - line.center_frequency_thz) * 1e6
    half = 0.5 * line.fwhm_mhz
    dip = (1.0 - t_min) * half**2 / (detuning_mhz**2 + half**2)
    out = 1.0 - dip
    return float(out) if np.ndim(out) == 0 else out


def bandwidth_from_q(center_thz: float, q_loaded: float) -> float:
    """Linewidth (MHz) of a resonance at ``center_thz`` with loaded Q."""
    if not q_loaded > 0:
        raise ValueError("q_loaded must be positive")
    return center_thz * 1e6 / q_loaded


def thermal_shift(spec: ResonatorSpec, delta_t_k: float) -> float:
    """Resonance wavelength shift in pm for a chip temperature change."""
    return spec.thermo_optic_pm_per_k * delta_t_k


def thermal_shift_thz(spec: ResonatorSpec, delta_t_k: float) -> float:
    # wavelength shift referenced to the pump line; negative for red shifts
    lam = spec.pump_wavelength_nm
    return -C_M_PER_S * thermal_shift(spec, delta_t_k) * 1e-12 / (lam * 1e-9) ** 2 * 1e-12


def tuned_grid(spec: ResonatorSpec, max_order: int, delta_t_k: float) -> list[ResonanceLine]:
    return resonance_grid(spec, max_order, offset_thz=thermal_shift_thz(spec, delta_t_k))


def temperature_tolerance_mk(spec: ResonatorSpec, max_drift_mhz: float) -> float:
    """Temperature stability (mK) needed to hold the lines within ``max_drift_mhz``."""
    per_k_mhz = abs(thermal_shift_thz(spec, 1.0)) * 1e6
    return max_drift_mhz / per_k_mhz * 1e3


@dataclass
class ScanTable:
    freq_thz: np.ndarray
    transmission: np.ndarray

    def __len__(self):
        return self.freq_thz.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["freq_thz", "transmission"])
            for f, t in zip(self.freq_thz.tolist(), self.transmission.tolist()):
                w.writerow([f"{f:.12g}", f"{t:.12g}"])

    @classmethod
    def from_csv(cls, path) -> "ScanTable":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0].copy(), data[:, 1].copy())


def transmission_scan(
    spec: ResonatorSpec,
    start_thz: float,
    stop_thz: float,
    step_thz: float,
    noise_rms: float = 0.0,
    seed: int = 0,
    mode_index: int = 0,
) -> ScanTable:
    """Synthetic laser-scan of line ``mode_index`` with additive Gaussian noise."""
    if not step_thz > 0:
        raise ValueError("step must be positive")
    if noise_rms < 0:
        raise ValueError("noise_rms must be non-negative")
    if not start_thz < stop_thz:
        raise ValueError(f"empty scan range [{start_thz}, {stop_thz}]")
    n = int(math.floor((stop_thz - start_thz) / step_thz + 1e-9)) + 1
    freq = start_thz + step_thz * np.arange(n)
    line = _line(spec, mode_index)
    t = lorentzian_transmission(line, spec.coupling_ratio, freq)
    if noise_rms > 0:
        rng = np.random.default_rng(seed)
        t = t + rng.normal(0.0, noise_rms, n)
    return ScanTable(freq, np.asarray(t, dtype=float))


def scan_around(spec: ResonatorSpec, mode_index: int, span_fwhm: float = 10.0, points: int = 2001,
                noise_rms: float = 0.0, seed: int = 0) -> ScanTable:
    """Scan centred on one line, ``span_fwhm`` linewidths wide."""
    line = _line(spec, mode_index)
    half = 0.5 * span_fwhm * line.fwhm_mhz * 1e-6
    step = 2 * half / (points - 1)
    return transmission_scan(spec, line.center_frequency_thz - half, line.center_frequency_thz + half,
                             step, noise_rms, seed, mode_index)


def _line(spec: ResonatorSpec, mode_index: int) -> ResonanceLine:
    order = max(1, abs(mode_index))
    return resonance_grid(spec, order)[mode_index + order]
