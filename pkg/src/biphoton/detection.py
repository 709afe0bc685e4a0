"""Detector chain: ideal emission times in, quantized time tags out.

The stages run in a fixed order: loss thinning, Gaussian timing jitter,
dark counts, gate windows, non-paralyzable dead time, and tick quantization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .resonator import InvalidSpecError
from .tagstream import FLAG_DARK, TagStream

PAPER_COMBINED_JITTER_PS = 350.0
PAPER_TICK_PS = 84
# filtering (3.5 dB) plus chip out-coupling (3 dB)
PAPER_PATH_LOSS_DB = 6.5


@dataclass(frozen=True)
class Gate:
    period_ns: float = 10.0
    width_ns: float = 1.0

    def __post_init__(self):
        if not (0 < self.width_ns <= self.period_ns):
            raise InvalidSpecError("gate width must lie in (0, period]")


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 0.15
    path_loss_db: float = 0.0
    jitter_sigma_ps: float = PAPER_COMBINED_JITTER_PS / math.sqrt(2.0)
    dark_prob_per_ns: float = 1e-4
    gate: Gate | None = None
    dead_time_ns: float = 1000.0
    tick_ps: int = PAPER_TICK_PS

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise InvalidSpecError(f"efficiency must be in [0, 1], got {self.efficiency}")
        if self.path_loss_db < 0:
            raise InvalidSpecError("path loss must be non-negative")
        if self.jitter_sigma_ps < 0 or self.dark_prob_per_ns < 0 or self.dead_time_ns < 0:
            raise InvalidSpecError("jitter, dark probability and dead time must be non-negative")
        if not (isinstance(self.tick_ps, (int, np.integer)) and self.tick_ps > 0):
            raise InvalidSpecError(f"tick must be a positive integer, got {self.tick_ps!r}")

    @property
    def transmission(self) -> float:
        """Overall probability that an emitted photon yields a click."""
        return self.efficiency * 10.0 ** (-self.path_loss_db / 10.0)


def pairwise_jitter(sigma_a_ps: float, sigma_b_ps: float) -> float:
    return math.hypot(sigma_a_ps, sigma_b_ps)


def detect(
    emissions_ps,
    spec: DetectorSpec,
    duration_ps: int,
    seed: int,
    channel: int = 0,
    mark_dark: bool = False,
) -> TagStream:
    """Run one detector channel over sorted emission times (ps)."""
    t = np.asarray(emissions_ps, dtype=np.float64)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("emission times must be sorted ascending")
    duration_ps = int(duration_ps)
    rng = np.random.default_rng(seed)

    t = t[rng.random(t.size) < spec.transmission]
    if spec.jitter_sigma_ps > 0 and t.size:
        t = t + rng.normal(0.0, spec.jitter_sigma_ps, t.size)
    dark = _dark_counts(rng, spec, duration_ps)

    times = np.concatenate((t, dark))
    flags = np.concatenate((np.zeros(t.size, np.uint16), np.full(dark.size, FLAG_DARK, np.uint16)))
    order = np.argsort(times, kind="stable")
    times, flags = times[order], flags[order]

    inside = (times >= 0) & (times < duration_ps)
    if spec.gate is not None:
        inside &= _in_gate(times, spec.gate)
    times, flags = times[inside], flags[inside]

    if spec.dead_time_ns > 0 and times.size:
        keep = _kernels.dead_time_mask(times, spec.dead_time_ns * 1e3)
        times, flags = times[keep], flags[keep]

    tick = int(spec.tick_ps)
    q = np.rint(times / tick).astype(np.int64) * tick
    ok = q <= duration_ps
    q, flags = q[ok], flags[ok]
    if not mark_dark:
        flags = np.zeros_like(flags)
    return TagStream(
        tick_ps=tick,
        duration_ps=duration_ps,
        channel_count=channel + 1,
        times=q.astype(np.uint64),
        channels=np.full(q.size, channel, dtype=np.uint16),
        flags=flags,
    )


def _dark_counts(rng, spec: DetectorSpec, duration_ps: int) -> np.ndarray:
    rate_per_ps = spec.dark_prob_per_ns * 1e-3
    if rate_per_ps <= 0:
        return np.empty(0)
    if spec.gate is None:
        n = rng.poisson(rate_per_ps * duration_ps)
        return rng.uniform(0.0, duration_ps, n)
    period = spec.gate.period_ns * 1e3
    width = spec.gate.width_ns * 1e3
    n_full = int(duration_ps // period)
    open_time = n_full * width + min(width, duration_ps - n_full * period)
    n = rng.poisson(rate_per_ps * open_time)
    u = rng.uniform(0.0, open_time, n)
    k = np.floor(u / width)
    return k * period + (u - k * width)


def _in_gate(times, gate: Gate):
    return np.mod(times, gate.period_ns * 1e3) < gate.width_ns * 1e3
