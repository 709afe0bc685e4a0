"""Coincidence histograms between time-tag channels.

Bin ``k`` of a histogram with half-width ``K`` bins collects delays
``t_b - t_a - center_offset`` in ``[(k - K - 1/2) w, (k - K + 1/2) w)``, so
with tick-aligned tags and ``w`` a multiple of the tick every delay falls on
a bin centre.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .tagstream import TagStream

DEFAULT_BIN_PS = 84
DEFAULT_SPAN_PS = 50_000
MIN_WING_BINS = 20


@dataclass
class Histogram:
    bin_width_ps: int
    center_offset_ps: int
    counts: np.ndarray
    acquisition_time_s: float
    rate_a: float
    rate_b: float
    background: float | None = None
    g: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def half_bins(self) -> int:
        return (self.counts.size - 1) // 2

    @property
    def delays_ps(self) -> np.ndarray:
        k = np.arange(self.counts.size) - self.half_bins
        return self.center_offset_ps + k * self.bin_width_ps

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def accidentals_per_bin(self) -> float:
        return self.rate_a * self.rate_b * self.bin_width_ps * 1e-12 * self.acquisition_time_s

    def to_csv(self, path) -> None:
        g = self.g if self.g is not None else np.full(self.counts.size, np.nan)
        integral = np.issubdtype(self.counts.dtype, np.integer)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delay_ps", "counts", "g_normalized"])
            for d, c, gi in zip(self.delays_ps.tolist(), self.counts.tolist(), g.tolist()):
                w.writerow([d, c if integral else f"{c:.10g}", f"{gi:.10g}"])

    def sidecar(self) -> dict:
        return {
            "bin_width_ps": int(self.bin_width_ps),
            "center_offset_ps": int(self.center_offset_ps),
            "n_bins": int(self.counts.size),
            "acquisition_time_s": self.acquisition_time_s,
            "rate_a_per_s": self.rate_a,
            "rate_b_per_s": self.rate_b,
            "total_counts": self.total,
            "background_per_bin": self.background,
            **self.meta,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class CoincidenceResult:
    coincidences: int
    accidentals_estimate: float
    car: float
    window_ps: int
    offset_ps: int

    def as_dict(self) -> dict:
        return {
            "coincidences": self.coincidences,
            "accidentals_estimate": self.accidentals_estimate,
            "car": self.car,
            "window_ps": self.window_ps,
            "offset_ps": self.offset_ps,
        }


def _times_and_duration(x, acquisition_time_s):
    if isinstance(x, TagStream):
        return x.times.astype(np.int64), x.duration_s
    return np.ascontiguousarray(x, dtype=np.int64), acquisition_time_s


def _resolve(a, b, acquisition_time_s):
    ta, da = _times_and_duration(a, acquisition_time_s)
    tb, db = _times_and_duration(b, acquisition_time_s)
    t = acquisition_time_s if acquisition_time_s is not None else (da or db)
    if t is None:
        raise ValueError("acquisition_time_s is required for raw time arrays")
    return ta, tb, float(t)


def cross_correlate(
    a,
    b,
    bin_width_ps: int = DEFAULT_BIN_PS,
    span_ps: int = DEFAULT_SPAN_PS,
    acquisition_time_s: float | None = None,
    center_offset_ps: int = 0,
) -> Histogram:
    """Histogram of ``t_b - t_a`` over ``[-span, span]`` by a two-pointer sweep.

    ``a`` and ``b`` are sorted integer time arrays (ps) or single-channel
    :class:`TagStream` objects.
    """
    bin_width_ps, span_ps = int(bin_width_ps), int(span_ps)
    if bin_width_ps <= 0:
        raise ValueError("bin width must be positive")
    if span_ps < bin_width_ps:
        raise ValueError("span must be at least one bin width")
    ta, tb, t_acq = _resolve(a, b, acquisition_time_s)
    half = span_ps // bin_width_ps
    counts = _kernels.correlate_counts(ta, tb, bin_width_ps, half, int(center_offset_ps))
    ra = ta.size / t_acq if t_acq > 0 else 0.0
    rb = tb.size / t_acq if t_acq > 0 else 0.0
    return Histogram(bin_width_ps, int(center_offset_ps), counts, t_acq, ra, rb)


def brute_force_correlate(a, b, bin_width_ps: int, span_ps: int, center_offset_ps: int = 0) -> np.ndarray:
    """All-pairs reference for :func:`cross_correlate` (O(N*M))."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    half = span_ps // bin_width_ps
    nbins = 2 * half + 1
    counts = np.zeros(nbins, dtype=np.int64)
    for ta in a.tolist():
        for tb in b.tolist():
            d = tb - ta - center_offset_ps
            k = math.floor((d + (half + 0.5) * bin_width_ps) / bin_width_ps)
            if 0 <= k < nbins:
                counts[k] += 1
    return counts


def normalize(h: Histogram) -> Histogram:
    """Attach ``g = counts / (r_a r_b w T)``."""
    if not h.acquisition_time_s > 0:
        raise ValueError("acquisition time must be positive to normalize")
    expected = h.accidentals_per_bin
    if not expected > 0:
        raise ValueError("both singles rates must be non-zero to normalize")
    return replace(h, g=np.asarray(h.counts, dtype=float) / expected)


def estimate_peak_hwhm(h: Histogram) -> tuple[float, float]:
    """Return (peak delay, half width at half maximum) in ps."""
    c = np.asarray(h.counts, dtype=float)
    n = c.size
    smooth = np.convolve(c, np.ones(5) / 5, mode="same") if n >= 5 else c
    edge = max(1, n // 8)
    base = float(np.median(np.concatenate((c[:edge], c[-edge:]))))
    ip = int(np.argmax(smooth))
    half_level = base + 0.5 * (smooth[ip] - base)
    left = ip
    while left > 0 and smooth[left] > half_level:
        left -= 1
    right = ip
    while right < n - 1 and smooth[right] > half_level:
        right += 1
    hwhm = max(0.5 * (right - left), 1.0) * h.bin_width_ps
    return float(h.delays_ps[ip]), hwhm


def background_correct(h: Histogram, peak_hwhm_ps: float | None = None, wing_factor: float = 10.0) -> Histogram:
    """Subtract the flat background estimated from the wings, clamping at zero.

    Wings are bins further than ``wing_factor`` half-widths from the peak.
    """
    center, hwhm = estimate_peak_hwhm(h)
    if peak_hwhm_ps is not None:
        hwhm = float(peak_hwhm_ps)
    wings = np.abs(h.delays_ps - center) > wing_factor * hwhm
    if wings.sum() < MIN_WING_BINS:
        raise ValueError(
            f"only {int(wings.sum())} wing bins beyond {wing_factor} x {hwhm:.0f} ps; "
            f"need {MIN_WING_BINS} (widen the span)"
        )
    c = np.asarray(h.counts, dtype=float)
    bg = float(c[wings].mean())
    corrected = np.clip(c - bg, 0.0, None)
    out = replace(h, counts=corrected, background=(h.background or 0.0) + bg,
                  meta={**h.meta, "peak_hwhm_ps": hwhm})
    if h.g is not None:
        out = normalize(out)
    return out


def autocorrelate_hbt(
    times,
    splitter_ratio: float,
    bin_width_ps: int = DEFAULT_BIN_PS,
    span_ps: int = DEFAULT_SPAN_PS,
    seed: int = 0,
    acquisition_time_s: float | None = None,
) -> Histogram:
    """Hanbury Brown-Twiss estimate of g2 for one channel.

    Each tag goes to arm B with probability ``splitter_ratio`` and to arm A
    otherwise; the normalized A-B cross-correlation is returned. A
    degenerate split returns an all-zero histogram.
    """
    if not 0.0 <= splitter_ratio <= 1.0:
        raise ValueError("splitter_ratio must lie in [0, 1]")
    t, t_acq = _times_and_duration(times, acquisition_time_s)
    if t_acq is None:
        raise ValueError("acquisition_time_s is required for raw time arrays")
    rng = np.random.default_rng(seed)
    to_b = rng.random(t.size) < splitter_ratio
    h = cross_correlate(t[~to_b], t[to_b], bin_width_ps, span_ps, t_acq)
    if h.rate_a == 0 or h.rate_b == 0 or not t_acq > 0:
        return replace(h, g=np.zeros(h.counts.size))
    return normalize(h)


def g2_at_zero(h: Histogram, window_ps: float | None = None) -> float:
    """Mean normalized value over ``|delay| <= window/2`` (one bin by default)."""
    if h.g is None:
        h = normalize(h)
    window_ps = h.bin_width_ps if window_ps is None else window_ps
    sel = np.abs(h.delays_ps) <= max(window_ps / 2, 0)
    if not sel.any():
        sel = h.delays_ps == h.delays_ps[h.half_bins]
    return float(h.g[sel].mean())


def coincidence_count(a, b, window_ps: int, offset_ps: int = 0,
                      acquisition_time_s: float | None = None) -> CoincidenceResult:
    """Pairs with ``|t_b - t_a - offset| <= window/2`` and the accidental estimate."""
    window_ps, offset_ps = int(window_ps), int(offset_ps)
    if window_ps <= 0:
        raise ValueError("window must be positive")
    ta, tb, t_acq = _resolve(a, b, acquisition_time_s)
    b2 = 2 * tb
    lo = np.searchsorted(b2, 2 * (ta + offset_ps) - window_ps, side="left")
    hi = np.searchsorted(b2, 2 * (ta + offset_ps) + window_ps, side="right")
    c = int((hi - lo).sum())
    acc = ta.size * tb.size * window_ps * 1e-12 / t_acq if t_acq > 0 else 0.0
    if acc > 0:
        car = (c - acc) / acc
    else:
        car = math.inf if c > 0 else 0.0
    return CoincidenceResult(c, acc, car, window_ps, offset_ps)
