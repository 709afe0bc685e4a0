"""Post-selected energy-time entanglement analysis with unbalanced interferometers.

Each photon of a pair crosses an unbalanced Mach-Zehnder (short arm S, long
arm L delayed by ``delta_t``) and is detected at one output port. Paths
that leave through the other port, or are absorbed in the long arm, count
as lost (X). Outcome probabilities are sampled per pair: SL and LS form the
side peaks at +/-delta_t, while the indistinguishable SS and LL amplitudes
interfere in the middle peak as ``1 + V cos(phi1 + phi2)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .correlation import coincidence_count
from .detection import DetectorSpec, detect
from .fitting import FitResult, fit_sinusoid
from .pair_source import PairEvents, SourceSpec, sample_pairs
from .resonator import InvalidSpecError

CLASSICAL_BOUND = 0.5
CHSH_BOUND = 1.0 / math.sqrt(2.0)
MIN_SEPARATION_TAUS = 10.0

# outcome codes per photon
_S, _L, _X = 0, 1, 2
_ROUTE_CHUNK = 250_000


@dataclass(frozen=True)
class FransonSpec:
    delta_t_ns: float
    phi1: float = 0.0
    phi2: float = 0.0
    splitter_ratios: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)
    phase_noise_sigma: float = 0.0
    long_arm_excess_loss_db: float = 0.0

    def __post_init__(self):
        if not self.delta_t_ns > 0:
            raise InvalidSpecError("interferometer delay must be positive")
        if len(self.splitter_ratios) != 4 or not all(0 < r < 1 for r in self.splitter_ratios):
            raise InvalidSpecError("splitter_ratios must be four values in (0, 1)")
        if self.phase_noise_sigma < 0 or self.long_arm_excess_loss_db < 0:
            raise InvalidSpecError("phase noise and excess loss must be non-negative")

    @property
    def phase_sum(self) -> float:
        return self.phi1 + self.phi2


@dataclass(frozen=True)
class EntangledStateModel:
    visibility_intrinsic: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.visibility_intrinsic <= 1.0:
            raise InvalidSpecError("visibility_intrinsic must lie in [0, 1]")


def path_probabilities(spec: FransonSpec) -> tuple[tuple[float, float], tuple[float, float]]:
    """(p_short, p_long) into the monitored port for signal and idler.

    ``splitter_ratios`` are the short-arm (bar) transmissions of the signal
    input, signal output, idler input and idler output couplers.
    """
    eta_long = 10.0 ** (-spec.long_arm_excess_loss_db / 10.0)
    s_in, s_out, i_in, i_out = spec.splitter_ratios
    sig = (s_in * s_out, (1 - s_in) * (1 - s_out) * eta_long)
    idl = (i_in * i_out, (1 - i_in) * (1 - i_out) * eta_long)
    return sig, idl


def splitter_penalty(p_ss: float, p_ll: float) -> float:
    total = p_ss + p_ll
    return 2.0 * math.sqrt(p_ss * p_ll) / total if total > 0 else 0.0


def effective_visibility(spec: FransonSpec, state: EntangledStateModel) -> float:
    """Middle-peak visibility expected from splitters, state and phase noise."""
    (ss, sl), (is_, il) = path_probabilities(spec)
    v = state.visibility_intrinsic * splitter_penalty(ss * is_, sl * il)
    return v * math.exp(-0.5 * spec.phase_noise_sigma**2)


def outcome_table(spec: FransonSpec, state: EntangledStateModel, phase) -> np.ndarray:
    """Joint outcome probabilities, shape ``phase.shape + (3, 3)``.

    Indexed ``[..., signal, idler]`` with 0=short, 1=long, 2=lost. Single-photon
    marginals are phase independent; the interference term added to SS/LL
    is balanced by the lost-port sectors.
    """
    phase = np.asarray(phase, dtype=float)
    (ps_s, pl_s), (ps_i, pl_i) = path_probabilities(spec)
    px_s, px_i = 1 - ps_s - pl_s, 1 - ps_i - pl_i
    p_ss, p_ll = ps_s * ps_i, pl_s * pl_i
    cross = 2.0 * math.sqrt(p_ss * p_ll) * state.visibility_intrinsic * np.cos(phase)
    w_ss = p_ss / (p_ss + p_ll) if p_ss + p_ll > 0 else 0.5
    t = np.empty(phase.shape + (3, 3))
    t[..., _S, _S] = p_ss + w_ss * cross
    t[..., _L, _L] = p_ll + (1 - w_ss) * cross
    t[..., _S, _L] = ps_s * pl_i
    t[..., _L, _S] = pl_s * ps_i
    t[..., _S, _X] = ps_s - t[..., _S, _S] - t[..., _S, _L]
    t[..., _L, _X] = pl_s - t[..., _L, _S] - t[..., _L, _L]
    t[..., _X, _S] = ps_i - t[..., _S, _S] - t[..., _L, _S]
    t[..., _X, _L] = pl_i - t[..., _S, _L] - t[..., _L, _L]
    t[..., _X, _X] = px_s * px_i + cross
    # extreme imbalance can push a compensating sector below zero
    t = np.clip(t, 0.0, None)
    return t / t.sum(axis=(-2, -1), keepdims=True)


def route_pairs(
    pairs: PairEvents,
    spec: FransonSpec,
    state: EntangledStateModel,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Emission times (ps, sorted) of signal and idler photons reaching the detectors."""
    tau = max(pairs.tau_signal_ns, pairs.tau_idler_ns)
    if spec.delta_t_ns < MIN_SEPARATION_TAUS * tau:
        raise InvalidSpecError(
            f"delta_t {spec.delta_t_ns} ns < {MIN_SEPARATION_TAUS:g} x tau ({tau} ns): "
            "coincidence peaks would overlap"
        )
    rng = np.random.default_rng(seed)
    n = len(pairs)
    if spec.phase_noise_sigma == 0:
        table = outcome_table(spec, state, spec.phase_sum).ravel()
        outcome = rng.choice(9, size=n, p=table)
    else:
        outcome = np.empty(n, dtype=np.int64)
        for start in range(0, n, _ROUTE_CHUNK):
            m = min(_ROUTE_CHUNK, n - start)
            phase = spec.phase_sum + rng.normal(0.0, spec.phase_noise_sigma, m)
            cdf = np.cumsum(outcome_table(spec, state, phase).reshape(m, 9), axis=1)
            u = rng.random(m) * cdf[:, -1]
            outcome[start:start + m] = np.minimum((u[:, None] >= cdf).sum(axis=1), 8)
    sig_path, idl_path = outcome // 3, outcome % 3
    dt = spec.delta_t_ns * 1e3
    ts = pairs.t0 + pairs.d_signal + dt * (sig_path == _L)
    ti = pairs.t0 + pairs.d_idler + dt * (idl_path == _L)
    return np.sort(ts[sig_path != _X]), np.sort(ti[idl_path != _X])


@dataclass
class FringePoint:
    phase_rad: float
    middle_raw: int
    middle_corrected: float
    side_minus: int
    side_plus: int
    middle_accidentals: float


@dataclass
class FringeScan:
    points: list[FringePoint]
    delta_t_ns: float
    meta: dict = field(default_factory=dict)

    @property
    def phases(self) -> np.ndarray:
        return np.array([p.phase_rad for p in self.points])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phase_rad", "middle_raw", "middle_corrected", "side_minus", "side_plus"])
            for p in self.points:
                w.writerow([f"{p.phase_rad:.10g}", p.middle_raw, f"{p.middle_corrected:.10g}",
                            p.side_minus, p.side_plus])

    def fit(self, corrected: bool = True) -> FitResult:
        y = self.column("middle_corrected" if corrected else "middle_raw")
        # Poisson weights come from the raw counts the corrected values derive from
        sigma = np.sqrt(np.maximum(self.column("middle_raw"), 1.0))
        return fit_sinusoid(self.phases, y, sigma=sigma)


def point_seed(base_seed: int, index: int) -> int:
    return int(base_seed) ^ int(index)


def fringe_scan(
    source: SourceSpec,
    detectors: tuple[DetectorSpec, DetectorSpec],
    spec: FransonSpec,
    phases: Sequence[float],
    duration_s: float,
    seed: int,
    state: EntangledStateModel = EntangledStateModel(),
) -> FringeScan:
    """Simulate the full chain at each phase sum and integrate the three peaks.

    Peaks are integrated over windows of width ``delta_t`` centred on
    ``-delta_t``, 0 and ``+delta_t``; the middle peak is corrected by the
    accidental estimate ``r_a r_b window T``.
    """
    phases = [float(p) for p in phases]
    if len(phases) < 6:
        raise ValueError(f"need at least 6 phase points, got {len(phases)}")
    det_s, det_i = detectors
    dt_ps = int(round(spec.delta_t_ns * 1e3))
    window = dt_ps
    duration_ps = int(round(duration_s * 1e12))
    points = []
    for k, phase in enumerate(phases):
        ss = np.random.SeedSequence(point_seed(seed, k))
        s_pairs, s_route, s_det_s, s_det_i = (int(x) for x in ss.generate_state(4))
        pairs = sample_pairs(source, duration_s, s_pairs)
        point_spec = replace(spec, phi1=phase - spec.phi2)
        ts, ti = route_pairs(pairs, point_spec, state, s_route)
        a = detect(ts, det_s, duration_ps, s_det_s, channel=0)
        b = detect(ti, det_i, duration_ps, s_det_i, channel=1)
        mid = coincidence_count(a, b, window, 0)
        minus = coincidence_count(a, b, window, -dt_ps)
        plus = coincidence_count(a, b, window, dt_ps)
        points.append(FringePoint(phase, mid.coincidences, mid.coincidences - mid.accidentals_estimate,
                                  minus.coincidences, plus.coincidences, mid.accidentals_estimate))
    return FringeScan(points, spec.delta_t_ns, meta={"duration_s": duration_s, "seed": seed})


@dataclass(frozen=True)
class Verdict:
    visibility: float
    stderr: float
    classical_violated: bool
    chsh_violated: bool
    classical_margin_sigma: float
    chsh_margin_sigma: float

    def as_dict(self) -> dict:
        return {
            "visibility": self.visibility,
            "stderr": self.stderr,
            "classical_bound": CLASSICAL_BOUND,
            "chsh_bound": CHSH_BOUND,
            "classical_violated": self.classical_violated,
            "chsh_violated": self.chsh_violated,
            "classical_margin_sigma": _finite_or_none(self.classical_margin_sigma),
            "chsh_margin_sigma": _finite_or_none(self.chsh_margin_sigma),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _finite_or_none(x):
    return x if math.isfinite(x) else None


def entanglement_verdict(visibility: float, stderr: float, n_sigma: float = 2.0) -> Verdict:
    """A bound counts as violated when V exceeds it by more than ``n_sigma`` stderr."""
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    if stderr < 0:
        raise ValueError("stderr must be non-negative")

    def margin(bound):
        diff = visibility - bound
        if stderr == 0:
            return math.copysign(math.inf, diff) if diff != 0 else 0.0
        return diff / stderr

    return Verdict(
        visibility, stderr,
        visibility - n_sigma * stderr > CLASSICAL_BOUND,
        visibility - n_sigma * stderr > CHSH_BOUND,
        margin(CLASSICAL_BOUND), margin(CHSH_BOUND),
    )
