"""Levenberg-Marquardt least squares and the resonance, correlation-peak and
fringe models built on it."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .correlation import Histogram

LAMBDA_START = 1e-3
LAMBDA_MAX = 1e16
JACOBIAN_REL_STEP = 1e-6
XTOL = 1e-8
MAX_ITER = 200
DOUBLE_EXP_MIN_SNR = 5.0
LORENTZIAN_MIN_DEPTH_SNR = 3.0


@dataclass
class FitResult:
    params: dict[str, float]
    stderr: dict[str, float]
    residual_norm: float
    iterations: int
    converged: bool
    message: str = ""
    derived: dict[str, float] = field(default_factory=dict)
    covariance: np.ndarray | None = field(default=None, repr=False)
    cost_history: list[float] = field(default_factory=list, repr=False)
    n_points: int = 0

    @property
    def dof(self) -> int:
        return max(self.n_points - len(self.params), 0)

    def as_dict(self) -> dict:
        return {
            "params": self.params,
            "stderr": self.stderr,
            "derived": self.derived,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "n_points": self.n_points,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(_jsonable(self.as_dict()), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _failed(names, message, n, iterations=0, residual_norm=math.nan, params=None) -> FitResult:
    params = params or {k: math.nan for k in names}
    return FitResult(dict(params), {k: math.nan for k in names}, residual_norm, iterations,
                     False, message, n_points=n)


def forward_jacobian(fun: Callable, p: np.ndarray, f0: np.ndarray | None = None,
                     rel_step: float = JACOBIAN_REL_STEP) -> np.ndarray:
    """Forward-difference Jacobian of ``fun`` at ``p``."""
    p = np.asarray(p, dtype=float)
    f0 = fun(p) if f0 is None else f0
    jac = np.empty((f0.size, p.size))
    for j in range(p.size):
        h = rel_step * abs(p[j]) if p[j] != 0 else rel_step
        q = p.copy()
        q[j] += h
        col = (fun(q) - f0) / (q[j] - p[j])
        if not np.any(col) and abs(p[j]) < 1.0:
            # a near-zero parameter gives a step lost in the model's rounding
            q[j] = p[j] + rel_step
            col = (fun(q) - f0) / (q[j] - p[j])
        jac[:, j] = col
    return jac


def least_squares(
    model: Callable,
    x,
    y,
    init: dict[str, float],
    sigma=None,
    absolute_sigma: bool = False,
    max_iter: int = MAX_ITER,
    xtol: float = XTOL,
    min_points: int | None = None,
) -> FitResult:
    """Weighted least squares fit of ``model(x, *params)`` to ``y``.

    Parameters are given and returned by name, in the order of ``init``.
    Uncertainties come from the inverse normal matrix; unless
    ``absolute_sigma`` is set they are scaled by the reduced chi-square, as
    in ``scipy.optimize.curve_fit``.

    A singular normal matrix gives a result with ``converged=False`` rather
    than an exception.
    """
    names = list(init)
    k = len(names)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    sigma = np.ones(n) if sigma is None else np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(sigma))):
        raise ValueError("data contain NaN or infinite values")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    need = max(8, 2 * k) if min_points is None else min_points
    if n < need:
        raise ValueError(f"{n} data points, need at least {need} for {k} parameters")

    def resid(p):
        return (y - np.asarray(model(x, *p), dtype=float)) / sigma

    def model_w(p):
        return np.asarray(model(x, *p), dtype=float) / sigma

    p = np.array([float(init[nm]) for nm in names])
    r = resid(p)
    if not np.all(np.isfinite(r)):
        return _failed(names, "model is not finite at the initial parameters", n)
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = LAMBDA_START
    converged = False
    message = "maximum iterations reached"
    it = 0
    while it < max_iter:
        it += 1
        f0 = model_w(p)
        jac = forward_jacobian(model_w, p, f0)
        a = jac.T @ jac
        g = jac.T @ r
        if not np.all(np.isfinite(a)):
            return _failed(names, "non-finite Jacobian", n, it, math.sqrt(2 * cost), dict(zip(names, p)))
        if _is_singular(a):
            res = _failed(names, "singular normal matrix", n, it, math.sqrt(2 * cost), dict(zip(names, p)))
            res.cost_history = history
            return res
        if not np.any(g):
            converged, message = True, "zero gradient"
            break
        diag = np.diag(a).copy()
        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            r_new = resid(trial)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if cost_new < cost:
                accepted = True
                lam = max(lam / 10.0, 1e-15)
                p, r, cost = trial, r_new, cost_new
                history.append(cost)
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at machine precision
            converged, message = True, "no further decrease possible"
            break
        if cost == 0.0 or np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol):
            converged, message = True, "relative step below tolerance"
            break

    f0 = model_w(p)
    jac = forward_jacobian(model_w, p, f0)
    a = jac.T @ jac
    if _is_singular(a):
        res = _failed(names, "singular normal matrix at solution", n, it, math.sqrt(2 * cost),
                      dict(zip(names, p)))
        res.cost_history = history
        return res
    cov = np.linalg.inv(a)
    if not absolute_sigma:
        dof = n - k
        cov = cov * (2.0 * cost / dof if dof > 0 else math.nan)
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult(
        dict(zip(names, p.tolist())),
        dict(zip(names, err.tolist())),
        math.sqrt(2.0 * cost),
        it,
        converged,
        message,
        covariance=cov,
        cost_history=history,
        n_points=n,
    )


def _is_singular(a: np.ndarray) -> bool:
    d = np.sqrt(np.abs(np.diag(a)))
    if np.any(d == 0):
        return True
    scaled = a / np.outer(d, d)
    return np.linalg.cond(scaled) > 1e13


# --- resonance linewidth -------------------------------------------------------

def lorentzian_dip(x, center, fwhm, depth, baseline):
    half = 0.5 * fwhm
    return baseline - depth * half**2 / ((x - center) ** 2 + half**2)


def fit_lorentzian(scan) -> FitResult:
    """Fit a Lorentzian dip to a transmission scan.

    ``scan`` is a :class:`~biphoton.resonator.ScanTable` (frequencies in THz).
    The returned ``center`` is in THz and ``fwhm`` in MHz; ``derived`` holds
    the loaded Q.
    """
    freq = np.asarray(scan.freq_thz, dtype=float)
    trans = np.asarray(scan.transmission, dtype=float)
    names = ["center", "fwhm", "depth", "baseline"]
    if freq.size < 8:
        raise ValueError("scan too short to fit")
    mid = 0.5 * (freq[0] + freq[-1])
    x = (freq - mid) * 1e6  # MHz detuning
    noise = float(np.median(np.abs(np.diff(trans))) / (0.6745 * math.sqrt(2.0)))
    k = max(5, trans.size // 50)
    smooth = np.convolve(trans, np.ones(k) / k, mode="same")
    edge = max(2, trans.size // 10)
    baseline = float(np.median(np.concatenate((trans[:edge], trans[-edge:]))))
    inner = slice(k // 2, trans.size - k // 2) if trans.size > k else slice(None)
    imin = int(np.argmin(smooth[inner])) + (inner.start or 0)
    depth = baseline - float(smooth[imin])
    if depth <= LORENTZIAN_MIN_DEPTH_SNR * noise or depth <= 0:
        return _failed(names, f"no dip detected (depth {depth:.3g}, noise {noise:.3g})", freq.size)
    below = smooth < baseline - 0.5 * depth
    left = imin
    while left > 0 and below[left - 1]:
        left -= 1
    right = imin
    while right < below.size - 1 and below[right + 1]:
        right += 1
    fwhm0 = max(x[right] - x[left], 2 * abs(x[1] - x[0]))
    init = {"center": x[imin], "fwhm": fwhm0, "depth": depth, "baseline": baseline}
    sigma = noise if noise > 0 else 1.0
    res = least_squares(lorentzian_dip, x, trans, init, sigma=sigma)
    if not res.converged:
        return res
    p, e = res.params, res.stderr
    res.params = {**p, "center": mid + p["center"] * 1e-6, "fwhm": abs(p["fwhm"])}
    res.stderr = {**e, "center": e["center"] * 1e-6}
    nu = res.params["center"]
    q = nu * 1e6 / res.params["fwhm"]
    res.derived = {"q_loaded": q, "q_loaded_stderr": q * e["fwhm"] / res.params["fwhm"]}
    return res


# --- biphoton correlation peak -----------------------------------------------------

def double_exponential(x, tau, amplitude, background, center):
    return background + amplitude * np.exp(-np.abs(x - center) / tau)


def fit_double_exponential(h: Histogram) -> FitResult:
    """Fit ``background + amplitude * exp(-|t - center| / tau)`` to a histogram.

    Fits the normalized values when present, else the counts; ``tau`` and
    ``center`` are in ns. ``derived`` carries the bandwidth
    ``1 / (2 pi tau)`` in MHz with its propagated error.
    """
    names = ["tau", "amplitude", "background", "center"]
    counts = np.asarray(h.counts, dtype=float)
    raw = counts + (h.background or 0.0)
    x = h.delays_ps * 1e-3
    if h.g is not None:
        y = np.asarray(h.g, dtype=float)
        scale = 1.0 / h.accidentals_per_bin
    else:
        y, scale = counts, 1.0
    sigma = np.sqrt(np.maximum(raw, 1.0)) * scale

    n = y.size
    smooth = np.convolve(y, np.ones(5) / 5, mode="same") if n >= 5 else y
    edge = max(1, n // 8)
    bg0 = float(np.median(np.concatenate((y[:edge], y[-edge:]))))
    ip = int(np.argmax(smooth))
    lo, hi = max(ip - 2, 0), min(ip + 3, n)
    ipk = lo + int(np.argmax(y[lo:hi]))
    raw_bg = float(np.median(np.concatenate((raw[:edge], raw[-edge:]))))
    snr = (raw[ipk] - raw_bg) / math.sqrt(max(raw[ipk], 1.0))
    if not snr > DOUBLE_EXP_MIN_SNR:
        return _failed(names, f"peak SNR {snr:.2f} below {DOUBLE_EXP_MIN_SNR}", n)
    amp0 = float(smooth[ip]) - bg0
    half = bg0 + 0.5 * amp0
    left = ip
    while left > 0 and smooth[left] > half:
        left -= 1
    right = ip
    while right < n - 1 and smooth[right] > half:
        right += 1
    hwhm = max(0.5 * (x[right] - x[left]), x[1] - x[0])
    init = {"tau": hwhm / math.log(2.0), "amplitude": float(y[ipk]) - bg0,
            "background": bg0, "center": float(x[ipk])}
    res = least_squares(double_exponential, x, y, init, sigma=sigma)
    if not res.converged:
        return res
    tau, tau_err = res.params["tau"], res.stderr["tau"]
    if not tau > 0:
        res.converged = False
        res.message = "fitted tau is not positive"
        return res
    bw = 1e3 / (2.0 * math.pi * tau)
    res.derived = {"bandwidth_mhz": bw, "bandwidth_mhz_stderr": bw * tau_err / tau, "peak_snr": snr}
    return res


# --- two-photon interference fringe ---------------------------------------------------

def _fringe(phi, offset, ac, as_):
    return offset + ac * np.cos(phi) - as_ * np.sin(phi)


def sinusoid(phi, offset, visibility, phase0):
    return offset * (1.0 + visibility * np.cos(phi + phase0))


def fit_sinusoid(phases, counts, sigma=None) -> FitResult:
    """Fit ``offset * (1 + V cos(phi + phase0))`` to a fringe.

    The model is solved in Cartesian amplitudes ``(ac, as) = V offset
    (cos phase0, sin phase0)``, which is regular at V = 0 and V = 1. The
    reported visibility is clipped to [0, 1]; the unclipped ratio is kept
    in ``derived``.
    """
    phi = np.asarray(phases, dtype=float)
    y = np.asarray(counts, dtype=float)
    if phi.size < 6:
        raise ValueError(f"need at least 6 phase points, got {phi.size}")
    if sigma is None:
        sigma = np.sqrt(np.maximum(np.abs(y), 1.0))
    design = np.column_stack((np.ones_like(phi), np.cos(phi), -np.sin(phi)))
    (a, b, c), *_ = np.linalg.lstsq(design, y, rcond=None)
    res = least_squares(_fringe, phi, y, {"offset": a, "ac": b, "as": c}, sigma=sigma, min_points=6)
    ymax, ymin = float(y.max()), float(y.min())
    raw_vis = (ymax - ymin) / (ymax + ymin) if ymax + ymin > 0 else 0.0
    if not res.converged:
        out = _failed(["offset", "amplitude", "phase0", "visibility"], res.message, phi.size,
                      res.iterations, res.residual_norm)
        out.derived = {"raw_visibility": raw_vis}
        return out
    off, ac, as_ = res.params["offset"], res.params["ac"], res.params["as"]
    if not off > 0:
        return _failed(["offset", "amplitude", "phase0", "visibility"],
                       "non-positive fringe offset", phi.size, res.iterations, res.residual_norm)
    cov = res.covariance
    amp = math.hypot(ac, as_)
    if amp > 0:
        g_amp = np.array([0.0, ac / amp, as_ / amp])
    else:
        g_amp = np.array([0.0, math.sqrt(0.5), math.sqrt(0.5)])
    amp_err = math.sqrt(max(float(g_amp @ cov @ g_amp), 0.0))
    vis_raw = amp / off
    g_vis = (g_amp - vis_raw * np.array([1.0, 0.0, 0.0])) / off
    vis_err = math.sqrt(max(float(g_vis @ cov @ g_vis), 0.0))
    vis = min(max(vis_raw, 0.0), 1.0)
    phase0 = math.atan2(as_, ac)
    fitted = _fringe(phi, off, ac, as_)
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return FitResult(
        params={"offset": off, "amplitude": amp, "phase0": phase0, "visibility": vis},
        stderr={
            "offset": res.stderr["offset"],
            "amplitude": amp_err,
            "phase0": _phase_err(ac, as_, cov[1:, 1:]),
            "visibility": vis_err,
        },
        residual_norm=res.residual_norm,
        iterations=res.iterations,
        converged=True,
        message=res.message,
        derived={"raw_visibility": raw_vis, "visibility_unclipped": vis_raw,
                 "r_squared": 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan},
        covariance=res.covariance,
        cost_history=res.cost_history,
        n_points=res.n_points,
    )


def _phase_err(x, y, cov):
    r2 = x * x + y * y
    if r2 <= 0:
        return math.pi
    grad = np.array([-y, x]) / r2
    return math.sqrt(max(float(grad @ cov @ grad), 0.0))


def fit_power_law(x, y, sigma_y=None) -> FitResult:
    """Straight-line fit of log y against log x; ``slope`` is the exponent."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a slope")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    s = None if sigma_y is None else np.asarray(sigma_y, dtype=float) / y
    b, a = np.polyfit(lx, ly, 1)
    return least_squares(lambda t, slope, intercept: slope * t + intercept, lx, ly,
                         {"slope": b, "intercept": a}, sigma=s, min_points=2)
