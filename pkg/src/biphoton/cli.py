"""Command-line front end: ``biphoton <command> ...``.

Every command reads a preset or JSON config, derives per-stage seeds from a
single run seed and writes plot-ready CSV plus JSON under ``--out``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 fit did not converge.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import config as cfg
from .correlation import (
    DEFAULT_BIN_PS,
    DEFAULT_SPAN_PS,
    autocorrelate_hbt,
    background_correct,
    coincidence_count,
    cross_correlate,
    estimate_peak_hwhm,
    g2_at_zero,
    normalize,
)
from .detection import detect
from .fitting import FitResult, _jsonable, fit_double_exponential, fit_lorentzian, fit_power_law
from .franson import effective_visibility, entanglement_verdict, fringe_scan, route_pairs
from .pair_source import (
    PAPER_SPECTRAL_BRIGHTNESS_QUOTED,
    modal_brightness,
    multipair_fraction,
    pair_rate,
    power_for_occupancy,
    sample_pairs,
    spectral_brightness,
    tau_to_bandwidth_mhz,
)
from .resonator import InvalidSpecError, _line, scan_around, thermal_shift, thermal_shift_thz
from .tagstream import TagStream, TagStreamError, read_bpts, write_bpts

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 2, 3, 4

# coincidence window for rates and CAR, in units of tau
RATE_WINDOW_TAUS = 10.0
DEFAULT_PHASE_POINTS = 12
REPORT_INPUTS = ("scan_fit.json", "manifest.json", "histogram.json", "slope_fit.json",
                 "franson.json", "tuning.json")


class FitFailed(RuntimeError):
    pass


class DataError(RuntimeError):
    pass


# --- output helpers --------------------------------------------------------------

def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_dir(args, conf: cfg.ExperimentConfig | None) -> Path:
    out = Path(args.out if args.out else (conf.run.output_dir if conf else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> cfg.ExperimentConfig:
    if args.config and args.preset:
        raise cfg.ConfigError("give either --config or --preset, not both")
    if args.config:
        conf = cfg.load(args.config)
    elif args.preset:
        conf = cfg.load_preset(args.preset)
    else:
        raise cfg.ConfigError("a --config file or --preset name is required")
    conf = conf.with_seed(cfg.effective_seed(conf.run.seed, args.seed))
    if getattr(args, "duration", None) is not None:
        conf = conf.with_duration(args.duration)
    return conf


def _require_fit(fit: FitResult, what: str) -> None:
    if not fit.converged:
        raise FitFailed(f"{what} fit failed: {fit.message}")


# --- scan -----------------------------------------------------------------------

def cmd_scan(args) -> int:
    conf = _load_config(args)
    out = _out_dir(args, conf)
    opts = conf.section("scan")
    mode = args.mode_index if args.mode_index is not None else int(opts.get("mode_index", conf.signal_mode))
    noise = args.noise if args.noise is not None else float(opts.get("noise_rms", 0.0))
    scan = scan_around(conf.resonator, mode, float(opts.get("span_fwhm", 10.0)),
                       int(opts.get("points", 2001)), noise,
                       cfg.stage_seed(conf.run.seed, cfg.STAGE_SCAN))
    scan.to_csv(out / "scan.csv")
    fit = fit_lorentzian(scan)
    line = _line(conf.resonator, mode)
    doc = fit.as_dict()
    doc["model"] = {"mode_index": mode, "center_thz": line.center_frequency_thz,
                    "fwhm_mhz": line.fwhm_mhz, "noise_rms": noise}
    write_json(out / "scan_fit.json", doc)
    _write_config(out, conf)
    _require_fit(fit, "Lorentzian")
    print(f"scan: fwhm {fit.params['fwhm']:.3f} MHz (model {line.fwhm_mhz:.3f} MHz)")
    return EXIT_OK


# --- simulate ---------------------------------------------------------------------

def simulate_streams(conf: cfg.ExperimentConfig) -> tuple[TagStream, TagStream, dict]:
    """Pairs, optional interferometer routing, and detection on both channels."""
    seed = conf.run.seed
    pairs = sample_pairs(conf.source, conf.run.duration_s, cfg.stage_seed(seed, cfg.STAGE_PAIRS))
    if conf.franson is not None:
        ts, ti = route_pairs(pairs, conf.franson, conf.state, cfg.stage_seed(seed, cfg.STAGE_ROUTE))
    else:
        ts, ti = pairs.signal_times, pairs.idler_times
    duration_ps = int(round(conf.run.duration_s * 1e12))
    a = detect(ts, conf.detector_signal, duration_ps, cfg.stage_seed(seed, cfg.STAGE_DETECT_SIGNAL), 0)
    b = detect(ti, conf.detector_idler, duration_ps, cfg.stage_seed(seed, cfg.STAGE_DETECT_IDLER), 1)
    info = {"pairs_generated": len(pairs), "pair_rate_per_s": pair_rate(conf.source),
            "tags_signal": len(a), "tags_idler": len(b)}
    return a, b, info


def cmd_simulate(args) -> int:
    conf = _load_config(args)
    if args.mode is not None:
        conf = conf.with_source(mode=args.mode)
    if args.power is not None:
        conf = conf.with_source(pump_power_mw=args.power)
    out = _out_dir(args, conf)
    a, b, info = simulate_streams(conf)
    write_bpts(a, out / "signal.bpts")
    write_bpts(b, out / "idler.bpts")
    manifest = {
        "command": "simulate",
        "version": __version__,
        "seed": conf.run.seed,
        "config": conf.resolved(),
        **info,
        "files": {name: {"sha256": _sha256(out / name), "bytes": (out / name).stat().st_size}
                  for name in ("signal.bpts", "idler.bpts")},
    }
    write_json(out / "manifest.json", manifest)
    _write_config(out, conf)
    print(f"simulate: {info['pairs_generated']} pairs, {len(a)} signal / {len(b)} idler tags")
    return EXIT_OK


# --- correlate --------------------------------------------------------------------

def _read_channels(paths: list[str]) -> tuple[np.ndarray, np.ndarray, int, float]:
    streams = []
    for p in paths:
        try:
            streams.append(read_bpts(p))
        except FileNotFoundError:
            raise cfg.ConfigError(f"tag file not found: {p}") from None
    ticks = {s.tick_ps for s in streams}
    if len(ticks) > 1:
        raise TagStreamError(f"tick mismatch between tag files: {sorted(ticks)} ps")
    duration_s = max(s.duration_s for s in streams)
    if len(streams) == 1:
        s = streams[0]
        return s.channel_times(0), s.channel_times(1), s.tick_ps, duration_s
    return streams[0].times.astype(np.int64), streams[1].times.astype(np.int64), streams[0].tick_ps, duration_s


def cmd_correlate(args) -> int:
    out = _out_dir(args, None)
    if args.hbt is not None:
        if len(args.files) != 1:
            raise cfg.ConfigError("--hbt takes exactly one tag file")
        try:
            s = read_bpts(args.files[0])
        except FileNotFoundError:
            raise cfg.ConfigError(f"tag file not found: {args.files[0]}") from None
        seed = cfg.stage_seed(cfg.effective_seed(0, args.seed), cfg.STAGE_HBT)
        h = autocorrelate_hbt(s.times.astype(np.int64), args.hbt, args.bin, args.span, seed, s.duration_s)
        h.meta.update({"mode": "hbt", "splitter_ratio": args.hbt,
                       "g2_zero": g2_at_zero(h), "tags": len(s)})
        h.to_csv(out / "histogram.csv")
        h.write_json(out / "histogram.json")
        print(f"correlate: g2(0) = {h.meta['g2_zero']:.4f} from {len(s)} tags")
        return EXIT_OK

    if len(args.files) not in (1, 2):
        raise cfg.ConfigError("correlate takes one two-channel file or two single-channel files")
    ta, tb, tick, duration_s = _read_channels(args.files)
    if args.bin % tick:
        print(f"warning: bin {args.bin} ps is not a multiple of the {tick} ps tick", file=sys.stderr)
    h = cross_correlate(ta, tb, args.bin, args.span, duration_s, args.offset)
    if args.normalize:
        h = normalize(h)
    if args.background_correct:
        h = background_correct(h)
    center, hwhm = estimate_peak_hwhm(h)
    meta = {"mode": "cross", "tick_ps": tick, "normalized": bool(args.normalize),
            "background_corrected": bool(args.background_correct), "peak_delay_ps": center}
    fit = None
    if args.fit:
        fit = fit_double_exponential(h)
        meta["fit"] = fit.as_dict()
        window = args.window
        if window is None and fit.converged:
            window = int(round(RATE_WINDOW_TAUS * fit.params["tau"] * 1e3))
    else:
        window = args.window
    if window is None:
        window = int(round(4 * hwhm))
    coinc = coincidence_count(ta, tb, max(int(window), 1), int(round(center)), duration_s)
    meta["car"] = coinc.as_dict()
    h.meta.update(meta)
    h.to_csv(out / "histogram.csv")
    h.write_json(out / "histogram.json")
    if fit is not None:
        _require_fit(fit, "double-exponential")
        print(f"correlate: tau {fit.params['tau']:.4f} ns, bandwidth "
              f"{fit.derived['bandwidth_mhz']:.2f} MHz, CAR {coinc.car:.1f}")
    else:
        print(f"correlate: {int(np.sum(h.counts))} counts in histogram, CAR {coinc.car:.1f}")
    return EXIT_OK


# --- powerscan -------------------------------------------------------------------

def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise cfg.ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def run_powerscan(conf: cfg.ExperimentConfig, powers: Sequence[float]) -> dict:
    """Singles and coincidences versus pump power, with dark reference and slopes.

    Each point integrates for ``duration_s * (P_max / P)**2`` so that every
    point sees about the same number of pairs. A zero-power run gives the
    dark singles subtracted before the slope fit; coincidences are corrected
    by the accidental estimate.
    """
    powers = [float(p) for p in powers]
    if len(powers) < 2:
        raise cfg.ConfigError("a power scan needs at least two powers (slope undefined)")
    if min(powers) <= 0:
        raise cfg.ConfigError("powers must be positive")
    if len(set(powers)) < 2:
        raise cfg.ConfigError("a power scan needs at least two distinct powers")
    p_max = max(powers)
    window = int(round(RATE_WINDOW_TAUS * conf.source.tau_ns * 1e3))
    eta_s, eta_i = conf.detector_signal.transmission, conf.detector_idler.transmission
    seed = conf.run.seed

    def point(k: int, power: float, duration_s: float) -> dict:
        src = conf.with_source(pump_power_mw=power).source
        duration_ps = int(round(duration_s * 1e12))
        pairs = sample_pairs(src, duration_s, cfg.stage_seed(seed, cfg.STAGE_PAIRS, k))
        a = detect(pairs.signal_times, conf.detector_signal, duration_ps,
                   cfg.stage_seed(seed, cfg.STAGE_DETECT_SIGNAL, k), 0)
        b = detect(pairs.idler_times, conf.detector_idler, duration_ps,
                   cfg.stage_seed(seed, cfg.STAGE_DETECT_IDLER, k), 1)
        c = coincidence_count(a, b, window, 0)
        return {"power_mw": power, "duration_s": duration_s, "singles_signal": len(a),
                "singles_idler": len(b), "coincidences": c.coincidences,
                "accidentals": c.accidentals_estimate}

    longest = conf.run.duration_s * (p_max / min(powers)) ** 2
    dark = point(0, 0.0, longest)
    dark_s = dark["singles_signal"] / longest
    dark_i = dark["singles_idler"] / longest
    rows = []
    for k, p in enumerate(powers, start=1):
        r = point(k, p, conf.run.duration_s * (p_max / p) ** 2)
        t = r["duration_s"]
        r["singles_signal_net_per_s"] = r["singles_signal"] / t - dark_s
        r["singles_idler_net_per_s"] = r["singles_idler"] / t - dark_i
        r["coincidences_net_per_s"] = (r["coincidences"] - r["accidentals"]) / t
        r["pair_rate_inferred_per_s"] = r["coincidences_net_per_s"] / (eta_s * eta_i)
        rows.append(r)

    x = np.array(powers)
    fits = {}
    for key, raw, ref in (("singles_signal", "singles_signal", dark["singles_signal"] / longest ** 2),
                          ("singles_idler", "singles_idler", dark["singles_idler"] / longest ** 2),
                          ("coincidences", "coincidences", 0.0)):
        y = np.array([r[f"{key}_net_per_s"] for r in rows])
        var = np.array([r[raw] / r["duration_s"] ** 2 for r in rows]) + ref
        if np.any(y <= 0):
            fits[key] = FitResult({"slope": math.nan, "intercept": math.nan},
                                  {"slope": math.nan, "intercept": math.nan}, math.nan, 0, False,
                                  "non-positive net rate", n_points=len(y))
        else:
            fits[key] = fit_power_law(x, y, np.sqrt(var))
    top = max(rows, key=lambda r: r["power_mw"])
    net_s, net_i, net_c = (top["singles_signal_net_per_s"], top["singles_idler_net_per_s"],
                           top["coincidences_net_per_s"])
    return {
        "rows": rows,
        "dark_reference": {"duration_s": longest, "singles_signal_per_s": dark_s,
                           "singles_idler_per_s": dark_i},
        "fits": fits,
        "window_ps": window,
        "transmission": {"signal": eta_s, "idler": eta_i},
        "pair_rate_inferred_per_s": top["pair_rate_inferred_per_s"],
        "pair_rate_loss_independent_per_s": net_s * net_i / net_c if net_c > 0 else math.nan,
        "pair_rate_model_per_s": pair_rate(conf.with_source(pump_power_mw=p_max).source),
        "brightness_inferred_per_s_mw2": top["pair_rate_inferred_per_s"] / p_max ** 2,
        "max_power_mw": p_max,
    }


def cmd_powerscan(args) -> int:
    conf = _load_config(args)
    out = _out_dir(args, conf)
    if args.powers is not None:
        powers = _parse_floats(args.powers, "--powers")
    else:
        powers = [float(p) for p in conf.section("powerscan").get("powers_mw", [])]
    result = run_powerscan(conf, powers)
    cols = ["power_mw", "duration_s", "singles_signal", "singles_idler", "coincidences", "accidentals",
            "singles_signal_net_per_s", "singles_idler_net_per_s", "coincidences_net_per_s",
            "pair_rate_inferred_per_s"]
    write_rows(out / "rates.csv", cols, ([_fmt(r[c]) for c in cols] for r in result["rows"]))
    doc = {k: v for k, v in result.items() if k not in ("rows", "fits")}
    doc["fits"] = {k: f.as_dict() for k, f in result["fits"].items()}
    write_json(out / "slope_fit.json", doc)
    _write_config(out, conf)
    for name, f in result["fits"].items():
        _require_fit(f, f"{name} power-law")
    slopes = ", ".join(f"{k} {f.params['slope']:.3f}" for k, f in result["fits"].items())
    print(f"powerscan: slopes {slopes}; pair rate at {result['max_power_mw']:g} mW "
          f"{result['pair_rate_inferred_per_s']:.3g} /s")
    return EXIT_OK


# --- franson -------------------------------------------------------------------

def cmd_franson(args) -> int:
    conf = _load_config(args)
    if conf.franson is None:
        raise cfg.ConfigError("configuration has no 'franson' section")
    out = _out_dir(args, conf)
    opts = conf.section("fringe")
    if args.phases is not None:
        phases = _parse_floats(args.phases, "--phases")
    elif "phases_rad" in opts:
        phases = [float(p) for p in opts["phases_rad"]]
    else:
        n = int(opts.get("points", DEFAULT_PHASE_POINTS))
        phases = (2 * np.pi * np.arange(n) / n).tolist()
    if len(phases) < 6:
        raise cfg.ConfigError(f"need at least 6 phase points, got {len(phases)}")
    seed = cfg.stage_seed(conf.run.seed, cfg.STAGE_FRINGE)
    scan = fringe_scan(conf.source, conf.detectors, conf.franson, phases, conf.run.duration_s,
                       seed, conf.state)
    scan.to_csv(out / "fringe.csv")
    fit = scan.fit(corrected=True)
    doc = {"fit": fit.as_dict(), "delta_t_ns": conf.franson.delta_t_ns,
           "model_visibility": effective_visibility(conf.franson, conf.state),
           "side_peaks": _side_peak_stats(scan)}
    if fit.converged:
        verdict = entanglement_verdict(fit.params["visibility"], fit.stderr["visibility"])
        doc["verdict"] = verdict.as_dict()
    write_json(out / "franson.json", doc)
    _write_config(out, conf)
    _require_fit(fit, "fringe")
    v = doc["verdict"]
    print(f"franson: V = {fit.params['visibility']:.4f} +/- {fit.stderr['visibility']:.4f}; "
          f"classical violated {v['classical_violated']}, CHSH violated {v['chsh_violated']}")
    return EXIT_OK


def _side_peak_stats(scan) -> dict:
    stats = {}
    for name in ("side_minus", "side_plus"):
        y = scan.column(name)
        mean = float(y.mean())
        z = (y - mean) / math.sqrt(max(mean, 1.0))
        stats[name] = {"mean": mean, "max_abs_z": float(np.max(np.abs(z))),
                       "chi2": float(np.sum(z**2)), "dof": int(y.size - 1)}
    return stats


# --- tune ------------------------------------------------------------------------

def cmd_tune(args) -> int:
    conf = _load_config(args)
    out = _out_dir(args, conf)
    opts = conf.section("tune")
    max_dk = float(opts.get("max_delta_k", 14.0))
    step = float(opts.get("step_k", 0.05))
    if not (step > 0 and max_dk > 0):
        raise cfg.ConfigError("tune: max_delta_k and step_k must be positive")
    n = int(math.floor(max_dk / step + 1e-9)) + 1
    temps = step * np.arange(n)
    sig = _line(conf.resonator, conf.signal_mode)
    idl = _line(conf.resonator, -conf.signal_mode)
    rows = []
    for dk in temps.tolist():
        dnu = thermal_shift_thz(conf.resonator, dk)
        rows.append([_fmt(dk), _fmt(conf.resonator.base_temperature_c + dk), _fmt(thermal_shift(conf.resonator, dk)),
                     _fmt(dnu * 1e3), _fmt(sig.wavelength_nm + thermal_shift(conf.resonator, dk) * 1e-3),
                     _fmt(idl.wavelength_nm + thermal_shift(conf.resonator, dk) * 1e-3)])
    write_rows(out / "tuning.csv", ["delta_t_k", "temperature_c", "shift_pm", "shift_ghz",
                                    "signal_nm", "idler_nm"], rows)
    step_mhz = abs(thermal_shift_thz(conf.resonator, step)) * 1e6
    doc = {
        "coefficient_pm_per_k": conf.resonator.thermo_optic_pm_per_k,
        "max_delta_k": max_dk,
        "total_shift_pm": thermal_shift(conf.resonator, max_dk),
        "total_shift_ghz": abs(thermal_shift_thz(conf.resonator, max_dk)) * 1e3,
        "step_k": step,
        "step_shift_pm": thermal_shift(conf.resonator, step),
        "step_shift_mhz": step_mhz,
        "signal_linewidth_mhz": sig.fwhm_mhz,
    }
    write_json(out / "tuning.json", doc)
    _write_config(out, conf)
    print(f"tune: {max_dk:g} K -> {doc['total_shift_pm']:.1f} pm; {step:g} K step -> {step_mhz:.0f} MHz")
    return EXIT_OK


# --- report --------------------------------------------------------------------

def build_report(run_dir: Path) -> dict:
    found = {name: json.loads((run_dir / name).read_text()) for name in REPORT_INPUTS
             if (run_dir / name).is_file()}
    if not found:
        raise cfg.ConfigError(f"no run artifacts in {run_dir} (expected one of {', '.join(REPORT_INPUTS)})")
    conf = None
    if (run_dir / "config.json").is_file():
        conf = cfg.from_dict(json.loads((run_dir / "config.json").read_text()))
    report: dict = {"inputs": sorted(found)}

    bandwidth = None
    hist = found.get("histogram.json", {})
    fit = hist.get("fit")
    if fit and fit.get("converged"):
        bandwidth = fit["derived"]["bandwidth_mhz"]
        report["bandwidth_mhz"] = {"value": bandwidth, "source": "correlation fit"}
    elif conf is not None:
        bandwidth = tau_to_bandwidth_mhz(conf.source.tau_ns)
        report["bandwidth_mhz"] = {"value": bandwidth, "source": "configuration"}
    if "car" in hist:
        report["car"] = hist["car"]
    if "g2_zero" in hist:
        report["g2_zero"] = hist["g2_zero"]

    brightness, b_source = None, None
    ps = found.get("slope_fit.json")
    if ps is not None:
        brightness, b_source = ps["brightness_inferred_per_s_mw2"], "power scan"
        report["power_scan"] = {"slopes": {k: v["params"]["slope"] for k, v in ps["fits"].items()},
                                "pair_rate_inferred_per_s": ps["pair_rate_inferred_per_s"],
                                "max_power_mw": ps["max_power_mw"]}
    elif conf is not None:
        brightness, b_source = pair_rate(conf.with_source(pump_power_mw=1.0).source), "configuration"

    if brightness is not None and bandwidth is not None:
        mb = modal_brightness(brightness, bandwidth)
        sb = spectral_brightness(brightness, bandwidth)
        report["brightness"] = {
            "pairs_per_s_mw2": brightness,
            "source": b_source,
            "modal_brightness_per_mw2": mb,
            "spectral_brightness_per_s_mw2_mhz": sb,
            "spectral_brightness_quoted": PAPER_SPECTRAL_BRIGHTNESS_QUOTED,
            "spectral_brightness_ratio_quoted_to_computed": PAPER_SPECTRAL_BRIGHTNESS_QUOTED / sb,
            "power_for_0p1_pairs_per_mode_mw": power_for_occupancy(brightness, bandwidth, 0.1),
            "note": ("spectral brightness is computed as brightness / bandwidth; the quoted "
                     f"{PAPER_SPECTRAL_BRIGHTNESS_QUOTED:,.0f} s^-1 mW^-2 MHz^-1 is about "
                     f"{PAPER_SPECTRAL_BRIGHTNESS_QUOTED / sb:.1f}x larger than this quotient"),
        }
        if conf is not None:
            p01 = power_for_occupancy(brightness, bandwidth, 0.1)
            src = conf.with_source(pump_power_mw=p01).source
            report["brightness"]["multipair_fraction_at_0p1"] = multipair_fraction(src, conditional=True)

    if "scan_fit.json" in found:
        s = found["scan_fit.json"]
        report["scan"] = {"fwhm_mhz": s["params"]["fwhm"], "model_fwhm_mhz": s["model"]["fwhm_mhz"],
                          "converged": s["converged"]}
    if "franson.json" in found:
        f = found["franson.json"]
        report["franson"] = {"visibility": f["fit"]["params"].get("visibility"),
                             "stderr": f["fit"]["stderr"].get("visibility"),
                             "verdict": f.get("verdict")}
    if "tuning.json" in found:
        report["tuning"] = found["tuning.json"]
    if "manifest.json" in found:
        m = found["manifest.json"]
        report["simulation"] = {k: m[k] for k in ("pairs_generated", "tags_signal", "tags_idler", "seed")
                                if k in m}
    return report


def _report_markdown(rep: dict) -> str:
    lines = ["# Run report", ""]
    if "bandwidth_mhz" in rep:
        b = rep["bandwidth_mhz"]
        lines.append(f"- Bandwidth: {b['value']:.2f} MHz ({b['source']})")
    if "brightness" in rep:
        b = rep["brightness"]
        lines += [
            f"- Brightness: {b['pairs_per_s_mw2']:.4g} pairs s^-1 mW^-2 ({b['source']})",
            f"- Modal brightness: {b['modal_brightness_per_mw2']:.4g} pairs per mode per mW^2",
            f"- Spectral brightness: {b['spectral_brightness_per_s_mw2_mhz']:.4g} s^-1 mW^-2 MHz^-1",
            f"- Pump power for 0.1 pairs/mode: {b['power_for_0p1_pairs_per_mode_mw']:.3f} mW",
            f"- Note: {b['note']}",
        ]
    if "car" in rep:
        c = rep["car"]
        lines.append(f"- CAR: {c['car']:.2f} ({c['coincidences']} coincidences, "
                     f"{c['accidentals_estimate']:.1f} accidentals, window {c['window_ps']} ps)")
    if "g2_zero" in rep:
        lines.append(f"- g2(0): {rep['g2_zero']:.4f}")
    if "power_scan" in rep:
        p = rep["power_scan"]
        slopes = ", ".join(f"{k} {v:.3f}" for k, v in p["slopes"].items())
        lines.append(f"- Power-law slopes: {slopes}")
        lines.append(f"- Inferred pair rate at {p['max_power_mw']:g} mW: {p['pair_rate_inferred_per_s']:.4g} s^-1")
    if "scan" in rep:
        s = rep["scan"]
        lines.append(f"- Resonance FWHM: {s['fwhm_mhz']:.3f} MHz (model {s['model_fwhm_mhz']:.3f} MHz)")
    if "franson" in rep and rep["franson"]["visibility"] is not None:
        f = rep["franson"]
        lines.append(f"- Fringe visibility: {f['visibility']:.4f} +/- {f['stderr']:.4f}")
        if f.get("verdict"):
            v = f["verdict"]
            lines.append(f"- Classical bound violated: {v['classical_violated']}; "
                         f"CHSH bound violated: {v['chsh_violated']}")
    if "tuning" in rep:
        t = rep["tuning"]
        lines.append(f"- Thermal tuning: {t['total_shift_pm']:.1f} pm over {t['max_delta_k']:g} K; "
                     f"{t['step_shift_mhz']:.0f} MHz per {t['step_k']:g} K step")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise cfg.ConfigError(f"run directory not found: {run_dir}")
    rep = build_report(run_dir)
    write_json(run_dir / "report.json", rep)
    (run_dir / "report.md").write_text(_report_markdown(rep))
    print(f"report: wrote {run_dir / 'report.json'}")
    return EXIT_OK


def _write_config(out: Path, conf: cfg.ExperimentConfig) -> None:
    write_json(out / "config.json", conf.resolved())


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biphoton", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--preset", help=f"built-in configuration ({', '.join(cfg.preset_names())})")
    src.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output directory (default: run.output_dir)")
    common.add_argument("--seed", type=int, help=f"override the run seed (also ${cfg.SEED_ENV})")

    p = sub.add_parser("scan", parents=[common], help="transmission scan and Lorentzian fit")
    p.add_argument("--noise", type=float, help="additive transmission noise rms")
    p.add_argument("--mode-index", type=int, help="resonance order relative to the pump")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("simulate", parents=[common], help="generate and detect pairs, write .bpts tags")
    p.add_argument("--duration", type=float, help="acquisition time in s")
    p.add_argument("--mode", choices=["poisson-pairs", "gaussian-field"], help="pair statistics")
    p.add_argument("--power", type=float, help="pump power in mW")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="coincidence histogram from tag files")
    p.add_argument("files", nargs="+", help="signal and idler .bpts files, or one two-channel file")
    p.add_argument("--bin", type=int, default=DEFAULT_BIN_PS, help="bin width in ps (default 84)")
    p.add_argument("--span", type=int, default=DEFAULT_SPAN_PS, help="half range in ps")
    p.add_argument("--offset", type=int, default=0, help="delay offset in ps")
    p.add_argument("--normalize", action="store_true", help="divide by the accidental level")
    p.add_argument("--background-correct", action="store_true", help="subtract the wing background")
    p.add_argument("--fit", action="store_true", help="fit a double exponential")
    p.add_argument("--window", type=int, help="CAR coincidence window in ps")
    p.add_argument("--hbt", type=float, metavar="RATIO",
                   help="autocorrelate one file through a beamsplitter of this ratio")
    p.add_argument("--seed", type=int, help="seed for the --hbt splitter")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("powerscan", parents=[common], help="rates versus pump power")
    p.add_argument("--powers", help="comma-separated pump powers in mW")
    p.add_argument("--duration", type=float, help="acquisition time at the highest power in s")
    p.set_defaults(func=cmd_powerscan)

    p = sub.add_parser("franson", parents=[common], help="two-photon fringe and entanglement verdict")
    p.add_argument("--phases", help="comma-separated phase sums in rad")
    p.add_argument("--duration", type=float, help="acquisition time per phase point in s")
    p.set_defaults(func=cmd_franson)

    p = sub.add_parser("tune", parents=[common], help="thermal tuning sweep of the resonances")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="consolidate a run directory into report.json and report.md")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TagStreamError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (cfg.ConfigError, InvalidSpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
