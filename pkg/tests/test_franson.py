import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from biphoton.correlation import coincidence_count, cross_correlate
from biphoton.detection import DetectorSpec, detect
from biphoton.fitting import fit_sinusoid
from biphoton.franson import (
    CHSH_BOUND,
    EntangledStateModel,
    FransonSpec,
    effective_visibility,
    entanglement_verdict,
    fringe_scan,
    outcome_table,
    path_probabilities,
    point_seed,
    route_pairs,
    splitter_penalty,
)
from biphoton.pair_source import SourceSpec, sample_pairs
from biphoton.resonator import InvalidSpecError

IDEAL = EntangledStateModel()
LOSSLESS = DetectorSpec(efficiency=1.0, jitter_sigma_ps=0, dark_prob_per_ns=0, dead_time_ns=0, tick_ps=1)
PHASES = np.linspace(0, 2 * np.pi, 12, endpoint=False)


def _source(rate=2e6, tau=1.0):
    return SourceSpec(pump_power_mw=1.0, tau_ns=tau, brightness_cal=rate)


def _routed(phase, seed=1, n_rate=2e5):
    pairs = sample_pairs(_source(n_rate), 0.1, seed)
    spec = FransonSpec(delta_t_ns=25.0, phi1=phase)
    ts, ti = route_pairs(pairs, spec, IDEAL, seed)
    return pairs, ts, ti


def test_invalid_specs():
    with pytest.raises(InvalidSpecError):
        FransonSpec(delta_t_ns=0)
    with pytest.raises(InvalidSpecError):
        FransonSpec(delta_t_ns=25, splitter_ratios=(0.5, 0.5, 1.0, 0.5))
    with pytest.raises(InvalidSpecError):
        FransonSpec(delta_t_ns=25, phase_noise_sigma=-0.1)
    with pytest.raises(InvalidSpecError):
        EntangledStateModel(1.2)


def test_delay_must_separate_peaks():
    pairs = sample_pairs(_source(1e4, tau=2.0), 0.01, 0)
    with pytest.raises(InvalidSpecError):
        route_pairs(pairs, FransonSpec(delta_t_ns=19.9), IDEAL, 0)
    route_pairs(pairs, FransonSpec(delta_t_ns=20.0), IDEAL, 0)


def test_outcome_weights_ideal():
    spec = FransonSpec(delta_t_ns=25.0)
    for phase, mid in ((0.0, 1.0), (np.pi, 0.0), (np.pi / 2, 0.5)):
        t = outcome_table(spec, IDEAL, phase)
        # of the phase-averaged post-selection, sides take 25% each; the middle
        # averages 50% and swings between 0 and twice that
        assert t[0, 1] == pytest.approx(1 / 16)
        assert t[1, 0] == pytest.approx(1 / 16)
        assert (t[0, 0] + t[1, 1]) / (4 / 16) == pytest.approx(mid, abs=1e-12)
    avg = np.mean([outcome_table(spec, IDEAL, p)[:2, :2].sum() for p in PHASES])
    assert avg == pytest.approx(4 / 16)


@settings(max_examples=100)
@given(r=st.lists(st.floats(0.05, 0.95), min_size=4, max_size=4), phase=st.floats(-10, 10),
       v=st.floats(0, 1), loss=st.floats(0, 5))
def test_outcome_table_is_distribution(r, phase, v, loss):
    spec = FransonSpec(delta_t_ns=25.0, splitter_ratios=tuple(r), long_arm_excess_loss_db=loss)
    t = outcome_table(spec, EntangledStateModel(v), phase)
    assert np.all(t >= 0)
    assert t.sum() == pytest.approx(1.0)


def test_marginals_phase_independent():
    spec = FransonSpec(delta_t_ns=25.0, splitter_ratios=(0.55, 0.5, 0.5, 0.52))
    (ps, pl), (qs, ql) = path_probabilities(spec)
    for phase in PHASES:
        t = outcome_table(spec, IDEAL, phase)
        assert t[0].sum() == pytest.approx(ps)
        assert t[:, 1].sum() == pytest.approx(ql)


def test_splitter_penalty():
    assert splitter_penalty(0.3, 0.3) == 1.0
    assert splitter_penalty(0.1, 0.4) == pytest.approx(0.8)
    assert effective_visibility(FransonSpec(delta_t_ns=25.0), IDEAL) == 1.0
    assert effective_visibility(FransonSpec(delta_t_ns=25.0, phase_noise_sigma=0.3), IDEAL) == pytest.approx(
        math.exp(-0.045))


def test_route_extremes():
    pairs, ts, ti = _routed(0.0)
    dt = 25_000
    n = len(pairs)
    # half of each photon's amplitude leaves through the unmonitored port
    assert 0.45 * n < ts.size < 0.55 * n
    _, ts_pi, ti_pi = _routed(np.pi)
    a0 = np.sort(np.rint(ts).astype(np.int64))
    b0 = np.sort(np.rint(ti).astype(np.int64))
    a1 = np.sort(np.rint(ts_pi).astype(np.int64))
    b1 = np.sort(np.rint(ti_pi).astype(np.int64))
    mid0 = coincidence_count(a0, b0, dt, 0, 0.1).coincidences
    mid1 = coincidence_count(a1, b1, dt, 0, 0.1).coincidences
    side0 = coincidence_count(a0, b0, dt, dt, 0.1).coincidences
    # 1:4:1 peak ratio at the fringe maximum
    assert mid0 == pytest.approx(4 * side0, rel=0.08)
    assert mid1 < 0.01 * mid0 + 20


def test_fringe_scan_needs_six_points():
    with pytest.raises(ValueError):
        fringe_scan(_source(1e4), (LOSSLESS, LOSSLESS), FransonSpec(delta_t_ns=25.0), [0, 1, 2, 3], 0.01, 0)


def test_point_seed():
    assert point_seed(7, 0) == 7
    assert point_seed(7, 3) == 4


def _vis(spec, seed=3, rate=2e6, duration=0.1, state=IDEAL, phases=PHASES):
    scan = fringe_scan(_source(rate), (LOSSLESS, LOSSLESS), spec, phases, duration, seed, state)
    fit = scan.fit()
    return fit, scan


def test_visibility_monotone_in_phase_noise():
    vs = []
    for sigma in (0.0, 0.2, 0.4, 0.8):
        fit, _ = _vis(FransonSpec(delta_t_ns=25.0, phase_noise_sigma=sigma))
        vs.append(fit.params["visibility"])
        assert fit.params["visibility"] == pytest.approx(math.exp(-sigma**2 / 2), abs=4 * fit.stderr["visibility"] + 1e-3)
    assert all(a > b for a, b in zip(vs, vs[1:]))


def test_visibility_depends_only_on_phase_sum():
    f1, _ = _vis(FransonSpec(delta_t_ns=25.0, phi2=0.0, phase_noise_sigma=0.5), seed=4, rate=5e5)
    f2, _ = _vis(FransonSpec(delta_t_ns=25.0, phi2=1.3, phase_noise_sigma=0.5), seed=5, rate=5e5)
    err = math.hypot(f1.stderr["visibility"], f2.stderr["visibility"])
    assert abs(f1.params["visibility"] - f2.params["visibility"]) <= 2 * err


def test_global_phase_invariance():
    _, scan = _vis(FransonSpec(delta_t_ns=25.0, phase_noise_sigma=0.3), rate=5e5)
    y = scan.column("middle_corrected")
    s = np.sqrt(np.maximum(scan.column("middle_raw"), 1))
    v0 = fit_sinusoid(scan.phases, y, s).params["visibility"]
    v1 = fit_sinusoid(scan.phases + 0.77, y, s).params["visibility"]
    assert v1 == pytest.approx(v0, rel=1e-6)


def test_equal_phases_give_flat_counts():
    fit, scan = _vis(FransonSpec(delta_t_ns=25.0), rate=5e5, phases=[0.4] * 12)
    # a fringe over identical phases is degenerate
    assert not fit.converged and "visibility" in fit.params
    mid = scan.column("middle_raw")
    chi2 = float(np.sum((mid - mid.mean()) ** 2 / mid.mean()))
    assert stats.chi2.sf(chi2, mid.size - 1) > 1e-3
    flat = fit_sinusoid(PHASES, scan.column("middle_corrected"), np.sqrt(mid))
    assert flat.params["visibility"] <= 3 * flat.stderr["visibility"]


def test_three_peaks_and_phase_independent_sides():
    spec = FransonSpec(delta_t_ns=25.0)
    fit, scan = _vis(spec, rate=5e5)
    assert fit.derived["r_squared"] > 0.95
    for name in ("side_minus", "side_plus"):
        y = scan.column(name)
        chi2 = float(np.sum((y - y.mean()) ** 2 / y.mean()))
        assert stats.chi2.sf(chi2, y.size - 1) > 1e-3
    # peak positions in a full histogram
    pairs = sample_pairs(_source(5e5), 0.1, 9)
    ts, ti = route_pairs(pairs, spec, IDEAL, 9)
    a = detect(ts, LOSSLESS, 10**11, 1, 0)
    b = detect(ti, LOSSLESS, 10**11, 2, 1)
    h = cross_correlate(a, b, 84, 40_000)
    for center in (-25_000, 0, 25_000):
        sel = np.abs(h.delays_ps - center) <= 5_000
        peak = np.average(h.delays_ps[sel], weights=h.counts[sel])
        assert abs(peak - center) <= 84


@pytest.mark.parametrize("v,e,classical,chsh", [(0.90, 0.07, True, True), (0.5, 0.0, False, False),
                                                (1.0, 0.0, True, True), (0.5, 0.01, False, False)])
def test_verdict_examples(v, e, classical, chsh):
    out = entanglement_verdict(v, e)
    assert out.classical_violated is classical
    assert out.chsh_violated is chsh


def test_verdict_margins():
    out = entanglement_verdict(0.90, 0.07)
    assert out.classical_margin_sigma == pytest.approx(0.4 / 0.07)
    assert out.chsh_margin_sigma == pytest.approx((0.9 - CHSH_BOUND) / 0.07)
    assert out.as_dict()["chsh_bound"] == pytest.approx(1 / math.sqrt(2))
    assert entanglement_verdict(1.0, 0.0).as_dict()["classical_margin_sigma"] is None
    with pytest.raises(ValueError):
        entanglement_verdict(1.2, 0.1)


@given(v=st.floats(0, 1), e=st.floats(0, 0.5))
def test_verdict_ordering(v, e):
    out = entanglement_verdict(v, e)
    assert not (out.chsh_violated and not out.classical_violated)
