"""Simulation and analysis of a microring narrowband photon-pair source."""
from ._kernels import BACKEND
from .correlation import (
    Histogram,
    autocorrelate_hbt,
    background_correct,
    coincidence_count,
    cross_correlate,
    g2_at_zero,
    normalize,
)
from .detection import DetectorSpec, Gate, detect, pairwise_jitter
from .fitting import FitResult, fit_double_exponential, fit_lorentzian, fit_sinusoid, least_squares
from .franson import (
    EntangledStateModel,
    FransonSpec,
    entanglement_verdict,
    fringe_scan,
    route_pairs,
)
from .pair_source import (
    PairEvent,
    PairEvents,
    SourceSpec,
    modal_brightness,
    multipair_fraction,
    pair_rate,
    sample_pairs,
)
from .resonator import (
    ResonanceLine,
    ResonatorSpec,
    bandwidth_from_q,
    lorentzian_transmission,
    resonance_grid,
    thermal_shift,
    transmission_scan,
)
from .tagstream import TagStream, TimeTag, decode, encode, merge

__version__ = "0.1.0"

__all__ = [
    "autocorrelate_hbt",
    "BACKEND",
    "background_correct",
    "bandwidth_from_q",
    "coincidence_count",
    "cross_correlate",
    "decode",
    "detect",
    "DetectorSpec",
    "encode",
    "EntangledStateModel",
    "entanglement_verdict",
    "fit_double_exponential",
    "fit_lorentzian",
    "fit_sinusoid",
    "FitResult",
    "FransonSpec",
    "fringe_scan",
    "g2_at_zero",
    "Gate",
    "Histogram",
    "least_squares",
    "lorentzian_transmission",
    "merge",
    "modal_brightness",
    "multipair_fraction",
    "normalize",
    "pair_rate",
    "PairEvent",
    "PairEvents",
    "pairwise_jitter",
    "resonance_grid",
    "ResonanceLine",
    "ResonatorSpec",
    "route_pairs",
    "sample_pairs",
    "SourceSpec",
    "TagStream",
    "thermal_shift",
    "TimeTag",
    "transmission_scan",
    "__version__",
]
