"""NumPy implementations of the hot kernels.

Used when the compiled extension ``biphoton._core`` is unavailable, and as the
reference the extension is tested against.
"""
import numpy as np
from scipy.signal import lfilter

# bounds the temporary pair-index array in correlate_counts
_CHUNK_PAIRS = 4_000_000


def correlate_counts(a, b, bin_width, half_bins, offset):
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    nbins = 2 * half_bins + 1
    edge = nbins * bin_width
    counts = np.zeros(nbins, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return counts
    # window [a + offset - edge/2, a + offset + edge/2) in doubled units
    lo = np.searchsorted(2 * b, 2 * (a + offset) - edge, side="left")
    hi = np.searchsorted(2 * b, 2 * (a + offset) + edge, side="left")
    n_match = hi - lo
    cum = np.cumsum(n_match)
    start = 0
    while start < a.size:
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _CHUNK_PAIRS, side="right"))
        stop = max(stop, start + 1)
        m = n_match[start:stop]
        total = int(m.sum())
        if total:
            ai = np.repeat(np.arange(start, stop), m)
            first = np.repeat(lo[start:stop] - np.concatenate(([0], np.cumsum(m)[:-1])), m)
            bj = first + np.arange(total)
            d2 = 2 * (b[bj] - a[ai] - offset)
            counts += np.bincount((d2 + edge) // (2 * bin_width), minlength=nbins)
        start = stop
    return counts


def dead_time_mask(t, dead_time):
    t = np.ascontiguousarray(t, dtype=np.float64)
    n = t.size
    keep = np.ones(n, dtype=bool)
    if n < 2 or dead_time <= 0:
        return keep
    # a tag further than dead_time from its predecessor is always accepted;
    # only runs of closely spaced tags need the sequential rule
    close = np.flatnonzero(np.diff(t) < dead_time) + 1
    if close.size == 0:
        return keep
    last = None
    prev_i = -2
    for i in close.tolist():
        if i != prev_i + 1:
            last = t[i - 1]  # run head is accepted
        if t[i] - last >= dead_time:
            last = t[i]
        else:
            keep[i] = False
        prev_i = i
    return keep


def ar1_complex(x0, a, noise):
    noise = np.ascontiguousarray(noise, dtype=np.complex128)
    if noise.size == 0:
        return noise.copy()
    out, _ = lfilter([1.0], [1.0, -a], noise, zi=np.array([a * x0], dtype=np.complex128))
    return out
