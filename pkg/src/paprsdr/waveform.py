"""Peak-to-average power ratio measurement, CCDF estimation, and the
amplitude-clipping baseline.

PAPR is evaluated on the oversampled signal (frequency-domain zero padding)
because the discrete peak underestimates the continuous one; a factor of 4
is enough for the error to be negligible.  The average in the ratio is the
symbol-wise (local) power by default; a fixed statistical average can be
supplied instead and reports record which estimator was used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CCDF_GRID = np.round(np.arange(0.0, 14.0 + 1e-9, 0.1), 10)


@dataclass(frozen=True)
class PaprReport:
    per_antenna_papr_db: np.ndarray
    peak_power: np.ndarray
    local_avg_power: np.ndarray
    oversample: int
    avg_mode: str  # "symbol" or "statistical"


@dataclass(frozen=True)
class CcdfCurve:
    thresholds_db: np.ndarray
    prob: np.ndarray
    n_samples: int

    def __post_init__(self):
        if np.any(np.diff(self.prob) > 0):
            raise ValueError("CCDF must be nonincreasing in the threshold")
        if self.prob.min() < 0 or self.prob.max() > 1:
            raise ValueError("CCDF values must lie in [0, 1]")

    def value_at(self, prob_level: float) -> float:
        """Smallest grid threshold whose exceedance prob is <= prob_level."""
        idx = np.nonzero(self.prob <= prob_level)[0]
        if idx.size == 0:
            return float(self.thresholds_db[-1])
        return float(self.thresholds_db[idx[0]])


def oversample_signal(x: np.ndarray, factor: int) -> np.ndarray:
    """Band-limited interpolation by frequency-domain zero padding.

    Exact at the original sample instants (x_up[k*factor] == x[k]); the
    Nyquist bin is split symmetrically for even lengths.
    """
    x = np.asarray(x, dtype=complex)
    n = x.size
    if factor == 1:
        return x.copy()
    spec = np.fft.fft(x)
    padded = np.zeros(n * factor, dtype=complex)
    if n % 2 == 0:
        half = n // 2
        padded[:half] = spec[:half]
        padded[half] = 0.5 * spec[half]
        padded[-half] += 0.5 * spec[half]
        if half > 1:
            padded[-(half - 1):] = spec[half + 1:]
    else:
        k = (n + 1) // 2
        padded[:k] = spec[:k]
        padded[-(n - k):] = spec[k:]
    return np.fft.ifft(padded) * factor


def papr_db(x: np.ndarray, oversample: int = 1,
            p_av: float | None = None) -> float:
    """PAPR of one antenna signal in dB.

    With p_av=None the denominator is the symbol-wise mean power of the
    oversampled signal; otherwise the given statistical average is used.
    """
    x = np.asarray(x, dtype=complex)
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    p = np.abs(oversample_signal(x, oversample)) ** 2
    peak = p.max()
    avg = p.mean() if p_av is None else float(p_av)
    if avg <= 0.0:
        raise ValueError("signal has zero power")
    return float(10.0 * np.log10(peak / avg))


def papr_report(x: np.ndarray, n_tx: int, n_sc: int, oversample: int = 4,
                p_av: float | None = None) -> PaprReport:
    """Per-antenna PAPR of a stacked antenna-major transmit vector."""
    x = np.asarray(x, dtype=complex).reshape(n_tx, n_sc)
    peaks = np.empty(n_tx)
    avgs = np.empty(n_tx)
    for m in range(n_tx):
        p = np.abs(oversample_signal(x[m], oversample)) ** 2
        peaks[m] = p.max()
        avgs[m] = p.mean() if p_av is None else float(p_av)
    if np.any(avgs <= 0):
        raise ValueError("an antenna signal has zero power")
    return PaprReport(
        per_antenna_papr_db=10.0 * np.log10(peaks / avgs),
        peak_power=peaks,
        local_avg_power=avgs,
        oversample=oversample,
        avg_mode="symbol" if p_av is None else "statistical",
    )


def ccdf(papr_samples, grid: np.ndarray | None = None) -> CcdfCurve:
    """Empirical exceedance probabilities P(PAPR > threshold) on a grid."""
    samples = np.asarray(papr_samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("need at least one PAPR sample")
    if grid is None:
        grid = DEFAULT_CCDF_GRID
    grid = np.asarray(grid, dtype=float)
    srt = np.sort(samples)
    # count of samples strictly above each threshold
    above = samples.size - np.searchsorted(srt, grid, side="right")
    return CcdfCurve(thresholds_db=grid, prob=above / samples.size,
                     n_samples=samples.size)


def clip(x: np.ndarray, clip_ratio_db: float) -> np.ndarray:
    """Scale magnitudes above ratio*rms down to the threshold, keeping phase.

    Repeated against the shrinking symbol power until the fixed point, so
    the Nyquist-rate PAPR of the output really is at most the clip ratio
    (a single pass lowers the average and can leave the ratio violated).
    Any ratio >= 0 dB admits the constant-modulus fixed point, hence the
    iteration terminates.
    """
    if not np.isfinite(clip_ratio_db):
        raise ValueError("clip ratio must be finite")
    ratio = 10.0 ** (clip_ratio_db / 10.0)
    y = np.asarray(x, dtype=complex).copy()
    for _ in range(200):
        p = np.abs(y) ** 2
        mean = p.mean()
        if mean == 0.0 or p.max() <= ratio * mean * (1.0 + 1e-12):
            break
        limit = np.sqrt(ratio * mean)
        mag = np.sqrt(p)
        factor = np.where(mag > limit, limit / np.maximum(mag, 1e-300), 1.0)
        y *= factor
    return y
