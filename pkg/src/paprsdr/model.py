"""System model: multipath channels, QAM symbols, and the effective
frequency-space operator that maps time-domain antenna signals to the
per-subcarrier received symbols.

Conventions fixed here and relied on everywhere else:
  * the per-antenna DFT is unitary (1/sqrt(n_sc) both ways), so the
    frequency mapping preserves Euclidean norms;
  * time-domain stacking is antenna-major (x = [x_1; ...; x_{n_tx}], each
    of length n_sc), received symbols are subcarrier-major
    (s = [s_1; ...; s_{n_sc}], each of length n_users);
  * constellations are normalized to unit average energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

# dense effective-channel matrices are only materialized up to this many
# columns; larger systems must use operator mode
DENSE_LIMIT = 4096

_BITS_PER_AXIS = {"qpsk": 1, "16qam": 2, "64qam": 3}


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and common knobs; seeds every experiment."""

    n_tx: int = 8          # BS antennas
    n_users: int = 2       # single-antenna users
    n_sc: int = 16         # subcarriers (power of two)
    n_taps: int = 4        # multipath taps
    oversample: int = 4    # PAPR evaluation oversampling factor
    modulation: str = "16qam"
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.n_tx < self.n_users:
            raise ValueError("need n_tx >= n_users >= 1")
        if self.n_sc < 2 or (self.n_sc & (self.n_sc - 1)) != 0:
            raise ValueError("n_sc must be a power of two >= 2")
        if not 1 <= self.n_taps <= self.n_sc:
            raise ValueError("need 1 <= n_taps <= n_sc")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")
        if self.modulation not in _BITS_PER_AXIS:
            raise ValueError(f"unknown modulation {self.modulation!r}")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")

    @property
    def n_x(self) -> int:
        return self.n_tx * self.n_sc

    @property
    def n_s(self) -> int:
        return self.n_users * self.n_sc

    @property
    def bits_per_symbol(self) -> int:
        return 2 * _BITS_PER_AXIS[self.modulation]

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class ChannelSet:
    """Time-domain taps and their per-subcarrier frequency response."""

    taps: np.ndarray            # (n_taps, n_users, n_tx) complex
    per_subcarrier: np.ndarray  # (n_sc, n_users, n_tx) complex

    def __post_init__(self):
        freq = np.fft.fft(self.taps, n=self.per_subcarrier.shape[0], axis=0)
        if not np.allclose(freq, self.per_subcarrier, atol=1e-10):
            raise ValueError("per_subcarrier is not the DFT of the taps")

    @property
    def n_sc(self) -> int:
        return self.per_subcarrier.shape[0]

    @property
    def n_users(self) -> int:
        return self.per_subcarrier.shape[1]

    @property
    def n_tx(self) -> int:
        return self.per_subcarrier.shape[2]


def channel_from_taps(taps: np.ndarray, n_sc: int) -> ChannelSet:
    """Build a ChannelSet from time-domain tap matrices."""
    taps = np.asarray(taps, dtype=complex)
    return ChannelSet(taps=taps, per_subcarrier=np.fft.fft(taps, n=n_sc, axis=0))


def generate_channel(config: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    """Draw an i.i.d. Rayleigh tapped-delay-line channel.

    Taps are circularly symmetric complex Gaussian with a flat power
    profile normalized so each (user, antenna) pair has unit total power,
    hence E|H_m(i,j)|^2 = 1 on every subcarrier.
    """
    shape = (config.n_taps, config.n_users, config.n_tx)
    scale = np.sqrt(0.5 / config.n_taps)
    taps = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return channel_from_taps(taps, config.n_sc)


def antenna_to_subcarrier_perm(n_tx: int, n_sc: int) -> np.ndarray:
    """Index permutation from antenna-major to subcarrier-major stacking.

    out[m*n_tx + n] = in[n*n_sc + m]; applying it then its inverse is the
    identity (the permutation is orthogonal).
    """
    n = np.arange(n_tx)
    m = np.arange(n_sc)
    return (n[None, :] * n_sc + m[:, None]).ravel()


@dataclass
class EffectiveChannel:
    """The composed operator taking time-domain x to received symbols.

    mode "operator" applies per-antenna FFTs; mode "dense" materializes the
    full n_s-by-n_x matrix (only allowed for n_x <= DENSE_LIMIT).
    """

    channel: ChannelSet
    mode: str = "operator"
    dense_cache: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("operator", "dense"):
            raise ValueError("mode must be 'operator' or 'dense'")
        if self.mode == "dense":
            if self.n_x > DENSE_LIMIT:
                raise ValueError(
                    f"dense mode limited to n_x <= {DENSE_LIMIT}, got {self.n_x}"
                )
            if self.dense_cache is None:
                self.dense_cache = _materialize(self.channel)

    @property
    def n_tx(self) -> int:
        return self.channel.n_tx

    @property
    def n_users(self) -> int:
        return self.channel.n_users

    @property
    def n_sc(self) -> int:
        return self.channel.n_sc

    @property
    def n_x(self) -> int:
        return self.n_tx * self.n_sc

    @property
    def n_s(self) -> int:
        return self.n_users * self.n_sc

    def apply(self, x: np.ndarray) -> np.ndarray:
        return effective_apply(self, x)

    def dense(self) -> np.ndarray:
        """The explicit matrix (materializing it on first use)."""
        if self.dense_cache is None:
            if self.n_x > DENSE_LIMIT:
                raise ValueError(
                    f"dense matrix limited to n_x <= {DENSE_LIMIT}, got {self.n_x}"
                )
            self.dense_cache = _materialize(self.channel)
        return self.dense_cache


def _materialize(channel: ChannelSet) -> np.ndarray:
    n_sc, n_users, n_tx = channel.per_subcarrier.shape
    q = np.fft.fft(np.eye(n_sc), axis=0) / np.sqrt(n_sc)
    full = np.einsum("mrn,mt->mrnt", channel.per_subcarrier, q)
    return np.ascontiguousarray(full.reshape(n_sc * n_users, n_tx * n_sc))


def effective_apply(ch: EffectiveChannel, x: np.ndarray) -> np.ndarray:
    """Received symbols for time-domain transmit vector x (length n_x)."""
    x = np.asarray(x, dtype=complex)
    if x.shape != (ch.n_x,):
        raise ValueError(f"expected x of shape ({ch.n_x},), got {x.shape}")
    if ch.mode == "dense" or ch.dense_cache is not None:
        return ch.dense() @ x
    xf = np.fft.fft(x.reshape(ch.n_tx, ch.n_sc), axis=1) / np.sqrt(ch.n_sc)
    # per subcarrier m: s_m = H_m @ xf[:, m]
    s = np.einsum("mrn,nm->mr", ch.channel.per_subcarrier, xf)
    return s.ravel()


def compute_mui(s: "SymbolVector | np.ndarray", ch: EffectiveChannel,
                x: np.ndarray) -> float:
    """Normalized residual ||s - Hx||^2 / ||s||^2 at the receivers."""
    sv = s.s if isinstance(s, SymbolVector) else np.asarray(s, dtype=complex)
    denom = float(np.vdot(sv, sv).real)
    if denom <= 0.0:
        raise ValueError("symbol vector must be nonzero")
    resid = sv - effective_apply(ch, x)
    return float(np.vdot(resid, resid).real) / denom


# ---------------------------------------------------------------------------
# constellations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymbolVector:
    s: np.ndarray          # complex symbols, unit average energy
    constellation: str
    bits: np.ndarray       # the source bits, len(s) * bits_per_symbol


def _axis_levels(constellation: str) -> tuple[np.ndarray, float]:
    if constellation not in _BITS_PER_AXIS:
        raise ValueError(f"unknown constellation {constellation!r}")
    k = _BITS_PER_AXIS[constellation]
    levels = np.arange(-(2 ** k - 1), 2 ** k, 2, dtype=float)
    scale = np.sqrt(2.0 * np.mean(levels ** 2))
    return levels / scale, scale


def _gray_encode(idx: np.ndarray) -> np.ndarray:
    return idx ^ (idx >> 1)


def _gray_decode(code: np.ndarray) -> np.ndarray:
    idx = code.copy()
    shift = 1
    while shift < 32:
        idx ^= idx >> shift
        shift *= 2
    return idx


def map_symbols(bits: np.ndarray, constellation: str) -> SymbolVector:
    """Gray-mapped square QAM with unit average energy."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = _BITS_PER_AXIS.get(constellation)
    if k is None:
        raise ValueError(f"unknown constellation {constellation!r}")
    if bits.size % (2 * k) != 0:
        raise ValueError(f"bit count must be a multiple of {2 * k}")
    levels, _ = _axis_levels(constellation)
    groups = bits.reshape(-1, 2 * k)

    def axis(vals):
        word = np.zeros(len(groups), dtype=np.int64)
        for b in range(k):
            word = (word << 1) | vals[:, b]
        return levels[_gray_decode(word)]

    sym = axis(groups[:, :k]) + 1j * axis(groups[:, k:])
    return SymbolVector(s=sym, constellation=constellation, bits=bits)


def demap_symbols(y: np.ndarray, constellation: str) -> np.ndarray:
    """Nearest-neighbor demapping back to bits."""
    y = np.asarray(y, dtype=complex).ravel()
    k = _BITS_PER_AXIS.get(constellation)
    if k is None:
        raise ValueError(f"unknown constellation {constellation!r}")
    levels, _ = _axis_levels(constellation)
    bits = np.empty((y.size, 2 * k), dtype=np.int64)
    for col, vals in ((0, np.ascontiguousarray(y.real)),
                      (k, np.ascontiguousarray(y.imag))):
        word = _gray_encode(kernels.nearest_level(vals, levels))
        for b in range(k):
            bits[:, col + b] = (word >> (k - 1 - b)) & 1
    return bits.ravel()


def random_symbols(config: SystemConfig, rng: np.random.Generator) -> SymbolVector:
    """One OFDM symbol worth of random constellation points."""
    n_bits = config.n_s * config.bits_per_symbol
    return map_symbols(rng.integers(0, 2, size=n_bits), config.modulation)
