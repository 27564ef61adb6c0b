"""Constant-Q transform magnitudes and fixed-width slices.

Bin ``k`` is centered at ``f_base * 2**(k / Q)``. Its atom is a Hann-windowed
complex exponential at that frequency, ``ceil(Q * sr / f_k)`` samples long, so
every bin has the same ratio of center frequency to bandwidth. Atoms are
scaled by ``2 / sum(window)``; a unit-amplitude sinusoid at a bin's center
frequency then yields magnitude ~1 in that bin.

Frame ``t`` is centered at sample ``t * hop``; the signal is
reflection-padded by half the longest atom on both sides.
"""

from dataclasses import dataclass
import numpy as np

from . import backend
from .audio import AudioBuffer

C1_HZ = 440.0 * 2.0 ** (-45.0 / 12.0)


class CqtError(ValueError):
    pass


@dataclass(frozen=True)
class CqtParams:
    sample_rate: int = 16000
    bins_per_octave: int = 24
    f_base: float = C1_HZ
    n_bins: int = 190
    hop_length: int = 512
    window: str = "hann"

    def __post_init__(self):
        if self.bins_per_octave <= 0 or self.n_bins <= 0 or self.hop_length <= 0:
            raise CqtError("bins_per_octave, n_bins and hop_length must be positive")
        if self.f_base <= 0:
            raise CqtError("f_base must be positive")
        if self.window != "hann":
            raise CqtError(f"unsupported window {self.window!r}")
        if self.frequencies()[-1] >= self.sample_rate / 2:
            raise CqtError(
                f"highest bin {self.frequencies()[-1]:.1f} Hz is at or above Nyquist ({self.sample_rate / 2} Hz)")

    def frequencies(self):
        return self.f_base * 2.0 ** (np.arange(self.n_bins) / self.bins_per_octave)

    def window_lengths(self):
        return np.ceil(self.bins_per_octave * self.sample_rate / self.frequencies()).astype(np.int64)

    @property
    def longest_window(self):
        return int(self.window_lengths()[0])

    def n_frames(self, n_samples):
        return n_samples // self.hop_length + 1

    def bin_of(self, freq_hz):
        """Fractional bin index of ``freq_hz``."""
        return self.bins_per_octave * np.log2(np.asarray(freq_hz) / self.f_base)


@dataclass(frozen=True, eq=False)
class CqtMatrix:
    values: np.ndarray
    params: CqtParams

    @property
    def n_frames(self):
        return self.values.shape[0]

    def frame_times(self):
        return np.arange(self.n_frames) * self.params.hop_length / self.params.sample_rate


@dataclass(frozen=True, eq=False)
class CqtSlice:
    values: np.ndarray
    offset: int
    frame: int


_ATOM_CACHE = {}


def _atoms(params):
    if params in _ATOM_CACHE:
        return _ATOM_CACHE[params]
    freqs = params.frequencies()
    lengths = params.window_lengths()
    longest = int(lengths[0])
    re = np.zeros((params.n_bins, longest))
    im = np.zeros((params.n_bins, longest))
    starts = np.empty(params.n_bins, dtype=np.int64)
    for k, (f, n) in enumerate(zip(freqs, lengths)):
        n = int(n)
        # symmetric window centered on the frame; n samples, center at (n-1)/2
        win = np.hanning(n + 2)[1:-1] if n > 1 else np.ones(1)
        offs = np.arange(n) - (n - 1) / 2.0
        phase = 2.0 * np.pi * f * offs / params.sample_rate
        scale = 2.0 / win.sum()
        re[k, :n] = scale * win * np.cos(phase)
        im[k, :n] = -scale * win * np.sin(phase)
        starts[k] = (n - 1) // 2
    out = (re, im, lengths, starts)
    _ATOM_CACHE[params] = out
    return out


def compute_cqt(audio, params=CqtParams(), kernels=None, chunk=256):
    """Magnitude CQT of ``audio`` as a ``[frames, n_bins]`` matrix."""
    if audio.sample_rate != params.sample_rate:
        raise CqtError(f"audio rate {audio.sample_rate} Hz does not match CQT rate {params.sample_rate} Hz")
    re, im, lengths, starts = _atoms(params)
    longest = int(lengths[0])
    if len(audio) < longest:
        raise CqtError(f"audio of {len(audio)} samples is shorter than the longest atom ({longest})")
    kern = kernels or backend.kernels
    pad = longest // 2 + 1
    padded = np.pad(audio.samples, (pad, pad), mode="reflect")
    n_frames = params.n_frames(len(audio))
    centers = np.arange(n_frames, dtype=np.int64) * params.hop_length + pad
    out = np.empty((n_frames, params.n_bins))
    for lo in range(0, n_frames, chunk):
        hi = min(lo + chunk, n_frames)
        out[lo:hi] = kern.cqt_magnitudes(padded, starts, lengths, re, im, centers[lo:hi])
    return CqtMatrix(out, params)


def slice_cqt(matrix, t, k, width=128):
    """Copy bins ``[k, k + width)`` of frame ``t``."""
    T, F = matrix.values.shape
    if not 0 <= t < T:
        raise CqtError(f"frame {t} out of range [0, {T})")
    if not 0 <= k <= F - width:
        raise CqtError(f"offset {k} out of range [0, {F - width}] for slices of {width} bins")
    return CqtSlice(matrix.values[t, k:k + width].copy(), int(k), int(t))


def write_cqt_csv(path, matrix):
    """One row per frame, ``n_bins`` columns, 9 significant digits."""
    np.savetxt(path, matrix.values, fmt="%.9g", delimiter=",")


