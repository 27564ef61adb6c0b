"""Audio buffers, WAV I/O, resampling, octave shifting and SNR mixing."""

from dataclasses import dataclass
from fractions import Fraction
import wave

import numpy as np
from scipy.signal import resample_poly


class AudioError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"audio must be mono, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise AudioError(f"sample rate must be a positive integer, got {self.sample_rate}")
        if not np.isfinite(samples).all():
            raise AudioError("audio contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


_CHANNELS = {"left": 0, "right": 1}


def load_wav(path, channel=None):
    """Read a 16-bit PCM WAV file.

    Parameters
    ----------
    path : str or Path
    channel : None, "left", "right" or int
        Channel to keep for multi-channel files. ``None`` averages channels.

    Returns
    -------
    AudioBuffer
        Samples scaled by 1/32768.
    """
    try:
        with wave.open(str(path), "rb") as w:
            n_channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            n_frames = w.getnframes()
            if w.getcomptype() != "NONE" or width != 2:
                raise AudioError(f"{path}: only 16-bit PCM is supported (sample width {width * 8} bits)")
            raw = w.readframes(n_frames)
    except wave.Error as exc:
        raise AudioError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise AudioError(f"{path}: truncated file") from exc

    expected = n_frames * n_channels * 2
    if len(raw) < expected:
        raise AudioError(f"{path}: truncated file ({len(raw)} of {expected} data bytes)")
    if n_frames == 0:
        raise AudioError(f"{path}: zero-length audio")

    data = np.frombuffer(raw, dtype="<i2").reshape(-1, n_channels).astype(np.float64) / 32768.0
    if n_channels == 1:
        samples = data[:, 0]
    elif channel is None:
        samples = data.mean(axis=1)
    else:
        idx = _CHANNELS.get(channel, channel)
        if not isinstance(idx, int) or not 0 <= idx < n_channels:
            raise AudioError(f"{path}: no channel {channel!r} in a {n_channels}-channel file")
        samples = data[:, idx]
    return AudioBuffer(np.ascontiguousarray(samples), rate)


def save_wav(path, audio, channels=None):
    """Write 16-bit PCM. ``channels`` optionally stacks extra buffers as stereo."""
    bufs = [audio] + list(channels or [])
    n = max(len(b) for b in bufs)
    data = np.zeros((n, len(bufs)))
    for i, b in enumerate(bufs):
        data[:len(b), i] = b.samples
    pcm = np.clip(np.round(data * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(len(bufs))
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())


def resample(audio, target_rate):
    """Band-limited polyphase resampling to ``target_rate``."""
    if int(target_rate) != target_rate or target_rate <= 0:
        raise AudioError(f"target rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == audio.sample_rate:
        return audio
    ratio = Fraction(target_rate, audio.sample_rate)
    out = resample_poly(audio.samples, ratio.numerator, ratio.denominator)
    return AudioBuffer(out, target_rate)


def pitch_shift_octaves(audio, n):
    """Shift pitch by ``n`` octaves (``n`` in {-1, 0, 1}) by resampling.

    The result is played back at the original rate, so duration scales by
    ``2**-n``.
    """
    if n not in (-1, 0, 1):
        raise AudioError(f"octave shift must be -1, 0 or 1, got {n}")
    if n == 0:
        return audio
    up, down = (1, 2) if n == 1 else (2, 1)
    return AudioBuffer(resample_poly(audio.samples, up, down), audio.sample_rate)


def rms(x):
    x = x.samples if isinstance(x, AudioBuffer) else np.asarray(x)
    return float(np.sqrt(np.mean(np.square(x, dtype=np.float64))))


def snr_gain(clean_rms, noise_rms, snr_db):
    """Noise gain that puts ``noise_rms`` at ``snr_db`` below ``clean_rms``."""
    return (clean_rms / noise_rms) * 10.0 ** (-snr_db / 20.0)


def mix_at_snr(clean, noise, snr_db):
    """Return ``clean + g * noise`` with ``g`` chosen so the mix has the given SNR.

    ``noise`` is looped or truncated to the length of ``clean``. No peak
    normalisation is applied, so the output may exceed [-1, 1].
    """
    if clean.sample_rate != noise.sample_rate:
        raise AudioError("clean and noise sample rates differ")
    rc = rms(clean)
    if rc == 0.0:
        raise AudioError("clean signal is silent; SNR is undefined")
    n = len(clean)
    reps = -(-n // len(noise))
    nz = np.tile(noise.samples, reps)[:n]
    rn = rms(nz)
    if rn == 0.0:
        raise AudioError("noise signal is silent")
    g = snr_gain(rc, rn, snr_db)
    return AudioBuffer(clean.samples + g * nz, clean.sample_rate)
