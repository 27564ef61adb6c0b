"""Harmonic test signals: calibration pieces and a labelled synthetic corpus.

Corpus items alternate voiced phrases and pink-noise gaps. A voiced phrase is
a sum of harmonics following a continuous f0 contour made of held notes and
linear glides (in semitones) with sinusoidal vibrato on top. Labels are the
instantaneous f0 at each frame center; frames that are noise, or whose
center lies within one hop of a voiced/unvoiced boundary, are unvoiced.
"""

from dataclasses import dataclass, field
import csv
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, save_wav
from .cqt import C1_HZ

PEAK = 0.8
UNVOICED = 0.0


class SynthError(ValueError):
    pass


@dataclass
class HarmonicSpec:
    f0: float
    amplitudes: np.ndarray
    phases: np.ndarray = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.phases is None:
            self.phases = np.zeros_like(self.amplitudes)
        self.phases = np.asarray(self.phases, dtype=float)
        if self.f0 <= 0:
            raise SynthError(f"f0 must be positive, got {self.f0}")
        if self.amplitudes.shape != self.phases.shape:
            raise SynthError("amplitudes and phases differ in length")

    @property
    def n_harmonics(self):
        """Number of harmonics above the fundamental (K)."""
        return len(self.amplitudes) - 1


def _normalize(x):
    peak = np.max(np.abs(x))
    if peak == 0.0:
        raise SynthError("signal is identically zero")
    return x * (PEAK / peak)


def gen_harmonic_piece(spec, n_samples, sample_rate=16000):
    """``sum_k a_k sin(2 pi (k+1) f0 t + phi_k)``, peak-normalised to 0.8.

    Partials at or above Nyquist are dropped.
    """
    if n_samples <= 0:
        raise SynthError("n_samples must be positive")
    t = np.arange(n_samples) / sample_rate
    x = np.zeros(n_samples)
    for k, (a, phi) in enumerate(zip(spec.amplitudes, spec.phases)):
        if (k + 1) * spec.f0 >= sample_rate / 2:
            break
        if a != 0.0:
            x += a * np.sin(2.0 * np.pi * (k + 1) * spec.f0 * t + phi)
    if not np.any(x):
        raise SynthError("all retained harmonic amplitudes are zero")
    return AudioBuffer(_normalize(x), sample_rate)


@dataclass
class CalibrationSample:
    audio: AudioBuffer
    f0: float
    f0_semitones: float
    center_frame: int


def _draw_first_amplitude(rng):
    # N(0, 1), redrawn when too close to zero to give an audible piece
    while True:
        a0 = rng.standard_normal()
        if abs(a0) >= 0.1:
            return a0


def gen_calibration_set(m, n_frames=11, hop=512, n_harmonics=3, f_lo=110.0, f_hi=440.0, seed=0,
                        sample_rate=16000, f_base=C1_HZ):
    """Draw ``m`` harmonic pieces with f0 on the equal-tempered grid in [f_lo, f_hi].

    Each piece is ``n_frames * hop`` samples long. First-harmonic amplitude
    is N(0, 1) (redrawn while |a0| < 0.1); higher harmonics are
    ``|a0| * U(0, 1)``; phases are uniform.
    """
    if m < 1:
        raise SynthError("m must be at least 1")
    if not 0 < f_lo < f_hi:
        raise SynthError(f"invalid frequency range [{f_lo}, {f_hi}]")
    n_semitones = int(np.floor(12.0 * np.log2(f_hi / f_lo) + 1e-9))
    rng = np.random.default_rng(seed)
    n_samples = n_frames * hop
    out = []
    for _ in range(m):
        s = int(rng.integers(0, n_semitones + 1))
        f0 = f_lo * 2.0 ** (s / 12.0)
        a0 = _draw_first_amplitude(rng)
        amps = np.concatenate([[a0], abs(a0) * rng.uniform(0.0, 1.0, n_harmonics)])
        phases = rng.uniform(0.0, 2.0 * np.pi, n_harmonics + 1)
        audio = gen_harmonic_piece(HarmonicSpec(f0, amps, phases), n_samples, sample_rate)
        out.append(CalibrationSample(audio, f0, 12.0 * np.log2(f0 / f_base), n_frames // 2))
    return out


@dataclass
class CorpusConfig:
    n_items: int = 200
    item_seconds: float = 3.0
    f_lo: float = 110.0
    f_hi: float = 880.0
    unvoiced_fraction: float = 0.2
    vibrato_cents: float = 20.0
    vibrato_rate: tuple = (4.0, 7.0)
    glide_semitones: float = 7.0
    glide_rate: float = 8.0
    min_harmonics: int = 1
    max_harmonics: int = 6
    tilt: tuple = (0.0, 1.0)
    phrases: tuple = (1, 3)
    fixed_f0: float = None
    sample_rate: int = 16000
    hop: int = 512

    def validate(self):
        if self.n_items <= 0 or self.item_seconds <= 0:
            raise SynthError("corpus needs a positive item count and length")
        if not 0 < self.f_lo < self.f_hi:
            raise SynthError(f"invalid pitch range [{self.f_lo}, {self.f_hi}]")
        if not 0.0 <= self.unvoiced_fraction < 1.0:
            raise SynthError("unvoiced_fraction must be in [0, 1)")
        if not 0 <= self.min_harmonics <= self.max_harmonics:
            raise SynthError("invalid harmonic count range")
        if not 0.0 <= self.tilt[0] <= self.tilt[1]:
            raise SynthError(f"invalid tilt range {self.tilt}")


@dataclass
class CorpusItem:
    audio: AudioBuffer
    f0_hz: np.ndarray
    hop: int
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def voiced(self):
        return self.f0_hz > 0

    def frame_times(self):
        return np.arange(len(self.f0_hz)) * self.hop / self.audio.sample_rate


def pink_noise(n, rng):
    """Gaussian noise with a 1/f power spectrum, unit RMS."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.arange(len(spec), dtype=float)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x * x))


def _contour(n, sr, cfg, rng):
    """Semitone contour (relative to f_lo) of a phrase: holds and glides."""
    lo_st = 0.0
    hi_st = 12.0 * np.log2(cfg.f_hi / cfg.f_lo)
    margin = cfg.vibrato_cents / 100.0
    lo_st, hi_st = lo_st + margin, hi_st - margin
    out = np.empty(n)
    pos = 0
    cur = rng.uniform(lo_st, hi_st)
    while pos < n:
        hold = int(rng.uniform(0.15, 0.5) * sr)
        end = min(n, pos + hold)
        out[pos:end] = cur
        pos = end
        if pos >= n:
            break
        target = np.clip(cur + rng.uniform(-cfg.glide_semitones, cfg.glide_semitones), lo_st, hi_st)
        # glides no faster than glide_rate semitones per second
        glide = int(max(rng.uniform(0.08, 0.3), abs(target - cur) / cfg.glide_rate) * sr)
        end = min(n, pos + glide)
        out[pos:end] = np.linspace(cur, target, glide, endpoint=False)[:end - pos]
        pos = end
        cur = target
    t = np.arange(n) / sr
    rate = rng.uniform(*cfg.vibrato_rate)
    out += margin * np.sin(2.0 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    return out


def _voiced_phrase(n, cfg, rng):
    sr = cfg.sample_rate
    if cfg.fixed_f0 is not None:
        f0 = np.full(n, float(cfg.fixed_f0))
    else:
        f0 = cfg.f_lo * 2.0 ** (_contour(n, sr, cfg, rng) / 12.0)
    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    n_harm = int(rng.integers(cfg.min_harmonics, cfg.max_harmonics + 1))
    # random timbre: harmonic k scaled by U(0,1) / (k+1)^beta; beta = 0 is the flat
    # calibration-tone law, beta = 1 a -6 dB/octave tilt
    beta = rng.uniform(*cfg.tilt)
    amps = np.concatenate([[1.0], rng.uniform(0.0, 1.0, n_harm) / np.arange(2, n_harm + 2) ** beta])
    x = np.zeros(n)
    for k, a in enumerate(amps):
        partial = (k + 1) * f0
        x += np.where(partial < sr / 2, a, 0.0) * np.sin((k + 1) * phase + rng.uniform(0, 2 * np.pi))
    ramp = min(int(0.01 * sr), n // 2)
    if ramp:
        env = np.ones(n)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        x *= env
    return x, f0


def _split(total, parts, minimum, rng):
    if parts <= 0:
        return []
    w = rng.uniform(0.5, 1.5, parts)
    minimum = min(minimum, total // parts)
    free = total - parts * minimum
    sizes = (minimum + free * w / w.sum()).astype(int)
    sizes[-1] += total - sizes.sum()
    return list(sizes)


def gen_corpus_item(cfg, rng, name=""):
    sr, hop = cfg.sample_rate, cfg.hop
    n = int(round(cfg.item_seconds * sr))
    n_unvoiced = int(round(cfg.unvoiced_fraction * n))
    n_voiced = n - n_unvoiced
    phrases = int(rng.integers(cfg.phrases[0], cfg.phrases[1] + 1))
    voiced_sizes = _split(n_voiced, phrases, int(0.4 * sr), rng)
    if n_unvoiced:
        lead = bool(rng.integers(0, 2))
        gaps = _split(n_unvoiced, phrases, 0, rng)
    else:
        lead, gaps = False, [0] * phrases

    audio = np.zeros(n)
    f0 = np.zeros(n)
    voiced_mask = np.zeros(n, dtype=bool)
    pos = 0
    rms_levels = []
    segments = []
    for i in range(phrases):
        order = [("u", gaps[i]), ("v", voiced_sizes[i])] if lead else [("v", voiced_sizes[i]), ("u", gaps[i])]
        for kind, size in order:
            if size <= 0:
                continue
            segments.append((kind, pos, pos + size))
            if kind == "v":
                x, fc = _voiced_phrase(size, cfg, rng)
                x *= rng.uniform(0.3, 1.0) / max(np.sqrt(np.mean(x * x)), 1e-12)
                audio[pos:pos + size] = x
                f0[pos:pos + size] = fc
                voiced_mask[pos:pos + size] = True
                rms_levels.append(np.sqrt(np.mean(x * x)))
            pos += size
    mean_level = np.mean(rms_levels) if rms_levels else 0.5
    for kind, a, b in segments:
        if kind == "u":
            audio[a:b] = pink_noise(b - a, rng) * mean_level * rng.uniform(0.3, 1.0)

    audio = _normalize(audio)
    n_frames = n // hop + 1
    centers = np.arange(n_frames) * hop
    centers_c = np.minimum(centers, n - 1)
    labels = np.where(voiced_mask[centers_c], f0[centers_c], UNVOICED)
    boundaries = [a for kind, a, b in segments if a > 0] + [b for kind, a, b in segments if b < n]
    for bnd in boundaries:
        labels[np.abs(centers - bnd) <= hop] = UNVOICED
    return CorpusItem(AudioBuffer(audio, sr), labels, hop, name, {"segments": segments})


def gen_training_corpus(cfg, seed=0):
    """Generate ``cfg.n_items`` items; item ``i`` uses its own seeded generator."""
    cfg.validate()
    seeds = np.random.SeedSequence(seed).spawn(cfg.n_items)
    return [gen_corpus_item(cfg, np.random.default_rng(s), name=f"item_{i:04d}") for i, s in enumerate(seeds)]


def write_labels_csv(path, times, f0_hz):
    """Sidecar labels: ``time_sec,f0_hz``, empty f0 for unvoiced frames."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_sec", "f0_hz"])
        for t, f in zip(times, f0_hz):
            w.writerow([f"{t:.6f}", f"{f:.6f}" if f > 0 else ""])


def save_corpus(items, out_dir):
    """Write ``<name>.wav`` and ``<name>.csv`` for each item."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for item in items:
        save_wav(out / f"{item.name}.wav", item.audio)
        write_labels_csv(out / f"{item.name}.csv", item.frame_times(), item.f0_hz)
