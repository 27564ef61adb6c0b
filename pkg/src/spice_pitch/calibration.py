"""Affine map from the encoder's relative pitch code to absolute semitones.

The encoder output ``y`` is only defined up to an offset and scale. A handful
of synthetic harmonic tones with known f0 pins both down: fit
``p = b + s * y`` by ordinary least squares, then ``f = f_base * 2**(p / 12)``.
"""

from dataclasses import asdict, dataclass
import json

import numpy as np

from .audio import AudioBuffer
from .cqt import C1_HZ, CqtParams, compute_cqt
from .synth import gen_calibration_set

FORMAT = "spice-calibration"


class CalibrationError(ValueError):
    pass


def semitones_to_hz(p, f_base=C1_HZ):
    return f_base * 2.0 ** (np.asarray(p, dtype=float) / 12.0)


def hz_to_semitones(f, f_base=C1_HZ):
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise CalibrationError("frequencies must be positive")
    return 12.0 * np.log2(f / f_base)


@dataclass
class AffineCalibration:
    intercept: float
    slope: float
    m: int
    residual_rms: float
    f_base: float = C1_HZ
    k_star: int = 4
    checkpoint_hash: str = ""

    def __post_init__(self):
        if self.slope == 0 or not np.isfinite(self.slope):
            raise CalibrationError("slope must be finite and nonzero")
        if not np.isfinite(self.intercept) or not np.isfinite(self.residual_rms):
            raise CalibrationError("intercept and residual must be finite")

    def predict(self, y):
        """Absolute pitch in semitones above ``f_base``."""
        return self.intercept + self.slope * np.asarray(y, dtype=float)

    def to_hz(self, p):
        return semitones_to_hz(p, self.f_base)

    def to_dict(self):
        d = asdict(self)
        d["format"] = FORMAT
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.pop("format", None) != FORMAT:
            raise CalibrationError("not a calibration document")
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except (json.JSONDecodeError, TypeError) as exc:
                raise CalibrationError(f"{path}: {exc}") from exc


def fit(points, **extra):
    """OLS fit of ``p = b + s * y`` to ``(y, p)`` pairs."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise CalibrationError("need at least 2 calibration points")
    y, p = pts[:, 0], pts[:, 1]
    if not np.all(np.isfinite(pts)):
        raise CalibrationError("calibration points must be finite")
    if np.ptp(y) == 0:
        raise CalibrationError("all y values are equal; slope is undetermined")
    # centred normal equations are well conditioned and independent of input order
    ym, pm = y.mean(), p.mean()
    dy = y - ym
    slope = float(np.dot(dy, p - pm) / np.dot(dy, dy))
    intercept = float(pm - slope * ym)
    resid = p - (intercept + slope * y)
    return AffineCalibration(intercept, slope, len(pts), float(np.sqrt(np.mean(resid ** 2))), **extra)


def calibration_points(model, m=5, n_frames=11, hop=512, n_harmonics=3, seed=0, cqt_params=CqtParams()):
    """Encode the center frame of ``m`` synthetic tones; returns ``[m, 2]`` (y, p).

    The tones are concatenated into one waveform so a single CQT pass serves
    them all; it is zero-padded at the end when shorter than the longest atom.
    """
    samples = gen_calibration_set(m, n_frames, hop, n_harmonics, seed=seed,
                                  sample_rate=cqt_params.sample_rate, f_base=cqt_params.f_base)
    wave = np.concatenate([s.audio.samples for s in samples])
    if len(wave) < cqt_params.longest_window:
        wave = np.pad(wave, (0, cqt_params.longest_window - len(wave)))
    cqt = compute_cqt(AudioBuffer(wave, cqt_params.sample_rate), cqt_params)
    frames = [i * n_frames + s.center_frame for i, s in enumerate(samples)]
    k = model.cfg.k_star
    y = model.encode(cqt.values[frames, k:k + model.cfg.slice_width]).y
    return np.column_stack([y, [s.f0_semitones for s in samples]])


def calibrate_model(model, m=5, n_frames=11, hop=512, n_harmonics=3, seed=0, cqt_params=CqtParams(),
                    checkpoint_hash=""):
    pts = calibration_points(model, m, n_frames, hop, n_harmonics, seed, cqt_params)
    return fit(pts, f_base=cqt_params.f_base, k_star=model.cfg.k_star, checkpoint_hash=checkpoint_hash)
