"""Desk-scale end-to-end runs on the synthetic corpus.

A run synthesizes train and held-out corpora, trains a reduced model,
calibrates it on synthetic tones and scores the held-out split. Trained
weights are cached under a key derived from every setting that affects
them, so repeated evaluations (acceptance checks, ablation tables) reuse
earlier training.
"""

from dataclasses import asdict, dataclass, field, replace
import hashlib
import json
import logging
import os
import time

import numpy as np

from . import calibration as cal
from .audio import AudioBuffer, mix_at_snr
from .cqt import CqtParams, compute_cqt
from .eval import PitchTrack, concat_tracks, evaluate
from .model import SpiceConfig, SpiceModel, build_frame_pool, train
from .synth import CorpusConfig, gen_training_corpus, pink_noise

log = logging.getLogger(__name__)

DEFAULT_CACHE = os.environ.get("SPICE_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "spice_pitch"))


@dataclass
class DeskConfig:
    n_train: int = 200
    n_eval: int = 40
    train_seed: int = 0
    eval_seed: int = 10_000
    noise_seed: int = 20_000
    n_noise_tracks: int = 32
    noise_seconds: float = 4.0
    steps: int = 15_000
    cal_m: int = 10
    cal_seed: int = 0
    eval_snr_db: float = 10.0
    model: dict = field(default_factory=lambda: {"d_enc": 16, "d_dec": 8})

    def model_config(self):
        return SpiceConfig(**self.model)

    def train_key(self):
        """Hash of everything that determines the trained weights."""
        doc = {
            "model": self.model_config().to_dict(),
            "steps": self.steps,
            "n_train": self.n_train,
            "train_seed": self.train_seed,
            "corpus": asdict(CorpusConfig(n_items=self.n_train)),
        }
        if doc["model"]["noisy_training"]:
            doc["noise"] = [self.noise_seed, self.n_noise_tracks, self.noise_seconds]
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=list).encode()).hexdigest()[:16]


def noise_tracks(n, seconds, seed, sample_rate=16000):
    rng = np.random.default_rng(seed)
    return [AudioBuffer(pink_noise(int(seconds * sample_rate), rng), sample_rate) for _ in range(n)]


def train_cached(desk, cache_dir=DEFAULT_CACHE, force=False):
    """Return a trained model for ``desk``, training only if not cached."""
    key = desk.train_key()
    run_dir = os.path.join(cache_dir, key)
    path = os.path.join(run_dir, "model.npz")
    if os.path.exists(path) and not force:
        return SpiceModel.load(path), run_dir
    os.makedirs(run_dir, exist_ok=True)
    cfg = desk.model_config()
    items = gen_training_corpus(CorpusConfig(n_items=desk.n_train), seed=desk.train_seed)
    noises = None
    if cfg.noisy_training:
        noises = noise_tracks(desk.n_noise_tracks, desk.noise_seconds, desk.noise_seed)
    pool = build_frame_pool([it.audio for it in items], cfg, noises=noises, seed=desk.train_seed)
    model = SpiceModel(cfg)
    t0 = time.perf_counter()
    train(model, pool, desk.steps, log_path=os.path.join(run_dir, "train_log.csv"), log_every=50)
    elapsed = time.perf_counter() - t0
    tmp = path + ".tmp.npz"
    model.save(tmp, meta={"train_seconds": elapsed, "desk": asdict(desk)})
    os.replace(tmp, path)
    return model, run_dir


@dataclass
class EvalSet:
    """CQT frames and frame-level truth for the held-out corpus."""

    cqts: list
    truth: list
    hop_sec: float


def eval_set(desk, snr_db=None, cqt_params=CqtParams()):
    items = gen_training_corpus(CorpusConfig(n_items=desk.n_eval), seed=desk.eval_seed)
    noises = noise_tracks(desk.n_noise_tracks, desk.noise_seconds, desk.noise_seed + 1) if snr_db is not None else None
    cqts, truth = [], []
    for i, it in enumerate(items):
        audio = it.audio if snr_db is None else mix_at_snr(it.audio, noises[i % len(noises)], snr_db)
        c = compute_cqt(audio, cqt_params)
        f0 = it.f0_hz[:c.n_frames]
        p = np.full(len(f0), np.nan)
        p[f0 > 0] = cal.hz_to_semitones(f0[f0 > 0], cqt_params.f_base)
        cqts.append(c.values)
        truth.append(p)
    return EvalSet(cqts, truth, cqt_params.hop_length / cqt_params.sample_rate)


@dataclass
class Codes:
    y: np.ndarray
    confidence: np.ndarray
    truth: np.ndarray
    hop_sec: float


def encode_eval(model, es):
    k = model.cfg.k_star
    w = model.cfg.slice_width
    out = model.encode(np.concatenate([c[:, k:k + w] for c in es.cqts]))
    return Codes(out.y, out.confidence, np.concatenate(es.truth), es.hop_sec)


def score(codes, calib, bins=10):
    est = PitchTrack(codes.hop_sec, calib.predict(codes.y), codes.confidence)
    truth = PitchTrack(codes.hop_sec, codes.truth)
    return evaluate(est, truth, bins)


def linearity(codes):
    """|corr(y, log2 f0)| over truth-voiced frames."""
    v = ~np.isnan(codes.truth)
    return float(abs(np.corrcoef(codes.y[v], codes.truth[v])[0, 1]))


def rpa_fast(codes, intercept, slope):
    v = ~np.isnan(codes.truth)
    return 100.0 * float(np.mean(np.abs(intercept + slope * codes.y[v] - codes.truth[v]) < 0.5))


def run_desk(desk, cache_dir=DEFAULT_CACHE, noisy_eval=False):
    """Train (or load), calibrate and evaluate; returns a flat results dict."""
    model, run_dir = train_cached(desk, cache_dir)
    calib = cal.calibrate_model(model, m=desk.cal_m, seed=desk.cal_seed)
    codes = encode_eval(model, eval_set(desk))
    report = score(codes, calib)
    res = {
        "key": desk.train_key(),
        "run_dir": run_dir,
        "rpa": report.rpa,
        "vrr_at_10fa": report.vrr_at_10fa,
        "linearity": linearity(codes),
        "calibration": calib.to_dict(),
        "train_seconds": _train_seconds(run_dir),
    }
    if noisy_eval:
        ncodes = encode_eval(model, eval_set(desk, snr_db=desk.eval_snr_db))
        res["rpa_noisy"] = score(ncodes, calib).rpa
    return res


def _train_seconds(run_dir):
    try:
        from .nn.checkpoint import read_header
        return read_header(os.path.join(run_dir, "model.npz"))["meta"].get("train_seconds")
    except (OSError, KeyError, ValueError):
        return None


def calibration_spread(model, codes, ms=(2, 3, 5, 10), repeats=100, seed=0):
    """RPA quantiles over repeated calibrations at each M."""
    out = {}
    for m in ms:
        rpas = []
        for r in range(repeats):
            pts = cal.calibration_points(model, m=m, seed=seed * 1_000_003 + m * 1000 + r)
            try:
                c = cal.fit(pts)
            except cal.CalibrationError:
                rpas.append(0.0)
                continue
            rpas.append(rpa_fast(codes, c.intercept, c.slope))
        a = np.array(rpas)
        lo, hi = np.quantile(a, [0.025, 0.975])
        out[m] = {"q025": float(lo), "q975": float(hi), "spread": float(hi - lo), "median": float(np.median(a))}
    return out


ABLATIONS = {
    "baseline": {},
    "no_recon": {"w_recon": 0.0},
    "l1": {"loss_kind": "l1"},
    "l2": {"loss_kind": "l2"},
    "no_augment": {"augment_octaves": False},
}


def ablation_desk(desk, name_or_overrides):
    over = ABLATIONS[name_or_overrides] if isinstance(name_or_overrides, str) else name_or_overrides
    return replace(desk, model={**desk.model, **over})


def noisy_desk(desk):
    return replace(desk, model={**desk.model, "noisy_training": True, "w_pitch": 3e5})
