"""Pitch-tracking metrics, ground-truth loading and report writing.

Tracks store pitch in semitones above C1 with NaN marking unvoiced frames.
Raw pitch accuracy (RPA) is the share of truth-voiced frames whose estimate
is within half a semitone; voicing recall (VRR) is the recall of voiced
frames when the confidence threshold admits 10% of unvoiced frames.
"""

import csv
from dataclasses import dataclass, field
import json
import os

import numpy as np

from .calibration import hz_to_semitones

UNVOICED = np.nan
TRUTH_FORMATS = ("semitone_csv", "hz_csv")


class EvalError(ValueError):
    pass


@dataclass
class PitchTrack:
    hop: float
    pitch: np.ndarray
    confidence: np.ndarray = None
    start: float = 0.0

    def __post_init__(self):
        self.pitch = np.asarray(self.pitch, dtype=float).reshape(-1)
        if not self.hop > 0:
            raise EvalError("hop must be positive")
        if np.isinf(self.pitch).any():
            raise EvalError("pitch values must be finite or NaN (unvoiced)")
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=float).reshape(-1)
            if self.confidence.shape != self.pitch.shape:
                raise EvalError("confidence and pitch lengths differ")

    def __len__(self):
        return len(self.pitch)

    @property
    def voiced(self):
        return ~np.isnan(self.pitch)

    def times(self):
        return self.start + np.arange(len(self)) * self.hop


def _read_rows(path):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((lineno, [c.strip() for c in row]))
    if rows:
        try:
            float(rows[0][1][0])
        except ValueError:
            rows = rows[1:]  # header
    return rows


def _uniform_hop(times, path, rtol=1e-3):
    if len(times) < 2:
        raise EvalError(f"{path}: need at least 2 frames to determine the hop")
    d = np.diff(times)
    hop = float(np.median(d))
    if hop <= 0 or np.any(np.abs(d - hop) > rtol * hop + 1e-9):
        raise EvalError(f"{path}: timestamps are not uniformly spaced")
    return hop


def load_ground_truth(path, fmt="hz_csv", label_hop=None):
    """Read ``time,value`` rows; value 0 or empty means unvoiced."""
    if fmt not in TRUTH_FORMATS:
        raise EvalError(f"unknown truth format {fmt!r}; expected one of {TRUTH_FORMATS}")
    times, values = [], []
    for lineno, row in _read_rows(path):
        if len(row) < 2 and not (len(row) == 1 and row[0]):
            raise EvalError(f"{path}:{lineno}: expected time,value")
        try:
            t = float(row[0])
            v = float(row[1]) if len(row) > 1 and row[1] else 0.0
        except ValueError as exc:
            raise EvalError(f"{path}:{lineno}: malformed row {row!r}") from exc
        if not np.isfinite(t) or not np.isfinite(v):
            raise EvalError(f"{path}:{lineno}: non-finite value")
        if v < 0:
            raise EvalError(f"{path}:{lineno}: negative pitch {v}")
        times.append(t)
        values.append(v)
    times = np.array(times)
    hop = _uniform_hop(times, path)
    if label_hop is not None and abs(hop - label_hop) > 1e-3 * label_hop:
        raise EvalError(f"{path}: file hop {hop:g} s does not match declared hop {label_hop:g} s")
    values = np.array(values)
    pitch = np.full(len(values), UNVOICED)
    v = values > 0
    pitch[v] = hz_to_semitones(values[v]) if fmt == "hz_csv" else values[v]
    return PitchTrack(label_hop or hop, pitch, start=float(times[0]))


def load_estimate(path):
    """Read an inference CSV (needs ``pitch_semitones``; ``confidence`` optional)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "time_sec" not in cols:
            raise EvalError(f"{path}: missing time_sec column")
        if "pitch_semitones" not in cols:
            raise EvalError(f"{path}: no pitch_semitones column; run inference with a calibration")
        rows = list(reader)
    try:
        times = np.array([float(r["time_sec"]) for r in rows])
        pitch = np.array([float(r["pitch_semitones"]) if r["pitch_semitones"] else UNVOICED for r in rows])
        conf = np.array([float(r["confidence"]) for r in rows]) if "confidence" in cols else None
    except (TypeError, ValueError) as exc:
        raise EvalError(f"{path}: malformed row") from exc
    return PitchTrack(_uniform_hop(times, path), pitch, conf, start=float(times[0]))


def resample_track(track, target_hop, n_frames=None):
    """Nearest-neighbour resampling onto ``start + j * target_hop``."""
    if not target_hop > 0:
        raise EvalError("target_hop must be positive")
    if n_frames is None:
        span = (len(track) - 1) * track.hop
        n_frames = int(np.floor(span / target_hop + 1e-9)) + 1
    t = np.arange(n_frames) * target_hop
    idx = np.clip(np.floor(t / track.hop + 0.5 + 1e-9).astype(int), 0, len(track) - 1)
    conf = None if track.confidence is None else track.confidence[idx]
    return PitchTrack(target_hop, track.pitch[idx], conf, start=track.start)


def align(estimate, truth):
    """Resample ``truth`` onto the estimate's frame grid; trim both to the overlap."""
    if estimate.start != truth.start:
        # shift truth to the estimate's time origin before nearest-neighbour lookup
        offset = int(round((estimate.start - truth.start) / truth.hop))
        if offset > 0:
            truth = PitchTrack(truth.hop, truth.pitch[offset:], start=estimate.start)
    t = resample_track(truth, estimate.hop)
    n = min(len(estimate), len(t))
    e = PitchTrack(estimate.hop, estimate.pitch[:n],
                   None if estimate.confidence is None else estimate.confidence[:n], estimate.start)
    return e, PitchTrack(t.hop, t.pitch[:n], start=t.start)


def _check_pair(estimate, truth):
    if len(estimate) != len(truth):
        raise EvalError(f"length mismatch: estimate {len(estimate)}, truth {len(truth)}")
    if abs(estimate.hop - truth.hop) > 1e-9:
        raise EvalError("estimate and truth hops differ; resample first")


def rpa(estimate, truth, threshold=0.5):
    """Percent of truth-voiced frames with ``|p_hat - p| < threshold`` semitones."""
    _check_pair(estimate, truth)
    v = truth.voiced
    if not v.any():
        raise EvalError("truth has no voiced frames")
    err = np.abs(estimate.pitch[v] - truth.pitch[v])
    hit = np.where(np.isnan(err), False, err < threshold)
    return 100.0 * hit.mean()


def _scores(estimate, truth):
    if estimate.confidence is None:
        raise EvalError("estimate carries no confidence")
    _check_pair(estimate, truth)
    v = truth.voiced
    if v.all():
        raise EvalError("truth has no unvoiced frames")
    if not v.any():
        raise EvalError("truth has no voiced frames")
    return estimate.confidence, v


def roc_curve(confidence, voiced):
    """(fa, recall) for thresholds at every observed score, plus (0,0).

    A frame is predicted voiced when its confidence is >= the threshold.
    """
    c = np.asarray(confidence, dtype=float)
    v = np.asarray(voiced, dtype=bool)
    order = np.argsort(-c, kind="stable")
    c, v = c[order], v[order]
    # keep the last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(c))[0], len(c) - 1]
    tp = np.cumsum(v)[last]
    fp = np.cumsum(~v)[last]
    fa = np.r_[0.0, fp / max((~v).sum(), 1)]
    rec = np.r_[0.0, tp / max(v.sum(), 1)]
    thr = np.r_[np.inf, c[last]]
    return fa, rec, thr


def roc(estimate, truth):
    c, v = _scores(estimate, truth)
    fa, rec, _ = roc_curve(c, v)
    return list(zip(fa.tolist(), rec.tolist()))


def recall_at_fa(fa, rec, target):
    """Recall at the last sweep point with FA <= target, interpolated to exactly ``target``."""
    i = int(np.nonzero(fa <= target + 1e-12)[0][-1])
    if fa[i] >= target or i == len(fa) - 1:
        return float(rec[i])
    w = (target - fa[i]) / (fa[i + 1] - fa[i])
    return float(rec[i] + w * (rec[i + 1] - rec[i]))


def vrr_at_fa(estimate, truth, fa_target=0.10):
    c, v = _scores(estimate, truth)
    fa, rec, _ = roc_curve(c, v)
    return 100.0 * recall_at_fa(fa, rec, fa_target)


@dataclass
class FrequencyBin:
    lo: float
    hi: float
    count: int
    mean_abs_error: float


def error_by_frequency(estimate, truth, bins=10):
    """Mean |error| over truth-voiced frames, grouped by truth pitch.

    ``bins`` is a count (equal-population bins from truth quantiles) or an
    array of semitone edges. Frames without an estimate are skipped.
    """
    _check_pair(estimate, truth)
    ok = truth.voiced & estimate.voiced
    if not ok.any():
        raise EvalError("no frames voiced in both truth and estimate")
    p = truth.pitch[ok]
    err = np.abs(estimate.pitch[ok] - p)
    if np.ndim(bins) == 0:
        n = int(bins)
        if n < 1:
            raise EvalError("need at least one bin")
        edges = np.quantile(p, np.linspace(0, 1, n + 1))
    else:
        edges = np.asarray(bins, dtype=float)
        if len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise EvalError("bin edges must be increasing")
    idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, len(edges) - 2)
    inside = (p >= edges[0]) & (p <= edges[-1])
    out = []
    for b in range(len(edges) - 1):
        sel = inside & (idx == b)
        cnt = int(sel.sum())
        out.append(FrequencyBin(float(edges[b]), float(edges[b + 1]), cnt,
                                float(err[sel].mean()) if cnt else float("nan")))
    return out


@dataclass
class EvalReport:
    rpa: float
    vrr_at_10fa: float
    roc: list = field(default_factory=list)
    error_by_freq: list = field(default_factory=list)
    n_voiced: int = 0
    n_total: int = 0

    def to_dict(self):
        return {
            "rpa": self.rpa,
            "vrr_at_10fa": self.vrr_at_10fa,
            "n_voiced": self.n_voiced,
            "n_total": self.n_total,
            "roc": [list(p) for p in self.roc],
            "error_by_freq": [vars(b) for b in self.error_by_freq],
        }

    def to_text(self):
        lines = [
            f"{'metric':<14}{'value':>10}",
            f"{'RPA (%)':<14}{self.rpa:>10.2f}",
            f"{'VRR@10%FA (%)':<14}" + (f"{self.vrr_at_10fa:>10.2f}" if self.vrr_at_10fa is not None
                                         else f"{'n/a':>10}"),
            f"{'voiced':<14}{self.n_voiced:>10d}",
            f"{'frames':<14}{self.n_total:>10d}",
        ]
        if self.error_by_freq:
            lines += ["", f"{'lo (st)':>9}{'hi (st)':>9}{'frames':>8}{'MAE (st)':>10}"]
            lines += [f"{b.lo:>9.2f}{b.hi:>9.2f}{b.count:>8d}{b.mean_abs_error:>10.3f}"
                      for b in self.error_by_freq]
        return "\n".join(lines) + "\n"

    def write(self, outdir, stem="report"):
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, f"{stem}.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        with open(os.path.join(outdir, f"{stem}.txt"), "w") as fh:
            fh.write(self.to_text())
        with open(os.path.join(outdir, "roc.csv"), "w") as fh:
            fh.write("fa_rate,recall\n")
            fh.writelines(f"{a:.9g},{b:.9g}\n" for a, b in self.roc)
        with open(os.path.join(outdir, "error_by_frequency.csv"), "w") as fh:
            fh.write("lo_semitones,hi_semitones,count,mean_abs_error\n")
            fh.writelines(f"{b.lo:.9g},{b.hi:.9g},{b.count},{b.mean_abs_error:.9g}\n"
                          for b in self.error_by_freq)


def concat_tracks(tracks):
    """Join several equally-hopped tracks so metrics pool over all frames."""
    if not tracks:
        raise EvalError("no tracks")
    hop = tracks[0].hop
    if any(abs(t.hop - hop) > 1e-9 for t in tracks):
        raise EvalError("tracks have different hops")
    conf = None
    if all(t.confidence is not None for t in tracks):
        conf = np.concatenate([t.confidence for t in tracks])
    return PitchTrack(hop, np.concatenate([t.pitch for t in tracks]), conf)


def evaluate(estimate, truth, bins=10, fa_target=0.10):
    """Full report for aligned tracks; VRR is None when it cannot be computed."""
    _check_pair(estimate, truth)
    vrr = None
    roc_pts = []
    v = truth.voiced
    if estimate.confidence is not None and v.any() and not v.all():
        c = estimate.confidence
        fa, rec, _ = roc_curve(c, v)
        roc_pts = list(zip(fa.tolist(), rec.tolist()))
        vrr = 100.0 * recall_at_fa(fa, rec, fa_target)
    try:
        ebf = error_by_frequency(estimate, truth, bins)
    except EvalError:
        ebf = []
    return EvalReport(rpa(estimate, truth), vrr, roc_pts, ebf, int(v.sum()), len(truth))


def summarize(values):
    """Mean and standard deviation over replica runs."""
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std(ddof=1)) if len(a) > 1 else 0.0, "n": len(a)}
