"""Pitch encoder/decoder, training losses, training loop and inference.

The encoder maps a 128-bin CQT slice to a scalar pitch code ``y`` and a
confidence ``c``. Training draws two slices of the same frame at random bin
offsets ``k1, k2`` and asks that ``y1 - y2 = sigma * (k1 - k2)``; a decoder
reconstructs the slice from ``y`` alone. The confidence head sees the
embedding through a stop-gradient and regresses ``1 - e / sigma``.
"""

from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
import logging
import time

import numpy as np

from . import nn
from .audio import AudioBuffer, mix_at_snr, pitch_shift_octaves
from .cqt import CqtParams, compute_cqt
from .nn import checkpoint as ckpt
from .nn.layers import LayerSpec, NetworkSpec, Sequential
from .nn.tensor import NonFiniteError

log = logging.getLogger(__name__)

SLICE_WIDTH = 128
LOSS_KINDS = ("huber", "l1", "l2")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class SpiceConfig:
    slice_width: int = SLICE_WIDTH
    k_min: int = 0
    k_max: int = 8
    bins_per_octave: int = 24
    f_min: float = 110.0
    f_max: float = 880.0
    tau_factor: float = 0.25
    w_pitch: float = 1e4
    w_recon: float = 1.0
    w_conf: float = 1.0
    lr: float = 1e-4
    batch_size: int = 64
    d_enc: int = 64
    d_dec: int = 32
    augment_octaves: bool = True
    noisy_training: bool = False
    snr_db: tuple = (-5.0, 25.0)
    loss_kind: str = "huber"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if not 0 <= self.k_min <= self.k_max:
            raise ValueError("need 0 <= k_min <= k_max")
        if not 0 < self.f_min < self.f_max:
            raise ValueError("need 0 < f_min < f_max")
        self.snr_db = tuple(self.snr_db)

    @property
    def sigma(self):
        """Code units per CQT bin; maps [f_min, f_max] onto a unit interval."""
        return 1.0 / (self.bins_per_octave * np.log2(self.f_max / self.f_min))

    @property
    def tau(self):
        return self.tau_factor * self.sigma

    @property
    def k_star(self):
        """Slice offset used at inference and calibration."""
        return int(round((self.k_min + self.k_max) / 2))

    @classmethod
    def noisy_defaults(cls, **kw):
        kw.setdefault("w_pitch", 3e5)
        kw.setdefault("noisy_training", True)
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["snr_db"] = list(self.snr_db)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# --- network --------------------------------------------------------------

ENC_MULT = (1, 2, 4, 8, 8, 8)
HIDDEN = 48


def network_spec(cfg):
    """Layer stacks for the encoder trunk, both heads and the decoder.

    Six same-padded conv3 blocks with ceil-mode max-pooling take the 128-bin
    slice to width 2, so the embedding is ``2 * 8 * d_enc`` (1024 for d=64).
    The decoder mirrors this: dense layers to ``2 * 8 * d_dec``, then six
    stride-2 transposed convs back to width 128 and a final linear conv.
    """
    trunk = []
    c_in = 1
    width = cfg.slice_width
    for m in ENC_MULT:
        c_out = cfg.d_enc * m
        trunk += [
            LayerSpec("conv", c_in, c_out, kernel=3, padding=1),
            LayerSpec("batchnorm", c_out, c_out),
            LayerSpec("relu"),
            LayerSpec("maxpool", kernel=3, stride=2, ceil_mode=True),
        ]
        c_in = c_out
        width = -(-(width - 3) // 2) + 1
    trunk.append(LayerSpec("flatten"))
    emb = c_in * width

    pitch = [LayerSpec("dense", emb, HIDDEN), LayerSpec("relu"), LayerSpec("dense", HIDDEN, 1)]
    conf = [LayerSpec("dense", emb, 1), LayerSpec("sigmoid")]

    dec_mult = tuple(reversed(ENC_MULT))
    c0 = cfg.d_dec * dec_mult[0]
    dec = [
        LayerSpec("dense", 1, HIDDEN), LayerSpec("relu"),
        LayerSpec("dense", HIDDEN, c0 * width), LayerSpec("relu"),
        LayerSpec("reshape", shape=(c0, width)),
    ]
    c_in = c0
    outs = [cfg.d_dec * m for m in dec_mult[1:]] + [cfg.d_dec]
    for c_out in outs:
        dec += [
            LayerSpec("conv_transpose", c_in, c_out, kernel=3, stride=2, padding=1, output_padding=1),
            LayerSpec("batchnorm", c_out, c_out),
            LayerSpec("relu"),
        ]
        c_in = c_out
    dec += [LayerSpec("conv", c_in, 1, kernel=3, padding=1), LayerSpec("flatten")]
    return NetworkSpec({"trunk": trunk, "pitch_head": pitch, "conf_head": conf, "decoder": dec})


@dataclass
class ModelOutput:
    y: np.ndarray
    confidence: np.ndarray
    embedding: np.ndarray = None


class SpiceModel:
    def __init__(self, cfg, spec=None):
        self.cfg = cfg
        self.spec = spec or network_spec(cfg)
        rng = np.random.default_rng(cfg.seed)
        dtype = np.dtype(cfg.dtype)
        self.stacks = {name: Sequential(layers, rng, dtype) for name, layers in self.spec.stacks.items()}
        self.step = 0
        self.set_training(True)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def set_training(self, flag):
        self.training = flag
        for s in self.stacks.values():
            s.set_training(flag)

    def parameters(self, stacks=None):
        out = {}
        for name, s in self.stacks.items():
            if stacks is None or name in stacks:
                out.update({f"{name}/{k}": v for k, v in s.parameters().items()})
        return out

    def buffers(self):
        out = {}
        for name, s in self.stacks.items():
            out.update({f"{name}/{k}": v for k, v in s.buffers().items()})
        return out

    def n_parameters(self, stacks=None):
        return sum(p.size for p in self.parameters(stacks).values())

    # graph-building forward passes
    def encode_tensor(self, x):
        """``x [n, 128]`` tensor -> (y [n, 1], c [n, 1], embedding)."""
        h = nn.tensor.reshape(x, (x.shape[0], 1, x.shape[1]))
        emb = self.stacks["trunk"](h)
        y = self.stacks["pitch_head"](emb)
        c = self.stacks["conf_head"](nn.stop_gradient(emb))
        return y, c, emb

    def decode_tensor(self, y):
        return self.stacks["decoder"](y)

    # numpy convenience wrappers (inference mode)
    def encode(self, slices, batch=512, with_embedding=False):
        slices = np.atleast_2d(np.asarray(slices, dtype=self.dtype))
        if slices.shape[1] != self.cfg.slice_width:
            raise ValueError(f"slices must have {self.cfg.slice_width} bins, got {slices.shape[1]}")
        was = self.training
        self.set_training(False)
        ys, cs, es = [], [], []
        try:
            for lo in range(0, len(slices), batch):
                y, c, emb = self.encode_tensor(nn.Tensor(slices[lo:lo + batch]))
                ys.append(y.data[:, 0])
                cs.append(c.data[:, 0])
                if with_embedding:
                    es.append(emb.data)
        finally:
            self.set_training(was)
        return ModelOutput(np.concatenate(ys).astype(np.float64), np.concatenate(cs).astype(np.float64),
                           np.concatenate(es) if with_embedding else None)

    def decode(self, y, batch=512):
        y = np.asarray(y, dtype=self.dtype).reshape(-1, 1)
        if not np.isfinite(y).all():
            raise ValueError("decode input must be finite")
        was = self.training
        self.set_training(False)
        try:
            out = [self.decode_tensor(nn.Tensor(y[lo:lo + batch])).data for lo in range(0, len(y), batch)]
        finally:
            self.set_training(was)
        return np.concatenate(out)

    # persistence
    def save(self, path, meta=None, optimizer_state=True):
        meta = dict(meta or {})
        meta["config"] = self.cfg.to_dict()
        ckpt.save(path, self.parameters(), self.buffers(), self.spec.to_dict(), self.step, meta)

    @classmethod
    def load(cls, path):
        header = ckpt.read_header(path)
        cfg = SpiceConfig.from_dict(header["meta"]["config"])
        model = cls(cfg, NetworkSpec.from_dict(header["network"]))
        ckpt.load(path, model.parameters(), model.buffers())
        model.step = header["step"]
        model.set_training(False)
        return model


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


# --- losses ---------------------------------------------------------------

def pitch_error(y1, y2, k1, k2, sigma):
    """Relative pitch error ``|(y1 - y2) - sigma (k1 - k2)|`` on plain numbers/arrays."""
    return np.abs((np.asarray(y1) - np.asarray(y2)) - sigma * (np.asarray(k1) - np.asarray(k2)))


def huber(x, tau):
    """Quadratic for ``|x| <= tau``, linear beyond, continuous with its slope."""
    a = np.abs(x)
    return np.where(a <= tau, 0.5 * a * a, 0.5 * tau * tau + tau * (a - tau))


def _robust(e, kind, tau):
    """Elementwise robust loss of a nonnegative error tensor."""
    if kind == "l1":
        return e
    if kind == "l2":
        return 0.5 * nn.square(e)
    quad = e.data <= tau
    sq = 0.5 * nn.square(e)
    lin = e * tau - 0.5 * tau * tau
    mask = nn.Tensor(quad.astype(e.dtype))
    return sq * mask + lin * (1.0 - mask)


def _error(y1, y2, dk, sigma):
    return nn.absolute((y1 - y2) - nn.Tensor(sigma * dk))


def loss_pitch(y1, y2, k1, k2, cfg):
    """Mean robust pitch error.

    ``y1`` and ``y2`` are lists of encodings of the two slices; in clean mode
    each has one entry, in noisy mode ``[clean, noisy]`` and the loss averages
    over all four pairings.
    """
    dk = (np.asarray(k1, dtype=float) - np.asarray(k2, dtype=float))[:, None]
    terms = []
    for a in y1:
        for b in y2:
            terms.append(nn.mean(_robust(_error(a, b, dk, cfg.sigma), cfg.loss_kind, cfg.tau)))
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out * (1.0 / len(terms))


def loss_recon(targets, recons):
    """``(1/T) sum_t sum_i ||x_ti - xhat_ti||^2``, averaged over reconstructions.

    ``targets`` is ``[x1, x2]`` (clean slices); ``recons`` is a list of
    ``[xhat1, xhat2]`` pairs, one per encoder input variant.
    """
    T = targets[0].shape[0]
    total = None
    for pair in recons:
        for x, xhat in zip(targets, pair):
            term = nn.total(nn.square(xhat - x))
            total = term if total is None else total + term
    return total * (1.0 / (T * len(recons)))


def loss_conf(c1, c2, y1, y2, k1, k2, cfg):
    """Confidence regression toward ``1 - e / sigma`` (clamped to [0, 1]).

    ``y`` values enter through stop-gradient copies. Lists hold one entry per
    input variant; variant ``p`` uses the error between ``y1[p]`` and ``y2[p]``.
    """
    dk = (np.asarray(k1, dtype=float) - np.asarray(k2, dtype=float))[:, None]
    total = None
    for a, b, ca, cb in zip(y1, y2, c1, c2):
        e = _error(nn.stop_gradient(a), nn.stop_gradient(b), dk, cfg.sigma)
        target = nn.Tensor(np.clip(e.data / cfg.sigma, 0.0, 1.0))
        term = nn.mean(nn.square((1.0 - ca) - target)) + nn.mean(nn.square((1.0 - cb) - target))
        total = term if total is None else total + term
    return total * (1.0 / len(y1))


def loss_total(l_pitch, l_recon, l_conf, cfg):
    return l_pitch * cfg.w_pitch + l_recon * cfg.w_recon + l_conf * cfg.w_conf


@dataclass
class StepLosses:
    total: float
    pitch: float
    recon: float
    conf: float


def forward_losses(model, x1, x2, k1, k2, x1n=None, x2n=None):
    """Build the loss graph for one batch; returns the four loss tensors."""
    cfg = model.cfg
    T = x1.shape[0]
    variants = [(x1, x2)] if x1n is None else [(x1, x2), (x1n, x2n)]
    X = np.concatenate([a for pair in variants for a in pair], axis=0).astype(model.dtype)
    y, c, _ = model.encode_tensor(nn.Tensor(X))
    ys = nn.split(y, 2 * len(variants))
    cs = nn.split(c, 2 * len(variants))
    y1s, y2s = ys[0::2], ys[1::2]
    c1s, c2s = cs[0::2], cs[1::2]
    l_pitch = loss_pitch(y1s, y2s, k1, k2, cfg)
    if cfg.w_recon != 0.0:
        xhat = nn.split(model.decode_tensor(y), 2 * len(variants))
        targets = [nn.Tensor(x1.astype(model.dtype)), nn.Tensor(x2.astype(model.dtype))]
        l_recon = loss_recon(targets, [xhat[2 * i:2 * i + 2] for i in range(len(variants))])
    else:
        l_recon = nn.Tensor(0.0)
    l_conf = loss_conf(c1s, c2s, y1s, y2s, k1, k2, cfg)
    return loss_total(l_pitch, l_recon, l_conf, cfg), l_pitch, l_recon, l_conf


# --- training -------------------------------------------------------------

@dataclass
class FramePool:
    """All CQT frames available for training, optionally with noisy twins."""

    clean: np.ndarray
    noisy: np.ndarray = None

    def __len__(self):
        return len(self.clean)


def build_frame_pool(audios, cfg, cqt_params=CqtParams(), noises=None, seed=0):
    """CQT every track (and its octave-shifted copies); stack the frames.

    In noisy mode each (track, shift) copy is mixed with a randomly chosen
    noise track at an SNR drawn uniformly from ``cfg.snr_db``.
    """
    if not audios:
        raise ValueError("empty corpus")
    if cfg.noisy_training and not noises:
        raise ValueError("noisy training needs noise tracks")
    rng = np.random.default_rng(seed)
    shifts = (-1, 0, 1) if cfg.augment_octaves else (0,)
    clean, noisy = [], []
    for audio in audios:
        for n in shifts:
            shifted = pitch_shift_octaves(audio, n)
            if len(shifted) < cqt_params.longest_window:
                continue
            clean.append(compute_cqt(shifted, cqt_params).values.astype(np.float32))
            if cfg.noisy_training:
                noise = noises[int(rng.integers(len(noises)))]
                snr = rng.uniform(*cfg.snr_db)
                noisy.append(compute_cqt(mix_at_snr(shifted, noise, snr), cqt_params).values.astype(np.float32))
    if not clean:
        raise ValueError("no track is long enough for the CQT")
    return FramePool(np.concatenate(clean), np.concatenate(noisy) if noisy else None)


class BatchSampler:
    """Shuffled passes over the pool; each frame gets random offsets k1, k2."""

    def __init__(self, n, cfg, rng):
        self.n = n
        self.cfg = cfg
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self):
        T = self.cfg.batch_size
        if self.pos + T > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos:self.pos + T]
        self.pos += T
        k1 = self.rng.integers(self.cfg.k_min, self.cfg.k_max + 1, size=len(idx))
        k2 = self.rng.integers(self.cfg.k_min, self.cfg.k_max + 1, size=len(idx))
        return idx, k1, k2


def _slices(frames, k, width):
    cols = k[:, None] + np.arange(width)[None, :]
    return np.take_along_axis(frames, cols, axis=1)


def train(model, pool, steps, log_path=None, checkpoint_dir=None, checkpoint_every=0, log_every=10,
          callback=None):
    """Run ``steps`` optimisation steps of Adam on ``pool``.

    Writes ``step,loss_total,loss_pitch,loss_recon,loss_conf`` rows to
    ``log_path`` every ``log_every`` steps and saves a checkpoint every
    ``checkpoint_every`` steps. Returns the list of logged losses.
    """
    cfg = model.cfg
    if len(pool) < cfg.batch_size:
        raise ValueError(f"pool has {len(pool)} frames, fewer than one batch")
    if cfg.noisy_training and pool.noisy is None:
        raise ValueError("noisy training needs a pool with noisy frames")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    sampler = BatchSampler(len(pool), cfg, rng)
    opt = nn.Adam(model.parameters().values(), lr=cfg.lr)
    width = cfg.slice_width
    model.set_training(True)
    history = []
    log_fh = open(log_path, "w", buffering=1) if log_path else None
    if log_fh:
        log_fh.write("step,loss_total,loss_pitch,loss_recon,loss_conf\n")
    t0 = time.perf_counter()
    try:
        for _ in range(steps):
            idx, k1, k2 = sampler.next()
            frames = pool.clean[idx]
            x1, x2 = _slices(frames, k1, width), _slices(frames, k2, width)
            x1n = x2n = None
            if cfg.noisy_training:
                nframes = pool.noisy[idx]
                x1n, x2n = _slices(nframes, k1, width), _slices(nframes, k2, width)
            try:
                total, lp, lr_, lc = forward_losses(model, x1, x2, k1, k2, x1n, x2n)
                if not np.isfinite(total.data):
                    raise NonFiniteError("loss")
                opt.zero_grad()
                total.backward()
                opt.step()
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite values at step {model.step}: {exc}") from exc
            model.step += 1
            losses = StepLosses(total.item(), lp.item(), lr_.item(), lc.item())
            if model.step % log_every == 0 or model.step == 1:
                history.append((model.step, losses))
                if log_fh:
                    log_fh.write(f"{model.step},{losses.total:.9g},{losses.pitch:.9g},"
                                 f"{losses.recon:.9g},{losses.conf:.9g}\n")
                if model.step % (log_every * 100) == 0:
                    log.info("step %d loss %.5g pitch %.5g recon %.5g conf %.5g (%.1fs)", model.step,
                             losses.total, losses.pitch, losses.recon, losses.conf, time.perf_counter() - t0)
            if checkpoint_dir and checkpoint_every and model.step % checkpoint_every == 0:
                model.save(f"{checkpoint_dir}/step_{model.step:07d}.npz",
                           meta={"losses": asdict(losses), "config_digest": cfg.digest()})
            if callback:
                callback(model, losses)
    finally:
        if log_fh:
            log_fh.close()
        model.set_training(False)
    return history


# --- inference ------------------------------------------------------------

@dataclass
class InferenceResult:
    times: np.ndarray
    y: np.ndarray
    confidence: np.ndarray
    pitch_semitones: np.ndarray = None
    pitch_hz: np.ndarray = None
    extra: dict = field(default_factory=dict)


def frame_codes(model, cqt, k=None):
    """Encode every frame of a CQT matrix at slice offset ``k`` (default ``k*``)."""
    k = model.cfg.k_star if k is None else k
    values = cqt.values
    if values.shape[0] == 0:
        raise ValueError("no frames to encode")
    return model.encode(values[:, k:k + model.cfg.slice_width])


def infer(audio, model, calibration=None, cqt_params=CqtParams()):
    """Per-frame pitch code and confidence; absolute pitch when calibrated."""
    if not isinstance(audio, AudioBuffer):
        raise TypeError("audio must be an AudioBuffer")
    cqt = compute_cqt(audio, cqt_params)
    out = frame_codes(model, cqt)
    res = InferenceResult(cqt.frame_times(), out.y, out.confidence)
    if calibration is not None:
        if calibration.k_star != model.cfg.k_star:
            raise ValueError(f"calibration was fitted at offset {calibration.k_star}, model infers at "
                             f"{model.cfg.k_star}")
        res.pitch_semitones = calibration.predict(out.y)
        res.pitch_hz = calibration.to_hz(res.pitch_semitones)
    return res


def write_inference_csv(path, res):
    cols = ["time_sec", "y", "confidence"]
    data = [res.times, res.y, res.confidence]
    if res.pitch_semitones is not None:
        cols += ["pitch_semitones", "pitch_hz"]
        data += [res.pitch_semitones, res.pitch_hz]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in zip(*data):
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
