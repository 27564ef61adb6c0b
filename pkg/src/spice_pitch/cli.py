"""Command-line entry point: ``spice-pitch <command> [options]``.

Every command accepts ``--config FILE`` (INI, see :mod:`spice_pitch.config`);
flags override file values and the resolved configuration is written next to
the command's outputs. Failures print a single ``error: <kind>: <message>``
line to stderr and exit nonzero.
"""

import argparse
import glob
import json
import logging
import os
import sys

from . import calibration as cal
from . import experiments as ex
from .audio import AudioError, load_wav, resample
from .config import ConfigError, RunConfig
from .cqt import CqtError
from .eval import EvalError, align, concat_tracks, evaluate, load_estimate, load_ground_truth, summarize
from .model import (SpiceModel, TrainingDiverged, build_frame_pool, file_digest, infer, train,
                    write_inference_csv)
from .nn.checkpoint import CheckpointError
from .synth import gen_training_corpus, save_corpus

log = logging.getLogger("spice_pitch")

EXIT_CODES = {"config": 2, "missing-path": 3, "diverged": 4, "input": 5}


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def _load_config(args):
    cfg = RunConfig.read(args.config) if args.config else RunConfig()
    for section, key, dest in OVERRIDES.get(args.command, []):
        val = getattr(args, dest, None)
        if val is not None:
            cfg.set(section, key, val)
    seed = cfg.get("run").seed
    if seed is None:
        seed = int(os.environ.get("SPICE_SEED", "0"))
        cfg.set("run", "seed", seed)
    return cfg, seed


def _require(path):
    if not os.path.exists(path):
        raise CliError("missing-path", f"{path} does not exist")
    return path


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _wavs(directory):
    files = sorted(glob.glob(os.path.join(_require(directory), "*.wav")))
    if not files:
        raise CliError("input", f"no .wav files in {directory}")
    return files


def _load_audio(path, channel=None, rate=16000):
    audio = load_wav(_require(path), channel)
    return audio if audio.sample_rate == rate else resample(audio, rate)


# --- commands -------------------------------------------------------------

def cmd_synth_gen(args):
    cfg, seed = _load_config(args)
    synth = cfg.get("synth")
    synth.validate()
    out = _outdir(args.out)
    items = gen_training_corpus(synth, seed=seed)
    save_corpus(items, out)
    cfg.write(os.path.join(out, "config.ini"), ["run", "synth"])
    print(f"wrote {len(items)} items to {out}")


def cmd_train(args):
    cfg, seed = _load_config(args)
    tr = cfg.get("train")
    if tr.corpus is None:
        raise CliError("config", "no training corpus given (--corpus or [train] corpus)")
    cfg.set("model", "seed", seed)
    mcfg = cfg.get("model")
    out = _outdir(args.out)
    audios = [_load_audio(p) for p in _wavs(tr.corpus)]
    noises = [_load_audio(p) for p in _wavs(tr.noise)] if mcfg.noisy_training and tr.noise else None
    if mcfg.noisy_training and not noises:
        raise CliError("config", "noisy training needs a noise directory (--noise or [train] noise)")
    cfg.write(os.path.join(out, "config.ini"), ["run", "model", "train"])
    pool = build_frame_pool(audios, mcfg, noises=noises, seed=seed)
    model = SpiceModel(mcfg)
    ckdir = _outdir(os.path.join(out, "checkpoints")) if tr.checkpoint_every else None
    train(model, pool, tr.steps, log_path=os.path.join(out, "train_log.csv"), checkpoint_dir=ckdir,
          checkpoint_every=tr.checkpoint_every, log_every=tr.log_every)
    model.save(os.path.join(out, "model.npz"), meta={"config_digest": mcfg.digest()})
    print(f"trained {tr.steps} steps on {len(pool)} frames; model at {os.path.join(out, 'model.npz')}")


def cmd_calibrate(args):
    cfg, seed = _load_config(args)
    c = cfg.get("calibrate")
    model = SpiceModel.load(_require(args.checkpoint))
    calib = cal.calibrate_model(model, m=c.m, n_frames=c.n_frames, hop=c.hop, n_harmonics=c.n_harmonics,
                                seed=seed, checkpoint_hash=file_digest(args.checkpoint))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    _outdir(out_dir)
    calib.save(args.out)
    cfg.write(os.path.splitext(args.out)[0] + ".config.ini", ["run", "calibrate"])
    print(f"b={calib.intercept:.6g} s={calib.slope:.6g} residual_rms={calib.residual_rms:.4g} M={calib.m}")


def cmd_infer(args):
    cfg, _ = _load_config(args)
    channel = cfg.get("infer").voice_channel
    model = SpiceModel.load(_require(args.checkpoint))
    calib = cal.AffineCalibration.load(_require(args.calibration)) if args.calibration else None
    if calib is not None and calib.checkpoint_hash and calib.checkpoint_hash != file_digest(args.checkpoint):
        log.warning("calibration was fitted on a different checkpoint")
    out = _outdir(args.out_dir)
    for path in args.wav:
        res = infer(_load_audio(path, channel), model, calib)
        dest = os.path.join(out, os.path.splitext(os.path.basename(path))[0] + ".csv")
        write_inference_csv(dest, res)
        print(dest)
    cfg.write(os.path.join(out, "config.ini"), ["run", "infer"])


def cmd_eval(args):
    cfg, _ = _load_config(args)
    e = cfg.get("eval")
    if len(args.estimate) != len(args.truth):
        raise CliError("config", "give one --truth per --estimate")
    pairs = sorted(zip(args.estimate, args.truth))
    ests, truths = [], []
    for est_path, truth_path in pairs:
        est = load_estimate(_require(est_path))
        truth = load_ground_truth(_require(truth_path), e.truth_format, e.truth_hop)
        a, b = align(est, truth)
        ests.append(a)
        truths.append(b)
    report = evaluate(concat_tracks(ests), concat_tracks(truths), bins=e.bins)
    out = _outdir(args.out)
    report.write(out)
    cfg.write(os.path.join(out, "config.ini"), ["run", "eval"])
    sys.stdout.write(report.to_text())


def cmd_ablate(args):
    cfg, seed = _load_config(args)
    out = _outdir(args.out)
    base = cfg.get("model")
    # reduced model unless the config or flags say otherwise
    model = {**ex.DeskConfig().model, **cfg.values["model"], "seed": seed}
    desk = ex.DeskConfig(n_train=args.n_train, n_eval=args.n_eval, steps=args.steps, train_seed=seed,
                         cal_m=args.m, model=model)
    rows = []
    for loss in args.losses:
        for recon in args.recon:
            for aug in args.augment:
                over = {"loss_kind": loss, "w_recon": base.w_recon if recon == "on" else 0.0,
                        "augment_octaves": aug == "on"}
                d = ex.ablation_desk(desk, over)
                res = ex.run_desk(d, cache_dir=args.cache)
                rows.append({"loss": loss, "recon": recon, "augment": aug, "rpa": res["rpa"],
                             "vrr_at_10fa": res["vrr_at_10fa"], "linearity": res["linearity"],
                             "key": res["key"]})
                log.info("%s", rows[-1])
    with open(os.path.join(out, "ablation.json"), "w") as fh:
        json.dump({"runs": rows, "rpa": summarize([r["rpa"] for r in rows])}, fh, indent=2)
        fh.write("\n")
    lines = [f"{'loss':<7}{'recon':<7}{'augment':<9}{'RPA':>8}{'VRR':>8}"]
    lines += [f"{r['loss']:<7}{r['recon']:<7}{r['augment']:<9}{r['rpa']:>8.2f}"
              f"{(r['vrr_at_10fa'] if r['vrr_at_10fa'] is not None else float('nan')):>8.2f}" for r in rows]
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "ablation.txt"), "w") as fh:
        fh.write(text)
    cfg.write(os.path.join(out, "config.ini"), ["run", "model"])
    sys.stdout.write(text)


# (command, [(section, key, argparse dest)]) for flag overrides
OVERRIDES = {
    "synth-gen": [("run", "seed", "seed"), ("synth", "n_items", "n_items"),
                  ("synth", "item_seconds", "item_seconds")],
    "train": [("run", "seed", "seed"), ("train", "steps", "steps"), ("train", "corpus", "corpus"),
              ("train", "noise", "noise"), ("train", "checkpoint_every", "checkpoint_every"),
              ("train", "log_every", "log_every"), ("model", "d_enc", "d_enc"), ("model", "d_dec", "d_dec"),
              ("model", "loss_kind", "loss"), ("model", "w_recon", "w_recon"),
              ("model", "batch_size", "batch_size"), ("model", "noisy_training", "noisy")],
    "calibrate": [("run", "seed", "seed"), ("calibrate", "m", "m")],
    "infer": [("infer", "voice_channel", "voice_channel")],
    "eval": [("eval", "truth_format", "truth_format"), ("eval", "truth_hop", "truth_hop"),
             ("eval", "bins", "bins")],
    "ablate": [("run", "seed", "seed"), ("model", "d_enc", "d_enc"), ("model", "d_dec", "d_dec")],
}


def build_parser():
    p = argparse.ArgumentParser(prog="spice-pitch", description="Self-supervised pitch estimation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="INI configuration file")
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth-gen", cmd_synth_gen, "synthesize a labelled training corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-items", type=int)
    sp.add_argument("--item-seconds", type=float)

    sp = add("train", cmd_train, "train a model on a directory of WAV files")
    sp.add_argument("--corpus")
    sp.add_argument("--noise", help="directory of noise/backing WAVs for noisy training")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--log-every", type=int)
    sp.add_argument("--d-enc", type=int)
    sp.add_argument("--d-dec", type=int)
    sp.add_argument("--loss", choices=["huber", "l1", "l2"])
    sp.add_argument("--w-recon", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--noisy", action="store_const", const=True)

    sp = add("calibrate", cmd_calibrate, "fit the affine pitch calibration")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--m", type=int)

    sp = add("infer", cmd_infer, "write per-frame pitch CSVs")
    sp.add_argument("wav", nargs="+")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--calibration")
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--voice-channel", choices=["left", "right"])

    sp = add("eval", cmd_eval, "score estimates against ground truth")
    sp.add_argument("--estimate", action="append", required=True)
    sp.add_argument("--truth", action="append", required=True)
    sp.add_argument("--truth-format", choices=["semitone_csv", "hz_csv"])
    sp.add_argument("--truth-hop", type=float)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--out", default="eval_report")

    sp = add("ablate", cmd_ablate, "train and score the ablation matrix on synthetic data")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--steps", type=int, default=15000)
    sp.add_argument("--n-train", type=int, default=200)
    sp.add_argument("--n-eval", type=int, default=40)
    sp.add_argument("--m", type=int, default=10)
    sp.add_argument("--d-enc", type=int)
    sp.add_argument("--d-dec", type=int)
    sp.add_argument("--losses", nargs="+", default=["huber", "l1", "l2"], choices=["huber", "l1", "l2"])
    sp.add_argument("--recon", nargs="+", default=["on", "off"], choices=["on", "off"])
    sp.add_argument("--augment", nargs="+", default=["on", "off"], choices=["on", "off"])
    sp.add_argument("--cache", default=ex.DEFAULT_CACHE)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except FileNotFoundError as exc:
        return _fail("missing-path", str(exc.filename or exc))
    except TrainingDiverged as exc:
        return _fail("diverged", str(exc))
    except (AudioError, CqtError, EvalError, CheckpointError, cal.CalibrationError, ValueError) as exc:
        return _fail("input", str(exc))
    return 0


def _fail(kind, message):
    message = " ".join(str(message).split())
    sys.stderr.write(f"error: {kind}: {message}\n")
    return EXIT_CODES.get(kind, 1)


if __name__ == "__main__":
    sys.exit(main())
