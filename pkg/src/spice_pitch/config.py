"""Sectioned INI run configuration.

Sections map onto dataclasses; each key must be a field of its section's
dataclass and is converted to that field's type. Unknown sections or keys
are errors. Example::

    [run]
    seed = 7

    [model]
    d_enc = 16
    d_dec = 8
    loss_kind = huber

    [train]
    steps = 15000
"""

import configparser
from dataclasses import dataclass, fields
import os

from .model import SpiceConfig
from .synth import CorpusConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = None
    out: str = None


@dataclass
class TrainSection:
    steps: int = 15000
    checkpoint_every: int = 1000
    log_every: int = 10
    corpus: str = None
    noise: str = None


@dataclass
class CalibrateSection:
    m: int = 5
    n_frames: int = 11
    hop: int = 512
    n_harmonics: int = 3


@dataclass
class EvalSection:
    truth_format: str = "hz_csv"
    truth_hop: float = None
    bins: int = 10


@dataclass
class InferSection:
    voice_channel: str = None


SECTIONS = {
    "run": RunSection,
    "model": SpiceConfig,
    "synth": CorpusConfig,
    "train": TrainSection,
    "calibrate": CalibrateSection,
    "eval": EvalSection,
    "infer": InferSection,
}


def _convert(raw, default, name, annotation=None):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            cast = int if default and all(isinstance(x, int) for x in default) else float
            return tuple(cast(x) for x in raw.replace(",", " ").split())
        if default is None:
            if raw.lower() in ("", "none"):
                return None
            if annotation in (str, "str"):
                return raw
            for cast in (int, float):
                try:
                    return cast(raw)
                except ValueError:
                    pass
            return raw
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


class RunConfig:
    """Values per section; ``get(section)`` builds the section's dataclass."""

    def __init__(self, values=None):
        self.values = {s: {} for s in SECTIONS}
        for sec, kv in (values or {}).items():
            for k, v in kv.items():
                self.set(sec, k, v)

    def set(self, section, key, value):
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        spec = {f.name: f for f in fields(SECTIONS[section])}
        if key not in spec:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        if isinstance(value, str):
            value = _convert(value, spec[key].default, f"{section}.{key}", spec[key].type)
        self.values[section][key] = value

    @classmethod
    def read(cls, path):
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
        cfg = cls()
        for sec in parser.sections():
            for key, raw in parser.items(sec):
                cfg.set(sec, key, raw)
        return cfg

    def get(self, section):
        try:
            return SECTIONS[section](**self.values[section])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None

    def write(self, path, sections=None):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for sec in sections or SECTIONS:
            obj = self.get(sec)
            parser[sec] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
        with open(path, "w") as fh:
            parser.write(fh)


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return str(v)
