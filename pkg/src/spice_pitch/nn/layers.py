"""Parameterised layers and the serialisable network description."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .tensor import Tensor, relu, sigmoid, reshape


class Parameter(Tensor):
    """A trainable tensor carrying its Adam moments and step count."""

    __slots__ = ("m", "v", "step")

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0


@dataclass
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    ceil_mode: bool = False
    shape: tuple = ()

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if v not in (0, False, ()) or k == "kind"}
        if "shape" in d:
            d["shape"] = list(d["shape"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "shape" in d:
            d["shape"] = tuple(d["shape"])
        return cls(**d)


@dataclass
class NetworkSpec:
    """Named, ordered layer stacks making up a network."""

    stacks: dict = field(default_factory=dict)

    def to_dict(self):
        return {name: [s.to_dict() for s in specs] for name, specs in self.stacks.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({name: [LayerSpec.from_dict(s) for s in specs] for name, specs in d.items()})


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    training = True

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def __call__(self, x):
        return self.forward(x)


class Conv1d(Layer):
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        shape = (spec.out_channels, spec.in_channels, spec.kernel)
        self.weight = Parameter(_he_uniform(rng, shape, spec.in_channels * spec.kernel, dtype))
        self.bias = Parameter(np.zeros(spec.out_channels, dtype=dtype))

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class ConvTranspose1d(Layer):
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        shape = (spec.in_channels, spec.out_channels, spec.kernel)
        # fan-in of the adjoint map: each output sees in_channels * kernel / stride taps
        fan_in = max(spec.in_channels * spec.kernel // max(spec.stride, 1), 1)
        self.weight = Parameter(_he_uniform(rng, shape, fan_in, dtype))
        self.bias = Parameter(np.zeros(spec.out_channels, dtype=dtype))

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        s = self.spec
        return F.conv_transpose1d(x, self.weight, self.bias, s.stride, s.padding, s.output_padding)


class BatchNorm1d(Layer):
    momentum = 0.99
    eps = 1e-5

    def __init__(self, spec, rng, dtype):
        self.spec = spec
        c = spec.out_channels
        self.gamma = Parameter(np.ones(c, dtype=dtype))
        self.beta = Parameter(np.zeros(c, dtype=dtype))
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x):
        return F.batchnorm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class Dense(Layer):
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        shape = (spec.in_channels, spec.out_channels)
        self.weight = Parameter(_he_uniform(rng, shape, spec.in_channels, dtype))
        self.bias = Parameter(np.zeros(spec.out_channels, dtype=dtype))

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        return F.dense(x, self.weight, self.bias)


class MaxPool1d(Layer):
    def __init__(self, spec, rng=None, dtype=None):
        self.spec = spec

    def forward(self, x):
        return F.maxpool1d(x, self.spec.kernel, self.spec.stride, self.spec.ceil_mode)


class _Fn(Layer):
    fn = None

    def __init__(self, spec, rng=None, dtype=None):
        self.spec = spec

    def forward(self, x):
        return type(self).fn(x)


class ReLU(_Fn):
    fn = staticmethod(relu)


class Sigmoid(_Fn):
    fn = staticmethod(sigmoid)


class Flatten(_Fn):
    fn = staticmethod(F.flatten)


class Reshape(Layer):
    def __init__(self, spec, rng=None, dtype=None):
        self.spec = spec

    def forward(self, x):
        return reshape(x, (x.shape[0],) + tuple(self.spec.shape))


LAYER_KINDS = {
    "conv": Conv1d,
    "conv_transpose": ConvTranspose1d,
    "batchnorm": BatchNorm1d,
    "dense": Dense,
    "maxpool": MaxPool1d,
    "relu": ReLU,
    "sigmoid": Sigmoid,
    "flatten": Flatten,
    "reshape": Reshape,
}


class Sequential(Layer):
    def __init__(self, specs, rng, dtype=np.float32):
        self.specs = list(specs)
        self.layers = []
        for s in self.specs:
            if s.kind not in LAYER_KINDS:
                raise ValueError(f"unknown layer kind {s.kind!r}")
            self.layers.append(LAYER_KINDS[s.kind](s, rng, dtype))

    def set_training(self, flag):
        for layer in self.layers:
            layer.training = flag

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                out[f"{i}.{layer.spec.kind}.{name}"] = p
        return out

    def buffers(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers().items():
                out[f"{i}.{layer.spec.kind}.{name}"] = b
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
