"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import time

import numpy as np

from spice_pitch import backend
from spice_pitch import model as M
from spice_pitch.audio import AudioBuffer
from spice_pitch.cqt import compute_cqt


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    x = rng.standard_normal((128, 64, 64)).astype(np.float32)
    w = rng.standard_normal((64, 64, 3)).astype(np.float32)
    gy = rng.standard_normal((128, 64, 64)).astype(np.float32)
    audio = AudioBuffer(rng.standard_normal(16000 * 5), 16000)
    cfg = M.SpiceConfig(d_enc=16, d_dec=8)
    x1 = rng.uniform(0, 1, (64, 128)).astype(np.float32)
    x2 = rng.uniform(0, 1, (64, 128)).astype(np.float32)
    k1, k2 = rng.integers(0, 9, 64), rng.integers(0, 9, 64)

    def step(model):
        M.forward_losses(model, x1, x2, k1, k2)[0].backward()

    return {
        "conv1d forward [128,64,64] k3": lambda k: k.conv1d_forward(x, w, 1, 1),
        "conv1d grad weight": lambda k: k.conv1d_grad_weight(gy, x, 1, 1, 3),
        "conv1d grad input": lambda k: k.conv1d_grad_input(gy, w, 1, 1, 64),
        "maxpool forward": lambda k: k.maxpool1d_forward(x, 3, 2, 32),
        "cqt 5 s": lambda k: compute_cqt(audio, kernels=k),
        "training step d_enc=16": (lambda k, m=M.SpiceModel(cfg): step(m)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not backend.compiled_available():
        print("compiled kernels not built; only the numpy backend is available")
    names = ["numpy"] + (["cython"] if backend.compiled_available() else [])
    print(f"{'case':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    default = backend.kernels
    for label, fn in cases(np.random.default_rng(0)).items():
        row = []
        for n in names:
            k = backend.get(n)
            backend.kernels = k  # layers dispatch through the module default
            try:
                fn(k)
                row.append(best_of(lambda: fn(k), args.repeat))
            finally:
                backend.kernels = default
        line = f"{label:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in row)
        if len(row) > 1:
            line += f"{row[0] / row[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
