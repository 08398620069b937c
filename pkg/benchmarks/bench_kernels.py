"""Compare the compiled kernels with the pure-Python fallback.

Micro-benchmarks time each kernel on the shapes used during training.
The end-to-end row times a short training run in a subprocess per backend,
which shows how much of a real run the kernels actually cover.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--skip-e2e]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from aiig.kernels import compiled_kernels, python_kernels


def kernel_cases(rng: np.random.Generator) -> dict:
    dims = (7, 64, 64, 6)
    ws = [rng.normal(size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    bs = [rng.normal(size=b) for b in dims[1:]]
    x = rng.normal(size=7)
    gru = [rng.normal(scale=0.3, size=s) for s in [(11, 32)] * 3 + [(32, 32)] * 3 + [(32,)] * 3]
    gx, gh = rng.normal(size=11), rng.normal(size=32)
    prior, lik = np.array([0.5, 0.5]), rng.random((60, 2))
    return {
        "dense_forward_one (7-64-64-6)": lambda k: k.dense_forward_one(x, ws, bs),
        "gru_step_one (11 -> 32)": lambda k: k.gru_step_one(gx, gh, *gru),
        "bayes_filter (60 steps)": lambda k: k.bayes_filter(prior, lik, 1e-6),
    }


def time_call(fn, repeat: int) -> float:
    number = 2000
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


E2E = ("import time; from aiig.config import ExperimentConfig; from aiig.ensemble import train_full;"
       "import tempfile, pathlib; cfg = ExperimentConfig.load('configs/smoke.toml');"
       "d = tempfile.mkdtemp(); t = time.perf_counter();"
       "train_full(cfg, pathlib.Path(d) / 'r', deterministic=True);"
       "print(time.perf_counter() - t)")


def time_training(pure: bool) -> float:
    env = dict(os.environ)
    env.pop("AIIG_PURE_PYTHON", None)
    if pure:
        env["AIIG_PURE_PYTHON"] = "1"
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = subprocess.run([sys.executable, "-c", E2E], env=env, cwd=root, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)
    if compiled_kernels is None:
        print("compiled extension not built; nothing to compare")
        return 1
    print(f"{'kernel':34s} {'python us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        py = time_call(lambda: fn(python_kernels), args.repeat)
        cy = time_call(lambda: fn(compiled_kernels), args.repeat)
        print(f"{name:34s} {py * 1e6:10.2f} {cy * 1e6:10.2f} {py / cy:7.1f}x")
    if not args.skip_e2e:
        py, cy = time_training(True), time_training(False)
        print(f"{'smoke training run (s)':34s} {py:10.2f} {cy:10.2f} {py / cy:7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
