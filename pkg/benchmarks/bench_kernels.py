"""Compare the compiled descent kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--steps 20000] [--repeat 3]

Both backends are imported directly, so the comparison does not depend on
``DEEPLINEAR_PURE_PYTHON``. Each row reports the best wall time over
``--repeat`` runs and the resulting speedup.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from deeplinear import _pykernels
from deeplinear.dynamics import initial_radius
from deeplinear.experiments import gen_separable_blobs
from deeplinear.model import get_loss, init_random, orient_init

try:
    from deeplinear import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None


def _problem(depth: int, n: int, d: int, seed: int = 0):
    data, _ = gen_separable_blobs(n, d, 0.2, seed, spanning=False)
    loss = get_loss("log")
    w0 = orient_init(init_random((d,) * depth + (1,), np.random.default_rng(seed), 0.3), data, loss)
    return data, loss, w0


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_gd(impl, data, loss, w0, steps: int, repeat: int) -> float:
    z = np.ascontiguousarray(data.z)
    sq0 = w0.fro_norms() ** 2
    r0 = initial_radius(w0)

    def run():
        theta = w0.flat().copy()
        impl.gd_advance(theta, w0.dims, z, loss.code, loss.beta, loss.g, r0, steps, 0.0, sq0, 0.0)

    return _best(run, repeat)


def bench_grad(impl, data, loss, w0, calls: int, repeat: int) -> float:
    z = np.ascontiguousarray(data.z)
    theta = w0.flat().copy()
    out = np.empty_like(theta)

    def run():
        for _ in range(calls):
            impl.risk_grad(theta, w0.dims, z, loss.code, out)

    return _best(run, repeat)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=20_000, help="descent steps per timing")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return 1
    configs = [(1, 20, 3), (3, 20, 3), (4, 20, 3), (3, 100, 10), (3, 500, 20)]
    print(f"{'kernel':<10} {'L':>2} {'n':>4} {'d':>3} {'python [s]':>11} {'cython [s]':>11} {'speedup':>8}")
    for depth, n, d in configs:
        data, loss, w0 = _problem(depth, n, d)
        for name, bench, count in (
            ("gd", bench_gd, args.steps),
            ("grad", bench_grad, args.steps),
        ):
            tp = bench(_pykernels, data, loss, w0, count, args.repeat)
            tc = bench(_ckernels, data, loss, w0, count, args.repeat)
            print(f"{name:<10} {depth:>2} {n:>4} {d:>3} {tp:>11.4f} {tc:>11.4f} {tp / tc:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
