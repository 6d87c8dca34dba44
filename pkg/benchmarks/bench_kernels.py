"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-repeat time per call for each
backend, the speedup, and whether the two backends agree bit for bit.
"""
import argparse
import math
import time

import numpy as np

from ltfeas import _kernels_py
from ltfeas.astro import ClassicalElements, elements_to_state, kepler_propagate
from ltfeas.constants import TU_DAYS
from ltfeas.sft import DecisionVector, SFProblem, encode_decision

try:
    from ltfeas import _kernels as _compiled
except ImportError:
    _compiled = None


def cases():
    dep = elements_to_state(ClassicalElements(2.2, 0.1, 0.1, 0.3, 0.5, 1.0), mass=2000.0)
    arr = kepler_propagate(elements_to_state(ClassicalElements(2.3, 0.12, 0.12, 0.3, 0.5, 1.0)),
                           500.0 / TU_DAYS)
    p = SFProblem(dep, arr.pv, 2000.0, 500.0)
    rng = np.random.default_rng(0)
    ctrl = rng.uniform(-0.5, 0.5, size=(p.n_segments, 3))
    x = encode_decision(p, DecisionVector(ctrl, 0.9 * p.m0))
    args = p.kernel_args()
    r, v = dep.position.tolist(), dep.velocity.tolist()
    r2 = kepler_propagate(dep, 3.0).position.tolist()
    return {
        "stumpff": (lambda k: k.stumpff(12.3), 20000),
        "propagate": (lambda k: k.propagate(r, v, 7.5), 5000),
        "lambert": (lambda k: k.lambert(r, r2, 3.0), 2000),
        "sft_defect": (lambda k: k.sft_defect(x, *args), 500),
        "sft_jacobian": (lambda k: k.sft_jacobian(x, *args), 5),
    }


def best_time(fn, n, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(n):
            fn()
        best = min(best, (time.perf_counter() - t0) / n)
    return best


def same(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _compiled is None:
        print("compiled extension not built; timing the Python backend only")
    print(f"{'kernel':<14}{'python':>12}{'compiled':>12}{'speedup':>9}  identical")
    for name, (call, n) in cases().items():
        t_py = best_time(lambda: call(_kernels_py), max(1, n // 20), args.repeat)
        if _compiled is None:
            print(f"{name:<14}{t_py * 1e6:>10.1f}us")
            continue
        t_c = best_time(lambda: call(_compiled), n, args.repeat)
        ident = same(call(_kernels_py), call(_compiled))
        print(f"{name:<14}{t_py * 1e6:>10.1f}us{t_c * 1e6:>10.1f}us{t_py / t_c:>8.1f}x  {ident}")


if __name__ == "__main__":
    main()
