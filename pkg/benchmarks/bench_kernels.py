"""Compare the compiled and pure-Python kernel backends.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each kernel is
timed on both backends with identical inputs, and the results are checked for
agreement before the timings are printed.
"""
import argparse
import importlib
import time

import numpy as np

from dsa import _pykernels
from dsa.nurbs import basis_funs_many, find_spans, param_grid, random_surface


def _load_compiled():
    try:
        return importlib.import_module("dsa._ckernels")
    except ImportError:
        return None


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    x = np.cumsum(rng.normal(size=400))
    yield "segment_dp n=400 k=8 d=2", lambda m: m.segment_dp(x, 8, 2)

    surf = random_surface(rng, 12, 12, 3, 3)
    u, v = param_grid(surf.knots_u, 128), param_grid(surf.knots_v, 128)
    us, vs = find_spans(u, surf.knots_u), find_spans(v, surf.knots_v)
    ub, vb = basis_funs_many(us, u, surf.knots_u), basis_funs_many(vs, v, surf.knots_v)
    pw = np.concatenate([surf.ctrl * surf.weights[..., None], surf.weights[..., None]], axis=-1)
    yield "nurbs_eval_grid 128x128", lambda m: m.nurbs_eval_grid(pw, us, ub, vs, vb, 1)

    S, W = _pykernels.nurbs_eval_grid(pw, us, ub, vs, vb, 1)
    up = rng.normal(size=S.shape)
    yield "nurbs_backward_grid 128x128", lambda m: m.nurbs_backward_grid(
        surf.ctrl, surf.weights, us, ub, vs, vb, S, W, up
    )

    binary = (rng.uniform(size=(256, 256)) > 0.5).astype(np.int64)
    yield "label_components 256x256", lambda m: m.label_components(binary)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=1e-12, atol=1e-12)
    return abs(a - b) <= 1e-9 * max(1.0, abs(a))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    compiled = _load_compiled()
    if compiled is None:
        print("compiled backend not built; timing the Python backend only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8}")
    for name, fn in cases(rng):
        t_py = _best_of(lambda: fn(_pykernels), args.repeat)
        if compiled is None:
            print(f"{name:<30} {t_py:>11.4f} {'-':>13} {'-':>8}")
            continue
        if not _same(fn(_pykernels), fn(compiled)):
            raise SystemExit(f"backends disagree on {name}")
        t_c = _best_of(lambda: fn(compiled), args.repeat)
        print(f"{name:<30} {t_py:>11.4f} {t_c:>13.4f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
