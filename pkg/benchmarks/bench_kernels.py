"""Time the numba and numpy kernels side by side, plus one full event-study fit.

    python benchmarks/bench_kernels.py [--rows 40000] [--cols 5] [--repeat 20]

The full-fit timings run in subprocesses with ``CYCLESTUDY_NUMBA`` set to 1
and 0, since the backend is chosen at import time.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cyclestudy import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


FIT_SNIPPET = """
import time
from cyclestudy import _kernels
from cyclestudy.dgp import SimConfig, simulate_panel
from cyclestudy.eventstudy import EventStudySpec, fit_dynamic
ds = simulate_panel(SimConfig(event_path={-2: -0.02, -1: -0.03, 1: -0.04})).dataset
spec = EventStudySpec(transform="log", fe=("county", "year"))
fit_dynamic(ds, spec)
best = min((lambda t: (fit_dynamic(ds, spec), time.perf_counter() - t)[1])(time.perf_counter()) for _ in range(5))
print(_kernels.backend(), len(ds), best)
"""


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=40_000)
    ap.add_argument("--cols", type=int, default=5)
    ap.add_argument("--groups", type=int, default=2_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.rows, args.cols))
    codes = rng.integers(0, args.groups, args.rows).astype(np.int64)
    w = rng.uniform(0.5, 2.0, args.rows)

    print(f"rows={args.rows} cols={args.cols} groups={args.groups}")
    print(f"{'kernel':<16}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    if not _kernels.NUMBA_AVAILABLE:
        print("numba not importable; numpy timings only")
    pairs = [
        ("demean_sweep", lambda: _kernels.demean_sweep_numpy(X.copy(), codes, args.groups, w),
         lambda: _kernels.demean_sweep_numba(X.copy(), codes, args.groups, w)),
        ("cluster_sums", lambda: _kernels.cluster_sums_numpy(X, codes, args.groups),
         lambda: _kernels.cluster_sums_numba(X, codes, args.groups)),
    ]
    for name, f_np, f_nb in pairs:
        t_np = best_of(f_np, args.repeat)
        if _kernels.NUMBA_AVAILABLE:
            f_nb()  # compile
            t_nb = best_of(f_nb, args.repeat)
            print(f"{name:<16}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.2f}")
        else:
            print(f"{name:<16}{t_np * 1e3:>12.3f}{'-':>12}{'-':>10}")

    # agreement check so the benchmark doubles as a smoke test
    if _kernels.NUMBA_AVAILABLE:
        a, b = X.copy(), X.copy()
        ma = _kernels.demean_sweep_numpy(a, codes, args.groups, w)
        mb = _kernels.demean_sweep_numba(b, codes, args.groups, w)
        print(f"max |numpy - numba| after one sweep: {np.abs(a - b).max():.2e} (means {np.abs(ma - mb).max():.2e})")

    print("\nfull fit_dynamic (county + year FE, default simulated panel):")
    for flag in ("1", "0"):
        env = dict(os.environ, CYCLESTUDY_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True, text=True)
        if out.returncode:
            print(out.stderr)
            continue
        backend, n, best = out.stdout.split()
        print(f"  backend={backend:<6} rows={n} best of 5: {float(best) * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
