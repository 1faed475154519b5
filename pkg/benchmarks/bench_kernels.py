"""Compare the compiled and pure-Python slab kernels on full forward solves.

    python3 benchmarks/bench_kernels.py [--repeat 2] [--N 64 256]
"""

import argparse
import logging
import time

import numpy as np

from stdamage import kernels
from stdamage.benchmarks import case_one, case_two
from stdamage.discretization import build_spatial_mesh, build_temporal_mesh
from stdamage.forward import SolverConfig, solve_forward

SETUPS = [
    ("case 1, fixed point, consistent", case_one, dict(mass_mode="consistent")),
    ("case 1, fixed point, lumped", case_one, dict(mass_mode="lumped")),
    ("case 1, closed form, lumped", case_one, dict(mass_mode="lumped", closed_form=True)),
    ("case 2, fixed point, consistent", case_two, dict(mass_mode="consistent")),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=512)
    ap.add_argument("--N", type=int, nargs="+", default=[64])
    ap.add_argument("--repeat", type=int, default=2)
    args = ap.parse_args(argv)
    logging.disable(logging.WARNING)
    backends = sorted(kernels.BACKENDS)
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is timed")
    print(f"{'setup':34} {'N':>5} " + " ".join(f"{b + ' [s]':>14}" for b in backends)
          + f" {'speedup':>8} {'max |diff|':>11}")
    for label, make, kw in SETUPS:
        case = make()
        for N in args.N:
            tm, sm = build_temporal_mesh(1.0, args.M), build_spatial_mesh(0.0, 1.0, N)
            res = {}
            for b in backends:
                cfg = SolverConfig(backend=b, **kw)
                res[b] = best_of(lambda: solve_forward(case.l_exact, case.d0, case.params, tm, sm,
                                                       cfg, load_rule="nodal"), args.repeat)
            cols = " ".join(f"{res[b][0]:14.3f}" for b in backends)
            if len(backends) == 2:
                speed = res["python"][0] / res["compiled"][0]
                diff = np.abs(res["python"][1].d.coeffs - res["compiled"][1].d.coeffs).max()
                print(f"{label:34} {N:5d} {cols} {speed:7.1f}x {diff:11.2e}")
            else:
                print(f"{label:34} {N:5d} {cols}")


if __name__ == "__main__":
    main()
