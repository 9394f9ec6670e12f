"""Time the numba and numpy backends on one explicit PDE step and a full solve.

Run with ``python benchmarks/bench_kernels.py [--n-x 801] [--repeat 20]``.
"""

import argparse
import time

import numpy as np

from ambicon import _kernels
from ambicon.hjbi import MarkovAmbiguityField, PdeGrid, solve_pde
from ambicon.model import AmbiguityBand, RiskProfile

PROFILE = RiskProfile(1.0, 1.0, 1.0, 2.0, 1.0, -1.0)
FIELD = MarkovAmbiguityField.constant(AmbiguityBand(0.5, 1.5), AmbiguityBand(0.5, 1.0))


def time_step(backend: str, n_x: int, repeat: int) -> float:
    _kernels.set_backend(backend)
    grid = PdeGrid.auto(FIELD, PROFILE, n_x=n_x)
    psi = np.exp(-grid.x)
    lo, hi = FIELD.effective(0.0, grid.x)
    bufs = [np.empty_like(psi) for _ in range(3)]
    args = (psi, grid.dt, grid.dx, lo, hi, 1.0, 1.0, 1.0, 2.0, -5.0, 5.0, True, True, *bufs)
    _kernels.step(*args)  # compile / warm up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        _kernels.step(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def time_solve(backend: str, n_x: int) -> tuple[float, float]:
    _kernels.set_backend(backend)
    grid = PdeGrid.auto(FIELD, PROFILE, n_x=n_x)
    solve_pde(FIELD, PROFILE, PdeGrid.auto(FIELD, PROFILE, n_x=21))
    t0 = time.perf_counter()
    surf = solve_pde(FIELD, PROFILE, grid)
    return time.perf_counter() - t0, surf.principal_value


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-x", type=int, default=401)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    original = _kernels.get_backend()
    print(f"{'backend':8} {'step [ms]':>10} {'solve [s]':>10} {'value':>18}")
    try:
        for backend in _kernels.available_backends():
            step_s = time_step(backend, args.n_x, args.repeat)
            solve_s, value = time_solve(backend, args.n_x)
            print(f"{backend:8} {1000 * step_s:10.3f} {solve_s:10.3f} {value:18.12f}")
    finally:
        _kernels.set_backend(original)


if __name__ == "__main__":
    main()
