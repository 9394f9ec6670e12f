"""Per-node reduced Hamiltonian and explicit time step for the HJBI sweep.

Two interchangeable backends: numba-compiled scalar loops and vectorised
numpy. ``AMBICON_NUMBA=0`` disables numba at import; :func:`set_backend`
switches at runtime.

Hamiltonian at one node, for gamma = 0 and variance alpha in [lo, hi]::

    sup_alpha inf_z  a*(z) p + R_P v (R_A alpha z^2 / 2 + k(a*(z)))
                     + alpha q / 2 + alpha z^2 R_P^2 v / 2 + alpha z R_P w

with ``w = p`` (gradient cross term) or ``w = v`` (value cross term). For
fixed alpha the objective is a convex quadratic on each of the three pieces
cut by the clipping points z = 0 and z = k a_max, so the inner inf is exact.
The outer function of alpha is concave (infimum of affine maps).
"""

from __future__ import annotations

import math
import os

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ALPHA_ITERS = 64
CLAMP_FLOOR = 1e-300

# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _quad_min_np(a, b, c, lo, hi):
    z = np.clip(-b / (2.0 * a), lo, hi)
    return (a * z + b) * z + c, z


def inner_min_np(alpha, v, p, q, ra, rp, k, amax, zlo, zhi, grad):
    """Exact min over z in [zlo, zhi]; ties favour the interior-effort piece."""
    w = p if grad else v
    a2 = 0.5 * alpha * rp * v * (ra + rp)
    b1 = alpha * rp * w
    c0 = 0.5 * alpha * q
    zk = k * amax
    shape = np.broadcast(alpha, v, p, q).shape
    best = np.full(shape, np.inf)
    best_z = np.zeros(shape)

    lo2, hi2 = max(zlo, 0.0), min(zhi, zk)
    if lo2 <= hi2:
        val, z = _quad_min_np(a2 + rp * v / (2.0 * k), b1 + p / k, c0, lo2, hi2)
        best, best_z = val, z
    if zlo < 0.0:
        val, z = _quad_min_np(a2, b1, c0, zlo, min(0.0, zhi))
        better = val < best
        best, best_z = np.where(better, val, best), np.where(better, z, best_z)
    if zhi > zk:
        val, z = _quad_min_np(a2, b1, c0 + amax * p + 0.5 * rp * v * k * amax * amax, max(zk, zlo), zhi)
        better = val < best
        best, best_z = np.where(better, val, best), np.where(better, z, best_z)
    return best, best_z


def _dalpha_np(z, v, p, q, ra, rp, grad):
    w = p if grad else v
    return 0.5 * q + 0.5 * rp * v * (ra + rp) * z * z + rp * z * w


def node_hamiltonian_np(v, p, q, lo, hi, ra, rp, k, amax, zlo, zhi, grad):
    """Vectorised sup over alpha in [lo, hi] of the exact inner min."""
    v, p, q, lo, hi = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (v, p, q, lo, hi)))

    def m(alpha):
        return inner_min_np(alpha, v, p, q, ra, rp, k, amax, zlo, zhi, grad)

    g_hi, z_hi = m(hi)
    g_lo, z_lo = m(lo)
    at_hi = _dalpha_np(z_hi, v, p, q, ra, rp, grad) >= 0.0
    at_lo = ~at_hi & (_dalpha_np(z_lo, v, p, q, ra, rp, grad) <= 0.0)

    a, b = lo.copy(), hi.copy()
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, _ = m(x1)
    f2, _ = m(x2)
    for _ in range(ALPHA_ITERS):
        right = f1 < f2
        a = np.where(right, x1, a)
        b = np.where(right, b, x2)
        new = np.where(right, a + GOLDEN * (b - a), b - GOLDEN * (b - a))
        f_new, _ = m(new)
        x1, x2 = np.where(right, x2, new), np.where(right, new, x1)
        f1, f2 = np.where(right, f2, f_new), np.where(right, f_new, f1)
    mid = np.where(f1 >= f2, x1, x2)
    g_mid, z_mid = m(mid)

    value, z, alpha = g_mid, z_mid, mid
    for g_e, z_e, a_e in ((g_lo, z_lo, lo), (g_hi, z_hi, hi)):
        better = g_e > value
        value, z, alpha = np.where(better, g_e, value), np.where(better, z_e, z), np.where(better, a_e, alpha)
    value = np.where(at_hi, g_hi, np.where(at_lo, g_lo, value))
    z = np.where(at_hi, z_hi, np.where(at_lo, z_lo, z))
    alpha = np.where(at_hi, hi, np.where(at_lo, lo, alpha))
    degenerate = hi - lo <= 0.0
    value = np.where(degenerate, g_lo, value)
    z = np.where(degenerate, z_lo, z)
    alpha = np.where(degenerate, lo, alpha)
    return value, z, alpha


def _drift_np(z, al, rp, k, amax, grad):
    d = np.clip(z / k, 0.0, amax)
    return d + al * rp * z if grad else d


def step_np(psi, dt, dx, lo, hi, ra, rp, k, amax, zlo, zhi, grad, central, out, z_out, a_out):
    """One explicit backward step; returns the number of clamped nodes.

    With ``central`` the first derivative is centred wherever that keeps the
    node monotone (|drift| dx <= alpha); other nodes use the upwind difference.
    """
    v = psi[1:-1]
    lo_i, hi_i = lo[1:-1], hi[1:-1]
    pf = (psi[2:] - v) / dx
    pb = (v - psi[:-2]) / dx
    q = (psi[2:] - 2.0 * v + psi[:-2]) / (dx * dx)
    args = (ra, rp, k, amax, zlo, zhi, grad)
    if central:
        h, z, al = node_hamiltonian_np(v, 0.5 * (pf + pb), q, lo_i, hi_i, *args)
        redo = np.abs(_drift_np(z, al, rp, k, amax, grad)) * dx > al
    else:
        h, z, al = node_hamiltonian_np(v, pf, q, lo_i, hi_i, *args)
        redo = _drift_np(z, al, rp, k, amax, grad) < 0.0
    if np.any(redo):
        hf, zf, af = node_hamiltonian_np(v[redo], pf[redo], q[redo], lo_i[redo], hi_i[redo], *args)
        back = _drift_np(zf, af, rp, k, amax, grad) < 0.0
        if np.any(back):
            hb, zb, ab = node_hamiltonian_np(
                v[redo][back], pb[redo][back], q[redo][back], lo_i[redo][back], hi_i[redo][back], *args
            )
            hf[back], zf[back], af[back] = hb, zb, ab
        h[redo], z[redo], al[redo] = hf, zf, af
    new = v + dt * h
    bad = ~(new > CLAMP_FLOOR)
    new[bad] = CLAMP_FLOOR
    out[1:-1] = new
    z_out[1:-1], a_out[1:-1] = z, al
    clamps = int(np.count_nonzero(bad))
    clamps += _extrapolate_ends(out)
    z_out[0], z_out[-1] = z_out[1], z_out[-2]
    a_out[0], a_out[-1] = a_out[1], a_out[-2]
    return clamps


def _extrapolate_ends(out):
    n = len(out)
    c = 0
    out[0] = 3.0 * out[1] - 3.0 * out[2] + out[3]
    out[n - 1] = 3.0 * out[n - 2] - 3.0 * out[n - 3] + out[n - 4]
    if not out[0] > CLAMP_FLOOR:
        out[0] = CLAMP_FLOOR
        c += 1
    if not out[n - 1] > CLAMP_FLOOR:
        out[n - 1] = CLAMP_FLOOR
        c += 1
    return c


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

_NUMBA_OK = False
if os.environ.get("AMBICON_NUMBA", "1") != "0":
    try:
        import numba
        from numba import njit, prange

        if "NUMBA_THREADING_LAYER" not in os.environ:
            # omp is thread-safe and avoids probing an outdated TBB
            numba.config.THREADING_LAYER = "omp"
        _NUMBA_OK = True
    except ImportError:  # pragma: no cover
        _NUMBA_OK = False

if _NUMBA_OK:

    @njit(cache=True)
    def _quad_min_nb(a, b, c, lo, hi):
        z = min(max(-b / (2.0 * a), lo), hi)
        return (a * z + b) * z + c, z

    @njit(cache=True)
    def inner_min_nb(alpha, v, p, q, ra, rp, k, amax, zlo, zhi, grad):
        w = p if grad else v
        a2 = 0.5 * alpha * rp * v * (ra + rp)
        b1 = alpha * rp * w
        c0 = 0.5 * alpha * q
        zk = k * amax
        best = np.inf
        best_z = 0.0
        lo2 = max(zlo, 0.0)
        hi2 = min(zhi, zk)
        if lo2 <= hi2:
            best, best_z = _quad_min_nb(a2 + rp * v / (2.0 * k), b1 + p / k, c0, lo2, hi2)
        if zlo < 0.0:
            val, z = _quad_min_nb(a2, b1, c0, zlo, min(0.0, zhi))
            if val < best:
                best, best_z = val, z
        if zhi > zk:
            val, z = _quad_min_nb(a2, b1, c0 + amax * p + 0.5 * rp * v * k * amax * amax, max(zk, zlo), zhi)
            if val < best:
                best, best_z = val, z
        return best, best_z

    @njit(cache=True)
    def node_hamiltonian_nb(v, p, q, lo, hi, ra, rp, k, amax, zlo, zhi, grad):
        g_lo, z_lo = inner_min_nb(lo, v, p, q, ra, rp, k, amax, zlo, zhi, grad)
        if hi - lo <= 0.0:
            return g_lo, z_lo, lo
        w = p if grad else v
        g_hi, z_hi = inner_min_nb(hi, v, p, q, ra, rp, k, amax, zlo, zhi, grad)
        if 0.5 * q + 0.5 * rp * v * (ra + rp) * z_hi * z_hi + rp * z_hi * w >= 0.0:
            return g_hi, z_hi, hi
        if 0.5 * q + 0.5 * rp * v * (ra + rp) * z_lo * z_lo + rp * z_lo * w <= 0.0:
            return g_lo, z_lo, lo
        a = lo
        b = hi
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        f1 = inner_min_nb(x1, v, p, q, ra, rp, k, amax, zlo, zhi, grad)[0]
        f2 = inner_min_nb(x2, v, p, q, ra, rp, k, amax, zlo, zhi, grad)[0]
        for _ in range(ALPHA_ITERS):
            if f1 < f2:
                a = x1
                x1, f1 = x2, f2
                x2 = a + GOLDEN * (b - a)
                f2 = inner_min_nb(x2, v, p, q, ra, rp, k, amax, zlo, zhi, grad)[0]
            else:
                b = x2
                x2, f2 = x1, f1
                x1 = b - GOLDEN * (b - a)
                f1 = inner_min_nb(x1, v, p, q, ra, rp, k, amax, zlo, zhi, grad)[0]
        mid = x1 if f1 >= f2 else x2
        value, z = inner_min_nb(mid, v, p, q, ra, rp, k, amax, zlo, zhi, grad)
        alpha = mid
        if g_lo > value:
            value, z, alpha = g_lo, z_lo, lo
        if g_hi > value:
            value, z, alpha = g_hi, z_hi, hi
        return value, z, alpha

    @njit(cache=True)
    def _drift_nb(z, al, rp, k, amax, grad):
        d = min(max(z / k, 0.0), amax)
        return d + al * rp * z if grad else d

    @njit(cache=True, parallel=True)
    def _step_nb(psi, dt, dx, lo, hi, ra, rp, k, amax, zlo, zhi, grad, central, out, z_out, a_out):
        n = psi.shape[0]
        clamps = 0
        for j in prange(1, n - 1):
            v = psi[j]
            pf = (psi[j + 1] - v) / dx
            pb = (v - psi[j - 1]) / dx
            q = (psi[j + 1] - 2.0 * v + psi[j - 1]) / (dx * dx)
            if central:
                h, z, al = node_hamiltonian_nb(v, 0.5 * (pf + pb), q, lo[j], hi[j], ra, rp, k, amax, zlo, zhi, grad)
                redo = abs(_drift_nb(z, al, rp, k, amax, grad)) * dx > al
            else:
                h, z, al = node_hamiltonian_nb(v, pf, q, lo[j], hi[j], ra, rp, k, amax, zlo, zhi, grad)
                redo = _drift_nb(z, al, rp, k, amax, grad) < 0.0
            if redo:
                h, z, al = node_hamiltonian_nb(v, pf, q, lo[j], hi[j], ra, rp, k, amax, zlo, zhi, grad)
                if _drift_nb(z, al, rp, k, amax, grad) < 0.0:
                    h, z, al = node_hamiltonian_nb(v, pb, q, lo[j], hi[j], ra, rp, k, amax, zlo, zhi, grad)
            new = v + dt * h
            if not new > CLAMP_FLOOR:
                new = CLAMP_FLOOR
                clamps += 1
            out[j] = new
            z_out[j] = z
            a_out[j] = al
        return clamps

    def step_nb(psi, dt, dx, lo, hi, ra, rp, k, amax, zlo, zhi, grad, central, out, z_out, a_out):
        clamps = _step_nb(psi, dt, dx, lo, hi, ra, rp, k, amax, zlo, zhi, grad, central, out, z_out, a_out)
        clamps += _extrapolate_ends(out)
        z_out[0], z_out[-1] = z_out[1], z_out[-2]
        a_out[0], a_out[-1] = a_out[1], a_out[-2]
        return int(clamps)


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_backend = "numba" if _NUMBA_OK else "numpy"


def available_backends() -> list[str]:
    return ["numba", "numpy"] if _NUMBA_OK else ["numpy"]


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in available_backends():
        raise ValueError(f"backend {name!r} unavailable; choose from {available_backends()}")
    _backend = name


def set_threads(n: int) -> None:
    if _NUMBA_OK:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def node_hamiltonian(v, p, q, lo, hi, ra, rp, k, amax, zlo, zhi, grad):
    """Scalar node Hamiltonian on the active backend: ``(value, z, alpha)``."""
    if _backend == "numba":
        h, z, a = node_hamiltonian_nb(
            float(v), float(p), float(q), float(lo), float(hi), ra, rp, k, amax, zlo, zhi, bool(grad)
        )
        return float(h), float(z), float(a)
    h, z, a = node_hamiltonian_np(v, p, q, lo, hi, ra, rp, k, amax, zlo, zhi, bool(grad))
    return float(h), float(z), float(a)


def node_hamiltonian_many(v, p, q, lo, hi, ra, rp, k, amax, zlo, zhi, grad):
    """Vectorised node Hamiltonian (always numpy; used off the hot path)."""
    return node_hamiltonian_np(v, p, q, lo, hi, ra, rp, k, amax, zlo, zhi, bool(grad))


def step(psi, dt, dx, lo, hi, ra, rp, k, amax, zlo, zhi, grad, central, out, z_out, a_out) -> int:
    fn = step_nb if _backend == "numba" else step_np
    return fn(psi, dt, dx, lo, hi, ra, rp, k, amax, zlo, zhi, bool(grad), bool(central), out, z_out, a_out)
