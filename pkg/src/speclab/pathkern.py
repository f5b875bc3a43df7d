"""Killed Brownian path kernels: compiled and vectorized backends.

Paths of standard Brownian motion (half-Laplacian generator) inside a
rectangle are advanced by Euler steps ``sqrt(h) * N(0, I)`` until they
leave the domain or the horizon ``t_end`` is reached.  An optional
Brownian-bridge test kills paths that cross the nearest face and return
within one step (crossing probability ``exp(-2 d1 d2 / h)``), removing
the leading discretization bias.  Exit times are linearly interpolated
and exit points snapped onto the crossed face.

Randomness is counter-based: the value drawn for (path, step, channel)
is a pure function of the stream key, so any path can be produced in
isolation, in any order, on any backend.  Channels 0 and 1 form the
Box-Muller pair of the step, channel 2 feeds the bridge test; because
draws are addressed rather than consumed from a shared stream, skipped
branches cannot desynchronize anything.

Two implementations produce the same integer streams and the same
branch logic:

* ``numba`` — per-path loops under ``@njit(cache=True, parallel=True)``;
* ``numpy`` — the vectorized fallback, no compilation required.

Selection: the ``SPECLAB_BACKEND`` environment variable (``numba`` or
``numpy``), defaulting to the compiled backend when importable.  This
flag picks a compute path only; it is not experiment configuration.
Within one backend results are bitwise reproducible for any worker
count.  Across backends the trigonometric/log calls may differ in the
last ulp, so cross-backend agreement is statistical, not bitwise.
"""
from __future__ import annotations

import math
import os

import numpy as np

from .rng import MAX_PATHS, MAX_STEPS, uniform_array

BACKEND_ENV = "SPECLAB_BACKEND"
_TWO_PI = 6.283185307179586476925287
_INV_2_53 = 1.0 / 9007199254740992.0

try:  # pragma: no cover - exercised implicitly by backend selection
    import numba
    from numba import njit, prange

    # The portable thread pool: avoids probing optional TBB/OpenMP layers,
    # whose absence prints warnings; determinism never depends on the layer.
    numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


class BackendError(RuntimeError):
    pass


class RunawayPathError(RuntimeError):
    """A path outlived the 100 * diam^2 time cap; geometry is suspect."""


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if HAVE_NUMBA else ("numpy",)


def active_backend(override: str | None = None) -> str:
    name = override or os.environ.get(BACKEND_ENV, "").strip() or None
    if name is None:
        name = "numba" if HAVE_NUMBA else "numpy"
    if name not in ("numba", "numpy"):
        raise BackendError(f"unknown backend {name!r}; use 'numba' or 'numpy'")
    if name == "numba" and not HAVE_NUMBA:
        raise BackendError("numba backend requested but numba is not importable")
    return name


def set_worker_count(workers: int | None) -> None:
    """Cap the compiled backend's thread pool; harmless for numpy."""
    if workers is not None and workers >= 1 and HAVE_NUMBA:
        numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))


def step_count(t_end: float, dt: float) -> tuple[int, float]:
    """Number of steps and the (possibly shorter) final step length."""
    if t_end <= 0.0 or dt <= 0.0:
        raise ValueError(f"need t_end > 0 and dt > 0, got {t_end}, {dt}")
    n = max(int(math.ceil(t_end / dt - 1e-12)), 1)
    if n >= MAX_STEPS:
        raise ValueError(f"{n} steps exceeds the counter budget {MAX_STEPS}")
    last = t_end - dt * (n - 1)
    return n, last


# ----------------------------------------------------------------------
# Compiled backend

if HAVE_NUMBA:
    _U_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
    _U_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
    _U_MIX2 = np.uint64(0x94D049BB133111EB)
    _U4 = np.uint64(4)
    _U11 = np.uint64(11)
    _U27 = np.uint64(27)
    _U30 = np.uint64(30)
    _U31 = np.uint64(31)
    _U40 = np.uint64(40)
    _U_CH2 = np.uint64(2)

    @njit(cache=True)
    def _uniform_u(key, path, step, channel):
        ctr = (path << _U40) | (step << _U4) | channel
        z = (key ^ (ctr * _U_GOLDEN)) + _U_GOLDEN
        z = (z ^ (z >> _U30)) * _U_MIX1
        z = (z ^ (z >> _U27)) * _U_MIX2
        z = z ^ (z >> _U31)
        return (z >> _U11) * _INV_2_53 + 0.5 * _INV_2_53

    @njit(cache=True, parallel=True)
    def _paths_numba(
        lx, ly, x0, y0, dt, key, n_paths, path0, bridge, n_steps, last_h, tau, outx, outy
    ):
        zero = np.uint64(0)
        one = np.uint64(1)
        for p in prange(n_paths):
            pu = path0 + np.uint64(p)
            x = x0
            y = y0
            ptau = -1.0
            ex = x0
            ey = y0
            for s in range(n_steps):
                su = np.uint64(s)
                h = dt if s < n_steps - 1 else last_h
                u1 = _uniform_u(key, pu, su, zero)
                u2 = _uniform_u(key, pu, su, one)
                r = math.sqrt(-2.0 * math.log(u1))
                a = _TWO_PI * u2
                sq = math.sqrt(h)
                nx = x + sq * (r * math.cos(a))
                ny = y + sq * (r * math.sin(a))
                if nx <= 0.0 or nx >= lx or ny <= 0.0 or ny >= ly:
                    th = 2.0
                    face = -1
                    if nx <= 0.0:
                        tc = x / (x - nx)
                        if tc < th:
                            th = tc
                            face = 0
                    if nx >= lx:
                        tc = (lx - x) / (nx - x)
                        if tc < th:
                            th = tc
                            face = 1
                    if ny <= 0.0:
                        tc = y / (y - ny)
                        if tc < th:
                            th = tc
                            face = 2
                    if ny >= ly:
                        tc = (ly - y) / (ny - y)
                        if tc < th:
                            th = tc
                            face = 3
                    ptau = s * dt + th * h
                    ex = x + th * (nx - x)
                    ey = y + th * (ny - y)
                    if face == 0:
                        ex = 0.0
                    elif face == 1:
                        ex = lx
                    elif face == 2:
                        ey = 0.0
                    else:
                        ey = ly
                    break
                if bridge:
                    s0 = x + nx
                    s1 = (lx - x) + (lx - nx)
                    s2 = y + ny
                    s3 = (ly - y) + (ly - ny)
                    face = 0
                    best = s0
                    if s1 < best:
                        best = s1
                        face = 1
                    if s2 < best:
                        best = s2
                        face = 2
                    if s3 < best:
                        best = s3
                        face = 3
                    if face == 0:
                        d1 = x
                        d2 = nx
                    elif face == 1:
                        d1 = lx - x
                        d2 = lx - nx
                    elif face == 2:
                        d1 = y
                        d2 = ny
                    else:
                        d1 = ly - y
                        d2 = ly - ny
                    pc = math.exp(-2.0 * d1 * d2 / h)
                    u3 = _uniform_u(key, pu, su, _U_CH2)
                    if u3 < pc:
                        th = d1 / (d1 + d2)
                        ptau = s * dt + th * h
                        ex = x + th * (nx - x)
                        ey = y + th * (ny - y)
                        if face == 0:
                            ex = 0.0
                        elif face == 1:
                            ex = lx
                        elif face == 2:
                            ey = 0.0
                        else:
                            ey = ly
                        break
                x = nx
                y = ny
            if ptau < 0.0:
                ex = x
                ey = y
            tau[p] = ptau
            outx[p] = ex
            outy[p] = ey


def warm_kernels() -> None:
    """Trigger jit compilation outside any timed section."""
    if HAVE_NUMBA:
        run_paths(1.0, 1.0, 0.5, 0.5, 0.01, 0.005, 1, 4, backend="numba")


# ----------------------------------------------------------------------
# Vectorized backend


def _normal_pair_np(key: int, paths: np.ndarray, step: int) -> tuple[np.ndarray, np.ndarray]:
    u1 = uniform_array(key, paths, step, 0)
    u2 = uniform_array(key, paths, step, 1)
    r = np.sqrt(-2.0 * np.log(u1))
    a = _TWO_PI * u2
    return r * np.cos(a), r * np.sin(a)


def _paths_numpy(
    lx, ly, x0, y0, dt, key, n_paths, path0, bridge, n_steps, last_h
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tau = np.full(n_paths, -1.0)
    outx = np.full(n_paths, x0)
    outy = np.full(n_paths, y0)
    alive = np.arange(n_paths)
    paths = (np.arange(n_paths, dtype=np.uint64) + np.uint64(path0))
    x = np.full(n_paths, x0)
    y = np.full(n_paths, y0)
    for s in range(n_steps):
        if alive.size == 0:
            break
        h = dt if s < n_steps - 1 else last_h
        z1, z2 = _normal_pair_np(key, paths[alive], s)
        sq = math.sqrt(h)
        nx = x[alive] + sq * z1
        ny = y[alive] + sq * z2
        ox, oy = x[alive], y[alive]
        crossed = (nx <= 0.0) | (nx >= lx) | (ny <= 0.0) | (ny >= ly)
        killed = np.zeros(alive.size, dtype=bool)
        if np.any(crossed):
            th = np.full(alive.size, 2.0)
            face = np.full(alive.size, -1)
            candidates = [
                (nx <= 0.0, ox, ox - nx),
                (nx >= lx, lx - ox, nx - ox),
                (ny <= 0.0, oy, oy - ny),
                (ny >= ly, ly - oy, ny - oy),
            ]
            for f, (mask_f, num, den) in enumerate(candidates):
                with np.errstate(divide="ignore", invalid="ignore"):
                    tc = np.where(mask_f, num / den, np.inf)
                better = mask_f & (tc < th)
                th = np.where(better, tc, th)
                face = np.where(better, f, face)
            hit = crossed
            ex = ox + th * (nx - ox)
            ey = oy + th * (ny - oy)
            ex = np.where(face == 0, 0.0, np.where(face == 1, lx, ex))
            ey = np.where(face == 2, 0.0, np.where(face == 3, ly, ey))
            idx = alive[hit]
            tau[idx] = s * dt + th[hit] * h
            outx[idx] = ex[hit]
            outy[idx] = ey[hit]
            killed |= hit
        if bridge:
            inside = ~crossed
            if np.any(inside):
                sums = np.stack(
                    [ox + nx, (lx - ox) + (lx - nx), oy + ny, (ly - oy) + (ly - ny)]
                )
                face = np.argmin(sums, axis=0)
                d1 = np.choose(face, [ox, lx - ox, oy, ly - oy])
                d2 = np.choose(face, [nx, lx - nx, ny, ly - ny])
                pc = np.exp(-2.0 * d1 * d2 / h)
                u3 = uniform_array(key, paths[alive], s, 2)
                cross = inside & (u3 < pc)
                if np.any(cross):
                    th = d1 / (d1 + d2)
                    ex = ox + th * (nx - ox)
                    ey = oy + th * (ny - oy)
                    ex = np.where(face == 0, 0.0, np.where(face == 1, lx, ex))
                    ey = np.where(face == 2, 0.0, np.where(face == 3, ly, ey))
                    idx = alive[cross]
                    tau[idx] = s * dt + th[cross] * h
                    outx[idx] = ex[cross]
                    outy[idx] = ey[cross]
                    killed |= cross
        x[alive] = nx
        y[alive] = ny
        alive = alive[~killed]
    if alive.size:
        outx[alive] = x[alive]
        outy[alive] = y[alive]
    return tau, outx, outy


# ----------------------------------------------------------------------
# Dispatch


def run_paths(
    lx: float,
    ly: float,
    x0: float,
    y0: float,
    t_end: float,
    dt: float,
    key: int,
    n_paths: int,
    *,
    path0: int = 0,
    bridge: bool = True,
    backend: str | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate paths from (x0, y0) until exit or t_end.

    Returns (tau, px, py): tau < 0 flags a survivor whose position at
    t_end is (px, py); otherwise tau is the interpolated exit time and
    (px, py) the point on the boundary face.
    """
    if not (0.0 < x0 < lx and 0.0 < y0 < ly):
        raise ValueError(f"start ({x0}, {y0}) not inside (0,{lx})x(0,{ly})")
    if n_paths < 1:
        raise ValueError(f"need at least one path, got {n_paths}")
    if path0 < 0 or path0 + n_paths > MAX_PATHS:
        raise ValueError("path indices exceed the counter budget")
    n_steps, last_h = step_count(t_end, dt)
    name = active_backend(backend)
    if name == "numba":
        tau = np.empty(n_paths)
        outx = np.empty(n_paths)
        outy = np.empty(n_paths)
        _paths_numba(
            float(lx),
            float(ly),
            float(x0),
            float(y0),
            float(dt),
            np.uint64(key),
            n_paths,
            np.uint64(path0),
            bridge,
            n_steps,
            float(last_h),
            tau,
            outx,
            outy,
        )
        return tau, outx, outy
    return _paths_numpy(
        float(lx), float(ly), float(x0), float(y0), float(dt), int(key),
        n_paths, int(path0), bridge, n_steps, float(last_h),
    )
