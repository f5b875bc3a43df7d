"""Dirichlet eigenpairs on planar domains.

Two backends produce a :class:`Spectrum`:

* ``rectangle_spectrum`` enumerates the closed-form modes
  u_mn = 2 (Lx Ly)^{-1/2} sin(m pi x / Lx) sin(n pi y / Ly) with
  lambda^2 = pi^2 (m^2/Lx^2 + n^2/Ly^2).  This is the trusted oracle
  every other computation is checked against.
* ``fd_spectrum`` discretizes -Laplace with the 5-point stencil on a
  uniform grid (zero exterior values) and extracts the lowest modes with
  a shift-invert Lanczos solver.

Conventions: entries are sorted ascending by lambda (the frequency; the
eigenvalue of -Laplace is lambda^2), analytic ties ordered by (m, n).
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Domain, GeometryError, Rectangle, domain_from_config

_FMT = "%.17g"


class SpectrumError(ValueError):
    """Empty spectrum, bad cutoff, or malformed spectrum file."""


class ConvergenceError(RuntimeError):
    """Eigensolver failed to reach the target residual."""

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class EigenPair:
    """One mode: lam is the frequency, so -Laplace u = lam^2 u."""

    index: int
    lam: float
    mode: tuple[int, int] | None = None
    values: np.ndarray | None = None


@dataclass(frozen=True)
class GridMeta:
    """Uniform grid carrying the finite-difference quadrature."""

    h: float
    x0: float
    y0: float
    nx: int  # node counts including the boundary ring
    ny: int
    interior: np.ndarray  # (n_interior, 2) int array of (ix, iy) nodes

    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x0 + self.interior[:, 0] * self.h
        ys = self.y0 + self.interior[:, 1] * self.h
        return xs, ys


class Spectrum:
    """Ascending eigenpairs with their quadrature, immutable once built."""

    def __init__(
        self,
        domain: Domain,
        lambdas: np.ndarray,
        *,
        modes: np.ndarray | None = None,
        vectors: np.ndarray | None = None,
        grid: GridMeta | None = None,
        lambda_max: float | None = None,
    ):
        self.domain = domain
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.lambdas.setflags(write=False)
        self.modes = None
        self.vectors = None
        self.grid = grid
        self.lambda_max = lambda_max
        if modes is not None:
            self.modes = np.asarray(modes, dtype=np.int64)
            self.modes.setflags(write=False)
        if vectors is not None:
            self.vectors = np.asarray(vectors, dtype=float)
            self.vectors.setflags(write=False)
        if self.modes is None and self.vectors is None:
            raise SpectrumError("spectrum needs analytic modes or grid vectors")

    @property
    def kind(self) -> str:
        return "analytic" if self.modes is not None else "grid"

    def __len__(self) -> int:
        return len(self.lambdas)

    def pair(self, i: int) -> EigenPair:
        if self.modes is not None:
            m, n = self.modes[i]
            return EigenPair(i, float(self.lambdas[i]), mode=(int(m), int(n)))
        return EigenPair(i, float(self.lambdas[i]), values=self.vectors[i])

    @property
    def pairs(self) -> tuple[EigenPair, ...]:
        return tuple(self.pair(i) for i in range(len(self)))

    def count_below(self, lam: float) -> int:
        """Number of eigenvalues with lambda <= lam."""
        return int(np.searchsorted(self.lambdas, lam, side="right"))

    # -- evaluation ---------------------------------------------------

    def _eval_analytic(self, i: int, pts: np.ndarray) -> np.ndarray:
        dom = self.domain
        m, n = self.modes[i]
        x, y = pts[:, 0], pts[:, 1]
        inside = (x > 0) & (x < dom.lx) & (y > 0) & (y < dom.ly)
        amp = 2.0 / math.sqrt(dom.lx * dom.ly)
        vals = amp * np.sin(m * np.pi * x / dom.lx) * np.sin(n * np.pi * y / dom.ly)
        return np.where(inside, vals, 0.0)

    def _full_grid(self, i: int) -> np.ndarray:
        g = self.grid
        full = np.zeros((g.nx, g.ny))
        full[g.interior[:, 0], g.interior[:, 1]] = self.vectors[i]
        return full

    def _eval_grid(self, i: int, pts: np.ndarray) -> np.ndarray:
        g = self.grid
        full = self._full_grid(i)
        fx = (pts[:, 0] - g.x0) / g.h
        fy = (pts[:, 1] - g.y0) / g.h
        ix = np.clip(np.floor(fx).astype(int), 0, g.nx - 2)
        iy = np.clip(np.floor(fy).astype(int), 0, g.ny - 2)
        tx = np.clip(fx - ix, 0.0, 1.0)
        ty = np.clip(fy - iy, 0.0, 1.0)
        vals = (
            full[ix, iy] * (1 - tx) * (1 - ty)
            + full[ix + 1, iy] * tx * (1 - ty)
            + full[ix, iy + 1] * (1 - tx) * ty
            + full[ix + 1, iy + 1] * tx * ty
        )
        outside = np.array([not self.domain.contains((px, py)) for px, py in pts])
        vals[outside] = 0.0
        return vals

    def eval(self, i: int, pts) -> np.ndarray:
        """Values of u_i at the given points; zero outside the open domain."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.modes is not None:
            return self._eval_analytic(i, pts)
        return self._eval_grid(i, pts)


def eigenfunction_eval(s: Spectrum, i: int, pts) -> np.ndarray:
    return s.eval(i, pts)


# -- analytic rectangle -----------------------------------------------


def rectangle_spectrum(lx: float, ly: float, lambda_max: float) -> Spectrum:
    """All modes with lambda <= lambda_max on (0,lx) x (0,ly), sorted."""
    dom = Rectangle(lx, ly)
    ground = math.pi * math.sqrt(1.0 / lx**2 + 1.0 / ly**2)
    if lambda_max < ground:
        raise SpectrumError(
            f"lambda_max={lambda_max} is below the ground state {ground:.6g}"
        )
    lams, ms, ns = [], [], []
    m_top = int(lx * lambda_max / math.pi) + 1
    for m in range(1, m_top + 1):
        rem = lambda_max**2 - (m * math.pi / lx) ** 2
        if rem < 0:
            break
        n_top = int(ly * math.sqrt(rem) / math.pi) + 1
        for n in range(1, n_top + 1):
            lam = math.pi * math.sqrt((m / lx) ** 2 + (n / ly) ** 2)
            if lam <= lambda_max:
                lams.append(lam)
                ms.append(m)
                ns.append(n)
    if not lams:
        raise SpectrumError("no modes at or below lambda_max")
    lam_arr = np.array(lams)
    m_arr = np.array(ms)
    n_arr = np.array(ns)
    order = np.lexsort((n_arr, m_arr, lam_arr))
    return Spectrum(
        dom,
        lam_arr[order],
        modes=np.column_stack([m_arr[order], n_arr[order]]),
        lambda_max=lambda_max,
    )


# -- finite differences -----------------------------------------------


def _grid_for(domain: Domain, h: float) -> GridMeta:
    x0, y0, x1, y1 = domain.bounding_box()
    nx = int(round((x1 - x0) / h)) + 1
    ny = int(round((y1 - y0) / h)) + 1
    ixs, iys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ixs, iys = ixs.ravel(), iys.ravel()
    keep = np.array(
        [domain.contains((x0 + i * h, y0 + j * h)) for i, j in zip(ixs, iys)]
    )
    interior = np.column_stack([ixs[keep], iys[keep]])
    return GridMeta(h=h, x0=x0, y0=y0, nx=nx, ny=ny, interior=interior)


def _laplacian_5pt(grid: GridMeta) -> sp.csr_matrix:
    n = len(grid.interior)
    idx = -np.ones((grid.nx, grid.ny), dtype=np.int64)
    idx[grid.interior[:, 0], grid.interior[:, 1]] = np.arange(n)
    inv_h2 = 1.0 / (grid.h * grid.h)
    rows, cols, vals = [], [], []
    for k, (i, j) in enumerate(grid.interior):
        rows.append(k)
        cols.append(k)
        vals.append(4.0 * inv_h2)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < grid.nx and 0 <= nj < grid.ny and idx[ni, nj] >= 0:
                rows.append(k)
                cols.append(int(idx[ni, nj]))
                vals.append(-inv_h2)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _cluster_orthonormalize(mu: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Re-orthonormalize vectors inside numerically degenerate clusters."""
    n = len(mu)
    start = 0
    out = vecs.copy()
    while start < n:
        stop = start + 1
        while stop < n and abs(mu[stop] - mu[stop - 1]) < 1e-6 * abs(mu[stop]):
            stop += 1
        if stop - start > 1:
            q, r = np.linalg.qr(out[:, start:stop])
            q *= np.sign(np.diag(r))
            out[:, start:stop] = q
        start = stop
    return out


def fd_spectrum(domain: Domain, h: float, k: int) -> Spectrum:
    """Lowest k modes of the 5-point Dirichlet Laplacian at spacing h."""
    grid = _grid_for(domain, h)
    n = len(grid.interior)
    if n < k:
        raise SpectrumError(f"only {n} interior nodes at h={h}, need >= {k}")
    a = _laplacian_5pt(grid)
    v0 = np.full(n, 1.0 / math.sqrt(n))
    maxiter = int(10 * k * math.sqrt(n)) + 100
    try:
        mu, vecs = spla.eigsh(a, k=k, sigma=0.0, which="LM", v0=v0, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"eigensolver stalled after {maxiter} iterations",
            residuals=getattr(exc, "eigenvalues", None),
        ) from exc
    order = np.argsort(mu, kind="stable")
    mu, vecs = mu[order], vecs[:, order]
    vecs = _cluster_orthonormalize(mu, vecs)
    resid = np.array(
        [np.linalg.norm(a @ vecs[:, i] - mu[i] * vecs[:, i]) for i in range(k)]
    )
    bad = resid > 1e-8 * mu
    if bad.any():
        raise ConvergenceError(
            f"residual check failed for {bad.sum()} modes "
            f"(worst {float((resid / mu).max()):.3e} relative)",
            residuals=resid,
        )
    # ||v||_2 = 1 from the solver; the grid quadrature norm needs /h.
    u = (vecs / grid.h).T.copy()
    return Spectrum(domain, np.sqrt(mu), vectors=u, grid=grid, lambda_max=None)


# -- inner products ---------------------------------------------------


def _gauss_legendre_2d(dom: Rectangle, n: int):
    gx, wx = np.polynomial.legendre.leggauss(n)
    xs = 0.5 * dom.lx * (gx + 1.0)
    ys = 0.5 * dom.ly * (gx + 1.0)
    ws = 0.5 * dom.lx * wx
    wy = 0.5 * dom.ly * wx
    return xs, ys, np.outer(ws, wy)


def _as_node_values(s: Spectrum, f, xs, ys) -> np.ndarray:
    """Evaluate an index / callable / array argument on quadrature nodes."""
    if isinstance(f, (int, np.integer)):
        if s.kind == "analytic":
            dom = s.domain
            m, n = s.modes[int(f)]
            amp = 2.0 / math.sqrt(dom.lx * dom.ly)
            return amp * np.outer(
                np.sin(m * np.pi * xs / dom.lx), np.sin(n * np.pi * ys / dom.ly)
            )
        return s.vectors[int(f)]
    if callable(f):
        if xs.ndim == 1 and s.kind == "analytic":
            xg, yg = np.meshgrid(xs, ys, indexing="ij")
            return np.asarray(f(xg, yg), dtype=float)
        return np.asarray(f(xs, ys), dtype=float)
    arr = np.asarray(f, dtype=float)
    return arr


def inner_product(s: Spectrum, f, g, *, quad_points: int = 256) -> float:
    """L2 inner product under the spectrum's quadrature.

    Arguments may be eigenfunction indices, callables f(x, y), or (grid
    case) arrays of interior node values.  Index pairs take the exact
    orthonormality shortcut on the analytic backend.
    """
    if (
        s.kind == "analytic"
        and isinstance(f, (int, np.integer))
        and isinstance(g, (int, np.integer))
    ):
        return 1.0 if int(f) == int(g) else 0.0
    if s.kind == "analytic":
        dom = s.domain
        xs, ys, w = _gauss_legendre_2d(dom, quad_points)
        fv = _as_node_values(s, f, xs, ys)
        gv = _as_node_values(s, g, xs, ys)
        return float(np.sum(fv * gv * w))
    xs, ys = s.grid.node_xy()
    fv = _as_node_values(s, f, xs, ys)
    gv = _as_node_values(s, g, xs, ys)
    if fv.shape != gv.shape:
        raise SpectrumError(f"quadrature shape mismatch: {fv.shape} vs {gv.shape}")
    return float(s.grid.h**2 * np.sum(fv * gv))


def gram_matrix(s: Spectrum, upto: int) -> np.ndarray:
    """Gram matrix of the first `upto` eigenfunctions under the quadrature."""
    if s.kind == "analytic":
        dom = s.domain
        xs, ys, w = _gauss_legendre_2d(dom, 256)
        vals = np.array([_as_node_values(s, i, xs, ys) for i in range(upto)])
        flat = vals.reshape(upto, -1) * np.sqrt(w).ravel()
        return flat @ flat.T
    v = s.vectors[:upto]
    return s.grid.h**2 * (v @ v.T)


# -- serialization ----------------------------------------------------


def save_spectrum(s: Spectrum, path) -> None:
    """Write the structured-text spectrum file (see module docs)."""
    buf = io.StringIO()
    buf.write("speclab-spectrum v1\n")
    buf.write("domain: " + json.dumps(s.domain.as_config()) + "\n")
    if s.kind == "analytic":
        buf.write("quadrature: analytic\n")
    else:
        g = s.grid
        buf.write(
            "quadrature: grid h=%s x0=%s y0=%s nx=%d ny=%d\n"
            % (_FMT % g.h, _FMT % g.x0, _FMT % g.y0, g.nx, g.ny)
        )
    lm = "none" if s.lambda_max is None else _FMT % s.lambda_max
    buf.write(f"lambda_max: {lm}\n")
    buf.write(f"count: {len(s)}\n")
    if s.kind == "analytic":
        buf.write("columns: index,lambda,m,n\n")
        for i in range(len(s)):
            buf.write(
                "%d,%s,%d,%d\n" % (i, _FMT % s.lambdas[i], s.modes[i, 0], s.modes[i, 1])
            )
    else:
        buf.write("columns: index,lambda,values\n")
        for i in range(len(s)):
            buf.write("%d,%s\n" % (i, _FMT % s.lambdas[i]))
            buf.write(" ".join(_FMT % v for v in s.vectors[i]) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def _expect(line: str, prefix: str) -> str:
    if not line.startswith(prefix):
        raise SpectrumError(f"bad spectrum file: expected {prefix!r}, got {line!r}")
    return line[len(prefix):].strip()


def load_spectrum(path) -> Spectrum:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    it = iter(lines)
    if next(it) != "speclab-spectrum v1":
        raise SpectrumError("not a speclab spectrum file (bad magic line)")
    try:
        domain = domain_from_config(json.loads(_expect(next(it), "domain:")))
    except (json.JSONDecodeError, GeometryError) as exc:
        raise SpectrumError(f"bad domain header: {exc}") from exc
    quad = _expect(next(it), "quadrature:")
    lm_txt = _expect(next(it), "lambda_max:")
    lambda_max = None if lm_txt == "none" else float(lm_txt)
    count = int(_expect(next(it), "count:"))
    columns = _expect(next(it), "columns:")
    if quad == "analytic":
        if columns != "index,lambda,m,n":
            raise SpectrumError(f"unexpected columns {columns!r}")
        lams = np.empty(count)
        modes = np.empty((count, 2), dtype=np.int64)
        for i in range(count):
            idx, lam, m, n = next(it).split(",")
            lams[i] = float(lam)
            modes[i] = (int(m), int(n))
        return Spectrum(domain, lams, modes=modes, lambda_max=lambda_max)
    parts = dict(p.split("=") for p in quad.split()[1:])
    lams = np.empty(count)
    vectors = []
    for i in range(count):
        idx, lam = next(it).split(",")
        lams[i] = float(lam)
        vectors.append(np.array(next(it).split(), dtype=float))
    grid_probe = _grid_for(domain, float(parts["h"]))
    g = GridMeta(
        h=float(parts["h"]),
        x0=float(parts["x0"]),
        y0=float(parts["y0"]),
        nx=int(parts["nx"]),
        ny=int(parts["ny"]),
        interior=grid_probe.interior,
    )
    return Spectrum(domain, lams, vectors=np.array(vectors), grid=g, lambda_max=lambda_max)
