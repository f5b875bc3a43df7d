"""Observables on the rectangle: multiplication operators, homogeneous
momentum symbols, and their tensor products.

Matrix elements are taken in the Dirichlet eigenbasis.  For rectangle
modes every named observable has a closed form:

* multiplication by ``cos(2 pi k x / Lx)`` couples modes with equal n and
  ``|m_j - m_k| = 2k`` (coefficient 1/2) and subtracts 1/2 on the
  diagonal pairs with ``m_j + m_k = 2k``;
* indicator boxes reduce to 1-D sine overlaps with explicit sines;
* a momentum symbol ``a(xi)``, homogeneous of degree zero and even in
  each component, acts diagonally: a mode splits into four plane waves
  with weight 1/4 each, and recombining against another mode kills every
  off-diagonal term by sine-family orthogonality on [0, L].

For symbols that are not componentwise even the recombination leaves
boundary cross terms; their size is controlled by the one-dimensional
integrals ``I(k, L) = int_0^L exp(i pi k x / L) dx`` (zero for even
k != 0, ``2L/(i pi k)`` for odd k) and reported by
:func:`dropped_term_bound` rather than silently ignored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Rectangle
from .spectral import Spectrum, inner_product


class ObservableError(ValueError):
    pass


@dataclass(frozen=True)
class Constant:
    kind = "position"
    value: float = 1.0

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(x, dtype=float), self.value)


@dataclass(frozen=True)
class CosAxis:
    """cos(2 pi k x_axis / L_axis) on a rectangle."""

    kind = "position"
    axis: int = 0
    k: int = 1

    def __post_init__(self):
        if self.axis not in (0, 1):
            raise ObservableError(f"axis must be 0 or 1, got {self.axis}")
        if self.k < 1:
            raise ObservableError(f"frequency k must be >= 1, got {self.k}")

    def length(self, domain: Rectangle) -> float:
        return domain.lx if self.axis == 0 else domain.ly

    def __call__(self, x, y, *, domain: Rectangle) -> np.ndarray:
        coord = np.asarray(x if self.axis == 0 else y, dtype=float)
        return np.cos(2.0 * math.pi * self.k * coord / self.length(domain))


@dataclass(frozen=True)
class BoxWindow:
    """Indicator of [x0, x1] x [y0, y1] in absolute coordinates."""

    kind = "position"
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ObservableError("box needs x0 < x1 and y0 < y1")

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)
        return inside.astype(float)


def step(axis: int, cut: float, domain: Rectangle) -> BoxWindow:
    """Indicator of {x_axis < cut} as a box over the full other side."""
    if axis == 0:
        return BoxWindow(0.0, cut, 0.0, domain.ly)
    if axis == 1:
        return BoxWindow(0.0, domain.lx, 0.0, cut)
    raise ObservableError(f"axis must be 0 or 1, got {axis}")


@dataclass(frozen=True)
class PositionFunction:
    """Arbitrary bounded b(x, y); elements fall back to quadrature."""

    kind = "position"
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "custom"

    def __call__(self, x, y) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, float), np.asarray(y, float)), float)


@dataclass(frozen=True)
class MomentumSymbol:
    """a(xi), homogeneous of degree zero, sampled off the origin."""

    kind = "momentum"
    fn: Callable[[float, float], float]
    name: str = "symbol"

    def __call__(self, xi_x: float, xi_y: float) -> float:
        if xi_x == 0.0 and xi_y == 0.0:
            raise ObservableError("momentum symbol undefined at the origin")
        return float(self.fn(xi_x, xi_y))

    def is_componentwise_even(self, samples: int = 17) -> bool:
        ang = np.linspace(0.1, 2.0 * math.pi, samples)
        for t in ang:
            cx, cy = math.cos(t), math.sin(t)
            v = self(cx, cy)
            if not (
                math.isclose(v, self(-cx, cy), rel_tol=0, abs_tol=1e-12)
                and math.isclose(v, self(cx, -cy), rel_tol=0, abs_tol=1e-12)
            ):
                return False
        return True


def horizontal_momentum_fraction() -> MomentumSymbol:
    """a(xi) = xi_1^2 / |xi|^2, the squared cosine of the direction."""
    return MomentumSymbol(lambda a, b: a * a / (a * a + b * b), name="xi1^2/|xi|^2")


@dataclass(frozen=True)
class TensorObservable:
    """b(x) a(xi) with the symmetrized element (a_j + a_k) b_jk / 2."""

    kind = "tensor"
    position: object
    momentum: MomentumSymbol


Observable = object  # any of the classes above


# ----------------------------------------------------------------------
# 1-D overlaps on [0, L] for normalized sine modes sqrt(2/L) sin(a pi x/L)


def _sine_overlap(a: int, b: int, lo: float, hi: float, length: float) -> float:
    """(2/L) * int_lo^hi sin(a pi x/L) sin(b pi x/L) dx."""

    def anti(k: int, x: float) -> float:
        # (2/L) * int_0^x cos(k pi t / L) dt
        if k == 0:
            return 2.0 * x / length
        return 2.0 * math.sin(k * math.pi * x / length) / (k * math.pi)

    term = lambda k: 0.5 * (anti(k, hi) - anti(k, lo))
    return term(a - b) - term(a + b)


def _cos_overlap(a: int, b: int, k2: int) -> float:
    """(2/L) * int_0^L cos(k2 pi x/L) sin(a pi x/L) sin(b pi x/L) dx."""
    out = 0.0
    if abs(a - b) == k2:
        out += 0.5
    if a + b == k2:
        out -= 0.5
    return out


# ----------------------------------------------------------------------
# Matrix elements


def _require_rectangle(s: Spectrum) -> Rectangle:
    if not isinstance(s.domain, Rectangle) or s.kind != "analytic":
        raise ObservableError(
            "closed-form matrix elements need an analytic rectangle spectrum"
        )
    return s.domain


def _mode_numbers(s: Spectrum, i: int) -> tuple[int, int]:
    m, n = s.modes[i]
    return int(m), int(n)


def _momentum_diag(s: Spectrum, obs: MomentumSymbol, i: int) -> float:
    dom = _require_rectangle(s)
    m, n = _mode_numbers(s, i)
    xi_x = m * math.pi / dom.lx
    xi_y = n * math.pi / dom.ly
    return 0.25 * (
        obs(xi_x, xi_y) + obs(-xi_x, xi_y) + obs(xi_x, -xi_y) + obs(-xi_x, -xi_y)
    )


def _position_element(s: Spectrum, obs, j: int, k: int, quad: int) -> float:
    if isinstance(obs, Constant):
        return obs.value if j == k else 0.0
    if s.kind == "analytic" and isinstance(s.domain, Rectangle):
        dom = s.domain
        mj, nj = _mode_numbers(s, j)
        mk, nk = _mode_numbers(s, k)
        if isinstance(obs, CosAxis):
            if obs.axis == 0:
                return _cos_overlap(mj, mk, 2 * obs.k) if nj == nk else 0.0
            return _cos_overlap(nj, nk, 2 * obs.k) if mj == mk else 0.0
        if isinstance(obs, BoxWindow):
            ox = _sine_overlap(mj, mk, obs.x0, obs.x1, dom.lx)
            oy = _sine_overlap(nj, nk, obs.y0, obs.y1, dom.ly)
            return ox * oy
    # Generic route: quadrature against the evaluated modes.
    if isinstance(obs, CosAxis):
        dom = s.domain
        if not isinstance(dom, Rectangle):
            raise ObservableError("cos-axis observables live on rectangles")
        fn = lambda x, y: obs(x, y, domain=dom)
    elif callable(obs):
        fn = obs
    else:
        raise ObservableError(f"unsupported position observable {obs!r}")
    f = lambda x, y: fn(x, y) * s.eval(j, np.stack([x, y], axis=-1))
    g = lambda x, y: s.eval(k, np.stack([x, y], axis=-1))
    return _quad_pair(s, f, g, quad)


def _quad_pair(s: Spectrum, f, g, quad: int) -> float:
    from numpy.polynomial.legendre import leggauss

    if s.kind == "grid":
        xs, ys = s.grid.node_xy()
        return float(s.grid.h**2 * np.sum(f(xs, ys) * g(xs, ys)))
    x0, y0, x1, y1 = s.domain.bounding_box()
    nodes, weights = leggauss(quad)
    gx = 0.5 * (x1 - x0) * nodes + 0.5 * (x1 + x0)
    gy = 0.5 * (y1 - y0) * nodes + 0.5 * (y1 + y0)
    wx = 0.5 * (x1 - x0) * weights
    wy = 0.5 * (y1 - y0) * weights
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    vals = f(xx.ravel(), yy.ravel()) * g(xx.ravel(), yy.ravel())
    return float((wx[:, None] * wy[None, :]).ravel() @ vals)


def matrix_element(s: Spectrum, obs, j: int, k: int, *, quad: int = 256) -> float:
    """<A u_j, u_k> for the observable A."""
    if getattr(obs, "kind", None) == "momentum":
        if not obs.is_componentwise_even():
            raise ObservableError(
                "symbol is not even in each component; its off-diagonal "
                "boundary terms do not cancel -- see dropped_term_bound"
            )
        return _momentum_diag(s, obs, j) if j == k else 0.0
    if getattr(obs, "kind", None) == "tensor":
        b = _position_element(s, obs.position, j, k, quad)
        aj = _momentum_diag(s, obs.momentum, j)
        ak = _momentum_diag(s, obs.momentum, k)
        return 0.5 * (aj + ak) * b
    return _position_element(s, obs, j, k, quad)


def matrix_table(
    s: Spectrum, obs, indices: list[int] | np.ndarray, *, quad: int = 256
) -> np.ndarray:
    """Symmetric table H[a, b] = <A u_ia, u_ib> over the index list."""
    idx = list(indices)
    h = np.zeros((len(idx), len(idx)))
    for a, j in enumerate(idx):
        for b in range(a, len(idx)):
            v = matrix_element(s, obs, j, idx[b], quad=quad)
            h[a, b] = v
            h[b, a] = v
    return h


def rotated_diagonal(h: np.ndarray, q: np.ndarray) -> np.ndarray:
    """diag(Q H Q^T): observable averages of the rotated modes."""
    return np.einsum("ij,jk,ik->i", q, h, q)


def dropped_term_bound(s: Spectrum, obs: MomentumSymbol, j: int, k: int) -> float:
    """Worst-case size of the boundary cross terms for an uneven symbol.

    Each plane-wave pair that survives on neither axis contributes at most
    |a| * |I(kx, Lx) I(ky, Ly)| / (Lx Ly) with I(k, L) = 0 for even k != 0
    and |I| = 2L / (pi |k|) for odd k.
    """
    dom = _require_rectangle(s)
    mj, nj = _mode_numbers(s, j)
    mk, nk = _mode_numbers(s, k)

    def mag(kk: int, length: float) -> float:
        if kk == 0:
            return length
        if kk % 2 == 0:
            return 0.0
        return 2.0 * length / (math.pi * abs(kk))

    xi_x = mj * math.pi / dom.lx
    xi_y = nj * math.pi / dom.ly
    amax = max(
        abs(obs(sx * xi_x, sy * xi_y)) for sx in (1, -1) for sy in (1, -1)
    )
    total = 0.0
    for sx in (1, -1):
        for sy in (1, -1):
            kx = sx * mj - mk
            ky = sy * nj - nk
            if kx == 0 and ky == 0:
                continue  # torus-resonant pair, kept exactly
            total += mag(kx, dom.lx) * mag(ky, dom.ly)
    return 0.25 * amax * total / (dom.lx * dom.ly)


# ----------------------------------------------------------------------
# Phase-space averages and spectral windows


def position_average(domain, obs, *, quad: int = 256) -> float:
    """Mean of b over the domain (normalized by the volume)."""
    if isinstance(obs, Constant):
        return obs.value
    if isinstance(domain, Rectangle):
        if isinstance(obs, CosAxis):
            return 0.0  # whole periods of a cosine integrate to zero
        if isinstance(obs, BoxWindow):
            x0 = max(obs.x0, 0.0)
            x1 = min(obs.x1, domain.lx)
            y0 = max(obs.y0, 0.0)
            y1 = min(obs.y1, domain.ly)
            area = max(x1 - x0, 0.0) * max(y1 - y0, 0.0)
            return area / domain.volume()
    if isinstance(obs, CosAxis):
        raise ObservableError("cos-axis observables live on rectangles")
    from numpy.polynomial.legendre import leggauss

    x0, y0, x1, y1 = domain.bounding_box()
    nodes, weights = leggauss(quad)
    gx = 0.5 * (x1 - x0) * nodes + 0.5 * (x1 + x0)
    gy = 0.5 * (y1 - y0) * nodes + 0.5 * (y1 + y0)
    wx = 0.5 * (x1 - x0) * weights
    wy = 0.5 * (y1 - y0) * weights
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    px, py = xx.ravel(), yy.ravel()
    mask = _inside_mask(domain, px, py).astype(float)
    vals = np.asarray(obs(px, py), dtype=float)
    w2 = (wx[:, None] * wy[None, :]).ravel()
    return float((w2 * mask * vals).sum() / (w2 * mask).sum())


def _inside_mask(domain, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    from .geometry import Disk

    if isinstance(domain, Rectangle):
        return (x > 0) & (x < domain.lx) & (y > 0) & (y < domain.ly)
    if isinstance(domain, Disk):
        return x * x + y * y < domain.r * domain.r
    return np.array([domain.contains((xi, yi)) for xi, yi in zip(x, y)])


def direction_average(obs: MomentumSymbol, *, samples: int = 8192) -> float:
    """Mean of a over the unit circle by the periodic trapezoid rule."""
    t = np.arange(samples) * (2.0 * math.pi / samples)
    vals = np.array([obs(math.cos(a), math.sin(a)) for a in t])
    return float(vals.mean())


def phase_space_average(domain, obs, *, quad: int = 256) -> float:
    """Average of the observable over the unit cosphere bundle."""
    kind = getattr(obs, "kind", None)
    if kind == "momentum":
        return direction_average(obs)
    if kind == "tensor":
        return position_average(domain, obs.position, quad=quad) * direction_average(
            obs.momentum
        )
    return position_average(domain, obs, quad=quad)


@dataclass(frozen=True)
class WindowStat:
    lo: float
    hi: float
    count: int
    total: float
    mean: float
    empty: bool


def window_indices(s: Spectrum, lo: float, hi: float) -> np.ndarray:
    return np.where((s.lambdas >= lo) & (s.lambdas < hi))[0]


def window_average(s: Spectrum, obs, lo: float, hi: float, *, quad: int = 256) -> WindowStat:
    """Diagonal matrix elements summed over the window lo <= lambda < hi."""
    idx = window_indices(s, lo, hi)
    if len(idx) == 0:
        return WindowStat(lo, hi, 0, 0.0, math.nan, True)
    vals = [matrix_element(s, obs, int(i), int(i), quad=quad) for i in idx]
    total = math.fsum(vals)
    return WindowStat(lo, hi, len(idx), total, total / len(idx), False)


def sup_bound(obs, domain=None, *, samples: int = 256) -> float:
    """sup |observable symbol|, exact for named forms, sampled otherwise."""
    kind = getattr(obs, "kind", None)
    if isinstance(obs, Constant):
        return abs(obs.value)
    if isinstance(obs, (CosAxis, BoxWindow)):
        return 1.0
    if kind == "momentum":
        t = np.arange(8192) * (2.0 * math.pi / 8192)
        return float(max(abs(obs(math.cos(a), math.sin(a))) for a in t))
    if kind == "tensor":
        return sup_bound(obs.position, domain, samples=samples) * sup_bound(
            obs.momentum
        )
    if callable(obs):
        if domain is None:
            raise ObservableError("sampled sup bound needs the domain")
        x0, y0, x1, y1 = domain.bounding_box()
        gx = np.linspace(x0, x1, samples)
        gy = np.linspace(y0, y1, samples)
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        px, py = xx.ravel(), yy.ravel()
        mask = _inside_mask(domain, px, py)
        vals = np.asarray(obs(px[mask], py[mask]), dtype=float)
        return float(np.max(np.abs(vals)))
    raise ObservableError(f"cannot bound {obs!r}")


def named_observable(name: str, domain=None) -> object:
    """Observables addressable from configuration files."""
    if name == "constant":
        return Constant(1.0)
    if name == "cos-x":
        return CosAxis(axis=0, k=1)
    if name == "cos-y":
        return CosAxis(axis=1, k=1)
    if name == "half-box":
        if not isinstance(domain, Rectangle):
            raise ObservableError("half-box needs a rectangle domain")
        return step(0, domain.lx / 2.0, domain)
    if name == "horizontal-momentum":
        return horizontal_momentum_fraction()
    if name == "cos-x-horizontal-momentum":
        return TensorObservable(
            position=CosAxis(axis=0, k=1), momentum=horizontal_momentum_fraction()
        )
    raise ObservableError(f"unknown observable {name!r}")
