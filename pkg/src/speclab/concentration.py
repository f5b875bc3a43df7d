"""Empirical concentration of quadratic forms in random rotations.

Two experiment families live here:

* ``rotation_tail`` — the observable average ``<A v, v>`` of a randomly
  rotated block member ``v = sum_j q_j u_j`` is the quadratic form
  ``q^T H q`` of a uniform sphere vector; its deviation from the block
  mean ``B = tr(H)/n`` concentrates as the block grows.
* ``hanson_wright_tail`` — tails of ``X^T M X - E`` for independent
  sub-Gaussian coordinates, reported against the two-regime bound shape
  ``2 exp(-c min(t^2/||M||_HS^2, t/||M||))`` with the constant fitted
  from the data (never asserted a priori).

By exchangeability of the rows of a Haar-distributed orthogonal matrix,
the law of ``<A v_i, v_i>`` does not depend on i, so replicas fix i = 1
and sample the single row directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .observables import matrix_table, sup_bound
from .operators import NormConvergenceError, operator_norm
from .rng import philox
from .spectral import Spectrum


class ConcentrationError(ValueError):
    pass


@dataclass(frozen=True)
class TailReport:
    n: int
    t: float
    replicas: int
    empirical_tail: float
    bound_value: float = math.nan
    fitted_c: float = math.nan
    seed: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.replicas < 100:
            raise ConcentrationError(f"need >= 100 replicas, got {self.replicas}")
        if not 0.0 <= self.empirical_tail <= 1.0:
            raise ConcentrationError(f"tail {self.empirical_tail} outside [0, 1]")

    @property
    def stderr(self) -> float:
        p = self.empirical_tail
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.replicas)


def sphere_rows(n: int, count: int, seed: int, *labels) -> np.ndarray:
    """`count` independent uniform unit vectors in R^n, one per row."""
    g = philox(seed, "sphere", *labels).standard_normal((count, n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # A row of all-zero draws has probability 0; regenerate defensively.
    bad = np.where(norms[:, 0] == 0.0)[0]
    for i in bad:
        g[i, 0] = 1.0
        norms[i, 0] = 1.0
    return g / norms


def rotation_deviations(
    s: Spectrum, members, a, replicas: int, seed: int, *, quad: int = 256
) -> np.ndarray:
    """Samples of <A v, v> - tr(H)/n over fresh random rotations."""
    members = list(members)
    n = len(members)
    if n < 2:
        raise ConcentrationError(f"need at least 2 members, got {n}")
    h = matrix_table(s, a, members, quad=quad)
    q = sphere_rows(n, replicas, seed, "rotation", n)
    forms = np.einsum("ri,ij,rj->r", q, h, q)
    return forms - np.trace(h) / n


def rotation_tail(
    s: Spectrum, members, a, t: float, replicas: int, seed: int
) -> TailReport:
    """Empirical P(|<A v, v> - (1/n) sum_j <A u_j, u_j>| >= t)."""
    dev = rotation_deviations(s, members, a, replicas, seed)
    tail = float(np.mean(np.abs(dev) >= t))
    return TailReport(
        n=len(list(members)),
        t=t,
        replicas=replicas,
        empirical_tail=tail,
        seed=(seed, "rotation"),
    )


# ----------------------------------------------------------------------
# Hanson-Wright


def _draw(distribution: str, shape, seed: int, *labels) -> np.ndarray:
    gen = philox(seed, "hw", distribution, *labels)
    if distribution == "gaussian":
        return gen.standard_normal(shape)
    if distribution == "rademacher":
        return gen.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0
    raise ConcentrationError(f"unknown distribution {distribution!r}")


def quadratic_samples(
    m: np.ndarray, distribution: str, replicas: int, seed: int
) -> np.ndarray:
    """Centered samples of R = X^T M X with E R = tr(M) subtracted."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConcentrationError(f"M must be square, got shape {m.shape}")
    n = m.shape[0]
    x = _draw(distribution, (replicas, n), seed, n, replicas)
    forms = np.einsum("ri,ij,rj->r", x, m, x)
    return forms - np.trace(m)


def crossover(t: float, hs_norm: float, op_norm_value: float) -> float:
    """min(t^2/||M||_HS^2, t/||M||), the exponent shape of the bound."""
    if hs_norm == 0.0 or op_norm_value == 0.0:
        return math.inf
    return min(t * t / (hs_norm * hs_norm), t / op_norm_value)


def fit_tail_constant(
    ts, tails, replicas: int, hs_norm: float, op_norm_value: float
) -> float:
    """Largest c with 2 exp(-c crossover(t)) >= empirical tail for all t.

    Empty empirical tails are clamped at the resolution 1/(2 replicas) so
    the fit stays finite; the resulting bound still dominates them.
    """
    floor = 1.0 / (2.0 * replicas)
    cs = []
    for t, tail in zip(ts, tails):
        m = crossover(t, hs_norm, op_norm_value)
        if m <= 0.0 or not math.isfinite(m):
            continue
        cs.append(-math.log(max(tail, floor) / 2.0) / m)
    if not cs:
        raise ConcentrationError("no usable thresholds to fit the tail constant")
    return min(cs)


def hanson_wright_sweep(
    m: np.ndarray, distribution: str, ts, replicas: int, seed: int
) -> list[TailReport]:
    """Tail reports over a threshold grid with one shared fitted constant."""
    m = np.asarray(m, dtype=float)
    ts = [float(t) for t in ts]
    if not ts or any(t <= 0 for t in ts):
        raise ConcentrationError("thresholds must be positive")
    dev = np.abs(quadratic_samples(m, distribution, replicas, seed))
    tails = [float(np.mean(dev >= t)) for t in ts]
    hs = float(np.linalg.norm(m, "fro"))
    if m.shape[0] and np.count_nonzero(m - np.diag(np.diag(m))) == 0:
        op = float(np.max(np.abs(np.diag(m)))) if m.shape[0] else 0.0
    else:
        op = operator_norm(m)
    if hs == 0.0:
        c = math.inf
        bounds = [0.0 for _ in ts]
    else:
        c = fit_tail_constant(ts, tails, replicas, hs, op)
        bounds = [2.0 * math.exp(-c * crossover(t, hs, op)) for t in ts]
    out = []
    for t, tail, bound in zip(ts, tails, bounds):
        if tail > bound + 1e-12:
            raise ConcentrationError(
                f"empirical tail {tail} exceeds its fitted bound {bound} at t={t}"
            )
        out.append(
            TailReport(
                n=m.shape[0],
                t=t,
                replicas=replicas,
                empirical_tail=tail,
                bound_value=bound,
                fitted_c=c,
                seed=(seed, "hw", distribution),
            )
        )
    return out


def hanson_wright_tail(
    m: np.ndarray, distribution: str, t: float, replicas: int, seed: int
) -> TailReport:
    """Single-threshold convenience wrapper around the sweep."""
    return hanson_wright_sweep(m, distribution, [t], replicas, seed)[0]


def chi_square_two_sided_tail(n: int, t: float) -> float:
    """Exact P(|chi2_n - n| >= t), the oracle for M = I_n Gaussian."""
    from scipy.stats import chi2

    upper = chi2.sf(n + t, df=n)
    lower = chi2.cdf(n - t, df=n) if n - t > 0 else 0.0
    return float(upper + lower)


# ----------------------------------------------------------------------
# Orthogonal-row second moments

MOMENT_PAIRS_50 = (
    (0, 0), (1, 1), (24, 24), (49, 49),
    (0, 1), (0, 25), (24, 49), (1, 49), (12, 37),
)


def haar_moment_check(
    n: int, pairs, replicas: int, seed: int
) -> list[dict]:
    """Empirical E[q_j q_k] of a Haar-orthogonal row against delta_jk / n.

    Rows come from full QR-sampled orthogonal matrices, so this probes
    the actual sampler rather than its spherical marginal shortcut.
    """
    from .haar import sample_haar

    if replicas < 100:
        raise ConcentrationError(f"need >= 100 replicas, got {replicas}")
    rows = np.empty((replicas, n))
    for r in range(replicas):
        rows[r] = sample_haar(n, seed, "moments", r).q[0]
    out = []
    for j, k in pairs:
        if not (0 <= j < n and 0 <= k < n):
            raise ConcentrationError(f"pair ({j}, {k}) outside dimension {n}")
        prod = rows[:, j] * rows[:, k]
        target = (1.0 if j == k else 0.0) / n
        out.append(
            {
                "j": j,
                "k": k,
                "empirical": float(prod.mean()),
                "target": target,
                "stderr": float(prod.std(ddof=1) / math.sqrt(replicas)),
            }
        )
    return out


# ----------------------------------------------------------------------
# Structural identities


def norm_identities_check(s: Spectrum, members, a, *, quad: int = 256) -> dict:
    """||H|| <= sup|f| and ||H||_HS <= sup|f| sqrt(n) for the member table.

    A near-degenerate top singular pair can stall the power iteration at
    its cap; the Rayleigh estimate it carries is then a lower bound on
    ||H|| within the unresolved gap, which only tightens the <= checks,
    so it is used with ``converged`` flagged false.
    """
    members = list(members)
    h = matrix_table(s, a, members, quad=quad)
    sup = sup_bound(a, s.domain)
    converged = True
    try:
        h_norm = operator_norm(h)
    except NormConvergenceError as err:
        h_norm = err.last_estimate
        converged = False
    hs_norm = float(np.linalg.norm(h, "fro"))
    n = len(members)
    return {
        "n": n,
        "sup_f": sup,
        "operator_norm": h_norm,
        "hs_norm": hs_norm,
        "operator_bound_ok": h_norm <= sup * (1.0 + 1e-9) + 1e-12,
        "hs_bound_ok": hs_norm <= sup * math.sqrt(n) * (1.0 + 1e-9) + 1e-12,
        "converged": converged,
    }


def isolated_mode_members(s: Spectrum, n: int) -> list[int]:
    """A block design whose cos(2 pi x) table is a single diagonal entry.

    Picks the (1,1) mode plus (2, j) modes for j = 2..n: the second
    quantum numbers are pairwise distinct, so no off-diagonal coupling
    survives, and only the (1,1) mode carries a diagonal entry (-1/2).
    The quadratic form then rides on one squared coordinate, which makes
    the tail decay with the block size cleanly visible.
    """
    if s.kind != "analytic":
        raise ConcentrationError("member design needs an analytic spectrum")
    if n < 2:
        raise ConcentrationError(f"need n >= 2, got {n}")
    wanted = [(1, 1)] + [(2, j) for j in range(2, n + 1)]
    lookup = {(int(m), int(k)): i for i, (m, k) in enumerate(s.modes)}
    missing = [w for w in wanted if w not in lookup]
    if missing:
        raise ConcentrationError(
            f"spectrum cutoff too low: modes {missing[:3]}... not present"
        )
    return [lookup[w] for w in wanted]
