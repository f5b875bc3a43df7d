"""Two-scale partition of a Dirichlet spectrum and its reassignments.

Eigenvalues at or above 1+eps are split into geometric shells
[(1+eps)^n, (1+eps)^{n+1}), each shell subdivided into
N_n = ceil((1+eps)^{n*gamma}) equal-width intervals

    I_{n,j} = [ (1+eps)^n (1 + j eps / N_n), (1+eps)^n (1 + (j+1) eps / N_n) ).

Eigenvalues below 1+eps form the low block and are left in place.
``reassign_left`` moves every eigenvalue to its interval's left endpoint
(lambda'), ``reassign_distinct`` then spreads pairwise-distinct targets
(lambda'') across each interval.  Both reassignments obey

    |lambda^2 - lambda'^2| <= 3 eps (lambda^2)^{1 - gamma/2}

for all lambda at or above a threshold lambda_star found by direct scan
and recorded on the result, making the "for eps small enough" constant
auditable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import philox
from .spectral import Spectrum


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Block:
    n: int
    j: int
    lambda_minus: float
    lambda_plus: float
    members: tuple[int, ...]

    @property
    def label(self) -> str:
        return f"{self.n}:{self.j}"


@dataclass(frozen=True)
class BlockPartition:
    epsilon: float
    gamma: float
    blocks: tuple[Block, ...]
    low_block: tuple[int, ...]

    def block_of(self) -> dict[int, Block]:
        out: dict[int, Block] = {}
        for b in self.blocks:
            for i in b.members:
                out[i] = b
        return out


@dataclass(frozen=True)
class ReassignedSpectrum:
    """lambda' (left endpoints) and lambda'' (distinct values) per index."""

    partition: BlockPartition
    lambda_prime: np.ndarray
    lambda_dprime: np.ndarray | None = None
    lambda_star: float = 0.0
    block_label: tuple[str, ...] = field(default=())


def _interval_count(epsilon: float, gamma: float, n: int) -> int:
    return math.ceil((1.0 + epsilon) ** (n * gamma))


def _interval_edges(epsilon: float, gamma: float, n: int, j: int) -> tuple[float, float]:
    base = (1.0 + epsilon) ** n
    nn = _interval_count(epsilon, gamma, n)
    return base * (1.0 + j * epsilon / nn), base * (1.0 + (j + 1) * epsilon / nn)


def build_partition(s: Spectrum, epsilon: float, gamma: float) -> BlockPartition:
    """Assign every eigenvalue to its interval; deterministic."""
    if not (0.0 < epsilon < 1.0):
        raise PartitionError(f"epsilon must be in (0, 1), got {epsilon}")
    if not (0.0 <= gamma <= 1.0):
        raise PartitionError(f"gamma must be in [0, 1], got {gamma}")
    if len(s) == 0:
        raise PartitionError("empty spectrum")
    lams = s.lambdas
    low = tuple(int(i) for i in np.nonzero(lams < 1.0 + epsilon)[0])
    members: dict[tuple[int, int], list[int]] = {}
    log1e = math.log1p(epsilon)
    for i in np.nonzero(lams >= 1.0 + epsilon)[0]:
        lam = float(lams[i])
        n = int(math.floor(math.log(lam) / log1e))
        # Float rounding can put lam just outside the predicted shell.
        while lam < (1.0 + epsilon) ** n:
            n -= 1
        while lam >= (1.0 + epsilon) ** (n + 1):
            n += 1
        nn = _interval_count(epsilon, gamma, n)
        base = (1.0 + epsilon) ** n
        j = int(math.floor((lam / base - 1.0) * nn / epsilon))
        j = min(max(j, 0), nn - 1)
        while j > 0 and lam < _interval_edges(epsilon, gamma, n, j)[0]:
            j -= 1
        while j < nn - 1 and lam >= _interval_edges(epsilon, gamma, n, j)[1]:
            j += 1
        members.setdefault((n, j), []).append(int(i))
    blocks = []
    for (n, j), idxs in sorted(members.items()):
        lo, hi = _interval_edges(epsilon, gamma, n, j)
        blocks.append(Block(n=n, j=j, lambda_minus=lo, lambda_plus=hi, members=tuple(idxs)))
    return BlockPartition(epsilon=epsilon, gamma=gamma, blocks=tuple(blocks), low_block=low)


def bound_threshold(
    scan_lams: np.ndarray,
    base: np.ndarray,
    values: np.ndarray,
    epsilon: float,
    gamma: float,
) -> float:
    """Smallest scanned lambda above which |mu_b - mu_v| <= 3 eps mu_b^{1-gamma/2}.

    ``base`` and ``values`` are frequency arrays (squared internally);
    the threshold is reported on the ``scan_lams`` scale.  Returns 0 when
    every entry complies, +inf when even the largest does not.
    """
    mu = np.asarray(base, dtype=float) ** 2
    gap = np.abs(mu - np.asarray(values, dtype=float) ** 2)
    ok = gap <= 3.0 * epsilon * mu ** (1.0 - gamma / 2.0) * (1.0 + 1e-12)
    if ok.all():
        return 0.0
    violators = np.nonzero(~ok)[0]
    last_bad = violators[-1]
    if last_bad == len(scan_lams) - 1:
        return math.inf
    return float(scan_lams[last_bad + 1])


def reassign_left(p: BlockPartition, s: Spectrum) -> ReassignedSpectrum:
    """lambda' = interval left endpoint; low-block eigenvalues unchanged."""
    lams = s.lambdas
    prime = np.array(lams, dtype=float)
    labels = [""] * len(lams)
    for i in p.low_block:
        labels[i] = "low"
    for b in p.blocks:
        for i in b.members:
            prime[i] = b.lambda_minus
            labels[i] = b.label
    covered = sum(len(b.members) for b in p.blocks) + len(p.low_block)
    if covered != len(lams):
        raise PartitionError("partition does not cover the spectrum")
    star = bound_threshold(lams, lams, prime, p.epsilon, p.gamma)
    return ReassignedSpectrum(
        partition=p,
        lambda_prime=prime,
        lambda_star=star,
        block_label=tuple(labels),
    )


def _distinct_guard(values: np.ndarray) -> np.ndarray:
    """Nudge exact collisions upward by one ulp each; order-preserving."""
    order = np.argsort(values, kind="stable")
    out = values.copy()
    prev = -math.inf
    for idx in order:
        v = out[idx]
        while v <= prev:
            v = math.nextafter(v, math.inf)
        out[idx] = v
        prev = v
    return out


def reassign_distinct(
    p: BlockPartition,
    r: ReassignedSpectrum,
    s: Spectrum,
    strategy: str = "equispaced",
    seed: int = 0,
) -> ReassignedSpectrum:
    """Fill lambda'' with pairwise-distinct values inside each interval.

    equispaced: k members get lambda_minus + width * t / (k+1), t = 0..k-1.
    jittered:   adds uniform noise below half the equispaced gap.
    Low-block members are placed inside [(1-eps) lambda', lambda').
    """
    if strategy not in ("equispaced", "jittered"):
        raise PartitionError(f"unknown strategy {strategy!r}")
    rng = philox(seed, "reassign-distinct") if strategy == "jittered" else None
    dprime = np.array(r.lambda_prime, dtype=float)
    for b in p.blocks:
        k = len(b.members)
        width = b.lambda_plus - b.lambda_minus
        step = width / (k + 1)
        offsets = step * np.arange(k)
        if rng is not None:
            offsets = offsets + rng.uniform(0.0, 0.5 * step, size=k)
        dprime[list(b.members)] = b.lambda_minus + offsets
    if p.low_block:
        # Group equal lambda' values so duplicates spread apart.
        groups: dict[float, list[int]] = {}
        for i in p.low_block:
            groups.setdefault(float(r.lambda_prime[i]), []).append(i)
        for lam_p, idxs in groups.items():
            k = len(idxs)
            eps = p.epsilon
            offs = np.arange(k) / (k + 1)
            if rng is not None:
                offs = offs + rng.uniform(0.0, 0.5 / (k + 1), size=k)
            dprime[idxs] = lam_p * (1.0 - eps + eps * offs)
    dprime = _distinct_guard(dprime)
    star2 = bound_threshold(s.lambdas, r.lambda_prime, dprime, p.epsilon, p.gamma)
    return ReassignedSpectrum(
        partition=p,
        lambda_prime=r.lambda_prime,
        lambda_dprime=dprime,
        lambda_star=max(r.lambda_star, star2),
        block_label=r.block_label,
    )
