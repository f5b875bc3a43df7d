"""Assembly of the block-rotated comparison operators.

On the truncated eigenbasis u_1..u_N the pieces are

    T   = diag(mu_i),            mu_i = lambda_i^2,
    G   = diag(1/mu_i),          so T G = I,
    T'' = U^T diag(mu''_i) U,    U block-diagonal orthogonal,
    S   = (T'' - T) G.

U stacks the Haar rotations of a :class:`BlockPartition`: row i of U is
the coefficient vector of the rotated function v_i, so v_i is an exact
eigenvector of T'' with eigenvalue mu''_i.  Everything here is dense
numpy on blocks of desk scale (N up to a few thousand).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .haar import OrthogonalSample, RotatedBlock, rotate_block, sample_haar
from .partition import BlockPartition, PartitionError, ReassignedSpectrum
from .spectral import Spectrum


class AssemblyError(ValueError):
    pass


class NormConvergenceError(RuntimeError):
    def __init__(self, message: str, last_estimate: float):
        super().__init__(message)
        self.last_estimate = last_estimate


@dataclass(frozen=True)
class PerturbedOperator:
    """Truncated operators in the original eigenbasis."""

    n: int
    epsilon: float
    gamma: float
    mu: np.ndarray
    mu_dprime: np.ndarray
    u_rot: np.ndarray  # block-diagonal orthogonal, row i = v_i coefficients
    t: np.ndarray
    tpp: np.ndarray
    g: np.ndarray
    s: np.ndarray
    blocks: tuple[RotatedBlock, ...]


def snap_truncation(p: BlockPartition, n: int, size: int) -> int:
    """Smallest N' >= n such that no partition block straddles index N'."""
    n_eff = min(n, size)
    for b in p.blocks:
        lo, hi = min(b.members), max(b.members)
        if lo < n_eff <= hi:
            n_eff = hi + 1
    return n_eff


def haar_rotations(
    s: Spectrum, p: BlockPartition, seed: int, upto: int
) -> list[RotatedBlock]:
    """One Haar sample per partition block intersecting [0, upto)."""
    out = []
    for b in p.blocks:
        if min(b.members) < upto:
            q = sample_haar(len(b.members), seed, "block", b.label)
            out.append(rotate_block(s, b.members, q, label=b.label))
    return out


def identity_rotations(s: Spectrum, p: BlockPartition, upto: int) -> list[RotatedBlock]:
    out = []
    for b in p.blocks:
        if min(b.members) < upto:
            k = len(b.members)
            q = OrthogonalSample(n=k, q=np.eye(k), seed=("identity",))
            out.append(rotate_block(s, b.members, q, label=b.label))
    return out


def assemble(
    s: Spectrum,
    r: ReassignedSpectrum,
    rotations: list[RotatedBlock],
    n: int,
) -> PerturbedOperator:
    """Build T, T'', G, S on span{u_1..u_N'}, N' snapped up to block edges."""
    if r.lambda_dprime is None:
        raise AssemblyError("reassignment carries no distinct values (lambda'')")
    p = r.partition
    if n < 1 or n > len(s):
        raise AssemblyError(f"truncation {n} outside 1..{len(s)}")
    n_eff = snap_truncation(p, n, len(s))
    by_label = {rb.label: rb for rb in rotations}
    mu = s.lambdas[:n_eff] ** 2
    mu_dpp = r.lambda_dprime[:n_eff] ** 2
    u_rot = np.eye(n_eff)
    used = []
    for b in p.blocks:
        if min(b.members) >= n_eff:
            continue
        if max(b.members) >= n_eff:
            raise AssemblyError(f"block {b.label} straddles the truncation {n_eff}")
        rb = by_label.get(b.label)
        if rb is None:
            raise AssemblyError(f"no rotation covers block {b.label}")
        if rb.members != b.members:
            raise AssemblyError(f"rotation for block {b.label} lists other members")
        ix = np.array(b.members)
        u_rot[np.ix_(ix, ix)] = rb.coefficients
        used.append(rb)
    t = np.diag(mu)
    tpp = u_rot.T @ (mu_dpp[:, None] * u_rot)
    g = np.diag(1.0 / mu)
    ss = (tpp - t) * (1.0 / mu)[None, :]
    return PerturbedOperator(
        n=n_eff,
        epsilon=p.epsilon,
        gamma=p.gamma,
        mu=mu,
        mu_dprime=mu_dpp,
        u_rot=u_rot,
        t=t,
        tpp=tpp,
        g=g,
        s=ss,
        blocks=tuple(used),
    )


def build_perturbed(
    s: Spectrum,
    epsilon: float,
    gamma: float,
    seed: int,
    n: int,
    strategy: str = "equispaced",
) -> tuple[PerturbedOperator, ReassignedSpectrum]:
    """Partition, reassign, rotate, and assemble in one step."""
    from .partition import build_partition, reassign_distinct, reassign_left

    p = build_partition(s, epsilon, gamma)
    r = reassign_left(p, s)
    r = reassign_distinct(p, r, s, strategy=strategy, seed=seed)
    n_eff = snap_truncation(p, n, len(s))
    rots = haar_rotations(s, p, seed, n_eff)
    return assemble(s, r, rots, n), r


def operator_norm(
    m: np.ndarray,
    *,
    tol: float = 1e-10,
    maxiter: int = 10_000,
    weights: tuple[float, float] | None = None,
    mu: np.ndarray | None = None,
) -> float:
    """Spectral norm by power iteration on M^T M.

    With ``weights=(w, v)`` computes ||D^w M D^-v|| for the diagonal
    bracket weight D = diag((1 + mu_i^2)^(1/2)); w = gamma/2, v = 0 gives
    the L2 -> F^(gamma/2) operator norm used by the scaling checks.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"need a square matrix, got shape {m.shape}")
    if weights is not None:
        if mu is None:
            raise ValueError("weighted norm needs the mu diagonal")
        w, v = weights
        d = np.sqrt(1.0 + np.asarray(mu, dtype=float) ** 2)
        m = (d**w)[:, None] * m * (d**-v)[None, :]
    n = m.shape[0]
    if n == 0:
        return 0.0
    # Deterministic start with a mild tilt so no symmetry traps it.
    x = 1.0 + 0.001 * np.sin(np.arange(n, dtype=float))
    x /= np.linalg.norm(x)
    sigma2 = 0.0
    for _ in range(maxiter):
        y = m.T @ (m @ x)
        sigma2 = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        resid = np.linalg.norm(y - sigma2 * x)
        x = y / ny
        if resid <= tol * max(sigma2, 1e-300):
            return math.sqrt(max(sigma2, 0.0))
    raise NormConvergenceError(
        f"power iteration did not reach tol={tol} in {maxiter} iterations",
        last_estimate=math.sqrt(max(sigma2, 0.0)),
    )


def eigendecompose_tpp(op: PerturbedOperator) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of T'' computed blockwise, never on the full matrix.

    Returns (values, vectors) with vectors[i] the unit eigenvector for
    values[i], ordered to align with op.mu_dprime.  Independent of the
    assembly: uses a dense symmetric eigensolver on each block of T''.
    """
    n = op.n
    values = np.empty(n)
    vectors = np.zeros((n, n))
    rotated = set()
    for rb in op.blocks:
        ix = np.array(rb.members)
        rotated.update(rb.members)
        sub = op.tpp[np.ix_(ix, ix)]
        vals, vecs = np.linalg.eigh(sub)
        # Align each eigenvalue with the matching mu'' slot in this block.
        target = op.mu_dprime[ix]
        order_t = np.argsort(target, kind="stable")
        order_v = np.argsort(vals, kind="stable")
        for slot, vidx in zip(order_t, order_v):
            gi = ix[slot]
            values[gi] = vals[vidx]
            vectors[gi, ix] = vecs[:, vidx]
    for i in range(n):
        if i not in rotated:
            values[i] = op.tpp[i, i]
            vectors[i, i] = 1.0
    return values, vectors


def eigencheck(op: PerturbedOperator) -> dict[str, float]:
    """Compare the independent eigendecomposition against the construction."""
    values, vectors = eigendecompose_tpp(op)
    rel = np.abs(values - op.mu_dprime) / op.mu_dprime
    # Rows of u_rot are exact eigenvectors; compare up to sign.
    dots = np.abs(np.einsum("ij,ij->i", vectors, op.u_rot))
    vec_err = np.abs(dots - 1.0)
    resid = np.linalg.norm(op.tpp @ vectors.T - vectors.T * values[None, :], axis=0)
    return {
        "max_rel_eigenvalue_error": float(rel.max()),
        "max_eigenvector_mismatch": float(vec_err.max()),
        "max_residual": float(resid.max()),
    }


def quasimode_defects(op: PerturbedOperator) -> np.ndarray:
    """||(T - mu''_i) v_i|| / mu''_i for every rotated eigenvector v_i."""
    diff = op.mu[None, :] - op.mu_dprime[:, None]
    weighted = op.u_rot**2 * diff**2
    return np.sqrt(weighted.sum(axis=1)) / op.mu_dprime


def quasimode_defect(op: PerturbedOperator, i: int) -> float:
    v = op.u_rot[i]
    return float(np.linalg.norm((op.mu - op.mu_dprime[i]) * v) / op.mu_dprime[i])


def neumann_series_gap(op: PerturbedOperator, terms: int = 20) -> tuple[float, float]:
    """(||(I+S)^-1 - partial series||, ||S||^(K+1)/(1-||S||)) at K terms."""
    s_norm = operator_norm(op.s)
    if s_norm >= 1.0:
        raise AssemblyError(f"Neumann series needs ||S|| < 1, got {s_norm:.3f}")
    eye = np.eye(op.n)
    inv = np.linalg.solve(eye + op.s, eye)
    acc = np.zeros_like(op.s)
    power = eye.copy()
    for _ in range(terms + 1):
        acc += power
        power = power @ (-op.s)
    gap = operator_norm(inv - acc)
    bound = s_norm ** (terms + 1) / (1.0 - s_norm)
    return gap, bound
