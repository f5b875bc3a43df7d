"""Haar-distributed orthogonal matrices and block rotations.

Sampling follows the standard recipe: fill a matrix with independent
standard Gaussians, QR-factorize, and flip column signs so the R diagonal
is positive.  Without the sign fix numpy's QR convention would bias the
distribution away from Haar measure.

A rotated block carries v_i = sum_j Q[i, j] u_j over a member list of
eigenfunctions; rows of Q are the coefficients of the rotated functions
in the original eigenbasis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import philox
from .spectral import Spectrum


class HaarError(ValueError):
    pass


@dataclass(frozen=True)
class OrthogonalSample:
    n: int
    q: np.ndarray
    seed: tuple


@dataclass(frozen=True)
class RotatedBlock:
    label: str
    members: tuple[int, ...]
    sample: OrthogonalSample

    @property
    def coefficients(self) -> np.ndarray:
        """Row i holds v_i in the u-basis restricted to the members."""
        return self.sample.q


def sample_haar(n: int, seed: int, *labels: int | str) -> OrthogonalSample:
    """Draw Q from Haar measure on O(n), deterministically per seed."""
    if n < 1:
        raise HaarError(f"dimension must be >= 1, got {n}")
    rng = philox(seed, "haar", *labels)
    retries = 0
    while True:
        g = rng.standard_normal((n, n))
        q, r = np.linalg.qr(g)
        d = np.diag(r)
        if np.all(d != 0.0):
            break
        retries += 1  # a.s. never happens; derived stream keeps determinism
        if retries > 8:
            raise HaarError("degenerate QR factorizations 8 times in a row")
    q = q * np.sign(d)
    q.setflags(write=False)
    return OrthogonalSample(n=n, q=q, seed=(seed, "haar", *labels))


def haar_row(n: int, seed: int, *labels: int | str) -> np.ndarray:
    """A single row of a Haar orthogonal matrix: uniform on the sphere.

    Exchangeability of Haar rows means experiments that touch one rotated
    vector only need this marginal; tests check it against full-QR rows.
    """
    if n < 1:
        raise HaarError(f"dimension must be >= 1, got {n}")
    rng = philox(seed, "haar-row", *labels)
    while True:
        g = rng.standard_normal(n)
        norm = np.linalg.norm(g)
        if norm > 0.0:
            return g / norm


def rotate_block(s: Spectrum, members, sample: OrthogonalSample, label: str = "") -> RotatedBlock:
    """Attach an orthogonal sample to a member list of eigenfunctions."""
    members = tuple(int(i) for i in members)
    if len(members) != sample.n:
        raise HaarError(
            f"block size {len(members)} does not match sample dimension {sample.n}"
        )
    for i in members:
        if not (0 <= i < len(s)):
            raise HaarError(f"member index {i} outside the spectrum")
    return RotatedBlock(label=label, members=members, sample=sample)


def evaluate_rotated(s: Spectrum, block: RotatedBlock, i: int, pts) -> np.ndarray:
    """Pointwise values of v_i via the member eigenfunctions."""
    coeffs = block.coefficients[i]
    vals = np.zeros(len(np.atleast_2d(pts)))
    for c, idx in zip(coeffs, block.members):
        vals = vals + c * s.eval(idx, pts)
    return vals
