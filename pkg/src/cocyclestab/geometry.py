"""Subspace geometry: angles, complementarity, singular-value functionals.

Subspaces are stored as orthonormal basis matrices (columns).  Everything in
this module is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .errors import DegenerateGap, DimensionMismatch, RankDeficient

ZERO_FLOOR = 1e-300
DEFAULT_GAP_TOL = 1e-8
ORTHO_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Subspace:
    """A k-dimensional subspace of R^d held as a d x k orthonormal basis."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.array(self.basis, dtype=float, copy=True)
        if b.ndim != 2:
            raise DimensionMismatch(f"basis must be 2-D, got shape {b.shape}")
        d, k = b.shape
        if not 1 <= k <= d:
            raise DimensionMismatch(f"need 1 <= k <= d, got k={k}, d={d}")
        err = np.abs(b.T @ b - np.eye(k)).max()
        if err > ORTHO_TOL:
            raise ValueError(f"basis columns not orthonormal (error {err:.3g})")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    dim_ambient = d

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def span(cls, vectors, rank: int | None = None) -> "Subspace":
        """Orthonormalize the column span of ``vectors``.

        With ``rank`` given, keep the dominant ``rank`` left singular
        directions (useful when the columns are nearly dependent).
        """
        m = np.atleast_2d(np.asarray(vectors, dtype=float))
        if m.shape[0] == 1 and m.shape[1] > 1 and rank is None:
            m = m.T
        if rank is None:
            q, _ = np.linalg.qr(m)
            return cls(q[:, : m.shape[1]])
        u, _, _ = np.linalg.svd(m, full_matrices=False)
        return cls(u[:, :rank])

    @classmethod
    def coordinate(cls, d: int, indices) -> "Subspace":
        """Span of the standard basis vectors e_i, i in ``indices`` (0-based)."""
        return cls(np.eye(d)[:, list(indices)])

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def complement(self) -> "Subspace":
        if self.k == self.d:
            raise DimensionMismatch("the orthogonal complement of R^d is {0}")
        u, _, _ = np.linalg.svd(self.basis, full_matrices=True)
        return Subspace(u[:, self.k:])

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(x - self.projector() @ x) <= tol * max(1.0, np.linalg.norm(x)))

    def to_list(self) -> list:
        return self.basis.tolist()

    def __repr__(self):
        return f"Subspace(d={self.d}, k={self.k})"


@dataclass(frozen=True)
class SingularTriple:
    """SVD A = u_factor @ diag(singular_values) @ v_factor.T with a fixed sign convention."""

    u_factor: np.ndarray
    singular_values: np.ndarray
    v_factor: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.u_factor @ np.diag(self.singular_values) @ self.v_factor.T


def _first_nonzero_sign(v: np.ndarray) -> np.ndarray:
    """Sign of the first component with magnitude above 1e-12 in each column."""
    mask = np.abs(v) > 1e-12
    first = np.argmax(mask, axis=0)
    vals = v[first, np.arange(v.shape[1])]
    return np.where(vals < 0, -1.0, 1.0)


def svd(a) -> SingularTriple:
    """Full SVD with each right singular vector's first nonzero entry positive."""
    a = np.asarray(a, dtype=float)
    u, s, vt = np.linalg.svd(a)
    v = vt.T
    signs = _first_nonzero_sign(v)
    v = v * signs
    u = u.copy()
    u[:, : len(s)] *= signs[: len(s)]
    return SingularTriple(u, s, v)


def _check_pair(u: Subspace, v: Subspace):
    if u.d != v.d:
        raise DimensionMismatch(f"ambient dimensions differ: {u.d} vs {v.d}")


def angle(u: Subspace, v: Subspace) -> float:
    """Hausdorff distance between the unit balls of two equal-dimension subspaces.

    Computed as the operator norm of the projector difference, which equals
    the sine of the largest principal angle.
    """
    _check_pair(u, v)
    if u.k != v.k:
        raise DimensionMismatch(f"angle needs equal dimensions, got {u.k} and {v.k}")
    diff = u.projector() - v.projector()
    return float(min(1.0, np.linalg.norm(diff, 2)))


def perp(u: Subspace, w: Subspace) -> float:
    """Complementarity measure in [0, 1]: (1/sqrt 2) inf ||u - w|| over unit vectors."""
    _check_pair(u, w)
    smax = np.linalg.norm(u.basis.T @ w.basis, 2)
    return float(np.sqrt(max(0.0, 1.0 - min(1.0, smax))))


def xi(a, j: int) -> float:
    """Sum of the logs of the top j singular values (-inf once s_j is zero)."""
    a = np.asarray(a, dtype=float)
    d = min(a.shape)
    if not 1 <= j <= d:
        raise ValueError(f"j must lie in [1, {d}], got {j}")
    s = np.linalg.svd(a, compute_uv=False)[:j]
    if s[-1] < ZERO_FLOOR:
        return float("-inf")
    return float(np.sum(np.log(s)))


def compound(a, j: int) -> np.ndarray:
    """j-th compound matrix: all j x j minors, index sets in lexicographic order."""
    a = np.asarray(a, dtype=float)
    n, m = a.shape
    if not 1 <= j <= min(n, m):
        raise ValueError(f"j must lie in [1, {min(n, m)}], got {j}")
    rows = np.array(list(combinations(range(n), j)))
    cols = np.array(list(combinations(range(m), j)))
    sub = a[rows[:, None, :, None], cols[None, :, None, :]]
    out = np.linalg.det(sub)
    assert out.shape == (comb(n, j), comb(m, j))
    return out


def _gap_check(s: np.ndarray, j: int, gap_tol: float | None):
    if gap_tol is None:
        return
    sj, sj1 = s[j - 1], s[j]
    if sj1 < ZERO_FLOOR:
        return
    ratio = sj / sj1
    if not ratio > 1.0 + gap_tol:
        raise DegenerateGap(j, ratio)


def bottom_space(a, j: int, gap_tol: float | None = DEFAULT_GAP_TOL) -> Subspace:
    """Span of right singular vectors j+1..d of ``a``."""
    a = np.asarray(a, dtype=float)
    d = a.shape[1]
    if not 1 <= j < d:
        raise ValueError(f"j must lie in [1, {d - 1}], got {j}")
    t = svd(a)
    _gap_check(t.singular_values, j, gap_tol)
    return Subspace(t.v_factor[:, j:])


def top_space(a, j: int, gap_tol: float | None = DEFAULT_GAP_TOL) -> Subspace:
    """Span of the images of the top j right singular vectors under ``a``."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    if not 1 <= j <= d:
        raise ValueError(f"j must lie in [1, {d}], got {j}")
    t = svd(a)
    if j < d:
        _gap_check(t.singular_values, j, gap_tol)
    if t.singular_values[j - 1] < ZERO_FLOOR:
        raise RankDeficient(j)
    return Subspace(t.u_factor[:, :j])


def intersection(u: Subspace, w: Subspace, tol: float = 1e-8) -> Subspace | None:
    """Intersection of two subspaces via the null space of stacked complement constraints."""
    _check_pair(u, w)
    cons = []
    if u.k < u.d:
        cons.append(u.complement().basis.T)
    if w.k < w.d:
        cons.append(w.complement().basis.T)
    if not cons:
        return Subspace(np.eye(u.d))
    stacked = np.vstack(cons)
    _, s, vt = np.linalg.svd(stacked)
    s_full = np.zeros(u.d)
    s_full[: len(s)] = s
    null = vt[s_full <= tol].T
    if null.shape[1] == 0:
        return None
    return Subspace(null)
