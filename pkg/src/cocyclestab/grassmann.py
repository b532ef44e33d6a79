"""Chart coordinates on the Grassmannian and fractional linear dynamics.

A chart is a pair (F, E) of complementary subspaces with fixed bases.  A
j-dimensional V transverse to E is the span of the columns f_k + sum_i B_ik e_i;
B is its (d-j) x j chart matrix.  A linear map written in block form
[[W, X], [Y, Z]] between two charts acts on chart matrices by
B -> (Y + Z B)(W + X B)^{-1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import products
from .cocycle import perturbed_matrices
from .errors import ChartEscape, DegenerateGap, DimensionMismatch, TransversalityFailure
from .geometry import Subspace, _first_nonzero_sign

TRANSVERSAL_TOL = 1e-10
ESCAPE_COND = 1e12


@dataclass(frozen=True, eq=False)
class Chart:
    fast: Subspace
    slow: Subspace

    def __post_init__(self):
        if self.fast.d != self.slow.d or self.fast.k + self.slow.k != self.fast.d:
            raise DimensionMismatch(
                f"chart needs complementary dimensions, got {self.fast.k} + {self.slow.k} in R^{self.fast.d}")
        smin = np.linalg.svd(self.frame, compute_uv=False)[-1]
        if smin <= TRANSVERSAL_TOL:
            raise TransversalityFailure(f"chart subspaces intersect (smallest singular value {smin:.3g})")

    @property
    def frame(self) -> np.ndarray:
        """[F | E] as a d x d matrix."""
        return np.hstack([self.fast.basis, self.slow.basis])

    @property
    def j(self) -> int:
        return self.fast.k

    @property
    def d(self) -> int:
        return self.fast.d

    def is_orthogonal(self, tol: float = 1e-10) -> bool:
        return bool(np.abs(self.fast.basis.T @ self.slow.basis).max() <= tol)

    @classmethod
    def from_frame(cls, frame, j: int) -> "Chart":
        """Chart from the first j and last d-j columns of an orthogonal matrix."""
        frame = np.asarray(frame, dtype=float)
        return cls(Subspace(frame[:, :j]), Subspace(frame[:, j:]))

    @classmethod
    def standard(cls, d: int, j: int) -> "Chart":
        return cls.from_frame(np.eye(d), j)


@dataclass(frozen=True, eq=False)
class ChartMatrix:
    B: np.ndarray
    chart: Chart

    def __post_init__(self):
        b = np.asarray(self.B, dtype=float)
        if b.shape != (self.chart.d - self.chart.j, self.chart.j):
            raise DimensionMismatch(f"chart matrix must be {self.chart.d - self.chart.j}x{self.chart.j}, "
                                    f"got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ValueError("chart matrix has non-finite entries")
        object.__setattr__(self, "B", b)

    def norm(self) -> float:
        return float(np.linalg.norm(self.B, 2))


def chart_coordinates(vectors, chart: Chart):
    """Coordinates of the columns of ``vectors`` in the chart frame: (top j rows, bottom rows)."""
    coords = np.linalg.solve(chart.frame, np.asarray(vectors, dtype=float))
    return coords[: chart.j], coords[chart.j:]


def _chart_from_coords(z1, z2, chart: Chart, error=TransversalityFailure) -> ChartMatrix:
    s = np.linalg.svd(z1, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else math.inf
    if not cond < ESCAPE_COND:
        if error is ChartEscape:
            raise ChartEscape(cond)
        raise TransversalityFailure(f"subspace meets the chart complement (condition number {cond:.3g})")
    return ChartMatrix(np.linalg.solve(z1.T, z2.T).T, chart)


def to_chart(v: Subspace, chart: Chart) -> ChartMatrix:
    """Chart matrix of ``v``; fails when ``v`` meets the chart's complement."""
    if v.k != chart.j or v.d != chart.d:
        raise DimensionMismatch(f"subspace of dimension {v.k} in R^{v.d} does not fit a "
                                f"{chart.j}-dimensional chart in R^{chart.d}")
    z1, z2 = chart_coordinates(v.basis, chart)
    return _chart_from_coords(z1, z2, chart)


def from_chart(bm: ChartMatrix) -> Subspace:
    c = bm.chart
    return Subspace.span(c.fast.basis + c.slow.basis @ bm.B)


def perp_from_chart(bm) -> float:
    """perp(V, E) for the subspace V with chart matrix B in an orthogonal chart."""
    if isinstance(bm, ChartMatrix):
        if not bm.chart.is_orthogonal():
            raise ValueError("the closed form needs an orthogonal chart")
        b = bm.B
    else:
        b = np.asarray(bm, dtype=float)
    nb = float(np.linalg.norm(b, 2)) if b.size else 0.0
    return math.sqrt(max(0.0, 1.0 - nb / math.sqrt(1.0 + nb * nb)))


# --------------------------------------------------------------------------
# Block transfers


@dataclass(frozen=True, eq=False)
class BlockTransfer:
    """[[W, X], [Y, Z]] times exp(log_scale); the scale does not affect chart dynamics.

    ``target`` optionally names the chart the output coordinates refer to.
    """

    W: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    log_scale: float = 0.0
    target: Chart | None = None

    @property
    def j(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[0] + self.Z.shape[0]

    def assembled(self) -> np.ndarray:
        return np.block([[self.W, self.X], [self.Y, self.Z]])

    @classmethod
    def from_matrix(cls, m, j: int, log_scale: float = 0.0, target: Chart | None = None) -> "BlockTransfer":
        m = np.asarray(m, dtype=float)
        return cls(m[:j, :j], m[:j, j:], m[j:, :j], m[j:, j:], log_scale, target)

    @classmethod
    def between(cls, m, source: Chart, target: Chart) -> "BlockTransfer":
        """The map ``m`` written from ``source`` chart coordinates to ``target`` chart coordinates."""
        t = np.linalg.solve(target.frame, np.asarray(m, dtype=float) @ source.frame)
        return cls.from_matrix(t, source.j, target=target)

    @classmethod
    def identity(cls, d: int, j: int) -> "BlockTransfer":
        return cls.from_matrix(np.eye(d), j)


def flt_apply(t: BlockTransfer, b0) -> ChartMatrix | np.ndarray:
    """B -> (Y + Z B)(W + X B)^{-1}; raises ChartEscape when W + X B is near singular.

    A ChartMatrix result refers to ``t.target`` when set, else to the input's chart.
    """
    b = b0.B if isinstance(b0, ChartMatrix) else np.asarray(b0, dtype=float)
    den = t.W + t.X @ b
    num = t.Y + t.Z @ b
    s = np.linalg.svd(den, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else math.inf
    if not cond < ESCAPE_COND:
        raise ChartEscape(cond)
    out = np.linalg.solve(den.T, num.T).T
    if isinstance(b0, ChartMatrix):
        return ChartMatrix(out, t.target if t.target is not None else b0.chart)
    return out


def flt_compose(t2: BlockTransfer, t1: BlockTransfer) -> BlockTransfer:
    """Transfer equal to applying t1 then t2."""
    m = t2.assembled() @ t1.assembled()
    nrm = np.linalg.norm(m)
    scale = nrm if nrm > 0 else 1.0
    return BlockTransfer.from_matrix(m / scale, t1.j, t1.log_scale + t2.log_scale + math.log(scale),
                                     t2.target)


def schur_complement(t: BlockTransfer) -> np.ndarray:
    """Z - Y W^{-1} X."""
    s = np.linalg.svd(t.W, compute_uv=False)
    if s[-1] <= 1e-14 * max(s[0], 1e-300):
        raise np.linalg.LinAlgError("W block is singular; Schur complement undefined")
    return t.Z - t.Y @ np.linalg.solve(t.W, t.X)


def schur_recursion(transfers: list) -> list:
    """E_1, ..., E_n via E_{k+1} = (r_k - Y^{(k+1)} W^{(k+1)}^{-1} s_k) E_k.

    ``transfers`` are single-step transfers Q_0, Q_1, ...; W^{(k)} etc. are the
    blocks of Q_{k-1} ... Q_0.  E_1 is the Schur complement of Q_0.
    """
    out = [schur_complement(transfers[0])]
    cum = transfers[0]
    for q in transfers[1:]:
        cum_next = _compose_exact(q, cum)
        step = q.Z - cum_next.Y @ np.linalg.solve(cum_next.W, q.X)
        out.append(step @ out[-1])
        cum = cum_next
    return out


def _compose_exact(t2: BlockTransfer, t1: BlockTransfer) -> BlockTransfer:
    return BlockTransfer.from_matrix(t2.assembled() @ t1.assembled(), t1.j, t1.log_scale + t2.log_scale,
                                     t2.target)


def cumulative(transfers: list) -> list:
    """Unscaled partial products Q^{(k)} = Q_{k-1} ... Q_0 for k = 1..n."""
    out, cum = [], None
    for q in transfers:
        cum = q if cum is None else _compose_exact(q, cum)
        out.append(cum)
    return out


# --------------------------------------------------------------------------
# Transfer chains built from perturbed blocks


def _signed_frames(u, v):
    sgn = _first_nonzero_sign(v)
    return u * sgn, v * sgn


@dataclass
class BlockFrames:
    """Singular frames of one block: C = u diag(exp(log_s)) v^T."""

    u: np.ndarray
    log_s: np.ndarray
    v: np.ndarray

    def input_chart(self, j: int) -> Chart:
        """(bottom_space^perp, bottom_space) chart."""
        return Chart.from_frame(self.v, j)

    def output_chart(self, j: int) -> Chart:
        """(top_space, top_space^perp) chart."""
        return Chart.from_frame(self.u, j)


def block_frames(factors) -> BlockFrames:
    r = products.product_svd(factors)
    u, v = _signed_frames(r.u, r.v)
    return BlockFrames(u, r.log_s, v)


@dataclass
class TransferChain:
    transfers: list  # Q_i = P_i R_i, from chart i to chart i+1
    charts: list     # input chart of each block, plus the chart after the last block
    frames: list
    j: int
    P: list = field(default_factory=list)
    R: list = field(default_factory=list)

    def apply(self, b0):
        b = b0.B if isinstance(b0, ChartMatrix) else np.asarray(b0, dtype=float)
        for q in self.transfers:
            b = flt_apply(q, b)
        return ChartMatrix(b, self.charts[-1])

    def history(self, b0) -> list:
        """B_0, B_1, ..., B_n."""
        b = b0.B if isinstance(b0, ChartMatrix) else np.asarray(b0, dtype=float)
        out = [b]
        for q in self.transfers:
            b = flt_apply(q, b)
            out.append(b)
        return out


def build_transfer_chain(sys, noise, omega, N: int, n_blocks: int, j: int,
                         gap_tol: float | None = 1e-8, final_chart: str = "next") -> TransferChain:
    """Transfer chain for the perturbed blocks C_i at times iN, i < n_blocks.

    R_i is diagonal in the (bottom_space(C_i)^perp, bottom_space(C_i)) to
    (top_space(C_i), top_space(C_i)^perp) bases, normalized by s_1 with the
    scale kept in ``log_scale``.  P_i changes basis to the input chart of
    C_{i+1}.  With ``final_chart="next"`` the block C_{n_blocks} is also formed
    to supply the last target chart; with "top" the last output stays in the
    top-space frame of the final block.
    """
    n_frames = n_blocks + 1 if final_chart == "next" else n_blocks
    frames = []
    for i in range(n_frames):
        fr = block_frames(perturbed_matrices(sys, noise, omega, N, k0=i * N))
        if gap_tol is not None and i < n_blocks:
            a, b = fr.log_s[j - 1], fr.log_s[j]
            if not (np.isneginf(b) or a - b > math.log1p(gap_tol)):
                raise DegenerateGap(j, math.exp(a - b) if np.isfinite(a - b) else math.nan)
        frames.append(fr)
    charts = [fr.input_chart(j) for fr in frames[:n_blocks]]
    if final_chart == "next":
        charts.append(frames[n_blocks].input_chart(j))
    else:
        charts.append(frames[-1].output_chart(j))

    transfers, ps, rs = [], [], []
    for i in range(n_blocks):
        fr = frames[i]
        top = fr.log_s[0]
        with np.errstate(under="ignore"):
            r = np.diag(np.exp(fr.log_s - top))
        target = charts[i + 1].frame
        p = target.T @ fr.u
        q = p @ r
        transfers.append(BlockTransfer.from_matrix(q, j, float(top), charts[i + 1]))
        ps.append(p)
        rs.append(r)
    return TransferChain(transfers, charts, frames, j, ps, rs)


def b0_from_perturbation(a_minus1, delta, epsilon: float, v_fast_prev: Subspace,
                         chart0: Chart) -> ChartMatrix:
    """Chart matrix of (A + eps Delta) V in ``chart0``."""
    m = np.asarray(a_minus1, dtype=float) + epsilon * np.asarray(delta, dtype=float)
    img = m @ v_fast_prev.basis
    if chart0.is_orthogonal():
        z1 = chart0.fast.basis.T @ img
        z2 = chart0.slow.basis.T @ img
    else:
        z1, z2 = chart_coordinates(img, chart0)
    return _chart_from_coords(z1, z2, chart0, error=ChartEscape)


def growth_domination(transfers: list) -> list:
    """Per prefix k: inf over unit x of ||W^{(k)} x|| / ||Y^{(k)} x||, estimated as
    s_min(W^{(k)}) / ||Y^{(k)}||."""
    out = []
    for t in cumulative(transfers):
        smin = np.linalg.svd(t.W, compute_uv=False)[-1]
        ny = np.linalg.norm(t.Y, 2)
        out.append(float(smin / ny) if ny > 0 else math.inf)
    return out
