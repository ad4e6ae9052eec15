"""Random orthoprojectors and blockwise compression of statistics.

Each sensor compresses its length-``n`` observation with an ``m x n`` matrix
whose rows are orthonormal (``A @ A.T == I``).  A fusion operator stacks one
such matrix per sensor on the block diagonal; the full ``m*L x n*L`` matrix is
never materialized.  First and second order statistics propagate through the
blocks as ``mu_j = A_j beta_j`` and ``C_jk = A_j D_jk A_k^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CovarianceError, DimensionError, NumericalError
from .seeding import rng_from

__all__ = [
    "Projection",
    "BlockProjection",
    "make_orthoprojector",
    "compress",
    "block_compress",
    "compress_stats",
    "frobenius_ratio",
]

#: max |A A^T - I| accepted at construction time
ORTHO_TOL = 1e-10

_RANK_RETRIES = 3


@dataclass(frozen=True)
class Projection:
    """An ``m x n`` compression matrix with orthonormal rows.

    Immutable after construction; safe to share across parallel trials.
    Configs should persist only ``(m, n, seed)`` and rebuild via
    :func:`make_orthoprojector`.
    """

    m: int
    n: int
    entries: np.ndarray
    seed: int

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def ratio(self) -> float:
        """Compression ratio c_r = m / n."""
        return self.m / self.n

    def orthonormality_defect(self) -> float:
        """max |A A^T - I|; <= ORTHO_TOL for any constructed projection."""
        g = self.entries @ self.entries.T
        return float(np.max(np.abs(g - np.eye(self.m))))


@dataclass(frozen=True)
class BlockProjection:
    """Ordered per-sensor projections acting as one block-diagonal operator."""

    blocks: tuple[Projection, ...]

    def __post_init__(self):
        if not self.blocks:
            raise DimensionError("block projection needs at least one block")
        m, n = self.blocks[0].m, self.blocks[0].n
        if any(b.m != m or b.n != n for b in self.blocks):
            raise DimensionError("all blocks must share the same (m, n)")

    @property
    def n_sensors(self) -> int:
        return len(self.blocks)

    @property
    def m(self) -> int:
        return self.blocks[0].m

    @property
    def n(self) -> int:
        return self.blocks[0].n

    @property
    def in_dim(self) -> int:
        return self.n * len(self.blocks)

    @property
    def out_dim(self) -> int:
        return self.m * len(self.blocks)

    def column(self, i: int) -> np.ndarray:
        """Column ``i`` of the block-diagonal operator, as a dense vector."""
        if not 0 <= i < self.in_dim:
            raise DimensionError(f"column {i} outside [0, {self.in_dim})")
        j, local = divmod(i, self.n)
        col = np.zeros(self.out_dim)
        col[j * self.m : (j + 1) * self.m] = self.blocks[j].entries[:, local]
        return col

    def dense(self) -> np.ndarray:
        """Materialized operator, for small-instance oracle checks only."""
        out = np.zeros((self.out_dim, self.in_dim))
        for j, b in enumerate(self.blocks):
            out[j * self.m : (j + 1) * self.m, j * self.n : (j + 1) * self.n] = b.entries
        return out


def make_orthoprojector(m: int, n: int, seed: int) -> Projection:
    """Draw an ``m x n`` Gaussian matrix and orthonormalize its rows.

    QR on the transpose keeps the first ``m`` orthonormal directions, so the
    result is exactly row-orthonormal as built.  Same ``(m, n, seed)`` gives
    bit-identical entries.  In the (probability ~0) event of a rank-deficient
    draw, retries with a derived sub-seed, then raises.
    """
    if m < 1 or n < 1:
        raise DimensionError(f"need m, n >= 1, got ({m}, {n})")
    if m > n:
        raise DimensionError(f"rows cannot exceed columns: m={m} > n={n}")
    for attempt in range(_RANK_RETRIES):
        rng = rng_from(seed, "orthoprojector", m, n, attempt)
        x = rng.standard_normal((m, n))
        q, r = np.linalg.qr(x.T)
        diag = np.abs(np.diag(r))
        if np.all(diag > n * np.finfo(float).eps * diag.max(initial=1.0)):
            a = q.T[:m]
            proj = Projection(m=m, n=n, entries=np.ascontiguousarray(a), seed=seed)
            defect = proj.orthonormality_defect()
            if defect > ORTHO_TOL:
                raise NumericalError(
                    f"orthonormalization defect {defect:.2e} exceeds {ORTHO_TOL:.0e}"
                )
            return proj
    raise NumericalError(
        f"rank-deficient Gaussian draw persisted over {_RANK_RETRIES} retries "
        f"for (m={m}, n={n}, seed={seed})"
    )


def compress(p: Projection, x: np.ndarray) -> np.ndarray:
    """``y = A x``; each entry is the inner product of a row with ``x``.

    ``x`` may be a single vector of length ``n`` or a batch shaped
    ``(..., n)``; compression applies along the last axis.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.n:
        raise DimensionError(f"expected trailing dimension {p.n}, got {x.shape[-1]}")
    return x @ p.entries.T


def block_compress(bp: BlockProjection, x: np.ndarray) -> np.ndarray:
    """Apply the block-diagonal operator to concatenated sensor data.

    Segment ``j`` of the output is ``blocks[j]`` applied to segment ``j`` of
    the input; the full matrix is never formed.  Batches along leading axes.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != bp.in_dim:
        raise DimensionError(f"expected trailing dimension {bp.in_dim}, got {x.shape[-1]}")
    segments = [
        compress(b, x[..., j * bp.n : (j + 1) * bp.n]) for j, b in enumerate(bp.blocks)
    ]
    return np.concatenate(segments, axis=-1)


def _check_symmetric(d: np.ndarray, tol: float = 1e-9) -> None:
    asym = np.max(np.abs(d - d.T))
    if asym > tol:
        raise CovarianceError(f"covariance asymmetry {asym:.2e} exceeds {tol:.0e}")


def compress_stats(
    bp: BlockProjection, beta: np.ndarray, d: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Propagate mean and covariance into the compressed domain.

    Returns ``(A beta, A d A^T)`` computed blockwise.  The output covariance
    is symmetrized to ``(C + C^T) / 2`` to suppress floating-point asymmetry
    before any downstream inversion.
    """
    beta = np.asarray(beta, dtype=float)
    d = np.asarray(d, dtype=float)
    nl, ml = bp.in_dim, bp.out_dim
    if beta.shape != (nl,):
        raise DimensionError(f"mean must have shape ({nl},), got {beta.shape}")
    if d.shape != (nl, nl):
        raise DimensionError(f"covariance must have shape ({nl}, {nl}), got {d.shape}")
    _check_symmetric(d)

    n, m = bp.n, bp.m
    mu = block_compress(bp, beta)
    c = np.empty((ml, ml))
    for j, bj in enumerate(bp.blocks):
        for k, bk in enumerate(bp.blocks):
            if k < j:
                continue
            block = bj.entries @ d[j * n : (j + 1) * n, k * n : (k + 1) * n] @ bk.entries.T
            c[j * m : (j + 1) * m, k * m : (k + 1) * m] = block
            if k > j:
                c[k * m : (k + 1) * m, j * m : (j + 1) * m] = block.T
    c = (c + c.T) / 2.0
    return mu, c


def frobenius_ratio(bp: BlockProjection, d: np.ndarray) -> float:
    """``|A d A^T|_F^2 / |d|_F^2`` for a symmetric ``d`` (no PSD gate).

    Diagnostic for how much covariance mass survives compression; the
    dependence-carrying cross blocks shrink like ``c_r**2`` while diagonal
    blocks pass through orthonormal rows with factor ``c_r``.
    """
    d = np.asarray(d, dtype=float)
    if d.shape != (bp.in_dim, bp.in_dim):
        raise DimensionError(f"expected shape ({bp.in_dim},) * 2, got {d.shape}")
    _check_symmetric(d)
    n, m = bp.n, bp.m
    total = 0.0
    for j, bj in enumerate(bp.blocks):
        for k, bk in enumerate(bp.blocks):
            block = bj.entries @ d[j * n : (j + 1) * n, k * n : (k + 1) * n] @ bk.entries.T
            total += float(np.sum(block * block))
    return total / float(np.sum(d * d))
