"""Decision statistics for compressed and uncompressed detection.

Detectors by name (as addressed in harness configs):

- ``c:GA``       log-likelihood ratio of the compressed vector under a
                 Gaussian approximation, with dependence entering through the
                 compressed covariance.
- ``u:product``  uncompressed marginal LLR that ignores inter-sensor
                 dependence.
- ``u:copula-*`` product LLR plus a copula density term coupling the
                 per-index probability transforms.
- ``u:energy`` / ``c:energy``  summed squared norms with Gaussian-
                 approximation analytic thresholds.
- ``c:cov``      covariance-absolute-value statistic built from a structured
                 least-squares recovery of off-diagonal covariance entries
                 out of the compressed sample covariance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import kendalltau

from .errors import (
    ConfigError,
    CovarianceError,
    DataError,
    DimensionError,
    FitError,
    LeastSquaresError,
    ModelError,
)
from .linops import BlockProjection
from .scenarios import HypothesisStats, ScenarioSpec, marginal

logger = logging.getLogger(__name__)

__all__ = [
    "GaussianModel",
    "nested_block_inverse",
    "compressed_moments",
    "build_gaussian_model",
    "gaussian_model_from_moments",
    "llr_ga",
    "llr_product",
    "CopulaSpec",
    "fit_copula",
    "copula_logdensity",
    "llr_copula",
    "pit_clamp",
    "energy_stat",
    "energy_threshold",
    "sample_cov",
    "OffDiagEstimate",
    "OffdiagPlan",
    "ls_offdiag",
    "cav_stat",
]

#: ridge policy: add RIDGE_SCALE * trace(C)/dim * I when min eig < EIG_FLOOR
EIG_FLOOR = 1e-12
RIDGE_SCALE = 1e-10

#: probability transforms are clamped into [PIT_EPS, 1 - PIT_EPS]
PIT_EPS = 1e-12

#: copula dependence parameters are clamped at this upper guard
THETA_MAX = 50.0
RHO_MAX = 1.0 - 1e-6


# ---------------------------------------------------------------------------
# Gaussian-approximation LLR


def nested_block_inverse(c: np.ndarray, m: int) -> np.ndarray:
    """Invert an ``L*m x L*m`` SPD matrix by nested 2x2 block partitions.

    Splits off the leading ``m x m`` block and recurses on the Schur
    complement of the remainder, so only ``m x m`` inverses are ever formed
    directly.
    """
    c = np.asarray(c, dtype=float)
    k = c.shape[0]
    if c.ndim != 2 or c.shape[1] != k or k % m:
        raise DimensionError(f"expected square matrix of m={m} blocks, got {c.shape}")
    if k == m:
        return np.linalg.inv(c)
    e_inv = np.linalg.inv(c[:m, :m])
    f = c[:m, m:]
    g = c[m:, :m]
    s = c[m:, m:] - g @ e_inv @ f
    s_inv = nested_block_inverse(s, m)
    tr = -e_inv @ f @ s_inv
    bl = -s_inv @ g @ e_inv
    tl = e_inv + e_inv @ f @ s_inv @ g @ e_inv
    out = np.empty_like(c)
    out[:m, :m] = tl
    out[:m, m:] = tr
    out[m:, :m] = bl
    out[m:, m:] = s_inv
    return out


def _chol_logdet(c: np.ndarray, what: str) -> float:
    try:
        chol = np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        eig_min = float(np.linalg.eigvalsh(c)[0])
        raise ModelError(f"{what} is not positive definite (min eigenvalue {eig_min:.3e})") from exc
    return float(2.0 * np.sum(np.log(np.diag(chol))))


@dataclass(eq=False)
class GaussianModel:
    """Compressed-domain Gaussian statistics with cached inverses.

    ``quad`` and ``lin`` are the precomputed quadratic and linear score
    coefficients, so one evaluation is a single matrix-vector product.
    Immutable in practice; safe to share across parallel trials.
    """

    mu0: np.ndarray
    mu1: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    inv0: np.ndarray
    inv1: np.ndarray
    logdet0: float
    logdet1: float
    tau0: float
    quad: np.ndarray
    lin: np.ndarray
    block_size: int
    ridge0: float = 0.0
    ridge1: float = 0.0
    rank_deficient: bool = False

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]

    def inverse_defect(self) -> float:
        """max |C C^{-1} - I| over both hypotheses (full check, test use)."""
        eye = np.eye(self.dim)
        d0 = np.max(np.abs(self.c0 @ self.inv0 - eye))
        d1 = np.max(np.abs(self.c1 @ self.inv1 - eye))
        return float(max(d0, d1))


def _spot_defect(c: np.ndarray, inv: np.ndarray) -> float:
    # a handful of unit-vector columns; O(dim^2), catches broken inversions
    dim = c.shape[0]
    idx = np.linspace(0, dim - 1, num=min(8, dim), dtype=int)
    return float(np.max(np.abs(c @ inv[:, idx] - np.eye(dim)[:, idx])))


def _checked_inverse(c: np.ndarray, block_size: int, what: str) -> np.ndarray:
    """Nested block inverse, falling back to a spectral inverse when the
    matrix is too ill-conditioned for Schur cancellation (ridged sample
    covariances); the residual tolerance scales with the condition number
    since 1e-8 is unattainable in float64 beyond condition ~1e8."""
    inv = nested_block_inverse(c, block_size)
    defect = _spot_defect(c, inv)
    if defect <= 1e-8:
        return inv
    w, v = np.linalg.eigh(c)
    if w[0] <= 0.0:
        raise ModelError(f"{what} is not positive definite (min eigenvalue {w[0]:.3e})")
    inv = (v / w) @ v.T
    tol = max(1e-8, 64.0 * np.finfo(float).eps * w[-1] / w[0])
    defect = _spot_defect(c, inv)
    if defect > tol:
        raise ModelError(
            f"{what} inverse defect {defect:.2e} exceeds {tol:.2e} "
            f"(condition ~ {w[-1] / w[0]:.2e})"
        )
    return inv


def _finish_model(mu0, mu1, c0, c1, block_size, ridge0, ridge1, rank_deficient=False):
    diag0 = np.diag(np.diag(c0))
    if np.array_equal(c0, diag0):
        d = np.diag(c0)
        inv0 = np.diag(1.0 / d)
        logdet0 = float(np.sum(np.log(d)))
    else:
        inv0 = _checked_inverse(c0, block_size, "H0 covariance")
        logdet0 = _chol_logdet(c0, "H0 covariance")
    inv1 = _checked_inverse(c1, block_size, "H1 covariance")
    logdet1 = _chol_logdet(c1, "H1 covariance")

    tau0 = 0.5 * (logdet0 - logdet1 + mu0 @ inv0 @ mu0 - mu1 @ inv1 @ mu1)
    quad = 0.5 * (inv0 - inv1)
    lin = inv1 @ mu1 - inv0 @ mu0
    return GaussianModel(
        mu0=mu0,
        mu1=mu1,
        c0=c0,
        c1=c1,
        inv0=inv0,
        inv1=inv1,
        logdet0=logdet0,
        logdet1=logdet1,
        tau0=float(tau0),
        quad=quad,
        lin=lin,
        block_size=block_size,
        ridge0=ridge0,
        ridge1=ridge1,
        rank_deficient=rank_deficient,
    )


def compressed_moments(
    stats: HypothesisStats, bp: BlockProjection, hypothesis: int
) -> tuple[np.ndarray, np.ndarray]:
    """Compressed mean and covariance of one hypothesis.

    Exploits the block-scalar structure directly: diagonal blocks of
    ``A D A^T`` are ``d_jj I`` exactly (orthonormal rows), cross blocks are
    ``d_jk A_j A_k^T``.  Equivalent to compressing the dense statistics, but
    never materializes the ambient covariance.
    """
    if bp.n_sensors != stats.l or bp.n != stats.n:
        raise DimensionError(
            f"operator is ({bp.n_sensors} sensors, n={bp.n}), "
            f"stats are ({stats.l} sensors, n={stats.n})"
        )
    m, l = bp.m, bp.n_sensors
    means = stats.mean1 if hypothesis else stats.mean0
    grid = stats.grid(hypothesis)
    mu = np.concatenate(
        [means[j] * (bp.blocks[j].entries @ np.ones(bp.n)) for j in range(l)]
    )
    c = np.zeros((m * l, m * l))
    for j in range(l):
        c[j * m : (j + 1) * m, j * m : (j + 1) * m] = grid[j, j] * np.eye(m)
        for k in range(j + 1, l):
            if grid[j, k] == 0.0:
                continue
            block = grid[j, k] * (bp.blocks[j].entries @ bp.blocks[k].entries.T)
            c[j * m : (j + 1) * m, k * m : (k + 1) * m] = block
            c[k * m : (k + 1) * m, j * m : (j + 1) * m] = block.T
    return mu, c


def build_gaussian_model(stats: HypothesisStats, bp: BlockProjection) -> GaussianModel:
    """Compress closed-form statistics and assemble the scoring model.

    The H1 covariance is inverted by nested block inversion, the H0
    covariance directly when diagonal.
    """
    mu0, c0 = compressed_moments(stats, bp, 0)
    mu1, c1 = compressed_moments(stats, bp, 1)
    return _finish_model(mu0, mu1, c0, c1, bp.m, 0.0, 0.0)


def gaussian_model_from_moments(
    mu0: np.ndarray,
    c0: np.ndarray,
    mu1: np.ndarray,
    c1: np.ndarray,
    block_size: int,
    rank_deficient: bool = False,
) -> GaussianModel:
    """Model from explicit (possibly estimated) compressed moments.

    Sample covariances may be rank deficient; a ridge of
    ``RIDGE_SCALE * trace(C) / dim`` is added whenever the smallest
    eigenvalue falls below ``EIG_FLOOR``, and the amount is recorded on the
    model.
    """
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    dim = mu0.shape[0]
    if mu1.shape != (dim,):
        raise DimensionError("hypothesis means differ in length")

    def stabilize(c, what):
        c = np.asarray(c, dtype=float)
        if c.shape != (dim, dim):
            raise DimensionError(f"{what} must be ({dim}, {dim}), got {c.shape}")
        c = (c + c.T) / 2.0
        eig_min = float(np.linalg.eigvalsh(c)[0])
        ridge = 0.0
        if eig_min < EIG_FLOOR:
            ridge = RIDGE_SCALE * float(np.trace(c)) / dim
            if ridge <= 0.0:
                raise ModelError(f"{what} has non-positive trace; cannot stabilize")
            c = c + ridge * np.eye(dim)
            eig_min_after = eig_min + ridge
            if eig_min_after <= 0.0:
                raise ModelError(
                    f"{what} still singular after ridge {ridge:.3e} "
                    f"(min eigenvalue {eig_min:.3e})"
                )
            logger.debug("%s ridged by %.3e (min eig %.3e)", what, ridge, eig_min)
        return c, ridge

    c0s, r0 = stabilize(c0, "H0 covariance")
    c1s, r1 = stabilize(c1, "H1 covariance")
    return _finish_model(mu0, mu1, c0s, c1s, block_size, r0, r1, rank_deficient)


def llr_ga(y: np.ndarray, model: GaussianModel) -> float | np.ndarray:
    """Gaussian-approximation LLR ``1/2 y'(C0^-1 - C1^-1)y + (mu1'C1^-1 - mu0'C0^-1)y + tau0``.

    Accepts one vector or a batch shaped ``(..., dim)``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != model.dim:
        raise DimensionError(f"expected trailing dimension {model.dim}, got {y.shape[-1]}")
    if y.ndim == 1:
        return float(y @ (model.quad @ y) + model.lin @ y + model.tau0)
    qy = y @ model.quad
    return np.einsum("...i,...i->...", qy, y) + y @ model.lin + model.tau0


# ---------------------------------------------------------------------------
# uncompressed baselines


def _per_sensor(x: np.ndarray, spec: ScenarioSpec) -> list[np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.dim:
        raise DimensionError(f"expected a vector of {spec.dim} coordinates, got {x.shape}")
    return [x[j * spec.n : (j + 1) * spec.n] for j in range(spec.l)]


def llr_product(x: np.ndarray, spec: ScenarioSpec) -> float:
    """Marginal log-likelihood ratio summed over sensors and time.

    A point with zero H0 density but positive H1 density scores ``+inf``
    (decide H1); the event is logged.  The mirror case scores ``-inf``.
    """
    total = 0.0
    hit_zero_h1 = False
    for j, xj in enumerate(_per_sensor(x, spec)):
        l1 = marginal(spec, j, 1).logpdf(xj)
        l0 = marginal(spec, j, 0).logpdf(xj)
        zero_h0 = np.isneginf(l0) & ~np.isneginf(l1)
        if np.any(zero_h0):
            logger.warning("zero H0 density at %d points (sensor %d)", int(zero_h0.sum()), j)
            return math.inf
        finite = ~np.isneginf(l1)
        hit_zero_h1 |= not np.all(finite)
        total += float(np.sum(l1[finite] - l0[finite]))
    return -math.inf if hit_zero_h1 else total


# ---------------------------------------------------------------------------
# copulas


@dataclass(frozen=True)
class CopulaSpec:
    """A fitted copula family.

    ``corr`` is the correlation matrix for the gaussian family (dimension 2
    or 3); ``theta`` the scalar dependence parameter for clayton (> 0) or
    gumbel (>= 1), bivariate only.
    """

    family: str
    dim: int
    theta: float | None = None
    corr: np.ndarray | None = None

    def __post_init__(self):
        if self.family == "gaussian":
            if self.corr is None or self.corr.shape != (self.dim, self.dim):
                raise ConfigError("gaussian copula needs a (dim, dim) correlation matrix")
            self.corr.setflags(write=False)
            if np.any(np.abs(self.corr - np.eye(self.dim))[~np.eye(self.dim, dtype=bool)] >= 1.0):
                raise ConfigError("gaussian copula needs |rho| < 1")
        elif self.family == "clayton":
            if self.dim != 2:
                raise ConfigError("clayton copula is bivariate")
            if self.theta is None or self.theta <= 0:
                raise ConfigError("clayton needs theta > 0")
        elif self.family == "gumbel":
            if self.dim != 2:
                raise ConfigError("gumbel copula is bivariate")
            if self.theta is None or self.theta < 1:
                raise ConfigError("gumbel needs theta >= 1")
        else:
            raise ConfigError(f"unknown copula family {self.family!r}")


def _pairwise_tau(u: np.ndarray) -> np.ndarray:
    d = u.shape[1]
    tau = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            t = kendalltau(u[:, i], u[:, j]).statistic
            tau[i, j] = tau[j, i] = 0.0 if np.isnan(t) else t
    return tau


def fit_copula(u: np.ndarray, family: str) -> CopulaSpec:
    """Fit a copula by Kendall's-tau inversion.

    gaussian: ``rho = sin(pi tau / 2)`` pairwise; clayton:
    ``theta = 2 tau / (1 - tau)``; gumbel: ``theta = 1 / (1 - tau)``.
    Parameters are clamped into their family domains; a rank correlation of
    the wrong sign for a one-sided family raises :class:`FitError`.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] < 2:
        raise DimensionError("need a (T, d>=2) matrix of probability transforms")
    if u.shape[0] < 10:
        raise FitError(f"need at least 10 observations to fit, got {u.shape[0]}")
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise FitError("probability transforms must lie strictly inside (0, 1)")
    d = u.shape[1]
    tau = _pairwise_tau(u)

    if family == "gaussian":
        rho = np.sin(np.pi * tau / 2.0)
        np.fill_diagonal(rho, 1.0)
        off = ~np.eye(d, dtype=bool)
        rho[off] = np.clip(rho[off], -RHO_MAX, RHO_MAX)
        try:
            np.linalg.cholesky(rho)
        except np.linalg.LinAlgError:
            # nearest-by-eigenvalue-clipping correlation matrix
            w, v = np.linalg.eigh(rho)
            rho = v @ np.diag(np.maximum(w, 1e-6)) @ v.T
            scale = np.sqrt(np.diag(rho))
            rho = rho / np.outer(scale, scale)
            np.fill_diagonal(rho, 1.0)
        return CopulaSpec("gaussian", d, corr=rho)

    if d != 2:
        raise FitError(f"{family} copula supports only two sensors, got {d}")
    t = float(tau[0, 1])
    if family == "clayton":
        if t <= 0.0:
            raise FitError(f"clayton requires positive dependence, got tau={t:.3f}")
        theta = min(2.0 * t / max(1.0 - t, 1e-12), THETA_MAX)
        return CopulaSpec("clayton", 2, theta=theta)
    if family == "gumbel":
        if t < 0.0:
            raise FitError(f"gumbel requires non-negative dependence, got tau={t:.3f}")
        theta = min(1.0 / max(1.0 - t, 1e-12), THETA_MAX)
        return CopulaSpec("gumbel", 2, theta=max(theta, 1.0))
    raise ConfigError(f"unknown copula family {family!r}")


def pit_clamp(u: np.ndarray) -> tuple[np.ndarray, int]:
    """Clamp probability transforms into ``[PIT_EPS, 1 - PIT_EPS]``.

    Returns the clamped array and the number of clamped entries.
    """
    clipped = np.clip(u, PIT_EPS, 1.0 - PIT_EPS)
    return clipped, int(np.sum(clipped != u))


def copula_logdensity(cop: CopulaSpec, u: np.ndarray) -> np.ndarray:
    """Log copula density at rows of ``u`` (shape ``(..., dim)``)."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != cop.dim:
        raise DimensionError(f"expected trailing dimension {cop.dim}, got {u.shape[-1]}")
    u, clamped = pit_clamp(u)
    if clamped:
        logger.debug("clamped %d probability transforms", clamped)

    if cop.family == "gaussian":
        z = ndtri(u)
        r = cop.corr
        sign, logdet = np.linalg.slogdet(r)
        prec = np.linalg.inv(r) - np.eye(cop.dim)
        quad = np.einsum("...i,ij,...j->...", z, prec, z)
        return -0.5 * (logdet + quad)

    v, w = u[..., 0], u[..., 1]
    th = cop.theta
    if cop.family == "clayton":
        base = v ** (-th) + w ** (-th) - 1.0
        return (
            math.log(1.0 + th)
            - (th + 1.0) * (np.log(v) + np.log(w))
            - (2.0 + 1.0 / th) * np.log(base)
        )
    # gumbel
    x, y = -np.log(v), -np.log(w)
    s = x**th + y**th
    t = s ** (1.0 / th)
    return (
        -t
        + (th - 1.0) * (np.log(x) + np.log(y))
        + (1.0 / th - 2.0) * np.log(s)
        + np.log(t + th - 1.0)
        + x
        + y
    )


def llr_copula(
    x: np.ndarray,
    spec: ScenarioSpec,
    cop1: CopulaSpec,
    cop0: CopulaSpec | None = None,
) -> float:
    """Product LLR plus the copula dependence term.

    The probability transforms feeding each copula term use that
    hypothesis's marginal cdfs.  ``cop0 = None`` means independence under H0
    (density one), the model of every scenario here.
    """
    base = llr_product(x, spec)
    if not math.isfinite(base):
        return base
    sensors = _per_sensor(x, spec)
    u1 = np.stack([marginal(spec, j, 1).cdf(xj) for j, xj in enumerate(sensors)], axis=-1)
    total = base + float(np.sum(copula_logdensity(cop1, u1)))
    if cop0 is not None:
        u0 = np.stack([marginal(spec, j, 0).cdf(xj) for j, xj in enumerate(sensors)], axis=-1)
        total -= float(np.sum(copula_logdensity(cop0, u0)))
    return total


# ---------------------------------------------------------------------------
# energy detection


def energy_stat(frames: np.ndarray) -> float:
    """Sum of squared frame norms over the observation window."""
    frames = np.asarray(frames, dtype=float)
    if frames.size == 0:
        raise DataError("energy statistic needs at least one frame")
    return float(np.sum(frames**2))


def energy_threshold(
    domain: str,
    alpha0: float,
    lambda0: float,
    a0: float,
    n_or_m: int,
    t: int,
    variance: str = "corrected",
) -> float:
    """Analytic Gaussian-approximation threshold for the energy statistic.

    Mean ``K T (2/lambda0^2 + a0/(a0+2))`` and standard deviation
    ``sqrt(K T (20/lambda0^4 + 4 a0 / ((a0+4)(a0+2)^2)))`` with ``K`` the
    per-frame dimension (ambient or compressed).  ``variance="printed"``
    selects the ``20/lambda0^2`` variant (dimensionally inconsistent with
    the variance of a squared exponential variate; kept for comparison).
    """
    if domain not in ("compressed", "uncompressed"):
        raise ConfigError(f"unknown domain {domain!r}")
    if not 0.0 < alpha0 < 1.0:
        raise ConfigError("alpha0 must lie strictly inside (0, 1)")
    if variance not in ("corrected", "printed"):
        raise ConfigError(f"unknown variance variant {variance!r}")
    k = float(n_or_m * t)
    mean = k * (2.0 / lambda0**2 + a0 / (a0 + 2.0))
    exp_term = 20.0 / lambda0**4 if variance == "corrected" else 20.0 / lambda0**2
    var = k * (exp_term + 4.0 * a0 / ((a0 + 4.0) * (a0 + 2.0) ** 2))
    return float(mean - ndtri(alpha0) * math.sqrt(var))


def sample_cov(frames: np.ndarray, known_mean: np.ndarray | None = None) -> np.ndarray:
    """``(1/T) sum (y - m)(y - m)^T`` with supplied or sample mean."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2:
        raise DimensionError(f"expected (T, dim) frames, got shape {frames.shape}")
    t = frames.shape[0]
    if known_mean is None:
        if t < 2:
            raise DataError("sample-mean covariance needs at least two frames")
        m = frames.mean(axis=0)
    else:
        m = np.asarray(known_mean, dtype=float)
        if m.shape != (frames.shape[1],):
            raise DimensionError("mean length does not match frame length")
        if t < 1:
            raise DataError("need at least one frame")
    centered = frames - m
    return centered.T @ centered / t


# ---------------------------------------------------------------------------
# covariance-absolute-value detection


@dataclass(frozen=True)
class OffDiagEstimate:
    """Recovered off-diagonal covariance entries and the trace surrogate.

    ``eta`` is ``(N/M) tr(C~_y)``, the compressed estimate of the ambient
    diagonal mass.  ``lambda_cov = (eta + 2 |d_hat|_1) / eta`` is the
    covariance-absolute-value statistic: exactly one when every recovered
    entry is zero, larger otherwise.
    """

    pairs: tuple[tuple[int, int], ...]
    d_hat: np.ndarray
    eta: float
    mode: str
    tied: bool

    def __post_init__(self):
        self.d_hat.setflags(write=False)

    @property
    def lambda_cov(self) -> float:
        return (self.eta + 2.0 * float(np.sum(np.abs(self.d_hat)))) / self.eta


class OffdiagPlan:
    """Precomputed normal equations for one (operator, index set) pair.

    The design side of the least squares problem depends only on the
    operator columns, so it is factored once and reused across sample
    covariances (one per trial).
    """

    def __init__(
        self,
        bp: BlockProjection,
        u_set,
        mode: str = "exact",
        tied: bool = False,
    ):
        if mode not in ("exact", "paper"):
            raise ConfigError(f"unknown least-squares mode {mode!r}")
        pairs = tuple((int(i), int(j)) for i, j in u_set)
        if not pairs:
            raise ConfigError("index set must be nonempty")
        nl = bp.in_dim
        for i, j in pairs:
            if not (0 <= i < j < nl):
                raise ConfigError(f"invalid index pair ({i}, {j}); need 0 <= i < j < {nl}")
        self.bp = bp
        self.pairs = pairs
        self.mode = mode
        self.tied = tied
        n = bp.n
        self._sensors = np.array([(i // n, j // n) for i, j in pairs])
        self._locals = np.array([(i % n, j % n) for i, j in pairs])
        # gathered column matrices: rows of pair index, per side
        self._cols = []
        for side in (0, 1):
            mats = np.empty((bp.m, len(pairs)))
            for p, (sens, loc) in enumerate(zip(self._sensors[:, side], self._locals[:, side])):
                mats[:, p] = bp.blocks[sens].entries[:, loc]
            self._cols.append(mats)
        self._design = self._build_design()
        if not tied and len(pairs) > 1:
            cond = float(np.linalg.cond(self._design))
            if not np.isfinite(cond) or cond > 1e12:
                raise LeastSquaresError(
                    f"normal equations ill-conditioned (cond ~ {cond:.2e}); "
                    "reduce the index set or increase M"
                )

    def _inner(self, side_a: int, side_b: int) -> np.ndarray:
        """Pairwise column inner products <a_{m,side_a}, a_{r,side_b}>."""
        ca, cb = self._cols[side_a], self._cols[side_b]
        same = np.equal.outer(self._sensors[:, side_a], self._sensors[:, side_b])
        return np.where(same, ca.T @ cb, 0.0)

    def _build_design(self) -> np.ndarray:
        g11 = self._inner(0, 0)
        g22 = self._inner(1, 1)
        b = g11 * g22
        if self.mode == "exact":
            x12 = self._inner(0, 1)
            b = 2.0 * (b + x12 * x12.T)
        return b

    def rhs(self, c_tilde: np.ndarray) -> np.ndarray:
        m, lcount = self.bp.m, self.bp.n_sensors
        if c_tilde.shape != (m * lcount, m * lcount):
            raise DimensionError(
                f"sample covariance must be ({m * lcount},) * 2, got {c_tilde.shape}"
            )
        s1, s2 = self._sensors[:, 0], self._sensors[:, 1]
        out = np.empty(len(self.pairs))
        # group by sensor pair so each group is two dense matmuls
        for sa in range(lcount):
            for sb in range(lcount):
                mask = (s1 == sa) & (s2 == sb)
                if not np.any(mask):
                    continue
                block = c_tilde[sa * m : (sa + 1) * m, sb * m : (sb + 1) * m]
                ca = self._cols[0][:, mask]
                cb = self._cols[1][:, mask]
                # a_{m1}^T C a_{m2}, grouped into two dense products
                fwd = np.einsum("km,km->m", ca, block @ cb)
                if self.mode == "exact":
                    # tr(C A_m^T) over the symmetrized rank-two designs
                    blockt = c_tilde[sb * m : (sb + 1) * m, sa * m : (sa + 1) * m]
                    rev = np.einsum("km,km->m", cb, blockt @ ca)
                    out[mask] = fwd + rev
                else:
                    out[mask] = fwd
        return out

    def estimate(self, c_tilde: np.ndarray) -> OffDiagEstimate:
        c_tilde = np.asarray(c_tilde, dtype=float)
        b = self.rhs(c_tilde)
        design = self._design
        if self.tied:
            denom = float(design.sum())
            if denom <= 0.0:
                raise LeastSquaresError("tied design has non-positive mass; increase M")
            d = float(b.sum() / denom)
            d_hat = np.full(len(self.pairs), d)
        else:
            try:
                d_hat = np.linalg.solve(design, b)
            except np.linalg.LinAlgError as exc:
                cond = float(np.linalg.cond(design))
                raise LeastSquaresError(
                    f"normal equations singular (cond ~ {cond:.2e}); "
                    "reduce the index set or increase M"
                ) from exc
        n_over_m = self.bp.n / self.bp.m
        eta = n_over_m * float(np.trace(c_tilde))
        return OffDiagEstimate(
            pairs=self.pairs, d_hat=d_hat, eta=eta, mode=self.mode, tied=self.tied
        )


def ls_offdiag(
    c_tilde: np.ndarray,
    bp: BlockProjection,
    u_set,
    mode: str = "exact",
    tied: bool = False,
) -> OffDiagEstimate:
    """Least-squares recovery of selected off-diagonal covariance entries.

    ``mode="exact"`` minimizes the Frobenius residual through the full
    normal equations (symmetrized rank-two designs, including the cross
    products); ``mode="paper"`` uses the reduced design that drops them,
    which coincides with the exact one whenever all index pairs couple
    distinct sensors.  ``tied=True`` constrains every selected entry to one
    shared value.
    """
    return OffdiagPlan(bp, u_set, mode=mode, tied=tied).estimate(np.asarray(c_tilde, float))


def cav_stat(est: OffDiagEstimate) -> float:
    """Covariance-absolute-value statistic ``(eta + 2 |d_hat|_1) / eta``."""
    if est.eta <= 0.0:
        raise DataError(f"trace surrogate must be positive, got {est.eta:.3e}")
    return est.lambda_cov
