"""Generic time-series ingestion for data-driven detection.

Replicates the real-data pipeline on any scalar series: mean-center, cut
into non-overlapping frames, split into train/test, estimate marginals with
a Gaussian-kernel density, and estimate compressed-domain Gaussian
statistics from training frames.  Frame sets round-trip through a small
binary container (magic ``CSFUSE01``, u32 frame length, u32 frame count,
little-endian float64 payload).
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detectors import GaussianModel, gaussian_model_from_moments, sample_cov
from .errors import DataError, DimensionError, FitError
from .linops import BlockProjection, block_compress

__all__ = [
    "FrameSet",
    "load_series",
    "frame_and_split",
    "KdeDensity",
    "kde_fit",
    "empirical_gaussian_model",
    "save_frameset",
    "load_frameset",
]

MAGIC = b"CSFUSE01"

_CDF_GRID = 4096
_MIN_KDE_SAMPLES = 30


@dataclass(frozen=True)
class FrameSet:
    """Equal-length, non-overlapping frames cut from one mean-centered series."""

    frames: np.ndarray  # (count, n)
    label: str  # "h0" or "h1"
    source: str = ""
    sample_rate: float | None = None

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise DimensionError(f"frames must be (count, n), got {self.frames.shape}")
        if self.label not in ("h0", "h1"):
            raise DataError(f"label must be 'h0' or 'h1', got {self.label!r}")
        self.frames.setflags(write=False)

    @property
    def n(self) -> int:
        return self.frames.shape[1]

    @property
    def count(self) -> int:
        return self.frames.shape[0]


def load_series(path, format: str, column: str | None = None) -> np.ndarray:
    """Load a scalar series from disk; non-finite samples are rejected.

    ``csv-column`` reads the named numeric column; ``raw-float64-le`` reads a
    packed little-endian float64 stream.
    """
    path = Path(path)
    if format == "csv-column":
        if not column:
            raise DataError("csv-column format needs a column name")
        values = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or column not in reader.fieldnames:
                raise DataError(f"{path}: no column named {column!r}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    values.append(float(row[column]))
                except (TypeError, ValueError) as exc:
                    raise DataError(f"{path}: line {lineno}: bad value {row[column]!r}") from exc
        series = np.asarray(values, dtype=float)
    elif format == "raw-float64-le":
        raw = path.read_bytes()
        if len(raw) % 8:
            raise DataError(f"{path}: length {len(raw)} is not a multiple of 8 bytes")
        series = np.frombuffer(raw, dtype="<f8").astype(float)
    else:
        raise DataError(f"unknown series format {format!r}")
    if not np.all(np.isfinite(series)):
        bad = int(np.sum(~np.isfinite(series)))
        raise DataError(f"{path}: {bad} non-finite samples present")
    return series


def save_series(path, series: np.ndarray) -> None:
    """Write a series in the raw little-endian float64 layout."""
    np.asarray(series, dtype="<f8").tofile(path)


def frame_and_split(
    series: np.ndarray,
    n: int,
    n_tr: int,
    n_mont: int,
    label: str,
    allow_empty_train: bool = False,
    source: str = "",
    sample_rate: float | None = None,
) -> tuple[FrameSet, FrameSet]:
    """Mean-center the series and cut the leading frames into train/test.

    The first ``n_tr`` frames of size ``n`` become the training set, the
    next ``n_mont`` the test set.  Concatenating both reproduces the
    consumed prefix of the centered series exactly.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise DimensionError("series must be one-dimensional")
    if n < 1 or n_tr < 0 or n_mont < 1:
        raise DataError("need n >= 1, n_tr >= 0, n_mont >= 1")
    if n_tr == 0 and not allow_empty_train:
        raise DataError("empty training split requires allow_empty_train=True")
    needed = n * (n_tr + n_mont)
    if series.size < needed:
        raise DataError(
            f"series has {series.size} samples; {needed} required "
            f"for {n_tr}+{n_mont} frames of {n}"
        )
    centered = series - series.mean()
    frames = centered[:needed].reshape(n_tr + n_mont, n)
    train = FrameSet(frames[:n_tr].copy(), label, source, sample_rate)
    test = FrameSet(frames[n_tr:].copy(), label, source, sample_rate)
    return train, test


# ---------------------------------------------------------------------------
# kernel density estimation


class KdeDensity:
    """Gaussian-kernel density over pooled scalar samples.

    Bandwidth follows Silverman's rule ``0.9 min(std, IQR/1.34) m^{-1/5}``
    with a floor of ``1e-6 * max(range, 1)`` against degenerate data.  The
    cdf is the numerically integrated density, cached on a 4096-point grid
    with linear interpolation; the pdf may be evaluated exactly or through
    the same grid (bulk scoring).
    """

    def __init__(self, samples: np.ndarray, bandwidth: float | None = None):
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size < _MIN_KDE_SAMPLES:
            raise FitError(f"need at least {_MIN_KDE_SAMPLES} samples, got {samples.size}")
        if not np.all(np.isfinite(samples)):
            raise FitError("samples must be finite")
        self.samples = np.sort(samples)
        m = samples.size
        if bandwidth is None:
            std = float(np.std(samples))
            iqr = float(np.subtract(*np.percentile(samples, [75, 25])))
            spread = min(std, iqr / 1.34) if iqr > 0 else std
            value_range = float(self.samples[-1] - self.samples[0])
            floor = 1e-6 * max(value_range, 1.0)
            bandwidth = max(0.9 * spread * m ** (-0.2), floor)
        if bandwidth <= 0:
            raise FitError(f"bandwidth must be > 0, got {bandwidth}")
        self.bandwidth = float(bandwidth)

        lo = float(self.samples[0] - 6.0 * self.bandwidth)
        hi = float(self.samples[-1] + 6.0 * self.bandwidth)
        self.grid = np.linspace(lo, hi, _CDF_GRID)
        self._grid_pdf = self._gridded_density()
        # trapezoid cumulative integral of the gridded density
        steps = np.diff(self.grid)
        partial = np.concatenate(
            [[0.0], np.cumsum(0.5 * steps * (self._grid_pdf[1:] + self._grid_pdf[:-1]))]
        )
        self._grid_cdf = np.clip(partial, 0.0, None)

    def _gridded_density(self) -> np.ndarray:
        step = self.grid[1] - self.grid[0]
        # exact kernel sum unless the sample is large and the kernel wide
        # relative to the grid step; then bin counts and convolve, which is
        # the same sum up to O((step/h)^2)
        if self.samples.size <= 50_000 or step > 0.2 * self.bandwidth:
            return self.pdf(self.grid, exact=True)
        edges = np.concatenate([self.grid - step / 2.0, [self.grid[-1] + step / 2.0]])
        counts, _ = np.histogram(self.samples, bins=edges)
        half_width = int(math.ceil(8.0 * self.bandwidth / step))
        offsets = np.arange(-half_width, half_width + 1) * step
        kernel = np.exp(-0.5 * (offsets / self.bandwidth) ** 2)
        kernel /= self.samples.size * self.bandwidth * math.sqrt(2.0 * math.pi)
        return np.convolve(counts, kernel, mode="same")

    def pdf(self, x, exact: bool = False) -> np.ndarray:
        """Density at ``x``; gridded interpolation unless ``exact``."""
        x = np.asarray(x, dtype=float)
        if not exact:
            return np.interp(x, self.grid, self._grid_pdf, left=0.0, right=0.0)
        flat = np.atleast_1d(x).ravel()
        out = np.empty(flat.size)
        h = self.bandwidth
        norm = 1.0 / (self.samples.size * h * math.sqrt(2.0 * math.pi))
        chunk = max(1, int(2e7) // max(self.samples.size, 1))
        for start in range(0, flat.size, chunk):
            block = flat[start : start + chunk]
            z = (block[:, None] - self.samples[None, :]) / h
            out[start : start + chunk] = norm * np.sum(np.exp(-0.5 * z * z), axis=1)
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def logpdf(self, x) -> np.ndarray:
        return np.log(np.maximum(self.pdf(x), 1e-300))

    def cdf(self, x) -> np.ndarray:
        """Integrated density, non-decreasing, 0/1 at the grid ends."""
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.grid, self._grid_cdf, left=0.0, right=self._grid_cdf[-1])


def kde_fit(train: FrameSet | np.ndarray, bandwidth: float | None = None) -> KdeDensity:
    """Fit the pooled-sample Gaussian-kernel density of a training set."""
    samples = train.frames if isinstance(train, FrameSet) else np.asarray(train, dtype=float)
    return KdeDensity(samples.ravel(), bandwidth=bandwidth)


# ---------------------------------------------------------------------------
# empirical compressed-domain Gaussian statistics


def empirical_gaussian_model(
    train_h0: np.ndarray, train_h1: np.ndarray, bp: BlockProjection
) -> GaussianModel:
    """Gaussian model from compressed training frames of both labels.

    Inputs are ``(T_i, n * L)`` arrays of concatenated sensor frames.  Each
    frame is compressed, then per-hypothesis sample means and covariances
    feed the model; fewer frames than the compressed dimension flags the
    model rank-deficient (ridge stabilization applies downstream).
    """
    h0 = np.asarray(train_h0, dtype=float)
    h1 = np.asarray(train_h1, dtype=float)
    for name, arr in (("H0", h0), ("H1", h1)):
        if arr.ndim != 2 or arr.shape[1] != bp.in_dim:
            raise DimensionError(f"{name} frames must be (T, {bp.in_dim}), got {arr.shape}")
        if arr.shape[0] < 2:
            raise DataError(f"{name} training needs at least two frames")

    y0 = block_compress(bp, h0)
    y1 = block_compress(bp, h1)
    rank_deficient = min(y0.shape[0], y1.shape[0]) < bp.out_dim
    mu0 = y0.mean(axis=0)
    mu1 = y1.mean(axis=0)
    c0 = sample_cov(y0)
    c1 = sample_cov(y1)
    return gaussian_model_from_moments(
        mu0, c0, mu1, c1, block_size=bp.m, rank_deficient=rank_deficient
    )


# ---------------------------------------------------------------------------
# container round-trip


def save_frameset(path, fs: FrameSet) -> None:
    """Write frames in the documented binary layout."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", fs.n, fs.count))
        fh.write(np.ascontiguousarray(fs.frames, dtype="<f8").tobytes())


def load_frameset(path, label: str, source: str = "", sample_rate: float | None = None) -> FrameSet:
    """Read frames written by :func:`save_frameset`."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise DataError(f"{path}: not a frame container (bad magic)")
    n, count = struct.unpack("<II", raw[8:16])
    expected = 16 + 8 * n * count
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    frames = np.frombuffer(raw[16:], dtype="<f8").reshape(count, n).astype(float)
    return FrameSet(frames, label, source or str(path), sample_rate)
