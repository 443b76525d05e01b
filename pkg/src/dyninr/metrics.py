"""Reconstruction fidelity metrics and spectral diagnostics.

Conventions fixed here:
  - PSNR uses peak 1.0 regardless of whether values live in [0, 1] or
    [-1, 1]; mse = 0 reports +inf, serialized as "inf".
  - SSIM is the single-scale original: 11x11 Gaussian window sigma 1.5,
    K1 = 0.01, K2 = 0.03, dynamic range = the declared value_range width,
    valid windows only (no padding). 3-D volumes are scored slice-wise
    along the leading axis and averaged.
  - Power spectra use the unnormalized DFT, so sum(power)/n^2 equals
    sum(values^2); DC sits at (n0//2, n1//2) after the shift.  Radial
    profiles average power over integer-radius rings 1..floor(min_dim/2);
    ring r collects the cells whose rounded Euclidean distance from DC
    is exactly r.
  - Spectrum images are written as 16-bit binary PGM on a log10 scale;
    error maps are written linearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError
from .csvio import write_csv
from .data import GridSignal
from .fourier import fft2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_PEAK = 1.0
PGM_MAXVAL = 65535
SPECTRUM_LOG_FLOOR = 1e-12


@dataclass
class MetricRecord:
    """Fidelity summary; ssim is None when the data cannot form a 2-D/3-D grid."""

    mse: float
    psnr_db: float
    ssim: float | None = None


@dataclass
class SpectrumRecord:
    """2-D power spectrum with DC centered, plus its radial ring averages."""

    power: np.ndarray
    radial: list[tuple[int, float]]


def mse(pred, target) -> float:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mse: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(mse_val: float, peak: float = PSNR_PEAK) -> float:
    if mse_val < 0:
        raise ValueError(f"psnr needs mse >= 0, got {mse_val}")
    if mse_val == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse_val)


def _gaussian_window(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(n) - (n - 1) / 2.0
    w = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2-D array with an outer-product window."""
    k = w.size
    rows = np.lib.stride_tricks.sliding_window_view(a, k, axis=0) @ w
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ w


def ssim_arrays(pred: np.ndarray, target: np.ndarray, value_width: float) -> float:
    """SSIM between two raw 2-D or 3-D arrays with an explicit dynamic range."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim_arrays(a[i], b[i], value_width) for i in range(a.shape[0])]))
    if a.ndim != 2:
        raise ShapeError(f"ssim needs a 2-D or 3-D array, got {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    if value_width <= 0:
        raise ValueError("ssim needs a positive dynamic range")

    w = _gaussian_window()
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    c1 = (SSIM_K1 * value_width) ** 2
    c2 = (SSIM_K2 * value_width) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(pred: GridSignal, target: GridSignal) -> float:
    """SSIM between two grids; dynamic range comes from the target's declared range."""
    if pred.dims != target.dims:
        raise ShapeError(f"ssim: dims {pred.dims} vs {target.dims}")
    lo, hi = target.value_range
    return ssim_arrays(pred.array(), target.array(), hi - lo)


def power_spectrum_2d(grid: GridSignal) -> SpectrumRecord:
    vals = grid.array()
    if vals.ndim != 2:
        raise ShapeError(f"power_spectrum_2d needs a 2-D grid, got dims {grid.dims}")
    F = fft2d(vals)
    power = np.real(F * np.conj(F))
    n0, n1 = power.shape
    power = np.roll(np.roll(power, n0 // 2, axis=0), n1 // 2, axis=1)

    iy, ix = np.indices(power.shape)
    radius = np.rint(np.hypot(iy - n0 // 2, ix - n1 // 2)).astype(int)
    radial = []
    for r in range(1, min(n0, n1) // 2 + 1):
        ring = power[radius == r]
        radial.append((r, float(np.mean(ring))))
    return SpectrumRecord(power, radial)


def error_map(pred: GridSignal, target: GridSignal, norm_group=()) -> GridSignal:
    """Absolute error |pred - target|, scaled by the largest error in the group.

    norm_group lists additional (pred, target) pairs that share the scale;
    the pair being mapped always participates.  An all-zero group maps to
    zeros rather than dividing by zero.
    """
    if pred.dims != target.dims:
        raise ShapeError(f"error_map: dims {pred.dims} vs {target.dims}")
    raw = np.abs(pred.array() - target.array())
    peak = raw.max() if raw.size else 0.0
    for p, t in norm_group:
        if p.dims != t.dims:
            raise ShapeError(f"error_map: group dims {p.dims} vs {t.dims}")
        peak = max(peak, np.abs(p.array() - t.array()).max())
    scaled = raw / peak if peak > 0 else raw
    return GridSignal(pred.dims, scaled, (0.0, 1.0), provenance="error-map")


# ---------------------------------------------------------------------------
# export

def write_pgm16(path, values: np.ndarray, lo: float | None = None, hi: float | None = None):
    """Binary 16-bit graymap (P5, maxval 65535, big-endian rows).

    Values map linearly from [lo, hi] to [0, 65535]; bounds default to the
    data extremes, and a degenerate range writes all zeros.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"pgm needs a 2-D array, got {a.shape}")
    lo = float(a.min()) if lo is None else float(lo)
    hi = float(a.max()) if hi is None else float(hi)
    if hi > lo:
        scaled = np.clip((a - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(a)
    pix = np.rint(scaled * PGM_MAXVAL).astype(">u2")
    h, wd = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{wd} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(pix.tobytes())


def write_spectrum_pgm(path, spectrum: SpectrumRecord):
    """Spectrum image on a log10(power + 1e-12) scale, full range of the data."""
    write_pgm16(path, np.log10(spectrum.power + SPECTRUM_LOG_FLOOR))


def radial_to_csv(path, spectrum: SpectrumRecord):
    write_csv(path, ("ring", "mean_power"), spectrum.radial)
