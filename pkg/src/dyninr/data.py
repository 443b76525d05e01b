"""Grid signals, coordinate datasets, and the corruption protocols.

Coordinates live on [-1, 1]^d lattices (endpoint inclusive, row-major with
the last axis fastest).  Two normalization rules are in play and both are
idempotent:

  - synthesized signals divide by their peak |value| (a constant-zero field
    stays zero);
  - loaded grids min-max map to the declared range; a constant file maps to
    the lower bound with a logged warning rather than erroring.

Noise is applied after normalization, scaled by the standard deviation of
the targets, so "30% noise" means level = 0.30 regardless of signal units.
All randomness flows through the documented generator in rng.py.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import fourier
from .autodiff import Tensor
from .rng import Xoshiro256

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    """Raised when a raw grid file disagrees with its header."""


@dataclass(frozen=True)
class Component:
    """One synthesis term: frequency vector (cycles per domain), amplitude, phase."""

    freq: tuple
    amp: float
    phase: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    kind: str  # "sum-of-sinusoids" | "spectral-noise-field"
    components: tuple
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sum-of-sinusoids", "spectral-noise-field"):
            raise ValueError(f"unknown synth kind {self.kind!r}")
        if len(self.components) == 0:
            raise ValueError("SynthSpec needs at least one component")
        for c in self.components:
            if any(f < 0 for f in c.freq):
                raise ValueError("component frequencies must be nonnegative")


class GridSignal:
    """A scalar field sampled on a full lattice, with its declared range."""

    def __init__(self, dims, values, value_range, provenance="", norm="none"):
        dims = tuple(int(d) for d in dims)
        if len(dims) not in (1, 2, 3):  # 1-D only ever appears in unit tests
            raise ValueError(f"GridSignal supports 1-3 axes, got {dims}")
        arr = np.asarray(values, dtype=np.float64).reshape(dims)
        if not np.all(np.isfinite(arr)):
            raise ValueError("GridSignal rejects non-finite values")
        lo, hi = float(value_range[0]), float(value_range[1])
        if arr.size and (arr.min() < lo - 1e-12 or arr.max() > hi + 1e-12):
            raise ValueError(f"values outside declared range [{lo}, {hi}]")
        self.dims = dims
        self.values = Tensor(arr)
        self.value_range = (lo, hi)
        self.provenance = provenance
        self.norm = norm

    def array(self) -> np.ndarray:
        return self.values.asarray()


@dataclass
class SignalDataset:
    coords: Tensor
    targets: Tensor
    noise_level: float = 0.0
    keep_fraction: float = 1.0
    # grid provenance, kept while the rows still tile a full lattice so
    # metrics that need a 2-D field (SSIM, spectra) can reassemble it
    grid_dims: tuple | None = None
    value_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        c, t = self.coords.asarray(), self.targets.asarray()
        if c.ndim != 2 or t.ndim != 2 or c.shape[0] != t.shape[0]:
            raise ValueError(f"coords {c.shape} and targets {t.shape} must pair 1:1")
        if c.size and (c.min() < -1.0 - 1e-12 or c.max() > 1.0 + 1e-12):
            raise ValueError("coords must lie in [-1, 1]")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def to_grid(self) -> np.ndarray:
        if self.grid_dims is None:
            raise ValueError("dataset no longer tiles a full grid")
        return self.targets.asarray()[:, 0].reshape(self.grid_dims)


def make_coord_grid(dims) -> Tensor:
    """Row-major lattice over [-1, 1]^d, endpoints included, last axis fastest."""
    dims = tuple(int(d) for d in dims)
    if any(d < 2 for d in dims):
        raise ValueError(f"each grid dim must be >= 2, got {dims}")
    axes = [np.linspace(-1.0, 1.0, d) for d in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    return Tensor(np.stack([m.ravel() for m in mesh], axis=1))


def synth_signal(spec: SynthSpec, dims) -> GridSignal:
    dims = tuple(int(d) for d in dims)
    coords = make_coord_grid(dims).asarray()
    if spec.kind == "sum-of-sinusoids":
        vals = np.zeros(coords.shape[0])
        for comp in spec.components:
            f = np.asarray(comp.freq, dtype=np.float64)
            if f.shape != (len(dims),):
                raise ValueError(f"component freq {comp.freq} does not match dims {dims}")
            term = np.prod(np.sin(np.pi * coords * f + comp.phase), axis=1)
            vals = vals + comp.amp * term
        vals = vals.reshape(dims)
    else:
        vals = _spectral_noise_field(spec, dims)
    peak = np.max(np.abs(vals))
    if peak > 0:  # peak-|v| scaling: a zero field stays zero
        vals = vals / peak
    return GridSignal(dims, vals, (-1.0, 1.0), provenance=f"synth:{spec.kind}", norm="none")


def _spectral_noise_field(spec: SynthSpec, dims) -> np.ndarray:
    """Gaussian white noise shaped by a power-law spectral envelope.

    The first component sets the field: decay exponent = |freq| (its
    frequency vector's length), overall scale = its amplitude; further
    components are ignored.  2-D only.
    """
    if len(dims) != 2:
        raise ValueError("spectral-noise-field supports 2-D grids only")
    c0 = spec.components[0]
    p = math.sqrt(sum(f * f for f in c0.freq))
    rng = Xoshiro256(spec.seed)
    white = rng.normals(dims[0] * dims[1]).reshape(dims)
    spec2 = fourier.fft2d(white)
    f0 = np.minimum(np.arange(dims[0]), dims[0] - np.arange(dims[0]))
    f1 = np.minimum(np.arange(dims[1]), dims[1] - np.arange(dims[1]))
    r = np.sqrt(f0[:, None] ** 2 + f1[None, :] ** 2)
    envelope = c0.amp * (1.0 + r) ** (-p)
    return np.real(fourier.ifft2d(spec2 * envelope))


_DTYPES = {"f4": "<f4", "f8": "<f8"}
_NORMS = {"none": None, "minmax01": (0.0, 1.0), "minmax11": (-1.0, 1.0)}


def load_raw_grid(data_path, header_path) -> GridSignal:
    """Read a little-endian scalar stream described by its JSON sidecar.

    Header keys: dims (list), dtype ("f4" | "f8"), norm ("none" | "minmax01"
    | "minmax11").
    """
    with open(header_path) as fh:
        header = json.load(fh)
    unknown = set(header) - {"dims", "dtype", "norm"}
    if unknown:
        raise DataFormatError(f"unknown header keys {sorted(unknown)}")
    dims = tuple(int(d) for d in header["dims"])
    dtype = header.get("dtype", "f4")
    norm = header.get("norm", "none")
    if dtype not in _DTYPES:
        raise DataFormatError(f"dtype must be f4 or f8, got {dtype!r}")
    if norm not in _NORMS:
        raise DataFormatError(f"norm must be one of {sorted(_NORMS)}, got {norm!r}")
    raw = np.fromfile(data_path, dtype=_DTYPES[dtype])
    expected = int(np.prod(dims))
    if raw.size != expected:
        width = int(_DTYPES[dtype][-1])
        raise DataFormatError(
            f"{data_path}: expected {expected * width} bytes "
            f"({expected} x {dtype}), got {raw.size * width}")
    vals = raw.astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(vals)):
        raise DataFormatError(f"{data_path}: non-finite entries")
    target = _NORMS[norm]
    if target is None:
        rng_lo = float(vals.min()) if vals.size else 0.0
        rng_hi = float(vals.max()) if vals.size else 0.0
        return GridSignal(dims, vals, (rng_lo, rng_hi), provenance=str(data_path), norm=norm)
    lo, hi = target
    vmin, vmax = float(vals.min()), float(vals.max())
    if vmax - vmin <= 0:
        log.warning("degenerate value range in %s; mapping to lower bound %s", data_path, lo)
        vals = np.full(dims, lo)
    else:
        vals = lo + (hi - lo) * (vals - vmin) / (vmax - vmin)
    return GridSignal(dims, vals, (lo, hi), provenance=str(data_path), norm=norm)


def save_raw_grid(signal: GridSignal, data_path, header_path, dtype: str = "f4") -> None:
    """Write the stream + sidecar; norm is recorded as "none" since the
    stored values are already in their final range."""
    if dtype not in _DTYPES:
        raise DataFormatError(f"dtype must be f4 or f8, got {dtype!r}")
    signal.array().astype(_DTYPES[dtype]).tofile(data_path)
    with open(header_path, "w") as fh:
        json.dump({"dims": list(signal.dims), "dtype": dtype, "norm": "none"}, fh)
        fh.write("\n")


def grid_to_dataset(signal: GridSignal) -> SignalDataset:
    coords = make_coord_grid(signal.dims)
    targets = Tensor(signal.array().reshape(-1, 1))
    return SignalDataset(coords, targets, grid_dims=signal.dims,
                         value_range=signal.value_range)


def add_noise(dataset: SignalDataset, level: float, seed: int) -> SignalDataset:
    if level < 0:
        raise ValueError(f"noise level must be >= 0, got {level}")
    if level == 0:
        return dataset
    t = dataset.targets.asarray()
    sigma = float(t.std())
    eps = Xoshiro256(seed).normals(t.size).reshape(t.shape)
    noisy = t + level * sigma * eps
    return SignalDataset(dataset.coords, Tensor(noisy),
                         noise_level=level, keep_fraction=dataset.keep_fraction,
                         grid_dims=dataset.grid_dims, value_range=dataset.value_range)


def subsample(dataset: SignalDataset, fraction: float, seed: int):
    """Seeded uniform split without replacement -> (train, holdout).

    Kept indices are sorted ascending so row order stays coordinate-ordered.
    fraction = 1 returns the full set and an empty holdout.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"keep fraction must be in (0, 1], got {fraction}")
    n = dataset.n
    m = math.ceil(fraction * n)
    c, t = dataset.coords.asarray(), dataset.targets.asarray()
    if m == n:
        train = SignalDataset(dataset.coords, dataset.targets,
                              noise_level=dataset.noise_level, keep_fraction=fraction,
                              grid_dims=dataset.grid_dims, value_range=dataset.value_range)
        empty = SignalDataset(Tensor(np.zeros((0, c.shape[1]))), Tensor(np.zeros((0, t.shape[1]))),
                              noise_level=dataset.noise_level, keep_fraction=fraction,
                              value_range=dataset.value_range)
        return train, empty
    keep = np.sort(Xoshiro256(seed).sample(n, m))
    mask = np.zeros(n, dtype=bool)
    mask[keep] = True
    drop = np.nonzero(~mask)[0]
    mk = lambda idx: SignalDataset(Tensor(c[idx]), Tensor(t[idx]),
                                   noise_level=dataset.noise_level, keep_fraction=fraction,
                                   value_range=dataset.value_range)
    return mk(keep), mk(drop)


def dataset_to_csv(dataset: SignalDataset, path) -> None:
    from .csvio import write_csv
    c, t = dataset.coords.asarray(), dataset.targets.asarray()
    header = [f"x{i}" for i in range(c.shape[1])] + [f"y{i}" for i in range(t.shape[1])]
    rows = [list(c[i]) + list(t[i]) for i in range(c.shape[0])]
    write_csv(path, header, rows)
