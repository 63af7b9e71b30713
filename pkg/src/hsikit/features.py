"""Hand-crafted descriptor of a 64 x 64 hyperspectral patch.

Fifty maps are computed per patch: six spectral indices, twenty uniformly
sampled bands, and the magnitudes of 24 complex Gabor filters applied to the
band-averaged image. Eight order statistics of every map are concatenated in
a fixed order, giving a 400-dimensional feature vector.

Index band positions and Gabor envelope parameters are documented defaults
(see DEFAULT_INDICES / default_gabor_bank), chosen so all six indices stay
computable on a visible-to-NIR axis such as 0.43-0.86 um.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .scene import SpectralAxis

PATCH_SIZE = 64
N_SAMPLED_BANDS = 20
N_STATISTICS = 8
FEATURE_LENGTH = 400

STATISTIC_NAMES = ("mean", "std", "q10", "q90", "q25", "q75", "min", "max")

# Default index band centers, um.
_NIR = 0.86
_RED = 0.66
_RED_EDGE = 0.71
_GREEN = 0.56
_BLUE = 0.48


@dataclass(frozen=True)
class SpectralIndexDef:
    """Rational combination of band reflectances, optionally clamped to [-1, 1].

    value = scale * (sum_i num_coefs[i] * band(num_waves[i]) + num_const)
                  / (sum_j den_coefs[j] * band(den_waves[j]) + den_const)

    A zero denominator evaluates to 0 (neutral value), since reflectance can
    legitimately vanish.
    """

    name: str
    num_coefs: tuple
    num_waves_um: tuple
    den_coefs: tuple
    den_waves_um: tuple
    num_const: float = 0.0
    den_const: float = 0.0
    scale: float = 1.0
    clamp_unit: bool = False

    @property
    def required_wavelengths_um(self) -> tuple:
        return tuple(sorted(set(self.num_waves_um) | set(self.den_waves_um)))


DEFAULT_INDICES = (
    SpectralIndexDef("ndvi", (1.0, -1.0), (_NIR, _RED), (1.0, 1.0), (_NIR, _RED),
                     clamp_unit=True),
    SpectralIndexDef("anvi", (1.0, -1.0), (_NIR, _BLUE), (1.0, 1.0), (_NIR, _BLUE),
                     clamp_unit=True),
    SpectralIndexDef("ci", (1.0, -1.0), (_NIR, _RED), (1.0,), (_RED,)),
    SpectralIndexDef("ndvi_re", (1.0, -1.0), (_NIR, _RED_EDGE), (1.0, 1.0),
                     (_NIR, _RED_EDGE), clamp_unit=True),
    SpectralIndexDef("vgnir_bi", (1.0, -1.0), (_GREEN, _NIR), (1.0, 1.0),
                     (_GREEN, _NIR), clamp_unit=True),
    SpectralIndexDef("savi", (1.0, -1.0), (_NIR, _RED), (1.0, 1.0), (_NIR, _RED),
                     den_const=0.5, scale=1.5),
)


@dataclass(frozen=True)
class GaborBank:
    """4 spatial frequencies (cycles/m) x 6 orientations, isotropic envelope.

    The envelope scale is sigma = sigma_factor / frequency (about one octave
    of bandwidth at the default 0.56). Frequencies must stay below the
    Nyquist limit of the pixel grid, 0.5 / gsd cycles per meter.
    """

    frequencies_per_m: tuple
    orientations_rad: tuple
    sigma_factor: float = 0.56

    def __post_init__(self):
        if len(self.frequencies_per_m) != 4 or len(self.orientations_rad) != 6:
            raise ValueError("the bank is fixed at 4 frequencies x 6 orientations")
        if any(f <= 0 for f in self.frequencies_per_m):
            raise ValueError("frequencies must be positive")

    @property
    def size(self) -> int:
        return len(self.frequencies_per_m) * len(self.orientations_rad)

    def validate_for_gsd(self, gsd_m: float) -> None:
        nyquist = 0.5 / gsd_m
        if max(self.frequencies_per_m) >= nyquist:
            raise ValueError(
                f"bank frequencies must be below the Nyquist limit {nyquist} /m "
                f"for a {gsd_m} m GSD"
            )


def default_gabor_bank() -> GaborBank:
    # Log-spaced, one decade: 1 to 10 cycles per 64 m window.
    freqs = tuple(10 ** (k / 3.0) / 64.0 for k in range(4))
    orients = tuple(k * np.pi / 6.0 for k in range(6))
    return GaborBank(frequencies_per_m=freqs, orientations_rad=orients)


def nearest_band(axis: SpectralAxis, wavelength_um: float) -> int:
    """Index of the band center closest to the wavelength; ties pick the lower index.

    Wavelengths up to half a band spacing outside [first, last] are accepted.
    """
    wl = axis.wavelengths_um
    if wl.size >= 2:
        lo = wl[0] - (wl[1] - wl[0]) / 2.0
        hi = wl[-1] + (wl[-1] - wl[-2]) / 2.0
    else:
        lo = hi = wl[0]
    if not (lo <= wavelength_um <= hi):
        raise ValueError(
            f"wavelength {wavelength_um} um outside the axis domain "
            f"[{wl[0]}, {wl[-1]}] um"
        )
    dist = np.abs(wl - wavelength_um)
    return int(np.argmin(dist))


def compute_spectral_index(
    patch: np.ndarray, index: SpectralIndexDef, axis: SpectralAxis
) -> np.ndarray:
    """Per-pixel index map; zero denominators give 0; unit indices are clamped."""
    patch = np.asarray(patch, dtype=np.float64)
    num = np.full(patch.shape[:2], index.num_const, dtype=np.float64)
    for coef, wl in zip(index.num_coefs, index.num_waves_um):
        num += coef * patch[:, :, nearest_band(axis, wl)]
    den = np.full(patch.shape[:2], index.den_const, dtype=np.float64)
    for coef, wl in zip(index.den_coefs, index.den_waves_um):
        den += coef * patch[:, :, nearest_band(axis, wl)]
    out = np.zeros_like(num)
    nonzero = den != 0
    out[nonzero] = index.scale * num[nonzero] / den[nonzero]
    if index.clamp_unit:
        np.clip(out, -1.0, 1.0, out=out)
    return out


def uniform_band_indices(n_bands: int, n_samples: int = N_SAMPLED_BANDS) -> np.ndarray:
    """Evenly spaced band indices over 0..B-1, endpoints included."""
    if n_bands < n_samples:
        raise ValueError(f"need at least {n_samples} bands, got {n_bands}")
    return np.round(np.linspace(0, n_bands - 1, n_samples)).astype(np.int64)


def sample_uniform_bands(patch: np.ndarray, n_samples: int = N_SAMPLED_BANDS) -> np.ndarray:
    """(n_samples, H, W) maps of uniformly sampled bands."""
    patch = np.asarray(patch, dtype=np.float64)
    idx = uniform_band_indices(patch.shape[2], n_samples)
    return np.moveaxis(patch[:, :, idx], 2, 0)


def gabor_kernels(bank: GaborBank, gsd_m: float) -> list[np.ndarray]:
    """Complex kernels in pixel units, envelope-normalized (unit L1 envelope)."""
    bank.validate_for_gsd(gsd_m)
    kernels = []
    for f_m in bank.frequencies_per_m:
        f_px = f_m * gsd_m
        sigma = bank.sigma_factor / f_px
        radius = int(np.ceil(3.0 * sigma))
        coords = np.arange(-radius, radius + 1, dtype=np.float64)
        xx, yy = np.meshgrid(coords, coords)
        envelope = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
        envelope /= envelope.sum()
        for theta in bank.orientations_rad:
            carrier = np.exp(2j * np.pi * f_px * (xx * np.cos(theta) + yy * np.sin(theta)))
            kernels.append(envelope * carrier)
    return kernels


def _correlate_same_reflect(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Cross-correlation with reflect padding, same-size output."""
    radius = kernel.shape[0] // 2
    padded = np.pad(image, radius, mode="reflect")
    # correlation(image, k) == convolution(image, flipped k)
    return fftconvolve(padded, kernel[::-1, ::-1], mode="valid")


def gabor_responses(
    patch: np.ndarray, bank: GaborBank | None = None, gsd_m: float = 1.0
) -> np.ndarray:
    """(24, H, W) magnitude responses of the bank on the band-averaged patch."""
    patch = np.asarray(patch, dtype=np.float64)
    if bank is None:
        bank = default_gabor_bank()
    image = patch.mean(axis=2)
    out = np.empty((bank.size,) + image.shape, dtype=np.float64)
    for i, kernel in enumerate(gabor_kernels(bank, gsd_m)):
        out[i] = np.abs(_correlate_same_reflect(image, kernel))
    return out


def patch_statistics(map2d: np.ndarray) -> np.ndarray:
    """(mean, std, q10, q90, q25, q75, min, max); quantiles interpolate linearly."""
    flat = np.asarray(map2d, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("map must be non-empty")
    q10, q90, q25, q75 = np.quantile(flat, [0.10, 0.90, 0.25, 0.75])
    return np.array(
        [flat.mean(), flat.std(), q10, q90, q25, q75, flat.min(), flat.max()]
    )


@dataclass(frozen=True)
class PatchFeatureConfig:
    """Map inventory for the patch descriptor: must total 400 features."""

    indices: tuple = DEFAULT_INDICES
    n_sampled_bands: int = N_SAMPLED_BANDS
    bank: GaborBank = None
    patch_size: int = PATCH_SIZE

    def __post_init__(self):
        if self.bank is None:
            object.__setattr__(self, "bank", default_gabor_bank())
        n_maps = len(self.indices) + self.n_sampled_bands + self.bank.size
        if n_maps * N_STATISTICS != FEATURE_LENGTH:
            raise ValueError(
                f"config yields {n_maps * N_STATISTICS} features, "
                f"expected {FEATURE_LENGTH}"
            )

    @property
    def map_names(self) -> tuple:
        names = [d.name for d in self.indices]
        names += [f"band{i:02d}" for i in range(self.n_sampled_bands)]
        names += [
            f"gabor_f{fi}_o{oi}"
            for fi in range(len(self.bank.frequencies_per_m))
            for oi in range(len(self.bank.orientations_rad))
        ]
        return tuple(names)

    @property
    def feature_names(self) -> tuple:
        return tuple(
            f"{m}_{s}" for m in self.map_names for s in STATISTIC_NAMES
        )


def extract_patch_feature(
    patch: np.ndarray,
    axis: SpectralAxis,
    gsd_m: float = 1.0,
    config: PatchFeatureConfig | None = None,
) -> np.ndarray:
    """400-vector: [indices, sampled bands, Gabor] x 8 statistics, map-major."""
    if config is None:
        config = PatchFeatureConfig()
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 3 or patch.shape[0] != config.patch_size or patch.shape[1] != config.patch_size:
        raise ValueError(
            f"patch must be {config.patch_size}x{config.patch_size}xB, got {patch.shape}"
        )
    maps = [compute_spectral_index(patch, d, axis) for d in config.indices]
    maps.extend(sample_uniform_bands(patch, config.n_sampled_bands))
    maps.extend(gabor_responses(patch, config.bank, gsd_m))
    out = np.concatenate([patch_statistics(m) for m in maps])
    if not np.all(np.isfinite(out)):
        raise ValueError("feature vector contains non-finite values")
    return out


class PatchFeatureExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer from (N, 64, 64, B) patches to (N, 400) features."""

    def __init__(self, wavelengths_um=None, gsd_m: float = 1.0,
                 config: PatchFeatureConfig | None = None):
        self.wavelengths_um = wavelengths_um
        self.gsd_m = gsd_m
        self.config = config

    def fit(self, X, y=None):
        if self.wavelengths_um is None:
            raise ValueError("wavelengths_um is required")
        self.axis_ = SpectralAxis(np.asarray(self.wavelengths_um, dtype=np.float64))
        self.config_ = self.config if self.config is not None else PatchFeatureConfig()
        for index in self.config_.indices:
            for wl in index.required_wavelengths_um:
                nearest_band(self.axis_, wl)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "axis_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X[None]
        if X.ndim != 4:
            raise ValueError("X must be (N, H, W, B)")
        return np.stack(
            [extract_patch_feature(p, self.axis_, self.gsd_m, self.config_) for p in X]
        )

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "config_")
        return np.array(self.config_.feature_names, dtype=object)


def write_features_csv(
    path: str | Path,
    patch_ids: Sequence,
    features: np.ndarray,
    config: PatchFeatureConfig | None = None,
) -> None:
    """One row per patch: patch id then the 400 named feature columns."""
    if config is None:
        config = PatchFeatureConfig()
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != FEATURE_LENGTH:
        raise ValueError(f"features must be (N, {FEATURE_LENGTH})")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("patch_id",) + config.feature_names)
        for pid, row in zip(patch_ids, features):
            writer.writerow([pid] + [repr(float(v)) for v in row])


def read_features_csv(path: str | Path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ids, np.array(rows, dtype=np.float64)
