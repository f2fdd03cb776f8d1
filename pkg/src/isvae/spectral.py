"""DCT-II spectra and Gaussian band filters.

Filter bandwidth ``sigma`` is measured in frequency bins: a filter centred at
normalized frequency ``f`` has taps ``exp(-(d - f*D)**2 / (2*sigma**2))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from isvae import kernels


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def dct2(signal) -> np.ndarray:
    """Unnormalized DCT-II of a single signal.

    ``X[d] = sum_n s[n] * cos(pi/D * (n + 1/2) * d)``
    """
    s = _as_vector(signal, "signal")
    if s.size < 2:
        raise ValidationError("signal length must be at least 2")
    return kernels.dct2_rows(s[None, :])[0]


def dct2_batch(signals) -> np.ndarray:
    """Row-wise :func:`dct2` of an ``(N, D)`` matrix."""
    s = np.asarray(signals, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] < 2:
        raise ValidationError(f"expected an (N, D>=2) matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValidationError("signals contain non-finite values")
    return kernels.dct2_rows(s)


@dataclass(frozen=True)
class GaussianFilter:
    center: float
    sigma: float
    taps: np.ndarray

    @property
    def size(self) -> int:
        return self.taps.shape[0]


def gaussian_taps(center, sigma: float, D: int) -> np.ndarray:
    """Taps for one or many centres; ``center`` of shape ``(...,)`` gives ``(..., D)``."""
    c = np.asarray(center, dtype=np.float64)
    d = np.arange(D, dtype=np.float64)
    return np.exp(-((d - c[..., None] * D) ** 2) / (2.0 * sigma**2))


def gaussian_filter(center: float, sigma: float, D: int) -> GaussianFilter:
    if not 0.0 <= center <= 1.0:
        raise ValidationError(f"center must lie in [0, 1], got {center}")
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    if D < 2:
        raise ValidationError(f"D must be at least 2, got {D}")
    return GaussianFilter(float(center), float(sigma), gaussian_taps(center, sigma, D))


def _taps_of(filt) -> np.ndarray:
    return filt.taps if isinstance(filt, GaussianFilter) else np.asarray(filt, dtype=np.float64)


def apply_filter(spectrum, filt) -> np.ndarray:
    x = _as_vector(spectrum, "spectrum")
    h = _taps_of(filt)
    if h.shape != x.shape:
        raise ValidationError(f"length mismatch: spectrum {x.shape[0]} vs filter {h.shape[0]}")
    return x * h


def band_energy(spectrum, filt) -> float:
    """Squared l2 norm of the filtered spectrum."""
    y = apply_filter(spectrum, filt)
    return float(np.dot(y, y))


def band_energies(spectra, centers, sigma: float) -> np.ndarray:
    """Energy of each row of ``spectra`` (N, D) in each band of ``centers`` (N, J)."""
    x = np.asarray(spectra, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    if x.ndim != 2 or c.ndim != 2 or c.shape[0] != x.shape[0]:
        raise ValidationError(f"shape mismatch: spectra {x.shape}, centers {c.shape}")
    taps = gaussian_taps(c, sigma, x.shape[1])  # (N, J, D)
    return np.einsum("njd,nd->nj", taps**2, x**2)


def mean_periodogram(spectra) -> np.ndarray:
    """Dataset average of squared DCT coefficients."""
    if isinstance(spectra, np.ndarray):
        if spectra.ndim != 2 or spectra.shape[0] == 0:
            raise ValidationError("need a nonempty (N, D) collection of spectra")
        x = spectra.astype(np.float64, copy=False)
    else:
        rows = [np.asarray(s, dtype=np.float64) for s in spectra]
        if not rows:
            raise ValidationError("need at least one spectrum")
        if len({r.shape for r in rows}) != 1 or rows[0].ndim != 1:
            raise ValidationError("spectra have ragged lengths")
        x = np.stack(rows)
    return np.mean(x**2, axis=0)
