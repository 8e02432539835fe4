"""Resonance condition, double-Gaussian lineshape and angular response.

Pure functions shared by the synthesizer, the fitter and the analysis
modules.  The resonance condition is f = gamma * B; the lineshape is the
sum of two Gaussians with a common centre (one narrow, one broad
hyperfine-field component) on a constant baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

#: Device gyromagnetic ratio in Hz/T (resonance frequency per tesla).
DEFAULT_GAMMA_HZ_PER_T = 28.03e9


@dataclass
class GyroConstant:
    """Gyromagnetic ratio gamma in Hz per tesla."""

    gamma: float = DEFAULT_GAMMA_HZ_PER_T

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")


@dataclass
class LineshapeParams:
    """Double-Gaussian lineshape: shared centre, two widths, two amplitudes.

    The widths are kept in canonical order sigma1 <= sigma2 (swapped,
    together with their amplitudes, at construction) so parameters stay
    comparable across fits.
    """

    f0: float
    a1: float
    sigma1: float
    a2: float
    sigma2: float
    baseline: float = 0.0

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise DomainError(
                f"widths must be positive, got sigma1={self.sigma1}, sigma2={self.sigma2}"
            )
        if self.sigma1 > self.sigma2:
            self.a1, self.a2 = self.a2, self.a1
            self.sigma1, self.sigma2 = self.sigma2, self.sigma1

    def as_array(self) -> np.ndarray:
        """Parameter vector in the fitter's order (f0, a1, s1, a2, s2, baseline)."""
        return np.array(
            [self.f0, self.a1, self.sigma1, self.a2, self.sigma2, self.baseline],
            dtype=float,
        )


@dataclass
class AngularResponse:
    """Amplitude response to the angle between the drive and static fields.

    ``floor_fraction`` is the residual amplitude fraction at parallel
    alignment, caused by the spatially inhomogeneous near-field drive.
    """

    max_amplitude: float = 1.0
    floor_fraction: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.floor_fraction < 1.0):
            raise DomainError(
                f"floor_fraction must be in [0, 1), got {self.floor_fraction}"
            )


def field_to_frequency(b, gyro: GyroConstant | None = None):
    """Resonance frequency in Hz for field magnitude ``b`` in tesla."""
    gyro = gyro or GyroConstant()
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise DomainError("field magnitude must be non-negative")
    out = gyro.gamma * b
    return float(out) if out.ndim == 0 else out


def frequency_to_field(f, gyro: GyroConstant | None = None):
    """Field magnitude in tesla for resonance frequency ``f`` in Hz."""
    gyro = gyro or GyroConstant()
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise DomainError("frequency must be non-negative")
    out = f / gyro.gamma
    return float(out) if out.ndim == 0 else out


def double_gaussian(f, p: LineshapeParams):
    """Evaluate the double-Gaussian lineshape at frequency ``f`` (Hz)."""
    f = np.asarray(f, dtype=float)
    d = f - p.f0
    out = (
        p.baseline
        + p.a1 * np.exp(-0.5 * (d / p.sigma1) ** 2)
        + p.a2 * np.exp(-0.5 * (d / p.sigma2) ** 2)
    )
    return float(out) if out.ndim == 0 else out


def double_gaussian_normalized(f, f0, sigma1, sigma2):
    """Unit-peak double Gaussian: equal-weight sum of the two components.

    Used by the synthesizer so the configured contrast is exactly the peak
    fractional change.  ``f`` and ``f0`` broadcast against each other.
    """
    f = np.asarray(f, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    d = f - f0
    return 0.5 * (np.exp(-0.5 * (d / sigma1) ** 2) + np.exp(-0.5 * (d / sigma2) ** 2))


def angular_amplitude(phi, r: AngularResponse):
    """Resonance amplitude at angle ``phi`` (rad) between drive and static field.

    Follows the orthogonal-projection sine law with a small residual floor;
    the resonance *position* never depends on the angle.
    """
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise DomainError("phi must be finite")
    out = r.max_amplitude * (
        r.floor_fraction + (1.0 - r.floor_fraction) * np.abs(np.sin(phi))
    )
    return float(out) if out.ndim == 0 else out
