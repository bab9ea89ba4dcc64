"""Spectral reflectance to tristimulus and linear sRGB.

Quadrature is a plain Riemann sum on the 41-band grid, normalized so a
unit reflector has Y = 1. The XYZ -> linear RGB matrix is derived from
the sRGB primary chromaticities with the grid-integrated illuminant as
white, so the unit reflector maps to (1, 1, 1) exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .optics import GRID, SkinParams, _load_table
from .transport import SimConfig, simulate_spectrum

CLIP_REPORT_THRESHOLD = 1e-3

# sRGB primary chromaticities (x, y).
_PRIMARIES = np.array([[0.64, 0.33], [0.30, 0.60], [0.15, 0.06]])


@dataclass(frozen=True)
class Illuminant:
    """Relative spectral power on the simulation grid."""

    name: str
    power: np.ndarray = field(repr=False)

    def __post_init__(self):
        power = np.asarray(self.power, dtype=float)
        if power.shape != (GRID.count,):
            raise DomainError(f"illuminant power has shape {power.shape}")
        if np.any(power < 0):
            raise DomainError("illuminant power must be non-negative")
        object.__setattr__(self, "power", power)


@lru_cache(maxsize=None)
def cmf() -> np.ndarray:
    """CIE 1931 2-degree matching functions, shape (bands, 3)."""
    return _load_table("cie1931_cmf_2deg.csv", 3)


@lru_cache(maxsize=None)
def d65() -> Illuminant:
    return Illuminant("D65", _load_table("illuminant_d65.csv", 1))


def illuminant_from_file(path) -> Illuminant:
    """Load an illuminant from a wavelength_nm,power CSV on the grid."""
    rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if rows.shape != (GRID.count, 2) or not np.allclose(rows[:, 0],
                                                        GRID.wavelengths):
        raise DomainError(f"{path}: illuminant must cover the grid exactly")
    return Illuminant(str(path), rows[:, 1])


def spectrum_to_xyz(reflectance, ill: Illuminant | None = None) -> np.ndarray:
    """Integrate a reflectance curve to XYZ (unit reflector has Y = 1)."""
    reflectance = np.asarray(reflectance, dtype=float)
    if reflectance.shape != (GRID.count,):
        raise DomainError(f"reflectance has shape {reflectance.shape}")
    ill = ill or d65()
    bars = cmf()
    k = 1.0 / float(ill.power @ bars[:, 1])
    return k * ((reflectance * ill.power) @ bars)


@lru_cache(maxsize=None)
def _rgb_matrix_cache(white_key: str) -> np.ndarray:
    # Primaries matrix: columns are XYZ of R, G, B scaled so that the
    # integrated illuminant white maps to RGB (1, 1, 1).
    xyz_white = spectrum_to_xyz(np.ones(GRID.count), _white_illuminants[white_key])
    xy = _PRIMARIES
    cols = np.column_stack([xy[:, 0] / xy[:, 1],
                            np.ones(3),
                            (1.0 - xy[:, 0] - xy[:, 1]) / xy[:, 1]]).T
    scale = np.linalg.solve(cols, xyz_white)
    return np.linalg.inv(cols * scale)


_white_illuminants: dict[str, Illuminant] = {}


def rgb_matrix(ill: Illuminant | None = None) -> np.ndarray:
    """XYZ -> linear sRGB matrix adapted to the given illuminant's white."""
    ill = ill or d65()
    key = ill.name
    if key not in _white_illuminants:
        _white_illuminants[key] = ill
    return _rgb_matrix_cache(key)


def xyz_to_linear_rgb(xyz, ill: Illuminant | None = None,
                      with_clip: bool = False):
    """Linear sRGB in [0, 1]; out-of-gamut channels are clamped.

    With ``with_clip`` the largest clamped excess is returned as well, so
    callers can flag conversions that lost more than CLIP_REPORT_THRESHOLD.
    """
    xyz = np.asarray(xyz, dtype=float)
    rgb = xyz @ rgb_matrix(ill).T
    clip = float(np.max(np.maximum(-rgb, rgb - 1.0), initial=0.0))
    rgb = np.clip(rgb, 0.0, 1.0)
    if with_clip:
        return rgb, clip
    return rgb


def albedo_rgb(p: SkinParams, cfg: SimConfig,
               ill: Illuminant | None = None) -> np.ndarray:
    """Simulate the reflectance spectrum of p and project it to linear sRGB."""
    spectrum = simulate_spectrum(p, cfg)
    return xyz_to_linear_rgb(spectrum_to_xyz(spectrum.reflectance, ill), ill)


def srgb_encode(linear) -> np.ndarray:
    """Linear light to the sRGB transfer curve (both in [0, 1])."""
    linear = np.clip(np.asarray(linear, dtype=float), 0.0, 1.0)
    low = linear <= 0.0031308
    out = np.where(low, 12.92 * linear,
                   1.055 * np.power(np.maximum(linear, 1e-12), 1.0 / 2.4) - 0.055)
    return np.clip(out, 0.0, 1.0)


def srgb_decode(encoded) -> np.ndarray:
    """Inverse of srgb_encode."""
    encoded = np.clip(np.asarray(encoded, dtype=float), 0.0, 1.0)
    low = encoded <= 0.04045
    return np.where(low, encoded / 12.92,
                    np.power((encoded + 0.055) / 1.055, 2.4))
