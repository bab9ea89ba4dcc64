"""Chromophore data and per-layer optical properties of two-layer skin.

Absorption of each layer is the volume-fraction weighted sum of its
chromophore absorptions; scattering follows the Rayleigh+Mie reduced
scattering fit with a linear spectral anisotropy factor. All coefficients
are in cm^-1, wavelengths in nm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import DataError, DomainError, GridError

LN10 = 2.303  # base-10 extinction convention of the tabulated data


@dataclass(frozen=True)
class WavelengthGrid:
    """The fixed visible-range simulation grid: 380-780 nm in 10 nm steps."""

    lambda_min: float = 380.0
    lambda_max: float = 780.0
    step: float = 10.0

    def __post_init__(self):
        count = (self.lambda_max - self.lambda_min) / self.step + 1
        if abs(count - round(count)) > 1e-9 or count < 2:
            raise DomainError(f"grid {self} does not divide evenly")

    @property
    def count(self) -> int:
        return int(round((self.lambda_max - self.lambda_min) / self.step)) + 1

    @property
    def wavelengths(self) -> np.ndarray:
        return self.lambda_min + self.step * np.arange(self.count)

    def index_of(self, lam: float) -> int:
        """Index of a wavelength that must lie exactly on the grid."""
        idx = (lam - self.lambda_min) / self.step
        if idx < 0 or idx > self.count - 1 or abs(idx - round(idx)) > 1e-9:
            raise GridError(f"{lam} nm is not on the {self.lambda_min}-"
                            f"{self.lambda_max}/{self.step} nm grid")
        return int(round(idx))


GRID = WavelengthGrid()

# Production ranges of the 5D parameter space, axis order (V_m, V_b, t, phi_m, phi_h).
PARAM_NAMES = ("melanin_fraction", "blood_fraction", "thickness_um",
               "melanin_ratio", "haemoglobin_ratio")
PARAM_MIN = np.array([0.001, 0.001, 10.0, 0.001, 0.001])
PARAM_MAX = np.array([1.0, 1.0, 250.0, 1.0, 1.0])

DERMIS_THICKNESS_UM = 2100.0  # nominal; the dermis is simulated semi-infinite
REFRACTIVE_INDEX = 1.4

# Fixed chromophore concentrations (g/L) and molar weights (g/mol).
P_HB = 150.0
W_HB = 64500.0
P_BIL = 0.05
W_BIL = 584.66
P_BETA_CAROTENE_EPIDERMIS = 2.1e-4
P_BETA_CAROTENE_DERMIS = 7e-5
W_BETA_CAROTENE = 536.8726


@dataclass(frozen=True)
class SkinParams:
    """One point of the 5D biophysical space.

    ``melanin_ratio`` is the eumelanin fraction of total melanin;
    ``haemoglobin_ratio`` is the deoxygenated fraction of haemoglobin
    (the layer-absorption formula weights the deoxygenated term by it).
    Production values respect the table ranges; the optics layer itself
    tolerates exact zeros so that analytic test cases stay exact.
    """

    melanin_fraction: float   # V_m, epidermis volume fraction of melanosomes
    blood_fraction: float     # V_b, dermis volume fraction of blood
    thickness_um: float       # epidermal thickness
    melanin_ratio: float      # phi_m, eumelanin fraction
    haemoglobin_ratio: float  # phi_h, deoxygenated fraction

    def as_array(self) -> np.ndarray:
        return np.array([self.melanin_fraction, self.blood_fraction,
                         self.thickness_um, self.melanin_ratio,
                         self.haemoglobin_ratio])

    @staticmethod
    def from_array(a) -> "SkinParams":
        a = np.asarray(a, dtype=float)
        if a.shape != (5,):
            raise DomainError(f"expected 5 parameters, got shape {a.shape}")
        return SkinParams(*a.tolist())

    def in_ranges(self) -> bool:
        a = self.as_array()
        return bool(np.all(a >= PARAM_MIN) and np.all(a <= PARAM_MAX))

    def validate(self) -> "SkinParams":
        if not self.in_ranges():
            raise DomainError(f"{self} outside the production parameter ranges")
        return self


@dataclass(frozen=True)
class ScatteringFit:
    """Rayleigh + Mie reduced scattering fit parameters for human skin."""

    a: float = 36.4           # mu_s' at the reference wavelength, cm^-1
    f_ray: float = 0.48       # Rayleigh fraction
    b_mie: float = 0.22       # Mie wavelength exponent
    lambda_r: float = 500.0   # reference wavelength, nm

    def __post_init__(self):
        if not (0.0 <= self.f_ray <= 1.0) or self.a <= 0:
            raise DomainError(f"invalid scattering fit {self}")


DEFAULT_FIT = ScatteringFit()


@dataclass(frozen=True)
class ChromophoreSpec:
    """A tabulated chromophore: concentration, molar weight, extinction curve."""

    name: str
    concentration: float        # p_c, g/L
    molar_weight: float         # w_c, g/mol
    extinction: np.ndarray = field(repr=False)  # cm^-1/(mol/L) on the grid

    def __post_init__(self):
        if self.concentration <= 0 or self.molar_weight <= 0:
            raise DomainError(f"non-positive concentration/weight for {self.name}")
        if self.extinction is None:
            raise DataError(f"{self.name} has no tabulated extinction")
        ext = np.asarray(self.extinction, dtype=float)
        if ext.shape != (GRID.count,):
            raise DataError(f"{self.name} extinction has {ext.shape}, "
                            f"expected ({GRID.count},)")
        if np.any(ext < 0) or not np.all(np.isfinite(ext)):
            raise DataError(f"{self.name} extinction must be finite and >= 0")
        object.__setattr__(self, "extinction", ext)


@dataclass(frozen=True)
class LayerOptics:
    """Spectral optical properties of one skin layer on the full grid."""

    mu_a: np.ndarray           # absorption, cm^-1
    mu_s: np.ndarray           # un-reduced scattering, cm^-1
    g: np.ndarray              # anisotropy factor
    n: float = REFRACTIVE_INDEX
    thickness_um: float | None = None  # None marks a semi-infinite layer

    def __post_init__(self):
        for name in ("mu_a", "mu_s", "g"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (GRID.count,):
                raise DomainError(f"{name} has shape {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.mu_a < 0) or np.any(self.mu_s <= 0):
            raise DomainError("need mu_a >= 0 and mu_s > 0 at every band")
        if np.any(self.g <= 0) or np.any(self.g >= 1):
            raise DomainError("anisotropy must lie in (0, 1) at every band")


def _load_table(filename: str, columns: int) -> np.ndarray:
    path = resources.files("dermalight.data") / filename
    rows = []
    with path.open("r") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            rows.append([float(v) for v in row])
    table = np.array(rows)
    if table.shape != (GRID.count, columns + 1):
        raise DataError(f"{filename}: expected {GRID.count} rows x "
                        f"{columns + 1} cols, got {table.shape}")
    if not np.allclose(table[:, 0], GRID.wavelengths):
        raise DataError(f"{filename}: wavelength column off the grid")
    return table[:, 1:].squeeze(axis=-1) if columns == 1 else table[:, 1:]


@lru_cache(maxsize=None)
def _extinction(filename: str) -> np.ndarray:
    return _load_table(filename, 1)


@lru_cache(maxsize=None)
def chromophores() -> dict[str, ChromophoreSpec]:
    """The fixed tabulated chromophores, keyed by name."""
    return {
        "hbO2": ChromophoreSpec("hbO2", P_HB, W_HB,
                                _extinction("extinction_hbo2.csv")),
        "hb": ChromophoreSpec("hb", P_HB, W_HB,
                              _extinction("extinction_hb.csv")),
        "bilirubin": ChromophoreSpec("bilirubin", P_BIL, W_BIL,
                                     _extinction("extinction_bilirubin.csv")),
        "beta_carotene_epidermis": ChromophoreSpec(
            "beta_carotene_epidermis", P_BETA_CAROTENE_EPIDERMIS,
            W_BETA_CAROTENE, _extinction("extinction_beta_carotene.csv")),
        "beta_carotene_dermis": ChromophoreSpec(
            "beta_carotene_dermis", P_BETA_CAROTENE_DERMIS,
            W_BETA_CAROTENE, _extinction("extinction_beta_carotene.csv")),
    }


def chromophore_absorption(spec: ChromophoreSpec, lam: float) -> float:
    """Absorption 2.303 * p_c * eps_c(lam) / w_c of a fully concentrated
    chromophore; the caller applies the volume fraction."""
    idx = GRID.index_of(lam)
    return LN10 * spec.concentration * spec.extinction[idx] / spec.molar_weight


def _check_visible(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("wavelength must be positive")
    return lam


def melanin_absorption(kind: str, lam):
    """Power-law melanin absorption in cm^-1, lam in nm."""
    lam = _check_visible(lam)
    if kind == "eumelanin":
        return 6.6e11 * lam ** -3.33
    if kind == "pheomelanin":
        return 2.9e15 * lam ** -4.75
    raise DomainError(f"unknown melanin kind {kind!r}")


def baseline_absorption(lam):
    """Wavelength-dependent baseline absorption of bloodless, melanin-free skin."""
    return 7.84e8 * _check_visible(lam) ** -3.255


def _tabulated_mu_a(name: str) -> np.ndarray:
    spec = chromophores()[name]
    return LN10 * spec.concentration * spec.extinction / spec.molar_weight


def epidermis_absorption(p: SkinParams, lam: float) -> float:
    """Total epidermal absorption at one grid wavelength."""
    idx = GRID.index_of(lam)
    return epidermis_absorption_spectrum(p)[idx]


def epidermis_absorption_spectrum(p: SkinParams) -> np.ndarray:
    vm, phim = p.melanin_fraction, p.melanin_ratio
    lam = GRID.wavelengths
    melanin = (phim * melanin_absorption("eumelanin", lam)
               + (1.0 - phim) * melanin_absorption("pheomelanin", lam))
    rest = _tabulated_mu_a("beta_carotene_epidermis") + baseline_absorption(lam)
    return vm * melanin + (1.0 - vm) * rest


def dermis_absorption(p: SkinParams, lam: float) -> float:
    """Total dermal absorption at one grid wavelength."""
    idx = GRID.index_of(lam)
    return dermis_absorption_spectrum(p)[idx]


def dermis_absorption_spectrum(p: SkinParams) -> np.ndarray:
    vb, phih = p.blood_fraction, p.haemoglobin_ratio
    blood = (phih * _tabulated_mu_a("hb")
             + (1.0 - phih) * _tabulated_mu_a("hbO2")
             + _tabulated_mu_a("bilirubin")
             + _tabulated_mu_a("beta_carotene_dermis"))
    return vb * blood + (1.0 - vb) * baseline_absorption(GRID.wavelengths)


def reduced_scattering(fit: ScatteringFit, lam):
    """Reduced scattering coefficient mu_s' in cm^-1."""
    lam = _check_visible(lam)
    x = lam / fit.lambda_r
    return fit.a * (fit.f_ray * x ** -4.0 + (1.0 - fit.f_ray) * x ** -fit.b_mie)


def anisotropy(lam):
    """Spectral anisotropy factor, shared by epidermis and dermis."""
    return 0.62 + _check_visible(lam) * 0.29e-3


def layer_optics(p: SkinParams,
                 fit: ScatteringFit = DEFAULT_FIT) -> tuple[LayerOptics, LayerOptics]:
    """Assemble (epidermis, dermis) optics on the full grid.

    The un-reduced scattering coefficient is recovered bandwise as
    mu_s'(lam) / (1 - g(lam)); both layers share g and the 1.4 index.
    """
    lam = GRID.wavelengths
    g = anisotropy(lam)
    mu_s = reduced_scattering(fit, lam) / (1.0 - g)
    epidermis = LayerOptics(mu_a=epidermis_absorption_spectrum(p), mu_s=mu_s,
                            g=g, thickness_um=p.thickness_um)
    dermis = LayerOptics(mu_a=dermis_absorption_spectrum(p), mu_s=mu_s,
                         g=g, thickness_um=None)
    return epidermis, dermis
