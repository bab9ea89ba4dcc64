"""2D Monte Carlo photon random walk through two-layer semi-infinite skin.

Weighted-photon transport with implicit capture: the free path is drawn
from the exponential of the current layer's mu_t, each interaction scales
the weight by the single-scattering albedo, and Russian roulette kills
low-weight photons unbiasedly. The top interface is a smooth dielectric
(n = 1.4 against air); transmitted weight is tallied as diffuse
reflectance while the Fresnel-reflected fraction keeps walking. Crossing
the epidermis-dermis junction only swaps optical coefficients.

Randomness is counter-based per photon, keyed by (seed, band, photon id),
so spectra are bit-identical for any worker count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange, set_num_threads

from .errors import DomainError, SimulationError
from .optics import GRID, LayerOptics, SkinParams, WavelengthGrid, layer_optics

if "DERMALIGHT_THREADS" in os.environ:
    from numba import config as _numba_config

    # Clamp to numba's launchable maximum; results are identical for any
    # thread count because every photon owns a counter-based stream.
    set_num_threads(max(1, min(int(os.environ["DERMALIGHT_THREADS"]),
                               _numba_config.NUMBA_NUM_THREADS)))


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run parameters; defaults give production-scale simulations."""

    photons_per_band: int = 1_000_000
    roulette_threshold: float = 1e-4
    roulette_survival: float = 0.1
    seed: int = 0
    grid: WavelengthGrid = field(default_factory=WavelengthGrid)
    fresnel_exit: bool = True
    # Per-photon event cap; a last-resort guard behind the path-length
    # roulette in the tracer (see _trace). Truncated weight counts as
    # absorbed (well under 1% even with zero absorption).
    max_events: int = 200_000

    def __post_init__(self):
        if self.photons_per_band < 1:
            raise DomainError("photons_per_band must be >= 1")
        if not (0.0 < self.roulette_survival < 1.0):
            raise DomainError("roulette_survival must be in (0, 1)")
        if not (0.0 < self.roulette_threshold < 1.0):
            raise DomainError("roulette_threshold must be in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "photons_per_band": self.photons_per_band,
            "roulette_threshold": self.roulette_threshold,
            "roulette_survival": self.roulette_survival,
            "seed": self.seed,
            "fresnel_exit": self.fresnel_exit,
            "max_events": self.max_events,
        }


@dataclass
class SpectrumResult:
    """Per-band diffuse reflectance estimate with its standard error."""

    reflectance: np.ndarray
    stderr: np.ndarray


# ---------------------------------------------------------------------------
# Counter-based pseudo-random stream (splitmix64 over a hashed photon key).

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_KA = np.uint64(0xD1342543DE82EF95)
_KB = np.uint64(0xAF251AF3B0F025B5)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _photon_key(seed, band, pid):
    return _mix64(seed * _GOLDEN ^ band * _KA ^ pid * _KB)


@njit(cache=True, inline="always")
def _next_uniform(state):
    """Advance the stream; returns (new_state, u) with u in [0, 1)."""
    state = state + _GOLDEN
    bits = _mix64(state) >> _S11
    return state, float(bits) * _INV53


# ---------------------------------------------------------------------------
# Kernels.

@njit(cache=True, inline="always")
def _fresnel_reflectance(cos_i, n_rel):
    """Unpolarized internal Fresnel reflectance, n_rel = n_inside/n_outside."""
    sin_i2 = 1.0 - cos_i * cos_i
    sin_t2 = n_rel * n_rel * sin_i2
    if sin_t2 >= 1.0:
        return 1.0  # total internal reflection
    cos_t = math.sqrt(1.0 - sin_t2)
    rs = (n_rel * cos_i - cos_t) / (n_rel * cos_i + cos_t)
    rp = (n_rel * cos_t - cos_i) / (n_rel * cos_t + cos_i)
    return 0.5 * (rs * rs + rp * rp)


@njit(cache=True)
def _trace(mua_e, mus_e, g_e, mua_d, mus_d, g_d, n_rel, t_cm,
           seed, band, pid, rt_threshold, rt_survival, fresnel_exit,
           max_events):
    """Walk one photon; returns the weight that exited through the surface."""
    state = _photon_key(seed, band, pid)

    # Lambertian entry: 2D cosine density around the inward normal.
    state, u = _next_uniform(state)
    dx = 2.0 * u - 1.0
    dz = math.sqrt(1.0 - dx * dx)

    z = 0.0
    w = 1.0
    exited = 0.0
    in_epidermis = True
    state, u = _next_uniform(state)
    s = -math.log(1.0 - u)  # dimensionless path length

    # Path-length roulette: weight roulette never fires while absorption
    # is zero, so excursions into a non-absorbing semi-infinite dermis
    # have unbounded expected length. From 4096 events on, each doubling
    # of the event count kills the photon with probability 1 - 2^-1/2
    # and scales its weight by sqrt(2) — unbiased, variance-matched to
    # the walk's t^-1/2 survival tail, and walks short enough never to
    # get there (every ordinary skin simulation) are untouched bit for
    # bit.
    next_roulette = 4096

    events = 0
    while events < max_events:
        events += 1
        if events == next_roulette:
            state, u = _next_uniform(state)
            if u >= 0.7071067811865476:
                break
            w *= 1.4142135623730951
            next_roulette *= 2
        if in_epidermis:
            mu_t = mua_e + mus_e
            albedo = mus_e / mu_t
            g = g_e
        else:
            mu_t = mua_d + mus_d
            albedo = mus_d / mu_t
            g = g_d

        step = s / mu_t
        if dz < 0.0:
            boundary = (0.0 - z) / dz if in_epidermis else (t_cm - z) / dz
        elif dz > 0.0 and in_epidermis:
            boundary = (t_cm - z) / dz
        else:
            boundary = math.inf

        if step < boundary:
            # Interaction inside the current layer.
            z += dz * step
            w *= albedo
            if w < rt_threshold:
                state, u = _next_uniform(state)
                if u < rt_survival:
                    w /= rt_survival
                else:
                    break
            # Deflection angle from the 2D Henyey-Greenstein density
            # (wrapped-Cauchy inverse CDF, evaluated via half-angle tangent).
            state, u = _next_uniform(state)
            t = (1.0 - g) / (1.0 + g) * math.tan(math.pi * (u - 0.5))
            denom = 1.0 + t * t
            ct = (1.0 - t * t) / denom
            st = 2.0 * t / denom
            ndx = dx * ct - dz * st
            ndz = dx * st + dz * ct
            dx = ndx
            dz = ndz
            state, u = _next_uniform(state)
            s = -math.log(1.0 - u)
        else:
            # Hit a layer boundary before the interaction.
            z += dz * boundary
            s -= boundary * mu_t
            if in_epidermis and dz < 0.0:
                z = 0.0
                if not fresnel_exit:
                    exited += w
                    break
                r = _fresnel_reflectance(-dz, n_rel)
                exited += w * (1.0 - r)
                w *= r
                dz = -dz
                if w < rt_threshold:
                    state, u = _next_uniform(state)
                    if u < rt_survival:
                        w /= rt_survival
                    else:
                        break
            else:
                z = t_cm
                in_epidermis = not in_epidermis
    return exited


@njit(cache=True, parallel=True)
def _trace_band(n_photons, mua_e, mus_e, g_e, mua_d, mus_d, g_d, n_rel, t_cm,
                seed, band, rt_threshold, rt_survival, fresnel_exit,
                max_events, out):
    for i in prange(n_photons):
        out[i] = _trace(mua_e, mus_e, g_e, mua_d, mus_d, g_d, n_rel, t_cm,
                        seed, band, np.uint64(i), rt_threshold, rt_survival,
                        fresnel_exit, max_events)


@njit(cache=True, parallel=True)
def _trace_spectrum(n_photons, mua_e, mus_e, g_e, mua_d, mus_d, g_d, n_rel,
                    t_cm, seed, rt_threshold, rt_survival, fresnel_exit,
                    max_events, out):
    """All bands in one call; streams stay keyed by (seed, band, photon)."""
    n_bands = mua_e.shape[0]
    for j in prange(n_bands * n_photons):
        band = j // n_photons
        i = j - band * n_photons
        out[band, i] = _trace(mua_e[band], mus_e[band], g_e[band],
                              mua_d[band], mus_d[band], g_d[band], n_rel,
                              t_cm, seed, np.uint64(band), np.uint64(i),
                              rt_threshold, rt_survival, fresnel_exit,
                              max_events)


# ---------------------------------------------------------------------------
# Samplers exposed for validation.

def sample_hg2d(g: float, u) -> np.ndarray:
    """Deflection angle(s) in (-pi, pi] from the 2D Henyey-Greenstein density."""
    if not (0.0 <= g < 1.0):
        raise DomainError(f"anisotropy g={g} outside [0, 1)")
    u = np.asarray(u, dtype=float)
    return 2.0 * np.arctan((1.0 - g) / (1.0 + g) * np.tan(np.pi * (u - 0.5)))


def hg2d_density(g: float, theta) -> np.ndarray:
    """Analytic 2D Henyey-Greenstein density over theta in (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    return (1.0 - g * g) / (2.0 * np.pi * (1.0 + g * g - 2.0 * g * np.cos(theta)))


def sample_lambertian_entry(u) -> tuple[np.ndarray, np.ndarray]:
    """2D cosine-weighted entry direction(s) (dx, dz) with dz > 0."""
    u = np.asarray(u, dtype=float)
    dx = 2.0 * u - 1.0
    return dx, np.sqrt(1.0 - dx * dx)


# ---------------------------------------------------------------------------
# Python-level drivers.

def _band_coefficients(epidermis: LayerOptics, dermis: LayerOptics, band: int):
    coeffs = (epidermis.mu_a[band], epidermis.mu_s[band], epidermis.g[band],
              dermis.mu_a[band], dermis.mu_s[band], dermis.g[band])
    if not all(math.isfinite(c) for c in coeffs):
        raise SimulationError(f"non-finite optics at band {band}: {coeffs}")
    if epidermis.thickness_um is None:
        raise SimulationError("epidermis must have a finite thickness")
    return coeffs


def trace_photon(layers: tuple[LayerOptics, LayerOptics], band: int,
                 photon_id: int, seed: int,
                 cfg: SimConfig | None = None) -> float:
    """Trace a single photon; the estimator behind simulate_reflectance."""
    cfg = cfg or SimConfig()
    epidermis, dermis = layers
    c = _band_coefficients(epidermis, dermis, band)
    return _trace(*c, epidermis.n, epidermis.thickness_um * 1e-4,
                  np.uint64(seed), np.uint64(band), np.uint64(photon_id),
                  cfg.roulette_threshold, cfg.roulette_survival,
                  cfg.fresnel_exit, cfg.max_events)


def simulate_layers_band(layers: tuple[LayerOptics, LayerOptics], band: int,
                         cfg: SimConfig) -> tuple[float, float]:
    """Mean exit weight and standard error for one band of explicit optics."""
    epidermis, dermis = layers
    c = _band_coefficients(epidermis, dermis, band)
    out = np.empty(cfg.photons_per_band)
    _trace_band(cfg.photons_per_band, *c, epidermis.n,
                epidermis.thickness_um * 1e-4, np.uint64(cfg.seed),
                np.uint64(band), cfg.roulette_threshold, cfg.roulette_survival,
                cfg.fresnel_exit, cfg.max_events, out)
    mean = float(out.mean())
    if cfg.photons_per_band > 1:
        stderr = float(out.std(ddof=1) / math.sqrt(cfg.photons_per_band))
    else:
        stderr = 0.0
    return mean, stderr


def simulate_reflectance(p: SkinParams, band: int,
                         cfg: SimConfig) -> tuple[float, float]:
    """Diffuse reflectance of a skin-parameter point at one band."""
    return simulate_layers_band(layer_optics(p), band, cfg)


def simulate_spectrum(p: SkinParams, cfg: SimConfig) -> SpectrumResult:
    """Diffuse reflectance over the full wavelength grid."""
    return simulate_layers_spectrum(layer_optics(p), cfg)


def simulate_layers_spectrum(layers: tuple[LayerOptics, LayerOptics],
                             cfg: SimConfig) -> SpectrumResult:
    epidermis, dermis = layers
    n_bands = cfg.grid.count
    for band in range(n_bands):
        _band_coefficients(epidermis, dermis, band)
    out = np.empty((n_bands, cfg.photons_per_band))
    _trace_spectrum(cfg.photons_per_band, epidermis.mu_a, epidermis.mu_s,
                    epidermis.g, dermis.mu_a, dermis.mu_s, dermis.g,
                    epidermis.n, epidermis.thickness_um * 1e-4,
                    np.uint64(cfg.seed), cfg.roulette_threshold,
                    cfg.roulette_survival, cfg.fresnel_exit, cfg.max_events,
                    out)
    reflectance = out.mean(axis=1)
    if cfg.photons_per_band > 1:
        stderr = out.std(axis=1, ddof=1) / math.sqrt(cfg.photons_per_band)
    else:
        stderr = np.zeros(n_bands)
    return SpectrumResult(reflectance=reflectance, stderr=stderr)


def spectrum_to_csv(path, grid: WavelengthGrid, result: SpectrumResult) -> None:
    """Export a simulated spectrum as wavelength_nm,reflectance,stderr rows."""
    rows = np.column_stack([grid.wavelengths, result.reflectance, result.stderr])
    np.savetxt(path, rows, delimiter=",", fmt="%.9g",
               header="wavelength_nm,reflectance,stderr", comments="")
