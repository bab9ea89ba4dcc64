"""The warped 5D parameter space, its samplers, and the albedo look-up tensor.

Axis order is (V_m, V_b, t, phi_m, phi_h). Melanin is sampled cubicly
and blood quarticly, so evenly spaced unit-cube points concentrate where
the albedo reacts most; thickness and the two type ratios stay uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .colorimetry import Illuminant, albedo_rgb
from .errors import DomainError
from .optics import PARAM_MAX, PARAM_MIN, SkinParams
from .transport import SimConfig

WARP_EXPONENTS = np.array([3.0, 4.0, 1.0, 1.0, 1.0])

TRAIN_SPLIT = 0
VAL_SPLIT = 1

HALTON_BASES = (2, 3, 5, 7, 11)


@dataclass(frozen=True)
class ParamWarp:
    """Per-axis (min, max, exponent) of the unit-cube to parameter map."""

    mins: np.ndarray = field(default_factory=lambda: PARAM_MIN.copy())
    maxs: np.ndarray = field(default_factory=lambda: PARAM_MAX.copy())
    exponents: np.ndarray = field(default_factory=lambda: WARP_EXPONENTS.copy())

    def __post_init__(self):
        for name in ("mins", "maxs", "exponents"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (5,):
                raise DomainError(f"{name} must have 5 axes")
            object.__setattr__(self, name, arr)
        if np.any(self.mins >= self.maxs):
            raise DomainError("each axis needs min < max")


DEFAULT_WARP = ParamWarp()


def warp_array(u: np.ndarray, warp: ParamWarp = DEFAULT_WARP) -> np.ndarray:
    """Unit-cube points (..., 5) to physical parameters."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise DomainError("unit-cube coordinates must lie in [0, 1]")
    return warp.mins + (warp.maxs - warp.mins) * u ** warp.exponents


def unwarp_array(p: np.ndarray, warp: ParamWarp = DEFAULT_WARP) -> np.ndarray:
    """Exact inverse of warp_array."""
    p = np.asarray(p, dtype=float)
    if np.any(p < warp.mins - 1e-12) or np.any(p > warp.maxs + 1e-12):
        raise DomainError("parameters outside the warp ranges")
    frac = np.clip((p - warp.mins) / (warp.maxs - warp.mins), 0.0, 1.0)
    return frac ** (1.0 / warp.exponents)


def warp_params(u, warp: ParamWarp = DEFAULT_WARP) -> SkinParams:
    return SkinParams.from_array(warp_array(np.asarray(u, dtype=float), warp))


def unwarp_params(p: SkinParams, warp: ParamWarp = DEFAULT_WARP) -> np.ndarray:
    return unwarp_array(p.as_array(), warp)


def radical_inverse(index: int, base: int) -> float:
    """Van der Corput radical inverse of a positive integer."""
    inv = 1.0 / base
    result, f = 0.0, inv
    while index > 0:
        result += (index % base) * f
        index //= base
        f *= inv
    return result


def halton_point(index: int) -> np.ndarray:
    """The index-th (1-based) point of the 5D Halton sequence."""
    if index < 1:
        raise DomainError("Halton index starts at 1")
    return np.array([radical_inverse(index, b) for b in HALTON_BASES])


def halton_points(n: int, start: int = 1) -> np.ndarray:
    return np.array([halton_point(start + i) for i in range(n)])


@dataclass
class AlbedoLut:
    """Dense 5D tensor of RGB albedos on the warped node grid."""

    resolutions: tuple[int, ...]
    warp: ParamWarp
    values: np.ndarray  # float32, shape resolutions + (3,)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.resolutions = tuple(int(r) for r in self.resolutions)
        if len(self.resolutions) != 5 or any(r < 2 for r in self.resolutions):
            raise DomainError("need 5 axis resolutions, each >= 2")
        expected = self.resolutions + (3,)
        if self.values.shape != expected:
            raise DomainError(f"values shape {self.values.shape} != {expected}")

    @property
    def node_count(self) -> int:
        return int(np.prod(self.resolutions))

    def flat_values(self) -> np.ndarray:
        return self.values.reshape(-1, 3)

    def node_unit_coords(self, flat_index: int) -> np.ndarray:
        idx = np.unravel_index(flat_index, self.resolutions)
        return np.array([i / (r - 1) for i, r in zip(idx, self.resolutions)])

    def duplicate_nodes(self) -> int:
        """Number of node albedos that collide exactly with another node."""
        flat = self.flat_values()
        _, counts = np.unique(flat, axis=0, return_counts=True)
        return int(np.sum(counts[counts > 1]))


def build_lut(resolutions, cfg: SimConfig, warp: ParamWarp = DEFAULT_WARP,
              ill: Illuminant | None = None,
              node_callback: Callable[[int, int], None] | None = None) -> AlbedoLut:
    """Simulate the RGB albedo at every node of the 5D grid.

    Node randomness reuses the same (seed, band, photon) streams at every
    node, so neighboring nodes share their Monte Carlo noise and the
    tensor stays smooth across the grid.
    """
    resolutions = tuple(int(r) for r in resolutions)
    if len(resolutions) != 5 or any(r < 2 for r in resolutions):
        raise DomainError("need 5 axis resolutions, each >= 2")
    axes = [np.arange(r) / (r - 1) for r in resolutions]
    values = np.empty(resolutions + (3,), dtype=np.float32)
    total = int(np.prod(resolutions))
    for flat, idx in enumerate(np.ndindex(*resolutions)):
        u = np.array([axes[a][i] for a, i in enumerate(idx)])
        p = warp_params(u, warp)
        values[idx] = albedo_rgb(p, cfg, ill)
        if node_callback is not None:
            node_callback(flat + 1, total)
    return AlbedoLut(resolutions=resolutions, warp=warp, values=values,
                     provenance={"sim_config": cfg.to_dict()})


def lut_lookup(lut: AlbedoLut, p: SkinParams) -> np.ndarray:
    return lut_lookup_batch(lut, p.as_array()[None, :])[0]


def _snap_to_node_values(lut: AlbedoLut, params: np.ndarray) -> np.ndarray:
    """Replace single-precision-rounded node parameters with exact ones.

    Parameter maps persist as float32; near the axis minimum the cubic
    and quartic unwarp roots amplify that rounding enormously, so values
    whose float32 form matches a node's are snapped onto the node first.
    """
    params = np.array(params, dtype=float)
    for axis in range(5):
        r = lut.resolutions[axis]
        u_nodes = np.arange(r) / (r - 1)
        nodes = (lut.warp.mins[axis]
                 + (lut.warp.maxs[axis] - lut.warp.mins[axis])
                 * u_nodes ** lut.warp.exponents[axis])
        nodes32 = nodes.astype(np.float32)
        col32 = params[:, axis].astype(np.float32)
        idx = np.searchsorted(nodes32, col32).clip(0, r - 1)
        for cand in (idx, np.maximum(idx - 1, 0)):
            hit = col32 == nodes32[cand]
            params[hit, axis] = nodes[cand[hit]]
    return params


def lut_lookup_batch(lut: AlbedoLut, params: np.ndarray,
                     snap_to_nodes: bool = False) -> np.ndarray:
    """Multilinear interpolation in warped (unit-cube) coordinates.

    ``snap_to_nodes`` is for parameters that passed through float32
    storage: values indistinguishable from a node in single precision
    are treated as that node, so stored node maps stay exact.
    """
    params = np.asarray(params, dtype=float)
    if snap_to_nodes:
        params = _snap_to_node_values(lut, params)
    u = unwarp_array(params, lut.warp)
    res = np.array(lut.resolutions)
    pos = u * (res - 1)
    # Snap positions a rounding error away from a node onto it, so node
    # parameters stay exact through single-precision storage round trips.
    nearest = np.round(pos)
    pos = np.where(np.abs(pos - nearest) < 1e-5, nearest, pos)
    i0 = np.minimum(pos.astype(np.int64), res - 2)
    frac = pos - i0
    out = np.zeros((u.shape[0], 3))
    flat = lut.flat_values().astype(np.float64)
    strides = np.cumprod([1] + list(lut.resolutions[::-1][:-1]))[::-1]
    for corner in range(32):
        bits = np.array([(corner >> (4 - a)) & 1 for a in range(5)])
        weight = np.prod(np.where(bits, frac, 1.0 - frac), axis=1)
        index = (i0 + bits) @ strides
        out += weight[:, None] * flat[index]
    return out


def lut_invert(lut: AlbedoLut, albedo: np.ndarray) -> SkinParams:
    return SkinParams.from_array(lut_invert_batch(lut, np.asarray(albedo)[None, :])[0])


def lut_invert_batch(lut: AlbedoLut, albedos: np.ndarray,
                     chunk: int = 4096) -> np.ndarray:
    """Exhaustive nearest-node search; ties resolve to the lowest flat index."""
    albedos = np.asarray(albedos, dtype=np.float32)
    nodes = lut.flat_values()
    best = np.empty(albedos.shape[0], dtype=np.int64)
    for lo in range(0, albedos.shape[0], chunk):
        hi = min(lo + chunk, albedos.shape[0])
        d2 = ((albedos[lo:hi, None, :] - nodes[None, :, :]) ** 2).sum(axis=2)
        best[lo:hi] = np.argmin(d2, axis=1)
    units = np.array([lut.node_unit_coords(i) for i in best])
    return warp_array(units, lut.warp)


@dataclass
class Dataset:
    """Paired (unit-cube point, physical params, RGB albedo) records."""

    u: np.ndarray        # (n, 5)
    p: np.ndarray        # (n, 5)
    albedo: np.ndarray   # (n, 3)
    split: np.ndarray    # (n,), TRAIN_SPLIT or VAL_SPLIT
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.u.shape[0]

    def subset(self, tag: int) -> "Dataset":
        m = self.split == tag
        return Dataset(self.u[m], self.p[m], self.albedo[m], self.split[m],
                       dict(self.provenance))


def gen_dataset(n: int, source: str, cfg: SimConfig,
                lut: AlbedoLut | None = None,
                sampler: str = "halton", seed: int = 0,
                warp: ParamWarp = DEFAULT_WARP,
                ill: Illuminant | None = None) -> Dataset:
    """Generate n records split 80/20 into train and validation.

    Training points come from the Halton sequence (or uniform when
    ``sampler="uniform"``); validation points are always drawn uniformly
    from the seeded generator, matching how the networks are validated.
    Sources: ``lut_interp`` reads albedos from a prebuilt tensor,
    ``monte_carlo`` simulates every record (production-scale cost).
    """
    if n < 1:
        raise DomainError("need at least one record")
    if source not in ("monte_carlo", "lut_interp"):
        raise DomainError(f"unknown source {source!r}")
    if source == "lut_interp" and lut is None:
        raise DomainError("lut_interp source needs a LUT")
    if sampler not in ("halton", "uniform"):
        raise DomainError(f"unknown sampler {sampler!r}")

    n_train = int(round(n * 0.8))
    rng = np.random.default_rng(seed)
    if sampler == "halton":
        u_train = halton_points(n_train)
    else:
        u_train = rng.random((n_train, 5))
    u_val = rng.random((n - n_train, 5))
    u = np.vstack([u_train, u_val])
    split = np.concatenate([np.full(n_train, TRAIN_SPLIT, dtype=np.uint8),
                            np.full(n - n_train, VAL_SPLIT, dtype=np.uint8)])
    p = warp_array(u, warp)
    if source == "lut_interp":
        albedo = lut_lookup_batch(lut, p)
    else:
        albedo = np.array([albedo_rgb(SkinParams.from_array(row), cfg, ill)
                           for row in p])
    return Dataset(u=u, p=p, albedo=albedo, split=split,
                   provenance={"source": source, "sampler": sampler,
                               "seed": seed, "n": n,
                               "sim_config": cfg.to_dict()})
