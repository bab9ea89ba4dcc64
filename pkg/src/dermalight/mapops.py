"""Image-level operations: albedo map inversion, biophysical edits,
reconstruction, and error metrics.

Every operation is a pure per-texel map. Non-skin texels are carried in
an explicit validity mask; inverted parameters there are zero-filled and
reconstruction copies a passthrough image (or black) instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .neural import Mlp, decoder_forward, encoder_forward
from .optics import PARAM_MAX, PARAM_MIN
from .space import (AlbedoLut, ParamWarp, DEFAULT_WARP, lut_invert_batch,
                    lut_lookup_batch, unwarp_array, warp_array)

AXIS_NAMES = ("melanin_fraction", "blood_fraction", "thickness_um",
              "melanin_ratio", "haemoglobin_ratio")

V_M, V_B, THICKNESS, PHI_M, PHI_H = range(5)

MASK_THRESHOLD = 0.5

# Texels per block when streaming images through the networks.
_NEURAL_CHUNK = 1 << 18


@dataclass
class ParamMaps:
    """Five co-registered scalar planes plus a skin-validity mask."""

    planes: np.ndarray            # (5, h, w) float64, physical values
    mask: np.ndarray | None = None  # (h, w) bool, True = skin

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != 5:
            raise DomainError(f"planes must be (5, h, w), got {self.planes.shape}")
        if self.mask is None:
            self.mask = np.ones(self.planes.shape[1:], dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.planes.shape[1:]:
                raise DomainError("mask dimensions differ from the planes")

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def validate(self) -> "ParamMaps":
        for axis in range(5):
            vals = self.planes[axis][self.mask]
            if vals.size and (vals.min() < PARAM_MIN[axis] - 1e-9
                              or vals.max() > PARAM_MAX[axis] + 1e-9):
                raise DomainError(f"{AXIS_NAMES[axis]} plane leaves its range")
        return self

    def copy(self) -> "ParamMaps":
        return ParamMaps(self.planes.copy(), self.mask.copy())


@dataclass(frozen=True)
class EditOp:
    """One per-axis transform: scale(factor) | set(value) | offset(delta)."""

    axis: int
    kind: str
    value: float
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.axis not in range(5):
            raise ConfigError(f"axis must be 0..4, got {self.axis}")
        if self.kind not in ("scale", "set", "offset"):
            raise ConfigError(f"unknown edit kind {self.kind!r}")
        if self.kind == "scale" and self.value <= 0:
            raise ConfigError("scale factors must be positive")


@dataclass
class EditSpec:
    ops: list[EditOp] = field(default_factory=list)


@dataclass
class EditReport:
    maps: ParamMaps
    clamped: int  # texel-axis values pushed back into range


# Fig.-style presets; melanin edits touch both V_m and the type ratio.
_PRESETS = {
    "tan": [EditOp(V_M, "scale", 1.4), EditOp(PHI_M, "set", PARAM_MIN[PHI_M])],
    "flush": [EditOp(V_B, "scale", 1.7), EditOp(PHI_H, "set", PARAM_MIN[PHI_H])],
    "thin": [EditOp(THICKNESS, "set", PARAM_MIN[THICKNESS])],
    "thicken": [EditOp(THICKNESS, "set", PARAM_MAX[THICKNESS])],
    "vitiligo": [EditOp(V_M, "set", PARAM_MIN[V_M])],
    "deoxygenate": [EditOp(PHI_H, "set", PARAM_MAX[PHI_H])],
}


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(_PRESETS))


def preset_spec(name: str, mask: np.ndarray | None = None) -> EditSpec:
    """A named edit recipe; the optional mask restricts every op in it."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {preset_names()}")
    return EditSpec([EditOp(op.axis, op.kind, op.value, mask)
                     for op in _PRESETS[name]])


def edit(pm: ParamMaps, spec: EditSpec) -> EditReport:
    """Apply transforms in order on physical values, then clamp to ranges."""
    out = pm.copy()
    for op in spec.ops:
        plane = out.planes[op.axis]
        sel = out.mask.copy()
        if op.mask is not None:
            if op.mask.shape != sel.shape:
                raise DomainError("edit mask dimensions differ from the planes")
            sel &= np.asarray(op.mask, dtype=bool)
        if op.kind == "scale":
            plane[sel] *= op.value
        elif op.kind == "offset":
            plane[sel] += op.value
        else:
            plane[sel] = op.value
    clamped = 0
    for axis in range(5):
        plane = out.planes[axis]
        low = out.mask & (plane < PARAM_MIN[axis])
        high = out.mask & (plane > PARAM_MAX[axis])
        clamped += int(low.sum() + high.sum())
        plane[low] = PARAM_MIN[axis]
        plane[high] = PARAM_MAX[axis]
    return EditReport(maps=out.validate(), clamped=clamped)


def _as_mask(image_shape, mask) -> np.ndarray:
    if mask is None:
        return np.ones(image_shape[:2], dtype=bool)
    mask = np.asarray(mask)
    if mask.dtype != bool:
        mask = mask > MASK_THRESHOLD
    if mask.shape != image_shape[:2]:
        raise DomainError("mask dimensions differ from the image")
    return mask


def invert_map(albedo: np.ndarray, *, lut: AlbedoLut | None = None,
               encoder: Mlp | None = None,
               warp: ParamWarp = DEFAULT_WARP,
               mask: np.ndarray | None = None) -> ParamMaps:
    """Per-texel inversion of a linear-RGB albedo image to parameter maps.

    Pass exactly one of ``lut`` (nearest-node search) or ``encoder``
    (neural regression). Masked-out texels are zero-filled.
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    if albedo.ndim != 3 or albedo.shape[2] != 3:
        raise DomainError(f"albedo image must be (h, w, 3), got {albedo.shape}")
    if (lut is None) == (encoder is None):
        raise ConfigError("pass exactly one of lut or encoder")
    valid = _as_mask(albedo.shape, mask)
    flat = albedo[valid].reshape(-1, 3)
    if lut is not None:
        params = lut_invert_batch(lut, flat)
    else:
        # Chunked so multi-megatexel images never hold full-width
        # activation tensors in memory at once.
        params = np.empty((flat.shape[0], 5))
        for lo in range(0, flat.shape[0], _NEURAL_CHUNK):
            hi = min(lo + _NEURAL_CHUNK, flat.shape[0])
            params[lo:hi] = warp_array(encoder_forward(encoder, flat[lo:hi]),
                                       warp)
    planes = np.zeros((5,) + albedo.shape[:2])
    planes[:, valid] = params.T
    return ParamMaps(planes=planes, mask=valid).validate()


def reconstruct_map(pm: ParamMaps, *, lut: AlbedoLut | None = None,
                    decoder: Mlp | None = None,
                    warp: ParamWarp = DEFAULT_WARP,
                    passthrough: np.ndarray | None = None) -> np.ndarray:
    """Per-texel forward evaluation of parameter maps back to linear RGB.

    Masked-out texels copy ``passthrough`` when given, black otherwise.
    """
    if (lut is None) == (decoder is None):
        raise ConfigError("pass exactly one of lut or decoder")
    pm.validate()
    flat = pm.planes[:, pm.mask].T
    if lut is not None:
        rgb = lut_lookup_batch(lut, flat, snap_to_nodes=True)
    else:
        rgb = np.empty((flat.shape[0], 3))
        for lo in range(0, flat.shape[0], _NEURAL_CHUNK):
            hi = min(lo + _NEURAL_CHUNK, flat.shape[0])
            rgb[lo:hi] = decoder_forward(decoder,
                                         unwarp_array(flat[lo:hi], warp))
    if passthrough is not None:
        passthrough = np.asarray(passthrough, dtype=np.float64)
        if passthrough.shape != (pm.height, pm.width, 3):
            raise DomainError("passthrough dimensions differ from the maps")
        out = passthrough.copy()
    else:
        out = np.zeros((pm.height, pm.width, 3))
    out[pm.mask] = rgb
    return out


def error_metrics(a: np.ndarray, b: np.ndarray,
                  mask: np.ndarray | None = None,
                  gain: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    """MSE over masked-in texels, per-channel MSE, and an |a-b| image.

    The absolute-error image is scaled by ``gain`` (x4 makes residuals visible)
    and zeroed outside the mask.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"image dimensions differ: {a.shape} vs {b.shape}")
    valid = _as_mask(a.shape, mask)
    if not valid.any():
        raise DomainError("mask selects no texels")
    diff = a[valid] - b[valid]
    mse = float(np.mean(diff ** 2))
    per_channel = np.mean(diff ** 2, axis=0)
    error_image = np.abs(a - b) * gain
    error_image[~valid] = 0.0
    return mse, per_channel, error_image
