"""Bit-exact persistence for LUTs, datasets, network weights, and images.

Every binary artifact is little-endian and starts with a common header:
4-byte magic, u32 version, u64 payload hash, u32 metadata length, then a
UTF-8 JSON metadata blob and the payload itself. The hash (64-bit
blake2b of the payload) is verified on load, so corruption or truncation
fails loudly instead of producing quietly wrong numbers.
"""

from __future__ import annotations

import json
import struct
from hashlib import blake2b
from pathlib import Path

import cv2
import numpy as np

from .colorimetry import srgb_decode, srgb_encode
from .errors import FormatError
from .neural import Mlp
from .optics import PARAM_MAX, PARAM_MIN
from .space import AlbedoLut, Dataset, ParamWarp

VERSION = 1

MAGIC_LUT = b"DLUT"
MAGIC_DATASET = b"DSET"
MAGIC_MLP = b"DMLP"

DATASET_DTYPE = np.dtype([("u", "<f8", 5), ("p", "<f8", 5),
                          ("rgb", "<f8", 3), ("split", "u1")])

PLANE_NAMES = ("melanin_fraction", "blood_fraction", "thickness_um",
               "melanin_ratio", "haemoglobin_ratio")


def payload_hash(payload: bytes) -> int:
    return int.from_bytes(blake2b(payload, digest_size=8).digest(), "little")


def _pack_container(magic: bytes, meta: dict, payload: bytes) -> bytes:
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    header = magic + struct.pack("<IQI", VERSION, payload_hash(payload),
                                 len(meta_blob))
    return header + meta_blob + payload


def _unpack_container(magic: bytes, blob: bytes, path) -> tuple[dict, bytes]:
    if len(blob) < 20:
        raise FormatError(f"{path}: file too short for a header")
    if blob[:4] != magic:
        raise FormatError(f"{path}: magic {blob[:4]!r}, expected {magic!r}")
    version, digest, meta_len = struct.unpack_from("<IQI", blob, 4)
    if version > VERSION:
        raise FormatError(f"{path}: version {version} > supported {VERSION}")
    meta_end = 20 + meta_len
    if len(blob) < meta_end:
        raise FormatError(f"{path}: truncated metadata")
    payload = blob[meta_end:]
    if payload_hash(payload) != digest:
        raise FormatError(f"{path}: payload hash mismatch (corrupt file)")
    try:
        meta = json.loads(blob[20:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad metadata block: {exc}") from exc
    return meta, payload


def _write_file(path, blob: bytes) -> None:
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _read_file(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# LUT: 5 x u32 resolutions, per-axis (min, max, k) as f64, f32 RGB row-major.

def save_lut(lut: AlbedoLut, path) -> None:
    payload = struct.pack("<5I", *lut.resolutions)
    for axis in range(5):
        payload += struct.pack("<3d", lut.warp.mins[axis], lut.warp.maxs[axis],
                               lut.warp.exponents[axis])
    payload += lut.values.astype("<f4").tobytes()
    _write_file(path, _pack_container(MAGIC_LUT, lut.provenance, payload))


def load_lut(path) -> AlbedoLut:
    meta, payload = _unpack_container(MAGIC_LUT, _read_file(path), path)
    if len(payload) < 140:
        raise FormatError(f"{path}: LUT payload too short")
    res = struct.unpack_from("<5I", payload, 0)
    axes = np.frombuffer(payload, dtype="<f8", count=15, offset=20)
    axes = axes.reshape(5, 3)
    warp = ParamWarp(mins=axes[:, 0], maxs=axes[:, 1], exponents=axes[:, 2])
    count = int(np.prod(res)) * 3
    values = np.frombuffer(payload, dtype="<f4", count=count, offset=140)
    if len(payload) != 140 + count * 4:
        raise FormatError(f"{path}: LUT payload size mismatch")
    return AlbedoLut(resolutions=res, warp=warp,
                     values=values.reshape(res + (3,)).copy(),
                     provenance=meta)


# ---------------------------------------------------------------------------
# Dataset: u64 record count, then (5f8 u, 5f8 p, 3f8 rgb, u1 split) records.

def save_dataset(ds: Dataset, path) -> None:
    records = np.empty(len(ds), dtype=DATASET_DTYPE)
    records["u"] = ds.u
    records["p"] = ds.p
    records["rgb"] = ds.albedo
    records["split"] = ds.split
    payload = struct.pack("<Q", len(ds)) + records.tobytes()
    _write_file(path, _pack_container(MAGIC_DATASET, ds.provenance, payload))


def load_dataset(path) -> Dataset:
    meta, payload = _unpack_container(MAGIC_DATASET, _read_file(path), path)
    if len(payload) < 8:
        raise FormatError(f"{path}: dataset payload too short")
    (count,) = struct.unpack_from("<Q", payload, 0)
    if len(payload) != 8 + count * DATASET_DTYPE.itemsize:
        raise FormatError(f"{path}: dataset payload size mismatch")
    records = np.frombuffer(payload, dtype=DATASET_DTYPE, count=count, offset=8)
    return Dataset(u=records["u"].copy(), p=records["p"].copy(),
                   albedo=records["rgb"].copy(), split=records["split"].copy(),
                   provenance=meta)


# ---------------------------------------------------------------------------
# Weights: u32 network count; per network u32 layer count, u32 dims,
# then per layer f64 weights row-major and f64 biases.

def save_mlps(mlps: list[Mlp], path, meta: dict | None = None) -> None:
    payload = struct.pack("<I", len(mlps))
    for mlp in mlps:
        dims = mlp.dims
        payload += struct.pack("<I", len(dims))
        payload += struct.pack(f"<{len(dims)}I", *dims)
        for w, b in zip(mlp.weights, mlp.biases):
            payload += w.astype("<f8").tobytes()
            payload += b.astype("<f8").tobytes()
    _write_file(path, _pack_container(MAGIC_MLP, meta or {}, payload))


def load_mlps(path) -> tuple[list[Mlp], dict]:
    meta, payload = _unpack_container(MAGIC_MLP, _read_file(path), path)
    offset = 0

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(payload):
            raise FormatError(f"{path}: truncated weights payload")
        vals = struct.unpack_from(fmt, payload, offset)
        offset += size
        return vals

    def take_array(n):
        nonlocal offset
        if offset + 8 * n > len(payload):
            raise FormatError(f"{path}: truncated weights payload")
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        return arr.copy()

    (n_nets,) = take("<I")
    mlps = []
    for _ in range(n_nets):
        (n_dims,) = take("<I")
        dims = list(take(f"<{n_dims}I"))
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(take_array(fan_in * fan_out).reshape(fan_in, fan_out))
            biases.append(take_array(fan_out))
        mlps.append(Mlp(weights, biases).check_finite())
    if offset != len(payload):
        raise FormatError(f"{path}: weights payload size mismatch")
    return mlps, meta


# ---------------------------------------------------------------------------
# PFM (linear float images) and PNG (sRGB-encoded 8/16-bit).

def write_pfm(path, image: np.ndarray) -> None:
    """Little-endian PFM; (h, w) grayscale or (h, w, 3) color, float32."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = b"Pf\n"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF\n"
    else:
        raise FormatError(f"PFM needs (h, w) or (h, w, 3), got {image.shape}")
    h, w = image.shape[:2]
    # PFM stores rows bottom-up; negative scale marks little-endian.
    blob = header + f"{w} {h}\n-1.0\n".encode() + image[::-1].tobytes()
    _write_file(path, blob)


def read_pfm(path) -> np.ndarray:
    blob = _read_file(path)
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise FormatError(f"{path}: not a PFM file")
    channels = 3 if parts[0] == b"PF" else 1
    try:
        w, h = (int(t) for t in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM header: {exc}") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dtype, count=w * h * channels)
    if data.size != w * h * channels:
        raise FormatError(f"{path}: truncated PFM data")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape)[::-1].astype(np.float32)


def write_png(path, linear_rgb: np.ndarray, bit_depth: int = 16) -> None:
    """Encode a linear RGB image with the sRGB transfer curve and save it."""
    if bit_depth not in (8, 16):
        raise FormatError(f"PNG bit depth must be 8 or 16, got {bit_depth}")
    encoded = srgb_encode(linear_rgb)
    peak = 2 ** bit_depth - 1
    quantized = np.round(encoded * peak).astype(
        np.uint8 if bit_depth == 8 else np.uint16)
    if quantized.ndim == 3:
        quantized = quantized[:, :, ::-1]  # cv2 stores BGR
    if not cv2.imwrite(str(path), quantized):
        raise FormatError(f"{path}: PNG write failed")


def read_png(path) -> np.ndarray:
    """Load a PNG and decode the sRGB transfer curve back to linear RGB."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: PNG read failed")
    peak = 65535.0 if raw.dtype == np.uint16 else 255.0
    if raw.ndim == 3:
        raw = raw[:, :, :3][:, :, ::-1]
    return srgb_decode(raw.astype(np.float64) / peak)


def read_image(path) -> np.ndarray:
    """Linear RGB from a .pfm (stored linear) or .png (sRGB-decoded) file."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return np.asarray(read_pfm(path), dtype=np.float64)
    if suffix == ".png":
        return read_png(path)
    raise FormatError(f"{path}: unsupported image format {suffix!r}")


def write_image(path, linear_rgb: np.ndarray) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(path, linear_rgb)
    elif suffix == ".png":
        write_png(path, linear_rgb)
    else:
        raise FormatError(f"{path}: unsupported image format {suffix!r}")


# ---------------------------------------------------------------------------
# Parameter maps: one PFM per plane plus a JSON sidecar naming the planes.

def save_param_maps(pm, stem) -> None:
    """Persist a ParamMaps as <stem>.<plane>.pfm files plus <stem>.json."""
    stem = Path(stem)
    sidecar = {"planes": {}, "width": pm.width, "height": pm.height}
    for i, name in enumerate(PLANE_NAMES):
        plane_path = stem.with_suffix(f".{name}.pfm")
        write_pfm(plane_path, pm.planes[i])
        sidecar["planes"][name] = {
            "file": plane_path.name,
            "min": float(PARAM_MIN[i]), "max": float(PARAM_MAX[i]),
        }
    mask_path = stem.with_suffix(".mask.pfm")
    write_pfm(mask_path, pm.mask.astype(np.float32))
    sidecar["mask"] = mask_path.name
    try:
        stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    except OSError as exc:
        raise FormatError(f"{stem}: {exc}") from exc


def load_param_maps(stem):
    from .mapops import ParamMaps

    stem = Path(stem)
    sidecar_path = stem.with_suffix(".json")
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{sidecar_path}: {exc}") from exc
    planes = []
    for name in PLANE_NAMES:
        entry = sidecar.get("planes", {}).get(name)
        if entry is None:
            raise FormatError(f"{sidecar_path}: missing plane {name!r}")
        planes.append(read_pfm(stem.parent / entry["file"]))
    mask = read_pfm(stem.parent / sidecar["mask"]) > 0.5
    return ParamMaps(planes=np.stack(planes).astype(np.float64), mask=mask)
