"""Biophysically based simulation, inversion, and editing of skin albedo."""

from .colorimetry import (Illuminant, albedo_rgb, d65, rgb_matrix,
                          spectrum_to_xyz, srgb_decode, srgb_encode,
                          xyz_to_linear_rgb)
from .errors import (ConfigError, DataError, DermalightError, DomainError,
                     FormatError, GridError, SimulationError)
from .mapops import (EditOp, EditReport, EditSpec, ParamMaps, edit,
                     error_metrics, invert_map, preset_names, preset_spec,
                     reconstruct_map)
from .neural import (LossBreakdown, Mlp, TrainConfig, TrainResult,
                     decoder_forward, encoder_forward, train)
from .optics import (GRID, PARAM_MAX, PARAM_MIN, LayerOptics, SkinParams,
                     WavelengthGrid, layer_optics)
from .space import (AlbedoLut, Dataset, DEFAULT_WARP, ParamWarp, build_lut,
                    gen_dataset, halton_point, lut_invert, lut_invert_batch,
                    lut_lookup, lut_lookup_batch, unwarp_params, warp_params)
from .transport import (SimConfig, SpectrumResult, simulate_reflectance,
                        simulate_spectrum)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
