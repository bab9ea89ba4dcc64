"""Unit tests for spectral integration and the RGB projection."""

import numpy as np
import pytest

from dermalight import colorimetry
from dermalight.colorimetry import (Illuminant, cmf, d65,
                                    illuminant_from_file, rgb_matrix,
                                    spectrum_to_xyz, srgb_decode, srgb_encode,
                                    xyz_to_linear_rgb)
from dermalight.errors import DomainError
from dermalight.optics import GRID


def test_cmf_shape_and_anchors():
    bars = cmf()
    assert bars.shape == (GRID.count, 3)
    assert np.all(bars >= 0.0)
    # The luminosity function peaks at 555 nm, so 550 or 560 on this grid.
    assert GRID.wavelengths[np.argmax(bars[:, 1])] in (550.0, 560.0)
    # z-bar is blue-heavy: its mass sits below 520 nm.
    assert GRID.wavelengths[np.argmax(bars[:, 2])] < 470.0


def test_d65_illuminant_positive():
    ill = d65()
    assert ill.name == "D65"
    assert np.all(ill.power > 0.0)


def test_unit_reflector_has_unit_luminance():
    xyz = spectrum_to_xyz(np.ones(GRID.count))
    assert xyz[1] == pytest.approx(1.0, abs=1e-12)


def test_unit_reflector_maps_to_white():
    rgb = xyz_to_linear_rgb(spectrum_to_xyz(np.ones(GRID.count)))
    np.testing.assert_allclose(rgb, 1.0, atol=1e-9)


def test_zero_reflector_maps_to_black():
    rgb = xyz_to_linear_rgb(spectrum_to_xyz(np.zeros(GRID.count)))
    np.testing.assert_allclose(rgb, 0.0, atol=1e-12)


def test_integration_is_linear():
    rng = np.random.default_rng(0)
    a = rng.random(GRID.count)
    b = rng.random(GRID.count)
    lhs = spectrum_to_xyz(0.3 * a + 0.7 * b)
    rhs = 0.3 * spectrum_to_xyz(a) + 0.7 * spectrum_to_xyz(b)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_red_biased_spectrum_is_red():
    reflectance = np.where(GRID.wavelengths > 600.0, 0.9, 0.05)
    rgb = xyz_to_linear_rgb(spectrum_to_xyz(reflectance))
    assert rgb[0] > rgb[1] and rgb[0] > rgb[2]


def test_rgb_matrix_is_close_to_canonical_srgb():
    # oracle: the canonical D65 sRGB matrix; the grid-integrated white
    # shifts entries only slightly.
    canonical = np.array([[3.2406, -1.5372, -0.4986],
                          [-0.9689, 1.8758, 0.0415],
                          [0.0557, -0.2040, 1.0570]])
    np.testing.assert_allclose(rgb_matrix(), canonical, atol=0.02)


def test_out_of_gamut_is_clamped_and_reported():
    xyz = np.array([0.05, 0.3, 0.02])  # hypersaturated green
    rgb, clip = xyz_to_linear_rgb(xyz, with_clip=True)
    assert np.all(rgb >= 0.0) and np.all(rgb <= 1.0)
    assert clip > colorimetry.CLIP_REPORT_THRESHOLD


def test_spectrum_shape_validation():
    with pytest.raises(DomainError):
        spectrum_to_xyz(np.ones(GRID.count - 1))


def test_illuminant_validation():
    with pytest.raises(DomainError):
        Illuminant("bad", -np.ones(GRID.count))
    with pytest.raises(DomainError):
        Illuminant("bad", np.ones(GRID.count - 1))


def test_illuminant_from_file(tmp_path):
    path = tmp_path / "flat.csv"
    rows = np.column_stack([GRID.wavelengths, np.ones(GRID.count)])
    np.savetxt(path, rows, delimiter=",", header="wavelength_nm,power",
               comments="# ")
    ill = illuminant_from_file(path)
    np.testing.assert_allclose(ill.power, 1.0)
    # Equal-energy white still maps the unit reflector to (1,1,1).
    rgb = xyz_to_linear_rgb(spectrum_to_xyz(np.ones(GRID.count), ill), ill)
    np.testing.assert_allclose(rgb, 1.0, atol=1e-9)


def test_illuminant_file_off_grid_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    rows = np.column_stack([GRID.wavelengths + 5.0, np.ones(GRID.count)])
    np.savetxt(path, rows, delimiter=",")
    with pytest.raises(DomainError):
        illuminant_from_file(path)


def test_srgb_transfer_round_trip():
    values = np.linspace(0.0, 1.0, 257)
    np.testing.assert_allclose(srgb_decode(srgb_encode(values)), values,
                               atol=1e-12)


def test_srgb_anchor_values():
    # oracle: 1.055 * 0.5^(1/2.4) - 0.055 = 0.735357.
    assert srgb_encode(0.5) == pytest.approx(0.735357, abs=1e-6)
    assert srgb_encode(0.0) == 0.0
    assert srgb_encode(1.0) == pytest.approx(1.0, abs=1e-12)
    # oracle: linear segment below the knee, 12.92 * 0.001.
    assert srgb_encode(0.001) == pytest.approx(0.01292, rel=1e-9)


def test_albedo_rgb_pipeline(fast_cfg):
    from dermalight.colorimetry import albedo_rgb
    from dermalight.optics import SkinParams

    rgb = albedo_rgb(SkinParams(0.05, 0.03, 120.0, 0.7, 0.4), fast_cfg)
    assert rgb.shape == (3,)
    assert np.all(rgb >= 0.0) and np.all(rgb <= 1.0)
    # Skin reflects red better than blue.
    assert rgb[0] > rgb[2]
