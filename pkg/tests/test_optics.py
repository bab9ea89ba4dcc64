"""Unit tests for the chromophore and layer-optics formulas.

Numeric expectations are hand-computed oracles of the closed-form
expressions, evaluated independently of the implementation.
"""

import numpy as np
import pytest

from dermalight import optics
from dermalight.errors import DataError, DomainError, GridError
from dermalight.optics import (GRID, ScatteringFit, SkinParams, anisotropy,
                               baseline_absorption, chromophore_absorption,
                               chromophores, dermis_absorption,
                               epidermis_absorption, layer_optics,
                               melanin_absorption, reduced_scattering)


def test_grid_basics():
    assert GRID.count == 41
    assert GRID.wavelengths[0] == 380.0
    assert GRID.wavelengths[-1] == 780.0
    assert GRID.index_of(550.0) == 17
    with pytest.raises(GridError):
        GRID.index_of(555.0)
    with pytest.raises(GridError):
        GRID.index_of(370.0)


def test_grid_validation():
    with pytest.raises(DomainError):
        optics.WavelengthGrid(380.0, 783.0, 10.0)


def test_melanin_power_laws():
    # oracle: 6.6e11 * 380^-3.33 = 1693.81 cm^-1
    assert melanin_absorption("eumelanin", 380.0) == pytest.approx(
        6.6e11 * 380.0 ** -3.33, rel=1e-12)
    assert melanin_absorption("eumelanin", 380.0) == pytest.approx(1693.81, rel=1e-4)
    # oracle: 2.9e15 * 550^-4.75 = 279.046 cm^-1
    assert melanin_absorption("pheomelanin", 550.0) == pytest.approx(279.046, rel=1e-3)
    with pytest.raises(DomainError):
        melanin_absorption("neuromelanin", 550.0)
    with pytest.raises(DomainError):
        melanin_absorption("eumelanin", -1.0)


def test_baseline_absorption():
    # oracle: 7.84e8 * 500^-3.255 = 1.28579 cm^-1
    assert baseline_absorption(500.0) == pytest.approx(1.28579, rel=1e-4)
    vals = baseline_absorption(GRID.wavelengths)
    assert np.all(np.diff(vals) < 0)  # strictly decreasing power law


def test_reduced_scattering_reference_point():
    fit = ScatteringFit()
    # At the reference wavelength both terms are 1, so mu_s' = a exactly.
    assert reduced_scattering(fit, 500.0) == 36.4
    # oracle: 36.4 * (0.48*(380/500)^-4 + 0.52*(380/500)^-0.22) = 72.53...
    x = 380.0 / 500.0
    expected = 36.4 * (0.48 * x ** -4 + 0.52 * x ** -0.22)
    assert reduced_scattering(fit, 380.0) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(72.53, rel=1e-3)


def test_anisotropy_linear_fit():
    assert anisotropy(380.0) == pytest.approx(0.62 + 0.00029 * 380.0, rel=1e-12)
    assert anisotropy(380.0) == pytest.approx(0.7302)
    assert anisotropy(780.0) == pytest.approx(0.8462)


def test_chromophore_absorption_formula():
    # oracle: 2.303 * 150 * eps(540)/64500 with eps table value 53236.
    hbo2 = chromophores()["hbO2"]
    expected = 2.303 * 150.0 * 53236.0 / 64500.0
    assert chromophore_absorption(hbo2, 540.0) == pytest.approx(expected, rel=1e-12)


def test_oxyhaemoglobin_double_peak():
    # The Q band must peak at 540 and 580 nm with a valley at 560 nm;
    # this shape produces the characteristic double reflectance dip.
    eps = chromophores()["hbO2"].extinction
    i540, i560, i580 = (GRID.index_of(l) for l in (540.0, 560.0, 580.0))
    assert eps[i540] > eps[i560] < eps[i580]
    # Deoxygenated haemoglobin has a single broad peak near 555 nm instead.
    eps_hb = chromophores()["hb"].extinction
    assert eps_hb[i560] > eps_hb[i540] and eps_hb[i560] > eps_hb[i580]


def test_epidermis_absorption_assembly():
    p = SkinParams(0.1, 0.05, 100.0, 0.7, 0.5)
    lam = 540.0
    melanin = (0.7 * melanin_absorption("eumelanin", lam)
               + 0.3 * melanin_absorption("pheomelanin", lam))
    carotene = 2.303 * 2.1e-4 * chromophores()[
        "beta_carotene_epidermis"].extinction[GRID.index_of(lam)] / 536.8726
    expected = 0.1 * melanin + 0.9 * (carotene + baseline_absorption(lam))
    assert epidermis_absorption(p, lam) == pytest.approx(expected, rel=1e-12)


def test_dermis_absorption_assembly():
    p = SkinParams(0.1, 0.05, 100.0, 0.7, 0.25)
    lam = 560.0
    idx = GRID.index_of(lam)
    ch = chromophores()
    blood = (0.25 * 2.303 * 150.0 * ch["hb"].extinction[idx] / 64500.0
             + 0.75 * 2.303 * 150.0 * ch["hbO2"].extinction[idx] / 64500.0
             + 2.303 * 0.05 * ch["bilirubin"].extinction[idx] / 584.66
             + 2.303 * 7e-5 * ch["beta_carotene_dermis"].extinction[idx]
             / 536.8726)
    expected = 0.05 * blood + 0.95 * baseline_absorption(lam)
    assert dermis_absorption(p, lam) == pytest.approx(expected, rel=1e-12)


def test_absorption_increases_with_chromophore_fractions():
    lean = SkinParams(0.01, 0.01, 100.0, 0.5, 0.5)
    rich = SkinParams(0.30, 0.20, 100.0, 0.5, 0.5)
    assert epidermis_absorption(rich, 540.0) > epidermis_absorption(lean, 540.0)
    assert dermis_absorption(rich, 540.0) > dermis_absorption(lean, 540.0)


def test_layer_optics_assembly():
    p = SkinParams(0.05, 0.03, 120.0, 0.8, 0.4)
    epidermis, dermis = layer_optics(p)
    g = anisotropy(GRID.wavelengths)
    expected_mu_s = reduced_scattering(ScatteringFit(), GRID.wavelengths) / (1.0 - g)
    np.testing.assert_allclose(epidermis.mu_s, expected_mu_s, rtol=1e-12)
    np.testing.assert_allclose(dermis.mu_s, expected_mu_s, rtol=1e-12)
    np.testing.assert_allclose(epidermis.g, g, rtol=1e-12)
    assert epidermis.thickness_um == 120.0
    assert dermis.thickness_um is None
    assert epidermis.n == 1.4


def test_skin_params_array_round_trip():
    p = SkinParams(0.05, 0.03, 120.0, 0.8, 0.4)
    assert SkinParams.from_array(p.as_array()) == p
    with pytest.raises(DomainError):
        SkinParams.from_array(np.zeros(4))


def test_skin_params_range_validation():
    assert SkinParams(0.001, 0.001, 10.0, 0.001, 0.001).in_ranges()
    assert SkinParams(1.0, 1.0, 250.0, 1.0, 1.0).in_ranges()
    with pytest.raises(DomainError):
        SkinParams(0.0005, 0.1, 100.0, 0.5, 0.5).validate()
    with pytest.raises(DomainError):
        SkinParams(0.1, 0.1, 251.0, 0.5, 0.5).validate()


def test_layer_optics_invariants():
    good = np.full(GRID.count, 1.0)
    with pytest.raises(DomainError):
        optics.LayerOptics(mu_a=-good, mu_s=good, g=0.7 * good)
    with pytest.raises(DomainError):
        optics.LayerOptics(mu_a=good, mu_s=0.0 * good, g=0.7 * good)
    with pytest.raises(DomainError):
        optics.LayerOptics(mu_a=good, mu_s=good, g=1.0 * good)


def test_scattering_fit_validation():
    with pytest.raises(DomainError):
        ScatteringFit(a=-1.0)
    with pytest.raises(DomainError):
        ScatteringFit(f_ray=1.5)


def test_load_table_rejects_bad_shape(tmp_path):
    with pytest.raises(DataError):
        optics.ChromophoreSpec("broken", 1.0, 1.0, np.ones(GRID.count - 1))
    with pytest.raises(DataError):
        optics.ChromophoreSpec("negative", 1.0, 1.0, -np.ones(GRID.count))
