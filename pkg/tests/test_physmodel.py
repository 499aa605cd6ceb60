import numpy as np
import pytest
from hypothesis import given, strategies as st

from qdforecast.physmodel import (SiteExcitonModel, SpectralDensity,
                                  discretize_bath, eval_spectral_density,
                                  model_from_dict, model_preset)


@pytest.fixture
def debye():
    return SpectralDensity(reorganization_energy=64.0, characteristic_frequency=200.0)


class TestSpectralDensity:
    def test_zero_at_origin(self, debye):
        assert eval_spectral_density(debye, 0.0) == 0.0

    def test_peak_value_equals_lambda(self, debye):
        # J(omega_c) = lambda by algebra
        assert eval_spectral_density(debye, 200.0) == pytest.approx(64.0)

    def test_at_twice_omega_c(self, debye):
        assert eval_spectral_density(debye, 400.0) == pytest.approx(51.2)

    def test_negative_frequency_rejected(self, debye):
        with pytest.raises(ValueError):
            eval_spectral_density(debye, -1.0)

    def test_nonnegative_and_peak_at_omega_c(self, debye):
        grid = np.linspace(0.0, 2000.0, 4001)
        j = eval_spectral_density(debye, grid)
        assert np.all(j >= 0)
        assert grid[np.argmax(j)] == pytest.approx(200.0, abs=0.5)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            SpectralDensity(reorganization_energy=-1.0, characteristic_frequency=200.0)


class TestDiscretization:
    def test_mode_count_paper_grid(self):
        bath = discretize_bath(model_preset("I"))
        assert len(bath.omega_cm) == 100
        assert len(bath.kappa_cm) == 100

    def test_frequencies_are_grid_multiples(self):
        bath = discretize_bath(model_preset("I"))
        assert np.allclose(bath.omega_cm, 12.0 * np.arange(1, 101))
        assert np.all(bath.omega_cm > 0)

    def test_zero_coupling_for_zero_lambda(self):
        m = SiteExcitonModel(delta_e_ev=0.0, v12_ev=0.0124,
                             bath=SpectralDensity(0.0, 200.0))
        bath = discretize_bath(m)
        assert np.all(bath.kappa_cm == 0.0)

    def test_kappa_at_peak(self):
        # J(omega_c) = lambda, so kappa there is sqrt((2/pi) lambda d_omega)
        expected = np.sqrt((2 / np.pi) * 64.0 * 12.0)
        assert expected == pytest.approx(22.11, abs=0.01)
        # the 12 / cm grid has no point exactly at 200; the nearest (204)
        # carries almost the peak coupling
        bath = discretize_bath(model_preset("I"))
        i = np.argmin(np.abs(bath.omega_cm - 200.0))
        assert bath.kappa_cm[i] == pytest.approx(expected, rel=1e-3)

    def test_deterministic(self):
        a = discretize_bath(model_preset("II"))
        b = discretize_bath(model_preset("II"))
        assert np.array_equal(a.omega_cm, b.omega_cm)
        assert np.array_equal(a.kappa_cm, b.kappa_cm)

    def test_override_mode_count(self):
        bath = discretize_bath(model_preset("I"), n_modes_override=10)
        assert len(bath.omega_cm) == 10

    def test_reorganization_sum_rule(self):
        # discrete reorganization energy sum_j kappa_j^2 / (2 omega_j)
        # approaches the truncated-integral value (2 lam / pi) * arctan(w_max / w_c)
        lam, wc = 64.0, 200.0
        for dw, tol in ((12.0, 0.05), (1.0, 0.005)):
            m = SiteExcitonModel(delta_e_ev=0.0, v12_ev=0.0124,
                                 bath=SpectralDensity(lam, wc),
                                 omega_max_cm=1200.0, delta_omega_cm=dw)
            bath = discretize_bath(m)
            disc = np.sum(bath.kappa_cm**2 / (2.0 * bath.omega_cm))
            target = (2.0 * lam / np.pi) * np.arctan(1200.0 / wc)
            assert abs(disc - target) / target < tol
        # and the truncated value approaches lam itself as w_max grows
        m = SiteExcitonModel(delta_e_ev=0.0, v12_ev=0.0124,
                             bath=SpectralDensity(lam, wc),
                             omega_max_cm=120000.0, delta_omega_cm=1.0)
        bath = discretize_bath(m)
        disc = np.sum(bath.kappa_cm**2 / (2.0 * bath.omega_cm))
        assert abs(disc - lam) / lam < 0.01


class TestPresets:
    def test_model_i(self):
        m = model_preset("I")
        assert m.delta_e_ev == 0.0
        assert m.v12_ev == 0.0124
        assert m.bath.characteristic_frequency == 200.0
        assert m.bath.reorganization_energy == 64.0

    def test_model_iv(self):
        m = model_preset("IV")
        assert m.delta_e_ev == 0.0186
        assert m.bath.reorganization_energy == 225.0

    def test_ii_equals_i_except_lambda(self):
        a, b = model_preset("I"), model_preset("II")
        assert b.delta_e_ev == a.delta_e_ev
        assert b.v12_ev == a.v12_ev
        assert b.bath.characteristic_frequency == a.bath.characteristic_frequency
        assert b.bath.reorganization_energy == 256.0

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            model_preset("V")

    def test_h_system(self):
        h = model_preset("III").h_system()
        assert h.shape == (2, 2)
        assert h[0, 0] - h[1, 1] == pytest.approx(0.0186)
        assert h[0, 1] == h[1, 0] == pytest.approx(0.0124)


class TestConfig:
    def test_from_dict_preset(self):
        m = model_from_dict({"model_id": "III", "delta_omega_cm": 120.0})
        assert m.delta_e_ev == 0.0186
        assert m.delta_omega_cm == 120.0

    def test_from_dict_explicit(self):
        m = model_from_dict({"delta_e_ev": 0.01, "v12_ev": 0.02,
                             "omega_c_cm": 150.0, "lambda_cm": 30.0})
        assert m.bath.characteristic_frequency == 150.0

    def test_missing_field(self):
        with pytest.raises(KeyError):
            model_from_dict({"delta_e_ev": 0.01})

    def test_grid_must_divide(self):
        with pytest.raises(ValueError):
            SiteExcitonModel(delta_e_ev=0.0, v12_ev=0.0124,
                             bath=SpectralDensity(64.0, 200.0),
                             omega_max_cm=1000.0, delta_omega_cm=300.0)


@given(st.floats(min_value=1.0, max_value=500.0),
       st.floats(min_value=50.0, max_value=500.0),
       st.floats(min_value=0.0, max_value=2000.0))
def test_spectral_density_nonnegative_property(lam, wc, w):
    sd = SpectralDensity(reorganization_energy=lam, characteristic_frequency=wc)
    assert eval_spectral_density(sd, w) >= 0.0
