import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import eval_laguerre

from fockscope.metrology import (
    FitError,
    GaussianFit,
    Readout,
    SenseSweep,
    analyze,
    cfi_curve,
    coherent_benchmark,
    coherent_circuit,
    fit_gaussian_offset,
    fock_probe_cfi_limit,
    fock_probe_survival,
    gain_db,
    scaling_fit,
    sense_sweep,
    sensitivity_and_gain,
)


# -- fit ----------------------------------------------------------------------

def test_fit_recovers_exact_gaussian():
    beta = np.linspace(0, 0.2, 41)
    p = 0.9 * np.exp(-beta ** 2 / (2 * 0.05 ** 2)) + 0.05
    fit = fit_gaussian_offset(beta, p)
    assert fit.converged
    assert abs(fit.A - 0.9) < 1e-6 and abs(fit.sigma - 0.05) < 1e-6 and abs(fit.C - 0.05) < 1e-6


def test_fit_coherent_law():
    beta = np.linspace(0, 3, 41)
    fit = fit_gaussian_offset(beta, np.exp(-beta ** 2))
    assert abs(fit.sigma - 1 / math.sqrt(2)) < 1e-3
    assert abs(fit.A - 1) < 1e-6 and abs(fit.C) < 1e-6


def test_fit_noise_stability():
    rng = np.random.default_rng(11)
    beta = np.linspace(0, 0.2, 41)
    clean = 0.9 * np.exp(-beta ** 2 / (2 * 0.05 ** 2)) + 0.05
    for _ in range(20):
        fit = fit_gaussian_offset(beta, clean + 0.01 * rng.standard_normal(beta.size))
        assert abs(fit.A / 0.9 - 1) < 0.05
        assert abs(fit.sigma / 0.05 - 1) < 0.05
        assert abs(fit.C - 0.05) < 0.05 * 0.9


def test_fit_rejects_degenerate_input():
    with pytest.raises(ValueError):
        fit_gaussian_offset([0, 0.1, 0.2, 0.3], [1, 0.8, 0.5, 0.2])
    with pytest.raises(ValueError):
        fit_gaussian_offset(np.linspace(0, 1, 10), np.full(10, 0.3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), offset=st.floats(-0.05, 0.05))
def test_fit_stays_a_probability(seed, offset):
    rng = np.random.default_rng(seed)
    beta = np.linspace(0, 0.3, 21)
    p = np.clip(0.9 * np.exp(-beta ** 2 / 0.005) + offset + 0.03 * rng.standard_normal(21), 0, 1)
    fit = fit_gaussian_offset(beta, p)
    assert fit.A >= 0 and fit.C >= 0 and fit.A + fit.C <= 1 + 1e-12
    assert np.all(np.isfinite(cfi_curve(fit, beta[1:]).cfi))


def test_fit_error_is_runtime_error():
    assert issubclass(FitError, RuntimeError)


# -- Fisher information -------------------------------------------------------

def test_coherent_cfi_limit_is_four():
    sweep = coherent_benchmark()
    assert abs(sweep.icmax - 4) / 4 < 0.01
    assert abs(sweep.gain_db) < 0.1


def test_coherent_sweep_matches_analytic_law():
    beta = np.linspace(0, 2, 21)
    sweep = sense_sweep(coherent_circuit(100), beta)
    assert np.max(np.abs(sweep.p0 - np.exp(-beta ** 2))) < 1e-10


@settings(max_examples=20, deadline=None)
@given(top=st.floats(0.5, 4.0), points=st.integers(7, 80), nbar=st.sampled_from([20.0, 100.0]))
def test_sql_floor_on_any_grid(top, points, nbar):
    beta = np.linspace(0, top, points)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sweep = analyze(sense_sweep(coherent_circuit(nbar), beta))
    assert sweep.icmax <= 4 * (1 + 1e-2)


def test_coherent_optimum_with_readout_error():
    # symmetric misassignment of a few percent moves the coherent optimum off zero
    sweep = coherent_benchmark(readout=Readout(0.045, 0.045))
    assert abs(sweep.beta_opt - 0.515) < 0.1
    assert sweep.icmax < 4


def test_fock_probe_survival_oracle():
    beta = np.array([0.1, 0.4, 0.9])
    for n in (0, 1, 4):
        expected = np.exp(-beta ** 2) * eval_laguerre(n, beta ** 2) ** 2
        assert np.max(np.abs(fock_probe_survival(n, beta) - expected)) < 1e-10


@pytest.mark.parametrize("n", [1, 2, 3])
def test_fock_probe_cfi_limit(n):
    assert abs(fock_probe_cfi_limit(n) / (4 * (2 * n + 1)) - 1) < 0.02


def test_heisenberg_reference_exponent():
    n = np.arange(5, 21)
    fit = scaling_fit(n, 1 / np.sqrt(4 * (2 * n + 1)))
    assert abs(fit.exponent + 0.5) < 0.05


def test_cfi_excludes_boundary_points_with_warning():
    fit = GaussianFit(1.0, 0.5, 0.0)
    with pytest.warns(RuntimeWarning):
        curve = cfi_curve(fit, np.linspace(0, 1, 11))
    assert np.isnan(curve.cfi[0])
    assert np.all(curve.cfi[1:] >= 0)


def test_finite_difference_matches_model():
    beta = np.linspace(0, 0.2, 201)
    p = 0.85 * np.exp(-beta ** 2 / (2 * 0.04 ** 2)) + 0.05
    model = cfi_curve(GaussianFit(0.85, 0.04, 0.05), beta)
    raw = cfi_curve(GaussianFit(0.85, 0.04, 0.05), beta, p, mode="finite_difference")
    inner = slice(5, -5)
    assert np.nanmax(np.abs(raw.cfi[inner] / model.cfi[inner] - 1)) < 0.05


def test_cfi_symmetric_in_beta():
    fit = GaussianFit(0.85, 0.04, 0.05)
    b = np.linspace(0.001, 0.15, 30)
    assert np.allclose(fit.cfi(b), fit.cfi(-b), rtol=0, atol=1e-12)


# -- sensitivity --------------------------------------------------------------

def test_sensitivity_reference_points():
    assert sensitivity_and_gain(4) == (0.5, 0.0)
    delta, _ = sensitivity_and_gain(322)
    assert abs(delta - 0.0557) < 1e-4
    assert abs(gain_db(0.0557) - 19.06) < 0.01
    with pytest.raises(ValueError):
        sensitivity_and_gain(0)


@pytest.mark.parametrize("r", [1, 10, 80.5])
def test_gain_formula_consistency(r):
    assert abs(gain_db(0.5 / math.sqrt(r)) - 10 * math.log10(r)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(icmax=st.floats(1e-3, 1e6))
def test_cramer_rao_identity(icmax):
    delta, gain = sensitivity_and_gain(icmax)
    assert abs(delta * math.sqrt(icmax) - 1) < 1e-12
    assert abs(gain - 10 * math.log10((0.5 / delta) ** 2)) < 1e-9


# -- sweeps -------------------------------------------------------------------

def test_sweep_determinism_and_shots():
    beta = np.linspace(0, 2, 11)
    a = sense_sweep(coherent_circuit(50), beta)
    b = sense_sweep(coherent_circuit(50), beta)
    assert np.array_equal(a.p0, b.p0)
    s1 = sense_sweep(coherent_circuit(50), beta, shots=500, seed=4)
    s2 = sense_sweep(coherent_circuit(50), beta, shots=500, seed=4)
    assert np.array_equal(s1.p0, s2.p0)
    assert np.all((s1.p0 >= 0) & (s1.p0 <= 1))
    assert np.max(np.abs(s1.p0 - a.p0)) < 5 * np.sqrt(0.25 / 500)
    with pytest.raises(ValueError):
        sense_sweep(coherent_circuit(50), beta, shots=0)


def test_sweep_fields_consistent():
    sweep = coherent_benchmark()
    assert isinstance(sweep, SenseSweep)
    assert sweep.delta_beta * math.sqrt(sweep.icmax) == pytest.approx(1, abs=1e-15)


# -- scaling ------------------------------------------------------------------

def test_scaling_exact_power_law():
    n = np.array([50, 100, 200, 350, 500])
    fit = scaling_fit(n, 3.0 * n ** -0.5)
    assert abs(fit.exponent + 0.5) < 1e-10
    assert fit.r_squared == pytest.approx(1.0)


def test_scaling_rejects_bad_input():
    with pytest.raises(ValueError):
        scaling_fit([1, 2], [1, 1])
    with pytest.raises(ValueError):
        scaling_fit([1, 2, 3], [1, -1, 1])
