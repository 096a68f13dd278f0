import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import poisson

from fockscope.fock import (
    FockVector,
    GeneratorSpec,
    TruncationError,
    amplitude,
    coherent_amplitudes,
    displace,
    evolve,
    fidelity,
    fock_state,
    kerr_phase,
    overlap,
    photon_distribution,
    truncation_dim,
    vacuum,
)


def dense_displacement(alpha, dim):
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    return expm(alpha * a.conj().T - np.conj(alpha) * a)


def random_state(rng, dim, occupied):
    amps = np.zeros(dim, dtype=complex)
    amps[:occupied] = rng.normal(size=occupied) + 1j * rng.normal(size=occupied)
    return FockVector(amps / np.linalg.norm(amps))


# -- coherent_amplitudes ----------------------------------------------------

def test_coherent_zero_is_vacuum():
    state = coherent_amplitudes(0, 8)
    assert np.array_equal(state.amplitudes, np.eye(8)[0])


def test_coherent_mean_100():
    state = coherent_amplitudes(10.0, 200)
    n = np.arange(200)
    assert abs(np.dot(n, photon_distribution(state)) - 100) < 1e-6


def test_coherent_matches_displaced_vacuum_and_dense_oracle():
    alpha = 2.0 * np.exp(0.7j)
    state = coherent_amplitudes(alpha, 40)
    via_displace = displace(vacuum(40), alpha)
    oracle = dense_displacement(alpha, 40)[:, 0]
    assert np.max(np.abs(state.amplitudes - via_displace.amplitudes)) < 1e-9
    assert np.max(np.abs(state.amplitudes - oracle)) < 1e-9


def test_coherent_truncation_reports_leakage():
    with pytest.raises(TruncationError) as err:
        coherent_amplitudes(10.0, 110)
    assert err.value.leakage > 1e-8


def test_coherent_large_mean_no_overflow():
    state = coherent_amplitudes(math.sqrt(500), truncation_dim(500))
    assert abs(state.norm() - 1) < 1e-12
    assert abs(state.mean_photon() - 500) < 1e-6


# -- displace ---------------------------------------------------------------

def test_displace_zero_identity():
    state = coherent_amplitudes(1.5j, 30)
    assert displace(state, 0) is state


def test_displace_vacuum_probability():
    out = displace(vacuum(30), 0.5)
    assert abs(abs(out.amplitudes[0]) ** 2 - math.exp(-0.25)) < 1e-12
    oracle = dense_displacement(0.5, 30)[:, 0]
    assert abs(abs(oracle[0]) ** 2 - math.exp(-0.25)) < 1e-12


def test_displace_500_photons():
    out = displace(vacuum(truncation_dim(500)), math.sqrt(500))
    assert abs(out.mean_photon() - 500) < 1e-4
    assert abs(out.photon_variance() - 500) < 0.1


@settings(max_examples=25, deadline=None)
@given(
    mag=st.floats(0.0, 2.5),
    phase=st.floats(-math.pi, math.pi),
    seed=st.integers(0, 2**31 - 1),
)
def test_displace_matches_dense_oracle(mag, phase, seed):
    dim = 64
    rng = np.random.default_rng(seed)
    state = random_state(rng, dim, 12)
    alpha = amplitude(mag, phase)
    ours = displace(state, alpha)
    ref = dense_displacement(alpha, dim) @ state.amplitudes
    assert np.max(np.abs(ours.amplitudes - ref)) < 1e-8
    assert abs(ours.norm() - 1) < 1e-9


def test_displace_group_inverse():
    rng = np.random.default_rng(3)
    state = random_state(rng, 80, 15)
    alpha = 1.7 - 0.4j
    back = displace(displace(state, alpha), -alpha)
    assert fidelity(back, state) > 1 - 1e-9


def test_displace_operator_norm_against_dense():
    dim, alpha = 48, 0.9 + 1.1j
    cols = np.stack([displace(fock_state(k, dim, leakage_tol=1.0), alpha).amplitudes
                     for k in range(dim)], axis=1)
    assert np.linalg.norm(cols - dense_displacement(alpha, dim), 2) < 1e-9


# -- kerr_phase -------------------------------------------------------------

def test_kerr_zero_and_two_pi_identity():
    state = coherent_amplitudes(3.0, 60)
    assert np.array_equal(kerr_phase(state, 0.0).amplitudes, state.amplitudes)
    assert np.array_equal(kerr_phase(state, 2 * math.pi).amplitudes, state.amplitudes)


def test_kerr_pi_is_parity():
    plus = coherent_amplitudes(2.0, 40)
    minus = coherent_amplitudes(-2.0, 40)
    assert fidelity(kerr_phase(plus, math.pi), minus) > 1 - 1e-12
    twice = kerr_phase(kerr_phase(plus, math.pi), math.pi)
    assert np.max(np.abs(twice.amplitudes - plus.amplitudes)) < 1e-12


def test_kerr_conserves_mean_photon():
    state = coherent_amplitudes(4.0, 80)
    assert abs(kerr_phase(state, 0.37).mean_photon() - state.mean_photon()) < 1e-12


# -- evolve -----------------------------------------------------------------

def test_evolve_diagonal_generator():
    state = coherent_amplitudes(2.0 + 1j, 50)
    gen = GeneratorSpec(detuning=0.3, kerr=0.11)
    out = evolve(state, gen, 1.7)
    n = np.arange(50)
    expected = state.amplitudes * np.exp(-1j * (0.3 * n + 0.11 * n ** 2) * 1.7)
    assert np.max(np.abs(out.amplitudes - expected)) < 1e-12
    assert abs(out.mean_photon() - state.mean_photon()) < 1e-12


def test_evolve_pure_drive_is_displacement():
    eps, t = 0.8, 2.5
    out = evolve(vacuum(60), GeneratorSpec(drive_amp=eps), t)
    target = coherent_amplitudes(-1j * eps * t, 60)
    assert fidelity(out, target) >= 1 - 1e-8


@pytest.mark.parametrize("method", ["spectral", "krylov"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_evolve_matches_dense_oracle(method, seed):
    rng = np.random.default_rng(seed)
    dim = 64
    gen = GeneratorSpec(
        detuning=rng.uniform(-1, 1),
        kerr=rng.uniform(0, 0.05),
        drive_amp=rng.uniform(0.1, 1.0),
        drive_phase=rng.uniform(-math.pi, math.pi),
    )
    state = random_state(rng, dim, 8)
    ours = evolve(state, gen, 1.0, step_ctrl=1e-10, method=method)
    ref = expm(-1j * gen.matrix(dim)) @ state.amplitudes
    assert np.linalg.norm(ours.amplitudes - ref) < 1e-8
    assert abs(ours.norm() - 1) < 1e-9


def test_evolve_truncation_has_timestamp():
    with pytest.raises(TruncationError) as err:
        evolve(vacuum(30), GeneratorSpec(drive_amp=1.0), 10.0)
    assert err.value.time is not None and 0 < err.value.time <= 10.0


def test_evolve_rejects_bad_arguments():
    with pytest.raises(ValueError):
        evolve(vacuum(10), GeneratorSpec(), -1.0)
    with pytest.raises(ValueError):
        evolve(vacuum(10), GeneratorSpec(), 1.0, step_ctrl=0.0)
    with pytest.raises(ValueError):
        GeneratorSpec(kerr=float("nan"))


# -- overlap / photon_distribution -----------------------------------------

def test_overlap_values():
    x = coherent_amplitudes(1.2 - 0.3j, 40)
    assert abs(overlap(x, x) - 1) < 1e-12
    assert abs(overlap(vacuum(40), coherent_amplitudes(0.5, 40)) - math.exp(-0.125)) < 1e-12
    val = overlap(coherent_amplitudes(2.0, 40), coherent_amplitudes(-2.0, 40))
    assert abs(val - math.exp(-8)) < 1e-12


def test_overlap_dimension_mismatch():
    with pytest.raises(ValueError):
        overlap(vacuum(4), vacuum(5))


def test_photon_distribution():
    assert np.array_equal(photon_distribution(vacuum(5)), [1, 0, 0, 0, 0])
    p = photon_distribution(coherent_amplitudes(10.0, 200))
    assert np.max(np.abs(p - poisson.pmf(np.arange(200), 100))) < 1e-9
    assert abs(p.sum() - 1) < 1e-9


def test_state_is_immutable():
    state = vacuum(4)
    with pytest.raises(ValueError):
        state.amplitudes[0] = 0
