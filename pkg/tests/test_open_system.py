import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import poisson

from fockscope.fock import GeneratorSpec, coherent_amplitudes, evolve, fock_state, vacuum
from fockscope.lens import ConfocalCircuit, Displacement, Timed, lens_from_shape
from fockscope.open_system import (
    DensityGuardError,
    LossModel,
    circuit_time_budget,
    lindblad_evolve,
    run_program,
    trajectory_evolve,
)


def master(kappa):
    return LossModel(kappa, method="master_equation")


def traj(kappa, n=200, seed=0):
    return LossModel(kappa, method="trajectories", n_traj=n, seed=seed)


def test_loss_model_validation():
    with pytest.raises(ValueError):
        LossModel(-0.1)
    with pytest.raises(ValueError):
        LossModel(0.1, method="trajectories", n_traj=0)
    with pytest.raises(ValueError):
        LossModel(0.1, method="euler")


# -- master equation ----------------------------------------------------------

def test_fock_decay_master_equation():
    out = lindblad_evolve(fock_state(5, 20), GeneratorSpec(), master(0.1), 1.0)
    assert abs(out.populations[5] - math.exp(-0.5)) < 1e-8


def test_damped_coherent_is_poisson():
    out = lindblad_evolve(coherent_amplitudes(2.0, 40), GeneratorSpec(), master(0.3), 1.5)
    ref = poisson.pmf(np.arange(40), 4.0 * math.exp(-0.45))
    assert np.max(np.abs(out.populations - ref)) < 1e-6


def test_master_equation_closed_limit_matches_unitary():
    gen = GeneratorSpec(detuning=0.3, kerr=0.05, drive_amp=0.7, drive_phase=0.4)
    state = coherent_amplitudes(1.0 + 0.5j, 40)
    out = lindblad_evolve(state, gen, master(0.0), 1.3)
    ref = np.abs(evolve(state, gen, 1.3).amplitudes) ** 2
    assert np.max(np.abs(out.populations - ref)) < 1e-8


def test_master_equation_trace_and_positivity():
    gen = GeneratorSpec(detuning=-0.2, kerr=0.1, drive_amp=0.5)
    out = lindblad_evolve(coherent_amplitudes(1.5, 40), gen, master(0.5), 2.0)
    assert abs(out.populations.sum() - 1) < 1e-6
    assert out.populations.min() > -1e-10


def test_master_equation_density_guard():
    with pytest.raises(DensityGuardError):
        lindblad_evolve(vacuum(600), GeneratorSpec(), master(0.1), 1.0)
    with pytest.raises(ValueError):
        lindblad_evolve(vacuum(10), GeneratorSpec(), traj(0.1), 1.0)


def test_master_equation_against_dense_liouvillian():
    dim, kappa, t = 12, 0.4, 0.8
    gen = GeneratorSpec(detuning=0.1, kerr=0.2, drive_amp=0.6, drive_phase=-0.3)
    state = coherent_amplitudes(0.8, dim)
    h = gen.matrix(dim)
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    eye = np.eye(dim)
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    heff = h - 0.5j * kappa * a.conj().T @ a
    lv = -1j * (np.kron(heff, eye) - np.kron(eye, heff.conj())) + kappa * np.kron(a, a.conj())
    rho0 = np.outer(state.amplitudes, state.amplitudes.conj())
    rho = (expm(lv * t) @ rho0.ravel()).reshape(dim, dim)
    out = lindblad_evolve(state, gen, master(kappa), t)
    assert np.max(np.abs(out.populations - np.real(np.diag(rho)))) < 1e-8


# -- trajectories -------------------------------------------------------------

def test_trajectories_closed_limit_exact():
    gen = GeneratorSpec(detuning=0.3, kerr=0.05, drive_amp=0.7)
    state = coherent_amplitudes(1.0, 40)
    out = trajectory_evolve(state, gen, traj(0.0, n=5), 1.0)
    ref = np.abs(evolve(state, gen, 1.0).amplitudes) ** 2
    assert np.max(np.abs(out.populations - ref)) < 1e-10
    assert np.all(out.stat_error == 0)


def test_trajectories_match_master_equation():
    gen = GeneratorSpec(detuning=0.2, kerr=0.03, drive_amp=0.5, drive_phase=0.3)
    state = coherent_amplitudes(1.0, 60)
    rho = lindblad_evolve(state, gen, master(0.2), 2.0)
    mc = trajectory_evolve(state, gen, traj(0.2, n=2000, seed=1), 2.0)
    assert mc.total_variation(rho) < 3 * mc.aggregate_error()
    assert abs(mc.populations.sum() - 1) < 1e-9


def test_trajectory_fock_decay():
    out = trajectory_evolve(fock_state(10, 40), GeneratorSpec(), traj(0.005, n=500), 10.0)
    tol = max(3 * out.stat_error[10], 1e-12)
    assert abs(out.populations[10] - math.exp(-0.5)) <= tol


def test_jump_count_statistics():
    n, kappa, t = 10, 0.001, 1.0
    out = trajectory_evolve(fock_state(n, 30), GeneratorSpec(), traj(kappa, n=2000, seed=3), t)
    expected = n * (1 - math.exp(-kappa * t))
    assert abs(out.mean_jumps - expected) < 3 * out.jumps_stderr + 1e-12


def test_seed_determinism_and_sensitivity():
    gen = GeneratorSpec(kerr=0.1, drive_amp=0.4)
    state = coherent_amplitudes(1.5, 40)
    a = trajectory_evolve(state, gen, traj(0.3, n=50, seed=7), 1.0)
    b = trajectory_evolve(state, gen, traj(0.3, n=50, seed=7), 1.0)
    c = trajectory_evolve(state, gen, traj(0.3, n=50, seed=8), 1.0)
    assert np.array_equal(a.populations, b.populations)
    assert np.array_equal(a.stat_error, b.stat_error)
    assert not np.array_equal(a.populations, c.populations)


def test_parallel_workers_bit_identical(monkeypatch):
    gen = GeneratorSpec(kerr=0.1, drive_amp=0.4)
    state = coherent_amplitudes(1.5, 40)
    serial = trajectory_evolve(state, gen, traj(0.3, n=40, seed=2), 1.0)
    monkeypatch.setenv("FOCKSCOPE_WORKERS", "4")
    threaded = trajectory_evolve(state, gen, traj(0.3, n=40, seed=2), 1.0)
    assert np.array_equal(serial.populations, threaded.populations)


@settings(max_examples=10, deadline=None)
@given(kappa=st.floats(0.0, 1.0), t=st.floats(0.0, 2.0), seed=st.integers(0, 1000))
def test_trajectory_populations_normalised(kappa, t, seed):
    gen = GeneratorSpec(detuning=0.1, kerr=0.05, drive_amp=0.3)
    out = trajectory_evolve(coherent_amplitudes(1.0, 40), gen, traj(kappa, n=20, seed=seed), t)
    assert abs(out.populations.sum() - 1) < 1e-9
    assert out.populations.min() >= 0


def test_displacements_are_lossless():
    program = [Displacement(1.5), Timed(GeneratorSpec(), 0.0), Displacement(-1.5)]
    out = run_program(vacuum(40), program, traj(5.0, n=10))
    assert abs(out.populations[0] - 1) < 1e-12


# -- time budget --------------------------------------------------------------

def test_budget_zero_without_lenses():
    assert circuit_time_budget(ConfocalCircuit(nbar=100, lens1=None, lens2=None)) == 0


def test_budget_sums_lens_durations():
    lens = lens_from_shape(100, 0.4, 1.0, 0.3)
    circ = ConfocalCircuit.symmetric(100, lens)
    assert circuit_time_budget(circ) > 0
    assert math.isclose(circuit_time_budget(circ), 2 * (lens.theta + lens.drive_time), rel_tol=1e-12)
