"""Single-photon loss: Lindblad integration and quantum-jump trajectories.

The dissipator has the collapse operator ``sqrt(kappa) a``.  Loss acts only
during timed segments of a circuit program; displacements are treated as
instantaneous.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .fock import FockVector, GeneratorSpec, displacement_vector, generator_propagator

WORKERS_ENV = "FOCKSCOPE_WORKERS"


@dataclass(frozen=True)
class LossModel:
    kappa: float
    method: str = "trajectories"
    n_traj: int = 200
    seed: int = 0
    max_density_dim: int = 512

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")
        if self.method not in ("master_equation", "trajectories"):
            raise ValueError(f"unknown loss method {self.method!r}")
        if self.method == "trajectories" and self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")


@dataclass(frozen=True)
class MixedDistribution:
    populations: np.ndarray
    stat_error: np.ndarray | None = None
    n_traj: int = 0
    mean_jumps: float = 0.0
    jumps_stderr: float = 0.0
    density: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.populations.shape[0]

    def total_variation(self, other) -> float:
        q = other.populations if isinstance(other, MixedDistribution) else np.asarray(other)
        return 0.5 * float(np.sum(np.abs(self.populations - q)))

    def aggregate_error(self) -> float:
        """Noise scale of the total-variation statistic, ``sum(stat_error)/2``.

        Each bin contributes ``|N(0, s)|`` with mean ``s*sqrt(2/pi) < s``.
        """
        if self.stat_error is None:
            return 0.0
        return 0.5 * float(np.sum(self.stat_error))


class DensityGuardError(MemoryError):
    """Density-matrix integration requested above the configured dimension."""


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# -- master equation ----------------------------------------------------------

def lindblad_evolve(state, gen: GeneratorSpec, loss: LossModel, t: float,
                    rtol: float = 1e-10, atol: float = 1e-12) -> MixedDistribution:
    """Integrate ``d rho/dt = -i[H, rho] + kappa (a rho a^dag - {n, rho}/2)``.

    Adaptive DOP853 steps keep the local error below ``rtol``/``atol``.
    ``state`` may be a FockVector or a density matrix.
    """
    if loss.method != "master_equation":
        raise ValueError("lindblad_evolve needs a master_equation loss model")
    if isinstance(state, FockVector):
        rho0 = np.outer(state.amplitudes, np.conj(state.amplitudes))
    else:
        rho0 = np.array(state, dtype=complex)
    dim = rho0.shape[0]
    if dim > loss.max_density_dim:
        raise DensityGuardError(
            f"dim={dim} exceeds the density-matrix guard {loss.max_density_dim}; use trajectories"
        )
    h = gen.matrix(dim)
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1)
    ad = a.T.copy()
    nop = np.arange(dim, dtype=float)
    # H_eff = H - i kappa n / 2 folds the anticommutator into one product
    heff = h - 0.5j * loss.kappa * np.diag(nop)

    def rhs(_, y):
        rho = y.reshape(dim, dim)
        out = -1j * (heff @ rho - rho @ heff.conj().T)
        if loss.kappa:
            out += loss.kappa * (a @ rho @ ad)
        return out.ravel()

    if t > 0:
        sol = solve_ivp(rhs, (0.0, t), rho0.ravel(), method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise ArithmeticError(f"master-equation integration failed: {sol.message}")
        rho = sol.y[:, -1].reshape(dim, dim)
    else:
        rho = rho0
    return MixedDistribution(np.real(np.diag(rho)).copy(), density=rho)


# -- trajectories -------------------------------------------------------------

def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index``; independent of run order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


class _LossySegment:
    """Non-unitary propagation ``exp(-i H_eff tau)`` for one timed segment."""

    def __init__(self, gen: GeneratorSpec, duration: float, kappa: float, dim: int):
        self.duration = duration
        self.diagonal = gen.is_diagonal
        if self.diagonal:
            self.rates = -1j * gen.diagonal(dim) - 0.5 * kappa * np.arange(dim)
        else:
            self.prop = generator_propagator(gen, dim, loss_rate=kappa)

    def start(self, psi):
        return psi if self.diagonal else self.prop.coefficients(psi)

    def at(self, handle, tau):
        if self.diagonal:
            return handle * np.exp(self.rates * tau)
        return self.prop.from_coefficients(handle, tau)


def _run_one(psi0: np.ndarray, program, rng: np.random.Generator | None, first_threshold: float):
    """One trajectory; returns (final state, jumps, squared norm of the final no-jump tail)."""
    psi = psi0.copy()
    dim = psi.shape[0]
    root = np.sqrt(np.arange(1, dim, dtype=float))
    threshold = first_threshold
    norm_acc = 1.0  # squared norm of the unnormalised state since the last jump
    jumps = 0
    for kind, payload in program:
        if kind == "displace":
            psi = displacement_vector(psi, payload)
            continue
        seg: _LossySegment = payload
        remaining = seg.duration
        while remaining > 0:
            handle = seg.start(psi)

            def norm_at(tau):
                return norm_acc * float(np.vdot(v := seg.at(handle, tau), v).real)

            end_norm = norm_at(remaining)
            if end_norm > threshold:
                v = seg.at(handle, remaining)
                psi = v / np.linalg.norm(v)
                norm_acc = end_norm
                break
            tau = brentq(lambda s: norm_at(s) - threshold, 0.0, remaining, xtol=1e-14 * max(remaining, 1.0))
            v = seg.at(handle, tau)
            jumped = np.zeros_like(v)
            jumped[:-1] = root * v[1:]
            psi = jumped / np.linalg.norm(jumped)
            jumps += 1
            norm_acc = 1.0
            threshold = rng.random()
            remaining -= tau
    return psi, jumps, norm_acc


def _compile(segments: Sequence, kappa: float, dim: int):
    from .lens import Displacement

    program = []
    for seg in segments:
        if isinstance(seg, Displacement):
            program.append(("displace", complex(seg.alpha)))
        elif seg.duration > 0:
            program.append(("timed", _LossySegment(seg.gen, seg.duration, kappa, dim)))
    return program


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Final pure states of a jump unravelling with their mixing weights.

    ``quiet`` is the deterministic no-jump branch (probability ``p_quiet``);
    ``states`` are trajectories conditioned on at least one jump.
    """

    quiet: np.ndarray
    p_quiet: float
    states: np.ndarray
    jumps: np.ndarray

    def stack(self) -> tuple[np.ndarray, np.ndarray]:
        """All states with weights summing to one."""
        n = self.states.shape[0]
        if n == 0:
            return self.quiet[None, :], np.ones(1)
        weights = np.full(n + 1, (1.0 - self.p_quiet) / n)
        weights[0] = self.p_quiet
        return np.vstack([self.quiet[None, :], self.states]), weights

    def distribution(self, transform=None) -> MixedDistribution:
        quiet, states = self.quiet, self.states
        if transform is not None:
            quiet = transform(quiet)
            states = np.array([transform(s) for s in states]) if len(states) else states
        quiet_pops = np.abs(quiet) ** 2
        n = states.shape[0]
        if n == 0:
            return MixedDistribution(quiet_pops, np.zeros_like(quiet_pops), 0, 0.0, 0.0)
        pops = np.abs(states) ** 2
        w = 1.0 - self.p_quiet
        mean = self.p_quiet * quiet_pops + w * pops.mean(axis=0)
        err = w * pops.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
        jerr = w * float(self.jumps.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return MixedDistribution(mean, err, n, w * float(self.jumps.mean()), jerr)


def unravel(state: FockVector, segments: Sequence, loss: LossModel) -> TrajectoryEnsemble:
    """Run the quantum-jump unravelling and keep every final state.

    The no-jump branch is deterministic, so it is computed once and weighted
    by its exact probability; the ``n_traj`` sampled trajectories are
    conditioned on at least one jump (first threshold drawn from
    ``U(p_quiet, 1)``).  The estimator is unbiased and carries no variance
    from the no-jump branch.
    """
    program = _compile(segments, loss.kappa, state.dim)
    psi0 = np.array(state.amplitudes)
    quiet, _, p_quiet = _run_one(psi0, program, None, 0.0)
    n = loss.n_traj
    if p_quiet >= 1.0 - 1e-14:
        return TrajectoryEnsemble(quiet, 1.0, np.empty((0, state.dim), complex), np.empty(0))

    def task(index):
        rng = trajectory_rng(loss.seed, index)
        return _run_one(psi0, program, rng, rng.uniform(p_quiet, 1.0))

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, range(n)))
    else:
        results = [task(i) for i in range(n)]
    # gathered in trajectory-index order so results do not depend on scheduling
    states = np.array([r[0] for r in results])
    jumps = np.array([r[1] for r in results], dtype=float)
    return TrajectoryEnsemble(quiet, p_quiet, states, jumps)


def run_program(state: FockVector, segments: Sequence, loss: LossModel) -> MixedDistribution:
    """Average quantum-jump trajectories through a segment program."""
    return unravel(state, segments, loss).distribution()


def trajectory_evolve(state: FockVector, gen: GeneratorSpec, loss: LossModel, t: float) -> MixedDistribution:
    """Quantum-jump unravelling of the single-photon-loss master equation."""
    from .lens import Timed

    if loss.method != "trajectories":
        raise ValueError("trajectory_evolve needs a trajectories loss model")
    return run_program(state, [Timed(gen, t)], loss)


def circuit_time_budget(circuit) -> float:
    """Summed duration of the timed (lossy) segments of a confocal circuit."""
    return float(sum(seg.duration for seg in circuit.segments() if hasattr(seg, "duration")))


def calibrate_for_loss(circuit, loss: LossModel):
    """Re-fit the closing displacement to maximise the lossy vacuum return.

    Loss damps and scatters the returning state, so the lossless closure is
    no longer optimal; this mirrors recalibrating the closing pulse on
    hardware.  The closing step is lossless, so one unravelling up to it is
    reused for the whole search.  The probe-slot orientation is kept.
    """
    from dataclasses import replace

    from .fock import vacuum
    from .lens import best_coherent_overlap

    if loss is None or loss.kappa == 0:
        return circuit
    ensemble = unravel(vacuum(circuit.dim), circuit.segments(0.0)[:-1], loss)
    stack, weights = ensemble.stack()
    gamma, _ = best_coherent_overlap(stack, start=-circuit.closing, weights=weights)
    return replace(circuit, closing=-gamma, calibrated=True)
