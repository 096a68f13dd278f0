"""Truncated Fock-space states and propagators.

A single bosonic mode is represented by its complex amplitudes over the
photon-number basis ``|0>, |1>, ..., |dim-1>``.  Every generator used here
(displacement, Kerr, detuning and a coherent drive) is tridiagonal in that
basis, so propagators are built from tridiagonal eigendecompositions after a
diagonal phase gauge removes the drive phase.  The decompositions depend only
on a handful of scalars and are cached, which makes repeated displacements and
lens segments cheap even at several hundred levels.

Time is measured in units where the Kerr coefficient of the lens equals one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eig, eigh_tridiagonal, expm
from scipy.special import gammaln

DEFAULT_LEAKAGE_TOL = 1e-8
# intermediate times at which spectral evolution re-checks the top band
LEAKAGE_CHECKPOINTS = 4


class TruncationError(ArithmeticError):
    """Raised when population reaches the top band of the truncated space."""

    def __init__(self, leakage: float, dim: int, time: float | None = None):
        self.leakage = float(leakage)
        self.dim = dim
        self.time = time
        where = "" if time is None else f" at t={time:.6g}"
        super().__init__(
            f"top-band occupation {self.leakage:.3e} exceeds tolerance in dim={dim}{where}"
        )


def truncation_dim(nbar: float) -> int:
    """Default number of levels for states with mean photon number ``nbar``."""
    return int(math.ceil(nbar + 8.0 * math.sqrt(max(nbar, 0.0)) + 20.0))


def top_band(dim: int) -> int:
    return max(1, int(math.ceil(0.05 * dim)))


@dataclass(frozen=True, eq=False)
class FockVector:
    """Immutable pure state of one bosonic mode."""

    amplitudes: np.ndarray
    leakage_tol: float = DEFAULT_LEAKAGE_TOL

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex, copy=True).reshape(-1)
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def leakage(self) -> float:
        """Occupation of the top ``ceil(0.05 dim)`` levels."""
        return float(np.sum(np.abs(self.amplitudes[-top_band(self.dim):]) ** 2))

    def check_leakage(self, time: float | None = None) -> "FockVector":
        leak = self.leakage()
        if leak >= self.leakage_tol:
            raise TruncationError(leak, self.dim, time)
        return self

    def replace(self, amplitudes) -> "FockVector":
        return FockVector(amplitudes, self.leakage_tol)

    def mean_photon(self) -> float:
        p = photon_distribution(self)
        return float(np.dot(np.arange(self.dim), p))

    def photon_variance(self) -> float:
        p = photon_distribution(self)
        n = np.arange(self.dim)
        m = np.dot(n, p)
        return float(np.dot(n * n, p) - m * m)

    def expect_a(self) -> complex:
        """<a>, the phase-space centroid of the state."""
        amps = self.amplitudes
        return complex(np.vdot(amps[:-1], np.sqrt(np.arange(1, self.dim)) * amps[1:]))

    def __repr__(self):
        return f"FockVector(dim={self.dim}, nbar={self.mean_photon():.4g})"


def amplitude(magnitude: float, phase: float = 0.0) -> complex:
    """Complex displacement argument ``magnitude * exp(i phase)``."""
    if magnitude < 0:
        raise ValueError("displacement magnitude must be non-negative")
    return magnitude * complex(math.cos(phase), math.sin(phase))


def vacuum(dim: int, leakage_tol: float = DEFAULT_LEAKAGE_TOL) -> FockVector:
    return fock_state(0, dim, leakage_tol)


def fock_state(n: int, dim: int, leakage_tol: float = DEFAULT_LEAKAGE_TOL) -> FockVector:
    if not 0 <= n < dim:
        raise ValueError(f"Fock level {n} outside [0, {dim})")
    amps = np.zeros(dim, dtype=complex)
    amps[n] = 1.0
    return FockVector(amps, leakage_tol)


def coherent_amplitudes(alpha: complex, dim: int,
                        leakage_tol: float = DEFAULT_LEAKAGE_TOL) -> FockVector:
    """Coherent state amplitudes ``exp(-|a|^2/2) a^n / sqrt(n!)`` in log domain.

    Raises TruncationError when the tail of the Poisson law reaches the top
    band of the truncated space.
    """
    alpha = complex(alpha)
    r = abs(alpha)
    n = np.arange(dim)
    if r == 0.0:
        amps = np.zeros(dim, dtype=complex)
        amps[0] = 1.0
    else:
        log_mag = -0.5 * r * r + n * math.log(r) - 0.5 * gammaln(n + 1.0)
        amps = np.exp(log_mag) * np.exp(1j * math.atan2(alpha.imag, alpha.real) * n)
    return FockVector(amps, leakage_tol).check_leakage()


def overlap(a: FockVector, b: FockVector) -> complex:
    """<a|b>."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} != {b.dim}")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def fidelity(a: FockVector, b: FockVector) -> float:
    return abs(overlap(a, b)) ** 2


def photon_distribution(state: FockVector) -> np.ndarray:
    return np.abs(state.amplitudes) ** 2


def kerr_phase(state: FockVector, theta: float) -> FockVector:
    """Quadratic phase ``exp(-i theta n^2)``.

    Multiples of pi are handled with integer parity so theta = pi is exactly
    the parity operator and theta = 2 pi exactly the identity.
    """
    n = np.arange(state.dim, dtype=np.int64)
    return state.replace(state.amplitudes * _quadratic_phase(n, theta))


def _quadratic_phase(n: np.ndarray, theta: float) -> np.ndarray:
    if theta == 0.0:
        return np.ones(n.shape, dtype=complex)
    turns = theta / (2.0 * math.pi)
    if turns * 2 == round(turns * 2):
        # theta a multiple of pi: exact +-1 phases from the integer n^2
        half = int(round(turns * 2))
        sign = np.where(((n * n) * half) % 2 == 0, 1.0, -1.0)
        return sign.astype(complex)
    # reduce (theta n^2) mod 2 pi without losing precision at large n
    frac = np.mod((n * n).astype(np.float64) * turns, 1.0)
    return np.exp(-2j * math.pi * frac)


@dataclass(frozen=True)
class GeneratorSpec:
    """``H = detuning n + kerr n^2 + drive_amp (a e^{i phase} + a^dag e^{-i phase})``."""

    detuning: float = 0.0
    kerr: float = 0.0
    drive_amp: float = 0.0
    drive_phase: float = 0.0

    def __post_init__(self):
        for name in ("detuning", "kerr", "drive_amp", "drive_phase"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"GeneratorSpec.{name} must be finite")

    def diagonal(self, dim: int) -> np.ndarray:
        n = np.arange(dim, dtype=float)
        return self.detuning * n + self.kerr * n * n

    def offdiagonal(self, dim: int) -> np.ndarray:
        """Magnitudes of the ``(n+1, n)`` elements before the phase gauge."""
        return self.drive_amp * np.sqrt(np.arange(1, dim, dtype=float))

    def matrix(self, dim: int) -> np.ndarray:
        """Dense Hermitian matrix (used by oracles and small-dim integrators)."""
        h = np.diag(self.diagonal(dim)).astype(complex)
        off = self.offdiagonal(dim) * np.exp(-1j * self.drive_phase)
        h += np.diag(off, -1) + np.diag(np.conj(off), 1)
        return h

    @property
    def is_diagonal(self) -> bool:
        return self.drive_amp == 0.0


class SpectralPropagator:
    """``exp(-i H t)`` for a tridiagonal generator via its eigendecomposition.

    ``H = G T G^dag`` where ``G = diag(exp(-i n phase))`` and ``T`` has the
    given (possibly complex) diagonal and real off-diagonal.  A complex
    diagonal makes ``T`` non-Hermitian (effective Hamiltonians with loss);
    it is then decomposed with a general eigensolver.
    """

    def __init__(self, diag: np.ndarray, offdiag: np.ndarray, phase: float = 0.0):
        self.dim = diag.shape[0]
        n = np.arange(self.dim)
        self.gauge = np.exp(-1j * phase * n)
        self.hermitian = not np.iscomplexobj(diag) or not np.any(np.imag(diag))
        if self.hermitian:
            d = np.real(diag).astype(float)
            if self.dim == 1:
                self.evals, self.evecs = d.copy(), np.ones((1, 1))
            else:
                self.evals, self.evecs = eigh_tridiagonal(d, offdiag.astype(float))
            self.inv = self.evecs.T
        else:
            t = np.diag(diag.astype(complex)) + np.diag(offdiag, 1) + np.diag(offdiag, -1)
            self.evals, self.evecs = eig(t)
            self.inv = np.linalg.inv(self.evecs)

    def coefficients(self, amps: np.ndarray) -> np.ndarray:
        return self.inv @ (np.conj(self.gauge) * amps)

    def from_coefficients(self, coeffs: np.ndarray, t: float) -> np.ndarray:
        return self.gauge * (self.evecs @ (np.exp(-1j * self.evals * t) * coeffs))

    def apply(self, amps: np.ndarray, t: float) -> np.ndarray:
        return self.from_coefficients(self.coefficients(amps), t)


@lru_cache(maxsize=16)
def _quadrature_propagator(dim: int) -> SpectralPropagator:
    # eigenbasis of X = a + a^dag, shared by every displacement at this dim
    return SpectralPropagator(np.zeros(dim), np.sqrt(np.arange(1, dim, dtype=float)))


@lru_cache(maxsize=64)
def _generator_propagator(dim: int, detuning: float, kerr: float, drive_amp: float,
                          drive_phase: float, loss_rate: float = 0.0) -> SpectralPropagator:
    gen = GeneratorSpec(detuning, kerr, drive_amp, drive_phase)
    diag = gen.diagonal(dim)
    if loss_rate:
        diag = diag - 0.5j * loss_rate * np.arange(dim)
    return SpectralPropagator(diag, gen.offdiagonal(dim), drive_phase)


def generator_propagator(gen: GeneratorSpec, dim: int, loss_rate: float = 0.0) -> SpectralPropagator:
    """Cached propagator for ``gen`` (optionally with ``-i loss_rate n / 2`` added)."""
    return _generator_propagator(dim, float(gen.detuning), float(gen.kerr),
                                 float(gen.drive_amp), float(gen.drive_phase), float(loss_rate))


def displacement_vector(amps: np.ndarray, alpha: complex) -> np.ndarray:
    """Apply ``D(alpha)`` to a raw amplitude array (no leakage bookkeeping)."""
    r = abs(alpha)
    if r == 0.0:
        return np.array(amps, dtype=complex)
    prop = _quadrature_propagator(amps.shape[0])
    # alpha a^dag - alpha* a = -i r G X G^dag with G = diag(exp(i n (arg alpha + pi/2)))
    gauge = np.exp(1j * (math.atan2(alpha.imag, alpha.real) + 0.5 * math.pi) * np.arange(amps.shape[0]))
    coeffs = prop.inv @ (np.conj(gauge) * amps)
    return gauge * (prop.evecs @ (np.exp(-1j * r * prop.evals) * coeffs))


def displace(state: FockVector, alpha: complex) -> FockVector:
    """``exp(alpha a^dag - alpha* a)`` on the retained subspace."""
    alpha = complex(alpha)
    if alpha == 0:
        return state
    out = state.replace(displacement_vector(state.amplitudes, alpha))
    return out.check_leakage()


def evolve(state: FockVector, gen: GeneratorSpec, t: float, step_ctrl: float = 1e-10,
           method: str = "spectral") -> FockVector:
    """``exp(-i H t) |state>`` for the generator ``gen``.

    ``method="spectral"`` uses the cached tridiagonal eigendecomposition and is
    accurate to roughly machine precision irrespective of ``step_ctrl``;
    ``method="krylov"`` runs short-iterative Lanczos steps whose local error
    estimate is kept below ``step_ctrl``.
    """
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    if step_ctrl <= 0:
        raise ValueError("step_ctrl must be positive")
    if t == 0:
        return state
    if gen.is_diagonal:
        phases = _diagonal_phases(gen, state.dim, t)
        return state.replace(state.amplitudes * phases)
    if method == "spectral":
        prop = generator_propagator(gen, state.dim)
        coeffs = prop.coefficients(state.amplitudes)
        for k in range(1, LEAKAGE_CHECKPOINTS):
            tk = t * k / LEAKAGE_CHECKPOINTS
            state.replace(prop.from_coefficients(coeffs, tk)).check_leakage(tk)
        out = state.replace(prop.from_coefficients(coeffs, t))
        out.check_leakage(t)
        return out
    if method == "krylov":
        return _krylov_evolve(state, gen, t, step_ctrl)
    raise ValueError(f"unknown propagation method {method!r}")


def _diagonal_phases(gen: GeneratorSpec, dim: int, t: float) -> np.ndarray:
    n = np.arange(dim, dtype=np.int64)
    lin = np.mod(n.astype(float) * (gen.detuning * t / (2 * math.pi)), 1.0)
    quad = np.mod((n * n).astype(float) * (gen.kerr * t / (2 * math.pi)), 1.0)
    return np.exp(-2j * math.pi * (lin + quad))


def _apply_tridiagonal(diag, off, phase, v):
    # H v for H_{n+1,n} = off_n e^{-i phase}, H_{n,n+1} = off_n e^{+i phase}
    out = diag * v
    out[1:] += off * np.exp(-1j * phase) * v[:-1]
    out[:-1] += off * np.exp(1j * phase) * v[1:]
    return out


def _krylov_evolve(state: FockVector, gen: GeneratorSpec, t: float, tol: float,
                   max_basis: int = 30) -> FockVector:
    diag = gen.diagonal(state.dim)
    off = gen.offdiagonal(state.dim)
    v = np.array(state.amplitudes, dtype=complex)
    elapsed = 0.0
    h_norm = np.max(np.abs(diag)) + 2.0 * np.max(np.abs(off), initial=0.0)
    dt = min(t, 10.0 / max(h_norm, 1e-300))
    while elapsed < t:
        dt = min(dt, t - elapsed)
        beta0 = np.linalg.norm(v)
        basis = [v / beta0]
        alphas, betas = [], []
        w_prev = None
        breakdown = False
        for j in range(max_basis):
            w = _apply_tridiagonal(diag, off, gen.drive_phase, basis[j])
            a = np.vdot(basis[j], w).real
            w = w - a * basis[j]
            if w_prev is not None:
                w = w - betas[-1] * basis[j - 1]
            # full reorthogonalisation keeps the small basis orthonormal
            for q in basis:
                w = w - np.vdot(q, w) * q
            alphas.append(a)
            b = np.linalg.norm(w)
            if b < 1e-14 * max(h_norm, 1.0):
                breakdown = True
                break
            betas.append(b)
            basis.append(w / b)
            w_prev = w
        m = len(alphas)
        tmat = np.diag(alphas) + np.diag(betas[:m - 1], 1) + np.diag(betas[:m - 1], -1)
        while True:
            small = expm(-1j * dt * tmat)[:, 0]
            err = 0.0 if breakdown else beta0 * betas[m - 1] * abs(small[m - 1])
            if err <= tol * dt / t or dt < 1e-12 * t:
                break
            dt *= 0.5
        v = beta0 * (np.array(basis[:m]).T @ small)
        elapsed += dt
        probe = state.replace(v)
        if probe.leakage() >= state.leakage_tol:
            raise TruncationError(probe.leakage(), state.dim, elapsed)
        if err < 0.1 * tol * dt / t:
            dt *= 1.5
    return state.replace(v)
