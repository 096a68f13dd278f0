"""Fock-space convex lenses and the confocal (4f) circuit.

A lens is a quadratic phase ``exp(-i theta n^2)`` followed by a short drive.
Near a large amplitude the quadratic phase tilts the phase of each Fock
component in proportion to its distance from the mean photon number, and a
drive tangential to the state then converts that tilt back into a photon
number shift.  When the two balance, the whole number distribution converges
onto the mean: an N-focused state.  The second lens of the confocal circuit
runs the same segments in mirrored order (drive, then quadratic phase) and
re-collimates the state so that a final displacement returns it close to the
vacuum.

Lenses are described internally by four dimensionless shape coordinates that
vary slowly with the mean photon number ``nbar``:

``strength``        ``2 theta sqrt(nbar)``, the phase tilt over one coherent width
``shift``           ``drive_amp * drive_time``, the drive displacement magnitude
``drive_fraction``  ``drive_time / theta``
``phase_offset``    drive phase relative to the tangential direction
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import gammaln

from .analysis import DistStats, dist_stats
from .fock import (
    FockVector,
    GeneratorSpec,
    coherent_amplitudes,
    displace,
    displacement_vector,
    evolve,
    generator_propagator,
    kerr_phase,
    truncation_dim,
    vacuum,
)

MIN_DESIGN_NBAR = 10.0


class LensDesignWarning(RuntimeWarning):
    """The lens optimiser stopped before meeting its tolerances."""


@dataclass(frozen=True)
class LensParams:
    """One lens: quadratic phase ``theta`` then a drive segment.

    ``detuning`` is the drive-frame detuning during the drive segment; with the
    Kerr term active a detuning of ``-2 nbar`` keeps the drive resonant with
    the focal photon number.
    """

    theta: float
    drive_amp: float
    drive_time: float
    drive_phase: float
    kerr_during_drive: bool = True
    detuning: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.theta < 2.0 * math.pi:
            raise ValueError(f"lens theta must lie in (0, 2pi), got {self.theta}")
        if not self.drive_time > 0.0:
            raise ValueError("lens drive_time must be positive")
        if self.drive_amp < 0.0:
            raise ValueError("lens drive_amp must be non-negative")

    def drive_generator(self) -> GeneratorSpec:
        return GeneratorSpec(
            detuning=self.detuning,
            kerr=1.0 if self.kerr_during_drive else 0.0,
            drive_amp=self.drive_amp,
            drive_phase=self.drive_phase,
        )

    @property
    def duration(self) -> float:
        # quadratic phase accumulates at unit Kerr rate
        return self.theta + self.drive_time


def lens_from_shape(nbar: float, strength: float, shift: float, drive_fraction: float,
                    phase_offset: float = 0.0, kerr_during_drive: bool = True) -> LensParams:
    """Build lens parameters for ``nbar`` from dimensionless shape coordinates."""
    theta = strength / (2.0 * math.sqrt(nbar))
    drive_time = drive_fraction * theta
    # the quadratic phase rotates the state by -theta (2 nbar + 1); the drive
    # moves it by -i eps t exp(-i phi), so phi = theta (2 nbar + 1) + pi is tangential
    phase = math.remainder(theta * (2.0 * nbar + 1.0) + math.pi + phase_offset, 2.0 * math.pi)
    return LensParams(
        theta=theta,
        drive_amp=shift / drive_time,
        drive_time=drive_time,
        drive_phase=phase,
        kerr_during_drive=kerr_during_drive,
        detuning=-2.0 * nbar if kerr_during_drive else 0.0,
    )


# -- circuit programs ---------------------------------------------------------

@dataclass(frozen=True)
class Displacement:
    """Instantaneous displacement (lossless by construction)."""

    alpha: complex
    label: str = "displace"


@dataclass(frozen=True)
class Timed:
    """Evolution under ``gen`` for ``duration``; loss acts during these."""

    gen: GeneratorSpec
    duration: float
    label: str = "evolve"


Segment = Union[Displacement, Timed]


def lens_segments(lens: LensParams | None, mirrored: bool = False) -> list[Segment]:
    if lens is None:
        return []
    segs: list[Segment] = [
        Timed(GeneratorSpec(kerr=1.0), lens.theta, "kerr"),
        Timed(lens.drive_generator(), lens.drive_time, "drive"),
    ]
    return segs[::-1] if mirrored else segs


def run_segments(state: FockVector, segments: Sequence[Segment]) -> FockVector:
    for seg in segments:
        if isinstance(seg, Displacement):
            state = displace(state, seg.alpha)
        elif seg.gen.is_diagonal and seg.gen.detuning == 0.0:
            state = kerr_phase(state, seg.gen.kerr * seg.duration)
        else:
            state = evolve(state, seg.gen, seg.duration)
    return state


def apply_lens(state: FockVector, lens: LensParams | None, mirrored: bool = False) -> FockVector:
    """Quadratic phase then drive (or drive then phase when ``mirrored``)."""
    return run_segments(state, lens_segments(lens, mirrored))


@dataclass(frozen=True)
class ConfocalCircuit:
    """Opening displacement, lens, probe slot, mirrored lens, closing displacement."""

    nbar: float
    lens1: LensParams | None
    lens2: LensParams | None
    opening: complex = None
    closing: complex = None
    probe_slot_phase: float = 0.0
    dim: int = None
    calibrated: bool = False

    def __post_init__(self):
        if self.opening is None:
            object.__setattr__(self, "opening", complex(math.sqrt(self.nbar)))
        if self.closing is None:
            object.__setattr__(self, "closing", -complex(self.opening))
        if self.dim is None:
            object.__setattr__(self, "dim", truncation_dim(self.nbar))

    @classmethod
    def symmetric(cls, nbar: float, lens: LensParams | None, **kwargs) -> "ConfocalCircuit":
        """Both lenses share the same parameters."""
        return cls(nbar=nbar, lens1=lens, lens2=lens, **kwargs)

    def probe_alpha(self, beta: complex) -> complex:
        return complex(beta) * complex(math.cos(self.probe_slot_phase), math.sin(self.probe_slot_phase))

    def first_half(self) -> list[Segment]:
        return [Displacement(self.opening, "opening"), *lens_segments(self.lens1)]

    def second_half(self) -> list[Segment]:
        return lens_segments(self.lens2, mirrored=True)

    def segments(self, beta: complex = 0.0) -> list[Segment]:
        segs = self.first_half()
        if beta != 0:
            segs.append(Displacement(self.probe_alpha(beta), "probe"))
        segs += self.second_half()
        segs.append(Displacement(self.closing, "closing"))
        return segs

    def focus(self) -> FockVector:
        return _focus_state(self)

    @property
    def forward_dim(self) -> int:
        """Space for the final state: components the closing displacement does
        not return to vacuum are carried up to ``(sqrt(dim) + |closing|)^2``."""
        if self.lens1 is None and self.lens2 is None:
            return self.dim
        return max(self.dim, truncation_dim((math.sqrt(self.dim) + abs(self.closing)) ** 2))


@lru_cache(maxsize=32)
def _focus_state(circuit: ConfocalCircuit) -> FockVector:
    return run_segments(vacuum(circuit.dim), circuit.first_half())


def run_confocal(circuit: ConfocalCircuit, probe: complex = 0.0, loss=None):
    """Execute the circuit with probe displacement ``probe`` at the focus.

    Lossless runs return the final FockVector; with a LossModel the circuit is
    unravelled into trajectories and a MixedDistribution is returned.  The
    closing displacement acts in the padded space of ``circuit.forward_dim``.
    """
    segs = circuit.segments(probe)
    dim = circuit.forward_dim
    if loss is not None and loss.kappa > 0:
        from .open_system import unravel

        ensemble = unravel(vacuum(circuit.dim), segs[:-1], loss)
        return ensemble.distribution(lambda amps: displacement_vector(_pad(amps, dim), circuit.closing))
    state = run_segments(circuit.focus(), segs[len(circuit.first_half()):-1])
    return displace(FockVector(_pad(state.amplitudes, dim)), circuit.closing)


def _pad(amps: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(dim, dtype=complex)
    out[:amps.size] = amps
    return out


class _ReturnProbe:
    """Fast ``P(0 | beta)`` for a fixed lossless circuit."""

    def __init__(self, circuit: ConfocalCircuit):
        self.circuit = circuit
        self.focus = circuit.focus()
        # <0| D(c) = <-c| as a row vector
        self.bra = np.conj(coherent_amplitudes(-circuit.closing, circuit.dim, leakage_tol=1.0).amplitudes)

    def after_second_half(self, beta: complex) -> np.ndarray:
        amps = self.focus.amplitudes
        if beta != 0:
            amps = displacement_vector(amps, self.circuit.probe_alpha(beta))
        return run_segments(self.focus.replace(amps), self.circuit.second_half()).amplitudes

    def __call__(self, beta: complex) -> float:
        return float(abs(np.dot(self.bra, self.after_second_half(beta))) ** 2)


def vacuum_return(circuit: ConfocalCircuit, probe: complex = 0.0) -> float:
    """Lossless final vacuum probability."""
    return _ReturnProbe(circuit)(probe)


def vacuum_probabilities(circuit: ConfocalCircuit, betas) -> np.ndarray:
    probe = _ReturnProbe(circuit)
    return np.array([probe(b) for b in betas])


def best_coherent_overlap(amps: np.ndarray, start: complex | None = None,
                          tol: float = 1e-12, max_iter: int = 500,
                          weights=None) -> tuple[complex, float]:
    """Coherent amplitude ``g`` maximising ``<g|rho|g>`` (local search).

    ``amps`` is one state or a stack of states mixed with ``weights``.
    Stationary points of the Husimi function satisfy
    ``g = <g|a rho|g> / <g|rho|g>``; that fixed point is iterated from ``<a>``
    and polished with Nelder-Mead only if it fails to settle.
    """
    stack = np.atleast_2d(amps)
    w = np.ones(stack.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    dim = stack.shape[1]
    n = np.arange(dim)
    half_log_fact = 0.5 * gammaln(n + 1.0)
    root = np.sqrt(n[1:])
    lowered = np.zeros_like(stack)
    lowered[:, :-1] = root * stack[:, 1:]

    def bra(g):
        r = abs(g)
        if r == 0.0:
            out = np.zeros(dim, dtype=complex)
            out[0] = 1.0
            return out
        return np.exp(-0.5 * r * r + n * math.log(r) - half_log_fact + 1j * math.atan2(g.imag, g.real) * n)

    def q(g):
        return float(np.dot(w, np.abs(stack @ np.conj(bra(g))) ** 2))

    if start is None:
        g = complex(np.dot(w, np.sum(np.conj(stack) * lowered, axis=1)))
    else:
        g = complex(start)
    for _ in range(max_iter):
        b = np.conj(bra(g))
        s = stack @ b
        den = float(np.dot(w, np.abs(s) ** 2))
        if den == 0:
            break
        g_next = complex(np.dot(w, (lowered @ b) * np.conj(s)) / den)
        if abs(g_next - g) < tol * max(1.0, abs(g)):
            return g_next, q(g_next)
        g = g_next

    res = minimize(lambda x: -q(complex(x[0], x[1])), [g.real, g.imag], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 4000})
    return complex(res.x[0], res.x[1]), float(-res.fun)


def calibrate_closure(circuit: ConfocalCircuit, probe_phase: float | str | None = "auto") -> ConfocalCircuit:
    """Set the closing displacement that maximises the vacuum return.

    ``probe_phase="auto"`` also orients the probe slot along the direction in
    which a small probe displacement lowers the return fastest; a float fixes
    it; ``None`` keeps the circuit's current value.
    """
    if circuit.lens1 is None and circuit.lens2 is None:
        closing = -complex(circuit.opening)
    else:
        out = run_segments(circuit.focus(), circuit.second_half()).amplitudes
        gamma, _ = best_coherent_overlap(out)
        closing = -gamma
    calibrated = replace(circuit, closing=closing, calibrated=True)
    if probe_phase == "auto":
        calibrated = replace(calibrated, probe_slot_phase=_steepest_probe_phase(calibrated))
    elif probe_phase is not None:
        calibrated = replace(calibrated, probe_slot_phase=float(probe_phase))
    return calibrated


def _steepest_probe_phase(circuit: ConfocalCircuit) -> float:
    focus = circuit.focus()
    radial = math.atan2(focus.expect_a().imag, focus.expect_a().real)
    beta = 0.5 / math.sqrt(max(circuit.nbar, 1.0))
    probe = _ReturnProbe(replace(circuit, probe_slot_phase=0.0))

    def ret(phi):
        return probe(beta * complex(math.cos(phi), math.sin(phi)))

    res = minimize_scalar(ret, bounds=(radial - 0.5 * math.pi, radial + 0.5 * math.pi),
                          method="bounded", options={"xatol": 1e-5})
    return math.remainder(float(res.x), 2.0 * math.pi)


# -- design -------------------------------------------------------------------

@dataclass(frozen=True)
class FocusReport:
    nbar_measured: float
    sigma: float
    fwhm: float
    peak_pop: float
    compression_db: float

    @classmethod
    def from_state(cls, state: FockVector, nbar: float) -> "FocusReport":
        p = np.abs(state.amplitudes) ** 2
        stats: DistStats = dist_stats(p)
        return cls(
            nbar_measured=stats.mean,
            sigma=stats.sigma,
            fwhm=stats.fwhm,
            peak_pop=float(p[int(round(nbar))]),
            compression_db=stats.compression_db,
        )


@dataclass(frozen=True)
class LensSearch:
    """Optimiser configuration for :func:`design_lens`.

    The objective is the focal population ``P(round(nbar))``; designs whose
    lossless confocal vacuum return falls below ``min_return`` are penalised so
    the same lens can also close the circuit.
    """

    strengths: tuple = tuple(round(0.15 + 0.05 * i, 4) for i in range(13))
    shifts: tuple = tuple(round(0.5 + 0.25 * i, 4) for i in range(15))
    drive_fraction: float = 0.1
    free_drive_fraction: bool = False
    min_return: float = 0.92
    return_penalty: float = 10.0
    kerr_during_drive: bool = True
    n_starts: int = 3
    maxiter: int = 600
    xatol: float = 1e-4
    fatol: float = 1e-8
    jitter: float = 0.01
    seed: int = 0

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class LensDesign:
    nbar: float
    lens: LensParams
    report: FocusReport
    confocal_return: float
    shape: tuple  # (strength, shift, drive_fraction, phase_offset)
    converged: bool
    evaluations: int
    search: LensSearch = field(default_factory=LensSearch)

    def circuit(self, calibrate: bool = True, probe_phase="auto") -> ConfocalCircuit:
        circ = ConfocalCircuit.symmetric(self.nbar, self.lens)
        return calibrate_closure(circ, probe_phase) if calibrate else circ

    def lens_for(self, nbar: float) -> LensParams:
        """Same lens shape rescaled to another mean photon number."""
        return lens_from_shape(nbar, *self.shape, kerr_during_drive=self.lens.kerr_during_drive)


def _evaluate(nbar: int, x, kerr_during_drive: bool, with_return: bool = True):
    strength, shift, fraction, offset = x
    lens = lens_from_shape(nbar, strength, shift, fraction, offset, kerr_during_drive)
    circ = ConfocalCircuit.symmetric(nbar, lens)
    focus = run_segments(vacuum(circ.dim), circ.first_half())
    peak = float(abs(focus.amplitudes[int(round(nbar))]) ** 2)
    ret = math.nan
    if with_return:
        out = run_segments(focus, circ.second_half()).amplitudes
        ret = best_coherent_overlap(out)[1]
    return peak, ret, lens, focus


def design_lens(nbar: float, search: LensSearch | None = None) -> LensDesign:
    """Optimise a lens that focuses a coherent state of mean ``nbar``.

    Coarse grid over (strength, shift) followed by Nelder-Mead refinement of
    (strength, shift, drive_fraction, phase_offset) from the best few grid
    points.  Deterministic for a given ``search`` (including its seed).
    """
    if nbar < MIN_DESIGN_NBAR:
        raise ValueError(f"lens design needs nbar >= {MIN_DESIGN_NBAR:g}, got {nbar}")
    return _design_cached(float(nbar), search or LensSearch())


@lru_cache(maxsize=32)
def _design_cached(nbar: float, search: LensSearch) -> LensDesign:
    evaluations = 0

    def score(x):
        nonlocal evaluations
        evaluations += 1
        try:
            peak, ret, _, _ = _evaluate(nbar, x, search.kerr_during_drive)
        except (ValueError, ArithmeticError):
            return 1.0
        shortfall = max(0.0, search.min_return - ret)
        return -peak + search.return_penalty * shortfall

    grid = []
    for k in search.strengths:
        for d in search.shifts:
            x = (k, d, search.drive_fraction, 0.0)
            grid.append((score(x), x))
    grid.sort(key=lambda item: item[0])

    rng = np.random.default_rng(search.seed)
    bounds = [(0.02, 3.0), (0.05, 10.0), (1e-3, 2.0), (-1.0, 1.0)]
    # optimised coordinates; a fixed drive fraction keeps designs at different
    # nbar in one family so their durations scale together
    free = [0, 1, 2, 3] if search.free_drive_fraction else [0, 1, 3]
    lo = np.array([bounds[i][0] for i in free])
    hi = np.array([bounds[i][1] for i in free])

    def full(y, x0):
        x = list(x0)
        for i, v in zip(free, y):
            x[i] = float(v)
        return tuple(x)

    candidates = []
    converged = True
    for val, x0 in grid[: search.n_starts]:
        start = np.array([x0[i] for i in free], dtype=float)
        noise = search.jitter * rng.standard_normal(4)
        for j, i in enumerate(free):
            start[j] = start[j] + noise[i] if i == 3 else start[j] * (1.0 + noise[i])
        start = np.clip(start, lo, hi)
        res = minimize(lambda y: score(full(y, x0)), start, method="Nelder-Mead",
                       bounds=list(zip(lo, hi)),
                       options={"xatol": search.xatol, "fatol": search.fatol,
                                "maxiter": search.maxiter})
        converged &= bool(res.success)
        best_x, best_f = (full(res.x, x0), res.fun) if res.fun <= val else (x0, val)
        candidates.append((float(best_f), tuple(float(v) for v in best_x)))

    best_f = min(c[0] for c in candidates)
    ties = [c for c in candidates if c[0] <= best_f + 1e-6]
    reports = []
    for f, x in ties:
        peak, ret, lens, focus = _evaluate(nbar, x, search.kerr_during_drive)
        reports.append((FocusReport.from_state(focus, nbar).sigma, x, lens, focus, ret))
    sigma, x, lens, focus, ret = min(reports, key=lambda r: r[0])
    if not converged:
        warnings.warn(f"lens optimisation at nbar={nbar:g} hit maxiter; returning best-so-far",
                      LensDesignWarning, stacklevel=3)
    return LensDesign(
        nbar=nbar,
        lens=lens,
        report=FocusReport.from_state(focus, nbar),
        confocal_return=ret,
        shape=x,
        converged=converged,
        evaluations=evaluations,
        search=search,
    )
