"""Displacement sensing with the confocal circuit.

A sweep records the vacuum return ``P(0|beta)``; a Gaussian-plus-offset fit
gives the classical Fisher information of the vacuum/not-vacuum readout, and
the Cramer-Rao bound converts its peak into a sensitivity and a gain over the
coherent-state limit ``delta_beta = 0.5``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, curve_fit, minimize_scalar

from .fock import displacement_vector, fock_state, vacuum
from .lens import ConfocalCircuit, _ReturnProbe, run_confocal
from .open_system import LossModel, calibrate_for_loss, trajectory_rng, unravel

SQL_DELTA_BETA = 0.5
SQL_CFI = 4.0
HALF_WIDTH = math.sqrt(2.0 * math.log(2.0))


class FitError(RuntimeError):
    """The Gaussian-plus-offset least-squares fit did not converge."""


@dataclass(frozen=True)
class Readout:
    """Vacuum-detection misassignment: ``p_false_vacuum`` reports vacuum for a
    non-vacuum outcome, ``p_missed_vacuum`` the reverse."""

    p_false_vacuum: float = 0.0
    p_missed_vacuum: float = 0.0

    def __post_init__(self):
        for v in (self.p_false_vacuum, self.p_missed_vacuum):
            if not 0.0 <= v < 0.5:
                raise ValueError("misassignment probabilities must lie in [0, 0.5)")

    def apply(self, p0):
        p0 = np.asarray(p0, dtype=float)
        return (1.0 - self.p_missed_vacuum) * p0 + self.p_false_vacuum * (1.0 - p0)


@dataclass(frozen=True)
class GaussianFit:
    A: float
    sigma: float
    C: float
    converged: bool = True
    residual: float = 0.0

    def __call__(self, beta):
        return gaussian_offset(np.asarray(beta, dtype=float), self.A, self.sigma, self.C)

    def complement(self, beta):
        """``1 - P`` without cancellation near the peak."""
        beta = np.asarray(beta, dtype=float)
        return (1.0 - self.A - self.C) - self.A * np.expm1(-beta ** 2 / (2.0 * self.sigma ** 2))

    def cfi(self, beta, warn=False):
        return _cfi(self(beta), self.derivative(beta), warn=warn, q=self.complement(beta))

    def derivative(self, beta):
        beta = np.asarray(beta, dtype=float)
        return -self.A * beta / self.sigma ** 2 * np.exp(-beta ** 2 / (2.0 * self.sigma ** 2))


@dataclass(frozen=True)
class CfiCurve:
    beta: np.ndarray
    cfi: np.ndarray  # NaN where P(0) is 0 or 1
    beta_opt: float
    icmax: float


@dataclass(frozen=True)
class SenseSweep:
    beta_grid: np.ndarray
    p0: np.ndarray
    p0_err: np.ndarray | None = None
    nbar: float = math.nan
    fit_A: float = math.nan
    fit_sigma: float = math.nan
    fit_C: float = math.nan
    fit_converged: bool = False
    fit_residual: float = math.nan
    cfi: np.ndarray | None = None
    beta_opt: float = math.nan
    icmax: float = math.nan
    delta_beta: float = math.nan
    gain_db: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def fit(self) -> GaussianFit:
        return GaussianFit(self.fit_A, self.fit_sigma, self.fit_C, self.fit_converged, self.fit_residual)


@dataclass(frozen=True)
class ScalingFit:
    nbars: np.ndarray
    delta_betas: np.ndarray
    exponent: float
    intercept: float
    r_squared: float


# -- fit ----------------------------------------------------------------------

def gaussian_offset(beta, A, sigma, C):
    return A * np.exp(-beta ** 2 / (2.0 * sigma ** 2)) + C


def _initial_sigma(beta, p, A, C):
    order = np.argsort(np.abs(beta))
    b, q = np.abs(beta[order]), p[order]
    half = C + 0.5 * A
    below = np.nonzero(q <= half)[0]
    if below.size == 0 or below[0] == 0:
        return max(float(b.max()), 1e-12) / 2.0
    i = int(below[0])
    # linear interpolation of the half-max crossing
    t = (q[i - 1] - half) / (q[i - 1] - q[i]) if q[i - 1] != q[i] else 0.0
    return max(float(b[i - 1] + t * (b[i] - b[i - 1])) / HALF_WIDTH, 1e-12)


def fit_gaussian_offset(beta_grid, p0) -> GaussianFit:
    """Least-squares fit of ``A exp(-beta^2 / (2 sigma^2)) + C``.

    The model is kept a probability: with ``C = c`` and ``A = a (1 - c)`` for
    ``a, c`` in ``[0, 1]`` it never leaves ``[0, 1]``, so the Fisher
    information cannot diverge where an unconstrained curve would cross 0 or 1.
    Initialisation is deterministic: ``A = max - min``, ``C = min`` and
    ``sigma`` from the interpolated half-maximum crossing.
    """
    beta = np.asarray(beta_grid, dtype=float)
    p = np.asarray(p0, dtype=float)
    if beta.shape != p.shape or beta.size < 5:
        raise ValueError("need at least 5 matching grid points")
    lo, hi = float(p.min()), float(p.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        raise ValueError("flat data cannot constrain a Gaussian")
    A0, C0 = hi - lo, lo
    s0 = _initial_sigma(beta, p, A0, C0)
    c0 = min(max(C0, 0.0), 1.0 - 1e-9)
    a0 = min(max(A0 / (1.0 - c0), 0.0), 1.0)
    span = float(np.ptp(beta)) or 1.0
    s0 = min(max(s0, 1e-6 * span), 1e2 * span)

    def model(b, a, sigma, c):
        return gaussian_offset(b, a * (1.0 - c), sigma, c)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            popt, _, info, _, ier = curve_fit(model, beta, p, p0=[a0, s0, c0],
                                              bounds=([0.0, 1e-9 * span, 0.0], [1.0, 1e3 * span, 1.0]),
                                              full_output=True, max_nfev=20000,
                                              xtol=1e-15, ftol=1e-15, gtol=1e-15)
        except (RuntimeError, ValueError) as exc:
            raise FitError(str(exc)) from exc
    if not np.all(np.isfinite(popt)):
        raise FitError("fit produced non-finite parameters")
    a, sigma, c = (float(v) for v in popt)
    resid = float(np.sqrt(np.mean(info["fvec"] ** 2)))
    return GaussianFit(a * (1.0 - c), sigma, c, ier in (1, 2, 3, 4), resid)


# -- Fisher information -------------------------------------------------------

def _cfi(p, dp, warn=True, q=None):
    p = np.asarray(p, dtype=float)
    dp = np.asarray(dp, dtype=float)
    q = 1.0 - p if q is None else np.asarray(q, dtype=float)
    valid = (p > 0.0) & (q > 0.0)
    if warn and not np.all(valid):
        warnings.warn(f"{int(np.count_nonzero(~valid))} point(s) with P(0) in {{0, 1}} excluded from the CFI",
                      RuntimeWarning, stacklevel=3)
    out = np.full(p.shape, np.nan)
    out[valid] = dp[valid] ** 2 / (p[valid] * q[valid])
    return out


def cfi_curve(source, beta=None, p0=None, mode: str = "model") -> CfiCurve:
    """Fisher information ``(dP/dbeta)^2 / (P (1 - P))`` of the vacuum readout.

    ``mode="model"`` differentiates a GaussianFit analytically; the maximum is
    located on a dense grid over the sampled range and polished.
    ``mode="finite_difference"`` uses centred differences of raw ``p0``.
    ``source`` may be a GaussianFit or a SenseSweep.
    """
    if isinstance(source, SenseSweep):
        beta = source.beta_grid if beta is None else beta
        p0 = source.p0 if p0 is None else p0
        if mode == "model":
            source = source.fit
    beta = np.asarray(beta, dtype=float)
    if mode == "finite_difference":
        p = np.asarray(p0, dtype=float)
        cfi = _cfi(p, np.gradient(p, beta))
        if np.all(np.isnan(cfi)):
            return CfiCurve(beta, cfi, math.nan, math.nan)
        k = int(np.nanargmax(cfi))
        return CfiCurve(beta, cfi, float(beta[k]), float(cfi[k]))
    if mode != "model":
        raise ValueError(f"unknown CFI mode {mode!r}")
    fit: GaussianFit = source
    cfi = fit.cfi(beta, warn=True)

    # the model is not trusted below the resolution of the sampled grid
    steps = np.diff(np.unique(np.abs(beta)))
    floor = 0.1 * float(steps[0]) if steps.size else 0.0
    dense = np.linspace(floor, float(np.max(np.abs(beta))), 4001)
    curve = fit.cfi(dense)
    if np.all(np.isnan(curve)):
        return CfiCurve(beta, cfi, math.nan, math.nan)
    k = int(np.nanargmax(curve))
    best_b, best_i = float(dense[k]), float(curve[k])
    lo, hi = dense[max(k - 1, 0)], dense[min(k + 1, dense.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda b: -fit.cfi(b)[()], bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        if np.isfinite(res.fun) and -res.fun > best_i:
            best_b, best_i = float(res.x), float(-res.fun)
    return CfiCurve(beta, cfi, best_b, best_i)


def sensitivity_and_gain(icmax: float) -> tuple[float, float]:
    """Cramer-Rao sensitivity ``1/sqrt(I)`` and its gain over ``delta_beta = 0.5``."""
    if not icmax > 0:
        raise ValueError("icmax must be positive")
    delta = 1.0 / math.sqrt(icmax)
    return delta, gain_db(delta)


def gain_db(delta_beta: float) -> float:
    return 10.0 * math.log10((SQL_DELTA_BETA / delta_beta) ** 2)


# -- sweeps -------------------------------------------------------------------

def default_beta_grid(circuit: ConfocalCircuit, points: int = 41, span: float = 4.0) -> np.ndarray:
    """``points`` values on ``[0, span * sigma]`` with sigma from a coarse pre-scan."""
    probe = _ReturnProbe(circuit)
    top = probe(0.0)
    half = 0.5 * top
    b = 0.05 / math.sqrt(max(circuit.nbar, 1.0))
    prev = 0.0
    while probe(b) > half:
        prev, b = b, 1.5 * b
        if b > 10.0:
            raise ArithmeticError("vacuum return never halves; circuit is not focusing")
    b_half = brentq(lambda x: probe(x) - half, prev, b, xtol=1e-6 * b)
    return np.linspace(0.0, span * b_half / HALF_WIDTH, points)


def sense_sweep(circuit: ConfocalCircuit, beta_grid=None, loss: LossModel | None = None,
                shots: int | None = None, seed: int = 0, readout: Readout | None = None,
                recalibrate: bool = True) -> SenseSweep:
    """Vacuum return on ``beta_grid`` (raw data only; see :func:`analyze`).

    Lossy sweeps reuse trajectory streams across grid points (common random
    numbers) and, with ``recalibrate``, first re-fit the closing displacement
    to the lossy return.  ``shots`` binomially resamples each point with its
    own seeded stream.
    """
    if beta_grid is None:
        beta_grid = default_beta_grid(circuit)
    beta = np.asarray(beta_grid, dtype=float)
    meta = {"loss_kappa": 0.0 if loss is None else loss.kappa, "shots": shots, "seed": seed}
    if loss is not None and loss.kappa > 0:
        if recalibrate:
            circuit = calibrate_for_loss(circuit, loss)
        p0, err = [], []
        for b in beta:
            dist = unravel(vacuum(circuit.dim), circuit.segments(float(b)), loss).distribution()
            p0.append(dist.populations[0])
            err.append(dist.stat_error[0])
        p0, err = np.clip(np.array(p0), 0.0, 1.0), np.array(err)
        meta["n_traj"] = loss.n_traj
    else:
        probe = _ReturnProbe(circuit)
        p0 = np.clip(np.array([probe(float(b)) for b in beta]), 0.0, 1.0)
        err = np.zeros_like(p0)
    if readout is not None:
        p0 = readout.apply(p0)
        meta["readout"] = [readout.p_false_vacuum, readout.p_missed_vacuum]
    if shots is not None:
        if shots < 1:
            raise ValueError("shots must be positive")
        counts = np.array([trajectory_rng(seed, i).binomial(shots, p) for i, p in enumerate(p0)])
        err = np.sqrt(p0 * (1.0 - p0) / shots)
        p0 = counts / shots
    return SenseSweep(beta, p0, err, nbar=circuit.nbar, meta=meta)


def analyze(sweep: SenseSweep, mode: str = "model") -> SenseSweep:
    """Fit, Fisher information, sensitivity and gain for a raw sweep."""
    fit = fit_gaussian_offset(sweep.beta_grid, sweep.p0)
    curve = cfi_curve(fit if mode == "model" else sweep, sweep.beta_grid, sweep.p0, mode=mode)
    delta, gain = sensitivity_and_gain(curve.icmax)
    return replace(sweep, fit_A=fit.A, fit_sigma=fit.sigma, fit_C=fit.C,
                   fit_converged=fit.converged, fit_residual=fit.residual,
                   cfi=curve.cfi, beta_opt=curve.beta_opt, icmax=curve.icmax,
                   delta_beta=delta, gain_db=gain)


def coherent_circuit(nbar: float) -> ConfocalCircuit:
    """Confocal circuit with both lenses disabled: a coherent probe."""
    return ConfocalCircuit(nbar=nbar, lens1=None, lens2=None, calibrated=True)


def coherent_benchmark(nbar: float = 100.0, beta_grid=None, readout: Readout | None = None) -> SenseSweep:
    """Analysed sweep of the lens-free circuit (the coherent-state limit)."""
    circuit = coherent_circuit(nbar)
    if beta_grid is None:
        beta_grid = np.linspace(0.0, 4.0 / math.sqrt(2.0), 41)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return analyze(sense_sweep(circuit, beta_grid, readout=readout))


def fock_probe_survival(n: int, betas) -> np.ndarray:
    """``|<N|D(beta)|N>|^2`` by direct displacement in a padded space."""
    dim = n + 40 + int(8 * float(np.max(np.abs(betas)) + 1.0) ** 2)
    start = fock_state(n, dim).amplitudes
    return np.array([abs(displacement_vector(start, complex(b))[n]) ** 2 for b in np.atleast_1d(betas)])


def fock_probe_cfi_limit(n: int, beta: float = 2e-3, step: float = 1e-4) -> float:
    """Small-beta Fisher information of the survival probability of ``|N>``."""
    lo, mid, hi = fock_probe_survival(n, [beta - step, beta, beta + step])
    dp = (hi - lo) / (2.0 * step)
    return float(dp * dp / (mid * (1.0 - mid)))


def focus_population_changes(circuit: ConfocalCircuit, beta0: float, delta: float = 0.02,
                             n_max: int = 10, loss: LossModel | None = None) -> dict:
    """Final low-level populations at ``beta0`` and ``beta0 +- delta``."""
    out = {}
    for b in (beta0 - delta, beta0, beta0 + delta):
        res = run_confocal(circuit, b, loss)
        pops = res.populations if hasattr(res, "populations") else np.abs(res.amplitudes) ** 2
        out[float(b)] = np.array(pops[: n_max + 1])
    return out


# -- scaling ------------------------------------------------------------------

def scaling_fit(nbars, delta_betas) -> ScalingFit:
    """Ordinary least squares of ``log delta_beta`` on ``log nbar``."""
    x = np.asarray(nbars, dtype=float)
    y = np.asarray(delta_betas, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("need at least 3 matching points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("scaling fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(x, y, float(slope), float(intercept), r2)
