"""Photon-number statistics and phase-space (Wigner) maps."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import curve_fit

from .fock import FockVector, TruncationError, _quadrature_propagator, top_band

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
VACUUM_PEAK = 2.0 / math.pi


@dataclass(frozen=True)
class DistStats:
    mean: float
    sigma: float
    fwhm: float
    peak_pop: float
    compression_db: float
    fit_center: float = math.nan
    moment_fallback: bool = False


def _gaussian(n, amp, center, sigma):
    return amp * np.exp(-((n - center) ** 2) / (2.0 * sigma ** 2))


def compression_db(mean: float, sigma: float) -> float:
    """Number-variance compression relative to a coherent state of equal mean."""
    if mean <= 0 or sigma <= 0:
        return math.nan
    return 10.0 * math.log10(mean / sigma ** 2)


def dist_stats(pn) -> DistStats:
    """Gaussian-fit statistics of a photon-number distribution.

    The fit window is centred on the global maximum and spans six initial
    width estimates either side.  Distributions too narrow to constrain a
    Gaussian (fewer than three levels above 5 % of the peak) fall back to the
    moment standard deviation and set ``moment_fallback``.
    """
    p = np.asarray(pn, dtype=float)
    n = np.arange(p.size, dtype=float)
    total = p.sum()
    mean = float(np.dot(n, p) / total)
    moment_sigma = float(math.sqrt(max(np.dot(n * n, p) / total - mean ** 2, 0.0)))
    k = int(np.argmax(p))
    peak = float(p[k])

    above = p >= 0.5 * peak
    # half-max crossing around the peak as the initial width
    lo = k
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = k
    while hi < p.size - 1 and above[hi + 1]:
        hi += 1
    width0 = max((hi - lo + 1) / FWHM_PER_SIGMA, 0.5)

    lo_w = max(0, int(math.floor(k - 6 * width0)))
    hi_w = min(p.size, int(math.ceil(k + 6 * width0)) + 1)
    window = slice(lo_w, hi_w)
    support = int(np.count_nonzero(p[window] > 0.05 * peak))

    sigma = center = math.nan
    fallback = support < 3
    if not fallback:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                popt, _ = curve_fit(_gaussian, n[window], p[window],
                                    p0=[peak, float(k), width0], maxfev=5000)
            sigma, center = abs(float(popt[2])), float(popt[1])
            if not (np.all(np.isfinite(popt)) and lo_w <= center <= hi_w):
                fallback = True
        except RuntimeError:
            fallback = True
    if fallback:
        sigma, center = moment_sigma, mean
    return DistStats(
        mean=mean,
        sigma=sigma,
        fwhm=FWHM_PER_SIGMA * sigma,
        peak_pop=peak,
        compression_db=compression_db(mean, sigma),
        fit_center=center,
        moment_fallback=fallback,
    )


@dataclass(frozen=True)
class WignerMap:
    """Wigner function on a grid of ``alpha = x + i p``; vacuum peaks at 2/pi."""

    x_grid: np.ndarray
    p_grid: np.ndarray
    values: np.ndarray  # shape (len(p_grid), len(x_grid))
    convention_scale: float = VACUUM_PEAK

    def integral(self) -> float:
        return float(trapezoid(trapezoid(self.values, self.x_grid, axis=1), self.p_grid))

    def x_marginal(self) -> np.ndarray:
        return trapezoid(self.values, self.p_grid, axis=0)

    @property
    def min(self) -> float:
        return float(self.values.min())


def parity_at_origin(state: FockVector) -> float:
    """``(2/pi) sum (-1)^n P(n)``, the Wigner value at the phase-space origin."""
    p = np.abs(state.amplitudes) ** 2
    signs = np.where(np.arange(state.dim) % 2 == 0, 1.0, -1.0)
    return VACUUM_PEAK * float(np.dot(signs, p))


def wigner_map(state: FockVector, x_grid, p_grid, batch: int = 4096,
               leakage_tol: float = 1e-10) -> WignerMap:
    """Displaced-parity evaluation ``W(a) = (2/pi) <D(a) P D(a)^dag>``.

    The state is zero-padded so displacements up to the grid radius stay inside
    the space; if the displaced vectors still reach the top band the result
    would be corrupted by truncation and TruncationError is raised instead.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    p_grid = np.asarray(p_grid, dtype=float)
    if not (np.all(np.isfinite(x_grid)) and np.all(np.isfinite(p_grid))):
        raise ValueError("Wigner grid must be finite")
    xx, pp = np.meshgrid(x_grid, p_grid)
    alphas = (xx + 1j * pp).ravel()
    radius = float(np.max(np.abs(alphas))) if alphas.size else 0.0

    # support of the state, then room for the largest displacement
    occupied = np.nonzero(np.abs(state.amplitudes) > 1e-14)[0]
    n_top = int(occupied[-1]) if occupied.size else 0
    dim = int(math.ceil((math.sqrt(n_top + 1) + radius + 7.0) ** 2))
    dim = max(dim, state.dim)
    psi = np.zeros(dim, dtype=complex)
    psi[:state.dim] = state.amplitudes

    prop = _quadrature_propagator(dim)
    levels = np.arange(dim)
    parity = np.where(levels % 2 == 0, 1.0, -1.0)
    band = top_band(dim)
    out = np.empty(alphas.size)
    for start in range(0, alphas.size, batch):
        chunk = -alphas[start:start + batch]  # D(-a) brings the point a to the origin
        gauge = np.exp(1j * np.outer(levels, np.angle(chunk) + 0.5 * math.pi))
        coeffs = prop.inv @ (np.conj(gauge) * psi[:, None])
        coeffs *= np.exp(-1j * np.outer(prop.evals, np.abs(chunk)))
        shifted = gauge * (prop.evecs @ coeffs)
        probs = np.abs(shifted) ** 2
        leak = probs[-band:].sum(axis=0)
        if np.any(leak > leakage_tol):
            raise TruncationError(float(leak.max()), dim)
        out[start:start + batch] = VACUUM_PEAK * (parity @ probs)
    return WignerMap(x_grid, p_grid, out.reshape(xx.shape))


def quadrature_distribution(state: FockVector, x_grid) -> np.ndarray:
    """``|psi(x)|^2`` for the quadrature ``x = (a + a^dag)/2``."""
    x = np.asarray(x_grid, dtype=float)
    # normalised Hermite functions by the stable three-term recurrence
    phi_prev = np.zeros_like(x)
    phi = (2.0 / math.pi) ** 0.25 * np.exp(-x * x)
    u = math.sqrt(2.0) * x
    acc = state.amplitudes[0] * phi
    for k in range(1, state.dim):
        phi_next = (math.sqrt(2.0 / k) * u * phi - math.sqrt((k - 1) / k) * phi_prev)
        phi_prev, phi = phi, phi_next
        acc = acc + state.amplitudes[k] * phi
    return np.abs(acc) ** 2
