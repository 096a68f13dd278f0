"""Photon-number tomography by scanning focused detection channels.

A channel for target ``N`` is the second half of a confocal circuit tuned to
``N``: a mirrored lens followed by a closing displacement and vacuum readout.
It therefore measures ``|<chi_N|psi>|^2`` for a detection mode ``chi_N`` that
is an N-focused state.  Scanning ``N`` over a window and inverting the
responses recovers ``P(n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .fock import (
    FockVector,
    coherent_amplitudes,
    generator_propagator,
    kerr_phase,
    truncation_dim,
)
from .lens import (
    ConfocalCircuit,
    Displacement,
    LensDesign,
    LensParams,
    calibrate_closure,
    lens_segments,
    run_segments,
)

CAT_KINDS = ("coherent", "PDC", "ODC")


class ReconstructionError(ArithmeticError):
    """Inversion is rank deficient; ``condition`` holds the estimate."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3g})")
        self.condition = condition


# -- test states --------------------------------------------------------------

@dataclass(frozen=True)
class CatSpec:
    """Displaced coherent state or displaced even cat.

    PDC superposes ``+-alpha`` along the displacement; ODC uses ``+-i alpha``.
    """

    kind: str
    n_t: float
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in CAT_KINDS:
            raise ValueError(f"kind must be one of {CAT_KINDS}, got {self.kind!r}")
        if self.n_t < 0:
            raise ValueError("n_t must be non-negative")

    @property
    def mean_photon(self) -> float:
        if self.kind == "coherent":
            return self.n_t
        # even cat: <n> = |alpha|^2 tanh|alpha|^2, and <a> = 0 adds no cross term
        a2 = self.alpha ** 2
        return self.n_t + a2 * math.tanh(a2)

    def default_dim(self) -> int:
        top = (math.sqrt(self.n_t) + abs(self.alpha)) ** 2
        return truncation_dim(top)


def make_test_state(spec: CatSpec, dim: int | None = None) -> FockVector:
    """``D(sqrt(n_t)) (|b> + |-b>) / norm`` with ``b = alpha`` (PDC) or ``i alpha`` (ODC)."""
    dim = spec.default_dim() if dim is None else dim
    shift = complex(math.sqrt(spec.n_t))
    if spec.kind == "coherent" or spec.alpha == 0:
        return coherent_amplitudes(shift, dim)
    b = complex(spec.alpha) if spec.kind == "PDC" else 1j * spec.alpha
    # D(x)|b> = exp(i Im(x conj(b))) |x + b>
    phase = (shift * b.conjugate()).imag
    plus = coherent_amplitudes(shift + b, dim).amplitudes * np.exp(1j * phase)
    minus = coherent_amplitudes(shift - b, dim).amplitudes * np.exp(-1j * phase)
    norm = 1.0 / math.sqrt(2.0 * (1.0 + math.exp(-2.0 * abs(b) ** 2)))
    return FockVector(norm * (plus + minus))


# -- channels -----------------------------------------------------------------

@dataclass(frozen=True)
class NTomoChannel:
    """Mirrored lens then closing displacement, read out on vacuum.

    ``lens=None`` gives a bare displacement channel whose detection mode is
    the coherent state ``|-closing>``.
    """

    target_n: float
    lens: LensParams | None
    closing_displacement: complex
    dim: int
    frame_phase: float = 0.0

    def focused_state(self) -> FockVector:
        """The N-focused state this channel is matched to, in the channel frame."""
        if self.lens is None:
            return coherent_amplitudes(-self.closing_displacement, self.dim)
        lens = replace(self.lens, drive_phase=self.lens.drive_phase + self.frame_phase)
        focus = ConfocalCircuit.symmetric(self.target_n, lens, dim=self.dim).focus()
        n = np.arange(self.dim)
        return focus.replace(focus.amplitudes * np.exp(1j * self.frame_phase * n))

    def segments(self) -> list:
        return [*lens_segments(self.lens, mirrored=True), Displacement(self.closing_displacement, "closing")]

    @cached_property
    def mode(self) -> np.ndarray:
        return self.detection_mode()

    def detection_mode(self) -> np.ndarray:
        """``chi`` with ``P(0) = |<chi|psi>|^2``, by running the channel backwards."""
        chi = coherent_amplitudes(-self.closing_displacement, self.dim, leakage_tol=1.0).amplitudes
        if self.lens is None:
            return chi
        # channel = Kerr(theta) . Drive; its adjoint is Drive^dag . Kerr(-theta)
        chi = kerr_phase(FockVector(chi, leakage_tol=1.0), -self.lens.theta).amplitudes
        prop = generator_propagator(self.lens.drive_generator(), self.dim)
        return prop.apply(chi, -self.lens.drive_time)

    def vacuum_probability(self, state: FockVector) -> float:
        """Lossless ``P(0)`` through the adjoint identity ``|<chi|psi>|^2``.

        Forward propagation is equivalent but can push mismatched components
        far above the target before the readout discards them.
        """
        return float(abs(np.vdot(self.mode, _fit_dim(state, self.dim).amplitudes)) ** 2)

    def forward_dim(self, state: FockVector) -> int:
        """Space large enough for a forward run: the closing displacement can
        carry mismatched components well above both the state and the target."""
        occupied = np.nonzero(np.abs(state.amplitudes) ** 2 > 1e-14)[0]
        top = int(occupied[-1]) if occupied.size else 0
        return max(self.dim, truncation_dim((math.sqrt(top) + abs(self.closing_displacement)) ** 2))

    def forward_vacuum_probability(self, state: FockVector) -> float:
        out = run_segments(_fit_dim(state, self.forward_dim(state)), self.segments())
        return float(abs(out.amplitudes[0]) ** 2)


def _fit_dim(state: FockVector, dim: int) -> FockVector:
    if state.dim == dim:
        return state
    if state.dim > dim:
        if np.sum(np.abs(state.amplitudes[dim:]) ** 2) > 1e-12:
            raise ValueError(f"state does not fit in the channel space of dim {dim}")
        return FockVector(state.amplitudes[:dim])
    amps = np.zeros(dim, dtype=complex)
    amps[:state.dim] = state.amplitudes
    return FockVector(amps)


def _expect_a(amps: np.ndarray) -> complex:
    return complex(np.vdot(amps[:-1], np.sqrt(np.arange(1, amps.size)) * amps[1:]))


def make_channel(target_n: float, lens: LensParams | None, dim: int, align: bool = True) -> NTomoChannel:
    """Calibrated channel for ``target_n``.

    The closing displacement comes from the confocal circuit at ``target_n``.
    With ``align`` the channel frame is rotated so its detection mode has a
    real positive mean field; a frame rotation ``exp(-i phi n)`` commutes
    with the Kerr term and only shifts the drive and closing phases.
    """
    if lens is None:
        return NTomoChannel(target_n, None, -complex(math.sqrt(target_n)), dim)
    circ = calibrate_closure(ConfocalCircuit.symmetric(target_n, lens, dim=dim), probe_phase=None)
    channel = NTomoChannel(target_n, lens, circ.closing, dim)
    if not align:
        return channel
    mean_field = _expect_a(channel.mode)
    phi = -math.atan2(mean_field.imag, mean_field.real)
    rotated = replace(lens, drive_phase=math.remainder(lens.drive_phase - phi, 2.0 * math.pi))
    closing = channel.closing_displacement * complex(math.cos(phi), math.sin(phi))
    return NTomoChannel(target_n, rotated, closing, dim, phi)


def build_channels(targets: Sequence[float], design: LensDesign | None, dim: int | None = None,
                   align: bool = True) -> list[NTomoChannel]:
    """Channels sharing one lens shape, rescaled to every target."""
    targets = [float(t) for t in targets]
    if not targets:
        raise ValueError("no channel targets")
    dim = truncation_dim(max(targets)) if dim is None else dim
    return [make_channel(t, None if design is None else design.lens_for(t), dim, align) for t in targets]


def channel_window(low: float, high: float, spacing: float = 2.0) -> list[float]:
    if not high > low:
        raise ValueError("channel window has zero width")
    count = int(math.floor((high - low) / spacing + 1e-9)) + 1
    return [low + k * spacing for k in range(count)]


def scan(state: FockVector, channels: Sequence[NTomoChannel], loss=None) -> np.ndarray:
    """Vacuum probability of ``state`` after each channel."""
    if loss is not None and loss.kappa > 0:
        from .open_system import run_program

        return np.array([
            run_program(_fit_dim(state, ch.forward_dim(state)), ch.segments(), loss).populations[0]
            for ch in channels
        ])
    return np.array([ch.vacuum_probability(state) for ch in channels])


# -- response and inversion ---------------------------------------------------

@dataclass(frozen=True)
class ResponseMatrix:
    """Channel kernels.

    ``kernel[c, n]`` is the vacuum probability of channel ``c`` on ``|n>``;
    ``gram[c, j] = |<chi_c|chi_j>|^2`` is the response of channel ``c`` to the
    detection mode of channel ``j`` (the N-focused family).
    """

    targets: np.ndarray
    kernel: np.ndarray
    gram: np.ndarray
    modes: np.ndarray  # rows are detection modes

    @property
    def dim(self) -> int:
        return self.kernel.shape[1]


def build_response_matrix(channels: Sequence[NTomoChannel]) -> ResponseMatrix:
    if len(channels) == 0:
        raise ValueError("empty channel list gives an empty response matrix")
    dims = {ch.dim for ch in channels}
    if len(dims) != 1:
        raise ValueError("channels must share one Hilbert-space dimension")
    modes = np.array([ch.detection_mode() for ch in channels])
    kernel = np.abs(modes) ** 2
    gram = np.abs(np.conj(modes) @ modes.T) ** 2
    return ResponseMatrix(np.array([ch.target_n for ch in channels]), kernel, gram, modes)


@dataclass(frozen=True)
class NTomoResult:
    targets: np.ndarray
    vacuum_probs: np.ndarray
    response_matrix: np.ndarray
    reconstructed_pn: np.ndarray
    residual: float
    condition: float
    basis: str
    weights: np.ndarray


def _second_difference(size: int) -> np.ndarray:
    if size < 3:
        return np.zeros((0, size))
    d = np.zeros((size - 2, size))
    idx = np.arange(size - 2)
    d[idx, idx] = 1.0
    d[idx, idx + 1] = -2.0
    d[idx, idx + 2] = 1.0
    return d


def reconstruct(vacuum_probs, response: ResponseMatrix, regularization: float | None = None,
                basis: str = "focused", max_condition: float = 1e12) -> NTomoResult:
    """Non-negative least squares with a second-difference smoothness penalty.

    ``basis="focused"`` models the state as a mixture of the channels' own
    detection modes (robust for states with coherences across ``n``);
    ``basis="fock"`` solves for ``P(n)`` directly through the Fock kernel
    (exact for number-diagonal inputs).  ``regularization`` scales the
    penalty rows and defaults to ``1e-3`` times the largest response entry.
    """
    s = np.asarray(vacuum_probs, dtype=float)
    if s.shape != response.targets.shape:
        raise ValueError("scan length does not match the channel count")
    if basis == "focused":
        system = response.gram
        columns = np.arange(len(response.targets))
    elif basis == "fock":
        spacing = np.min(np.diff(response.targets)) if len(response.targets) > 1 else 1.0
        lo = max(0, int(math.floor(response.targets.min() - 2 * spacing)))
        hi = min(response.dim, int(math.ceil(response.targets.max() + 2 * spacing)) + 1)
        columns = np.arange(lo, hi)
        system = response.kernel[:, columns]
    else:
        raise ValueError(f"unknown basis {basis!r}")
    if system.size == 0:
        raise ValueError("empty response matrix")
    weight = 1e-3 * float(system.max()) if regularization is None else float(regularization)
    penalty = weight * _second_difference(system.shape[1])
    augmented = np.vstack([system, penalty])
    rhs = np.concatenate([s, np.zeros(penalty.shape[0])])
    sv = np.linalg.svd(augmented, compute_uv=False)
    condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if condition > max_condition:
        raise ReconstructionError("response matrix is rank deficient", condition)
    w, _ = nnls(augmented, rhs, maxiter=50 * augmented.shape[1])
    residual = float(np.linalg.norm(system @ w - s))
    if basis == "focused":
        pn = response.kernel.T @ w
    else:
        pn = np.zeros(response.dim)
        pn[columns] = w
    pn = pn / max(1.0, float(pn.sum()))
    return NTomoResult(response.targets, s, response.kernel, pn, residual, condition, basis, w)


def local_maxima(pn, prominence: float = 0.05) -> np.ndarray:
    """Indices of peaks rising ``prominence * max`` above their surroundings."""
    from scipy.signal import find_peaks

    p = np.asarray(pn, dtype=float)
    peaks, _ = find_peaks(np.concatenate([[0.0], p, [0.0]]), prominence=prominence * float(p.max()))
    return peaks - 1


def ntomo(state: FockVector, channels: Sequence[NTomoChannel], response: ResponseMatrix | None = None,
          loss=None, regularization: float | None = None, basis: str = "focused") -> NTomoResult:
    """Scan ``state`` and reconstruct its photon-number distribution."""
    response = build_response_matrix(channels) if response is None else response
    return reconstruct(scan(state, channels, loss), response, regularization, basis)

