import math

import numpy as np
import pytest
from scipy.stats import poisson

from fockscope.fock import FockVector, fock_state
from fockscope.lens import design_lens
from fockscope.open_system import LossModel
from fockscope.tomography import (
    CatSpec,
    ReconstructionError,
    build_channels,
    build_response_matrix,
    channel_window,
    local_maxima,
    make_test_state,
    ntomo,
    reconstruct,
    scan,
)


def moments(pn):
    n = np.arange(pn.size)
    mean = float(n @ pn / pn.sum())
    return mean, float((n - mean) ** 2 @ pn / pn.sum())


# -- test states --------------------------------------------------------------

@pytest.mark.parametrize("kind", ["PDC", "ODC"])
def test_cat_mean_photon_matches_state(kind):
    spec = CatSpec(kind, 100, 2.0)
    mean, _ = moments(np.abs(make_test_state(spec).amplitudes) ** 2)
    assert abs(mean - spec.mean_photon) < 1e-8
    assert abs(spec.mean_photon - (100 + 4 * math.tanh(4))) < 1e-12


def test_pdc_photon_distribution_has_two_humps():
    p = np.abs(make_test_state(CatSpec("PDC", 100, 2.0)).amplitudes) ** 2
    assert list(local_maxima(p)) == [64, 143]


def test_odc_photon_distribution_is_centred():
    p = np.abs(make_test_state(CatSpec("ODC", 100, 2.0)).amplitudes) ** 2
    peaks = local_maxima(p)
    assert len(peaks) == 3
    assert abs(peaks[1] - 104) <= 4


def test_zero_alpha_cat_is_coherent():
    a = make_test_state(CatSpec("PDC", 50, 0.0)).amplitudes
    b = make_test_state(CatSpec("coherent", 50)).amplitudes
    assert np.allclose(a, b)


def test_cat_spec_validation():
    with pytest.raises(ValueError):
        CatSpec("GKP", 10, 1.0)
    with pytest.raises(ValueError):
        CatSpec("PDC", -1, 1.0)


# -- channels without lenses --------------------------------------------------

def test_lens_free_kernel_is_poisson():
    channels = build_channels([30.0, 40.0, 50.0], None, dim=120)
    response = build_response_matrix(channels)
    n = np.arange(120)
    for row, t in zip(response.kernel, response.targets):
        assert np.max(np.abs(row - poisson.pmf(n, t))) < 1e-10


def test_lens_free_scan_of_vacuum():
    channels = build_channels([4.0, 9.0], None, dim=60)
    p = scan(FockVector(np.eye(60)[0]), channels)
    assert np.allclose(p, np.exp(-np.array([4.0, 9.0])))


def test_zero_width_window_rejected():
    with pytest.raises(ValueError):
        channel_window(100, 100)
    assert channel_window(40, 50, 2) == [40, 42, 44, 46, 48, 50]


def test_rank_deficient_response_raises():
    channels = build_channels([20.0, 20.0, 20.0], None, dim=80)
    response = build_response_matrix(channels)
    with pytest.raises(ReconstructionError) as info:
        reconstruct(scan(fock_state(20, 80), channels), response, regularization=0.0)
    assert info.value.condition > 1e12


# -- focused channels ---------------------------------------------------------

@pytest.fixture(scope="module")
def bank():
    design = design_lens(100)
    channels = build_channels(channel_window(40, 180, 2), design)
    return design, channels, build_response_matrix(channels)


def test_kernel_peaks_on_target(bank):
    _, _, response = bank
    peaks = np.argmax(response.kernel, axis=1)
    assert np.max(np.abs(peaks - response.targets)) <= 1


def test_channel_accepts_its_focused_state(bank):
    _, channels, _ = bank
    for ch in channels[::10]:
        assert ch.vacuum_probability(ch.focused_state()) >= 0.85


def test_adjoint_scan_matches_forward_run(bank):
    _, channels, _ = bank
    state = make_test_state(CatSpec("PDC", 100, 2.0), dim=channels[0].dim)
    for ch in channels[::14]:
        assert abs(ch.vacuum_probability(state) - ch.forward_vacuum_probability(state)) < 1e-9


def test_delta_reconstruction(bank):
    _, channels, response = bank
    target = fock_state(100, channels[0].dim)
    result = ntomo(target, channels, response, basis="fock")
    assert int(np.argmax(result.reconstructed_pn)) == 100
    tv = 0.5 * np.abs(result.reconstructed_pn - np.abs(target.amplitudes) ** 2).sum()
    assert tv < 0.05


def test_two_deltas_resolved(bank):
    _, channels, response = bank
    sigma = math.sqrt(moments(response.kernel[30])[1])
    gap = int(math.ceil(3 * sigma)) + 1
    amps = np.zeros(channels[0].dim, dtype=complex)
    amps[100 - gap // 2] = amps[100 - gap // 2 + gap] = 1 / math.sqrt(2)
    result = ntomo(FockVector(amps), channels, response, basis="fock")
    assert len(local_maxima(result.reconstructed_pn)) == 2


def test_coherent_reconstruction_moments(bank):
    _, channels, response = bank
    result = ntomo(make_test_state(CatSpec("coherent", 100), dim=channels[0].dim), channels, response)
    mean, var = moments(result.reconstructed_pn)
    assert abs(mean - 100) < 3
    assert abs(var - 100) < 20


@pytest.mark.parametrize("kind", ["PDC", "ODC"])
def test_forward_consistency(bank, kind):
    _, channels, response = bank
    result = ntomo(make_test_state(CatSpec(kind, 100, 2.0), dim=channels[0].dim), channels, response)
    model = response.gram @ result.weights
    assert np.linalg.norm(model - result.vacuum_probs) / np.linalg.norm(result.vacuum_probs) < 0.05


def test_reconstruction_is_bounded(bank):
    _, channels, response = bank
    result = ntomo(make_test_state(CatSpec("ODC", 100, 2.0), dim=channels[0].dim), channels, response)
    assert result.reconstructed_pn.min() >= 0
    assert result.reconstructed_pn.sum() <= 1 + 1e-12


def test_cat_reconstruction_peaks(bank):
    _, channels, response = bank
    dim = channels[0].dim
    pdc = ntomo(make_test_state(CatSpec("PDC", 100, 2.0), dim=dim), channels, response)
    peaks = local_maxima(pdc.reconstructed_pn)
    assert len(peaks) == 2
    assert abs(peaks[0] - 64) <= 4 and abs(peaks[1] - 144) <= 4
    odc = ntomo(make_test_state(CatSpec("ODC", 100, 2.0), dim=dim), channels, response)
    peaks = local_maxima(odc.reconstructed_pn)
    assert len(peaks) == 3
    assert abs(peaks[1] - 104) <= 4


def test_reconstruction_is_deterministic(bank):
    _, channels, response = bank
    state = make_test_state(CatSpec("ODC", 100, 2.0), dim=channels[0].dim)
    a = ntomo(state, channels, response)
    b = ntomo(state, channels, response)
    assert np.array_equal(a.reconstructed_pn, b.reconstructed_pn)


def test_lossy_scan_limits(bank):
    _, channels, _ = bank
    picked = channels[25:36:5]
    state = make_test_state(CatSpec("coherent", 100), dim=channels[0].dim)
    lossless = scan(state, picked)
    faint = scan(state, picked, loss=LossModel(1e-4, n_traj=20, seed=1))
    assert np.max(np.abs(faint - lossless)) < 1e-3
    lossy = scan(state, picked, loss=LossModel(0.5, n_traj=20, seed=1))
    again = scan(state, picked, loss=LossModel(0.5, n_traj=20, seed=1))
    assert np.array_equal(lossy, again)
    assert np.all((lossy >= 0) & (lossy <= 1))
