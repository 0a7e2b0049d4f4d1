import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from divacancy.constants import D_GROUND_THEORY_3C, GAMMA_E, HYPERFINE_EXPERIMENT, HYPERFINE_THEORY
from divacancy.ground import (
    GroundStateParams, HyperfineTensor, effective_az, fit_decay, fit_hyperfine, fringe_decay,
    gs_hamiltonian, hahn_echo_eseem, manifold_frequencies, odmr_lines, rabi_fit, rabi_trace,
    stretched_exp, synthetic_resonances, with_field,
)
from divacancy.inference.lsq import NonIdentifiableError

C13 = HyperfineTensor(*HYPERFINE_EXPERIMENT["13C-I"], nucleus="13C-I", tied=True)
SI29 = HyperfineTensor(*HYPERFINE_EXPERIMENT["29Si-IIa"], nucleus="29Si-IIa", tied=True)


# ---- oracles --------------------------------------------------------------

def manifold_oracle(params, hf):
    """Nuclear splittings (MHz) inside the mS=0 and mS=-1 manifolds, from a
    dense eigendecomposition of the 6-level Hamiltonian."""
    w, V = np.linalg.eigh(gs_hamiltonian(params, hf))
    pop = (np.abs(V) ** 2).reshape(3, 2, 6).sum(axis=1)
    zero = np.sort(np.argsort(pop[1])[-2:])
    minus = np.sort(np.argsort(pop[2])[-2:])
    return 1e3 * (w[zero[1]] - w[zero[0]]), 1e3 * (w[minus[1]] - w[minus[0]])


def two_pulse_closed_form(hf, B, tau):
    """Two-pulse modulation for an axial field and Sz-only coupling:
    1 - 2 k sin^2(pi f0 tau) sin^2(pi f1 tau), k = sin^2 of the angle
    between the nuclear quantisation axes of the two manifolds."""
    A = hf.lab_tensor()
    zee = -1e-3 * hf.gamma_n * np.array([0.0, 0.0, B])          # MHz
    n0, n1 = zee, -A[2] + zee
    f0, f1 = np.linalg.norm(n0), np.linalg.norm(n1)
    k = 1.0 - (n0 @ n1 / (f0 * f1)) ** 2
    return 1.0 - 2.0 * k * np.sin(np.pi * f0 * tau) ** 2 * np.sin(np.pi * f1 * tau) ** 2


# ---- Hamiltonian and lines -------------------------------------------------

def test_zero_field_spectrum():
    w = np.linalg.eigvalsh(gs_hamiltonian(GroundStateParams(D=1.336)))
    np.testing.assert_allclose(w, [-2 * 1.336 / 3, 1.336 / 3, 1.336 / 3], atol=1e-12)
    lines = odmr_lines(GroundStateParams(D=1.336))
    assert len(lines) == 1 and lines[0][0] == pytest.approx(1.336, abs=1e-12)


def test_theory_zfs_shift():
    a = odmr_lines(GroundStateParams(D=1.336))[0][0]
    b = odmr_lines(GroundStateParams(D=D_GROUND_THEORY_3C))[0][0]
    assert 1e3 * (a - b) == pytest.approx(16.0, abs=1e-9)


def test_axial_zeeman():
    B = 120.0
    f = [x for x, _ in odmr_lines(GroundStateParams(B_mag=B))]
    np.testing.assert_allclose(f, [1.336 - 1e-3 * GAMMA_E * B, 1.336 + 1e-3 * GAMMA_E * B], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.0, 400.0), st.floats(0.0, 180.0), st.floats(0.0, 360.0),
       st.floats(0.0, 150.0), st.floats(0.0, 150.0), st.floats(0.0, 90.0))
def test_traceless_and_hermitian(D, B, th, ph, axx, azz, tilt):
    p = GroundStateParams(D=D, B_mag=B, B_theta=th, B_phi=ph)
    hf = HyperfineTensor(axx, axx, azz, tilt, gamma_n=0.0)
    for H in (gs_hamiltonian(p), gs_hamiltonian(p, hf)):
        assert abs(np.trace(H)) < 1e-10
        np.testing.assert_allclose(H, H.conj().T, atol=0)


def test_axial_tensor_lines_independent_of_azimuth():
    hf = HyperfineTensor(30.0, 30.0, 80.0, 0.0)
    ref = [f for f, _ in odmr_lines(GroundStateParams(B_mag=90.0, B_theta=35.0, B_phi=0.0), [hf])]
    for phi in (17.0, 90.0, 233.0):
        f = [f for f, _ in odmr_lines(GroundStateParams(B_mag=90.0, B_theta=35.0, B_phi=phi), [hf])]
        np.testing.assert_allclose(f, ref, atol=1e-9)


def test_axis_aligned_splitting_equals_azz():
    p = GroundStateParams(B_mag=150.0)
    f = np.array([f for f, _ in odmr_lines(p, [HyperfineTensor(0.0, 0.0, 73.0, 0.0)])])
    upper = np.sort(f[f > 1.336])
    assert 1e3 * (upper[1] - upper[0]) == pytest.approx(73.0, abs=1e-9)
    # a small transverse part only adds a second-order shift
    f = np.array([f for f, s in odmr_lines(p, [HyperfineTensor(5.0, 5.0, 73.0, 0.0)]) if s > 0.5])
    upper = np.sort(f[f > 1.336])
    assert 1e3 * (upper[1] - upper[0]) == pytest.approx(73.0, abs=0.05)


def test_c13_dominant_splitting():
    lines = [f for f, s in odmr_lines(GroundStateParams(B_mag=20.0), [C13]) if s > 0.5]
    f = 1e3 * np.sort(lines)
    assert f.size == 4
    for split in (f[1] - f[0], f[3] - f[2]):
        assert split == pytest.approx(59.0, abs=5.0)


def test_effective_az():
    for values in (*HYPERFINE_THEORY.values(), *HYPERFINE_EXPERIMENT.values()):
        hf = HyperfineTensor(*values)
        assert effective_az(hf) == pytest.approx(np.linalg.norm(hf.lab_tensor()[:, 2]), abs=1e-12)
    assert effective_az(HyperfineTensor(*HYPERFINE_THEORY["29Si-IIa"])) == pytest.approx(8.9, abs=0.05)
    assert effective_az(HyperfineTensor(12.0, 40.0, 77.7, 0.0)) == 77.7
    # Axx <-> Ayy swap leaves A_z unchanged only for an axis-aligned tensor
    assert effective_az(HyperfineTensor(40.0, 12.0, 77.7, 0.0)) == 77.7


def test_one_nucleus_per_call():
    with pytest.raises(ValueError, match="one nucleus"):
        odmr_lines(GroundStateParams(), [C13, SI29])


def test_parameter_validation():
    with pytest.raises(ValueError):
        GroundStateParams(D=0.0)
    with pytest.raises(ValueError):
        GroundStateParams(B_mag=-1.0)
    with pytest.raises(ValueError):
        GroundStateParams(B_theta=181.0)
    with pytest.raises(ValueError):
        HyperfineTensor(1.0, 1.0, 1.0, 95.0)
    with pytest.raises(ValueError):
        HyperfineTensor(1.0, 2.0, 1.0, 10.0, tied=True)


# ---- hyperfine fitting -----------------------------------------------------

FIELDS = (10, 60, 120, 180, 250)
ANGLES = (0, 20, 40, 60, 80)


def test_noiseless_hyperfine_inversion():
    b, th, f = synthetic_resonances(GroundStateParams(), C13, FIELDS, ANGLES, noise_mhz=0.0)
    fit = fit_hyperfine(b, th, f, 1.0, nucleus="13C-I", tie_ayy=True,
                        init=HyperfineTensor(*HYPERFINE_THEORY["13C-I"], nucleus="13C-I"))
    assert fit.tied and fit.tensor.Ayy == fit.tensor.Axx
    for k in ("Axx", "Azz", "theta"):
        assert getattr(fit.tensor, k) == pytest.approx(getattr(C13, k), abs=1e-3)


def test_single_setting_not_identifiable():
    b, th, f = synthetic_resonances(GroundStateParams(), C13, [120.0], [40.0], noise_mhz=0.0, min_strength=0.0)
    with pytest.raises(NonIdentifiableError):
        fit_hyperfine(b, th, f, 1.0, nucleus="13C-I")


def test_noisy_fit_reports_intervals():
    b, th, f = synthetic_resonances(GroundStateParams(), SI29, FIELDS, ANGLES, noise_mhz=1.0, seed=3)
    fit = fit_hyperfine(b, th, f, 1.0, nucleus="29Si-IIa",
                        init=HyperfineTensor(*HYPERFINE_THEORY["29Si-IIa"], nucleus="29Si-IIa"))
    for k, (lo, hi) in fit.intervals.items():
        assert lo <= getattr(fit.tensor, k) <= hi
    d = fit.as_dict()
    assert set(d["parameters"]) == {"Axx", "Ayy", "Azz", "theta"}


# ---- echo envelope ---------------------------------------------------------

def test_echo_starts_at_one_and_is_bounded():
    p = GroundStateParams(B_mag=253.0)
    tau = np.linspace(0.0, 30.0, 3001)
    for hf in (C13, SI29):
        env = hahn_echo_eseem(p, hf, 901.0, 2.0, tau)
        assert env.signal[0] == pytest.approx(1.0, abs=1e-12)
        assert np.abs(env.signal).max() <= 1 + 1e-9
        np.testing.assert_allclose(env.times, 2 * tau)


def test_isotropic_coupling_has_no_modulation():
    p = GroundStateParams(B_mag=253.0)
    tau = np.linspace(0.0, 200.0, 801)
    env = hahn_echo_eseem(p, HyperfineTensor(9.0, 9.0, 9.0, 30.0, nucleus="29Si-IIa"), 901.0, 2.0, tau,
                          secular=True)
    np.testing.assert_allclose(env.signal, np.exp(-((2 * tau / 901.0) ** 2)), atol=1e-12)


@pytest.mark.parametrize("hf", [C13, SI29, HyperfineTensor(20.0, 14.0, 35.0, 40.0, nucleus="13C-I")])
def test_echo_matches_two_pulse_closed_form(hf):
    B = 253.0
    tau = np.linspace(0.0, 12.0, 2401)
    env = hahn_echo_eseem(GroundStateParams(B_mag=B), hf, np.inf, 2.0, tau, secular=True)
    np.testing.assert_allclose(env.signal, two_pulse_closed_form(hf, B, tau), atol=1e-6)


def test_manifold_frequencies_match_oracle():
    for B in (50.0, 253.0):
        for hf in (C13, SI29):
            np.testing.assert_allclose(manifold_frequencies(GroundStateParams(B_mag=B), hf),
                                       manifold_oracle(GroundStateParams(B_mag=B), hf), atol=1e-9)


def spectral_peaks(signal, dt, count):
    x = signal - signal.mean()
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    freqs = np.fft.rfftfreq(signal.size, dt)
    local = np.flatnonzero((spec[1:-1] > spec[:-2]) & (spec[1:-1] >= spec[2:])) + 1
    top = local[np.argsort(spec[local])[-count:]]
    return np.sort(freqs[top]), freqs[1]


def test_eseem_spectral_peaks_at_manifold_frequencies():
    p = GroundStateParams(B_mag=253.0)
    dt, N = 0.01, 4096
    tau = dt * np.arange(N)
    env = hahn_echo_eseem(p, SI29, 901.0, 2.0, tau)
    modulation = env.signal / np.exp(-((env.times / env.decay) ** env.n))
    peaks, bin_width = spectral_peaks(modulation, dt, 2)
    np.testing.assert_allclose(peaks, np.sort(manifold_oracle(p, SI29)), atol=bin_width)


def test_echo_needs_field():
    with pytest.raises(ValueError):
        hahn_echo_eseem(GroundStateParams(), C13, 900.0, 2.0, [0.0, 1.0])


# ---- decay and Rabi fits ---------------------------------------------------

def test_hahn_decay_fit():
    rng = np.random.default_rng(1)
    t = np.linspace(20.0, 2000.0, 100)
    y = stretched_exp(t, 1.0, 901.0, 2.0) + 0.02 * rng.standard_normal(t.size)
    fit = fit_decay(t, y, 0.02)
    assert fit.decay == pytest.approx(901.0, abs=51.0)
    assert fit.n == pytest.approx(2.0, abs=0.3)
    lo, hi = fit.intervals["decay"]
    assert lo < fit.decay < hi


def test_ramsey_fit():
    rng = np.random.default_rng(2)
    t = np.linspace(0.0, 6.0, 300)
    y = fringe_decay(t, 1.0, 1.8, 1.0, 2.5) + 0.02 * rng.standard_normal(t.size)
    fit = fit_decay(t, y, 0.02, model="fringe")
    assert fit.decay == pytest.approx(1.8, abs=0.1)
    assert fit.frequency == pytest.approx(2.5, abs=0.01)


def test_constant_signal_is_not_identifiable():
    t = np.linspace(0.0, 100.0, 50)
    with pytest.raises(NonIdentifiableError):
        fit_decay(t, np.ones_like(t), 0.01)


@pytest.mark.parametrize("contrast,noise,tol", [(0.075, 0.002, 0.005), (0.94, 0.01, 0.01)])
def test_rabi_round_trip(contrast, noise, tol):
    rng = np.random.default_rng(7)
    t = np.linspace(0.0, 2.0, 200)
    y = rabi_trace(3.0, contrast, 1.5, t) + noise * rng.standard_normal(t.size)
    fit = rabi_fit(t, y, noise)
    assert fit.contrast == pytest.approx(contrast, abs=tol)
    assert fit.frequency == pytest.approx(3.0, rel=0.01)


def test_rabi_trace_at_zero_time():
    for f, c, d in ((1.0, 0.3, 2.0), (7.0, 1.0, 0.1), (0.2, 0.0, 50.0)):
        assert rabi_trace(f, c, d, 0.0) == 1.0
    with pytest.raises(ValueError):
        rabi_trace(1.0, 1.2, 1.0, 0.0)


def test_with_field_copies():
    p = with_field(GroundStateParams(D=1.3), 50.0, 10.0, 20.0)
    assert (p.D, p.B_mag, p.B_theta, p.B_phi) == (1.3, 50.0, 10.0, 20.0)
