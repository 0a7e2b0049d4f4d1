"""S=1 ground-state spin: Zeeman and hyperfine Hamiltonian, ODMR lines,
hyperfine tensor fitting and coherence envelopes (Rabi, Ramsey, Hahn echo
with nuclear modulation).

Hamiltonians are in GHz; hyperfine constants in MHz; fields in gauss;
coherence times in microseconds.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import GAMMA_E, NUCLEAR_GAMMA
from .inference.lsq import (
    ConvergenceError,
    NonIdentifiableError,
    RankDeficientError,
    least_squares,
    z_value,
)
from .linalg import eigh_batch, spin1_operators, spin_half_operators

SX, SY, SZ = spin1_operators()
IX, IY, IZ = spin_half_operators()
E3 = np.eye(3)
E2 = np.eye(2)


@dataclass(frozen=True)
class GroundStateParams:
    D: float = 1.336          # GHz
    gamma_e: float = GAMMA_E  # MHz/G
    B_mag: float = 0.0        # G
    B_theta: float = 0.0      # degrees from the defect axis
    B_phi: float = 0.0        # degrees

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if self.B_mag < 0:
            raise ValueError(f"B_mag must be non-negative, got {self.B_mag}")
        if not 0.0 <= self.B_theta <= 180.0:
            raise ValueError(f"B_theta must lie in [0, 180], got {self.B_theta}")

    @property
    def field_vector(self):
        t, p = np.deg2rad(self.B_theta), np.deg2rad(self.B_phi)
        return self.B_mag * np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])


@dataclass(frozen=True)
class HyperfineTensor:
    Axx: float
    Ayy: float
    Azz: float
    theta: float                 # degrees, tilt about the defect-frame y axis
    nucleus: str = "13C-I"
    gamma_n: float | None = None  # kHz/G; defaults by nucleus
    tied: bool = False           # Ayy held equal to Axx

    def __post_init__(self):
        if not 0.0 <= self.theta <= 90.0:
            raise ValueError(f"theta must lie in [0, 90], got {self.theta}")
        if self.tied and self.Ayy != self.Axx:
            raise ValueError("tied tensor requires Ayy == Axx")
        if self.gamma_n is None:
            object.__setattr__(self, "gamma_n", NUCLEAR_GAMMA.get(self.nucleus, 0.0))

    def lab_tensor(self):
        """Principal tensor rotated by theta about y, MHz."""
        t = np.deg2rad(self.theta)
        R = np.array([[np.cos(t), 0, np.sin(t)], [0, 1, 0], [-np.sin(t), 0, np.cos(t)]])
        return R @ np.diag([self.Axx, self.Ayy, self.Azz]) @ R.T


@dataclass
class CoherenceEnvelope:
    times: np.ndarray    # 2*tau or free-evolution delay, us
    signal: np.ndarray
    decay: float         # T2 or T2*, us
    n: float


def effective_az(hf):
    """Magnitude of the tilted tensor's z column, MHz."""
    t = np.deg2rad(hf.theta)
    return float(np.hypot(hf.Azz * np.cos(t), hf.Axx * np.sin(t)))


def _hamiltonian_from(D, gamma_e, Bvec, A=None, gamma_n=0.0, secular=False):
    Hs = D * (SZ @ SZ - 2.0 / 3.0 * E3) + 1e-3 * gamma_e * (Bvec[0] * SX + Bvec[1] * SY + Bvec[2] * SZ)
    if A is None:
        return Hs
    H = np.kron(Hs, E2)
    S = (SX, SY, SZ)
    I = (IX, IY, IZ)
    for i in range(3):
        if secular and i != 2:
            continue
        for j in range(3):
            if A[i, j] != 0.0:
                H = H + 1e-3 * A[i, j] * np.kron(S[i], I[j])
    H = H - 1e-6 * gamma_n * np.kron(E3, Bvec[0] * IX + Bvec[1] * IY + Bvec[2] * IZ)
    return H


def gs_hamiltonian(params, hf=None, *, secular=False):
    """Ground-state Hamiltonian in GHz.

    Dimension 3 without a nucleus, 6 (electron x nucleus) with one I=1/2
    nucleus. ``secular`` keeps only the Sz-proportional hyperfine terms.
    """
    Bvec = params.field_vector
    if hf is None:
        return _hamiltonian_from(params.D, params.gamma_e, Bvec)
    return _hamiltonian_from(params.D, params.gamma_e, Bvec, hf.lab_tensor(), hf.gamma_n, secular)


def _electron_weights(V, nuclear_dim):
    """Weight of each eigenvector on the electron sublevels (+1, 0, -1)."""
    pop = np.abs(V) ** 2
    shape = pop.shape[:-2] + (3, nuclear_dim, pop.shape[-1])
    return pop.reshape(shape).sum(axis=-2)


def _transitions(H, nuclear_dim):
    """All (frequency GHz, |<i|Sx|j>|^2, branch sign) between mS=0-like and
    mS=+/-1-like eigenstates of a batch of Hamiltonians."""
    w, V = eigh_batch(H)
    ew = _electron_weights(V, nuclear_dim)          # (..., 3, n)
    zero = ew[..., 1, :] > 0.5
    sxf = np.kron(SX, np.eye(nuclear_dim))
    M = np.abs(np.conj(np.swapaxes(V, -1, -2)) @ sxf @ V) ** 2
    sign = np.sign(ew[..., 0, :] - ew[..., 2, :])
    return w, zero, M, sign


def _merge_lines(freqs, strengths, tol=1e-9):
    order = np.argsort(freqs, kind="stable")
    out_f, out_s = [], []
    for f, s in zip(np.asarray(freqs)[order], np.asarray(strengths)[order]):
        if out_f and f - out_f[-1] <= tol:
            out_s[-1] += s
        else:
            out_f.append(f)
            out_s.append(s)
    s = np.array(out_s)
    if s.size and s.max() > 0:
        s = s / s.max()
    return np.array(out_f), s


def odmr_lines(params, hf_list=(), *, min_strength=1e-9):
    """ODMR resonances as a list of (frequency GHz, relative strength)."""
    hf_list = list(hf_list) if hf_list is not None else []
    if isinstance(hf_list, HyperfineTensor):
        hf_list = [hf_list]
    if len(hf_list) > 1:
        raise ValueError("one nucleus per call; compose multi-nucleus spectra by convolution")
    hf = hf_list[0] if hf_list else None
    nd = 2 if hf is not None else 1
    H = gs_hamiltonian(params, hf)
    w, zero, M, _ = _transitions(H[None], nd)
    w, zero, M = w[0], zero[0], M[0]
    fr, st = [], []
    for i in np.flatnonzero(zero):
        for j in np.flatnonzero(~zero):
            fr.append(abs(w[j] - w[i]))
            st.append(M[i, j])
    f, s = _merge_lines(fr, st)
    keep = s >= min_strength
    return list(zip(f[keep].tolist(), s[keep].tolist()))


# ---------------------------------------------------------------- fitting

@dataclass
class HyperfineFit:
    tensor: HyperfineTensor
    intervals: dict           # name -> (lo, hi), 95%
    result: object = field(repr=False)
    tied: bool = True

    def as_dict(self):
        t = self.tensor
        est = {"Axx": t.Axx, "Ayy": t.Ayy, "Azz": t.Azz, "theta": t.theta}
        return {
            "nucleus": t.nucleus,
            "tied_ayy": self.tied,
            "parameters": {k: {"estimate": float(est[k]), "lo": float(v[0]), "hi": float(v[1])}
                           for k, v in self.intervals.items()},
            "A_z": effective_az(t),
        }


_S6 = np.array([np.kron(op, E2) for op in (SX, SY, SZ)])
_I6 = np.array([np.kron(E3, op) for op in (IX, IY, IZ)])
_SI6 = np.array([[np.kron(a, b) for b in (IX, IY, IZ)] for a in (SX, SY, SZ)])
_ZFS6 = np.kron(SZ @ SZ - 2.0 / 3.0 * E3, E2)


def _settings_hamiltonians(D, gamma_e, settings, A, gamma_n):
    """6x6 Hamiltonians for an (n, 3) array of (B_mag, B_theta, B_phi)."""
    b, th, ph = np.asarray(settings, dtype=float).T
    t, p = np.deg2rad(th), np.deg2rad(ph)
    Bvec = b[:, None] * np.column_stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])
    hf = 1e-3 * np.einsum("ij,ijkl->kl", A, _SI6)
    zee = np.einsum("ni,ikl->nkl", Bvec, 1e-3 * gamma_e * _S6 - 1e-6 * gamma_n * _I6)
    return D * _ZFS6 + hf + zee


def predicted_resonances(params, hf, B_mag, B_theta, B_phi, observed, *, min_strength=0.05):
    """Nearest allowed ODMR line to every observed frequency (GHz)."""
    B_mag, B_theta, B_phi, observed = (np.asarray(a, dtype=float) for a in (B_mag, B_theta, B_phi, observed))
    settings, inverse = np.unique(np.column_stack([B_mag, B_theta, B_phi]), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    H = _settings_hamiltonians(params.D, params.gamma_e, settings, hf.lab_tensor(), hf.gamma_n)
    w, V = eigh_batch(H)
    ew = _electron_weights(V, 2)
    order = np.argsort(-ew[:, 1, :], axis=-1)          # two mS=0-like states first
    zi, zj = order[:, :2], order[:, 2:]
    wi = np.take_along_axis(w, zi, -1)
    wj = np.take_along_axis(w, zj, -1)
    f = np.abs(wj[:, None, :] - wi[:, :, None]).reshape(len(settings), -1)
    sx = np.conj(np.swapaxes(V, -1, -2)) @ _S6[0] @ V
    M = np.abs(sx) ** 2
    s = np.take_along_axis(np.take_along_axis(M, zi[:, :, None], 1), zj[:, None, :], 2).reshape(len(settings), -1)
    s = s / s.max(axis=1, keepdims=True)
    f = np.where(s >= min_strength, f, np.inf)
    cand = f[inverse]
    k = np.argmin(np.abs(observed[:, None] - cand), axis=1)
    return cand[np.arange(observed.size), k]


THETA_STARTS = (15.0, 45.0, 75.0)


def fit_hyperfine(B_mag, B_theta, frequency, sigma_mhz, *, B_phi=None, params=None,
                  init=None, nucleus="13C-I", gamma_n=None, tie_ayy=None, level=0.95):
    """Fit (Axx, Ayy, Azz, theta) to ODMR resonances recorded over several fields.

    Frequencies in GHz, uncertainties in MHz. ``tie_ayy=None`` fits Ayy
    freely first and ties it to Axx when its 95% half-width exceeds
    max(2 MHz, 10% of Axx).
    """
    B_mag = np.asarray(B_mag, dtype=float)
    B_theta = np.asarray(B_theta, dtype=float)
    B_phi = np.zeros_like(B_mag) if B_phi is None else np.asarray(B_phi, dtype=float)
    frequency = np.asarray(frequency, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma_mhz, dtype=float) * 1e-3, frequency.shape)
    n_settings = len({(a, b, c) for a, b, c in zip(B_mag, B_theta, B_phi)})
    if frequency.size < 8 or n_settings < 3:
        raise NonIdentifiableError(
            f"{frequency.size} resonances over {n_settings} field settings; need >= 8 over >= 3 "
            "settings to separate Axx, Azz and theta"
        )
    params = params or GroundStateParams()
    if init is None:
        init = HyperfineTensor(50.0, 50.0, 100.0, 60.0, nucleus=nucleus, gamma_n=gamma_n)
    gn = init.gamma_n if gamma_n is None else gamma_n

    def make(p, tied):
        if tied:
            axx, azz, th = p
            ayy = axx
        else:
            axx, ayy, azz, th = p
        return HyperfineTensor(axx, ayy, azz, float(np.clip(th, 0.0, 90.0)), nucleus, gn, tied=False)

    def run(tied, theta0=None, max_iter=200):
        th0 = init.theta if theta0 is None else theta0
        names = ["Axx", "Azz", "theta"] if tied else ["Axx", "Ayy", "Azz", "theta"]
        x0 = [init.Axx, init.Azz, th0] if tied else [init.Axx, init.Ayy, init.Azz, th0]
        bounds = [(None, None)] * (len(names) - 1) + [(0.0, 90.0)]
        model = lambda p: predicted_resonances(params, make(p, tied), B_mag, B_theta, B_phi, frequency)
        try:
            return least_squares(model, frequency, 1.0 / sigma ** 2, x0, bounds=bounds, names=names,
                                 max_iter=max_iter)
        except RankDeficientError as exc:
            raise NonIdentifiableError(f"hyperfine tensor not identifiable from these fields: {exc}") from exc

    res = None
    if tie_ayy is None:
        try:
            res = run(False, max_iter=60)
            half = z_value(level) * res.stderr[1]
            tie_ayy = half > max(2.0, 0.1 * abs(res.x[0]))
        except (NonIdentifiableError, ConvergenceError):
            tie_ayy = True
    if tie_ayy or res is None:
        # the tilt angle is weakly determined for near-isotropic tensors and
        # the cost has several shallow minima; keep the best of a few starts
        best = None
        for th0 in dict.fromkeys([init.theta] + list(THETA_STARTS)):
            try:
                cand = run(bool(tie_ayy), th0)
            except ConvergenceError:
                continue
            if best is None or cand.chi2 < best.chi2:
                best = cand
        if best is None:
            best = run(bool(tie_ayy))
        res = best
    iv = res.interval(level)
    if tie_ayy:
        axx, azz, th = res.x
        tensor = HyperfineTensor(axx, axx, azz, float(np.clip(th, 0, 90)), nucleus, gn, tied=True)
        intervals = {"Axx": iv[0], "Ayy": iv[0], "Azz": iv[1], "theta": iv[2]}
    else:
        axx, ayy, azz, th = res.x
        tensor = HyperfineTensor(axx, ayy, azz, float(np.clip(th, 0, 90)), nucleus, gn)
        intervals = dict(zip(["Axx", "Ayy", "Azz", "theta"], iv))
    intervals = {k: (float(v[0]), float(v[1])) for k, v in intervals.items()}
    return HyperfineFit(tensor, intervals, res, bool(tie_ayy))


# ------------------------------------------------------------- coherence

def _manifold_states(params):
    """Electron eigenstates adiabatically connected to mS=0 and mS=-1."""
    w, V = np.linalg.eigh(gs_hamiltonian(params))
    a = int(np.argmax(np.abs(V[1, :]) ** 2))
    b = int(np.argmax(np.abs(V[2, :]) ** 2))
    return V[:, a], V[:, b]


def hahn_echo_eseem(params, hf, T2, n, tau, *, secular=False):
    """Two-pulse echo envelope with nuclear modulation.

    Ideal instantaneous pi/2 and pi pulses drive the transition between the
    electron states connected to mS=0 and mS=-1; free evolution uses the
    full 6-level Hamiltonian. ``tau`` is the interpulse delay in us; the
    returned envelope is sampled at 2*tau and multiplied by
    exp(-(2 tau / T2)^n).
    """
    if not params.B_mag > 0:
        raise ValueError("the echo simulation needs a nonzero field")
    tau = np.asarray(tau, dtype=float)
    H = gs_hamiltonian(params, hf, secular=secular)
    w, V = np.linalg.eigh(H)
    a, b = _manifold_states(params)
    X = np.outer(a, b.conj()) + np.outer(b, a.conj())
    Pi = np.outer(a, a.conj()) + np.outer(b, b.conj())

    def pulse(angle):
        Pe = (E3 - Pi) + np.cos(angle / 2) * Pi - 1j * np.sin(angle / 2) * X
        return np.kron(Pe, E2)

    P90, P180 = pulse(np.pi / 2), pulse(np.pi)
    rho0 = np.kron(np.outer(a, a.conj()), E2 / 2)
    obs = np.kron(np.outer(a, b.conj()), E2)        # Tr(rho |a><b|) = <b|rho|a>

    phase = np.exp(-2j * np.pi * np.outer(tau * 1e3, w))          # (N, 6)
    U = np.einsum("ij,nj,kj->nik", V, phase, V.conj())             # exp(-i 2 pi H tau)
    rho1 = P90 @ rho0 @ P90.conj().T
    L = U @ P180 @ U                                               # (N, 6, 6)
    rho = L @ rho1 @ np.conj(np.swapaxes(L, -1, -2))
    c = np.einsum("nij,ji->n", rho, obs)
    ref = np.trace((P180 @ rho1 @ P180.conj().T) @ obs)
    mod = np.real(c / ref)
    times = 2.0 * tau
    decay = np.exp(-((times / T2) ** n))
    return CoherenceEnvelope(times, mod * decay, float(T2), float(n))


def manifold_frequencies(params, hf):
    """Nuclear transition frequencies (MHz) inside the mS=0-like and
    mS=-1-like manifolds, from 6-level eigenvalue differences."""
    w, V = np.linalg.eigh(gs_hamiltonian(params, hf))
    ew = _electron_weights(V, 2)
    zero = np.argsort(-ew[1])[:2]
    minus = np.argsort(-ew[2])[:2]
    return 1e3 * abs(w[zero[1]] - w[zero[0]]), 1e3 * abs(w[minus[1]] - w[minus[0]])


# ------------------------------------------------------------- decay fits

@dataclass
class DecayFit:
    model: str
    decay: float
    n: float
    amplitude: float
    frequency: float | None
    intervals: dict
    result: object = field(repr=False)

    def as_dict(self):
        est = {"decay": self.decay, "n": self.n, "amplitude": self.amplitude}
        if self.frequency is not None:
            est["frequency"] = self.frequency
        return {
            "model": self.model,
            "parameters": {k: {"estimate": float(est[k]), "lo": float(self.intervals[k][0]),
                               "hi": float(self.intervals[k][1])} for k in est},
        }


def stretched_exp(t, amplitude, decay, n):
    return amplitude * np.exp(-((np.asarray(t) / decay) ** n))


def fringe_decay(t, amplitude, decay, n, frequency):
    t = np.asarray(t)
    return stretched_exp(t, amplitude, decay, n) * np.cos(2 * np.pi * frequency * t)


def _dominant_frequency(t, y):
    t = np.asarray(t)
    dt = np.median(np.diff(t))
    grid = np.arange(t[0], t[-1] + 0.5 * dt, dt)
    yi = np.interp(grid, t, y - np.mean(y))
    spec = np.abs(np.fft.rfft(yi, n=8 * grid.size))
    f = np.fft.rfftfreq(8 * grid.size, dt)
    return float(f[1:][np.argmax(spec[1:])])


def fit_decay(times, signal, sigma=None, model="stretched", *, n_init=None, level=0.95):
    """Fit a stretched-exponential (echo) or damped-fringe (Ramsey) decay.

    ``times`` in us. Returns point estimates and 95% intervals. A decay
    constant beyond the sampled window, or a flat likelihood along it,
    raises :class:`NonIdentifiableError`.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(signal, dtype=float)
    if t.size < 10:
        raise ValueError(f"need at least 10 points, got {t.size}")
    if model not in ("stretched", "fringe"):
        raise ValueError(f"unknown decay model {model!r}")
    absolute = sigma is not None
    w = 1.0 / np.broadcast_to(np.asarray(sigma, dtype=float), y.shape) ** 2 if absolute else np.ones_like(y)

    amp0 = float(np.max(np.abs(y[:3]))) or 1.0
    env = np.abs(y) / amp0
    below = np.flatnonzero(env < np.exp(-1))
    T0 = float(t[below[0]]) if below.size else float(t[-1])
    n0 = n_init if n_init is not None else (2.0 if model == "stretched" else 1.0)
    tmax = float(t[-1])
    if model == "stretched":
        f = lambda p: stretched_exp(t, *p)
        x0 = [amp0, max(T0, 1e-6 * tmax), n0]
        names = ["amplitude", "decay", "n"]
        bounds = [(None, None), (1e-9 * tmax, 1e3 * tmax), (0.5, 4.0)]
    else:
        f = lambda p: fringe_decay(t, *p)
        x0 = [amp0, max(T0, 1e-6 * tmax), n0, _dominant_frequency(t, y)]
        names = ["amplitude", "decay", "n", "frequency"]
        bounds = [(None, None), (1e-9 * tmax, 1e3 * tmax), (0.5, 4.0), (0.0, None)]
    try:
        res = least_squares(f, y, w, x0, bounds=bounds, names=names)
    except RankDeficientError as exc:
        raise NonIdentifiableError(f"decay constant not constrained by the data: {exc}") from exc
    if not absolute:
        res.cov = res.cov * res.chi2 / res.dof
    decay = res.x[1]
    if decay > tmax or res.stderr[1] > decay:
        raise NonIdentifiableError(
            f"fitted decay constant {decay:.4g} exceeds the sampled window ({tmax:.4g}); "
            "the infinite-decay direction is not excluded"
        )
    iv = res.interval(level)
    intervals = {"amplitude": tuple(iv[0]), "decay": tuple(iv[1]), "n": tuple(iv[2])}
    freq = None
    if model == "fringe":
        freq = float(res.x[3])
        intervals["frequency"] = tuple(iv[3])
    return DecayFit(model, float(decay), float(res.x[2]), float(res.x[0]), freq, intervals, res)


def rabi_trace(frequency, contrast, decay, t):
    """Normalised PL under a Rabi drive: 1 - (C/2)(1 - cos 2 pi f t) e^(-t/decay).

    ``frequency`` in MHz, ``decay`` and ``t`` in us.
    """
    if not 0.0 <= contrast <= 1.0:
        raise ValueError(f"contrast must lie in [0, 1], got {contrast}")
    t = np.asarray(t, dtype=float)
    return 1.0 - 0.5 * contrast * (1.0 - np.cos(2 * np.pi * frequency * t)) * np.exp(-t / decay)


@dataclass
class RabiFit:
    frequency: float
    contrast: float
    decay: float
    intervals: dict
    result: object = field(repr=False)

    def as_dict(self):
        est = {"frequency": self.frequency, "contrast": self.contrast, "decay": self.decay}
        return {"parameters": {k: {"estimate": float(v), "lo": float(self.intervals[k][0]),
                                   "hi": float(self.intervals[k][1])} for k, v in est.items()}}


def rabi_fit(t, signal, sigma=None, *, level=0.95):
    t = np.asarray(t, dtype=float)
    y = np.asarray(signal, dtype=float)
    absolute = sigma is not None
    w = 1.0 / np.broadcast_to(np.asarray(sigma, dtype=float), y.shape) ** 2 if absolute else np.ones_like(y)
    f0 = _dominant_frequency(t, y)
    c0 = float(np.clip(1.0 - y.min(), 1e-3, 1.0))
    x0 = [f0, c0, 2.0 * float(t[-1])]
    res = least_squares(lambda p: rabi_trace(p[0], float(np.clip(p[1], 0, 1)), p[2], t), y, w, x0,
                        bounds=[(0.0, None), (0.0, 1.0), (1e-6 * t[-1], None)],
                        names=["frequency", "contrast", "decay"], check_rank=True)
    if not absolute:
        res.cov = res.cov * res.chi2 / res.dof
    iv = res.interval(level)
    intervals = {k: tuple(v) for k, v in zip(["frequency", "contrast", "decay"], iv)}
    return RabiFit(float(res.x[0]), float(res.x[1]), float(res.x[2]), intervals, res)


def with_field(params, B_mag, B_theta=0.0, B_phi=0.0):
    return replace(params, B_mag=B_mag, B_theta=B_theta, B_phi=B_phi)


def synthetic_resonances(params, hf, fields, angles, *, noise_mhz=1.0, min_strength=0.2, seed=0):
    """Allowed ODMR lines over a grid of field magnitudes and polar angles,
    with Gaussian frequency noise. Returns (B_mag, B_theta, frequency GHz)."""
    rng = np.random.default_rng(seed)
    rows = []
    for b in fields:
        for th in angles:
            for f, _ in odmr_lines(with_field(params, b, th, params.B_phi), [hf], min_strength=min_strength):
                rows.append((b, th, f))
    out = np.array(rows, dtype=float).reshape(-1, 3)
    if noise_mhz > 0:
        out[:, 2] += 1e-3 * noise_mhz * rng.standard_normal(len(out))
    return out[:, 0], out[:, 1], out[:, 2]
