"""Five-level optical-cycle rate model.

Levels are ordered (G0, G1, E0, E1, S): ground mS=0, ground mS=+/-1
(lumped), the matching excited levels and the singlet shelf. Rates are in
1/ns, times in ns and optical power in mW. Populations obey dp/dt = G p
with G a column-conserving generator.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .constants import (
    CW_POWERS_MW,
    POLARIZATION,
    PUMP_PER_MW,
    SINGLET_RATE,
    TAU_MS0,
    TAU_MS1,
    TAU_RADIATIVE,
)
from .inference.lsq import ConvergenceError, NonIdentifiableError, least_squares
from .linalg import propagate_grid, steady_state

G0, G1, E0, E1, S = range(5)
LEVELS = ("G0", "G1", "E0", "E1", "S")
PREPARATIONS = ("ms0", "ms1")
MODES = ("off-resonant", "resonant-ms0")


class FitDegeneracyError(NonIdentifiableError):
    """The two lifetime components cannot be told apart."""


@dataclass(frozen=True)
class RateParams:
    k_r: float = 1.0 / TAU_RADIATIVE
    G_isc0: float = 1.0 / TAU_MS0 - 1.0 / TAU_RADIATIVE
    G_isc1: float = 1.0 / TAU_MS1 - 1.0 / TAU_RADIATIVE
    G_s: float = SINGLET_RATE
    beta: float = PUMP_PER_MW
    bg: float = 0.0
    polarization: float = POLARIZATION   # ground mS=0 fraction after initialisation
    pi_fidelity: float = 1.0             # population transferred by a pi pulse

    def __post_init__(self):
        for name in ("k_r", "G_isc0", "G_isc1", "G_s", "beta", "bg"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite non-negative rate, got {v}")
        for name in ("polarization", "pi_fidelity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def tau0(self):
        return 1.0 / (self.k_r + self.G_isc0)

    @property
    def tau1(self):
        return 1.0 / (self.k_r + self.G_isc1)

    @classmethod
    def from_lifetimes(cls, tau0=TAU_MS0, tau1=TAU_MS1, tau_r=TAU_RADIATIVE, **kw):
        """ISC rates implied by the apparent and radiative lifetimes."""
        k_r = 1.0 / tau_r
        return cls(k_r=k_r, G_isc0=1.0 / tau0 - k_r, G_isc1=1.0 / tau1 - k_r, **kw)


@dataclass(frozen=True)
class PopulationState:
    populations: np.ndarray   # (G0, G1, E0, E1, S)
    time: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if p.shape != (5,):
            raise ValueError(f"expected 5 populations, got shape {p.shape}")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("populations must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"populations sum to {p.sum():.12g}, not 1")
        object.__setattr__(self, "populations", p)

    def as_dict(self):
        return dict(zip(LEVELS, self.populations.tolist()))


@dataclass
class PlTrace:
    times: np.ndarray
    signal: np.ndarray
    power: float | None = None
    preparation: str | None = None
    sigma: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.times.shape != self.signal.shape:
            raise ValueError("times and signal differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.preparation is not None and self.preparation not in PREPARATIONS:
            raise ValueError(f"unknown preparation {self.preparation!r}")
        if self.sigma is not None:
            self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.signal.shape).copy()


def build_generator(p, pump_on=True, power=0.0, resonant_ms0_only=False, flip_probability=0.0):
    """5x5 rate generator; column j holds the rates out of level j.

    In resonant mode only G0 is pumped and every optical cycle through E0
    leaks to G1 with ``flip_probability`` (rate p * k_r).
    """
    if power < 0:
        raise ValueError(f"power must be non-negative, got {power}")
    if not 0.0 <= flip_probability <= 1.0:
        raise ValueError(f"flip probability must lie in [0, 1], got {flip_probability}")
    G = np.zeros((5, 5))

    def rate(src, dst, r):
        G[dst, src] += r
        G[src, src] -= r

    pump = p.beta * power if pump_on else 0.0
    rate(G0, E0, pump)
    if not resonant_ms0_only:
        rate(G1, E1, pump)
    leak = flip_probability * p.k_r if resonant_ms0_only else 0.0
    rate(E0, G0, p.k_r - leak)
    rate(E0, G1, leak)
    rate(E1, G1, p.k_r)
    rate(E0, S, p.G_isc0)
    rate(E1, S, p.G_isc1)
    rate(S, G0, p.G_s)
    return G


def ground_state(p, preparation):
    """Initial populations after spin initialisation (and a pi pulse for ms1)."""
    if preparation not in PREPARATIONS:
        raise ValueError(f"preparation must be one of {PREPARATIONS}, got {preparation!r}")
    P = p.polarization
    if preparation == "ms1":
        f = p.pi_fidelity
        P = (1.0 - f) * P + f * (1.0 - P)
    return np.array([P, 1.0 - P, 0.0, 0.0, 0.0])


def _pl(p, pops):
    return p.k_r * (pops[..., E0] + pops[..., E1]) + p.bg


def pulsed_pl(p, P0, t):
    """PL decay after a short pulse that left P0 : (1 - P0) in E0 : E1."""
    if not 0.0 <= P0 <= 1.0:
        raise ValueError(f"P0 must lie in [0, 1], got {P0}")
    t = np.asarray(t, dtype=float)
    x0 = np.array([0.0, 0.0, P0, 1.0 - P0, 0.0])
    pops = propagate_grid(build_generator(p, pump_on=False), x0, t)
    return PlTrace(t, _pl(p, pops), power=None, preparation=None)


def biexponential(t, tau0, tau1, frac0, amplitude=1.0, bg=0.0):
    t = np.asarray(t, dtype=float)
    return amplitude * (frac0 * np.exp(-t / tau0) + (1.0 - frac0) * np.exp(-t / tau1)) + bg


@dataclass
class BiexpResult:
    tau0: float
    tau1: float
    polarization: float
    amplitude: float
    bg: float
    intervals: dict
    result: object = field(repr=False)

    def as_dict(self):
        est = {"tau0": self.tau0, "tau1": self.tau1, "polarization": self.polarization,
               "amplitude": self.amplitude, "bg": self.bg}
        return {"parameters": {k: {"estimate": float(v), "lo": float(self.intervals[k][0]),
                                   "hi": float(self.intervals[k][1])} for k, v in est.items()}}


def extract_biexponential(trace0, trace_pi, *, pi_fidelity=1.0, init=None, level=0.95):
    """Joint fit of the theta=0 and theta=pi lifetime traces.

    Both share (tau0, tau1, amplitude, background); the mS=0 amplitude
    fraction is the polarization P in the first trace and
    (1 - f) P + f (1 - P) in the second, with f the pi-pulse fidelity.
    """
    t = trace0.times
    if trace_pi.times.shape != t.shape or np.any(trace_pi.times != t):
        raise ValueError("both traces must share one time grid")
    y = np.concatenate([trace0.signal, trace_pi.signal])
    if trace0.sigma is not None and trace_pi.sigma is not None:
        w = 1.0 / np.concatenate([trace0.sigma, trace_pi.sigma]) ** 2
        absolute = True
    else:
        w = np.ones_like(y)
        absolute = False

    def model(x):
        tau0, tau1, P, A, b = x
        q = (1.0 - pi_fidelity) * P + pi_fidelity * (1.0 - P)
        return np.concatenate([biexponential(t, tau0, tau1, P, A, b), biexponential(t, tau0, tau1, q, A, b)])

    if init is None:
        init = (TAU_MS0, TAU_MS1, 0.9, float(max(trace0.signal[0], trace_pi.signal[0])), 0.0)
    names = ["tau0", "tau1", "polarization", "amplitude", "bg"]
    bounds = [(1e-3, None), (1e-3, None), (0.0, 1.0), (0.0, None), (None, None)]
    res = least_squares(model, y, w, init, bounds=bounds, names=names, xtol=1e-14)
    if pi_fidelity == 1.0 and res.x[2] < 0.5:
        # (tau0, tau1, P) and (tau1, tau0, 1 - P) give identical traces; the
        # polarization is the majority fraction by definition
        M = np.eye(5)[[1, 0, 2, 3, 4]]
        M[2, 2] = -1.0
        res.x = M @ res.x + np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        res.cov = M @ res.cov @ M.T
        res.jac = res.jac @ M.T
    tau0, tau1 = res.x[:2]
    if max(tau0, tau1) / min(tau0, tau1) < 1.05:
        raise FitDegeneracyError(
            f"lifetimes {tau0:.4g} and {tau1:.4g} ns differ by less than 5%; components indistinguishable"
        )
    if not absolute:
        res.cov = res.cov * res.chi2 / res.dof
    iv = res.interval(level)
    intervals = {n: (float(a), float(b)) for n, (a, b) in zip(names, iv)}
    return BiexpResult(float(tau0), float(tau1), float(res.x[2]), float(res.x[3]), float(res.x[4]),
                       intervals, res)


def cw_pl(p, power, preparation, t, *, mode="off-resonant", flip_probability=0.0):
    """PL under continuous excitation starting from a prepared ground state."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    t = np.asarray(t, dtype=float)
    G = build_generator(p, True, power, mode == "resonant-ms0", flip_probability)
    pops = propagate_grid(G, ground_state(p, preparation), t)
    return PlTrace(t, _pl(p, pops), power=power, preparation=preparation)


def cw_populations(p, power, preparation, t, *, mode="off-resonant", flip_probability=0.0):
    G = build_generator(p, True, power, mode == "resonant-ms0", flip_probability)
    return propagate_grid(G, ground_state(p, preparation), np.asarray(t, dtype=float))


def cw_steady_state(p, power, *, mode="off-resonant", flip_probability=0.0):
    return steady_state(build_generator(p, True, power, mode == "resonant-ms0", flip_probability))


# ----------------------------------------------------------- global fit

@dataclass
class RateFit:
    params: RateParams
    scale: float
    intervals: dict
    residuals: dict            # trace label -> weighted residual norm
    result: object = field(repr=False)

    def as_dict(self):
        est = {"k_r": self.params.k_r, "G_s": self.params.G_s, "beta": self.params.beta, "scale": self.scale}
        out = {k: {"estimate": float(v), "lo": float(self.intervals[k][0]), "hi": float(self.intervals[k][1])}
               for k, v in est.items()}
        fixed = {k: float(getattr(self.params, k)) for k in ("G_isc0", "G_isc1", "polarization", "bg")}
        return {"parameters": out, "constrained": fixed,
                "trace_residual_norms": {k: float(v) for k, v in sorted(self.residuals.items())}}


def synthetic_cw_bundle(p, powers=CW_POWERS_MW, t=None, *, noise=0.03, scale=1.0, seed=0):
    """Two CW traces (ms0, ms1 preparation) per power with multiplicative noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(0.0, 600.0, 2.0) if t is None else np.asarray(t, dtype=float)
    traces = []
    for P in powers:
        for prep in PREPARATIONS:
            clean = scale * cw_pl(p, P, prep, t).signal
            sig = noise * np.abs(clean)
            traces.append(PlTrace(t, clean + sig * rng.standard_normal(t.size), P, prep,
                                  sigma=np.maximum(sig, 1e-12), label=f"{P:g}mW-{prep}"))
    return traces


def global_rate_fit(traces, tau0, tau1, polarization, *, bg=0.0, init=None, pi_fidelity=1.0, level=0.95):
    """Shared rate fit over CW traces at several powers and two preparations.

    Free parameters are k_r, G_s, beta and a detection scale. The ISC rates
    follow from the lifetimes, G_isc_i = 1/tau_i - k_r, and the initial
    polarization is held at its lifetime-fit value.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces supplied")
    for tr in traces:
        if tr.power is None or not tr.power > 0 or tr.preparation is None:
            raise ValueError(f"trace {tr.label!r} needs a positive power and a preparation")
    y = np.concatenate([tr.signal for tr in traces])
    if all(tr.sigma is not None for tr in traces):
        w = 1.0 / np.concatenate([tr.sigma for tr in traces]) ** 2
        absolute = True
    else:
        w = np.ones_like(y)
        absolute = False
    base = RateParams(polarization=polarization, pi_fidelity=pi_fidelity, bg=bg)
    kr_max = 1.0 / max(tau0, tau1)

    def params_of(x):
        k_r, G_s, beta, _ = x
        return replace(base, k_r=k_r, G_isc0=1.0 / tau0 - k_r, G_isc1=1.0 / tau1 - k_r, G_s=G_s, beta=beta)

    def model(x):
        pr = params_of(x)
        # fixed order keeps the summed cost reproducible
        return np.concatenate([x[3] * cw_pl(pr, tr.power, tr.preparation, tr.times).signal for tr in traces])

    if init is None:
        init = (0.8 * kr_max, 0.05, 0.03, float(np.max(y)) / (0.8 * kr_max) * 0.5)
    names = ["k_r", "G_s", "beta", "scale"]
    bounds = [(1e-6, kr_max), (1e-6, None), (1e-6, None), (1e-12, None)]
    try:
        res = least_squares(model, y, w, init, bounds=bounds, names=names)
    except ConvergenceError as exc:
        per = _per_trace_norms(traces, model(np.asarray(init, dtype=float)), y, w)
        raise ConvergenceError(f"global rate fit failed; per-trace residual norms {per}",
                               exc.residual_norm) from exc
    if not absolute:
        res.cov = res.cov * res.chi2 / res.dof
    iv = res.interval(level)
    intervals = {n: (float(a), float(b)) for n, (a, b) in zip(names, iv)}
    per = _per_trace_norms(traces, model(res.x), y, w)
    return RateFit(params_of(res.x), float(res.x[3]), intervals, per, res)


def _per_trace_norms(traces, pred, y, w):
    out, k = {}, 0
    for i, tr in enumerate(traces):
        n = tr.times.size
        r = np.sqrt(w[k:k + n]) * (pred[k:k + n] - y[k:k + n])
        out[tr.label or f"trace{i}"] = float(np.sqrt(np.sum(r * r)))
        k += n
    return out


# ----------------------------------------------------- photon statistics

def g2_curve(p, power, tau):
    """Normalised second-order correlation g2(tau) under CW pumping.

    After a detected photon the system restarts from the ground state the
    radiative jump left it in; g2 is the ensuing PL divided by its
    steady-state value. Background is not included.
    """
    if not power > 0:
        raise ValueError(f"power must be positive, got {power}")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    G = build_generator(p, True, power)
    ss = steady_state(G)
    emitted = ss[E0] + ss[E1]
    if emitted <= 0:
        raise ValueError("no steady-state excited population")
    x0 = np.array([ss[E0], ss[E1], 0.0, 0.0, 0.0]) / emitted
    order = np.argsort(tau, kind="stable")
    pops = propagate_grid(G, x0, tau[order])
    out = np.empty_like(tau)
    out[order] = (pops[:, E0] + pops[:, E1]) / emitted
    return out


def background_correct_g2(raw, rho):
    """Remove uncorrelated background: (raw - (1 - rho^2)) / rho^2."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    raw = np.asarray(raw, dtype=float)
    out = (raw - (1.0 - rho * rho)) / (rho * rho)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------- readout

def integrated_pl(p, power, preparation, window, *, mode="off-resonant", flip_probability=0.0):
    """Exact integral of PL over [0, window] via an augmented exponential."""
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    G = build_generator(p, True, power, mode == "resonant-ms0", flip_probability)
    A = np.zeros((6, 6))
    A[:5, :5] = G
    A[5, E0] = A[5, E1] = p.k_r
    x0 = np.append(ground_state(p, preparation), 0.0)
    return float((expm(A * window) @ x0)[5]) + p.bg * window


def readout_contrast(p, power, window, mode="off-resonant", *, flip_probability=0.0):
    """1 - (integrated PL | ms1 prep) / (integrated PL | ms0 prep)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "off-resonant" and flip_probability:
        raise ValueError("spin-flip leakage only enters in resonant-ms0 mode")
    bright = integrated_pl(p, power, "ms0", window, mode=mode, flip_probability=flip_probability)
    dark = integrated_pl(p, power, "ms1", window, mode=mode, flip_probability=flip_probability)
    if bright <= 0:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - dark / bright)))


# ---------------------------------------------------------- saturation

def saturation_curve(power, R_max, P_sat):
    power = np.asarray(power, dtype=float)
    return R_max * power / (power + P_sat)


@dataclass
class SaturationFit:
    R_max: float
    P_sat: float
    intervals: dict
    result: object = field(repr=False)

    def as_dict(self):
        est = {"R_max": self.R_max, "P_sat": self.P_sat}
        return {"parameters": {k: {"estimate": float(v), "lo": float(self.intervals[k][0]),
                                   "hi": float(self.intervals[k][1])} for k, v in est.items()}}


def saturation_fit(powers, rates, sigma=None, *, level=0.95):
    """Fit R(P) = R_max P / (P + P_sat); rates in kHz, powers in mW."""
    P = np.asarray(powers, dtype=float)
    R = np.asarray(rates, dtype=float)
    if P.size < 4:
        raise ValueError(f"need at least 4 points, got {P.size}")
    absolute = sigma is not None
    w = 1.0 / np.broadcast_to(np.asarray(sigma, dtype=float), R.shape) ** 2 if absolute else np.ones_like(R)
    # Lineweaver-Burk style start: 1/R = 1/R_max + (P_sat/R_max)/P
    good = (P > 0) & (R > 0)
    if good.sum() >= 2:
        slope, icpt = np.polyfit(1.0 / P[good], 1.0 / R[good], 1)
        R0 = 1.0 / icpt if icpt > 0 else 2.0 * R.max()
        Ps0 = slope * R0 if slope > 0 else float(np.median(P))
    else:
        R0, Ps0 = 2.0 * float(R.max()), float(np.median(P))
    res = least_squares(lambda x: saturation_curve(P, *x), R, w, [R0, Ps0],
                        bounds=[(0.0, None), (1e-12, None)], names=["R_max", "P_sat"], check_rank=False)
    if not absolute:
        res.cov = res.cov * res.chi2 / res.dof
    iv = res.interval(level)
    intervals = {"R_max": tuple(map(float, iv[0])), "P_sat": tuple(map(float, iv[1]))}
    return SaturationFit(float(res.x[0]), float(res.x[1]), intervals, res)


__all__ = [
    "RateParams", "PopulationState", "PlTrace", "build_generator", "pulsed_pl",
    "extract_biexponential", "cw_pl", "global_rate_fit", "g2_curve",
    "background_correct_g2", "readout_contrast", "saturation_fit", "saturation_curve",
    "synthetic_cw_bundle",
]
