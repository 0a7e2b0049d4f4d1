"""Affine-invariant ensemble sampler (stretch move), priors and posterior
summaries."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .lsq import FitError

STRETCH_A = 2.0
RHAT_MAX = 1.05
ESS_MIN = 400


class SamplerStuckError(FitError):
    """Acceptance fell below 1%: the walkers are not moving."""


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.hi > self.lo):
            raise ValueError(f"uniform prior needs finite lo < hi, got ({self.lo}, {self.hi})")

    @property
    def bounds(self):
        return (self.lo, self.hi)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)


@dataclass(frozen=True)
class HalfNormal:
    scale: float
    lower: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"half-normal scale must be positive, got {self.scale}")

    @property
    def bounds(self):
        return (self.lower, np.inf)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.lower) / self.scale
        val = 0.5 * math.log(2.0 / math.pi) - math.log(self.scale) - 0.5 * z * z
        return np.where(x >= self.lower, val, -np.inf)

    def sample(self, rng, size):
        return self.lower + np.abs(rng.normal(0.0, self.scale, size))


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError(f"normal sd must be positive, got {self.sd}")

    @property
    def bounds(self):
        return (-np.inf, np.inf)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2 * math.pi)

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, size)


class PriorSpec:
    """Ordered, independent per-parameter priors."""

    def __init__(self, priors):
        self._items = list(priors.items()) if isinstance(priors, dict) else list(priors)
        if not self._items:
            raise ValueError("at least one parameter is required")
        # uniform priors are evaluated together; they dominate large models
        self._uni = np.array([k for k, (_, p) in enumerate(self._items) if isinstance(p, Uniform)], dtype=int)
        self._rest = [(k, p) for k, (_, p) in enumerate(self._items) if not isinstance(p, Uniform)]
        lo = np.array([self._items[k][1].lo for k in self._uni])
        hi = np.array([self._items[k][1].hi for k in self._uni])
        self._uni_lo, self._uni_hi = lo, hi
        self._uni_const = -float(np.sum(np.log(hi - lo)))

    @property
    def names(self):
        return [n for n, _ in self._items]

    def __len__(self):
        return len(self._items)

    def __getitem__(self, name):
        return dict(self._items)[name]

    def logpdf(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        if self._uni.size:
            U = X[:, self._uni]
            inside = np.all((U >= self._uni_lo) & (U <= self._uni_hi), axis=1)
            out = np.where(inside, self._uni_const, -np.inf)
        for k, pr in self._rest:
            out = out + pr.logpdf(X[:, k])
        return out

    def bounds(self):
        return np.array([pr.bounds for _, pr in self._items], dtype=float)

    def sample(self, rng, size):
        return np.column_stack([pr.sample(rng, size) for _, pr in self._items])


def _hpd(x, level):
    """Shortest interval holding ``level`` of the sorted draws."""
    n = x.size
    k = max(int(np.ceil(level * n)), 1)
    widths = x[k - 1:] - x[:n - k + 1]
    i = int(np.argmin(widths))
    return x[i], x[i + k - 1]


def credible_interval(samples, level=0.95, lower_bound=None, bins=60):
    """Equal-tailed credible interval.

    With a finite ``lower_bound`` (the edge of the prior support), an
    interval whose highest-density version reaches the boundary to within
    one histogram bin is reported one-sided as (lower_bound, level
    quantile). A 2-D input is treated column-wise and returns shape
    (n_params, 2).
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2:
        lbs = lower_bound if np.ndim(lower_bound) else [lower_bound] * x.shape[1]
        return np.array([credible_interval(x[:, k], level, lbs[k], bins) for k in range(x.shape[1])])
    if x.size < 1000:
        raise ValueError(f"need at least 1000 draws for a credible interval, got {x.size}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if lower_bound is not None and np.isfinite(lower_bound) and np.ptp(x) > 0:
        xs = np.sort(x)
        top = np.quantile(xs, 0.995)
        if top > lower_bound:
            lo, _ = _hpd(xs, level)
            if lo - lower_bound <= (top - lower_bound) / bins:
                return np.array([float(lower_bound), float(np.quantile(xs, level))])
    tail = 0.5 * (1.0 - level)
    return np.quantile(x, [tail, 1.0 - tail])


def _autocorr_time(chains, c=5.0):
    """Integrated autocorrelation time from walker-averaged autocorrelation.

    ``chains`` has shape (n_steps, n_walkers).
    """
    n = chains.shape[0]
    if n < 4:
        return float(n)
    x = chains - chains.mean(axis=0)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, n=m, axis=0)
    acf = np.fft.irfft(f * np.conj(f), n=m, axis=0)[:n].real
    acf = acf.mean(axis=1)
    if acf[0] <= 0:
        return 1.0
    rho = acf / acf[0]
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(taus.size) < c * taus
    k = int(np.argmin(window)) if not window.all() else taus.size - 1
    return float(max(taus[k], 1.0))


def split_rhat(chains):
    """Split-chain potential scale reduction for one parameter.

    ``chains`` has shape (n_steps, n_chains); each chain is split in two.
    """
    n = chains.shape[0] // 2
    if n < 2:
        return float("nan")
    parts = np.concatenate([chains[:n], chains[-n:]], axis=1)
    means = parts.mean(axis=0)
    W = parts.var(axis=0, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


@dataclass
class Posterior:
    names: list
    samples: np.ndarray      # (draws, params), burn-in removed
    log_prob: np.ndarray     # (draws,)
    seed: int
    rhat: np.ndarray
    ess: np.ndarray
    acceptance: float
    lower_bounds: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self):
        return bool(np.all(self.rhat < RHAT_MAX) and np.all(self.ess > ESS_MIN))

    def median(self):
        return np.median(self.samples, axis=0)

    def index(self, name):
        return self.names.index(name)

    def interval(self, name=None, level=0.95):
        lbs = self.lower_bounds if self.lower_bounds is not None else [None] * len(self.names)
        if name is None:
            return credible_interval(self.samples, level, list(lbs))
        k = self.index(name)
        return credible_interval(self.samples[:, k], level, lbs[k])

    def summary(self, level=0.95, names=None):
        med = self.median()
        iv = self.interval(level=level)
        out = {}
        for k, n in enumerate(self.names):
            if names is not None and n not in names:
                continue
            out[n] = {
                "estimate": float(med[k]),
                "lo": float(iv[k, 0]),
                "hi": float(iv[k, 1]),
                "rhat": float(self.rhat[k]),
                "ess": float(self.ess[k]),
            }
        return out

    def report(self, level=0.95, names=None):
        flags = list(self.diagnostics.get("flags", []))
        if not self.converged:
            flags.append(f"not converged: need split R-hat < {RHAT_MAX} and ESS > {ESS_MIN}")
        return {
            "parameters": self.summary(level, names),
            "seed": int(self.seed),
            "draws": int(self.samples.shape[0]),
            "acceptance": float(self.acceptance),
            "converged": self.converged,
            "flags": flags,
        }

    def to_json(self, level=0.95, names=None):
        return json.dumps(self.report(level, names), sort_keys=True, indent=2)


def _initial_ensemble(lp, init, n_walkers, rng, scale, bounds):
    init = np.asarray(init, dtype=float)
    if init.ndim == 2:
        if init.shape[0] != n_walkers:
            raise ValueError(f"initial ensemble has {init.shape[0]} walkers, expected {n_walkers}")
        X = init.copy()
        L = lp(X)
        if not np.all(np.isfinite(L)):
            raise ValueError("log-posterior is not finite for every initial walker")
        return X, L
    d = init.size
    L0 = lp(init[None])[0]
    if not np.isfinite(L0):
        raise ValueError("log-posterior is not finite at the initial point")
    if scale is None:
        scale = 1e-4 * np.maximum(np.abs(init), 1.0)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (d,))
    X = np.empty((n_walkers, d))
    L = np.empty(n_walkers)
    X[0], L[0] = init, L0
    filled = 1
    for _ in range(200):
        need = n_walkers - filled
        if need == 0:
            break
        cand = init + scale * rng.standard_normal((need, d))
        cand = np.clip(cand, bounds[:, 0], bounds[:, 1])
        lc = lp(cand)
        ok = np.isfinite(lc)
        k = int(ok.sum())
        X[filled:filled + k] = cand[ok]
        L[filled:filled + k] = lc[ok]
        filled += k
        if k == 0:
            scale = 0.5 * scale
    if filled < n_walkers:
        raise ValueError("could not place the walkers in a region of finite posterior density")
    return X, L


def mcmc_sample(log_likelihood, priors, init, n_walkers, n_steps, seed, *,
                vectorized=False, init_scale=None, thin=1):
    """Sample prior x likelihood with the affine-invariant stretch move.

    ``log_likelihood`` maps a parameter vector (or, with ``vectorized``, an
    (m, d) array) to log-likelihood; the priors' log-density is added here.
    ``init`` is a point (walkers start in a small Gaussian ball around it,
    of per-parameter width ``init_scale``) or an explicit (n_walkers, d)
    ensemble. The first half of the chain is discarded as burn-in.
    """
    if not isinstance(priors, PriorSpec):
        priors = PriorSpec(priors)
    d = len(priors)
    if n_walkers < 2 * d:
        raise ValueError(f"need at least {2 * d} walkers for {d} parameters, got {n_walkers}")
    if n_walkers % 2:
        raise ValueError("the number of walkers must be even")
    if n_steps < 2:
        raise ValueError("need at least 2 steps")
    rng = np.random.default_rng(seed)
    bounds = priors.bounds()

    def lp(X):
        X = np.atleast_2d(X)
        out = priors.logpdf(X)
        ok = np.isfinite(out)
        if np.any(ok):
            if vectorized:
                ll = np.full(X.shape[0], -np.inf)
                ll[ok] = np.asarray(log_likelihood(X[ok]), dtype=float)
            else:
                ll = np.array([log_likelihood(x) if g else -np.inf for x, g in zip(X, ok)], dtype=float)
            out = out + np.where(np.isfinite(ll), ll, -np.inf)
        return out

    X, L = _initial_ensemble(lp, init, n_walkers, rng, init_scale, bounds)
    half = n_walkers // 2
    halves = (np.arange(half), np.arange(half, n_walkers))
    n_keep = n_steps // thin
    chain = np.empty((n_keep, n_walkers, d))
    lchain = np.empty((n_keep, n_walkers))
    accepted = 0
    a = STRETCH_A
    for step in range(n_steps):
        for s in (0, 1):
            S, C = halves[s], halves[1 - s]
            u = rng.random(half)
            z = ((a - 1.0) * u + 1.0) ** 2 / a
            j = C[rng.integers(0, half, half)]
            Y = X[j] + z[:, None] * (X[S] - X[j])
            Ly = lp(Y)
            log_r = (d - 1) * np.log(z) + Ly - L[S]
            acc = np.log(rng.random(half)) < log_r
            idx = S[acc]
            X[idx] = Y[acc]
            L[idx] = Ly[acc]
            accepted += int(acc.sum())
        if (step + 1) % thin == 0:
            chain[(step + 1) // thin - 1] = X
            lchain[(step + 1) // thin - 1] = L
    acceptance = accepted / (n_steps * n_walkers)
    if acceptance < 0.01:
        raise SamplerStuckError(f"acceptance fraction {acceptance:.4f} < 0.01: walkers are stuck")

    keep = chain[n_keep // 2:]
    lkeep = lchain[n_keep // 2:]
    rhat = np.array([split_rhat(keep[:, :, k]) for k in range(d)])
    ess = np.array([keep.shape[0] * n_walkers / _autocorr_time(keep[:, :, k]) for k in range(d)])
    return Posterior(
        names=priors.names,
        samples=keep.reshape(-1, d),
        log_prob=lkeep.reshape(-1),
        seed=int(seed),
        rhat=rhat,
        ess=ess,
        acceptance=float(acceptance),
        lower_bounds=np.where(np.isfinite(bounds[:, 0]), bounds[:, 0], np.nan),
    )

