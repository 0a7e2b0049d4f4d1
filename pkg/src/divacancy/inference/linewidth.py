"""Optical linewidth versus temperature: Gamma(T) = Gamma0 + a T^n."""

from dataclasses import dataclass, field

import numpy as np

from .lsq import least_squares

T_REF = 20.0  # K; the power law is fitted as a width at T_REF for conditioning


def linewidth_law(T, Gamma0, a, n=5.0):
    return Gamma0 + a * np.asarray(T, dtype=float) ** n


@dataclass
class LinewidthFit:
    Gamma0: float          # MHz
    a: float               # MHz / K^n
    n: float
    free_exponent: bool
    intervals: dict
    result: object = field(repr=False)

    def as_dict(self):
        est = {"Gamma0": self.Gamma0, "a": self.a}
        if self.free_exponent:
            est["n"] = self.n
        return {
            "exponent": float(self.n),
            "free_exponent": self.free_exponent,
            "parameters": {k: {"estimate": float(v), "lo": float(self.intervals[k][0]),
                               "hi": float(self.intervals[k][1])} for k, v in est.items()},
        }


def fit_linewidth_temperature(T, widths, sigma=None, *, exponent=5.0, free_exponent=False, level=0.95):
    """Fit Gamma(T) = Gamma0 + a T^n to linewidths (MHz) at temperatures T (K).

    The exponent defaults to +5 and may be freed. Needs at least five
    temperatures with some below and some above 20 K.
    """
    T = np.asarray(T, dtype=float)
    y = np.asarray(widths, dtype=float)
    if T.size != y.size:
        raise ValueError("temperature and width arrays differ in length")
    if np.unique(T).size < 5 or not (T.min() < T_REF < T.max()):
        raise ValueError("need >= 5 distinct temperatures spanning both sides of 20 K")
    absolute = sigma is not None
    w = 1.0 / np.broadcast_to(np.asarray(sigma, dtype=float), y.shape) ** 2 if absolute else np.ones_like(y)
    x = T / T_REF
    low = y[T <= np.sort(T)[2]]
    g0 = float(np.min(low))
    hot = float(np.max(y[T == T.max()])) - g0
    b0 = hot / x.max() ** exponent

    if free_exponent:
        model = lambda p: p[0] + p[1] * x ** p[2]
        init, names = [g0, b0, exponent], ["Gamma0", "b", "n"]
        bounds = [(None, None), (None, None), (0.5, 12.0)]
    else:
        model = lambda p: p[0] + p[1] * x ** exponent
        init, names = [g0, b0], ["Gamma0", "b"]
        bounds = None
    res = least_squares(model, y, w, init, bounds=bounds, names=names)
    if not absolute:
        res.cov = res.cov * res.chi2 / res.dof
    n = float(res.x[2]) if free_exponent else float(exponent)
    # back to a = b / T_REF^n; the interval maps linearly at fixed n
    conv = T_REF ** -n
    iv = res.interval(level)
    intervals = {"Gamma0": tuple(map(float, iv[0])), "a": (float(iv[1][0] * conv), float(iv[1][1] * conv))}
    if free_exponent:
        intervals["n"] = tuple(map(float, iv[2]))
    return LinewidthFit(float(res.x[0]), float(res.x[1] * conv), n, bool(free_exponent), intervals, res)
