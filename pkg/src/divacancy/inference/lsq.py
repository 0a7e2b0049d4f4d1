"""Damped Gauss-Newton (Levenberg-Marquardt) weighted least squares."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


class FitError(RuntimeError):
    """Base class for fitting failures."""


class ConvergenceError(FitError):
    def __init__(self, message, residual_norm, x=None):
        super().__init__(f"{message} (final residual norm {residual_norm:.6g})")
        self.residual_norm = residual_norm
        self.x = x


class RankDeficientError(FitError):
    def __init__(self, message, null_direction, names=None):
        if names is not None:
            desc = ", ".join(f"{n}={c:+.3f}" for n, c in zip(names, null_direction))
        else:
            desc = np.array2string(np.asarray(null_direction), precision=3)
        super().__init__(f"{message}; null direction: [{desc}]")
        self.null_direction = np.asarray(null_direction)


class NonIdentifiableError(FitError):
    """The data do not constrain some direction of parameter space."""


def z_value(level):
    return float(stats.norm.ppf(0.5 + level / 2.0))


@dataclass
class LSQResult:
    x: np.ndarray
    cov: np.ndarray
    chi2: float
    residuals: np.ndarray
    jac: np.ndarray
    niter: int
    nfev: int
    converged: bool
    names: list = field(default_factory=list)

    @property
    def dof(self):
        return max(self.residuals.size - self.x.size, 1)

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def interval(self, level=0.95):
        """Symmetric Wald interval for every parameter, shape (n, 2)."""
        half = z_value(level) * self.stderr
        return np.column_stack([self.x - half, self.x + half])

    def as_dict(self, level=0.95):
        iv = self.interval(level)
        names = self.names or [f"p{k}" for k in range(self.x.size)]
        return {
            n: {"estimate": float(v), "lo": float(a), "hi": float(b)}
            for n, v, (a, b) in zip(names, self.x, iv)
        }


def numerical_jacobian(fun, x, f0=None, rel_step=None, lower=None, upper=None):
    """Central-difference Jacobian of ``fun`` at ``x``.

    Falls back to a one-sided step where a bound blocks the central stencil.
    """
    x = np.asarray(x, dtype=float)
    if rel_step is None:
        rel_step = np.finfo(float).eps ** (1.0 / 3.0)
    if f0 is None:
        f0 = np.asarray(fun(x), dtype=float)
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = rel_step * max(abs(x[k]), 1e-3)
        xp, xm = x.copy(), x.copy()
        up_ok = upper is None or x[k] + h <= upper[k]
        dn_ok = lower is None or x[k] - h >= lower[k]
        if up_ok and dn_ok:
            xp[k] += h
            xm[k] -= h
            J[:, k] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h)
        elif up_ok:
            xp[k] += h
            J[:, k] = (np.asarray(fun(xp)) - f0) / h
        else:
            xm[k] -= h
            J[:, k] = (f0 - np.asarray(fun(xm))) / h
    return J


def _normal_equations(J, r):
    """J^T J and J^T r with every sum taken over sorted terms, so the result
    does not depend on the order of the residuals."""
    P = np.sort(J[:, :, None] * J[:, None, :], axis=0).sum(axis=0)
    g = np.sort(J * r[:, None], axis=0).sum(axis=0)
    return 0.5 * (P + P.T), g


def least_squares(model, data, weights, init, *, jac=None, bounds=None, names=None,
                  xtol=1e-10, max_iter=200, check_rank=True, rcond=1e-9):
    """Minimise sum(w * (model(p) - data)**2) from ``init``.

    ``weights`` are inverse variances. The returned covariance is the inverse
    of J^T W J at the optimum. A Jacobian whose singular values fall below
    ``rcond`` relative to the largest raises :class:`RankDeficientError`
    naming the null direction.
    """
    data = np.asarray(data, dtype=float)
    sw = np.sqrt(np.broadcast_to(np.asarray(weights, dtype=float), data.shape))
    x = np.array(init, dtype=float)
    n = x.size
    if data.size < n:
        raise NonIdentifiableError(f"{data.size} residuals for {n} parameters")
    lower = upper = None
    if bounds is not None:
        lower = np.array([-np.inf if b[0] is None else b[0] for b in bounds], dtype=float)
        upper = np.array([np.inf if b[1] is None else b[1] for b in bounds], dtype=float)
        x = np.clip(x, lower, upper)

    nfev = 0

    def resid(p):
        nonlocal nfev
        nfev += 1
        return sw * (np.asarray(model(p), dtype=float) - data)

    def cost_of(r):
        return math.fsum(r * r)

    def jacobian(p, r):
        if jac is not None:
            return sw[:, None] * np.asarray(jac(p), dtype=float)
        return numerical_jacobian(resid, p, f0=r, lower=lower, upper=upper)

    r = resid(x)
    if not np.all(np.isfinite(r)):
        raise FitError("model returned non-finite values at the initial point")
    cost = cost_of(r)
    J = jacobian(x, r)
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        A, g = _normal_equations(J, r)
        dA = np.diag(A).copy()
        dA[dA <= 0] = 1e-30
        improved = False
        while mu < 1e20:
            try:
                step = np.linalg.solve(A + mu * np.diag(dA), -g)
                if lower is not None:
                    # freeze coordinates pinned at a bound and pushing outwards
                    pinned = ((x <= lower) & (step < 0)) | ((x >= upper) & (step > 0))
                    if pinned.any():
                        free = ~pinned
                        step = np.zeros(n)
                        if free.any():
                            sub = A[np.ix_(free, free)] + mu * np.diag(dA[free])
                            step[free] = np.linalg.solve(sub, -g[free])
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            xn = x + step
            if lower is not None:
                xn = np.clip(xn, lower, upper)
            rn = resid(xn)
            cn = cost_of(rn) if np.all(np.isfinite(rn)) else np.inf
            if cn <= cost:
                improved = True
                break
            mu *= 4.0
        if not improved:
            converged = True
            break
        dx = xn - x
        rel = np.linalg.norm(dx) / (np.linalg.norm(xn) + 1e-12)
        small_gain = cost - cn <= 1e-15 * max(cost, 1e-300)
        x, r, cost = xn, rn, cn
        mu = max(mu / 3.0, 1e-12)
        J = jacobian(x, r)
        if rel < xtol or small_gain or cost == 0.0:
            converged = True
            break

    if not converged:
        raise ConvergenceError(f"no convergence after {max_iter} iterations", math.sqrt(cost), x)

    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if check_rank and (s[0] == 0.0 or s[-1] < rcond * s[0]):
        raise RankDeficientError("rank-deficient Jacobian at the optimum", Vt[-1], names)
    inv_s2 = np.where(s > 0, 1.0 / np.maximum(s, 1e-300) ** 2, 0.0)
    cov = (Vt.T * inv_s2) @ Vt
    return LSQResult(x=x, cov=cov, chi2=cost, residuals=r, jac=J, niter=it,
                     nfev=nfev, converged=True, names=list(names) if names else [])
