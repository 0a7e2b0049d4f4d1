"""Small dense linear algebra: spin-1 operators, Hermitian eigensystems and
exact propagation of linear rate equations.

Energies are GHz, rates 1/ns and times ns throughout the package.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

MAX_DIM = 16


class NotHermitianError(ValueError):
    """Raised when a matrix handed to the eigensolver is not Hermitian."""


@dataclass(frozen=True)
class EigenSystem:
    values: np.ndarray   # ascending
    vectors: np.ndarray  # columns paired with ``values``

    def __iter__(self):
        return iter((self.values, self.vectors))


def spin1_operators():
    """Return (Sx, Sy, Sz) for S=1 in the {+1, 0, -1} basis."""
    r = 1.0 / np.sqrt(2.0)
    sx = np.array([[0, r, 0], [r, 0, r], [0, r, 0]], dtype=complex)
    sy = np.array([[0, -1j * r, 0], [1j * r, 0, -1j * r], [0, 1j * r, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


def spin_half_operators():
    """Return (Ix, Iy, Iz) for I=1/2 in the {up, down} basis."""
    ix = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
    iy = 0.5 * np.array([[0, -1j], [1j, 0]], dtype=complex)
    iz = 0.5 * np.array([[1, 0], [0, -1]], dtype=complex)
    return ix, iy, iz


def check_hermitian(H, tol=1e-12):
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    if H.shape[0] > MAX_DIM:
        raise ValueError(f"dimension {H.shape[0]} exceeds the supported maximum {MAX_DIM}")
    if not np.all(np.isfinite(H)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(H).max()))
    diff = np.abs(H - H.conj().T)
    i, j = np.unravel_index(np.argmax(diff), diff.shape)
    if diff[i, j] > tol * scale:
        raise NotHermitianError(
            f"entries ({i},{j})={H[i, j]!r} and ({j},{i})={H[j, i]!r} are not complex conjugates"
        )


def _jacobi_symmetric(M, max_sweeps=60):
    """Cyclic Jacobi diagonalisation of a real symmetric matrix.

    Returns (eigenvalues, eigenvectors) unsorted.
    """
    A = np.array(M, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.sqrt(np.sum(A * A))
    if scale == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))   # direct, no cancellation
        if off <= 1e-15 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta          # theta**2 would overflow
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V


def _fix_phase(v):
    k = int(np.argmax(np.round(np.abs(v), 12)))
    return v * (abs(v[k]) / v[k]) if v[k] != 0 else v


def hermitian_eigensystem(H):
    """Eigen-decompose a Hermitian matrix with cyclic Jacobi rotations.

    The complex problem is embedded in the real symmetric form
    ``[[Re H, -Im H], [Im H, Re H]]``, whose spectrum is that of ``H`` with
    every value doubled. Eigenvalues are returned ascending; each eigenvector
    has its largest-magnitude component real and positive.
    """
    H = np.asarray(H, dtype=complex)
    check_hermitian(H)
    n = H.shape[0]
    M = np.block([[H.real, -H.imag], [H.imag, H.real]])
    w, V = _jacobi_symmetric(M)
    order = np.argsort(w, kind="stable")
    w, V = w[order], V[:, order]
    Z = V[:n, :] + 1j * V[n:, :]

    tol = 1e-10 * max(1.0, float(np.abs(w).max()))
    values, vectors = [], []
    start = 0
    while start < 2 * n:
        stop = start + 1
        while stop < 2 * n and w[stop] - w[stop - 1] <= tol:
            stop += 1
        cluster = Z[:, start:stop]
        want = (stop - start) // 2
        basis = []
        # pivoted Gram-Schmidt: the doubled real space holds z and i*z
        cand = [cluster[:, k].copy() for k in range(cluster.shape[1])]
        for _ in range(want):
            for b in basis:
                cand = [c - (b.conj() @ c) * b for c in cand]
            norms = [np.linalg.norm(c) for c in cand]
            k = int(np.argmax(norms))
            basis.append(cand[k] / norms[k])
            cand.pop(k)
        for b in basis:
            values.append(float(np.mean(w[start:stop])))
            vectors.append(_fix_phase(b))
        start = stop
    if len(values) != n:
        raise RuntimeError("eigenvalue clustering failed; spectrum too close to degenerate")
    return EigenSystem(np.array(values), np.column_stack(vectors))


def eigh_batch(H):
    """Vectorised Hermitian eigen-decomposition over a leading batch axis.

    Backed by LAPACK through numpy; used in likelihood loops where the
    Jacobi solver is too slow. Real symmetric input stays real.
    """
    return np.linalg.eigh(H)


def eigvalsh_batch(H):
    return np.linalg.eigvalsh(H)


def _check_generator(G):
    G = np.asarray(G)
    if not np.all(np.isfinite(G)):
        raise ValueError("generator has non-finite entries")
    if np.iscomplexobj(G):
        if np.abs(G.imag).max() > 0:
            raise ValueError("generator must have real entries")
        G = G.real
    return np.asarray(G, dtype=float)


def propagate_linear(G, p0, t):
    """Return exp(G t) p0, the solution of dp/dt = G p at time ``t``."""
    G = _check_generator(G)
    p0 = np.asarray(p0, dtype=float)
    if not np.all(np.isfinite(p0)) or not np.isfinite(t):
        raise ValueError("non-finite initial state or time")
    return expm(G * t) @ p0


def propagate_grid(G, p0, times):
    """Propagate ``p0`` to every time in an increasing grid.

    Returns an array of shape (len(times), len(p0)). Steps of equal length
    reuse one matrix exponential.
    """
    G = _check_generator(G)
    times = np.asarray(times, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if not (np.all(np.isfinite(times)) and np.all(np.isfinite(p0))):
        raise ValueError("non-finite initial state or time grid")
    if times.size and np.any(np.diff(times) < 0):
        raise ValueError("time grid must be non-decreasing")
    out = np.empty((times.size, p0.size))
    cache = {}
    p = p0
    last = 0.0
    for k, t in enumerate(times):
        dt = t - last
        key = round(dt, 12)
        if key not in cache:
            cache[key] = expm(G * dt)
        p = cache[key] @ p
        out[k] = p
        last = t
    return out


def steady_state(G):
    """Normalised null vector of a conserving generator."""
    G = _check_generator(G)
    n = G.shape[0]
    A = G.copy()
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise ValueError("generator has no unique stationary state (disconnected levels)") from None
