"""Six-level 3E excited-state fine structure and PLE line prediction.

Basis ordering is |orbital> (x) |mS> with orbitals (E+, E-) and spin
projections (+1, 0, -1); index = 3 * orbital + spin.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .linalg import eigh_batch

LABELS = ("Ex", "Ey", "E1", "E2", "A1", "A2")
MS0_INDICES = (1, 4)
SQRT2 = np.sqrt(2.0)


class TrackingError(RuntimeError):
    """Adiabatic labels could not be followed between two grid points."""


@dataclass(frozen=True)
class ExcitedStateParams:
    lambda_z: float
    D_es: float
    Delta1: float
    Delta2: float

    def __post_init__(self):
        if not self.lambda_z > 0:
            raise ValueError(f"lambda_z must be positive, got {self.lambda_z}")
        for name in ("D_es", "Delta1", "Delta2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


@dataclass(frozen=True)
class StrainVector:
    delta_perp: float
    phi: float = 0.0  # degrees

    def __post_init__(self):
        if self.delta_perp < 0:
            raise ValueError(f"delta_perp must be non-negative, got {self.delta_perp}")


@dataclass(frozen=True)
class PleLine:
    frequency: float      # THz
    ground_ms: int        # 0, or 1 for the mS = +/-1 pair
    excited_label: str
    ms0_fraction: float


def _idx(orbital, ms):
    return 3 * (0 if orbital == "+" else 1) + {1: 0, 0: 1, -1: 2}[ms]


def es_hamiltonian_batch(lambda_z, D_es, Delta1, Delta2, delta, phi=0.0):
    """Vectorised excited-state Hamiltonian, GHz.

    All arguments broadcast against each other; the result has shape
    ``broadcast_shape + (6, 6)``. With ``phi == 0`` the matrix is real.
    """
    lam, D, d1, d2, dl = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in
                                               (lambda_z, D_es, Delta1, Delta2, delta)))
    phi = np.asarray(phi, dtype=float)
    real = np.all(phi == 0)
    H = np.zeros(lam.shape + (6, 6), dtype=float if real else complex)
    for orb, Lz in (("+", 1.0), ("-", -1.0)):
        for ms in (1, 0, -1):
            k = _idx(orb, ms)
            H[..., k, k] = D * ms * ms - lam * Lz * ms

    def put(row, col, val):
        H[..., row, col] += val
        H[..., col, row] += np.conj(val)

    put(_idx("-", 1), _idx("+", -1), d1)
    put(_idx("-", 0), _idx("+", 1), SQRT2 * d2)
    put(_idx("+", 0), _idx("-", -1), SQRT2 * d2)
    coupling = dl if real else dl * np.exp(1j * np.deg2rad(phi))
    for ms in (1, 0, -1):
        put(_idx("-", ms), _idx("+", ms), coupling)
    return H


def es_hamiltonian(p, s):
    """Excited-state Hamiltonian as a 6x6 complex matrix, GHz.

    H = D_es Sz^2 - lambda_z Lz Sz + Delta1 (|E-><E+| |+1><-1| + h.c.)
        + sqrt(2) Delta2 (|E-><E+| |0><+1| + |E+><E-| |0><-1| + h.c.)
        + ((dx + i dy) |E-><E+| + h.c.)

    so that at zero strain and Delta2 = 0 the spectrum is
    {0, 0, D_es - lambda_z (x2), D_es + lambda_z -/+ Delta1}.
    """
    H = es_hamiltonian_batch(p.lambda_z, p.D_es, p.Delta1, p.Delta2, s.delta_perp, s.phi)
    return np.asarray(H, dtype=complex)


def _sym3_eigvals(a00, a11, a22, a01, a02, a12):
    """Ascending eigenvalues of batched real symmetric 3x3 matrices
    (trigonometric solution of the characteristic cubic)."""
    q = (a00 + a11 + a22) / 3.0
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    b00, b11, b22 = a00 - q, a11 - q, a22 - q
    p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    c00, c11, c22 = b00 / safe, b11 / safe, b22 / safe
    c01, c02, c12 = a01 / safe, a02 / safe, a12 / safe
    det = (c00 * (c11 * c22 - c12 * c12) - c01 * (c01 * c22 - c12 * c02)
           + c02 * (c01 * c12 - c11 * c02))
    phi = np.arccos(np.clip(0.5 * det, -1.0, 1.0)) / 3.0
    e_hi = q + 2.0 * p * np.cos(phi)
    e_lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e_mid = 3.0 * q - e_hi - e_lo
    return np.stack([e_lo, e_mid, e_hi], axis=-1)


def es_spectrum_real(lambda_z, D_es, Delta1, Delta2, delta):
    """Eigenvalues and mS=0 weights of the zero-azimuth Hamiltonian.

    With phi = 0 the Hamiltonian commutes with the exchange
    (orbital, mS) -> (-orbital, -mS) and splits into two 3x3 blocks on the
    even and odd combinations. Each block is solved in closed form; the
    mS=0 weight follows from the eigenvector-eigenvalue identity, with a
    LAPACK fallback where two block levels nearly coincide. Returns
    (energies, ms0 weights), each of shape ``broadcast_shape + (6,)`` and
    not sorted across blocks.
    """
    lam, D, d1, d2, dl = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in
                                               (lambda_z, D_es, Delta1, Delta2, delta)))
    r2 = SQRT2 * d2
    zero = np.zeros_like(lam)
    energies, weights = [], []
    for sgn in (1.0, -1.0):
        a00, a11, a22 = D - lam, sgn * dl, D + lam + sgn * d1
        a01, a02, a12 = sgn * r2, sgn * dl, zero
        e = _sym3_eigvals(a00, a11, a22, a01, a02, a12)
        # weight on the mS=0 basis vector (index 1) from the minor without it
        minor = (a00[..., None] - e) * (a22[..., None] - e) - (a02 * a02)[..., None]
        g01 = e[..., 1] - e[..., 0]
        g12 = e[..., 2] - e[..., 1]
        g02 = g01 + g12
        denom = np.stack([g01 * g02, -g01 * g12, g02 * g12], axis=-1)
        scale = np.maximum(1.0, np.maximum(np.abs(e[..., 0]), np.abs(e[..., 2])))
        bad = np.minimum(g01, g12) < 1e-7 * scale      # ascending, so adjacent gaps suffice
        w = minor / np.where(bad[..., None], 1.0, denom)
        if np.any(bad):
            A = np.zeros(bad.shape + (3, 3))
            A[..., 0, 0], A[..., 1, 1], A[..., 2, 2] = a00, a11, a22
            A[..., 0, 1] = A[..., 1, 0] = a01
            A[..., 0, 2] = A[..., 2, 0] = a02
            ev, V = np.linalg.eigh(A[bad])
            e[bad] = ev
            w[bad] = V[..., 1, :] ** 2
        energies.append(e)
        weights.append(np.clip(w, 0.0, 1.0))
    return np.concatenate(energies, axis=-1), np.concatenate(weights, axis=-1)


def ms0_fraction(vectors):
    """Weight of the mS=0 product states in each eigenvector column."""
    v = np.asarray(vectors)
    return np.sum(np.abs(v[..., MS0_INDICES, :]) ** 2, axis=-2)


def reference_states(phi=0.0):
    """Zero-strain, Delta2 = 0 eigenstates in LABELS order (columns).

    For nonzero strain azimuth they are carried by the gauge rotation that
    maps H(delta, 0) onto H(delta, phi) when Delta2 = 0.
    """
    R = np.zeros((6, 6), dtype=complex)
    r = 1.0 / SQRT2
    cols = {
        "Ex": {("+", 0): r, ("-", 0): r},
        "Ey": {("+", 0): r, ("-", 0): -r},
        "E1": {("+", 1): r, ("-", -1): -r},
        "E2": {("+", 1): r, ("-", -1): r},
        "A1": {("+", -1): r, ("-", 1): -r},
        "A2": {("+", -1): r, ("-", 1): r},
    }
    for j, lab in enumerate(LABELS):
        for (orb, ms), amp in cols[lab].items():
            R[_idx(orb, ms), j] = amp
    a = np.deg2rad(phi)
    u = np.array([np.exp(1j * (0.0 if orb == "+" else a)) * np.exp(-0.5j * a * ms)
                  for orb in ("+", "-") for ms in (1, 0, -1)])
    return u[:, None] * R


def _align_degenerate(values, vectors, prev, tol=1e-9):
    """Rotate degenerate eigenvector blocks towards the previous labelled set."""
    vectors = vectors.copy()
    n = values.size
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and values[stop] - values[stop - 1] <= tol:
            stop += 1
        m = stop - start
        if m > 1:
            Q = vectors[:, start:stop]
            proj = Q @ (Q.conj().T @ prev)
            norms = np.linalg.norm(proj, axis=0)
            pick = np.argsort(-norms, kind="stable")[:m]
            B = proj[:, np.sort(pick)]
            # symmetric orthonormalisation keeps each vector closest to its source
            w, U = np.linalg.eigh(B.conj().T @ B)
            vectors[:, start:stop] = B @ (U @ np.diag(1.0 / np.sqrt(np.maximum(w, 1e-300))) @ U.conj().T)
        start = stop
    return vectors


def _assign(prev, vectors):
    overlap = np.abs(prev.conj().T @ vectors) ** 2
    rows, cols = linear_sum_assignment(-overlap)
    perm = np.empty(6, dtype=int)
    perm[rows] = cols
    return perm, overlap[rows, cols].min()


def track_states(p, deltas, phi=0.0, *, refine=True, min_overlap=0.6):
    """Follow the six labelled eigenstates along a monotone strain grid.

    Returns (energies, vectors) with shapes (n, 6) and (n, 6, 6), columns in
    LABELS order. When ``refine`` is false a step whose worst overlap drops
    below ``min_overlap`` raises :class:`TrackingError`; otherwise the step
    is subdivided until tracking is unambiguous.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.ndim != 1 or deltas.size == 0:
        raise ValueError("strain grid must be a non-empty 1-D sequence")
    if np.any(np.diff(deltas) < 0) and np.any(np.diff(deltas) > 0):
        raise ValueError("strain grid must be monotone")
    if np.any(deltas < 0):
        raise ValueError("strain magnitudes must be non-negative")

    def solve(ds):
        H = es_hamiltonian_batch(p.lambda_z, p.D_es, p.Delta1, p.Delta2, ds, phi)
        w, V = eigh_batch(np.asarray(H, dtype=complex))
        return w, V

    # start from the zero-strain references and walk out to the first point
    prev = reference_states(phi)
    path_start = 0.0
    energies = np.empty((deltas.size, 6))
    vectors = np.empty((deltas.size, 6, 6), dtype=complex)

    def step_to(prev, d_from, d_to, depth=0, may_refine=refine):
        w, V = solve(np.array([d_to]))
        w, V = w[0], _align_degenerate(w[0], V[0], prev)
        perm, worst = _assign(prev, V)
        if worst < min_overlap:
            if may_refine and depth < 40 and abs(d_to - d_from) > 1e-9:
                mid = 0.5 * (d_from + d_to)
                prev, _ = step_to(prev, d_from, mid, depth + 1, True)
                return step_to(prev, mid, d_to, depth + 1, True)
            raise TrackingError(
                f"eigenvector overlap {worst:.3f} < {min_overlap} between strain "
                f"{d_from:.6g} and {d_to:.6g} GHz; refine the grid"
            )
        return V[:, perm], w[perm]

    # internal lead-in keeps the first user step small when the grid starts away from zero
    d_prev = path_start
    first = deltas[0]
    if first > 0:
        lead = np.linspace(0.0, first, int(np.ceil(first / 0.25)) + 2)[1:-1]
        for d in lead:
            prev, _ = step_to(prev, d_prev, d, may_refine=True)
            d_prev = d
    for k, d in enumerate(deltas):
        prev, e = step_to(prev, d_prev, d, may_refine=refine or k == 0)
        energies[k] = e
        vectors[k] = prev
        d_prev = d
    return energies, vectors


def _labelled_state(p, s):
    d = s.delta_perp
    n = max(2, int(np.ceil(d / 0.25)) + 1)
    grid = np.linspace(0.0, d, n)
    e, V = track_states(p, grid, s.phi)
    return e[-1], V[-1]


def _line_frequencies(energies, fractions, zpl_thz, D_ground):
    order = np.argsort(-fractions, kind="stable")
    ms0 = np.zeros(6, dtype=bool)
    ms0[order[:2]] = True
    ghz = np.where(ms0, energies, energies - D_ground)
    return zpl_thz + 1e-3 * ghz, ms0


def ple_lines(p, s, zpl_thz, D_ground):
    """The six spin-conserving PLE transitions, in LABELS order."""
    e, V = _labelled_state(p, s)
    f = ms0_fraction(V)
    freqs, ms0 = _line_frequencies(e, f, zpl_thz, D_ground)
    return [PleLine(float(freqs[k]), 0 if ms0[k] else 1, LABELS[k], float(f[k])) for k in range(6)]


def spin_flip_probability(p, s, level="Ex"):
    """Probability that optical cycling on Ex or Ey flips the ground spin."""
    if level not in ("Ex", "Ey"):
        raise ValueError(f"level must be 'Ex' or 'Ey', got {level!r}")
    _, V = _labelled_state(p, s)
    frac = ms0_fraction(V)[LABELS.index(level)]
    return float(min(1.0, max(0.0, 1.0 - frac)))


@dataclass(frozen=True)
class StrainFan:
    deltas: np.ndarray        # GHz
    frequencies: np.ndarray   # THz, shape (n, 6) in LABELS order
    ms0_fractions: np.ndarray
    labels: tuple = LABELS


def strain_fan(p, zpl_thz, D_ground, deltas, phi=0.0):
    """Branch frequencies across a strain grid with continuous labels.

    Raises :class:`TrackingError` naming the interval where adjacent
    eigenvectors overlap by less than 0.6.
    """
    e, V = track_states(p, deltas, phi, refine=False)
    fr = ms0_fraction(V)
    freqs = np.empty_like(e)
    for k in range(e.shape[0]):
        freqs[k], _ = _line_frequencies(e[k], fr[k], zpl_thz, D_ground)
    return StrainFan(np.asarray(deltas, dtype=float), freqs, fr)
