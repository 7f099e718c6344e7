"""Quantum Rabi model of a flux qubit coupled to a resonator.

H/h = (eps sz + Delta sx)/2 + omega_r (a^dag a + 1/2) + g sz (a^dag + a),
all parameters as frequencies in GHz.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .circuit import EigenSolution
from .errors import ConvergenceError, InvalidParametersError

DEFAULT_PAIRS = ((0, 1), (0, 2), (1, 3))
FOCK_TOL_GHZ = 1e-6
MAX_FOCK = 1024


@dataclass(frozen=True)
class RabiParams:
    epsilon: float = 0.0
    delta: float = 0.863
    omega_r: float = 4.462
    g: float = 2.225
    n_fock: int = 16

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidParametersError("delta must be positive")
        if not self.omega_r > 0:
            raise InvalidParametersError("omega_r must be positive")
        if self.g < 0:
            raise InvalidParametersError("g must be non-negative")
        if self.n_fock < 4:
            raise InvalidParametersError("n_fock must be >= 4")


@dataclass
class BranchCurve:
    branch: str
    epsilon: np.ndarray
    freq: np.ndarray

    def __post_init__(self):
        self.epsilon = np.asarray(self.epsilon, dtype=float)
        self.freq = np.asarray(self.freq, dtype=float)
        if self.epsilon.size > 1 and np.any(np.diff(self.epsilon) <= 0):
            raise ValueError("branch epsilon values must be strictly increasing")


def branch_name(i, j):
    return f"w{j}{i}"


def rabi_hamiltonian(p, n_fock=None, omega_r=None):
    n = n_fock or p.n_fock
    wr = p.omega_r if omega_r is None else omega_r
    a = np.diag(np.sqrt(np.arange(1, n)), 1)
    x = a + a.T
    sz = np.diag([1.0, -1.0])
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    num = np.diag(np.arange(n) + 0.5)
    return (np.kron(0.5 * (p.epsilon * sz + p.delta * sx), np.eye(n))
            + wr * np.kron(np.eye(2), num)
            + p.g * np.kron(sz, x))


def _levels(p, n, k, vectors=False, omega_r=None):
    h = rabi_hamiltonian(p, n, omega_r)
    k = min(k, h.shape[0])
    if vectors:
        return sla.eigh(h, subset_by_index=(0, k - 1))
    return sla.eigh(h, eigvals_only=True, subset_by_index=(0, k - 1))


def converged_fock(p, epsilons=(None,), k=4, tol=FOCK_TOL_GHZ, start=None):
    """Smallest doubled cutoff for which the lowest ``k`` levels move less than ``tol``."""
    n = start or p.n_fock
    probes = [p if e is None else replace(p, epsilon=float(e)) for e in epsilons]
    while True:
        if 2 * n > MAX_FOCK:
            raise ConvergenceError(f"Fock cutoff exceeded {MAX_FOCK}", (n,))
        shift = max(np.max(np.abs(_levels(q, n, k) - _levels(q, 2 * n, k))) for q in probes)
        if shift < tol:
            return 2 * n
        n *= 2


def rabi_eigs(p, k=6):
    """Lowest ``k`` Rabi levels (GHz) with an automatically converged Fock cutoff."""
    n = converged_fock(p, k=max(4, k))
    w, v = _levels(p, n, k, vectors=True)
    return EigenSolution(w, v, None, {"n_fock": n})


def _track(vec_prev, vec_cur):
    """Map previous labels onto current eigenvectors by maximum total overlap."""
    ov = np.abs(vec_prev.conj().T @ vec_cur)
    rows, cols = linear_sum_assignment(-ov)
    perm = np.empty(vec_prev.shape[1], dtype=int)
    perm[rows] = cols
    return perm


def level_traces(p, epsilons, n_levels, tracking="overlap", omega_r_fn=None, n_fock=None):
    """Energies of the lowest ``n_levels`` states along an increasing epsilon grid.

    With ``tracking="overlap"`` state labels follow adiabatic continuation
    (maximum eigenvector overlap between neighbouring grid points) starting
    from energy order at the first point; ``"sorted"`` keeps energy order.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or not np.all(np.isfinite(eps)):
        raise ValueError("epsilon grid must be a finite 1-d array")
    if eps.size > 1 and np.any(np.diff(eps) <= 0):
        raise ValueError("epsilon grid must be strictly increasing")
    if n_fock is None:
        n_fock = converged_fock(p, (eps[0], eps[-1], eps[np.argmin(np.abs(eps))]), k=n_levels + 1)
    n_extra = n_levels + 2
    out = np.empty((eps.size, n_levels))
    prev = None
    for t, e in enumerate(eps):
        wr = p.omega_r if omega_r_fn is None else float(omega_r_fn(e))
        w, v = _levels(replace(p, epsilon=float(e)), n_fock, n_extra, vectors=True, omega_r=wr)
        if tracking == "sorted" or prev is None:
            idx = np.arange(n_levels)
        elif tracking == "overlap":
            idx = _track(prev, v)
        else:
            raise ValueError(f"unknown tracking mode {tracking!r}")
        out[t] = w[idx]
        prev = v[:, idx]
    return out


def rabi_branches(p, epsilons, pairs=DEFAULT_PAIRS, tracking="overlap", omega_r_fn=None, n_fock=None):
    """Transition curves omega_ij(eps) for each ``(i, j)`` in ``pairs``.

    ``omega_r_fn`` optionally replaces the constant resonator frequency by a
    user-supplied function of epsilon.
    """
    n_levels = max(max(pr) for pr in pairs) + 1
    e = level_traces(p, epsilons, n_levels, tracking, omega_r_fn, n_fock)
    eps = np.asarray(epsilons, dtype=float)
    return [BranchCurve(branch_name(i, j), eps, e[:, j] - e[:, i]) for i, j in pairs]


@dataclass
class TwoDeltaSpectrum:
    blue: list
    green: list
    epsilon: np.ndarray
    split: np.ndarray  # |w20_blue - w20_green|, GHz


def two_delta_spectrum(p_blue, delta_green, epsilons, pairs=DEFAULT_PAIRS, **kw):
    """Branch families for two qubit gaps that share epsilon grid, omega_r and g."""
    if not delta_green > 0:
        raise InvalidParametersError("delta_green must be positive")
    p_green = replace(p_blue, delta=float(delta_green))
    if "n_fock" not in kw:
        eps = np.asarray(epsilons, dtype=float)
        probe = (eps[0], eps[-1])
        kw["n_fock"] = max(converged_fock(p_blue, probe, k=5), converged_fock(p_green, probe, k=5))
    blue = rabi_branches(p_blue, epsilons, pairs, **kw)
    green = rabi_branches(p_green, epsilons, pairs, **kw)
    b20 = next(b for b in blue if b.branch == "w20")
    g20 = next(b for b in green if b.branch == "w20")
    return TwoDeltaSpectrum(blue, green, np.asarray(epsilons, dtype=float), np.abs(b20.freq - g20.freq))


def branches_to_csv(branches, path, bias_name="epsilon_ghz"):
    with open(path, "w") as fh:
        fh.write(f"branch,{bias_name},freq_ghz\n")
        for b in branches:
            for e, f in zip(b.epsilon, b.freq):
                fh.write(f"{b.branch},{float(e)!r},{float(f)!r}\n")
