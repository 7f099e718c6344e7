"""Circuit Hamiltonian of a four-junction flux qubit galvanically coupled to an
LC resonator.

Topology (node 4 is the reference, ``phi_4 = 0``)::

    4 --beta-- 1 --u-- 2 --v-- 3 --alpha(phi_ext)-- 4
               |
              L_r (resonator)

Nodes 2 and 3 are compact and use the charge basis.  Node 1 is shunted by
the resonator inductance and uses a truncated harmonic-oscillator basis.
All energies are frequencies in GHz (E / h), charges are in units of ``e``
and the external flux is the reduced value ``phi_ext / 2pi``.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constants import CONSTANTS, GHZ
from .errors import ConvergenceError, InvalidParametersError, ResourceError

#: Charge configurations with a single excess quasiparticle (units of e).
PARITY_CONFIGS = (
    (0.0, 0.0, 0.0, 0.0),
    (1.0, 0.0, 0.0, 0.0),
    (0.0, 1.0, 0.0, 0.0),
    (0.0, 0.0, 1.0, 0.0),
    (0.0, 0.0, 0.0, 1.0),
    (0.0, 1.0, 1.0, 0.0),
)

CONVERGENCE_TOL_GHZ = 1e-5
DENSE_LIMIT = 1200


@dataclass(frozen=True)
class CircuitParams:
    """Circuit energies and ratios.

    Defaults are the fitted device values (E_J/h = 124 GHz, E_c/h = 4.02 GHz,
    alpha = 0.76, beta = 2.02, u = 0.90, eta = 0.12, omega_r/2pi = 4.68 GHz,
    L_r = 6.84 nH).  ``temperature`` and ``delta_sp`` are placeholders used
    only by the quasiparticle module.
    """

    e_j: float = 124.0
    e_c: float = 4.02
    alpha: float = 0.76
    beta: float = 2.02
    u: float = 0.90
    eta: tuple = (0.12, 0.12, 0.12)
    omega_r: float = 4.68
    l_r: float = 6.84
    temperature: float = 0.05
    delta_sp: tuple = (46.0, 45.0, 46.0, 45.0)

    def __post_init__(self):
        object.__setattr__(self, "eta", tuple(float(x) for x in np.broadcast_to(self.eta, 3)))
        object.__setattr__(self, "delta_sp", tuple(float(x) for x in np.broadcast_to(self.delta_sp, 4)))
        for name in ("e_j", "e_c", "omega_r", "l_r"):
            if not getattr(self, name) > 0:
                raise InvalidParametersError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("alpha", "beta", "u"):
            if not getattr(self, name) >= 0:
                raise InvalidParametersError(f"{name} must be non-negative")
        if min(self.eta) < 0:
            raise InvalidParametersError("gate capacitance ratios must be non-negative")
        if self.temperature < 0:
            raise InvalidParametersError("temperature must be non-negative")

    @property
    def e_lr(self):
        """Inductive energy (Phi_0 / 2pi)^2 / (2 L_r) of the resonator shunt, GHz."""
        phi0 = CONSTANTS.flux_quantum
        return (phi0 / (2 * np.pi)) ** 2 / (2 * self.l_r * 1e-9) / CONSTANTS.h / GHZ

    @property
    def c_r(self):
        """Resonator capacitance in farads."""
        w = 2 * np.pi * self.omega_r * GHZ
        return 1.0 / (w * w * self.l_r * 1e-9)

    # config keys are fixed by the external file format
    _KEYS = {
        "e_j_ghz": "e_j", "e_c_ghz": "e_c", "alpha": "alpha", "beta": "beta", "u": "u",
        "eta": "eta", "omega_r_ghz": "omega_r", "l_r_nh": "l_r",
        "temperature_k": "temperature", "delta_sp_ghz": "delta_sp",
    }

    def to_config(self):
        d = asdict(self)
        return {k: (list(d[a]) if isinstance(d[a], tuple) else d[a]) for k, a in self._KEYS.items()}

    @classmethod
    def from_config(cls, cfg):
        unknown = set(cfg) - set(cls._KEYS)
        if unknown:
            raise KeyError(f"unknown circuit keys: {sorted(unknown)}")
        return cls(**{cls._KEYS[k]: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items()})


@dataclass(frozen=True)
class ChargeConfig:
    """Gate charges of islands 1-4 in units of e."""

    q_g: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        q = tuple(float(x) for x in self.q_g)
        if len(q) != 4:
            raise InvalidParametersError("need four island charges")
        object.__setattr__(self, "q_g", q)

    def with_parity(self, island):
        """Return the configuration with one extra electron on ``island`` (1-4)."""
        q = list(self.q_g)
        q[island - 1] += 1.0
        return ChargeConfig(tuple(q))


def _charges(q):
    if isinstance(q, ChargeConfig):
        return q.q_g
    return ChargeConfig(tuple(q)).q_g


@dataclass(frozen=True)
class BasisSpec:
    """Truncation of the numerical basis.

    ``n_charge`` gives Cooper-pair numbers ``-n..n`` on nodes 2 and 3,
    ``n_harm`` oscillator states on node 1, ``n_levels_kept`` qubit
    eigenstates carried into the coupled problem with ``n_fock`` photons.
    """

    n_charge: int = 6
    n_harm: int = 24
    n_fock: int = 12
    n_levels_kept: int = 30
    max_dim: int = 40000

    def __post_init__(self):
        for name in ("n_charge", "n_harm", "n_fock", "n_levels_kept"):
            if getattr(self, name) < 1:
                raise InvalidParametersError(f"{name} must be >= 1")

    @property
    def qubit_dim(self):
        return (2 * self.n_charge + 1) ** 2 * self.n_harm

    def incremented(self):
        return replace(self, n_charge=self.n_charge + 1, n_harm=self.n_harm + 4,
                       n_fock=self.n_fock + 4, n_levels_kept=self.n_levels_kept + 6)


@dataclass
class EigenSolution:
    energies: np.ndarray
    states: np.ndarray
    basis: BasisSpec = None
    extra: dict = field(default_factory=dict)


def build_mass_matrix(params):
    """Capacitance matrix of nodes 1-3 normalized by the v-junction capacitance."""
    a, b, u = params.alpha, params.beta, params.u
    e1, e2, e3 = params.eta
    m = np.array([
        [b + u + e1, -u, 0.0],
        [-u, u + 1.0 + e2, -1.0],
        [0.0, -1.0, 1.0 + a + e3],
    ])
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise InvalidParametersError("mass matrix is not positive definite") from None
    return m


# ---------------------------------------------------------------------------
# single-node operators
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _oscillator_ops(phi_zpf, n_harm):
    # trig functions are evaluated in a larger basis and then truncated
    big = max(4 * n_harm, n_harm + 40)
    b = np.diag(np.sqrt(np.arange(1, big)), 1)
    x = phi_zpf * (b + b.T)
    w, v = np.linalg.eigh(x)
    cos = ((v * np.cos(w)) @ v.T)[:n_harm, :n_harm]
    sin = ((v * np.sin(w)) @ v.T)[:n_harm, :n_harm]
    phi = x[:n_harm, :n_harm]
    n_op = (1j * (b.T - b) / (2 * phi_zpf))[:n_harm, :n_harm]
    return phi, n_op, cos, sin


def node1_phase_scale(params):
    """Zero-point phase spread of the node-1 oscillator basis."""
    minv = np.linalg.inv(build_mass_matrix(params))
    ec1 = params.e_c * minv[0, 0]
    stiffness = 2 * params.e_lr + (params.beta + params.u) * params.e_j
    return (2 * ec1 / stiffness) ** 0.25


def _charge_ops(n_charge):
    d = 2 * n_charge + 1
    nv = np.arange(-n_charge, n_charge + 1, dtype=float)
    raise_op = sp.diags(np.ones(d - 1), -1, shape=(d, d), format="csr")
    return nv, raise_op


def _kron3(a, b, c):
    return sp.kron(sp.kron(sp.csr_matrix(a), sp.csr_matrix(b)), sp.csr_matrix(c), format="csr")


@lru_cache(maxsize=16)
def _qubit_pieces(params, n_charge, n_harm):
    """Charge- and flux-independent parts of the qubit Hamiltonian."""
    minv = np.linalg.inv(build_mass_matrix(params))
    phi, n1, cos1, sin1 = _oscillator_ops(round(node1_phase_scale(params), 15), n_harm)
    nv, d = _charge_ops(n_charge)
    dc = nv.size
    i1 = sp.identity(n_harm, format="csr")
    ic = sp.identity(dc, format="csr")
    nops = [
        _kron3(n1, ic, ic),
        _kron3(i1, sp.diags(nv), ic),
        _kron3(i1, ic, sp.diags(nv)),
    ]
    ej, ec = params.e_j, params.e_c
    h0 = sp.csr_matrix((nops[0].shape[0],) * 2, dtype=complex)
    for i in range(3):
        for j in range(3):
            if minv[i, j] != 0.0:
                h0 = h0 + 4 * ec * minv[i, j] * (nops[i] @ nops[j])
    h0 = h0 + params.e_lr * _kron3(phi @ phi, ic, ic)
    h0 = h0 - ej * params.beta * _kron3(cos1, ic, ic)
    # cos(phi2 - phi1) = Re[e^{i phi2} e^{-i phi1}]
    t = _kron3(cos1 - 1j * sin1, d, ic)
    h0 = h0 - 0.5 * ej * params.u * (t + t.conj().T)
    t = _kron3(i1, d.T, d)
    h0 = h0 - 0.5 * ej * (t + t.conj().T)
    alpha_term = -0.5 * ej * params.alpha * _kron3(i1, ic, d.T)  # times e^{i phi_ext}
    phase1 = _kron3(phi, ic, ic)
    return h0.tocsr(), nops, alpha_term.tocsr(), phase1, minv


def assemble_qubit_hamiltonian(params, charges, phi_ext, basis=None):
    """Sparse qubit Hamiltonian (GHz) at gate charges ``charges`` and flux ``phi_ext``.

    Island 4 is the reference node, so its charge only labels parity.
    """
    basis = basis or BasisSpec()
    if basis.qubit_dim > basis.max_dim:
        raise ResourceError(f"qubit dimension {basis.qubit_dim} exceeds cap {basis.max_dim}")
    q = _charges(charges)
    h0, nops, alpha_term, _, minv = _qubit_pieces(params, basis.n_charge, basis.n_harm)
    ng = np.asarray(q[:3]) / 2.0  # Cooper-pair units
    # centre the compact-node charge windows on the offsets; the integer part
    # is a relabelling n -> n - k that leaves the untruncated spectrum alone
    ng[1:] -= np.floor(ng[1:] + 0.5)
    lin = minv @ ng
    h = h0.copy()
    for i in range(3):
        if lin[i] != 0.0:
            h = h + 8 * params.e_c * lin[i] * nops[i]
    h = h + 4 * params.e_c * float(ng @ minv @ ng) * sp.identity(h.shape[0], format="csr")
    t = np.exp(2j * np.pi * phi_ext) * alpha_term
    h = h + t + t.conj().T
    return h.tocsr()


def single_island_hamiltonian(e_j, e_c, q_g, n_charge):
    """Charge-basis Hamiltonian of one island with one junction, built with the
    same operators as the multi-node circuit.  ``q_g`` is in units of e."""
    nv, d = _charge_ops(n_charge)
    n = sp.diags(nv + q_g / 2.0)
    return (4 * e_c * (n @ n) - 0.5 * e_j * (d + d.T)).tocsr()


_V0_CACHE = {}


def _start_vector(n):
    v = _V0_CACHE.get(n)
    if v is None:
        rng = np.random.default_rng(20240607)
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        _V0_CACHE[n] = v
    return v


def _fix_phases(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    ph = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(ph) / ph)[None, :]


def lowest_eigs(h, k):
    """Lowest ``k`` eigenpairs of a Hermitian matrix, ascending, phase-fixed."""
    dim = h.shape[0]
    k = min(k, dim)
    if dim <= DENSE_LIMIT or k >= dim - 1:
        dense = h.toarray() if sp.issparse(h) else np.asarray(h)
        w, v = sla.eigh(dense, subset_by_index=(0, k - 1))
    else:
        w, v = spla.eigsh(h, k=k, which="SA", tol=1e-13, v0=_start_vector(dim),
                          ncv=min(dim, max(2 * k + 1, 40)))
    order = np.argsort(w, kind="stable")
    return w[order], _fix_phases(v[:, order])


def qubit_levels(params, charges, phi_ext, basis=None, k=4):
    basis = basis or BasisSpec()
    w, v = lowest_eigs(assemble_qubit_hamiltonian(params, charges, phi_ext, basis), k)
    return EigenSolution(w, v, basis)


def qubit_gap(params, charges=(0, 0, 0, 0), basis=None, check=False):
    """Qubit gap Delta/2pi (GHz): lowest level splitting at phi_ext/2pi = 0.5.

    With ``check=True`` the gap is recomputed in the incremented basis and a
    :class:`ConvergenceError` is raised if the two differ by more than 10 kHz.
    """
    basis = basis or BasisSpec()
    w = qubit_levels(params, charges, 0.5, basis, k=4).energies
    gap = w[1] - w[0]
    if check:
        w2 = qubit_levels(params, charges, 0.5, basis.incremented(), k=4).energies
        gap2 = w2[1] - w2[0]
        if abs(gap2 - gap) > CONVERGENCE_TOL_GHZ:
            raise ConvergenceError(f"gap not converged: {gap} vs {gap2} GHz", (gap, gap2))
    return gap


# ---------------------------------------------------------------------------
# qubit + resonator
# ---------------------------------------------------------------------------


def zero_point_current(params):
    """I_zpf = sqrt(hbar omega_r / 2 L_r) in amperes."""
    w = 2 * np.pi * params.omega_r * GHZ
    return np.sqrt(CONSTANTS.hbar * w / (2 * params.l_r * 1e-9))


def phase_coupling(params):
    """Coupling energy per radian of node-1 phase, I_zpf Phi_0 / 2pi, in GHz."""
    return zero_point_current(params) * CONSTANTS.flux_quantum / (2 * np.pi) / CONSTANTS.h / GHZ


def assemble_total_hamiltonian(params, charges, phi_ext, basis=None, coupling=True, qubit=None):
    """Dense qubit-resonator Hamiltonian in the hierarchical product basis.

    The lowest ``basis.n_levels_kept`` qubit eigenstates are tensored with
    ``basis.n_fock`` photon states; the node-1 phase is projected onto the
    kept levels.  Returns ``(H, qubit_solution)``.
    """
    basis = basis or BasisSpec()
    nk, nf = basis.n_levels_kept, basis.n_fock
    if qubit is None:
        qubit = qubit_levels(params, charges, phi_ext, basis, k=nk)
    eps = qubit.energies[:nk]
    nk = eps.size
    _, _, _, phase1, _ = _qubit_pieces(params, basis.n_charge, basis.n_harm)
    vecs = qubit.states[:, :nk]
    p = vecs.conj().T @ (phase1 @ vecs)
    p = 0.5 * (p + p.conj().T)
    a = np.diag(np.sqrt(np.arange(1, nf)), 1)
    h = np.kron(np.diag(eps), np.eye(nf)) + np.kron(
        np.eye(nk), params.omega_r * (a.T @ a + 0.5 * np.eye(nf)))
    if coupling:
        h = h - phase_coupling(params) * np.kron(p, a + a.T)
    return h, qubit


def total_levels(params, charges, phi_ext, basis=None, coupling=True, n_levels=None):
    basis = basis or BasisSpec()
    h, qubit = assemble_total_hamiltonian(params, charges, phi_ext, basis, coupling)
    if n_levels is None:
        w, v = sla.eigh(h)
    else:
        w, v = sla.eigh(h, subset_by_index=(0, min(n_levels, h.shape[0]) - 1))
    return EigenSolution(w, _fix_phases(v), basis, {"qubit_energies": qubit.energies})


def transition_frequencies(sol, pairs):
    """omega_ij/2pi = E_j - E_i (GHz) for each ``(i, j)`` pair."""
    e = sol.energies if isinstance(sol, EigenSolution) else np.asarray(sol)
    out = []
    for i, j in pairs:
        if not (0 <= i < len(e) and 0 <= j < len(e)):
            raise IndexError(f"transition ({i}, {j}) outside {len(e)} computed levels")
        if j < i:
            raise IndexError(f"transition ({i}, {j}) must have j >= i")
        out.append(e[j] - e[i])
    return out


def transitions_at(params, charges, phi_ext, basis=None, pairs=((0, 1), (0, 2), (1, 3)), coupling=True):
    sol = total_levels(params, charges, phi_ext, basis, coupling, n_levels=max(j for _, j in pairs) + 1)
    return transition_frequencies(sol, pairs)


def omega20(params, charges, phi_ext, basis=None):
    return transitions_at(params, charges, phi_ext, basis, pairs=((0, 2),))[0]


def parity_pair(params, q2, phi_ext, basis=None):
    """omega_20 for (0, q2, 0, 0) and (0, q2 + 1, 0, 0); returns (even, odd)."""
    return (omega20(params, (0, q2, 0, 0), phi_ext, basis),
            omega20(params, (0, q2 + 1.0, 0, 0), phi_ext, basis))


def parallel_map(fn, items, workers=None):
    items = list(items)
    if not workers or workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def ground_energy_table(params, basis=None, phi_ext=0.5, model="total", workers=None):
    """Ground energy of each single-quasiparticle configuration relative to (0,0,0,0).

    ``model`` selects the full qubit-resonator Hamiltonian (``"total"``) or the
    bare qubit Hamiltonian (``"qubit"``).
    """
    if not (1.0 > params.u > params.alpha):
        warnings.warn("junction sizes do not satisfy v > u > alpha", stacklevel=2)
    basis = basis or BasisSpec()

    def e0(cfg):
        if model == "qubit":
            return qubit_levels(params, cfg, phi_ext, basis, k=2).energies[0]
        return total_levels(params, cfg, phi_ext, basis, n_levels=1).energies[0]

    vals = parallel_map(e0, PARITY_CONFIGS, workers)
    ref = vals[0]
    return {cfg: v - ref for cfg, v in zip(PARITY_CONFIGS, vals)}


@dataclass
class SplitMap:
    alphas: np.ndarray
    us: np.ndarray
    island: int
    values: np.ndarray  # GHz, shape (len(alphas), len(us))
    failures: list = field(default_factory=list)


def split_map_vs_junctions(params, alphas, us, island=2, basis=None, workers=None):
    """Gap change Delta(e on ``island``) - Delta(0) over a grid of (alpha, u)."""
    alphas = np.asarray(alphas, dtype=float)
    us = np.asarray(us, dtype=float)
    if np.any(alphas <= 0) or np.any(us <= 0) or alphas.max() > 1.5 or us.max() > 1.5:
        raise InvalidParametersError("junction ratios must lie in (0, 1.5]")
    basis = basis or BasisSpec()
    shifted = ChargeConfig().with_parity(island)
    cells = [(i, j) for i in range(alphas.size) for j in range(us.size)]

    def cell(ij):
        i, j = ij
        p = replace(params, alpha=float(alphas[i]), u=float(us[j]))
        try:
            return qubit_gap(p, shifted, basis) - qubit_gap(p, (0, 0, 0, 0), basis)
        except (ConvergenceError, InvalidParametersError, spla.ArpackError) as exc:
            return exc

    out = np.full((alphas.size, us.size), np.nan)
    failures = []
    for (i, j), val in zip(cells, parallel_map(cell, cells, workers)):
        if isinstance(val, Exception):
            failures.append(((alphas[i], us[j]), str(val)))
        else:
            out[i, j] = val
    return SplitMap(alphas, us, island, out, failures)


def cpb_reference(e_j, e_c, n_g, n_cutoff=10, n_levels=3):
    """Lowest eigenenergies of 4E_c(n - n_g)^2 - E_J cos(theta) in the charge basis.

    ``n_g`` is in Cooper-pair units (period 1).
    """
    if n_cutoff < 5:
        raise InvalidParametersError("n_cutoff must be >= 5")
    n = np.arange(-n_cutoff, n_cutoff + 1, dtype=float)
    diag = 4 * e_c * (n - n_g) ** 2
    off = np.full(n.size - 1, -0.5 * e_j)
    return sla.eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, n_levels - 1))


# ---------------------------------------------------------------------------
# flux bias -> loop-current energy
# ---------------------------------------------------------------------------


def persistent_current(params, charges=(0, 0, 0, 0), basis=None, x1=0.008, x2=0.012):
    """Persistent current I_p (nA) from the flux slope of the qubit splitting.

    The loop energy eps(x) = sqrt(f_q(x)^2 - Delta^2) is evaluated at two
    detunings ``x = phi_ext/2pi - 0.5`` away from the symmetry point.
    """
    basis = basis or BasisSpec()
    gap = qubit_gap(params, charges, basis)

    def eps(x):
        w = qubit_levels(params, charges, 0.5 + x, basis, k=2).energies
        return np.sqrt(max((w[1] - w[0]) ** 2 - gap ** 2, 0.0))

    slope = (eps(x2) - eps(x1)) / (x2 - x1)  # GHz per flux quantum
    return slope * GHZ * CONSTANTS.h / (2 * CONSTANTS.flux_quantum) * 1e9


def epsilon_from_flux(params, phi_ext, i_p=None, basis=None):
    """eps/2pi (GHz) = 2 I_p Phi_0 (phi_ext/2pi - 0.5) / h."""
    x = np.asarray(phi_ext, dtype=float) - 0.5
    if np.any(np.abs(x) > 0.02):
        warnings.warn("flux detuning beyond the linear regime (|x| > 0.02)", stacklevel=2)
    if i_p is None:
        i_p = persistent_current(params, basis=basis)
    return 2 * i_p * 1e-9 * CONSTANTS.flux_quantum * x / CONSTANTS.h / GHZ


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    omega10: float
    omega20: float
    omega10_next: float
    omega20_next: float
    basis: BasisSpec
    next_basis: BasisSpec
    tol: float = CONVERGENCE_TOL_GHZ

    @property
    def max_shift(self):
        return max(abs(self.omega10 - self.omega10_next), abs(self.omega20 - self.omega20_next))

    @property
    def converged(self):
        return self.max_shift < self.tol


def convergence_check(params, charges=(0, 0, 0, 0), phi_ext=0.5, basis=None, coupling=True):
    """Compare omega_10 and omega_20 against the incremented basis (10 kHz criterion)."""
    basis = basis or BasisSpec()
    nxt = basis.incremented()
    a = transitions_at(params, charges, phi_ext, basis, ((0, 1), (0, 2)), coupling)
    b = transitions_at(params, charges, phi_ext, nxt, ((0, 1), (0, 2)), coupling)
    return ConvergenceReport(a[0], a[1], b[0], b[1], basis, nxt)


def eigensolution_to_csv(sol, path):
    idx = np.arange(len(sol.energies))
    np.savetxt(path, np.column_stack([idx, sol.energies]), delimiter=",",
               header="level_index,energy_ghz", comments="", fmt=["%d", "%.15g"])
