"""Quasiparticle tunneling energetics and parity telegraph sampling."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .constants import CONSTANTS, GHZ
from .errors import InvalidParametersError, SamplingError

#: Junctions of the ring as (island, island); islands 1 and 4 touch the reservoir.
RING_EDGES = {(4, 1): "beta", (1, 2): "u", (2, 3): "v", (3, 4): "alpha"}

DEFAULT_R_OHM = 10e3
DEFAULT_TEMPERATURE_K = 0.05


def _junction(a, b):
    if (a, b) in RING_EDGES:
        return RING_EDGES[(a, b)]
    if (b, a) in RING_EDGES:
        return RING_EDGES[(b, a)]
    return None


@dataclass(frozen=True)
class TunnelEvent:
    from_island: int
    to_island: int
    delta_e: float  # GHz

    def __post_init__(self):
        if self.from_island == self.to_island:
            raise InvalidParametersError("tunneling needs two different islands")
        if _junction(self.from_island, self.to_island) is None:
            raise InvalidParametersError(
                f"islands {self.from_island} and {self.to_island} share no junction")

    @property
    def junction(self):
        return _junction(self.from_island, self.to_island)


def tunneling_energy_change(eps_initial, eps_final, gap_initial, gap_final):
    """Energy change (GHz) of one quasiparticle hop between islands."""
    if np.any(np.asarray(gap_initial) < 0) or np.any(np.asarray(gap_final) < 0):
        raise InvalidParametersError("superconducting gaps must be non-negative")
    return (eps_final - eps_initial) + (gap_final - gap_initial)


def _reduced(delta_e, temperature):
    if not temperature > 0:
        raise InvalidParametersError("temperature must be positive")
    return np.asarray(delta_e) * GHZ * CONSTANTS.h / (CONSTANTS.k_B * temperature)


def rate_ratio(delta_e, temperature):
    """Forward/backward rate ratio exp(-dE / k_B T) for a hop costing ``delta_e`` GHz."""
    return np.exp(-_reduced(delta_e, temperature))


def base_rate(e_c, resistance):
    """Tunneling rate scale E_c / (e^2 R) in Hz for E_c given in GHz."""
    if not resistance > 0:
        raise InvalidParametersError("resistance must be positive")
    return e_c * GHZ * CONSTANTS.h / (CONSTANTS.e_charge ** 2 * resistance)


def tunneling_rate(delta_e, temperature, gamma0):
    """Hop rate 2 Gamma0 / (1 + exp(dE / k_B T)).

    Equals ``gamma0`` at zero energy change and satisfies detailed balance
    with the reverse hop.
    """
    x = _reduced(delta_e, temperature)
    return 2.0 * gamma0 * np.exp(-np.logaddexp(0.0, x))


def event_energy(table, gaps, from_island, to_island):
    """Energy change of moving the excess quasiparticle between islands.

    ``table`` maps charge configurations to ground energies (GHz) and must
    contain the single-electron configurations; ``gaps`` lists the four
    island gaps in GHz.
    """
    def cfg(k):
        q = [0.0] * 4
        q[k - 1] = 1.0
        return tuple(q)

    de = tunneling_energy_change(table[cfg(from_island)], table[cfg(to_island)],
                                 gaps[from_island - 1], gaps[to_island - 1])
    return TunnelEvent(from_island, to_island, float(de))


@dataclass
class PathReport:
    delta_e: dict        # junction -> energy change of the inward hop, GHz
    cycle_product: dict  # junction -> Gamma_in * Gamma_out, Hz^2
    inward_rate: dict    # junction -> Gamma_in, Hz

    @property
    def dominant(self):
        return max(self.cycle_product, key=self.cycle_product.get)

    @property
    def u_dominant(self):
        return self.cycle_product["u"] > self.cycle_product["alpha"]


def path_dominance(table, gaps, temperature=DEFAULT_TEMPERATURE_K, gamma0=1.0):
    """Compare the reservoir cycles through the u- and alpha-junctions.

    The u cycle is 1 -> 2 -> 1 and the alpha cycle 4 -> 3 -> 4; each is
    scored by the product of its forward and backward hop rates.
    """
    out = PathReport({}, {}, {})
    for name, (res, isl) in (("u", (1, 2)), ("alpha", (4, 3))):
        ev = event_energy(table, gaps, res, isl)
        back = event_energy(table, gaps, isl, res)
        g_in = float(tunneling_rate(ev.delta_e, temperature, gamma0))
        g_out = float(tunneling_rate(back.delta_e, temperature, gamma0))
        out.delta_e[name] = ev.delta_e
        out.cycle_product[name] = g_in * g_out
        out.inward_rate[name] = g_in
    return out


# ---------------------------------------------------------------------------
# Telegraph simulation
# ---------------------------------------------------------------------------


@dataclass
class TelegraphTrace:
    """Piecewise-constant parity record; ``parity[i]`` holds on ``[times[i], times[i+1])``."""

    times: np.ndarray
    parity: np.ndarray
    duration: float
    rate_even_to_odd: float
    rate_odd_to_even: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.parity = np.asarray(self.parity, dtype=np.int8)
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.parity.size > 1 and np.any(self.parity[1:] == self.parity[:-1]):
            raise ValueError("parity must alternate between events")

    @property
    def n_switches(self):
        return max(self.times.size - 1, 0)

    def odd_time(self):
        edges = np.append(self.times, self.duration)
        return float(np.sum(np.diff(edges) * self.parity))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("# rates_hz even_to_odd=%r odd_to_even=%r duration_s=%r\n"
                     % (self.rate_even_to_odd, self.rate_odd_to_even, self.duration))
            fh.write("t_s,parity\n")
            for t, p in zip(self.times, self.parity):
                fh.write(f"{float(t)!r},{int(p)}\n")


def _check_rates(r01, r10):
    if r01 < 0 or r10 < 0 or not np.isfinite(r01 + r10):
        raise InvalidParametersError("rates must be finite and non-negative")
    if r01 == 0 and r10 == 0:
        raise InvalidParametersError("at least one rate must be positive")


def simulate_telegraph(rate_even_to_odd, rate_odd_to_even, duration, seed, start=None):
    """Exact continuous-time sampling of the two-state parity chain.

    ``start`` is 0 (even) or 1 (odd); by default it is drawn from the
    stationary distribution.
    """
    r01, r10 = float(rate_even_to_odd), float(rate_odd_to_even)
    _check_rates(r01, r10)
    if not duration > 0:
        raise InvalidParametersError("duration must be positive")
    rng = np.random.default_rng(seed)
    if start is None:
        start = int(rng.random() < r01 / (r01 + r10))
    rates = np.array([r01, r10]) if start == 0 else np.array([r10, r01])
    chunk = int(min(max(64, 1.2 * duration * (r01 + r10) / 2 + 64), 1 << 22))
    times = [np.zeros(1)]
    t = 0.0
    while True:
        e = rng.standard_exponential(chunk)
        with np.errstate(divide="ignore"):
            holds = e / np.resize(rates, chunk)
        # the next chunk resumes on the same state as the alternation
        if chunk % 2:
            rates = rates[::-1]
        cum = t + np.cumsum(holds)
        stop = np.searchsorted(cum, duration)
        times.append(cum[:stop])
        if stop < chunk:
            break
        t = cum[-1]
    times = np.concatenate(times)
    parity = (start + np.arange(times.size)) % 2
    return TelegraphTrace(times, parity, float(duration), r01, r10)


def simulate_chain(generator, duration, seed, start=0):
    """Exact sampling of a general finite continuous-time Markov chain.

    ``generator[i, j]`` is the rate from state ``i`` to ``j`` (diagonal
    ignored).  Returns ``(times, states)``.
    """
    q = np.array(generator, dtype=float)
    np.fill_diagonal(q, 0.0)
    if np.any(q < 0):
        raise InvalidParametersError("rates must be non-negative")
    out = q.sum(axis=1)
    rng = np.random.default_rng(seed)
    times, states = [0.0], [int(start)]
    t, s = 0.0, int(start)
    while out[s] > 0:
        t += rng.standard_exponential() / out[s]
        if t >= duration:
            break
        s = int(np.searchsorted(np.cumsum(q[s]) / out[s], rng.random(), side="right"))
        times.append(t)
        states.append(s)
    return np.array(times), np.array(states)


@dataclass
class ProbeOccupancy:
    odd_fraction: np.ndarray
    threshold: float

    @property
    def even_fraction(self):
        return 1.0 - self.odd_fraction

    @property
    def both_visible(self):
        return np.minimum(self.odd_fraction, self.even_fraction) > self.threshold

    @property
    def majority_parity(self):
        return (self.odd_fraction > 0.5).astype(np.int8)


def parity_at_probes(trace, probe_times, probe_window, threshold=0.1):
    """Fraction of each window ``[t, t + probe_window)`` spent in each parity."""
    if not probe_window > 0:
        raise InvalidParametersError("probe window must be positive")
    starts = np.asarray(probe_times, dtype=float)
    if starts.size and (starts.min() < trace.times[0] or starts.max() + probe_window > trace.duration):
        raise SamplingError("probe window outside the simulated span")
    frac = kernels.window_occupancy(trace.times, trace.parity.astype(np.int64), trace.duration,
                                    starts, float(probe_window))
    return ProbeOccupancy(frac, threshold)


def sample_probe_parity(rate_even_to_odd, rate_odd_to_even, probe_times, probe_window, seed,
                        threshold=0.1, start=None):
    """Parity occupancy inside probe windows without simulating the gaps.

    The chain state at each window start is drawn from the exact two-state
    transition kernel, so the result has the same law as
    :func:`parity_at_probes` applied to a full trace, at a cost set by the
    switches inside the windows only.
    """
    r01, r10 = float(rate_even_to_odd), float(rate_odd_to_even)
    _check_rates(r01, r10)
    if not probe_window > 0:
        raise InvalidParametersError("probe window must be positive")
    starts = np.asarray(probe_times, dtype=float)
    if starts.size > 1 and np.any(np.diff(starts) < probe_window):
        raise SamplingError("probe windows must not overlap")
    gaps = np.diff(starts, prepend=starts[0]) - probe_window
    gaps[0] = 0.0
    p0 = r01 / (r01 + r10) if start is None else float(start)
    rng = np.random.default_rng(seed)
    lam = probe_window * max(r01, r10)
    kmax = int(lam + 6 * np.sqrt(lam) + 16)
    while True:
        u = rng.random(starts.size)
        holds = rng.standard_exponential((starts.size, kmax))
        frac, state, switches, overflow = kernels.telegraph_windows(
            p0, gaps, u, holds, r01, r10, probe_window)
        if not overflow:
            break
        kmax *= 2
    occ = ProbeOccupancy(frac, threshold)
    occ.start_state = state
    occ.switches = switches
    return occ
