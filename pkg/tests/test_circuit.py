import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from qpsplit.circuit import (
    PARITY_CONFIGS, BasisSpec, ChargeConfig, CircuitParams, EigenSolution, assemble_qubit_hamiltonian,
    assemble_total_hamiltonian, build_mass_matrix, convergence_check, cpb_reference, eigensolution_to_csv,
    epsilon_from_flux, ground_energy_table, lowest_eigs, node1_phase_scale, persistent_current, qubit_gap,
    qubit_levels, single_island_hamiltonian, split_map_vs_junctions, total_levels, transition_frequencies,
    transitions_at, zero_point_current)
from qpsplit.constants import CONSTANTS
from qpsplit.errors import InvalidParametersError, ResourceError

P = CircuitParams()
SMALL = BasisSpec(n_charge=3, n_harm=12, n_fock=6, n_levels_kept=8)
KHZ = 1e-6

params_st = st.builds(
    CircuitParams,
    e_j=st.floats(40, 200), e_c=st.floats(1, 8), alpha=st.floats(0.3, 1.2), beta=st.floats(0.5, 3),
    u=st.floats(0.3, 1.2), eta=st.tuples(*[st.floats(0, 0.3)] * 3), l_r=st.floats(1, 20))


def test_constants_consistent():
    c = CONSTANTS
    assert min(c.hbar, c.e_charge, c.flux_quantum, c.k_B) > 0
    assert c.flux_quantum == pytest.approx(c.h / (2 * c.e_charge), rel=1e-12)
    assert c.flux_quantum == pytest.approx(oracles.PHI0, rel=1e-12)


def test_mass_matrix_uniform_ring():
    m = build_mass_matrix(CircuitParams(alpha=1, beta=1, u=1, eta=(0, 0, 0)))
    np.testing.assert_array_equal(m, [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])


def test_mass_matrix_device_values():
    m = build_mass_matrix(P)
    np.testing.assert_allclose(np.diag(m), [3.04, 2.02, 1.88], rtol=1e-12)
    assert m[0, 1] == pytest.approx(-0.90) and m[1, 2] == -1.0 and m[0, 2] == 0.0
    assert np.all(np.linalg.eigvalsh(m) > 0)


@settings(max_examples=50, deadline=None)
@given(params_st)
def test_mass_matrix_matches_edge_list_oracle(p):
    m = build_mass_matrix(p)
    np.testing.assert_allclose(m, oracles.mass_matrix(p.alpha, p.beta, p.u, p.eta), atol=1e-14)
    np.testing.assert_array_equal(m, m.T)
    assert np.all(np.linalg.eigvalsh(m) > 0)


def test_mass_matrix_singular_rejected():
    with pytest.raises(InvalidParametersError):
        build_mass_matrix(CircuitParams(alpha=0, beta=0, u=0.9, eta=(0, 0, 0)))


@pytest.mark.parametrize("kw", [{"e_j": 0}, {"e_c": -1}, {"l_r": 0}, {"omega_r": 0}, {"eta": (-0.1, 0, 0)},
                                {"alpha": -0.1}, {"temperature": -1}])
def test_params_validation(kw):
    with pytest.raises(InvalidParametersError):
        CircuitParams(**kw)


def test_params_config_round_trip():
    cfg = P.to_config()
    assert set(cfg) == {"e_j_ghz", "e_c_ghz", "alpha", "beta", "u", "eta", "omega_r_ghz", "l_r_nh",
                        "temperature_k", "delta_sp_ghz"}
    assert CircuitParams.from_config(cfg) == P
    with pytest.raises(KeyError):
        CircuitParams.from_config({**cfg, "bogus": 1})


def test_derived_circuit_quantities():
    assert P.e_lr == pytest.approx(oracles.e_lr_ghz(6.84), rel=1e-12)
    assert P.c_r == pytest.approx(1 / ((2 * np.pi * 4.68e9) ** 2 * 6.84e-9), rel=1e-12)
    i_zpf = zero_point_current(P) * 1e9
    assert i_zpf == pytest.approx(oracles.i_zpf_na(4.68, 6.84), rel=1e-12)
    assert i_zpf == pytest.approx(15.06, abs=0.01)


def test_charge_config_parity_shift():
    c = ChargeConfig((0, 0.15, 0, 0)).with_parity(2)
    assert c.q_g == (0.0, 1.15, 0.0, 0.0)
    with pytest.raises(InvalidParametersError):
        ChargeConfig((0, 0, 0))


def test_basis_dimension_and_guard():
    b = BasisSpec(n_charge=5, n_harm=12)
    assert b.qubit_dim == 11 * 11 * 12
    with pytest.raises(ResourceError):
        assemble_qubit_hamiltonian(P, (0, 0, 0, 0), 0.5, BasisSpec(n_charge=20, n_harm=40, max_dim=1000))
    with pytest.raises(InvalidParametersError):
        BasisSpec(n_fock=0)


@settings(max_examples=15, deadline=None)
@given(params_st, st.tuples(*[st.floats(-2, 2)] * 4), st.floats(0, 1))
def test_hamiltonian_hermitian(p, q, phi):
    h = assemble_qubit_hamiltonian(p, q, phi, SMALL)
    diff = abs(h - h.conj().T).max()
    assert diff <= 1e-10 * abs(h).max()
    ht, _ = assemble_total_hamiltonian(p, q, phi, SMALL)
    assert np.abs(ht - ht.conj().T).max() <= 1e-10 * np.abs(ht).max()


@pytest.mark.parametrize("charges,phi", [((0, 0.15, 0, 0), 0.5), ((0.3, 0.7, -0.2, 0), 0.49),
                                         ((0, 1, 1, 0), 0.5018)])
def test_qubit_levels_match_position_grid_oracle(charges, phi):
    ref = oracles.circuit_levels(P.e_j, P.e_c, P.alpha, P.beta, P.u, P.eta, P.l_r, charges, phi, n_charge=3)
    got = qubit_levels(P, charges, phi, BasisSpec(n_charge=3, n_harm=30), k=4).energies
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_eigensolution_invariants():
    sol = qubit_levels(P, (0, 0.15, 0, 0), 0.5, SMALL, k=6)
    assert np.all(np.diff(sol.energies) >= 0)
    gram = sol.states.conj().T @ sol.states
    np.testing.assert_allclose(gram, np.eye(6), atol=1e-8)
    big = np.argmax(np.abs(sol.states), axis=0)
    lead = sol.states[big, np.arange(6)]
    assert np.allclose(lead.imag, 0) and np.all(lead.real > 0)


def test_sparse_and_dense_paths_agree():
    h = assemble_qubit_hamiltonian(P, (0, 0.15, 0, 0), 0.5, BasisSpec(n_charge=4, n_harm=16))
    assert h.shape[0] > 1200
    w_sparse, _ = lowest_eigs(h, 4)
    w_dense = np.linalg.eigvalsh(h.toarray())[:4]
    np.testing.assert_allclose(w_sparse, w_dense, atol=1e-9)


def test_single_island_charging_limit():
    for ng in (0.0, 0.3, 0.5):
        h = single_island_hamiltonian(1e-12, 4.02, 2 * ng, 6).toarray()
        w = np.linalg.eigvalsh(h)[:3]
        ref = np.sort(4 * 4.02 * (np.arange(-6, 7) - (-ng)) ** 2)[:3]
        np.testing.assert_allclose(w, ref, atol=1e-9)


@pytest.mark.parametrize("ratio", [1, 5, 20])
def test_single_island_matches_cpb_reference(ratio):
    # n_g enters the CPB reference with the opposite sign convention
    for ng in (0.0, 0.21, 0.5):
        w = np.linalg.eigvalsh(single_island_hamiltonian(ratio * 2.0, 2.0, -2 * ng, 8).toarray())[:3]
        np.testing.assert_allclose(w, cpb_reference(ratio * 2.0, 2.0, ng, 8), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 50), st.floats(0.5, 8), st.floats(-3, 3))
def test_cpb_reference_oracle_and_periodicity(ej, ec, ng):
    w = cpb_reference(ej, ec, ng, 12)
    np.testing.assert_allclose(w, oracles.cpb_levels(ej, ec, ng, 12), atol=1e-9 * max(ej, ec))
    # periodicity holds once the cutoff is far from the offset
    np.testing.assert_allclose(cpb_reference(ej, ec, ng % 1.0, 12), cpb_reference(ej, ec, ng % 1.0 + 1, 13),
                               atol=1e-8 * max(ej, ec))


def test_cpb_uncoupled_levels():
    w = cpb_reference(0.0, 1.0, 0.3, 6)
    np.testing.assert_allclose(w, np.sort(4 * (np.arange(-6, 7) - 0.3) ** 2)[:3], atol=1e-12)


def test_cpb_even_odd_splitting_decreases():
    ratios = [5, 10, 20, 40]
    diffs = []
    for r in ratios:
        e0 = oracles.cpb_levels(r, 1.0, 0.0, 20)
        e5 = oracles.cpb_levels(r, 1.0, 0.5, 20)
        ref = abs((e0[1] - e0[0]) - (e5[1] - e5[0]))
        w0, w5 = cpb_reference(r, 1.0, 0.0, 20), cpb_reference(r, 1.0, 0.5, 20)
        got = abs((w0[1] - w0[0]) - (w5[1] - w5[0]))
        assert got == pytest.approx(ref, rel=1e-8)
        diffs.append(got)
    assert all(a > b for a, b in zip(diffs, diffs[1:]))


def test_cpb_cutoff_guard():
    with pytest.raises(InvalidParametersError):
        cpb_reference(1, 1, 0, 3)


@settings(max_examples=10, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.45, 0.55))
def test_charge_symmetries_small_basis(q2, q3, phi):
    base = qubit_levels(P, (0, q2, q3, 0), phi, SMALL).energies
    conj = qubit_levels(P, (0, -q2, -q3, 0), 1 - phi, SMALL).energies
    np.testing.assert_allclose(base, conj, atol=KHZ)
    mirror = qubit_levels(P, (0, q2, q3, 0), 1 - phi, SMALL).energies
    np.testing.assert_allclose(base, mirror, atol=KHZ)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(-2, 2), st.integers(-2, 2))
def test_two_e_periodicity_small_basis(q2, q3, k2, k3):
    base = qubit_levels(P, (0, q2, q3, 0), 0.5018, SMALL).energies
    moved = qubit_levels(P, (0, q2 + 2 * k2, q3 + 2 * k3, 0), 0.5018, SMALL).energies
    np.testing.assert_allclose(base, moved, atol=KHZ)


def test_island4_charge_is_bookkeeping_only():
    a = assemble_qubit_hamiltonian(P, (0, 0.2, 0, 0), 0.5, SMALL)
    b = assemble_qubit_hamiltonian(P, (0, 0.2, 0, 0.7), 0.5, SMALL)
    assert abs(a - b).max() == 0


def test_transition_frequencies():
    sol = EigenSolution(np.array([0.0, 1.5, 4.0, 4.5]), None)
    w01, w02, w12, w00 = transition_frequencies(sol, [(0, 1), (0, 2), (1, 2), (0, 0)])
    assert w00 == 0 and w02 == pytest.approx(w01 + w12, rel=1e-15)
    with pytest.raises(IndexError):
        transition_frequencies(sol, [(0, 4)])
    with pytest.raises(IndexError):
        transition_frequencies(sol, [(2, 1)])


def test_transition_additivity_total_model():
    sol = total_levels(P, (0, 0.15, 0, 0), 0.5018, SMALL, n_levels=4)
    w01, w02, w12 = transition_frequencies(sol, [(0, 1), (0, 2), (1, 2)])
    assert w02 - w01 - w12 == pytest.approx(0, abs=1e-10 * w02)


def test_uncoupled_total_is_tensor_sum():
    b = SMALL
    sol = total_levels(P, (0, 0.15, 0, 0), 0.5, b, coupling=False)
    q = sol.extra["qubit_energies"][:b.n_levels_kept]
    ladder = P.omega_r * (np.arange(b.n_fock) + 0.5)
    np.testing.assert_allclose(sol.energies, np.sort(np.add.outer(q, ladder).ravel()), atol=1e-9)
    w10 = transitions_at(P, (0, 0.15, 0, 0), 0.5, b, ((0, 1),), coupling=False)[0]
    assert w10 == pytest.approx(min(q[1] - q[0], P.omega_r), abs=1e-9)


def test_convergence_check_small_basis_fails():
    rep = convergence_check(P, (0, 0.15, 0, 0), 0.5, BasisSpec(n_charge=1, n_harm=4, n_fock=4, n_levels_kept=4))
    assert not rep.converged and rep.max_shift > 1e-5


def test_fock_doubling_uncoupled_exact():
    b = SMALL
    q = qubit_levels(P, (0, 0.15, 0, 0), 0.5, b, k=b.n_levels_kept)
    a = transitions_at(P, (0, 0.15, 0, 0), 0.5, b, ((0, 1),), coupling=False)
    c = transitions_at(P, (0, 0.15, 0, 0), 0.5, replace(b, n_fock=2 * b.n_fock), ((0, 1),), coupling=False)
    assert a == c
    assert q.energies[1] - q.energies[0] == pytest.approx(a[0], abs=1e-12) or a[0] == pytest.approx(P.omega_r)


def test_node1_scale_positive():
    assert 0.05 < node1_phase_scale(P) < 1.0


def test_eigensolution_csv(tmp_path):
    sol = qubit_levels(P, (0, 0, 0, 0), 0.5, SMALL)
    path = tmp_path / "e.csv"
    eigensolution_to_csv(sol, path)
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert path.read_text().splitlines()[0] == "level_index,energy_ghz"
    np.testing.assert_allclose(rows[:, 1], sol.energies, rtol=1e-14)


# --- device-parameter results in the converged default basis ---------------------


def test_gap_in_fitted_range():
    gap = qubit_gap(P, (0, 0.15, 0, 0))
    assert 0.80 <= gap <= 0.86


def test_gap_charge_dependence_cosine_like():
    qs = np.linspace(0, 1, 6)
    gaps = np.array([qubit_gap(P, (0, q, 0, 0)) for q in qs])
    assert np.argmax(gaps) in (0, 5) and np.argmin(gaps) in (0, 5)
    assert np.all(np.diff(gaps) < 0) or np.all(np.diff(gaps) > 0)
    splits = [abs(qubit_gap(P, (0, q, 0, 0)) - qubit_gap(P, (0, q + 1, 0, 0))) for q in (0.0, 0.25)]
    assert splits[0] > splits[1]


def test_default_basis_converged():
    rep = convergence_check(P, (0, 0.15, 0, 0), 0.5018)
    assert rep.converged, rep.max_shift


def test_gap_check_raises_for_coarse_basis():
    from qpsplit.errors import ConvergenceError
    with pytest.raises(ConvergenceError) as ei:
        qubit_gap(P, (0, 0, 0, 0), BasisSpec(n_charge=1, n_harm=4), check=True)
    assert len(ei.value.values) == 2


def test_epsilon_from_flux():
    i_p = persistent_current(P)
    assert epsilon_from_flux(P, 0.5, i_p) == 0
    assert epsilon_from_flux(P, 0.51, i_p) == pytest.approx(-epsilon_from_flux(P, 0.49, i_p), abs=KHZ)
    # direct two-level reading at 0.5018: sqrt(f_q^2 - Delta^2)
    gap = qubit_gap(P)
    w = qubit_levels(P, (0, 0, 0, 0), 0.5018, k=2).energies
    direct = np.sqrt((w[1] - w[0]) ** 2 - gap ** 2)
    expected = 2 * i_p * 1e-9 * oracles.PHI0 * 0.0018 / oracles.H_PLANCK / 1e9
    assert epsilon_from_flux(P, 0.5018, i_p) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(direct, rel=0.01)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        epsilon_from_flux(P, 0.55, i_p)
    assert rec


def test_ground_energy_ordering():
    tab = ground_energy_table(P)
    e = {k: tab[k] for k in PARITY_CONFIGS}
    assert e[(0.0, 0.0, 0.0, 0.0)] == 0
    assert e[(0.0, 0.0, 1.0, 0.0)] > e[(0.0, 1.0, 0.0, 0.0)] > e[(0.0, 1.0, 1.0, 0.0)] > e[(0.0, 0.0, 0.0, 0.0)]
    assert abs(e[(1.0, 0.0, 0.0, 0.0)]) < 1e-9 and abs(e[(0.0, 0.0, 0.0, 1.0)]) < 1e-9


def test_ground_energy_warns_outside_junction_ordering():
    with pytest.warns(UserWarning):
        ground_energy_table(replace(P, alpha=0.95), basis=SMALL, model="qubit")


@pytest.mark.filterwarnings("ignore:junction sizes")
def test_alpha_equals_u_symmetry_when_node1_grounded():
    # with node 1 pinned to ground the ring is mirror symmetric under u <-> alpha
    g = replace(P, alpha=0.9, beta=200.0, l_r=0.01)
    tab = ground_energy_table(g, model="qubit")
    a, b = tab[(0.0, 1.0, 0.0, 0.0)], tab[(0.0, 0.0, 1.0, 0.0)]
    assert abs(a - b) < 2e-3 * abs(a)
    loose = ground_energy_table(replace(P, alpha=0.9), model="qubit")
    assert abs(a - b) < abs(loose[(0.0, 1.0, 0.0, 0.0)] - loose[(0.0, 0.0, 1.0, 0.0)])


def test_split_map_trends():
    sm = split_map_vs_junctions(P, [0.76], [0.5, 0.9])
    assert not sm.failures
    assert abs(sm.values[0, 1]) > abs(sm.values[0, 0])
    stiff = split_map_vs_junctions(replace(P, e_j=2 * P.e_j), [0.76], [0.5, 0.9])
    assert np.max(np.abs(stiff.values)) < np.max(np.abs(sm.values))


def test_split_map_swap_asymmetry_vanishes_as_node1_is_grounded():
    diffs = []
    for beta, l_r in ((2.02, 6.84), (40.0, 0.1)):
        p = replace(P, beta=beta, l_r=l_r)
        d2 = split_map_vs_junctions(p, [0.9], [0.5], island=2).values[0, 0]
        d3 = split_map_vs_junctions(p, [0.5], [0.9], island=3).values[0, 0]
        diffs.append(abs(d3 - d2))
    assert diffs[1] < 0.1 * diffs[0]


def test_split_map_grid_validation():
    with pytest.raises(InvalidParametersError):
        split_map_vs_junctions(P, [0.0, 0.5], [0.9])
    with pytest.raises(InvalidParametersError):
        split_map_vs_junctions(P, [0.5], [1.6])
