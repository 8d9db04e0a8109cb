import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netcoherence.liouvillian import (FluxTriple, SteadyStateError, build_jump_operators, build_liouvillian,
                                      density_from_json, density_to_json, fluxes, liouvillian_for,
                                      solve_stationary, stationary_efficiency, steady_state,
                                      validate_single_excitation, vec)
from netcoherence.network import NetworkGeometry, RateSet, coupling_matrix, network_seed, sample_geometry
from oracles import random_density, rk4_evolve

seeds = st.integers(min_value=0, max_value=2**64 - 1)
PAPER_RATES = RateSet()


def _generator(n, rates, seed=0):
    return liouvillian_for(sample_geometry(n, seed), rates)


def test_no_dephasing_operators_without_dephasing():
    labels = [j.label for j in build_jump_operators(RateSet(gamma_deph=0), 5)]
    assert not any(lab.startswith("deph") for lab in labels)
    labels = [j.label for j in build_jump_operators(RateSet(gamma_deph=1), 5)]
    assert sum(lab.startswith("deph") for lab in labels) == 5


def test_injection_raising_operator_is_single_entry():
    ops = {j.label: j.matrix for j in build_jump_operators(RateSet(gamma_in=0.5, gamma_out=2), 2)}
    up = ops["in_absorb"]
    assert np.count_nonzero(up) == 1
    assert up[1, 0] == pytest.approx(np.sqrt(0.5))


def test_dephasing_decay_rates():
    g = 0.7
    rates = RateSet(gamma_in=0, gamma_out=0, gamma_rec=0, gamma_deph=g)
    n = 4
    l = build_liouvillian(np.zeros((n, n)), build_jump_operators(rates, n))
    for (i, j), rate in {(1, 2): 4 * g, (0, 1): 2 * g, (2, 4): 4 * g}.items():
        x = np.zeros((n + 1, n + 1), complex)
        x[i, j] = 1.0
        np.testing.assert_allclose(l.apply(x), -rate * x, atol=1e-14)
    # populations are untouched
    np.testing.assert_allclose(l.apply(np.diag([0.2, 0.3, 0.1, 0.3, 0.1])), 0, atol=1e-14)


def test_closed_system_spectrum_is_imaginary():
    rates = RateSet(gamma_in=0, gamma_out=0, gamma_rec=0, gamma_deph=0)
    ev = np.linalg.eigvals(_generator(6, rates, 4).matrix)
    assert np.max(np.abs(ev.real)) < 1e-10


@given(seeds, st.sampled_from([0.0, 10.0]))
def test_trace_and_hermiticity_preserved(seed, deph):
    rng = np.random.default_rng(seed % 2**32)
    l = _generator(7, PAPER_RATES.replace(gamma_deph=deph), seed)
    for _ in range(5):
        a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        out = l.apply(a)
        assert abs(np.trace(out)) <= 1e-12 * np.linalg.norm(a)
        np.testing.assert_allclose(l.apply(a.conj().T), out.conj().T, atol=1e-12)


def test_trace_annihilation_hundred_matrices():
    rng = np.random.default_rng(11)
    l = _generator(7, PAPER_RATES.replace(gamma_deph=3.0), 8)
    for _ in range(100):
        a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        assert abs(np.trace(l.apply(a))) <= 1e-12 * np.linalg.norm(a)


def test_no_injection_gives_ground_state():
    rho = steady_state(_generator(7, PAPER_RATES.replace(gamma_in=0), 1))
    expected = np.zeros((8, 8))
    expected[0, 0] = 1
    np.testing.assert_allclose(rho, expected, atol=1e-12)


def test_two_sites_match_long_time_integration():
    rates = RateSet(gamma_in=0.3, gamma_out=1.1, gamma_rec=0.4, gamma_deph=0.25)
    l = build_liouvillian(np.array([[0, 1.0], [1.0, 0]]), build_jump_operators(rates, 2))
    rho = steady_state(l)
    # slowest relaxation rate is O(0.3); 3000 time units is ~10^3 relaxation times
    rho0 = np.zeros((3, 3), complex)
    rho0[0, 0] = 1
    x = rk4_evolve(l.matrix, vec(rho0), 0.01, 300_000)
    np.testing.assert_allclose(x.reshape(3, 3, order="F"), rho, atol=1e-8)


@given(seeds, st.sampled_from([0.0, 1.0, 10.0]), st.sampled_from([5.0, 20.0, 33.0]))
def test_steady_state_checks_and_flux_balance(seed, deph, rec):
    rates = PAPER_RATES.replace(gamma_deph=deph, gamma_rec=rec)
    l = _generator(7, rates, seed)
    rho = steady_state(l)
    assert abs(np.trace(rho) - 1) < 1e-10
    assert np.linalg.norm(l.matrix @ vec(rho)) <= 1e-10
    assert np.linalg.eigvalsh(rho)[0] >= -1e-10
    f = fluxes(rho, rates)
    assert abs(f.imbalance) <= 1e-10
    assert 0 <= f.j_out <= f.j_in <= rates.gamma_in
    e_s = stationary_efficiency(rho, rates)
    assert 0 <= e_s <= 1
    assert e_s == pytest.approx(f.j_out / rates.gamma_in, rel=1e-12)


def test_fluxes_of_simple_states():
    r = RateSet(gamma_in=0.1, gamma_out=2.0, gamma_rec=0.5)
    ground = np.zeros((4, 4))
    ground[0, 0] = 1
    assert fluxes(ground, r) == FluxTriple(0.1, 0.0, 0.0)
    top = np.zeros((4, 4))
    top[3, 3] = 1
    assert fluxes(top, r).j_out == 2.0


def test_efficiency_identities():
    r = RateSet()
    rho = np.zeros((8, 8))
    rho[-1, -1] = r.gamma_in / r.gamma_out
    rho[0, 0] = 1 - rho[-1, -1]
    assert stationary_efficiency(rho, r) == pytest.approx(1.0, rel=1e-15)
    rho[-1, -1] = 0
    assert stationary_efficiency(rho, r) == 0


def test_degenerate_kernel_detected():
    # no dissipation at all: every stationary state of -i[H, .] is a solution
    rates = RateSet(gamma_in=0, gamma_out=0, gamma_rec=0, gamma_deph=0)
    with pytest.raises(SteadyStateError):
        steady_state(_generator(4, rates))
    # the uniqueness check can be bypassed, the residual check still runs
    l = _generator(4, PAPER_RATES)
    assert solve_stationary(l.matrix, 5, check_uniqueness=False).shape == (5, 5)


@given(seeds, st.permutations([1, 2, 3, 4, 5]), st.sampled_from([0.0, 10.0]))
def test_efficiency_invariant_under_interior_relabelling(seed, perm, deph):
    rates = PAPER_RATES.replace(gamma_deph=deph)
    g = sample_geometry(7, seed)
    gp = g.permuted([0, *perm, 6])
    e1 = stationary_efficiency(steady_state(liouvillian_for(g, rates)), rates)
    e2 = stationary_efficiency(steady_state(liouvillian_for(gp, rates)), rates)
    assert abs(e1 - e2) <= 1e-10


@given(seeds)
def test_efficiency_falls_with_recombination(seed):
    g = sample_geometry(7, seed)
    values = []
    for rec in np.geomspace(5, 50, 8):
        rates = PAPER_RATES.replace(gamma_rec=rec)
        values.append(stationary_efficiency(steady_state(liouvillian_for(g, rates)), rates))
    assert np.all(np.diff(values) < 0)


def test_double_excitation_weight_is_small():
    for i in range(20):
        chk = validate_single_excitation(sample_geometry(7, network_seed(1, i)), PAPER_RATES)
        assert 0 < chk.ratio < 1e-3
        assert not chk.flags


def test_double_excitation_without_injection():
    chk = validate_single_excitation(sample_geometry(5, 3), PAPER_RATES.replace(gamma_in=0))
    assert chk.ratio == 0
    assert "no_excitation" in chk.flags


def test_double_excitation_grows_with_injection():
    g = sample_geometry(5, 21)
    ratios = [validate_single_excitation(g, PAPER_RATES.replace(gamma_in=gi)).ratio
              for gi in (1e-4, 1e-3, 1e-2, 1e-1, 1.0)]
    assert np.all(np.diff(ratios) > 0)


def test_two_site_two_excitation_ratio_matches_population_ratio():
    # for two sites the {0,1,2} space is the full space: compare against a
    # single-excitation truncation at tiny injection, where they must agree
    g = NetworkGeometry(2, [[0, 0, -0.5], [0, 0, 0.5]])
    rates = PAPER_RATES
    chk = validate_single_excitation(g, rates)
    rho1 = steady_state(liouvillian_for(g, rates))
    assert chk.one_excitation == pytest.approx(np.trace(rho1[1:, 1:]).real, rel=1e-3)


def test_density_json_round_trip():
    rho = random_density(np.random.default_rng(2), 5)
    back = density_from_json(density_to_json(rho))
    np.testing.assert_array_equal(back, rho)


def test_coupling_embedding():
    g = sample_geometry(5, 9)
    l = liouvillian_for(g, PAPER_RATES)
    np.testing.assert_array_equal(l.hamiltonian[1:, 1:], coupling_matrix(g))
    assert np.all(l.hamiltonian[0] == 0)
