import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_instance
from hetnet_abs.channel import EfficiencyMatrices
from hetnet_abs.optimizer import (
    Allocation,
    ConvergenceError,
    InfeasibleUserError,
    SolverOptions,
    brute_force_oracle,
    check_concavity,
    kkt_residual,
    random_feasible_allocation,
    rates,
    solve_fixed_z,
    solve_joint,
    utility,
)


def _pico_only(c, n_users):
    return EfficiencyMatrices(np.full((n_users, 1), c), np.full((n_users, 1), c))


# -- rates and utility


def test_rates_single_bs_equal_split():
    eff = EfficiencyMatrices(np.array([[2.0], [4.0], [6.0]]), np.zeros((3, 1)))
    alloc = Allocation(np.full((3, 1), 1 / 3), np.zeros((3, 1)), 0.0)
    np.testing.assert_allclose(rates(alloc, eff), [2 / 3, 4 / 3, 2.0])


def test_rates_zero_allocation():
    eff = random_instance(np.random.default_rng(0), 3, 2)
    assert np.all(rates(Allocation(np.zeros((3, 2)), np.zeros((3, 2)), 0.3), eff) == 0)


def test_rates_blank_only_pico_user():
    eff = EfficiencyMatrices(np.array([[1.0, 2.0]]), np.array([[0.0, 5.0]]))
    alloc = Allocation(np.zeros((1, 2)), np.array([[0.0, 0.4]]), 0.4)
    assert rates(alloc, eff)[0] == pytest.approx(0.4 * 5.0)


def test_utility_examples():
    assert utility(np.ones(4)) == 0.0
    assert utility([np.e, np.e]) == pytest.approx(2.0)
    assert utility([1.0, 0.0]) == -np.inf
    assert utility([1.0, -1.0]) == -np.inf


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=20))
def test_utility_doubling_adds_n_ln2(r):
    r = np.array(r)
    assert utility(2 * r) == pytest.approx(utility(r) + len(r) * np.log(2.0), abs=1e-9)


# -- fixed-z solves


def test_symmetric_pico_two_users_half_blank():
    # equal phase efficiencies make the phase split a segment of optima; rates are unique
    alloc, cert = solve_fixed_z(_pico_only(3.0, 2), 0.5)
    np.testing.assert_allclose(rates(alloc, _pico_only(3.0, 2)), 1.5, atol=1e-6)
    assert alloc.x.sum() == pytest.approx(0.5, abs=1e-7)
    assert alloc.y.sum() == pytest.approx(0.5, abs=1e-7)
    assert cert.certified()


def test_symmetric_pico_distinct_phase_efficiencies():
    # with c_b > c_n each user's rate still splits evenly
    eff = EfficiencyMatrices(np.full((2, 1), 1.0), np.full((2, 1), 2.0))
    alloc, cert = solve_fixed_z(eff, 0.5)
    np.testing.assert_allclose(rates(alloc, eff), 0.75, atol=1e-6)
    assert cert.certified()


@pytest.mark.parametrize("k", [1, 3, 7])
def test_single_macro_k_users_equal_time_share(k):
    rng = np.random.default_rng(k)
    eff = EfficiencyMatrices(rng.uniform(0.5, 4.0, (k, 1)), np.zeros((k, 1)))
    alloc, cert = solve_fixed_z(eff, 0.0)
    np.testing.assert_allclose(alloc.x[:, 0], 1 / k, atol=1e-7)
    assert cert.certified()


def test_fixed_z_rejects_out_of_range():
    with pytest.raises(ValueError):
        solve_fixed_z(_pico_only(1.0, 2), 1.5)


def test_fixed_z_matches_oracle_on_random_2bs_3users():
    eff = random_instance(np.random.default_rng(11), 3, 2)
    for z in (0.0, 0.3, 0.7):
        alloc, cert = solve_fixed_z(eff, z)
        assert cert.certified()
        oracle = brute_force_oracle(eff, z_values=[z], n_starts=4)
        assert utility(rates(alloc, eff)) >= oracle - 1e-4
        # the oracle is feasible, so it cannot beat the optimum by more than its own tolerance
        assert oracle <= utility(rates(alloc, eff)) + 1e-4


def test_fixed_z_blank_only_user_without_blank_link_is_infeasible():
    # user 0 only hears the macro; with z = 1 the macro is silent all the time
    eff = EfficiencyMatrices(np.array([[1.0, 0.0], [1.0, 2.0]]), np.array([[0.0, 0.0], [0.0, 3.0]]))
    with pytest.raises(InfeasibleUserError) as info:
        solve_fixed_z(eff, 1.0)
    assert info.value.users == [0]


# -- joint solves


def test_macro_only_network_pins_z_to_zero():
    eff = EfficiencyMatrices(np.array([[1.0, 2.0], [3.0, 0.5], [1.0, 1.0]]), np.zeros((3, 2)))
    alloc, cert = solve_joint(eff)
    assert alloc.z == 0.0 and cert.certified()
    assert np.all(alloc.y == 0)


def test_single_pico_utility_flat_in_z():
    eff = _pico_only(2.0, 3)
    alloc, cert = solve_joint(eff)
    assert cert.z_free and cert.certified()
    assert 0.0 <= alloc.z <= 1.0
    assert utility(rates(alloc, eff)) == pytest.approx(3 * np.log(2.0 / 3), abs=1e-6)


def test_joint_macro_pico_four_users_matches_oracle():
    eff = EfficiencyMatrices(
        np.array([[2.0, 0.3], [1.5, 0.6], [0.4, 1.2], [0.2, 2.5]]),
        np.array([[0.0, 0.9], [0.0, 1.8], [0.0, 2.4], [0.0, 3.0]]),
    )
    alloc, cert = solve_joint(eff)
    assert cert.certified()
    assert utility(rates(alloc, eff)) >= brute_force_oracle(eff, grid_steps=50) - 1e-4


def test_joint_certificate_is_self_consistent(rng):
    for _ in range(10):
        eff = random_instance(rng, 12, 4, zero_frac=0.3)
        if len(eff.infeasible_users()):
            continue
        alloc, cert = solve_joint(eff)
        recheck = kkt_residual(eff, alloc, (cert.lam, cert.nu))
        assert recheck.certified(1e-6)
        assert np.all(alloc.x >= 0) and np.all(alloc.y >= 0)
        assert np.all(alloc.x.sum(axis=0) <= 1 - alloc.z + 1e-9)
        assert np.all(alloc.y.sum(axis=0) <= alloc.z + 1e-9)
        assert np.all(alloc.y[eff.c_b == 0] == 0)


def test_joint_interior_z_balances_duals(rng):
    eff = random_instance(rng, 10, 3)
    alloc, cert = solve_joint(eff)
    if 1e-6 < alloc.z < 1 - 1e-6:
        assert abs(cert.lam.sum() - cert.nu.sum()) <= 1e-6


def test_infeasible_user_named():
    eff = EfficiencyMatrices(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(InfeasibleUserError, match=r"\[1\]"):
        solve_joint(eff)


def test_iteration_cap_raises_with_best_iterate(rng):
    eff = random_instance(rng, 8, 3)
    with pytest.raises(ConvergenceError) as info:
        solve_joint(eff, SolverOptions(max_iters=1))
    err = info.value
    assert err.best is not None and err.certificate is not None
    assert err.certificate.max_residual > 1e-6


def test_permutation_invariance(rng):
    eff = random_instance(rng, 9, 4)
    alloc, _ = solve_joint(eff)
    pu, pb = rng.permutation(9), rng.permutation(4)
    perm = EfficiencyMatrices(eff.c_n[pu][:, pb], eff.c_b[pu][:, pb])
    alloc_p, _ = solve_joint(perm)
    assert utility(rates(alloc_p, perm)) == pytest.approx(utility(rates(alloc, eff)), abs=1e-7)
    np.testing.assert_allclose(alloc_p.x, alloc.x[pu][:, pb], atol=1e-5)


# -- KKT residual


def test_kkt_hand_built_symmetric_optimum_has_zero_residual():
    c = 3.0
    eff = _pico_only(c, 2)
    alloc = Allocation(np.full((2, 1), 0.25), np.full((2, 1), 0.25), 0.5)
    lam = np.array([c / (c / 2)])
    cert = kkt_residual(eff, alloc, (lam, lam))
    assert cert.max_residual == pytest.approx(0.0, abs=1e-12)


def test_kkt_detects_perturbation(rng):
    eff = random_instance(rng, 5, 3)
    alloc, cert = solve_joint(eff)
    i, j = np.unravel_index(np.argmax(alloc.x), alloc.x.shape)
    x = alloc.x.copy()
    x[i, j] += 0.1
    bad = kkt_residual(eff, Allocation(x, alloc.y, alloc.z), (cert.lam, cert.nu))
    assert max(bad.stationarity_residual, bad.feasibility_residual) > 1e-3


def test_kkt_z_stationarity_only_inside_unit_interval():
    eff = _pico_only(1.0, 1)
    alloc = Allocation(np.array([[0.5]]), np.array([[0.5]]), 0.5)
    assert kkt_residual(eff, alloc, ([2.0], [1.0])).z_stationarity_residual == pytest.approx(1.0)
    assert kkt_residual(eff, alloc, ([2.0], [1.0]), z_fixed=True).z_stationarity_residual == 0.0


# -- oracle


def test_oracle_macro_only_recovers_equal_share():
    c = np.array([[1.0], [2.0], [4.0]])
    eff = EfficiencyMatrices(c, np.zeros_like(c))
    assert brute_force_oracle(eff, grid_steps=10) == pytest.approx(np.log(c[:, 0] / 3).sum(), abs=1e-6)


def test_oracle_rejects_large_instances():
    with pytest.raises(ValueError):
        brute_force_oracle(random_instance(np.random.default_rng(0), 5, 3))


def test_oracle_refinement_is_monotone():
    eff = random_instance(np.random.default_rng(5), 3, 2)
    coarse = brute_force_oracle(eff, grid_steps=10, refine=False)
    fine = brute_force_oracle(eff, grid_steps=40, refine=False)
    # the fine grid contains the coarse grid points
    assert fine >= coarse - 1e-6


@pytest.mark.parametrize("seed", range(8))
def test_solver_at_least_oracle_on_tiny_instances(seed):
    rng = np.random.default_rng(100 + seed)
    eff = random_instance(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
    alloc, cert = solve_joint(eff)
    assert cert.certified()
    assert utility(rates(alloc, eff)) >= brute_force_oracle(eff, grid_steps=30) - 1e-4


# -- uniqueness and concavity


def test_independent_starts_agree(rng):
    eff = random_instance(rng, 10, 3)
    a, _ = solve_joint(eff, start=np.random.default_rng(1))
    b, _ = solve_joint(eff, start=np.random.default_rng(2))
    assert max(np.abs(a.x - b.x).max(), np.abs(a.y - b.y).max()) <= 1e-4


def test_warm_start_from_solution_is_certified(rng):
    eff = random_instance(rng, 10, 3)
    a, _ = solve_joint(eff)
    b, cert = solve_joint(eff, start=a)
    assert cert.certified()
    assert utility(rates(b, eff)) == pytest.approx(utility(rates(a, eff)), abs=1e-8)


def test_concavity_random_pairs(rng):
    eff = random_instance(rng, 6, 3)
    pairs = [(random_feasible_allocation(eff, rng), random_feasible_allocation(eff, rng)) for _ in range(200)]
    ok, counterexample = check_concavity(eff, pairs)
    assert ok and counterexample is None


def test_concavity_identical_pair(rng):
    eff = random_instance(rng, 4, 2)
    a = random_feasible_allocation(eff, rng)
    assert check_concavity(eff, [(a, a)], tol=0.0) == (True, None)


def test_concavity_reports_counterexample_for_non_concave_objective(rng):
    # a negative tolerance demands strict slack, which equal points cannot meet
    eff = random_instance(rng, 4, 2)
    a = random_feasible_allocation(eff, rng)
    ok, (_, _, shortfall) = check_concavity(eff, [(a, a)], tol=-1e-3)
    assert not ok and shortfall == pytest.approx(0.0, abs=1e-12)


def test_random_feasible_allocation_is_feasible(rng):
    eff = random_instance(rng, 6, 3)
    for _ in range(50):
        a = random_feasible_allocation(eff, rng)
        assert np.all(a.x.sum(axis=0) <= 1 - a.z + 1e-12)
        assert np.all(a.y.sum(axis=0) <= a.z + 1e-12)
        assert np.all(rates(a, eff) > 0)
