"""Exact-transport tests: pinned worked examples, independent LP and
brute-force oracles, and property-based invariants."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from driftlab.errors import ContractError, InfeasibleError, ParseError
from driftlab.ot import (
    CostMatrix,
    DiscreteMeasure,
    TransportPlan,
    ar_wwd_primal,
    containment_check,
    feature_to_measure,
    load_measure,
    min_cost_flow,
    nested_cost,
    save_measure,
    w2_dimension,
    wasserstein_exact,
    wwd,
)


def lp_transport(supplies, demands, costs, caps=None):
    """Independent LP oracle: scipy HiGHS on the flattened transportation
    program with row sums <= supplies and column sums == demands."""
    n, m = costs.shape
    A_ub, b_ub = [], []
    for i in range(n):
        row = np.zeros(n * m)
        row[i * m:(i + 1) * m] = 1.0
        A_ub.append(row)
        b_ub.append(supplies[i])
    A_eq, b_eq = [], []
    for j in range(m):
        col = np.zeros(n * m)
        col[j::m] = 1.0
        A_eq.append(col)
        b_eq.append(demands[j])
    bounds = [(0, None)] * (n * m)
    if caps is not None:
        bounds = [(0, caps.reshape(-1)[k]) for k in range(n * m)]
    res = linprog(costs.reshape(-1), A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                  A_eq=np.array(A_eq), b_eq=np.array(b_eq), bounds=bounds,
                  method="highs")
    assert res.status == 0, res.message
    return res.fun


def measure_1d(positions, weights):
    return DiscreteMeasure(np.asarray(positions, float), np.asarray(weights, float))


def random_simplex(rng, n):
    w = rng.random(n) + 1e-3
    return w / w.sum()


# ---------------------------------------------------------------------
# wasserstein_exact
# ---------------------------------------------------------------------

def test_identity_zero():
    mu = measure_1d([0.0, 0.4, 1.0], [0.2, 0.3, 0.5])
    cost = CostMatrix(np.abs(mu.atoms[:, None] - mu.atoms[None, :]))
    value, plan = wasserstein_exact(mu, mu, cost, p=1)
    assert value == 0.0
    assert np.allclose(plan.matrix, np.diag(mu.weights))


def test_single_atom_distance():
    m1 = measure_1d([0.0], [1.0])
    m2 = measure_1d([3.0], [1.0])
    value, _ = wasserstein_exact(m1, m2, CostMatrix(np.array([[3.0]])), p=1)
    assert value == pytest.approx(3.0, abs=1e-12)


def test_two_by_two_vertex_enumeration():
    # For a 2x2 transportation polytope with marginals (a1,a2)/(b1,b2)
    # every vertex is determined by the single free entry x = plan[0,0],
    # clamped to the feasible interval; enumerate both endpoints.
    a = np.array([0.5, 0.5])
    b = np.array([0.25, 0.75])
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    lo = max(0.0, a[0] - b[1])
    hi = min(a[0], b[0])
    best = math.inf
    for x in (lo, hi):
        plan = np.array([[x, a[0] - x], [b[0] - x, b[1] - (a[0] - x)]])
        assert np.all(plan >= -1e-12)
        best = min(best, float((plan * c).sum()))
    value, plan = wasserstein_exact(
        measure_1d([0, 1], a), measure_1d([0, 1], b), CostMatrix(c), p=1)
    assert value == pytest.approx(0.25, abs=1e-12)
    assert value == pytest.approx(best, abs=1e-12)
    assert np.allclose(plan.matrix.sum(axis=1), a)
    assert np.allclose(plan.matrix.sum(axis=0), b)


def test_mass_mismatch_rejected():
    m1 = measure_1d([0.0], [1.0])
    m2 = measure_1d([1.0], [0.5])
    with pytest.raises(InfeasibleError):
        wasserstein_exact(m1, m2, CostMatrix(np.array([[1.0]])), p=1)


def test_empty_measure_rejected():
    with pytest.raises(ContractError):
        DiscreteMeasure(np.zeros((0,)), np.zeros((0,)))


def test_matches_lp_oracle_random():
    rng = np.random.default_rng(11)
    for _ in range(25):
        n, m = rng.integers(2, 7), rng.integers(2, 7)
        mu = measure_1d(np.sort(rng.random(n)), random_simplex(rng, n))
        nu = measure_1d(np.sort(rng.random(m)), random_simplex(rng, m))
        cost = CostMatrix(np.abs(mu.atoms[:, None] - nu.atoms[None, :]))
        for p in (1, 2):
            value, plan = wasserstein_exact(mu, nu, cost, p=p)
            oracle = lp_transport(mu.weights, nu.weights, cost.values ** p)
            assert value == pytest.approx(oracle ** (1 / p), abs=1e-8)
            assert np.allclose(plan.matrix.sum(axis=1), mu.weights, atol=1e-9)
            assert np.allclose(plan.matrix.sum(axis=0), nu.weights, atol=1e-9)


def test_triangle_inequality_w1():
    rng = np.random.default_rng(23)
    for _ in range(200):
        k = int(rng.integers(2, 6))
        atoms = np.sort(rng.random(k))
        ms = [measure_1d(atoms, random_simplex(rng, k)) for _ in range(3)]
        cost = CostMatrix(np.abs(atoms[:, None] - atoms[None, :]))
        d01, _ = wasserstein_exact(ms[0], ms[1], cost, p=1)
        d12, _ = wasserstein_exact(ms[1], ms[2], cost, p=1)
        d02, _ = wasserstein_exact(ms[0], ms[2], cost, p=1)
        assert d02 <= d01 + d12 + 1e-8


# ---------------------------------------------------------------------
# min_cost_flow
# ---------------------------------------------------------------------

def test_single_edge():
    res = min_cost_flow(np.array([1.0]), np.array([1.0]), None, np.array([[2.0]]))
    assert res.cost == pytest.approx(2.0, abs=1e-12)
    assert res.flows[0, 0] == pytest.approx(1.0)


def test_flow_matches_wasserstein_on_balanced_instance():
    mu = measure_1d([0.0, 1.0], [0.6, 0.4])
    nu = measure_1d([0.0, 1.0], [0.1, 0.9])
    c = np.array([[0.2, 1.3], [0.9, 0.1]])
    value, _ = wasserstein_exact(mu, nu, CostMatrix(c), p=1)
    res = min_cost_flow(mu.weights, nu.weights, None, c)
    assert res.cost == pytest.approx(value, abs=1e-10)


def brute_force_integer_flow(supplies, demands, caps, costs, scale):
    """Exhaustive search over integer-scaled feasible flows."""
    n, m = costs.shape
    sup = [int(round(s * scale)) for s in supplies]
    dem = [int(round(d * scale)) for d in demands]
    cap = [[int(round(caps[i][j] * scale)) for j in range(m)] for i in range(n)]
    cells = [(i, j) for i in range(n) for j in range(m)]
    best = math.inf
    ranges = [range(min(cap[i][j], sup[i], dem[j]) + 1) for i, j in cells]
    for combo in itertools.product(*ranges):
        f = np.array(combo).reshape(n, m)
        if np.any(f.sum(axis=1) > sup) or np.any(f.sum(axis=0) != dem):
            continue
        best = min(best, float((f * np.asarray(costs)).sum()) / scale)
    return best


def test_capacity_detour_matches_brute_force():
    supplies = [1.0, 1.0]
    demands = [1.0, 1.0]
    caps = [[0.5, 1.0], [1.0, 1.0]]
    costs = np.array([[0.0, 2.0], [3.0, 0.0]])
    res = min_cost_flow(np.array(supplies), np.array(demands),
                        np.array(caps), costs)
    oracle = brute_force_integer_flow(supplies, demands, caps, costs, scale=2)
    assert res.cost == pytest.approx(oracle, abs=1e-10)
    assert res.cost == pytest.approx(2.5, abs=1e-10)


def test_complementary_slackness_certificate():
    rng = np.random.default_rng(5)
    supplies = random_simplex(rng, 4)
    demands = random_simplex(rng, 5)
    costs = rng.random((4, 5))
    res = min_cost_flow(supplies, demands, None, costs)
    # with equal total masses every row is fully used, so reduced costs
    # c_ij - (v_j - u_i) must be >= 0 everywhere and 0 on active edges
    u, v = res.row_potentials, res.col_potentials
    reduced = costs - (v[None, :] - u[:, None])
    assert np.all(reduced >= -1e-9)
    active = res.flows > 1e-12
    assert np.all(np.abs(reduced[active]) <= 1e-9)
    oracle = lp_transport(supplies, demands, costs)
    assert res.cost == pytest.approx(oracle, abs=1e-9)


def test_infeasible_names_cut():
    with pytest.raises(InfeasibleError, match="cut"):
        min_cost_flow(np.array([0.5]), np.array([1.0]), None, np.array([[1.0]]))


def test_infeasible_capacity_cut():
    # supplies cover demand in total but capacities block column 0
    with pytest.raises(InfeasibleError, match="cut"):
        min_cost_flow(np.array([1.0, 1.0]), np.array([1.5, 0.5]),
                      np.array([[0.4, 1.0], [0.4, 1.0]]),
                      np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_negative_cost_rejected():
    with pytest.raises(ContractError):
        min_cost_flow(np.array([1.0]), np.array([1.0]), None, np.array([[-1.0]]))


# ---------------------------------------------------------------------
# feature_to_measure
# ---------------------------------------------------------------------

def test_uniform_vector_gives_uniform_weights():
    m = feature_to_measure(np.ones(4))
    assert np.allclose(m.weights, 0.25)
    assert np.allclose(m.atoms, [0.25, 0.5, 0.75, 1.0])


def test_softplus_scalar_reference():
    # scalar reference: w_j = log(1 + exp(z_j)), then L1-normalize
    z = np.array([2.0, 0.0, 0.0])
    ref = np.array([math.log1p(math.exp(v)) for v in z])
    ref = ref / ref.sum()
    m = feature_to_measure(z, "softplus-normalize")
    assert np.allclose(m.weights, ref, atol=1e-12)
    # frozen fixture of the same computation
    assert m.weights[0] == pytest.approx(0.6054065999054767, abs=1e-12)


def test_relu_one_hot_point_masses():
    d01 = w2_dimension(feature_to_measure(np.eye(3)[0], "relu-normalize"),
                       feature_to_measure(np.eye(3)[1], "relu-normalize"))
    d02 = w2_dimension(feature_to_measure(np.eye(3)[0], "relu-normalize"),
                       feature_to_measure(np.eye(3)[2], "relu-normalize"))
    # point masses at 1/3 vs 2/3 vs 1: distances differ, unlike plain L2
    assert d01 == pytest.approx(1 / 3, abs=1e-12)
    assert d02 == pytest.approx(2 / 3, abs=1e-12)


def test_degenerate_measure_rejected():
    with pytest.raises(ContractError, match="degenerate"):
        feature_to_measure(np.array([-1.0, -2.0]), "relu-normalize")


def test_unknown_mode_rejected():
    with pytest.raises(ContractError):
        feature_to_measure(np.ones(3), "sigmoid")


# ---------------------------------------------------------------------
# w2_dimension
# ---------------------------------------------------------------------

def test_w2_identical_zero():
    m = feature_to_measure(np.array([0.3, 1.2, -0.5]))
    assert w2_dimension(m, m) == 0.0


def test_w2_point_masses():
    a = measure_1d([0.0], [1.0])
    b = measure_1d([1.0], [1.0])
    assert w2_dimension(a, b) == pytest.approx(1.0, abs=1e-12)


def test_w2_half_split():
    a = measure_1d([0.0, 1.0], [0.5, 0.5])
    b = measure_1d([0.0, 1.0], [0.0, 1.0])
    got = w2_dimension(a, b)
    assert got == pytest.approx(math.sqrt(0.5), abs=1e-12)
    # cross-check against the generic solver
    cost = CostMatrix(np.abs(a.atoms[:, None] - b.atoms[None, :]))
    oracle, _ = wasserstein_exact(a, b, cost, p=2)
    assert got == pytest.approx(oracle, abs=1e-8)


def test_w2_matches_generic_solver_random():
    rng = np.random.default_rng(31)
    for _ in range(60):
        n, m = rng.integers(1, 13), rng.integers(1, 13)
        a = measure_1d(rng.random(n), random_simplex(rng, n))
        b = measure_1d(rng.random(m), random_simplex(rng, m))
        cost = CostMatrix(np.abs(a.atoms[:, None] - b.atoms[None, :]))
        oracle, _ = wasserstein_exact(a, b, cost, p=2)
        assert w2_dimension(a, b) == pytest.approx(oracle, abs=1e-8)


def test_w2_handles_zero_weight_atoms():
    a = measure_1d([0.0, 0.5, 1.0], [0.5, 0.0, 0.5])
    b = measure_1d([0.0, 1.0], [0.5, 0.5])
    assert w2_dimension(a, b) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------
# wwd
# ---------------------------------------------------------------------

def test_wwd_self_zero():
    batch = np.array([[1.0, 2.0], [0.5, -0.3], [2.0, 2.0]])
    value, _ = wwd(batch, batch)
    assert value == pytest.approx(0.0, abs=1e-10)


def test_wwd_size_one_batches():
    a = np.array([[1.0, -0.5, 2.0]])
    b = np.array([[0.3, 0.9, -1.0]])
    value, _ = wwd(a, b)
    direct = w2_dimension(feature_to_measure(a[0]), feature_to_measure(b[0]))
    assert value == pytest.approx(direct, abs=1e-12)


def test_wwd_compositional_oracle():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(3, 4))
    B = rng.normal(size=(3, 4))
    value, plan = wwd(A, B)
    ground = nested_cost(A, B)
    mu = measure_1d(np.arange(3), np.full(3, 1 / 3))
    nu = measure_1d(np.arange(3), np.full(3, 1 / 3))
    oracle, _ = wasserstein_exact(mu, nu, ground, p=1)
    assert value == pytest.approx(oracle, abs=1e-10)
    assert np.allclose(plan.matrix.sum(axis=1), 1 / 3)


def test_wwd_symmetric():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(4, 3))
    B = rng.normal(size=(4, 3))
    va, _ = wwd(A, B)
    vb, _ = wwd(B, A)
    assert va == pytest.approx(vb, abs=1e-10)


# ---------------------------------------------------------------------
# ar_wwd_primal / containment_check
# ---------------------------------------------------------------------

def test_containment_gives_zero():
    s = measure_1d([0.0, 1.0], [0.5, 0.5])
    t = measure_1d([0.0, 1.0], [0.3, 0.7])
    value, _ = ar_wwd_primal(s, t, CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.4)
    assert value == pytest.approx(0.0, abs=1e-12)
    assert containment_check(s, t, 0.4)


def test_detour_value_and_lp_oracle():
    s = measure_1d([0.0, 1.0], [0.9, 0.1])
    t = measure_1d([0.0, 1.0], [0.1, 0.9])
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    value, plan = ar_wwd_primal(s, t, CostMatrix(c), 0.5)
    assert value == pytest.approx(0.7, abs=1e-10)
    oracle = lp_transport(s.weights / 0.5, t.weights, c)
    assert value == pytest.approx(oracle, abs=1e-10)
    assert not containment_check(s, t, 0.5)
    # column marginals exact, rows within capacity
    assert np.allclose(plan.matrix.sum(axis=0), t.weights, atol=1e-9)
    assert np.all(plan.matrix.sum(axis=1) <= s.weights / 0.5 + 1e-9)


def test_beta_to_zero_recovers_balanced_problem():
    rng = np.random.default_rng(13)
    s = measure_1d(np.sort(rng.random(4)), random_simplex(rng, 4))
    t = measure_1d(np.sort(rng.random(4)), random_simplex(rng, 4))
    cost = CostMatrix(np.abs(s.atoms[:, None] - t.atoms[None, :]))
    balanced, _ = wasserstein_exact(s, t, cost, p=1)
    relaxed, _ = ar_wwd_primal(s, t, cost, 1e-9)
    assert relaxed == pytest.approx(balanced, abs=1e-6)


def test_beta_monotone_nonincreasing():
    rng = np.random.default_rng(17)
    for _ in range(10):
        k = int(rng.integers(2, 6))
        atoms = np.sort(rng.random(k))
        s = measure_1d(atoms, random_simplex(rng, k))
        t = measure_1d(atoms, random_simplex(rng, k))
        cost = CostMatrix(np.abs(atoms[:, None] - atoms[None, :]))
        values = [ar_wwd_primal(s, t, cost, b)[0]
                  for b in (0.1, 0.3, 0.5, 0.7, 0.9)]
        for lo, hi in zip(values[1:], values[:-1]):
            assert lo <= hi + 1e-10


def test_containment_iff_zero_100_random_pairs():
    rng = np.random.default_rng(19)
    seen_contained = seen_violated = 0
    for _ in range(100):
        k = int(rng.integers(2, 7))
        atoms = np.sort(rng.random(k))
        s = measure_1d(atoms, random_simplex(rng, k))
        t = measure_1d(atoms, random_simplex(rng, k))
        beta = float(rng.uniform(0.05, 0.9))
        cost_values = rng.random((k, k))
        np.fill_diagonal(cost_values, 0.0)
        cost = CostMatrix(cost_values)
        value, _ = ar_wwd_primal(s, t, cost, beta)
        contained = containment_check(s, t, beta)
        if contained:
            seen_contained += 1
            assert value <= 1e-10
        else:
            seen_violated += 1
            assert value > 1e-10
            oracle = lp_transport(s.weights / (1 - beta), t.weights, cost_values)
            assert value == pytest.approx(oracle, abs=1e-6)
    assert seen_contained > 0 and seen_violated > 0


def test_beta_out_of_range_rejected():
    s = measure_1d([0.0], [1.0])
    with pytest.raises(ContractError):
        ar_wwd_primal(s, s, CostMatrix(np.array([[0.0]])), 0.0)
    with pytest.raises(ContractError):
        ar_wwd_primal(s, s, CostMatrix(np.array([[0.0]])), 1.0)
    with pytest.raises(ContractError):
        containment_check(s, s, 1.5)


def test_plan_marginal_invariants_enforced():
    with pytest.raises(ContractError):
        TransportPlan(np.array([[0.5, 0.0], [0.0, 0.5]]),
                      np.array([0.7, 0.3]), np.array([0.5, 0.5]))


# ---------------------------------------------------------------------
# property-based invariants
# ---------------------------------------------------------------------

@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_feature_measure_is_probability(z):
    m = feature_to_measure(np.array(z))
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(m.weights >= 0)


@given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_w1_symmetry(k, seed):
    rng = np.random.default_rng(seed)
    atoms = np.sort(rng.random(k))
    a = measure_1d(atoms, random_simplex(rng, k))
    b = measure_1d(atoms, random_simplex(rng, k))
    cost = CostMatrix(np.abs(atoms[:, None] - atoms[None, :]))
    dab, _ = wasserstein_exact(a, b, cost, p=1)
    dba, _ = wasserstein_exact(b, a, cost.__class__(cost.values.T), p=1)
    assert dab == pytest.approx(dba, abs=1e-9)


@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_w2_nonnegative_and_zero_on_self(k, seed):
    rng = np.random.default_rng(seed)
    a = measure_1d(rng.random(k), random_simplex(rng, k))
    assert w2_dimension(a, a) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------
# measure file I/O
# ---------------------------------------------------------------------

def test_measure_roundtrip(tmp_path):
    m = DiscreteMeasure(np.array([[0.1, 0.2], [0.5, 0.9]]), np.array([0.4, 0.6]))
    path = tmp_path / "m.txt"
    save_measure(m, path)
    back = load_measure(path)
    assert np.allclose(back.atoms, m.atoms)
    assert np.allclose(back.weights, m.weights)


def test_measure_scalar_roundtrip(tmp_path):
    m = measure_1d([0.25, 0.75], [0.5, 0.5])
    path = tmp_path / "m.txt"
    save_measure(m, path)
    back = load_measure(path)
    assert back.atoms.ndim == 1
    assert np.allclose(back.atoms, m.atoms)


def test_measure_parse_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("0.5,0.0\n0.5\n")
    with pytest.raises(ParseError, match="line 2"):
        load_measure(bad)
    nonnum = tmp_path / "nonnum.txt"
    nonnum.write_text("0.5,zero\n")
    with pytest.raises(ParseError, match="line 1"):
        load_measure(nonnum)
    empty = tmp_path / "empty.txt"
    empty.write_text("# only a comment\n")
    with pytest.raises(ContractError):
        load_measure(empty)
