import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy.optimize import minimize

from moctsvm.bnb import (
    INFEASIBLE,
    OPTIMAL,
    BnbConfig,
    brute_force_oracle,
    oa_separate,
    relative_gap,
    round_incumbent,
    solve_miqp,
    solve_split_lp,
)
from moctsvm.classifier import accuracy, extract_tree
from moctsvm.dataset import from_labels, normalize
from moctsvm.experiment import random_oracle_instance
from moctsvm.formulation import CostConfig, ModelOptions, build_model, check_feasible
from moctsvm.topology import build_topology

FAST = BnbConfig(time_limit=60)


def test_tangent_cut_example():
    g, r = oa_separate([1.0, 1.0], 0.0)
    assert g.tolist() == [1.0, 1.0] and r == pytest.approx(-1.0)
    # violation at the separated point: delta - g'w - r = 0 - 2 + 1
    assert 0.0 - g @ [1.0, 1.0] - r == pytest.approx(-1.0)


@pytest.mark.parametrize("w,delta", [([0.0, 0.0], 0.0), ([0.0], 3.0), ([2.0, 0.0], 2.0)])
def test_no_cut_when_satisfied(w, delta):
    assert oa_separate(w, delta) is None


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_tangent_cut_never_removes_epigraph_points(center, other):
    """A cut is a supporting tangent, so every point on or above the paraboloid survives."""
    cut = oa_separate(center, -1.0)
    if cut is None:
        return
    g, r = cut
    w = np.array(other[: len(center)])
    delta = 0.5 * float(w @ w)
    assert delta - g @ w >= r - 1e-9


def test_relative_gap():
    assert relative_gap(10.0, 9.0) == pytest.approx(0.1)
    assert relative_gap(10.0, 11.0) == 0.0
    assert relative_gap(math.inf, 0.0) == math.inf


def _fix_binaries(m, on):
    fixes = [(v.name, 1.0 if v.name in on else 0.0) for v in m.variables if v.kind == "B"]
    return m.with_bounds(fixes)


def test_two_point_fixed_binaries_hard_margin(two_point):
    """Point 0 on the right: the analytic hard-margin solution is w=-2, w0=1."""
    m = build_model(two_point, build_topology(1), CostConfig(10.0, 10.0, 1.0))
    on = {"z[0][1]", "z[1][1]", "z[0][3]", "z[1][2]", "alpha[0][1]", "h[0][1]", "d[1]", "v[1]", "q[1][3]", "q[2][2]"}
    r = solve_miqp(_fix_binaries(m, on), FAST)
    assert r.status == OPTIMAL
    x = r.incumbent
    ix = m.var_index
    assert x[ix["w[1][0]"]] == pytest.approx(-2.0, abs=1e-6)
    assert x[ix["w0[1]"]] == pytest.approx(1.0, abs=1e-6)
    assert x[ix["delta"]] == pytest.approx(2.0, abs=1e-6)
    assert r.objective == pytest.approx(2.0 + 1.0, abs=1e-6)


def test_two_point_soft_margin_closed_form(two_point):
    """With c2 = 1 the margin softens: minimizing a^2/2 + 2(1 - a/2) gives a = 1."""
    m = build_model(two_point, build_topology(1), CostConfig(10.0, 1.0, 1.0))
    r = solve_miqp(m, FAST)
    assert r.status == OPTIMAL
    assert r.objective == pytest.approx(0.5 + 1.0 + 1.0, abs=1e-6)
    ref, _ = brute_force_oracle(two_point, CostConfig(10.0, 1.0, 1.0))
    assert ref == pytest.approx(r.objective, abs=1e-6)


def test_expensive_split_gives_pruned_root():
    d = normalize(from_labels(np.random.default_rng(1).random((6, 2)), ["a", "b", "a", "b", "a", "a"]))
    c = CostConfig(1.0, 1.0, 1e4)
    r = solve_miqp(build_model(d, build_topology(1), c), FAST)
    assert r.status == OPTIMAL
    assert r.objective == pytest.approx(1.0 * (6 - 4))
    tree = extract_tree(r, d, build_topology(1), build_model(d, build_topology(1), c))
    assert tree.active_nodes == 0
    assert set(tree.predict(d.raw_X())) == {1}


def test_contradictory_fixings_are_infeasible(two_point):
    m = build_model(two_point, build_topology(1), CostConfig())
    m = m.with_bounds([("z[0][2]", 1.0), ("z[0][3]", 1.0)])
    r = solve_miqp(m, FAST)
    assert r.status == INFEASIBLE
    assert r.incumbent is None


def test_round_incumbent_examples():
    d = from_labels([[0.2, 0.0], [0.8, 1.0]], ["a", "b"])
    m = build_model(d, build_topology(1), CostConfig())
    frac = np.full(m.num_vars, 0.5)
    lay = m.layout
    frac[lay.w[1]] = [1.0, 0.0]
    frac[lay.w0[1]] = -0.5
    x = round_incumbent(m, frac)
    assert x is not None and check_feasible(m, x) == []
    assert x[lay.z[0, 2]] == 1.0 and x[lay.z[1, 3]] == 1.0
    assert np.array_equal(round_incumbent(m, x), x)


def test_split_lp_matches_generic_qp():
    """Fixed-routing soft-margin problem against scipy's SLSQP."""
    rng = np.random.default_rng(3)
    P = rng.random((5, 2)) * 0.5 + 0.4
    N = rng.random((5, 2)) * 0.5
    c2 = 2.0
    res = solve_split_lp([(P, N)], c2, 50.0, None, tol=1e-9)

    def f(v):
        w, w0, e = v[:2], v[2], v[3:]
        return 0.5 * w @ w + c2 * e.sum()

    cons = [{"type": "ineq", "fun": lambda v, i=i: P[i] @ v[:2] + v[2] + v[3 + i] - 1} for i in range(5)]
    cons += [{"type": "ineq", "fun": lambda v, i=i: -(N[i] @ v[:2] + v[2]) + v[8 + i] - 1} for i in range(5)]
    ref = minimize(f, np.zeros(13), constraints=cons, bounds=[(-50, 50)] * 3 + [(0, None)] * 10, method="SLSQP",
                   options={"ftol": 1e-12, "maxiter": 500})
    assert ref.success
    assert res.upper == pytest.approx(ref.fun, rel=1e-6, abs=1e-7)


@settings(max_examples=6, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**31))
def test_matches_enumeration_with_valid_bounds(seed):
    rng = np.random.default_rng(seed)
    d, c = random_oracle_instance(rng, max_n=6)
    ref, xref = brute_force_oracle(d, c)
    m = build_model(d, build_topology(1), c)
    assert check_feasible(m, xref) == []
    logs = []
    r = solve_miqp(m, FAST, log_sink=logs.append)
    assert r.status == OPTIMAL
    assert r.objective == pytest.approx(ref, rel=1e-6, abs=1e-9)
    assert r.best_bound <= ref + 1e-6 * max(1.0, abs(ref))
    # every tangent cut keeps the enumerated optimum
    lay = m.layout
    for t, wstar in r.cuts:
        w = xref[lay.w[t]]
        assert xref[lay.delta] - wstar @ w >= -0.5 * wstar @ wstar - 1e-9
    tree = extract_tree(r, d, build_topology(1), m)
    L = sum(r.incumbent[lay.L[t]] for t in (2, 3))
    assert accuracy(tree, d) == pytest.approx(1 - L / d.n)


def test_all_same_label_oracle():
    d = normalize(from_labels([[0.1, 0.2], [0.5, 0.5], [0.9, 0.1], [0.3, 0.3]], ["a", "a", "a", "b"]))
    d = d.__class__(d.X, np.ones(4, dtype=int), d.feature_names, d.class_names, d.normalization)
    ref, _ = brute_force_oracle(d, CostConfig(1.0, 1.0, 1.0))
    assert ref == 0.0


def test_oracle_refuses_large_n():
    d = normalize(from_labels(np.random.default_rng(0).random((13, 2)), [i % 2 for i in range(13)]))
    with pytest.raises(ValueError):
        brute_force_oracle(d, CostConfig())


def test_deterministic_reruns_are_identical():
    rng = np.random.default_rng(11)
    d, c = random_oracle_instance(rng, max_n=7)
    m = build_model(d, build_topology(2), c)
    cfg = BnbConfig(time_limit=5, deterministic=True)
    a, b = solve_miqp(m, cfg), solve_miqp(m, cfg)
    assert a.to_json(include_time=False) == b.to_json(include_time=False)
    assert np.array_equal(a.incumbent, b.incumbent)


def test_config_validation():
    with pytest.raises(ValueError):
        BnbConfig(time_limit=0)
    with pytest.raises(ValueError):
        BnbConfig(branching_priority=("d", "nope"))
