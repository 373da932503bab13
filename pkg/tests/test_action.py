import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjnet import (ConjugateEvaluator, DiscreteCurve, Envelopes, OverallLagrangian, SpaceTimeGrid, Unreachable,
                   admissibility_report, builtin_family, discrete_action, eval_overall_lagrangian, exponential,
                   lipschitz_ledger, lipschitz_modulus_probe, maximal_limiter, minimal_action, path_network,
                   quadratic_minus_potential, user_limiter)
from hjnet.action import Step, default_kappa_grid, dump_curve_csv

from conftest import quadratic_setup


def overall(net, potential=0.0, limiter=None, horizon=2.0):
    fam, ce, cbar = quadratic_setup(net, horizon, potential)
    c = cbar if limiter is None else user_limiter(net, limiter, horizon, default=cbar)
    return OverallLagrangian(ce, c)


def test_eval_vertex_and_interior(unit_arc):
    OL = overall(unit_arc, limiter={"v0": -1.0})
    assert eval_overall_lagrangian(OL, unit_arc.vertex_point("v0"), 0.0, 0.5) == -1.0
    assert eval_overall_lagrangian(OL, unit_arc.vertex_point("v1"), 2.0, 0.5) == 2.0
    OL = overall(unit_arc, potential=0.3)
    assert eval_overall_lagrangian(OL, unit_arc.point("e0", 0.5), 1.0, 0.5) == pytest.approx(0.8)


def curve_from(net, arc, offsets, dt, vertices=None):
    pts = [net.point(arc, s) for s in offsets]
    steps = []
    for k, (a, b) in enumerate(zip(pts[:-1], pts[1:])):
        if a.vertex is not None and a == b:
            steps.append(Step(k, None, math.nan, math.nan, a.vertex))
        else:
            steps.append(Step(k, arc, a.offset, b.offset))
    return DiscreteCurve(pts, dt * np.arange(len(pts)), steps, dt)


def test_action_constant_vertex(unit_arc):
    OL = overall(unit_arc)
    assert discrete_action(OL, curve_from(unit_arc, "e0", [0.0] * 6, 0.2)) == 0.0


def test_action_unit_traversal(unit_arc):
    OL = overall(unit_arc)
    c = curve_from(unit_arc, "e0", np.linspace(0, 1, 11), 0.1)
    assert discrete_action(OL, c) == pytest.approx(0.5, abs=1e-12)


def test_action_constant_interior(unit_arc):
    OL = overall(unit_arc, potential=0.3)
    c = curve_from(unit_arc, "e0", [0.4] * 11, 0.2)
    assert discrete_action(OL, c) == pytest.approx(0.6, abs=1e-12)


def test_malformed_curve(unit_arc):
    c = curve_from(unit_arc, "e0", [0.4, 0.5], 0.1)
    c.points.append(c.points[-1])
    with pytest.raises(ValueError):
        discrete_action(overall(unit_arc), c)


def test_phi_stay(unit_arc):
    OL = overall(unit_arc)
    g = SpaceTimeGrid(unit_arc, 0.02, 2.0, 0.02, kappa=2.0)
    p = unit_arc.point("e0", 0.3)
    res = minimal_action(OL, g, p, 0.0, p, 1.0)
    assert res.value == pytest.approx(0.0, abs=1e-12)
    assert all(q == p for q in res.curve.points)


def test_phi_traversal(unit_arc):
    OL = overall(unit_arc)
    g = SpaceTimeGrid(unit_arc, 0.02, 2.0, 0.02, kappa=2.0)
    res = minimal_action(OL, g, unit_arc.vertex_point("v0"), 0.0, unit_arc.vertex_point("v1"), 1.0)
    assert res.value == pytest.approx(0.5, abs=g.tol())
    assert res.curve.action == pytest.approx(res.value, abs=g.tol())
    assert admissibility_report(res.curve).excursions == 0


def test_phi_waiting_oracle(unit_arc):
    OL = overall(unit_arc, limiter={"v0": -1.0})
    g = SpaceTimeGrid(unit_arc, 0.02, 2.0, 0.02, kappa=2.0)
    p = unit_arc.point("e0", 0.4)
    res = minimal_action(OL, g, p, 0.0, p, 2.0)
    tau = np.linspace(1e-6, 2.0, 2_000_001)
    oracle = min(0.0, float(np.min(-(2.0 - tau) + 0.8 ** 2 / (2 * tau))))
    assert res.value == pytest.approx(oracle, abs=3 * g.tol())
    assert any(q.vertex == "v0" for q in res.curve.points)


def test_phi_unreachable_and_degenerate(unit_arc):
    OL = overall(unit_arc)
    g = SpaceTimeGrid(unit_arc, 0.02, 2.0, 0.02, kappa=2.0)
    res = minimal_action(OL, g, unit_arc.vertex_point("v0"), 0.0, unit_arc.vertex_point("v1"), 0.2)
    assert isinstance(res, Unreachable) and res.value == math.inf
    p = unit_arc.point("e0", 0.5)
    assert minimal_action(OL, g, p, 0.4, p, 0.4).value == 0.0
    assert not minimal_action(OL, g, p, 0.4, unit_arc.point("e0", 0.6), 0.4).reachable
    with pytest.raises(ValueError):
        minimal_action(OL, g, p, 0.4, p, 0.2)


def test_admissibility_counts(unit_arc):
    still = curve_from(unit_arc, "e0", [0.0] * 5, 0.1)
    assert admissibility_report(still).excursions == 0
    across = curve_from(path_network([1.0, 1.0]), "e0", [0.5, 1.0], 0.5)
    assert admissibility_report(across).excursions == 0
    bounce = curve_from(unit_arc, "e0", [0.0, 0.1, 0.0, 0.1, 0.0, 0.1, 0.0], 0.1)
    rep = admissibility_report(bounce)
    assert rep.excursions == 3 and rep.shortest == pytest.approx(0.2) and rep.zeno


def test_ledger_quadratic_finite(star):
    fam, ce, _ = quadratic_setup(star)
    led = lipschitz_ledger(fam, ce, 1.0, 1.0)
    assert led.found and math.isfinite(led.kappa_star)
    assert led.kappa_star > 4 * led.M * 1.0 / led.eps_bar
    i = int(np.nonzero(led.kappa_grid == led.kappa_star)[0][0])
    assert led.Lambda + led.Xi <= led.upsilon[i]
    if i > 0:
        assert not (led.kappa_grid[i - 1] > 4 * led.M / led.eps_bar and led.Lambda + led.Xi <= led.upsilon[i - 1])


def test_ledger_cosh_found(star):
    fam = builtin_family(star, 1.0, exponential())
    led = lipschitz_ledger(fam, ConjugateEvaluator(fam), 1.0, 1.0)
    assert led.found


def test_ledger_linear_envelope_not_found(star):
    env = Envelopes(lambda r: np.asarray(r) * 1.0, lambda r: 0.5 * np.asarray(r) ** 2 + np.asarray(r), 0.0, 0.0, 1.0)
    fam = builtin_family(star, 1.0, quadratic_minus_potential(0.0), envelopes=env)
    led = lipschitz_ledger(fam, ConjugateEvaluator(fam), 1.0, 1.0)
    assert not led.found and "not found" in led.note


def test_default_kappa_grid_sorted():
    k = default_kappa_grid()
    assert np.all(np.diff(k) > 0) and k[0] == 0.25 and k[-1] > 1e3


def test_modulus_probe(unit_arc):
    OL = overall(unit_arc, horizon=1.0)
    g = SpaceTimeGrid(unit_arc, 0.05, 1.0, 0.05, kappa=4.0)
    p, q = unit_arc.point("e0", 0.2), unit_arc.point("e0", 0.6)
    same = (p, 0.0, q, 1.0)
    assert lipschitz_modulus_probe(OL, g, [(same, same)]) == 0.0
    shifted = (p, 0.1, q, 1.0)
    quot = lipschitz_modulus_probe(OL, g, [(same, shifted)])
    # closed form d^2 / (2 (t2 - t1)) gives |0.08 - 0.0889| / 0.1
    assert quot == pytest.approx(abs(0.16 / 2 - 0.16 / 1.8) / 0.1, abs=0.1)
    fine = SpaceTimeGrid(unit_arc, 0.025, 1.0, 0.025, kappa=4.0)
    assert lipschitz_modulus_probe(OL, fine, [(same, shifted)]) == pytest.approx(quot, abs=0.1)


def test_dump_curve_csv(tmp_path, unit_arc):
    c = curve_from(unit_arc, "e0", [0.0, 0.5, 1.0], 0.5)
    dump_curve_csv(tmp_path / "c.csv", c)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,arc,offset,vertex" and lines[1].endswith(",v0") and len(lines) == 4


# -- Bellman principle against exhaustive enumeration ---------------------------

def brute_force(OL, grid, V0):
    """Minimum over all node paths of the initial value plus step costs."""
    net, dt = grid.net, grid.dt
    moves = {i: [] for i in range(grid.n_nodes)}  # arrival -> (departure, arc, s_from, s_to)
    for a in grid.arc_order:
        g = grid.arcs[a]
        for i, j in itertools.product(range(len(g.offsets)), repeat=2):
            if abs(i - j) > g.h:
                continue
            ni, nj = g.nodes[i], g.nodes[j]
            if ni == nj and ni < len(grid.vertices):
                continue  # vertex stays are charged by the limiter
            moves[ni].append((nj, a, float(g.offsets[j]), float(g.offsets[i])))
    paths = {i: V0[i] for i in range(grid.n_nodes)}
    for k in range(grid.K):
        tm = grid.t_mid[k]
        new = {}
        for i in range(grid.n_nodes):
            cands = []
            if i < len(grid.vertices):
                cands.append(paths[i] + grid.dt * OL.c.values(grid.vertices[i], grid.t_mid)[k])
            for j, a, s0, s1 in moves[i]:
                L = OL.ce.lagrangian(a, np.array([[s1]]), np.array([[(s1 - s0) / dt]]), np.full((1, 1), tm))
                cands.append(paths[j] + float((dt * L)[0, 0]))
            new[i] = min(cands)
        paths = new
    return np.array([paths[i] for i in range(grid.n_nodes)])


def enumerate_all_paths(OL, grid, V0):
    """Literal enumeration over every node sequence (no intermediate minimum)."""
    dt = grid.dt
    nv = len(grid.vertices)
    step_cost = {}
    for a in grid.arc_order:
        g = grid.arcs[a]
        for i, j in itertools.product(range(len(g.offsets)), repeat=2):
            ni, nj = g.nodes[i], g.nodes[j]
            if abs(i - j) > g.h or (ni == nj and ni < nv):
                continue
            for k in range(grid.K):
                L = OL.ce.lagrangian(a, np.array([[g.offsets[i]]]),
                                     np.array([[(g.offsets[i] - g.offsets[j]) / dt]]), np.full((1, 1), grid.t_mid[k]))
                c = float((dt * L)[0, 0])
                key = (k, nj, ni)
                step_cost[key] = min(step_cost.get(key, math.inf), c)
    for v in range(nv):
        stay = dt * OL.c.values(grid.vertices[v], grid.t_mid)
        for k in range(grid.K):
            key = (k, v, v)
            step_cost[key] = min(step_cost.get(key, math.inf), float(stay[k]))
    best = np.full(grid.n_nodes, math.inf)
    for seq in itertools.product(range(grid.n_nodes), repeat=grid.K + 1):
        total = V0[seq[0]]
        for k in range(grid.K):
            c = step_cost.get((k, seq[k], seq[k + 1]))
            if c is None:
                break
            total = total + c
        else:
            best[seq[-1]] = min(best[seq[-1]], total)
    return best


def five_node_problem(pot, lim):
    net = path_network([1.0, 1.0])
    fam = builtin_family(net, 1.0, quadratic_minus_potential(pot))
    ce = ConjugateEvaluator(fam)
    cbar = maximal_limiter(net, ce)
    OL = OverallLagrangian(ce, user_limiter(net, {"v1": lim}, 1.0, default=cbar))
    grid = SpaceTimeGrid(net, 0.2, 1.0, 0.5, kappa=2.5)
    return OL, grid


def test_dp_equals_enumeration_exactly():
    from hjnet.action import BellmanProblem
    OL, grid = five_node_problem("0.3*s + 0.2*t", "0.2*t - 0.5")
    assert grid.n_nodes == 5 and grid.K == 5
    V0 = np.array([0.3, -0.1, 0.2, 0.05, 0.4])
    vals, _, _ = BellmanProblem(OL, grid, "nodes").sweep(V0)
    assert np.array_equal(vals[-1], enumerate_all_paths(OL, grid, V0))


@settings(max_examples=10)
@given(st.floats(-1, 1), st.floats(-1, 1), st.lists(st.floats(-1, 1), min_size=5, max_size=5))
def test_dp_equals_recursive_enumeration(a, b, v0):
    from hjnet.action import BellmanProblem
    OL, grid = five_node_problem(f"{a}*s*s + {b}*t", f"min({b}*t, 0) - 1")
    V0 = np.array(v0)
    vals, _, _ = BellmanProblem(OL, grid, "nodes").sweep(V0)
    assert np.array_equal(vals[-1], brute_force(OL, grid, V0))
