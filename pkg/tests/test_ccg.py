import numpy as np
import pytest

from agro.ccg import (
    Status,
    SubproblemError,
    _ccg_loop,
    box_subproblem,
    budget_subproblem,
    converged,
    ellipsoid_ascent,
    ellipsoid_subproblem,
    run_ccg,
)
from agro.lin_solve import Instance, RecourseSolver, recourse_value, solve_main
from agro.probgen import generate
from agro.uncertainty import ClassicalSet

from conftest import random_instance


def make_set(kind, mean, cov, gamma=None, lo=None, hi=None):
    mean = np.atleast_1d(np.asarray(mean, float))
    return ClassicalSet.from_dict({
        "kind": kind, "mean": mean.tolist(), "cov": np.atleast_2d(cov).tolist(),
        "min": (mean if lo is None else np.asarray(lo, float)).tolist(),
        "max": (mean if hi is None else np.asarray(hi, float)).tolist(),
        "gamma": gamma,
    })


def sample_budget_interior(uset, n, rng):
    """Uniform-ish points in the scaled L1 ball: random convex weights over vertices."""
    V = uset.vertices()
    w = rng.dirichlet(np.ones(len(V)), size=n)
    return w @ V


def test_budget_subproblem_one_dimensional(toy):
    s = make_set("budget", [5.0], [[4.0]], gamma=0.5)
    xi, q = budget_subproblem(toy, [1.0], s)
    np.testing.assert_allclose(xi, [7.0])
    assert q == pytest.approx(7.0)


def test_budget_subproblem_zero_radius(toy):
    s = make_set("budget", [5.0], [[4.0]], gamma=0.0)
    xi, _ = budget_subproblem(toy, [1.0], s)
    np.testing.assert_allclose(xi, [5.0])


def test_budget_vertex_beats_interior():
    rng = np.random.default_rng(0)
    for _ in range(5):
        inst = random_instance(rng, 3, 3)
        A = rng.normal(size=(3, 3))
        s = ClassicalSet("budget", gamma=float(rng.uniform(0.5, 3))).fit(rng.normal(5, 1, (200, 3)) @ A)
        x = rng.uniform(0, 2, 3)
        _, qv = budget_subproblem(inst, x, s)
        solver = RecourseSolver(inst)
        interior = sample_budget_interior(s, 1000, rng)
        assert np.all(s.contains(interior, tol=1e-9))
        assert max(solver(x, p)[0] for p in interior) <= qv + 1e-9


def test_box_subproblem(toy):
    b = make_set("box", [5.0], [[1.0]], lo=[3.0], hi=[7.0])
    xi, q = box_subproblem(toy, [1.0], b)
    np.testing.assert_allclose(xi, [7.0])
    flat = make_set("box", [2.0, 3.0], np.eye(2), lo=[2.0, 3.0], hi=[2.0, 3.0])
    inst = Instance(c=[1.0], d1=[[1.0, 2.0]], d2=5.0, p=[10.0])
    xi, _ = box_subproblem(inst, [0.5], flat)
    np.testing.assert_allclose(xi, [2.0, 3.0])
    wide = make_set("box", [0.0, 0.0], np.eye(2), lo=[-1.0, 2.0], hi=[4.0, 9.0])
    _, q = box_subproblem(inst, [0.5], wide)
    assert q >= recourse_value(inst, [0.5], [1.5, 5.5])


def test_box_dimension_guard():
    inst = Instance(c=[1.0], d1=np.ones((1, 17)), d2=5.0, p=[1.0])
    b = make_set("box", np.zeros(17), np.eye(17), lo=np.zeros(17), hi=np.ones(17))
    with pytest.raises(ValueError, match="budget or ellipsoid"):
        box_subproblem(inst, [1.0], b)


def test_ellipsoid_one_dimensional_increasing(toy):
    e = make_set("ellipsoid", [5.0], [[4.0]], gamma=2.25)
    xi, q = ellipsoid_subproblem(toy, [1.0], e)
    np.testing.assert_allclose(xi, [5.0 + np.sqrt(2.25 * 4.0)])


def test_ellipsoid_linear_region_reaches_support_point():
    # x = 0 makes q = 5 * sum(max(xi, 0)), linear near a positive mean
    inst = Instance(c=[1.0], d1=[[1.0, 1.0]], d2=5.0, p=[1.0])
    e = make_set("ellipsoid", [20.0, 20.0], np.eye(2), gamma=4.0)
    xi, q, values = ellipsoid_ascent(RecourseSolver(inst), [0.0], e, np.array([20.0, 20.0]))
    np.testing.assert_allclose(xi, 20 + 2 / np.sqrt(2))
    assert q == pytest.approx(5 * (40 + 4 / np.sqrt(2)))


def test_ellipsoid_ascent_values_nondecreasing():
    rng = np.random.default_rng(1)
    for _ in range(10):
        inst = random_instance(rng, 3, 3)
        e = ClassicalSet("ellipsoid", gamma=float(rng.uniform(1, 8))).fit(rng.normal(5, 2, (100, 3)))
        x = rng.uniform(0, 2, 3)
        _, _, values = ellipsoid_ascent(RecourseSolver(inst), x, e, e.mean_)
        assert np.all(np.diff(values) >= -1e-12)


def test_converged_rule():
    assert converged(10.0, 10.0, 1e-4)
    assert converged(10.0 + 1e-4, 10.0, 1e-4)
    assert not converged(10.01, 10.0, 1e-4)


def test_ccg_zero_radius_is_deterministic_problem():
    rng = np.random.default_rng(2)
    inst = random_instance(rng, 3, 3)
    s = ClassicalSet("budget", gamma=0.0).fit(rng.normal(5, 2, (100, 3)))
    res = run_ccg(inst, s)
    assert res.status is Status.CONVERGED and res.n_iterations <= 2
    ref = solve_main(inst, [s.mean_])
    assert res.objective == pytest.approx(ref.objective)


def test_ccg_one_dimensional_budget(toy):
    s = make_set("budget", [5.0], [[4.0]], gamma=0.5)
    res = run_ccg(toy, s)
    ref = solve_main(toy, [[7.0]])
    np.testing.assert_allclose(res.x, ref.x)
    assert res.objective == pytest.approx(ref.objective)


def _seeded_budget_runs(n):
    for seed in range(n):
        inst, ds = generate(4, 3, 2500, seed)
        s = ClassicalSet("budget").fit(np.vstack([ds.train, ds.val])).calibrate(ds.calibration)
        yield inst, s, run_ccg(inst, s)


def test_ccg_certificate_and_traces():
    for inst, s, res in _seeded_budget_runs(6):
        assert res.status is Status.CONVERGED
        lb = res.lower_bounds
        assert np.all(np.diff(lb) >= -1e-9)
        for r in res.trace:
            assert r.upper_bound >= res.objective - 1e-4 * (1 + abs(res.objective))
        solver = RecourseSolver(inst)
        tol = 1e-4 * (1 + abs(res.gamma))
        for v in s.vertices():
            assert res.gamma >= solver(res.x, v)[0] - tol
        # no repeated vertex, so iterations are bounded by the vertex count plus the mean
        assert res.n_iterations <= len(s.vertices()) + 1


def test_ccg_box_and_ellipsoid_run():
    inst, ds = generate(3, 3, 2500, 5)
    data = np.vstack([ds.train, ds.val])
    box = run_ccg(inst, ClassicalSet("box").fit(data))
    assert box.status is Status.CONVERGED and not box.heuristic
    e = ClassicalSet("ellipsoid").fit(data).calibrate(ds.calibration)
    ell = run_ccg(inst, e, seed=3)
    assert ell.status is Status.CONVERGED and ell.heuristic
    for xi in ell.scenarios[1:]:
        assert e.contains(xi, tol=1e-8)
    again = run_ccg(inst, e, seed=3)
    np.testing.assert_array_equal(ell.x, again.x)


def test_nested_sets_cost_more():
    rng = np.random.default_rng(3)
    inst = random_instance(rng, 3, 3)
    base = ClassicalSet("budget").fit(rng.normal(5, 2, (200, 3)))
    last = -np.inf
    for g in (0.0, 0.5, 1.0, 2.0, 4.0):
        base.gamma_ = g
        obj = run_ccg(inst, base).objective
        assert obj >= last - 1e-6
        last = obj


def test_iteration_and_time_limits():
    rng = np.random.default_rng(4)
    inst = random_instance(rng, 3, 3)
    s = ClassicalSet("budget", gamma=3.0).fit(rng.normal(5, 2, (200, 3)))
    res = run_ccg(inst, s, max_iter=1)
    assert res.status is Status.ITER_LIMIT and res.n_iterations == 1
    res = run_ccg(inst, s, time_limit=0.0)
    assert res.status is Status.TIME_LIMIT and res.n_iterations == 1
    with pytest.raises(ValueError):
        run_ccg(inst, s, eps=0.0)


def test_subproblem_errors_carry_iteration(toy):
    def broken(main, it):
        raise RuntimeError("boom")

    with pytest.raises(SubproblemError) as exc:
        _ccg_loop(toy, [[1.0]], broken, 1e-4, 5, 10.0, "x", False)
    assert exc.value.iteration == 1


def test_result_serialization(toy):
    s = make_set("budget", [5.0], [[4.0]], gamma=0.5)
    d = run_ccg(toy, s).to_dict(timings=False)
    assert d["status"] == "Converged" and d["method"] == "ccg-budget"
    assert all("wall_time" not in r for r in d["trace"])
    assert {"lower_bound", "subproblem_value", "upper_bound", "xi"} <= set(d["trace"][0])
