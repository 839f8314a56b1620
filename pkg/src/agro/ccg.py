"""Column-and-constraint generation over classical uncertainty sets.

Demand only enters the recourse right-hand side, so the recourse cost is convex
in demand and its maximum over a polytope sits at a vertex. Budget and box
subproblems are therefore solved exactly by enumerating vertices. The ellipsoid
subproblem uses multi-start alternating ascent and is flagged as a heuristic.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lin_solve import Instance, RecourseSolver, dedup_scenarios, solve_main
from .probgen import substream
from .uncertainty import ClassicalSet

MAX_BOX_DIM = 16


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    ITER_LIMIT = "IterLimit"
    TIME_LIMIT = "TimeLimit"


class SubproblemError(RuntimeError):
    def __init__(self, iteration, cause):
        self.iteration = iteration
        super().__init__(f"subproblem failed at iteration {iteration}: {cause}")


@dataclass
class IterationRecord:
    iteration: int
    lower_bound: float
    gamma: float
    subproblem_value: float
    upper_bound: float
    xi: np.ndarray
    wall_time: float
    extra: dict = field(default_factory=dict)
    subproblem_time: float = 0.0

    def to_dict(self):
        d = {
            "iteration": self.iteration,
            "lower_bound": self.lower_bound,
            "gamma": self.gamma,
            "subproblem_value": self.subproblem_value,
            "upper_bound": self.upper_bound,
            "xi": self.xi.tolist(),
            "wall_time": self.wall_time,
            "subproblem_time": self.subproblem_time,
        }
        d.update(self.extra)
        return d


@dataclass
class CcgResult:
    x: np.ndarray
    gamma: float
    objective: float
    scenarios: list
    trace: list
    status: Status
    method: str = "ccg"
    heuristic: bool = False

    @property
    def lower_bounds(self):
        return [r.lower_bound for r in self.trace]

    @property
    def n_iterations(self):
        return len(self.trace)

    def to_dict(self, timings=True):
        trace = [r.to_dict() for r in self.trace]
        if not timings:
            for r in trace:
                r.pop("wall_time", None)
                r.pop("subproblem_time", None)
        return {
            "method": self.method,
            "status": self.status.value,
            "heuristic": self.heuristic,
            "x": self.x.tolist(),
            "gamma": self.gamma,
            "objective": self.objective,
            "scenarios": [np.asarray(s).tolist() for s in self.scenarios],
            "trace": trace,
        }


def _argmax_q(recourse, x, points):
    best_xi, best_q = None, -math.inf
    for xi in points:
        q, _ = recourse(x, xi)
        if q > best_q:
            best_xi, best_q = np.array(xi, dtype=float), q
    return best_xi, best_q


def budget_subproblem(inst: Instance, x, uset: ClassicalSet, recourse=None):
    """Exact worst case over a budget set by evaluating its ``2D`` vertices."""
    if uset.kind != "budget":
        raise ValueError("expected a budget set")
    recourse = recourse or RecourseSolver(inst)
    return _argmax_q(recourse, x, uset.vertices())


def box_subproblem(inst: Instance, x, uset: ClassicalSet, recourse=None):
    if uset.kind != "box":
        raise ValueError("expected a box set")
    if uset.n_features_in_ > MAX_BOX_DIM:
        raise ValueError(
            f"box has {uset.n_features_in_} dimensions; corner enumeration is limited to "
            f"{MAX_BOX_DIM}. Use a budget or ellipsoidal set instead."
        )
    recourse = recourse or RecourseSolver(inst)
    return _argmax_q(recourse, x, uset.vertices())


def ellipsoid_starts(uset: ClassicalSet, n_random: int, n_axis: int, rng):
    """Boundary starts: uniform directions plus points on the coordinate axes."""
    D = uset.n_features_in_
    gamma = uset._require_gamma()
    L = np.linalg.cholesky(uset.cov_)
    starts = []
    for _ in range(n_random):
        u = rng.standard_normal(D)
        starts.append(uset.mean_ + math.sqrt(gamma) * L @ (u / np.linalg.norm(u)))
    prec_diag = np.diag(np.linalg.inv(uset.cov_))
    for k in range(min(n_axis, 2 * D)):
        i, sign = k % D, (1.0 if k < D else -1.0)
        xi = uset.mean_.copy()
        xi[i] += sign * math.sqrt(gamma / prec_diag[i])
        starts.append(xi)
    return starts


def ellipsoid_ascent(recourse, x, uset, xi0, max_steps=100, tol=1e-10):
    """Alternate between recourse duals and the ellipsoid's support point.

    Returns ``(xi, q, values)``; ``values`` is nondecreasing because each half
    step is an exact maximization.
    """
    xi = np.asarray(xi0, dtype=float)
    q, pi = recourse(x, xi)
    values = [q]
    for _ in range(max_steps):
        if not np.any(pi):
            break
        nxt = uset.support_point(pi)
        q_new, pi_new = recourse(x, nxt)
        if q_new <= q + tol * (1.0 + abs(q)):
            if q_new > q:
                xi, q = nxt, q_new
                values.append(q)
            break
        xi, q, pi = nxt, q_new, pi_new
        values.append(q)
    return xi, q, values


def ellipsoid_subproblem(inst: Instance, x, uset: ClassicalSet, starts=20, seed=0, recourse=None):
    """Multi-start alternating ascent over an ellipsoid (heuristic)."""
    if uset.kind != "ellipsoid":
        raise ValueError("expected an ellipsoidal set")
    recourse = recourse or RecourseSolver(inst)
    rng = substream(seed, "ellipsoid-starts")
    n_random = starts // 2
    best_xi, best_q = None, -math.inf
    for xi0 in ellipsoid_starts(uset, n_random, starts - n_random, rng):
        xi, q, _ = ellipsoid_ascent(recourse, x, uset, xi0)
        if q > best_q:
            best_xi, best_q = xi, q
    return best_xi, best_q


def converged(q, gamma, eps):
    return q <= gamma + eps * (1.0 + abs(gamma))


def run_ccg(
    inst: Instance,
    uset: ClassicalSet,
    eps: float = 1e-4,
    max_iter: int = 100,
    time_limit: float = 900.0,
    n_starts: int = 20,
    seed: int = 0,
) -> CcgResult:
    """CCG starting from the sample mean; stops when the worst case is within ``eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    kind = uset.kind
    recourse = RecourseSolver(inst)
    if kind == "budget":
        sub = lambda main, it: budget_subproblem(inst, main.x, uset, recourse)
    elif kind == "box":
        sub = lambda main, it: box_subproblem(inst, main.x, uset, recourse)
    else:
        sub = lambda main, it: ellipsoid_subproblem(
            inst, main.x, uset, n_starts, seed=(seed, it), recourse=recourse
        )
    return _ccg_loop(
        inst, [uset.mean_.copy()], sub, eps, max_iter, time_limit,
        method=f"ccg-{kind}", heuristic=(kind == "ellipsoid"),
    )


def _ccg_loop(inst, scenarios, subproblem, eps, max_iter, time_limit, method, heuristic):
    """Alternate main problem and ``subproblem(main, iteration) -> (xi, q[, extra])``."""
    t0 = time.perf_counter()
    scenarios = dedup_scenarios(scenarios)
    trace = []
    status = Status.ITER_LIMIT
    main = None
    for it in range(1, max_iter + 1):
        main = solve_main(inst, scenarios)
        t_sub = time.perf_counter()
        try:
            out = subproblem(main, it)
        except Exception as exc:  # noqa: BLE001 - re-raised with the iteration index
            raise SubproblemError(it, exc) from exc
        xi, q = out[0], out[1]
        extra = out[2] if len(out) > 2 else {}
        trace.append(
            IterationRecord(
                it, main.objective, main.gamma, q, float(inst.c @ main.x + q),
                np.asarray(xi, dtype=float), time.perf_counter() - t0, extra,
                time.perf_counter() - t_sub,
            )
        )
        if converged(q, main.gamma, eps):
            status = Status.CONVERGED
            break
        if time.perf_counter() - t0 > time_limit:
            status = Status.TIME_LIMIT
            break
        scenarios = dedup_scenarios(scenarios + [xi])
    return CcgResult(
        x=main.x, gamma=main.gamma, objective=main.objective, scenarios=scenarios,
        trace=trace, status=status, method=method, heuristic=heuristic,
    )
