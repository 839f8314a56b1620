"""Dense revised simplex with dual extraction, plus the production-distribution LPs.

The solver works on small dense problems (a few hundred rows at most) and keeps an
explicit basis inverse updated by elementary row operations, refactorizing
periodically. Duals are read off the terminating basis, so at dual-degenerate
points they are one valid subgradient rather than an average.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 32
DEDUP_TOL = 1e-9

SENSES = (">=", "<=", "=")


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class LpError(RuntimeError):
    """Raised when an LP that must be solvable is not (e.g. a recourse LP)."""

    def __init__(self, status, context=""):
        self.status = status
        msg = f"LP returned status {status.value}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


@dataclass(frozen=True)
class LpSpec:
    """``min c'x  s.t.  A x (sense) rhs,  x >= lb``.

    ``variable_lower_bounds`` may contain ``-inf`` for free variables.
    """

    objective_coeffs: np.ndarray
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    senses: tuple
    variable_lower_bounds: Optional[np.ndarray] = None
    row_names: Optional[tuple] = None
    col_names: Optional[tuple] = None

    def __post_init__(self):
        c = np.asarray(self.objective_coeffs, dtype=float).ravel()
        A = np.asarray(self.constraint_matrix, dtype=float)
        b = np.asarray(self.rhs, dtype=float).ravel()
        if A.ndim != 2:
            if A.size == 0:
                A = A.reshape(0, c.size)
            else:
                raise ValueError("constraint_matrix must be 2-D")
        senses = tuple(self.senses)
        m, n = A.shape
        if n != c.size:
            raise ValueError(f"constraint_matrix has {n} columns but objective has {c.size} entries")
        if b.size != m or len(senses) != m:
            raise ValueError(f"row count mismatch: matrix {m}, rhs {b.size}, senses {len(senses)}")
        bad = [s for s in senses if s not in SENSES]
        if bad:
            raise ValueError(f"unknown senses {bad!r}; expected one of {SENSES}")
        lb = self.variable_lower_bounds
        lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float).ravel()
        if lb.size != n:
            raise ValueError(f"variable_lower_bounds has {lb.size} entries, expected {n}")
        if np.any(np.isnan(lb)) or np.any(lb == np.inf):
            raise ValueError("lower bounds must be finite or -inf")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("LP data must be finite")
        if self.row_names is not None and len(self.row_names) != m:
            raise ValueError("row_names length mismatch")
        if self.col_names is not None and len(self.col_names) != n:
            raise ValueError("col_names length mismatch")
        object.__setattr__(self, "objective_coeffs", c)
        object.__setattr__(self, "constraint_matrix", A)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "variable_lower_bounds", lb)

    @property
    def shape(self):
        return self.constraint_matrix.shape


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    primal: np.ndarray
    dual: np.ndarray
    objective: float
    iterations: int = 0
    basis: Optional["_Basis"] = field(default=None, repr=False, compare=False)

    @property
    def optimal(self):
        return self.status is LpStatus.OPTIMAL


@dataclass(frozen=True)
class _Basis:
    signature: tuple
    indices: np.ndarray


class _StandardForm:
    """``min c'u  s.t.  M u = r,  u >= 0,  r >= 0`` built from an LpSpec."""

    def __init__(self, spec: LpSpec):
        A, b, c = spec.constraint_matrix, spec.rhs, spec.objective_coeffs
        lb = spec.variable_lower_bounds
        m, n = A.shape
        free = ~np.isfinite(lb)
        shift = np.where(free, 0.0, lb)
        r = b - A @ shift

        # free columns are split into a positive and a negative part
        cols = [A, -A[:, free]]
        costs = [c, -c[free]]
        n_struct = n + int(free.sum())

        slack_sign = np.array([{">=": -1.0, "<=": 1.0, "=": 0.0}[s] for s in spec.senses])
        has_slack = slack_sign != 0
        n_slack = int(has_slack.sum())
        S = np.zeros((m, n_slack))
        S[np.flatnonzero(has_slack), np.arange(n_slack)] = slack_sign[has_slack]
        cols.append(S)
        costs.append(np.zeros(n_slack))

        flip = np.where(r < 0, -1.0, 1.0)
        M = np.hstack(cols) * flip[:, None]
        r = r * flip

        # rows already carrying a +1 slack start with it basic; others get an artificial
        slack_row_col = np.full(m, -1)
        slack_cols = n_struct + np.arange(n_slack)
        for k, row in enumerate(np.flatnonzero(has_slack)):
            if M[row, slack_cols[k]] > 0:
                slack_row_col[row] = slack_cols[k]
        need_art = np.flatnonzero(slack_row_col < 0)
        n_base = M.shape[1]
        Art = np.zeros((m, need_art.size))
        Art[need_art, np.arange(need_art.size)] = 1.0
        M = np.hstack([M, Art])

        basis = slack_row_col.copy()
        basis[need_art] = n_base + np.arange(need_art.size)

        self.M = M
        self.r = r
        self.c = np.concatenate(costs + [np.zeros(need_art.size)])
        self.flip = flip
        self.shift = shift
        self.free = free
        self.n = n
        self.n_base = n_base
        self.n_art = need_art.size
        self.initial_basis = basis
        self.const = float(c @ shift)
        self.signature = (m, M.shape[1], n_base, tuple(flip.astype(int)))

    def recover(self, u):
        x = self.shift + u[: self.n]
        if self.free.any():
            x[self.free] -= u[self.n : self.n + int(self.free.sum())]
        return x


def _pivot_inverse(Binv, d, r):
    # Binv <- E Binv where E maps column d onto e_r
    row = Binv[r] / d[r]
    Binv -= np.outer(d, row)
    Binv[r] = row


def _simplex(M, r, c, basis, Binv, allowed, max_iter):
    """Primal simplex from a feasible basis; returns (status, basis, Binv, iters).

    Dantzig pricing, switching permanently to Bland's rule after a run of
    degenerate pivots so cycling cannot occur.
    """
    m = M.shape[0]
    bland = False
    degenerate_run = 0
    since_refactor = 0
    for it in range(max_iter):
        xB = Binv @ r
        pi = c[basis] @ Binv
        reduced = c - pi @ M
        reduced[~allowed] = 0.0
        reduced[basis] = 0.0
        candidates = np.flatnonzero(reduced < -OPT_TOL)
        if candidates.size == 0:
            return LpStatus.OPTIMAL, basis, Binv, it
        j = candidates[0] if bland else candidates[np.argmin(reduced[candidates])]
        d = Binv @ M[:, j]
        pos = d > PIVOT_TOL
        if not pos.any():
            return LpStatus.UNBOUNDED, basis, Binv, it
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / d[pos]
        theta = ratios.min()
        ties = np.flatnonzero(ratios <= theta + 1e-12)
        if bland:
            r_out = ties[np.argmin(basis[ties])]
        else:
            r_out = ties[np.argmax(d[ties])]
        if theta <= 1e-12:
            degenerate_run += 1
            if degenerate_run > 2 * m + 10:
                bland = True
        else:
            degenerate_run = 0
        basis[r_out] = j
        since_refactor += 1
        if since_refactor >= REFACTOR_EVERY:
            Binv = np.linalg.inv(M[:, basis])
            since_refactor = 0
        else:
            _pivot_inverse(Binv, d, r_out)
    raise RuntimeError(f"simplex exceeded {max_iter} iterations")


def _drive_out_artificials(sf, basis, Binv):
    for row in range(basis.size):
        if basis[row] < sf.n_base:
            continue
        tableau_row = Binv[row] @ sf.M[:, : sf.n_base]
        nonbasic = np.ones(sf.n_base, dtype=bool)
        nonbasic[basis[basis < sf.n_base]] = False
        cand = np.flatnonzero(nonbasic & (np.abs(tableau_row) > 1e-9))
        if cand.size == 0:
            continue  # redundant row; the artificial stays basic at zero
        j = cand[np.argmax(np.abs(tableau_row[cand]))]
        d = Binv @ sf.M[:, j]
        _pivot_inverse(Binv, d, row)
        basis[row] = j
    return basis, Binv


def _warm_basis(sf, warm):
    if warm is None or warm.signature != sf.signature:
        return None
    basis = np.array(warm.indices, copy=True)
    if np.any(basis >= sf.n_base):
        return None
    try:
        Binv = np.linalg.inv(sf.M[:, basis])
    except np.linalg.LinAlgError:
        return None
    xB = Binv @ sf.r
    if np.any(xB < -FEAS_TOL * (1.0 + np.abs(sf.r).max(initial=0.0))):
        return None
    return basis, Binv


def solve_lp(spec: LpSpec, warm_start: Optional[_Basis] = None, max_iter: int = 50_000) -> LpSolution:
    """Solve ``spec`` to optimality, returning primal values and row duals.

    Duals follow the minimization convention: ``>=`` rows carry nonnegative
    multipliers, ``<=`` rows nonpositive ones. Infeasible and unbounded problems
    are reported through ``status``. ``warm_start`` accepts the ``basis`` of a
    previous solution with identical structure; it is used only if still primal
    feasible.
    """
    sf = _StandardForm(spec)
    m, N = sf.M.shape
    n = spec.shape[1]
    empty = LpSolution
    if m == 0:
        c = spec.objective_coeffs
        lb = spec.variable_lower_bounds
        if np.any(c < -OPT_TOL) or np.any((c > OPT_TOL) & ~np.isfinite(lb)):
            return empty(LpStatus.UNBOUNDED, np.full(n, np.nan), np.zeros(0), -np.inf)
        x = np.where(np.isfinite(lb), lb, 0.0)
        return empty(LpStatus.OPTIMAL, x, np.zeros(0), float(c @ x))

    iters = 0
    warm = _warm_basis(sf, warm_start)
    fresh = warm is not None
    if warm is not None:
        basis, Binv = warm
    else:
        basis = sf.initial_basis.copy()
        Binv = np.eye(m)
        if sf.n_art:
            c1 = np.zeros(N)
            c1[sf.n_base :] = 1.0
            allowed = np.ones(N, dtype=bool)
            _, basis, Binv, iters = _simplex(sf.M, sf.r, c1, basis, Binv, allowed, max_iter)
            infeas = c1[basis] @ (Binv @ sf.r)
            if infeas > FEAS_TOL * (1.0 + np.abs(sf.r).max()):
                return empty(LpStatus.INFEASIBLE, np.full(n, np.nan), np.full(m, np.nan), np.nan, iters)
            basis, Binv = _drive_out_artificials(sf, basis, Binv)
            Binv = np.linalg.inv(sf.M[:, basis])

    allowed = np.ones(N, dtype=bool)
    allowed[sf.n_base :] = False
    status, basis, Binv, it2 = _simplex(sf.M, sf.r, sf.c, basis, Binv, allowed, max_iter)
    iters += it2
    if status is LpStatus.UNBOUNDED:
        return empty(status, np.full(n, np.nan), np.full(m, np.nan), -np.inf, iters)

    if not (fresh and it2 == 0):
        Binv = np.linalg.inv(sf.M[:, basis])
    u = np.zeros(N)
    u[basis] = np.maximum(Binv @ sf.r, 0.0)
    pi = sf.c[basis] @ Binv
    x = sf.recover(u)
    dual = pi * sf.flip + 0.0
    objective = float(spec.objective_coeffs @ x)
    return LpSolution(
        LpStatus.OPTIMAL, x, dual, objective, iters, _Basis(sf.signature, basis.copy())
    )


def lp_residuals(spec: LpSpec, sol: LpSolution):
    """Return (primal_residual, dual_residual, duality_gap) for an optimal solve.

    Primal residual is relative to ``1 + |rhs|``; the dual residual measures sign
    violations of row duals and negative reduced costs.
    """
    A, b, c = spec.constraint_matrix, spec.rhs, spec.objective_coeffs
    lb = spec.variable_lower_bounds
    x, pi = sol.primal, sol.dual
    Ax = A @ x
    viol = np.zeros(b.size)
    senses = np.array(spec.senses)
    ge, le, eq = senses == ">=", senses == "<=", senses == "="
    viol[ge] = np.maximum(b[ge] - Ax[ge], 0)
    viol[le] = np.maximum(Ax[le] - b[le], 0)
    viol[eq] = np.abs(Ax[eq] - b[eq])
    bound_viol = np.maximum(lb - x, 0)
    primal = max((viol / (1 + np.abs(b))).max(initial=0.0), bound_viol.max(initial=0.0))

    sign_viol = np.concatenate([np.maximum(-pi[ge], 0), np.maximum(pi[le], 0)])
    reduced = c - A.T @ pi
    free = ~np.isfinite(lb)
    rc_viol = np.where(free, np.abs(reduced), np.maximum(-reduced, 0))
    dual = max(sign_viol.max(initial=0.0), rc_viol.max(initial=0.0))

    finite_lb = np.where(free, 0.0, lb)
    dual_obj = pi @ (b - A @ finite_lb) + c @ finite_lb
    gap = abs(sol.objective - dual_obj)
    return primal, dual, gap


# ---------------------------------------------------------------------------
# production-distribution problem


@dataclass(frozen=True)
class Instance:
    """Production-distribution data: produce cost ``c``, ship cost ``d1``, unmet cost ``d2``."""

    c: np.ndarray
    d1: np.ndarray
    d2: float
    p: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        p = np.asarray(self.p, dtype=float).ravel()
        d1 = np.atleast_2d(np.asarray(self.d1, dtype=float))
        if d1.shape[0] != c.size or p.size != c.size:
            raise ValueError(f"inconsistent sizes: c {c.size}, p {p.size}, d1 {d1.shape}")
        if np.any(c <= 0) or np.any(p <= 0) or np.any(d1 <= 0) or not self.d2 > 0:
            raise ValueError("all costs and production factors must be strictly positive")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "d2", float(self.d2))

    @property
    def n_facilities(self):
        return self.c.size

    @property
    def n_destinations(self):
        return self.d1.shape[1]

    def to_dict(self):
        return {"c": self.c.tolist(), "d1": self.d1.tolist(), "d2": self.d2, "p": self.p.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(c=data["c"], d1=data["d1"], d2=data["d2"], p=data["p"])

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _check_x_xi(inst, x, xi):
    x = np.asarray(x, dtype=float).ravel()
    xi = np.asarray(xi, dtype=float).ravel()
    if x.size != inst.n_facilities:
        raise ValueError(f"x has length {x.size}, expected {inst.n_facilities}")
    if xi.size != inst.n_destinations:
        raise ValueError(f"xi has length {xi.size}, expected {inst.n_destinations}")
    if np.any(x < -FEAS_TOL):
        raise ValueError("first-stage decision must be nonnegative")
    return np.maximum(x, 0.0), xi


def _recourse_blocks(inst):
    I, J = inst.n_facilities, inst.n_destinations
    demand = np.hstack([np.tile(np.eye(J), (1, I)), np.eye(J)])
    capacity = np.hstack([np.kron(np.eye(I), np.ones((1, J))), np.zeros((I, J))])
    cost = np.concatenate([inst.d1.ravel(), np.full(J, inst.d2)])
    return demand, capacity, cost


def build_recourse_lp(inst: Instance, x, xi, _blocks=None) -> LpSpec:
    """Recourse LP with variables ``[y1 row-major, y2]`` and rows ``[demand, capacity]``."""
    x, xi = _check_x_xi(inst, x, xi)
    matrix, cost = _blocks or _recourse_matrix(inst)
    I, J = inst.n_facilities, inst.n_destinations
    return LpSpec(
        objective_coeffs=cost,
        constraint_matrix=matrix,
        rhs=np.concatenate([xi, inst.p * x]),
        senses=(">=",) * J + ("<=",) * I,
    )


def _recourse_matrix(inst):
    demand, capacity, cost = _recourse_blocks(inst)
    return np.vstack([demand, capacity]), cost


class RecourseSolver:
    """Repeated recourse solves for one instance, warm-starting from the last basis.

    Not thread-safe; create one per thread. The free function
    :func:`recourse_value_and_grad` is the stateless equivalent.
    """

    def __init__(self, inst: Instance):
        self.inst = inst
        self._basis = None
        self._blocks = _recourse_matrix(inst)
        self.n_solves = 0

    def __call__(self, x, xi):
        spec = build_recourse_lp(self.inst, x, xi, self._blocks)
        sol = solve_lp(spec, warm_start=self._basis)
        self.n_solves += 1
        if not sol.optimal:
            raise LpError(sol.status, "recourse")
        self._basis = sol.basis
        J = self.inst.n_destinations
        return sol.objective, sol.dual[:J].copy()


def recourse_value_and_grad(inst: Instance, x, xi):
    """Optimal recourse cost ``q(xi, x)`` and its gradient in ``xi``.

    Demand enters only the right-hand side, so the gradient is the vector of
    demand-row duals (a subgradient where the dual is not unique).
    """
    spec = build_recourse_lp(inst, x, xi)
    sol = solve_lp(spec)
    if not sol.optimal:
        raise LpError(sol.status, "recourse")
    return sol.objective, sol.dual[: inst.n_destinations].copy()


def recourse_value(inst: Instance, x, xi) -> float:
    return recourse_value_and_grad(inst, x, xi)[0]


def dedup_scenarios(scenarios: Sequence, tol: float = DEDUP_TOL):
    kept = []
    for s in scenarios:
        s = np.asarray(s, dtype=float).ravel()
        if not any(np.max(np.abs(s - k)) <= tol for k in kept):
            kept.append(s)
    return kept


@dataclass(frozen=True)
class MainSolution:
    x: np.ndarray
    gamma: float
    objective: float


def build_main_lp(inst: Instance, scenarios: Sequence) -> LpSpec:
    """Scenario-indexed main problem: variables ``[x, y^1, ..., y^S, gamma]``."""
    I, J = inst.n_facilities, inst.n_destinations
    demand, capacity, cost = _recourse_blocks(inst)
    ny = cost.size
    S = len(scenarios)
    n = I + S * ny + 1
    rows, rhs, senses = [], [], []
    for k, xi in enumerate(scenarios):
        xi = np.asarray(xi, dtype=float).ravel()
        if xi.size != J:
            raise ValueError(f"scenario {k} has length {xi.size}, expected {J}")
        off = I + k * ny
        blk = np.zeros((J + I + 1, n))
        blk[:J, off : off + ny] = demand
        blk[J : J + I, off : off + ny] = capacity
        blk[J : J + I, :I] = -np.diag(inst.p)
        blk[J + I, off : off + ny] = -cost
        blk[J + I, -1] = 1.0
        rows.append(blk)
        rhs.append(np.concatenate([xi, np.zeros(I + 1)]))
        senses += [">="] * J + ["<="] * I + [">="]
    obj = np.zeros(n)
    obj[:I] = inst.c
    obj[-1] = 1.0
    return LpSpec(obj, np.vstack(rows), np.concatenate(rhs), tuple(senses))


def solve_main(inst: Instance, scenarios: Sequence) -> MainSolution:
    """Minimize ``c'x + gamma`` with ``gamma`` bounding recourse cost on every scenario."""
    scenarios = dedup_scenarios(scenarios)
    if not scenarios:
        raise ValueError("scenario list must be nonempty")
    spec = build_main_lp(inst, scenarios)
    sol = solve_lp(spec)
    if not sol.optimal:
        raise LpError(sol.status, "main problem")
    I = inst.n_facilities
    x = np.maximum(sol.primal[:I], 0.0)
    gamma = float(sol.primal[-1])
    return MainSolution(x=x, gamma=gamma, objective=float(inst.c @ x + gamma))
