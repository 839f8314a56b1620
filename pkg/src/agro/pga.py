"""Adversarial generation for two-stage robust optimization (AGRO).

The worst-case subproblem is searched over the decoder image of a latent ball:
normalized projected gradient ascent in latent space, with recourse gradients
from LP duals pulled back through the decoder.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ccg import CcgResult, _ccg_loop
from .lin_solve import Instance, RecourseSolver
from .neuralgen import VAE, LatentBall, sample_latent_ball
from .probgen import substream


@dataclass(frozen=True)
class PgaConfig:
    eta: float = 0.1
    step_tol: float = 1e-4
    max_steps: int = 1000
    init_count: int = 10
    max_extra_inits: int = 200
    eps: float = 1e-4
    max_iter: int = 100
    time_limit: float = 900.0
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0 or self.step_tol <= 0 or self.eps <= 0:
            raise ValueError("eta must be >= 0; step_tol and eps must be positive")
        if min(self.max_steps, self.init_count, self.max_extra_inits, self.max_iter) < 1:
            raise ValueError("step and start counts must be positive")
        if self.init_count > self.max_extra_inits:
            raise ValueError("init_count cannot exceed max_extra_inits")

    def to_dict(self):
        return asdict(self)


@dataclass
class PgaRun:
    z: np.ndarray
    xi: np.ndarray
    q: float
    steps: int
    q_start: float
    history: list = field(default_factory=list, repr=False)


def project_latent(z, gamma: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``gamma`` centred at 0."""
    if gamma < 0:
        raise ValueError("radius must be nonnegative")
    z = np.asarray(z, dtype=float)
    norm = np.linalg.norm(z)
    if norm <= gamma:
        return z.copy()
    return (gamma / norm) * z


def pga_ascend(inst, x, model: VAE, ball: LatentBall, z0, cfg: PgaConfig, recourse=None) -> PgaRun:
    """Ascend ``q(decode(z), x)`` from ``z0``; returns the best point visited."""
    recourse = recourse or RecourseSolver(inst)
    z = np.asarray(z0, dtype=float).copy()
    if np.linalg.norm(z) > ball.gamma + 1e-9:
        raise ValueError("starting point lies outside the latent ball")
    best = None
    q_prev = None
    history = []
    steps = 0
    for _ in range(cfg.max_steps):
        xi, cache = model.decode_with_cache(z)
        q, grad_xi = recourse(x, xi)
        steps += 1
        history.append(q)
        if best is None or q > best.q:
            best = PgaRun(z.copy(), xi, q, 0, history[0])
        if q_prev is not None and abs(q - q_prev) <= cfg.step_tol * (1.0 + abs(q_prev)):
            break
        if cfg.eta == 0:
            break
        direction = model.vjp(cache, grad_xi)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            break
        z = project_latent(z + cfg.eta * direction / norm, ball.gamma)
        q_prev = q
    best.steps = steps
    best.history = history
    return best


def agro_subproblem(inst, x, model, ball, cfg: PgaConfig, gamma_bound=-math.inf, iteration=0, recourse=None):
    """Multi-start PGA; keeps adding single starts while the best value is ``<= gamma_bound``.

    Returns ``(xi, q, diagnostics)``. Start ``j`` of iteration ``it`` draws from
    its own seed substream, so results do not depend on evaluation order.
    """
    recourse = recourse or RecourseSolver(inst)
    runs = []

    def start(j):
        if ball.gamma > 0:
            z0 = sample_latent_ball(ball, substream((cfg.seed, iteration, j), "pga-start"))
        else:
            z0 = np.zeros(ball.latent_dim)
        runs.append(pga_ascend(inst, x, model, ball, z0, cfg, recourse))

    for j in range(cfg.init_count):
        start(j)
    best = max(runs, key=lambda r: r.q)
    while best.q <= gamma_bound and len(runs) < cfg.max_extra_inits:
        start(len(runs))
        if runs[-1].q > best.q:
            best = runs[-1]
    diagnostics = {
        "starts_used": len(runs),
        "steps_per_start": [r.steps for r in runs],
        "best_q_per_start": [r.q for r in runs],
        "start_q_per_start": [r.q_start for r in runs],
        "z": best.z.tolist(),
        "exhausted": bool(best.q <= gamma_bound and len(runs) >= cfg.max_extra_inits),
    }
    return best.xi, best.q, diagnostics


@dataclass
class AgroResult(CcgResult):
    latent_points: list = field(default_factory=list)
    ball: dict = None
    config: dict = None

    def to_dict(self, timings=True):
        d = super().to_dict(timings)
        d["latent_dim"] = None if self.ball is None else self.ball["latent_dim"]
        d["latent_points"] = [np.asarray(z).tolist() for z in self.latent_points]
        d["ball"] = self.ball
        d["pga_config"] = self.config
        return d


def run_agro(inst: Instance, model: VAE, ball: LatentBall, cfg: PgaConfig = None) -> AgroResult:
    """Outer CCG-style loop with PGA subproblems, starting from ``decode(0)``."""
    cfg = cfg or PgaConfig()
    recourse = RecourseSolver(inst)
    z_origin = np.zeros(ball.latent_dim)
    xi0 = model.decode_with_cache(z_origin)[0]
    latent = {xi0.tobytes(): z_origin}

    def sub(main, it):
        xi, q, diag = agro_subproblem(
            inst, main.x, model, ball, cfg, gamma_bound=main.gamma, iteration=it, recourse=recourse
        )
        latent.setdefault(np.asarray(xi, dtype=float).tobytes(), np.asarray(diag["z"]))
        return xi, q, {"pga": diag}

    res = _ccg_loop(inst, [xi0], sub, cfg.eps, cfg.max_iter, cfg.time_limit, "agro", True)
    return AgroResult(
        x=res.x, gamma=res.gamma, objective=res.objective, scenarios=res.scenarios,
        trace=res.trace, status=res.status, method="agro", heuristic=True,
        latent_points=[latent[np.asarray(s, dtype=float).tobytes()] for s in res.scenarios],
        ball=ball.to_dict(), config=cfg.to_dict(),
    )
