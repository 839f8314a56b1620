"""Out-of-sample evaluation and the multi-trial AGRO vs CCG comparison."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ccg import run_ccg
from .genmetrics import compute_metrics
from .lin_solve import Instance, LpError, RecourseSolver
from .neuralgen import VAE, calibrate_latent
from .pga import PgaConfig, run_agro
from .probgen import generate, substream
from .uncertainty import ClassicalSet

log = logging.getLogger(__name__)

CCG_METHODS = ("ccg-budget", "ccg-ellipsoid", "ccg-box")

DEFAULT_CONFIG = {
    "sizes": [[4, 3]],
    "trials": 10,
    "methods": ["agro-1", "ccg-budget"],
    "alpha": 0.95,
    "delta": 0.05,
    "seed": 0,
    "n_samples": 2500,
    "vae": {},
    "vae_overrides": {},
    "pga": {},
    "ccg": {"eps": 1e-4, "max_iter": 100, "time_limit": 900.0},
    "metrics_k": 5,
    "metrics_samples": 1000,
    "keep_costs": False,
    "n_jobs": 1,
}


def empirical_quantile(values, alpha: float) -> float:
    """The ``ceil(alpha * N)``-th smallest value (1-based)."""
    values = np.sort(np.asarray(values, dtype=float).ravel())
    if values.size == 0:
        raise ValueError("empirical_quantile of an empty sample")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k = max(math.ceil(alpha * values.size - 1e-12), 1)
    return float(values[k - 1])


@dataclass
class EvalReport:
    method: str
    x: list
    first_stage_cost: float
    var_estimate: float
    total: float
    alpha: float
    aro_objective: float = None
    gamma_coverage: float = None
    costs: list = field(default=None, repr=False)

    def to_dict(self):
        d = asdict(self)
        if d["costs"] is None:
            d.pop("costs")
        return d


def recourse_costs(inst: Instance, x, test) -> np.ndarray:
    solver = RecourseSolver(inst)
    out = np.empty(len(test))
    for i, xi in enumerate(test):
        try:
            out[i] = solver(x, xi)[0]
        except LpError as exc:
            raise LpError(exc.status, f"test row {i}") from exc
    return out


def evaluate_solution(inst: Instance, x, test, alpha=0.95, method="", gamma=None, keep_costs=False):
    """First-stage cost plus the empirical alpha-quantile of test recourse costs."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-9):
        raise ValueError("first-stage decision must be nonnegative")
    costs = recourse_costs(inst, x, np.atleast_2d(test))
    first = float(inst.c @ x)
    var = empirical_quantile(costs, alpha)
    rep = EvalReport(method, x.tolist(), first, var, first + var, alpha, costs=costs.tolist() if keep_costs else None)
    if gamma is not None:
        rep.aro_objective = first + float(gamma)
        rep.gamma_coverage = float(np.mean(costs <= gamma + 1e-9 * (1 + abs(gamma))))
    return rep


def relative_improvement(total_baseline, total_agro):
    return (total_baseline - total_agro) / total_baseline


def box_summary(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return None
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {
        "n": int(v.size), "mean": float(v.mean()), "min": float(q[0]), "q1": float(q[1]),
        "median": float(q[2]), "q3": float(q[3]), "max": float(q[4]),
    }


# -- experiment ---------------------------------------------------------------


def trial_seed(root: int, I: int, J: int, trial: int) -> int:
    return int(np.random.SeedSequence([root, I, J, trial]).generate_state(1)[0])


def _vae_config(cfg, L, seed):
    conf = {**cfg.get("vae", {}), **cfg.get("vae_overrides", {}).get(str(L), {})}
    conf["latent_dim"] = L
    conf["random_state"] = int(substream(seed, "vae", L).integers(2**31))
    return conf


def run_trial(cfg: dict, I: int, J: int, trial: int) -> dict:
    """One trial: data, calibrated sets, every method, evaluation and metrics."""
    seed = trial_seed(cfg["seed"], I, J, trial)
    alpha, delta = cfg["alpha"], cfg["delta"]
    inst, ds = generate(I, J, cfg["n_samples"], seed)
    fit_rows = np.vstack([ds.train, ds.val])
    for a in ("vae_train", "vae_val", "test"):
        assert not set(ds.indices("calibration")) & set(ds.indices(a))

    out = {"trial": trial, "size": [I, J], "seed": seed, "methods": {}, "metrics": {}, "calibration": {}}
    runtimes = {"methods": {}, "vae_train": {}}
    ccg_kw = cfg.get("ccg", {})
    for method in cfg["methods"]:
        if method in CCG_METHODS:
            kind = method.split("-", 1)[1]
            uset = ClassicalSet(kind).fit(fit_rows)
            if kind != "box":
                uset.calibrate(ds.calibration, alpha, delta)
                out["calibration"][method] = uset.calibration_.to_dict()
            t0 = time.perf_counter()
            res = run_ccg(inst, uset, seed=int(substream(seed, method).integers(2**31)), **ccg_kw)
        elif method.startswith("agro-"):
            L = int(method.split("-", 1)[1])
            t0 = time.perf_counter()
            model = VAE(**_vae_config(cfg, L, seed)).fit(ds.train, X_val=ds.val)
            runtimes["vae_train"][method] = time.perf_counter() - t0
            ball = calibrate_latent(model, ds.calibration, alpha, delta)
            out["calibration"][method] = ball.calibration.to_dict()
            gen = model.sample(cfg["metrics_samples"], random_state=substream(seed, "metrics", L))
            out["metrics"][method] = compute_metrics(ds.test, gen, cfg["metrics_k"]).to_dict()
            pga_cfg = PgaConfig(**{**cfg.get("pga", {}), "seed": int(substream(seed, method).integers(2**31))})
            t0 = time.perf_counter()
            res = run_agro(inst, model, ball, pga_cfg)
        else:
            raise ValueError(f"unknown method {method!r}")
        elapsed = time.perf_counter() - t0
        sub_time = sum(r.subproblem_time for r in res.trace)
        runtimes["methods"][method] = {"total": elapsed, "subproblem": sub_time}
        ev = evaluate_solution(inst, res.x, ds.test, alpha, method, res.gamma, cfg.get("keep_costs", False))
        out["methods"][method] = {
            "status": res.status.value,
            "iterations": res.n_iterations,
            "heuristic": res.heuristic,
            "gamma": res.gamma,
            "eval": ev.to_dict(),
        }

    improvements = {}
    for a in (m for m in cfg["methods"] if m.startswith("agro-")):
        for b in (m for m in cfg["methods"] if m in CCG_METHODS):
            improvements[f"{a}_vs_{b}"] = relative_improvement(
                out["methods"][b]["eval"]["total"], out["methods"][a]["eval"]["total"]
            )
    out["improvements"] = improvements
    return {"result": out, "runtimes": runtimes}


def _safe_trial(args):
    cfg, I, J, trial = args
    try:
        return run_trial(cfg, I, J, trial)
    except Exception as exc:  # noqa: BLE001 - failures are isolated per trial
        log.warning("trial %d at size (%d, %d) failed: %s", trial, I, J, exc)
        return {"result": {"trial": trial, "size": [I, J], "error": f"{type(exc).__name__}: {exc}"}, "runtimes": None}


@dataclass
class ExperimentReport:
    config: dict
    trials: list
    summary: dict
    runtimes: list

    def to_dict(self):
        """Deterministic part of the report; runtimes are kept separately."""
        return {"config": self.config, "summary": self.summary, "trials": self.trials}

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        path.with_name(path.stem + "_runtimes.json").write_text(
            json.dumps({"runtimes": self.runtimes}, indent=2, sort_keys=True) + "\n"
        )
        with open(path.with_name(path.stem + "_boxplot.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["I", "J", "comparison", "n", "mean", "min", "q1", "median", "q3", "max"])
            for size_key, comps in self.summary["improvements"].items():
                I, J = size_key.split("x")
                for comp, s in comps.items():
                    if s is not None:
                        w.writerow([I, J, comp] + [s[k] for k in ("n", "mean", "min", "q1", "median", "q3", "max")])


def _summarize(cfg, trials):
    summary = {"improvements": {}, "metrics": {}, "failures": 0, "gamma_coverage": {}}
    for I, J in cfg["sizes"]:
        key = f"{I}x{J}"
        done = [t for t in trials if t["size"] == [I, J] and "error" not in t]
        summary["failures"] += sum(1 for t in trials if t["size"] == [I, J] and "error" in t)
        comps = sorted({c for t in done for c in t["improvements"]})
        summary["improvements"][key] = {c: box_summary([t["improvements"][c] for t in done]) for c in comps}
        methods = sorted({m for t in done for m in t["metrics"]})
        summary["metrics"][key] = {
            m: {k: float(np.mean([t["metrics"][m][k] for t in done])) for k in ("precision", "density", "recall", "coverage")}
            for m in methods
        }
        summary["gamma_coverage"][key] = {
            m: float(np.mean([t["methods"][m]["eval"]["gamma_coverage"] for t in done]))
            for m in cfg["methods"] if done
        }
    return summary


def run_experiment(config: dict = None) -> ExperimentReport:
    cfg = {**DEFAULT_CONFIG, **(config or {})}
    cfg["sizes"] = [list(map(int, s)) for s in cfg["sizes"]]
    jobs = [(cfg, I, J, t) for I, J in cfg["sizes"] for t in range(cfg["trials"])]
    if cfg.get("n_jobs", 1) > 1:
        with ProcessPoolExecutor(cfg["n_jobs"]) as pool:
            outcomes = list(pool.map(_safe_trial, jobs))
    else:
        outcomes = [_safe_trial(j) for j in jobs]
    trials = [o["result"] for o in outcomes]
    if trials and all("error" in t for t in trials):
        raise RuntimeError(f"all {len(trials)} trials failed; first error: {trials[0]['error']}")
    runtimes = [{"trial": o["result"]["trial"], "size": o["result"]["size"], **(o["runtimes"] or {})} for o in outcomes]
    echo = {k: v for k, v in cfg.items() if k != "n_jobs"}
    return ExperimentReport(echo, trials, _summarize(cfg, trials), runtimes)
