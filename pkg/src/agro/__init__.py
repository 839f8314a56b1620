"""Two-stage adaptive robust optimization with learned (VAE) uncertainty sets."""

from .ccg import CcgResult, Status, run_ccg
from .genmetrics import MetricReport, compute_metrics
from .harness import EvalReport, evaluate_solution, run_experiment
from .lin_solve import Instance, LpSpec, LpStatus, RecourseSolver, solve_lp, solve_main
from .neuralgen import VAE, LatentBall, calibrate_latent, train_vae
from .pga import AgroResult, PgaConfig, run_agro
from .probgen import DemandDataset, generate
from .uncertainty import ClassicalSet, calibrate_gamma

__all__ = [
    "AgroResult", "CcgResult", "ClassicalSet", "DemandDataset", "EvalReport", "Instance",
    "LatentBall", "LpSpec", "LpStatus", "MetricReport", "PgaConfig", "RecourseSolver", "Status",
    "VAE", "calibrate_gamma", "calibrate_latent", "compute_metrics", "evaluate_solution",
    "generate", "run_agro", "run_ccg", "run_experiment", "solve_lp", "solve_main", "train_vae",
]
__version__ = "0.1.0"
