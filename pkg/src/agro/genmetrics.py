"""Precision, density, recall and coverage of generated samples against real ones.

Balls are closed (``<=``) so exact duplicates count as covered. Distances are
brute force, which is fine for a few thousand points.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class MetricReport:
    precision: float
    density: float
    recall: float
    coverage: float
    k: int
    n_real: int
    n_generated: int

    def to_dict(self):
        return asdict(self)


def knn_radius(data, k: int) -> np.ndarray:
    """Distance from each row to its k-th nearest other row."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] <= k:
        raise ValueError(f"need more than k={k} rows, got {data.shape[0]}")
    dist = cdist(data, data)
    np.fill_diagonal(dist, np.inf)
    return np.partition(dist, k - 1, axis=1)[:, k - 1]


def compute_metrics(real, generated, k: int = 5) -> MetricReport:
    real = np.atleast_2d(np.asarray(real, dtype=float))
    generated = np.atleast_2d(np.asarray(generated, dtype=float))
    if real.shape[1] != generated.shape[1]:
        raise ValueError(f"column mismatch: real {real.shape[1]}, generated {generated.shape[1]}")
    real_r = knn_radius(real, k)
    gen_r = knn_radius(generated, k)
    # rows index real points, columns generated points
    dist = cdist(real, generated)
    in_real_ball = dist <= real_r[:, None]
    in_gen_ball = dist <= gen_r[None, :]
    N, M = dist.shape
    return MetricReport(
        precision=float(in_real_ball.any(axis=0).mean()),
        density=float(in_real_ball.sum() / (k * M)),
        recall=float(in_gen_ball.any(axis=1).mean()),
        coverage=float(in_real_ball.any(axis=1).mean()),
        k=k,
        n_real=N,
        n_generated=M,
    )


def format_table(reports: dict) -> str:
    """Plain-text table with one row per label."""
    lines = [f"{'label':<12}{'precision':>10}{'density':>10}{'recall':>10}{'coverage':>10}"]
    for label, r in reports.items():
        lines.append(
            f"{str(label):<12}{r.precision:>10.2f}{r.density:>10.2f}{r.recall:>10.2f}{r.coverage:>10.2f}"
        )
    return "\n".join(lines)
