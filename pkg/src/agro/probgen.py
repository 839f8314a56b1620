"""Synthetic production-distribution instances and Gaussian-mixture demand data."""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lin_solve import Instance

N_COMPONENTS = 3
UNMET_COST = 5.0
SHIP_BALL_RADIUS = 1.5
PAPER_SPLIT = {"vae_train": 800, "vae_val": 200, "calibration": 500, "test": 1000}
SPLIT_ORDER = ("vae_train", "vae_val", "calibration", "test")


def substream(seed, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named stream derived from a root seed.

    The stream key is a stable hash of ``name`` so streams do not depend on the
    order in which they are requested.
    """
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
        key = tuple(seed.spawn_key)
    elif isinstance(seed, (tuple, list)):
        entropy, key = int(seed[0]), tuple(int(s) for s in seed[1:])
    else:
        entropy, key = int(seed), ()
    ss = np.random.SeedSequence(entropy, spawn_key=key + (zlib.crc32(name.encode()),) + tuple(extra))
    return np.random.default_rng(ss)


def _as_rng(seed, name):
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed, name)


# -- samplers ---------------------------------------------------------------


def sample_gamma(shape: float, size, rng: np.random.Generator) -> np.ndarray:
    """Unit-rate Gamma draws by Marsaglia and Tsang's squeeze method."""
    if shape <= 0:
        raise ValueError("shape must be positive")
    n = int(np.prod(size))
    if shape < 1.0:
        # boost: G(a) = G(a+1) * U^(1/a)
        g = sample_gamma(shape + 1.0, n, rng)
        return (g * rng.random(n) ** (1.0 / shape)).reshape(size)
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n)
    for i in range(n):
        while True:
            x = rng.standard_normal()
            v = (1.0 + c * x) ** 3
            if v <= 0:
                continue
            u = rng.random()
            if u < 1.0 - 0.0331 * x**4 or np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v)):
                out[i] = d * v
                break
    return out.reshape(size)


def sample_dirichlet(alpha, rng: np.random.Generator) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    g = np.array([sample_gamma(a, 1, rng)[0] for a in alpha])
    return g / g.sum()


def sample_wishart(df: int, scale, rng: np.random.Generator) -> np.ndarray:
    """Wishart(df, scale) via the Bartlett decomposition."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    p = scale.shape[0]
    if df < p:
        raise ValueError(f"degrees of freedom {df} < dimension {p}")
    L = np.linalg.cholesky(scale)
    A = np.zeros((p, p))
    for i in range(p):
        A[i, i] = np.sqrt(2.0 * sample_gamma((df - i) / 2.0, 1, rng)[0])
        A[i, :i] = rng.standard_normal(i)
    LA = L @ A
    W = LA @ LA.T
    return 0.5 * (W + W.T)


def sample_in_ball(center, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the open Euclidean ball around ``center``."""
    center = np.asarray(center, dtype=float)
    dim = center.size
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return center + radius * rng.random() ** (1.0 / dim) * direction


def psd_factor(cov, tol=1e-10) -> np.ndarray:
    """Lower factor ``L`` with ``L L' = cov``; falls back to eigh for singular PSD."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    if not np.allclose(cov, cov.T, atol=tol):
        raise np.linalg.LinAlgError("covariance is not symmetric")
    w, V = np.linalg.eigh(cov)
    if w.min() < -tol * max(1.0, abs(w).max()):
        raise np.linalg.LinAlgError(f"covariance is not PSD (min eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))


# -- mixture ----------------------------------------------------------------


@dataclass(frozen=True)
class MixtureParams:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        S = np.asarray(self.covs, dtype=float)
        if S.ndim == 2:
            S = S[None]
        if not (w.size == mu.shape[0] == S.shape[0] and S.shape[1:] == (mu.shape[1],) * 2):
            raise ValueError("inconsistent mixture shapes")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must lie on the simplex")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", S)

    @property
    def dim(self):
        return self.means.shape[1]

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["means"], d["covs"])


def sample_mixture_params(J: int, seed) -> MixtureParams:
    if J < 1:
        raise ValueError("J must be >= 1")
    rng = _as_rng(seed, "params")
    weights = sample_dirichlet(np.ones(N_COMPONENTS), rng)
    means = np.sqrt(J) * rng.standard_normal((N_COMPONENTS, J))
    covs = np.stack([sample_wishart(J, np.eye(J), rng) for _ in range(N_COMPONENTS)])
    return MixtureParams(weights, means, covs)


def sample_mixture(params: MixtureParams, n: int, rng: np.random.Generator) -> np.ndarray:
    factors = [psd_factor(S) for S in params.covs]
    comp = rng.choice(params.weights.size, size=n, p=params.weights)
    g = rng.standard_normal((n, params.dim))
    out = np.empty((n, params.dim))
    for k, L in enumerate(factors):
        sel = comp == k
        out[sel] = params.means[k] + g[sel] @ L.T
    return out


# -- dataset ----------------------------------------------------------------


def split_sizes(n: int) -> dict:
    if n == sum(PAPER_SPLIT.values()):
        return dict(PAPER_SPLIT)
    total = sum(PAPER_SPLIT.values())
    sizes = {k: int(np.floor(n * PAPER_SPLIT[k] / total)) for k in SPLIT_ORDER[:-1]}
    sizes["test"] = n - sum(sizes.values())
    return sizes


@dataclass
class DemandDataset:
    """Demand matrix plus contiguous ``[start, stop)`` row ranges per split."""

    data: np.ndarray
    splits: dict
    seed: object = None
    params: MixtureParams = None

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        self.splits = {k: (int(a), int(b)) for k, (a, b) in self.splits.items()}
        covered = sorted(self.splits.values())
        pos = 0
        for a, b in covered:
            if a != pos or b < a:
                raise ValueError(f"splits must tile the rows contiguously: {self.splits}")
            pos = b
        if pos != self.data.shape[0]:
            raise ValueError("splits do not cover all rows")

    def __getitem__(self, name) -> np.ndarray:
        a, b = self.splits[name]
        return self.data[a:b]

    def indices(self, name) -> np.ndarray:
        a, b = self.splits[name]
        return np.arange(a, b)

    @property
    def train(self):
        return self["vae_train"]

    @property
    def val(self):
        return self["vae_val"]

    @property
    def calibration(self):
        return self["calibration"]

    @property
    def test(self):
        return self["test"]

    def save(self, directory, instance: Instance = None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "dataset.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([str(j) for j in range(self.data.shape[1])])
            for row in self.data:
                w.writerow([repr(float(v)) for v in row])
        sidecar = {
            "seed": self.seed,
            "n_rows": int(self.data.shape[0]),
            "splits": {k: list(v) for k, v in self.splits.items()},
            "mixture": None if self.params is None else self.params.to_dict(),
        }
        with open(directory / "splits.json", "w") as f:
            json.dump(sidecar, f, indent=2)
        if instance is not None:
            instance.to_json(directory / "instance.json")

    @classmethod
    def load(cls, directory) -> "DemandDataset":
        directory = Path(directory)
        with open(directory / "dataset.csv", newline="") as f:
            rows = list(csv.reader(f))
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        with open(directory / "splits.json") as f:
            side = json.load(f)
        params = MixtureParams.from_dict(side["mixture"]) if side.get("mixture") else None
        return cls(data, {k: tuple(v) for k, v in side["splits"].items()}, side.get("seed"), params)


def sample_demands(params: MixtureParams, N: int, seed, sizes: dict = None) -> DemandDataset:
    """Draw ``N`` i.i.d. mixture rows and assign splits in order train/val/calib/test."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = _as_rng(seed, "demands")
    data = sample_mixture(params, N, rng)
    sizes = split_sizes(N) if sizes is None else sizes
    if sum(sizes.values()) != N:
        raise ValueError("split sizes must sum to N")
    splits, pos = {}, 0
    for name in SPLIT_ORDER:
        splits[name] = (pos, pos + sizes.get(name, 0))
        pos += sizes.get(name, 0)
    return DemandDataset(data, splits, seed if isinstance(seed, int) else None, params)


def sample_instance_params(I: int, J: int, seed) -> Instance:
    if I < 1 or J < 1:
        raise ValueError("I and J must be >= 1")
    rng = _as_rng(seed, "instance")
    dbar = rng.uniform(2.0, 22.0, size=I)
    d1 = np.stack([sample_in_ball(np.full(J, dbar[i]), SHIP_BALL_RADIUS, rng) for i in range(I)])
    p = rng.uniform(8.0, 18.0, size=I)
    c = rng.uniform(2.0, 4.0, size=I)
    return Instance(c=c, d1=d1, d2=UNMET_COST, p=p)


def generate(I: int, J: int, N: int, seed: int):
    """Instance and dataset for one trial, each from its own substream."""
    params = sample_mixture_params(J, seed)
    data = sample_demands(params, N, seed)
    inst = sample_instance_params(I, J, seed)
    return inst, data
