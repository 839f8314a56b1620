"""Data-driven box, budget and ellipsoidal uncertainty sets and radius calibration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

KINDS = ("box", "budget", "ellipsoid")
MAX_COND = 1e12


class SingularCovarianceError(ValueError):
    def __init__(self, cond):
        self.cond = cond
        super().__init__(f"sample covariance is singular (condition number {cond:.3e})")


class InsufficientCalibrationError(ValueError):
    def __init__(self, n_cal, required):
        self.n_cal = n_cal
        self.required = required
        super().__init__(
            f"insufficient calibration samples: got {n_cal}, need at least {required}"
        )


@dataclass(frozen=True)
class CalibrationResult:
    gamma: float
    ell: int
    n_cal: int
    alpha: float
    delta: float

    def to_dict(self):
        return asdict(self)


def min_calibration_size(alpha: float, delta: float) -> int:
    """Smallest ``N1`` with ``N1 >= log(delta) / log(alpha)``."""
    _check_levels(alpha, delta)
    return math.ceil(math.log(delta) / math.log(alpha) - 1e-12)


def _check_levels(alpha, delta):
    if not (0 < alpha < 1 and 0 < delta < 1):
        raise ValueError(f"alpha and delta must lie in (0, 1); got {alpha}, {delta}")


def _log_binom(n, k):
    if n <= 10_000:
        return math.log(math.comb(n, k))
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def order_statistic_index(n_cal: int, alpha: float, delta: float) -> int:
    """Smallest ``j`` such that ``P(Bin(n_cal, alpha) <= j - 1) >= 1 - delta``."""
    _check_levels(alpha, delta)
    required = min_calibration_size(alpha, delta)
    if n_cal < required:
        raise InsufficientCalibrationError(n_cal, required)
    la, l1a = math.log(alpha), math.log1p(-alpha)
    terms = np.array([_log_binom(n_cal, k) + k * la + (n_cal - k) * l1a for k in range(n_cal)])
    cdf = np.logaddexp.accumulate(terms)
    target = math.log1p(-delta)
    hits = np.flatnonzero(cdf >= target)
    if hits.size == 0:  # only reachable through rounding at the boundary N1
        return n_cal
    return int(hits[0]) + 1


def calibrate_gamma(radii, alpha: float = 0.95, delta: float = 0.05) -> CalibrationResult:
    """Pick the radius as an order statistic of calibration radii (no interpolation)."""
    radii = np.sort(np.asarray(radii, dtype=float).ravel())
    ell = order_statistic_index(radii.size, alpha, delta)
    return CalibrationResult(float(radii[ell - 1]), ell, int(radii.size), alpha, delta)


class ClassicalSet(BaseEstimator):
    """Box, budget or ellipsoidal set fitted to sample statistics.

    Parameters
    ----------
    kind : {"box", "budget", "ellipsoid"}
    gamma : float, optional
        Set size; usually filled in by :meth:`calibrate`. Unused for boxes.
    """

    def __init__(self, kind="budget", gamma=None):
        self.kind = kind
        self.gamma = gamma

    def fit(self, X, y=None):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        X = check_array(X, ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        self.cov_ = np.atleast_2d(np.cov(X, rowvar=False))
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        if self.kind == "ellipsoid":
            self._factor()
        self.gamma_ = None if self.gamma is None else float(self.gamma)
        return self

    def _factor(self):
        cond = np.linalg.cond(self.cov_)
        if not np.isfinite(cond) or cond > MAX_COND:
            raise SingularCovarianceError(cond)
        try:
            return cho_factor(self.cov_, lower=True)
        except np.linalg.LinAlgError:
            raise SingularCovarianceError(cond) from None

    def radius(self, X):
        """Set-induced radius of each row; membership is ``radius <= gamma``.

        Boxes return the largest width-normalized excess over the bounds, which is
        ``<= 0`` exactly on the box.
        """
        check_is_fitted(self, "mean_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        dev = X - self.mean_
        if self.kind == "budget":
            var = np.diag(self.cov_)
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(dev == 0, 0.0, np.abs(dev) / var)
            return terms.sum(axis=1)
        if self.kind == "ellipsoid":
            sol = cho_solve(self._factor(), dev.T)
            return np.einsum("ij,ji->i", dev, sol)
        width = np.where(self.max_ > self.min_, self.max_ - self.min_, 1.0)
        excess = np.maximum((X - self.max_) / width, (self.min_ - X) / width)
        return excess.max(axis=1)

    def calibrate(self, X, alpha=0.95, delta=0.05):
        if self.kind == "box":
            raise ValueError("box sets have no size parameter to calibrate")
        res = calibrate_gamma(self.radius(X), alpha, delta)
        self.gamma_ = res.gamma
        self.calibration_ = res
        return self

    def contains(self, X, tol=0.0):
        r = self.radius(X)
        if self.kind == "box":
            return r <= tol
        if self.gamma_ is None:
            raise ValueError("set size gamma is not set; call calibrate first")
        return r <= self.gamma_ + tol

    def vertices(self):
        """Extreme points: ``2D`` for a budget set, ``2^D`` corners for a box."""
        check_is_fitted(self, "mean_")
        D = self.n_features_in_
        if self.kind == "budget":
            g = self._require_gamma()
            steps = g * np.diag(self.cov_)
            V = np.repeat(self.mean_[None], 2 * D, axis=0)
            V[np.arange(D), np.arange(D)] += steps
            V[D + np.arange(D), np.arange(D)] -= steps
            return V
        if self.kind == "box":
            bits = (np.arange(2**D)[:, None] >> np.arange(D)) & 1
            return np.where(bits == 1, self.max_, self.min_)
        raise ValueError("ellipsoids have no finite vertex set")

    def support_point(self, g):
        """Maximizer of ``g'xi`` over an ellipsoid: ``mu + sqrt(G) S g / sqrt(g'S g)``."""
        g = np.asarray(g, dtype=float)
        Sg = self.cov_ @ g
        norm = math.sqrt(max(float(g @ Sg), 0.0))
        if norm == 0.0:
            return self.mean_.copy()
        return self.mean_ + math.sqrt(self._require_gamma()) * Sg / norm

    def _require_gamma(self):
        if self.gamma_ is None:
            raise ValueError("set size gamma is not set; call calibrate first")
        return self.gamma_

    def to_dict(self):
        check_is_fitted(self, "mean_")
        d = {
            "kind": self.kind,
            "mean": self.mean_.tolist(),
            "cov": self.cov_.tolist(),
            "min": self.min_.tolist(),
            "max": self.max_.tolist(),
            "gamma": self.gamma_,
        }
        if getattr(self, "calibration_", None) is not None:
            d["calibration"] = self.calibration_.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        s = cls(kind=d["kind"], gamma=d.get("gamma"))
        s.mean_ = np.asarray(d["mean"], dtype=float)
        s.cov_ = np.atleast_2d(np.asarray(d["cov"], dtype=float))
        s.min_ = np.asarray(d["min"], dtype=float)
        s.max_ = np.asarray(d["max"], dtype=float)
        s.n_features_in_ = s.mean_.size
        s.gamma_ = d.get("gamma")
        if d.get("calibration"):
            s.calibration_ = CalibrationResult(**d["calibration"])
        return s


def fit_classical_set(kind, data) -> ClassicalSet:
    return ClassicalSet(kind=kind).fit(data)


def set_radius(uset: ClassicalSet, xi) -> float:
    return float(uset.radius(np.atleast_2d(xi))[0])


def membership(uset: ClassicalSet, xi) -> bool:
    return bool(uset.contains(np.atleast_2d(xi))[0])
