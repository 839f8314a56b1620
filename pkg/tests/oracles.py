"""Independent reference computations used by the tests.

None of these import the package under test.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import comb

import numpy as np


def lp_vertex_min(c, A, b, senses):
    """Brute-force min of c'x over {A x (senses) b, x >= 0} by basic-solution enumeration.

    Returns ``None`` when no basic feasible solution exists. Assumes the
    feasible region is bounded (callers add a bounding row).
    """
    c = np.asarray(c, float)
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    m, n = A.shape
    # every constraint as a hyperplane, including x_k = 0
    planes = [(A[i], b[i]) for i in range(m)] + [(np.eye(n)[k], 0.0) for k in range(n)]
    best = None
    for idx in itertools.combinations(range(len(planes)), n):
        M = np.array([planes[i][0] for i in idx])
        r = np.array([planes[i][1] for i in idx])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, r)
        if np.any(x < -1e-9):
            continue
        lhs = A @ x
        ok = True
        for i, s in enumerate(senses):
            tol = 1e-9 * (1 + abs(b[i]))
            if s == ">=" and lhs[i] < b[i] - tol or s == "<=" and lhs[i] > b[i] + tol or s == "=" and abs(lhs[i] - b[i]) > tol:
                ok = False
                break
        if ok:
            val = float(c @ x)
            best = val if best is None else min(best, val)
    return best


def recourse_dual_enum(c_ship, d2, p, x, xi):
    """Recourse cost by enumerating integer demand duals.

    Dual: max sum_j xi_j pi_j - sum_i p_i x_i lam_i, pi_j - lam_i <= d1_ij,
    0 <= pi <= d2, lam >= 0. With integer d1, d2 the constraint system is a
    difference system, so vertices are integral and pi ranges over {0..d2}^J.
    """
    d1 = np.asarray(c_ship, float)
    I, J = d1.shape
    cap = np.asarray(p, float) * np.asarray(x, float)
    best = -np.inf
    for pi in itertools.product(range(int(d2) + 1), repeat=J):
        pi = np.array(pi, float)
        lam = np.maximum(0.0, (pi[None, :] - d1).max(axis=1))
        best = max(best, float(xi @ pi - cap @ lam))
    return best


def binomial_order_index(n, alpha, delta):
    """Smallest l with P(Bin(n, alpha) <= l - 1) >= 1 - delta, in exact rationals."""
    a = Fraction(alpha).limit_denominator(10**9)
    target = 1 - Fraction(delta).limit_denominator(10**9)
    cdf = Fraction(0)
    for j in range(1, n + 1):
        k = j - 1
        cdf += comb(n, k) * a**k * (1 - a) ** (n - k)
        if cdf >= target:
            return j
    return None
