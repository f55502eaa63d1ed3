"""Least-squares fits of stretched-exponential envelopes ``C exp(-eps rho**r)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvelopeFit:
    C: float
    eps: float
    r: float
    residual: float
    at_upper_bound: bool


def exponent_grid(lo: float, hi: float, step: float = 0.01) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def fit_stretched_exponential(rho, a, exponents) -> EnvelopeFit:
    """Grid search over ``r`` with linear least squares of ``log a`` on ``(1, -rho**r)``.

    Returns the triple minimizing the RMS log residual.
    """
    rho = np.asarray(rho, dtype=float)
    la = np.log(np.asarray(a, dtype=float))
    if rho.size < 2:
        raise ValueError("need at least two points")
    best = None
    for r in exponents:
        A = np.column_stack([np.ones_like(rho), -rho ** r])
        coef, *_ = np.linalg.lstsq(A, la, rcond=None)
        res = float(np.sqrt(np.mean((A @ coef - la) ** 2)))
        if best is None or res < best[0] - 1e-15:
            best = (res, float(r), coef)
    res, r, coef = best
    return EnvelopeFit(C=float(np.exp(coef[0])), eps=float(coef[1]), r=r, residual=res,
                       at_upper_bound=bool(np.isclose(r, exponents[-1])))
