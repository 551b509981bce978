"""Smooth cutoff functions chi1 (decreasing step) and chi2 (even bump).

With ``f(u) = exp(-1/u)`` for ``u > 0`` and ``0`` otherwise,

    chi1(s) = f(-s) / (f(-s) + f(s + 1)),     chi2(s) = chi1(|s| - 2).

On the transition interval ``(-1, 0)`` this is ``chi1 = expit(-phi(s))`` with
``phi(s) = -1/(s+1) - 1/s``, which is how it is evaluated (no overflow).
Derivatives of every order are generated symbolically once, as polynomials in
``S = chi1`` and ``s``, and cached.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp
from scipy.special import expit

__all__ = ["chi1", "chi2", "dchi1", "dchi2"]


@lru_cache(maxsize=None)
def _chi1_derivative(order: int):
    S, s = sp.symbols("S s")
    phi = -1 / (s + 1) - 1 / s
    dS = -S * (1 - S) * sp.diff(phi, s)
    expr = S
    for _ in range(order):
        expr = sp.diff(expr, s) + sp.diff(expr, S) * dS
    return sp.lambdify((S, s), sp.expand(expr), "numpy", cse=True)


def dchi1(s, order: int = 0):
    """``order``-th derivative of chi1, vectorised over ``s``."""
    if order < 0:
        raise ValueError("derivative order must be >= 0")
    arr = np.asarray(s, dtype=float)
    out = np.zeros(arr.shape)
    if order == 0:
        out[arr <= -1.0] = 1.0
    inner = (arr > -1.0) & (arr < 0.0)
    if np.any(inner):
        si = arr[inner]
        with np.errstate(all="ignore"):
            S = expit(1.0 / (si + 1.0) + 1.0 / si)
            val = np.broadcast_to(_chi1_derivative(order)(S, si), si.shape)
            if order > 0:
                # every derivative carries the factor S(1-S); exact zero there
                val = np.where(S * (1.0 - S) > 0.0, val, 0.0)
        out[inner] = val
    if np.ndim(s) == 0:
        return float(out)
    return out


def dchi2(s, order: int = 0):
    arr = np.asarray(s, dtype=float)
    val = dchi1(np.abs(arr) - 2.0, order)
    if order % 2:
        val = np.sign(arr) * val
    if np.ndim(s) == 0:
        return float(val)
    return val


def chi1(s):
    return dchi1(s, 0)


def chi2(s):
    return dchi2(s, 0)
