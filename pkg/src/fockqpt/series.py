"""Resummation of the cavity-visit expansion of E(M[0, t)).

Conditioning on the number ``k`` of cavity visits, each visit of total
duration ``x_i`` contributes ``exp((E_res - E_cav) x_i)`` and a factor
``-K_out * pibar``; the visit durations range over the simplex
``x_1 + ... + x_k <= t``.  The simplex integral reduces to the 1-D integral
``int_0^t exp(d s) s^(k-1) / (k-1)! ds`` over the total time ``s``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

from .errors import TruncationNotConverged


def simplex_integral(k: int, delta: float, t: float) -> float:
    """``int_{x_i >= 0, sum x_i <= t} exp(delta * sum x_i) dx_1..dx_k``."""
    if k == 0:
        return 1.0
    if delta == 0.0:
        return math.exp(k * math.log(t) - special.gammaln(k + 1)) if t > 0 else 0.0
    if delta < 0:
        a = -delta
        return float(special.gammainc(k, a * t)) * math.exp(-k * math.log(a))
    lg = special.gammaln(k)

    def integrand(s):
        if s <= 0:
            return 0.0 if k > 1 else math.exp(delta * s)
        return math.exp(delta * s + (k - 1) * math.log(s) - lg)

    val, _ = integrate.quad(integrand, 0.0, t, epsrel=1e-12, epsabs=0.0, limit=200)
    return float(val)


def series_reconstruction(e_res: float, e_cav: float, pibar: float, kout: float, t: float,
                          k_max: int = 200, prefactor: float = 1.0, rtol: float = 1e-12) -> float:
    """Truncated visit series for ``E(M[0, t))`` with ``Q_t(k) = pibar**k``.

    The ``k = 0`` term carries ``Q_t(0) = (1 - 2 pibar) / (1 - pibar)``.
    Raises :class:`TruncationNotConverged` when the last kept term exceeds
    ``rtol`` of the partial sum.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if not 0 <= pibar < 1:
        raise ValueError("pibar must lie in [0, 1)")
    delta = e_res - e_cav
    q0 = (1 - 2 * pibar) / (1 - pibar)
    total = q0
    term = q0
    x = -kout * pibar
    for k in range(1, k_max + 1):
        term = x ** k * simplex_integral(k, delta, t) if x != 0 else 0.0
        total += term
    if abs(term) > rtol * abs(total):
        raise TruncationNotConverged(f"last term {term:.3e} vs partial sum {total:.3e}")
    return prefactor * math.exp(-e_res * t) * total


def series_energy(e_res: float, e_cav: float, pibar: float, kout: float, t_grid,
                  k_max: int = 200) -> float:
    """Energy read off as the least-squares slope of ``-log`` of the series over ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float)
    y = [-math.log(series_reconstruction(e_res, e_cav, pibar, kout, t, k_max)) for t in t_grid]
    return float(np.polyfit(t_grid, y, 1)[0])
