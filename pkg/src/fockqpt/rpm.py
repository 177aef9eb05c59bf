"""Random Potential Model: self-consistent ground energy and dilute-limit phases.

All quantities are densities (divided by ``N``).  For levels ``v_l`` with
weights ``p_l`` and free kinetic ground density ``e0 < 0`` the ground energy
density ``e`` is the root below ``v_1`` of

    sum_l p_l / (e - v_l) = 1 / e0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .spectral import Phase, classify


@dataclass(frozen=True)
class RpmSpec:
    levels: np.ndarray
    weights: np.ndarray
    e0free: float

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if levels.ndim != 1 or levels.shape != weights.shape or levels.size == 0:
            raise ValueError("levels and weights must be matching non-empty vectors")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("levels must be strictly ascending")
        if np.any(weights <= 0) or abs(weights.sum() - 1) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if not self.e0free < 0:
            raise ValueError("e0free must be negative")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "e0free", float(self.e0free))

    def reservoir(self) -> "RpmSpec":
        """The spec with level 1 removed and the remaining weights renormalized."""
        if self.levels.size < 2:
            raise ValueError("need at least two levels")
        w = self.weights[1:]
        return RpmSpec(self.levels[1:], w / w.sum(), self.e0free)


def e1f_residual(spec: RpmSpec, e: float) -> float:
    """Relative residual of the self-consistency equation at ``e``."""
    terms = spec.weights / (e - spec.levels)
    return abs(terms.sum() - 1 / spec.e0free) / max(np.abs(terms).sum(), abs(1 / spec.e0free))


def solve_e1f(spec: RpmSpec) -> float:
    """Unique root of the self-consistency equation on ``(-inf, v_1)``."""
    v1 = spec.levels[0]
    gaps = spec.levels - v1
    target = 1 / spec.e0free

    # work in x = e - v1 to keep precision near the pole
    def f(x):
        return float(np.sum(spec.weights / (x - gaps))) - target

    right = -1e-14 * max(1.0, abs(v1))
    if f(right) > 0:
        # root closer to the pole than floating point resolves
        return v1 + right
    left = -abs(spec.e0free) - 1.0
    while f(left) < 0:
        left *= 2
    x = brentq(f, left, right, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(v1 + x)


def two_level_closed_form(v1: float, v2: float, p1: float, e0free: float) -> float:
    """Two-level solution from the quadratic ``x^2 - (d + e0) x + p1 e0 d = 0``, ``x = e - v1``.

    Returns the non-positive root; the other one lies above ``v1``.
    """
    if not v1 < v2:
        raise ValueError("need v1 < v2")
    if not 0 < p1 < 1:
        raise ValueError("p1 must lie in (0, 1)")
    if not e0free < 0:
        raise ValueError("e0free must be negative")
    d = v2 - v1
    b = d + e0free
    c = p1 * e0free * d
    root = math.sqrt(b * b - 4 * c)
    # stable pair: q has the sign of b, roots are q/1 and c/q
    q = 0.5 * (b + math.copysign(root, b)) if b != 0 else 0.5 * root
    if b != 0:
        r1, r2 = q, c / q
    else:
        r1, r2 = q, -q
    return v1 + min(r1, r2)


def thermo_limit(v1: float, v2: float, e0free: float) -> float:
    """Two-level energy density in the limit p1 -> 0."""
    b = v2 - v1 + e0free
    return v1 + 0.5 * (b - abs(b))


def critical_condition(spec: RpmSpec, tol: float = 1e-9, renormalize: bool = True):
    """``(W, is_critical)`` with ``W = sum_{l>=2} p_l / (v_1 - v_l)``.

    With ``renormalize`` the weights of levels ``l >= 2`` are rescaled to sum
    to one (the reservoir in the dilute limit).
    """
    if spec.levels.size < 2:
        raise ValueError("need at least two levels")
    w = spec.weights[1:]
    if renormalize:
        w = w / w.sum()
    W = float(np.sum(w / (spec.levels[0] - spec.levels[1:])))
    return W, abs(W - 1 / spec.e0free) <= tol


@dataclass(frozen=True)
class DilutePhase:
    phase: Phase
    e_tilde: float
    energy: float


def predict_phase_dilute(spec: RpmSpec, tol: float = 1e-9) -> DilutePhase:
    """Phase in the limit ``p_1 -> 0`` from the reservoir-only self-consistent energy."""
    e_tilde = solve_e1f(spec.reservoir())
    e, phase = classify(e_tilde, float(spec.levels[0]), tol)
    return DilutePhase(phase, e_tilde, e)


def critical_gamma_hypercube(spec_levels, spec_weights) -> float:
    """Transverse field at which the dilute reservoir energy meets ``v_1``.

    On a hypercube the free ground density is ``-Gamma``, so the critical
    condition ``W = 1 / e0`` gives ``Gamma_c = -1 / W``.
    """
    spec = RpmSpec(spec_levels, spec_weights, -1.0)
    W, _ = critical_condition(spec)
    return -1.0 / W
