"""Model families used in the dilution analysis.

Spin configurations are integer bitmasks: bit ``b`` of state ``n`` is spin
``b``.  Hypercube links join states at Hamming distance one and carry
``K = -Gamma`` (sign +1, magnitude Gamma).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import BadDistribution, ModelError, SizeLimit
from .fock import Hamiltonian, Partition, cavity_from_level, make_partition, validate

logger = logging.getLogger(__name__)

MAX_HYPERCUBE_N = 20
MAX_QREM_N = 16


def _hypercube_links(N: int):
    M = 1 << N
    heads, tails = [], []
    idx = np.arange(M, dtype=np.int64)
    for b in range(N):
        lo = idx[(idx >> b) & 1 == 0]
        heads.append(lo)
        tails.append(lo | (1 << b))
    heads = np.concatenate(heads)
    tails = np.concatenate(tails)
    order = np.lexsort((tails, heads))
    return heads[order], tails[order]


def _hypercube(N: int, gamma: float, potential) -> Hamiltonian:
    heads, tails = _hypercube_links(N)
    n = heads.size
    H = Hamiltonian(potential, heads, tails, np.full(n, float(gamma)), np.ones(n), N)
    validate(H)
    return H


def _check_cube(N, gamma, limit=MAX_HYPERCUBE_N):
    if not 1 <= N <= limit:
        raise SizeLimit(f"N must lie in [1, {limit}]")
    if not gamma > 0:
        raise ModelError("Gamma must be positive")


def hypercube_free(N: int, gamma: float) -> Hamiltonian:
    """N free spins in a transverse field: V = 0, ground energy -N Gamma."""
    _check_cube(N, gamma)
    return _hypercube(N, gamma, np.zeros(1 << N))


def two_level_rpm(N: int, gamma: float, v1: float, v2: float,
                  cavity_states=(0,)) -> tuple[Hamiltonian, Partition]:
    """Hypercube with potential ``N v1`` on ``cavity_states`` and ``N v2`` elsewhere."""
    _check_cube(N, gamma)
    if not v1 < v2:
        raise ModelError("need v1 < v2")
    V = np.full(1 << N, N * float(v2))
    cav = np.asarray(list(cavity_states), dtype=np.int64)
    V[cav] = N * float(v1)
    H = _hypercube(N, gamma, V)
    return H, cavity_from_level(H, 1)


@dataclass(frozen=True)
class Hypercube:
    gamma: float


@dataclass(frozen=True)
class CompleteGraph:
    eta: float
    N: float


@dataclass(frozen=True)
class KineticFrom:
    """Reuse the kinetic part (and ``N``) of an existing Hamiltonian."""

    hamiltonian: Hamiltonian


def random_potential_model(M: int, level_dist, kinetic, seed: int) -> Hamiltonian:
    """i.i.d. potential levels ``N * value`` drawn from ``level_dist`` over a kinetic graph.

    ``level_dist`` is a sequence of ``(value, weight)`` pairs.
    """
    values = np.array([float(v) for v, _ in level_dist])
    weights = np.array([float(w) for _, w in level_dist])
    if values.size == 0 or np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
        raise BadDistribution("weights must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    if isinstance(kinetic, Hypercube):
        N = int(round(math.log2(M)))
        if 1 << N != M:
            raise ModelError("hypercube kinetics need M = 2**N")
        _check_cube(N, kinetic.gamma)
        draw = values[rng.choice(values.size, size=M, p=weights)]
        return _hypercube(N, kinetic.gamma, N * draw)
    if isinstance(kinetic, CompleteGraph):
        if M < 2 or not kinetic.eta > 0:
            raise ModelError("complete graph needs M >= 2 and eta > 0")
        heads, tails = np.triu_indices(M, 1)
        draw = values[rng.choice(values.size, size=M, p=weights)]
        n = heads.size
        H = Hamiltonian(kinetic.N * draw, heads, tails, np.full(n, kinetic.eta), np.ones(n),
                        kinetic.N)
        validate(H)
        return H
    if isinstance(kinetic, KineticFrom):
        K = kinetic.hamiltonian
        if K.M != M:
            raise ModelError("kinetic template has a different dimension")
        draw = values[rng.choice(values.size, size=M, p=weights)]
        H = Hamiltonian(K.N * draw, K.heads, K.tails, K.eta, K.lam, K.N)
        validate(H)
        return H
    raise ModelError(f"unsupported kinetic spec {kinetic!r}")


def qrem(N: int, gamma: float, J: float, seed: int) -> Hamiltonian:
    """Random energy model in a transverse field: V ~ Normal(0, N J^2 / 2) i.i.d."""
    _check_cube(N, gamma, MAX_QREM_N)
    rng = np.random.default_rng(seed)
    V = rng.normal(0.0, math.sqrt(N * J * J / 2.0), size=1 << N)
    return _hypercube(N, gamma, V)


def extensivity_warnings(H: Hamiltonian, bound: float = 10.0) -> list[str]:
    """Messages for potentials or degrees exceeding ``bound * N`` in magnitude."""
    out = []
    if np.max(np.abs(H.potential)) > bound * H.N:
        out.append(f"max |V| / N = {np.max(np.abs(H.potential)) / H.N:.3g} exceeds {bound:g}")
    if np.max(H.R) > bound * H.N:
        out.append(f"max R / N = {np.max(H.R) / H.N:.3g} exceeds {bound:g}")
    return out


FAMILIES = ("two_level_rpm", "random_potential", "qrem", "hypercube_free", "from_file")


@dataclass(frozen=True)
class ModelSpec:
    """A reproducible recipe: family name, parameters and seed."""

    family: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}")

    def build(self) -> tuple[Hamiltonian, Partition | None]:
        p = self.params
        if self.family == "hypercube_free":
            return hypercube_free(int(p["N"]), float(p["gamma"])), None
        if self.family == "two_level_rpm":
            cav = p.get("cavity", [0])
            return two_level_rpm(int(p["N"]), float(p["gamma"]), float(p["v1"]),
                                 float(p["v2"]), cav)
        if self.family == "qrem":
            H = qrem(int(p["N"]), float(p["gamma"]), float(p.get("J", 1.0)), self.seed)
            return H, cavity_from_level(H, 1)
        if self.family == "random_potential":
            levels = [float(x) for x in p["levels"]]
            weights = [float(x) for x in p["weights"]]
            N = int(p["N"])
            H = random_potential_model(1 << N, list(zip(levels, weights)),
                                       Hypercube(float(p["gamma"])), self.seed)
            return H, cavity_from_level(H, 1)
        from .modelio import load_model
        H, cavity, _ = load_model(p["path"])
        for msg in extensivity_warnings(H):
            logger.warning(msg)
        return H, (make_partition(H, cavity) if cavity is not None else None)
