"""Finite Fock spaces, Hamiltonians H = K + V and cavity/reservoir partitions.

States are dense 0-based integer ids.  The kinetic matrix is stored as a list
of undirected links ``(i, j)`` with ``i < j``, each carrying a magnitude
``eta > 0`` and a sign ``lam in {-1, +1}`` so that ``K[i, j] = -lam * eta``.
Spin models encode a configuration as the integer bitmask of its up spins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (
    DiagonalKinetic,
    DisconnectedGraph,
    DuplicateLink,
    EmptyCavity,
    EmptyReservoir,
    IsolatedState,
    ModelError,
)

logger = logging.getLogger(__name__)

#: absolute tolerance used to merge numerically equal potential values
LEVEL_TOL = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Hamiltonian:
    """Real symmetric matrix ``H = K + V`` over ``M`` indexed states.

    Construct validated instances with :func:`build_hamiltonian`.  The bare
    constructor only checks array shapes and link signs; it is used for
    restricted Hamiltonians, which may legitimately be disconnected or
    contain a single state.
    """

    def __init__(self, potential, heads, tails, eta, lam, N: float = 1.0):
        self.potential = _frozen(potential, float)
        self.heads = _frozen(heads, np.int64)
        self.tails = _frozen(tails, np.int64)
        self.eta = _frozen(eta, float)
        self.lam = _frozen(lam, np.int8)
        self.N = float(N)
        M = self.potential.size
        if M < 1:
            raise ModelError("a Hamiltonian needs at least one state")
        n_links = self.heads.size
        if not (self.tails.size == self.eta.size == self.lam.size == n_links):
            raise ModelError("link arrays have inconsistent lengths")
        if n_links:
            if np.any(self.heads >= self.tails):
                raise ModelError("links must be stored with head < tail")
            if self.heads.min() < 0 or self.tails.max() >= M:
                raise ModelError("link endpoint out of range")
            if not np.all(self.eta > 0):
                raise ModelError("link magnitudes must be strictly positive")
            if not np.all(np.abs(self.lam) == 1):
                raise ModelError("link signs must be +1 or -1")

        # directed adjacency in CSR order (both orientations of every link)
        src = np.concatenate([self.heads, self.tails])
        dst = np.concatenate([self.tails, self.heads])
        w = np.concatenate([self.eta, self.eta])
        s = np.concatenate([self.lam, self.lam])
        order = np.lexsort((dst, src))
        self.nbr_src = _frozen(src[order], np.int64)
        self.nbr_idx = _frozen(dst[order], np.int64)
        self.nbr_eta = _frozen(w[order], float)
        self.nbr_lam = _frozen(s[order], np.int8)
        counts = np.bincount(src, minlength=M)
        self.indptr = _frozen(np.concatenate([[0], np.cumsum(counts)]), np.int64)
        self.A = _frozen(counts, np.int64)
        self.R = _frozen(np.bincount(src, weights=w, minlength=M), float)

    @property
    def M(self) -> int:
        return int(self.potential.size)

    @property
    def n_links(self) -> int:
        return int(self.heads.size)

    @property
    def stoquastic(self) -> bool:
        return bool(np.all(self.lam == 1))

    def neighbors(self, n: int):
        """Return ``(ids, eta, lam)`` of the links leaving state ``n``."""
        lo, hi = self.indptr[n], self.indptr[n + 1]
        return self.nbr_idx[lo:hi], self.nbr_eta[lo:hi], self.nbr_lam[lo:hi]

    def links(self):
        """Iterate ``(i, j, K[i, j])`` over stored links, ``i < j``."""
        for i, j, e, l in zip(self.heads, self.tails, self.eta, self.lam):
            yield int(i), int(j), float(-l * e)

    def adjacency(self) -> sp.csr_matrix:
        ones = np.ones(self.nbr_idx.size)
        return sp.csr_matrix((ones, self.nbr_idx, self.indptr), shape=(self.M, self.M))

    def kinetic(self) -> sp.csr_matrix:
        data = -self.nbr_lam.astype(float) * self.nbr_eta
        return sp.csr_matrix((data, self.nbr_idx, self.indptr), shape=(self.M, self.M))

    def matrix(self) -> sp.csr_matrix:
        return (self.kinetic() + sp.diags(self.potential)).tocsr()

    def dense(self) -> np.ndarray:
        return self.matrix().toarray()

    def norm(self) -> float:
        """Cheap upper bound on the spectral norm (max absolute row sum)."""
        return float(np.max(np.abs(self.potential) + self.R))

    @property
    def connected(self) -> bool:
        if self.M == 1:
            return True
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1

    @property
    def periodic(self) -> bool:
        """True when the adjacency graph is bipartite (period-2 jump chain)."""
        if self.n_links == 0:
            return False
        order, pred = breadth_first_order(self.adjacency(), 0, directed=False)
        depth = np.full(self.M, -1, dtype=np.int64)
        depth[0] = 0
        for n in order[1:]:
            depth[n] = depth[pred[n]] + 1
        reached = depth >= 0
        h, t = self.heads, self.tails
        ok = reached[h] & reached[t]
        return bool(np.all((depth[h[ok]] + depth[t[ok]]) % 2 == 1))

    def __repr__(self):
        return f"Hamiltonian(M={self.M}, N={self.N:g}, links={self.n_links})"

    def __getstate__(self):
        return {
            "potential": self.potential, "heads": self.heads, "tails": self.tails,
            "eta": self.eta, "lam": self.lam, "N": self.N,
        }

    def __setstate__(self, state):
        self.__init__(**state)

    def same_as(self, other: "Hamiltonian") -> bool:
        """Exact (bitwise) equality of all defining data."""
        return (
            self.N == other.N
            and np.array_equal(self.potential, other.potential)
            and np.array_equal(self.heads, other.heads)
            and np.array_equal(self.tails, other.tails)
            and np.array_equal(self.eta, other.eta)
            and np.array_equal(self.lam, other.lam)
        )


def build_hamiltonian(M: int, N: float, potential: Sequence[float],
                      links: Iterable[tuple[int, int, float]]) -> Hamiltonian:
    """Build and validate a Hamiltonian from signed kinetic entries.

    Each link ``(i, j, value)`` sets ``K[i, j] = K[j, i] = value``; the sign
    is stored as ``lam = -sign(value)`` and the magnitude as ``eta``.

    Raises
    ------
    DiagonalKinetic, DuplicateLink, IsolatedState, DisconnectedGraph
    """
    M = int(M)
    if M < 2:
        raise ModelError("a Fock space needs M >= 2 states")
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (M,):
        raise ModelError(f"potential must have length M={M}")
    if not np.all(np.isfinite(potential)):
        raise ModelError("potential must be finite")
    heads, tails, vals = [], [], []
    seen = set()
    for i, j, value in links:
        i, j, value = int(i), int(j), float(value)
        if not (0 <= i < M and 0 <= j < M):
            raise ModelError(f"link ({i}, {j}) out of range")
        if i == j:
            raise DiagonalKinetic(f"kinetic entry on the diagonal at state {i}")
        if value == 0 or not np.isfinite(value):
            raise ModelError(f"link ({i}, {j}) must carry a finite nonzero value")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DuplicateLink(f"link {key} given twice")
        seen.add(key)
        heads.append(key[0])
        tails.append(key[1])
        vals.append(value)
    vals = np.asarray(vals, dtype=float)
    order = np.lexsort((np.asarray(tails), np.asarray(heads))) if heads else []
    H = Hamiltonian(
        potential,
        np.asarray(heads, dtype=np.int64)[order],
        np.asarray(tails, dtype=np.int64)[order],
        np.abs(vals)[order],
        -np.sign(vals)[order],
        N,
    )
    validate(H)
    return H


def validate(H: Hamiltonian) -> None:
    """Check the ergodicity hypotheses: no isolated state, one component."""
    isolated = np.flatnonzero(H.A == 0)
    if isolated.size:
        raise IsolatedState(f"states without links: {isolated[:10].tolist()}")
    if not H.connected:
        raise DisconnectedGraph("kinetic adjacency graph is not connected")
    if H.periodic:
        logger.debug("adjacency is bipartite; the jump chain has period 2")


def transition_kernel(H: Hamiltonian) -> sp.csr_matrix:
    """Row-stochastic jump matrix ``P[n, n'] = |K[n, n']| / R(n)``."""
    if np.any(H.R == 0):
        raise IsolatedState("transition kernel undefined for isolated states")
    data = H.nbr_eta / H.R[H.nbr_src]
    return sp.csr_matrix((data, H.nbr_idx, H.indptr), shape=(H.M, H.M))


def invariant_measure(H: Hamiltonian, check: bool = True) -> np.ndarray:
    """Stationary law of the jump chain, ``pi(n) = R(n) / sum R``.

    With ``check`` the stationarity residual and the degree bound
    ``pi(n) <= R(n) / (M min R)`` are verified.
    """
    pi = H.R / H.R.sum()
    if check:
        P = transition_kernel(H)
        res = np.max(np.abs(P.T @ pi - pi))
        if res > 1e-12:
            raise ArithmeticError(f"stationarity residual {res:.3e} exceeds 1e-12")
        bound = H.R / (H.R.min() * H.M)
        if np.any(pi > bound * (1 + 1e-12)):
            raise ArithmeticError("invariant measure violates the degree bound")
    return pi


@dataclass(frozen=True)
class LevelDensity:
    levels: np.ndarray
    weights: np.ndarray
    counts: np.ndarray

    @property
    def m(self) -> int:
        return int(self.levels.size)


def _level_labels(V: np.ndarray, tol: float = LEVEL_TOL):
    order = np.argsort(V, kind="stable")
    sv = V[order]
    labels_sorted = np.empty(V.size, dtype=np.int64)
    starts = [0]
    lab = 0
    start_val = sv[0]
    for k in range(V.size):
        if sv[k] - start_val > tol:
            lab += 1
            start_val = sv[k]
            starts.append(k)
        labels_sorted[k] = lab
    labels = np.empty_like(labels_sorted)
    labels[order] = labels_sorted
    levels = sv[np.asarray(starts)]
    return labels, levels


def level_density(H: Hamiltonian, tol: float = LEVEL_TOL) -> LevelDensity:
    """Distinct potential levels (ascending) with their state fractions.

    Values closer than ``tol`` to the smallest value of their group are merged.
    """
    labels, levels = _level_labels(H.potential, tol)
    counts = np.bincount(labels, minlength=levels.size)
    return LevelDensity(_frozen(levels, float), _frozen(counts / H.M, float),
                        _frozen(counts, np.int64))


@dataclass(frozen=True, eq=False)
class Partition:
    """Cavity/reservoir split of the state space with boundary bookkeeping.

    ``a_in``/``r_in`` count links (unweighted/weighted) from a state to its own
    side of the split, ``a_out``/``r_out`` to the other side.  ``r_out_plus``
    and ``r_out_minus`` split ``r_out`` by link sign.
    """

    M: int
    cavity: np.ndarray
    reservoir: np.ndarray
    cavity_boundary: np.ndarray
    reservoir_boundary: np.ndarray
    in_cavity: np.ndarray
    a_in: np.ndarray
    a_out: np.ndarray
    r_in: np.ndarray
    r_out: np.ndarray
    r_out_plus: np.ndarray
    r_out_minus: np.ndarray
    pbar: float
    pibar: float
    cavity_connected: bool

    @property
    def cavity_out_rate(self) -> float:
        return float(self.r_out[self.cavity].sum())


def make_partition(H: Hamiltonian, cavity_ids: Iterable[int]) -> Partition:
    """Split the state space into ``cavity_ids`` and its complement."""
    cav = np.unique(np.asarray(list(cavity_ids), dtype=np.int64))
    if cav.size == 0:
        raise EmptyCavity("cavity must contain at least one state")
    if cav.min() < 0 or cav.max() >= H.M:
        raise ModelError("cavity id out of range")
    if cav.size == H.M:
        raise EmptyReservoir("cavity covers the whole Fock space")
    mask = np.zeros(H.M, dtype=bool)
    mask[cav] = True
    same = mask[H.nbr_src] == mask[H.nbr_idx]
    src = H.nbr_src
    a_in = np.bincount(src, weights=same.astype(float), minlength=H.M).astype(np.int64)
    a_out = H.A - a_in
    r_in = np.bincount(src, weights=np.where(same, H.nbr_eta, 0.0), minlength=H.M)
    cross = ~same
    r_out_plus = np.bincount(src, weights=np.where(cross & (H.nbr_lam > 0), H.nbr_eta, 0.0),
                             minlength=H.M)
    r_out_minus = np.bincount(src, weights=np.where(cross & (H.nbr_lam < 0), H.nbr_eta, 0.0),
                              minlength=H.M)
    r_out = H.R - r_in
    boundary = a_out > 0
    if cav.size == 1:
        connected = True
    else:
        sub = H.adjacency()[cav][:, cav]
        connected = connected_components(sub, directed=False)[0] == 1
    return Partition(
        M=H.M,
        cavity=_frozen(cav, np.int64),
        reservoir=_frozen(np.flatnonzero(~mask), np.int64),
        cavity_boundary=_frozen(np.flatnonzero(boundary & mask), np.int64),
        reservoir_boundary=_frozen(np.flatnonzero(boundary & ~mask), np.int64),
        in_cavity=_frozen(mask, bool),
        a_in=_frozen(a_in, np.int64),
        a_out=_frozen(a_out, np.int64),
        r_in=_frozen(r_in, float),
        r_out=_frozen(r_out, float),
        r_out_plus=_frozen(r_out_plus, float),
        r_out_minus=_frozen(r_out_minus, float),
        pbar=cav.size / H.M,
        pibar=float(H.R[cav].sum() / H.R.sum()),
        cavity_connected=bool(connected),
    )


def cavity_from_level(H: Hamiltonian, level: int, tol: float = LEVEL_TOL) -> Partition:
    """Cavity made of all states sitting on potential level ``level`` (1-based)."""
    labels, levels = _level_labels(H.potential, tol)
    if not 1 <= level <= levels.size:
        raise ModelError(f"level must be in [1, {levels.size}]")
    return make_partition(H, np.flatnonzero(labels == level - 1))


def restrict(H: Hamiltonian, ids: Iterable[int], allow_isolated: bool = False) -> Hamiltonian:
    """Restriction of ``H`` to the states ``ids`` (relabelled 0..len-1 in sorted order).

    Only links internal to ``ids`` survive.  A state left without links raises
    :class:`IsolatedState` unless ``allow_isolated``; a lone state then carries
    the energy ``V(n)``.
    """
    ids = np.unique(np.asarray(list(ids), dtype=np.int64))
    if ids.size == 0:
        raise EmptyCavity("cannot restrict to an empty set")
    pos = np.full(H.M, -1, dtype=np.int64)
    pos[ids] = np.arange(ids.size)
    keep = (pos[H.heads] >= 0) & (pos[H.tails] >= 0)
    R = Hamiltonian(H.potential[ids], pos[H.heads[keep]], pos[H.tails[keep]],
                    H.eta[keep], H.lam[keep], H.N)
    if not allow_isolated and np.any(R.A == 0):
        lone = ids[R.A == 0]
        raise IsolatedState(f"states isolated by the restriction: {lone[:10].tolist()}")
    return R


def star_hamiltonian(H: Hamiltonian, partition: Partition, potential: str = "R") -> Hamiltonian:
    """Sign-free cavity Hamiltonian governing the first-exit-time decay.

    Off-diagonal entries are ``-eta`` on every internal cavity link; the
    diagonal is the full weighted degree ``R(n)`` (``potential="R"``) or the
    internal one ``R_in(n)`` (``potential="R_in"``), the latter being a graph
    Laplacian whose ground state is uniform with energy zero.
    """
    cav = partition.cavity
    sub = restrict(H, cav, allow_isolated=True)
    if potential == "R":
        diag = H.R[cav]
    elif potential == "R_in":
        diag = partition.r_in[cav]
    else:
        raise ValueError("potential must be 'R' or 'R_in'")
    return Hamiltonian(diag, sub.heads, sub.tails, sub.eta, np.ones_like(sub.lam), H.N)
