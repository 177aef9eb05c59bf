"""Exact linear-algebra oracle: eigenpairs, propagation and cavity couplings."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import NoConvergence
from .fock import Hamiltonian, Partition, restrict, star_hamiltonian

#: above this dimension the iterative solvers are used
DENSE_LIMIT = 4096  # largest M accepted by the dense path
AUTO_DENSE_LIMIT = 1024  # "auto" switches to the sparse solver above this


class DegenerateGroundState(UserWarning):
    pass


@dataclass(frozen=True)
class SpectralResult:
    energy: float
    gap_energy: float
    vector: np.ndarray
    residual: float

    @property
    def gap(self) -> float:
        return self.gap_energy - self.energy


def _sign_normalize(v):
    nz = np.flatnonzero(np.abs(v) > 1e-14 * np.max(np.abs(v)))
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def _start_vector(M):
    # all-ones plus a fixed perturbation so no symmetry sector is missed
    rng = np.random.default_rng(0x5EED)
    v = np.ones(M) + 0.1 * rng.standard_normal(M)
    return v / np.linalg.norm(v)


def ground_state(H: Hamiltonian, tol: float | None = None, max_iter: int | None = None,
                 method: str = "auto") -> SpectralResult:
    """Lowest eigenpair and first excited energy of ``H``.

    ``method`` is ``"dense"`` (at most :data:`DENSE_LIMIT` states),
    ``"sparse"`` or ``"auto"`` (dense up to :data:`AUTO_DENSE_LIMIT` states).
    ``tol`` bounds the residual ``||H v - E v||``; the default is ``1e-10 * ||H||``.
    """
    M = H.M
    scale = max(H.norm(), 1.0)
    if tol is None:
        tol = 1e-10 * scale
    if M == 1:
        return SpectralResult(float(H.potential[0]), float("inf"), np.ones(1), 0.0)
    if method == "auto":
        method = "dense" if M <= AUTO_DENSE_LIMIT else "sparse"
    if method == "dense":
        if M > DENSE_LIMIT:
            raise ValueError(f"dense path limited to {DENSE_LIMIT} states")
        w, U = np.linalg.eigh(H.dense())
        E, E1, v = float(w[0]), float(w[1]), U[:, 0].copy()
    elif method == "sparse":
        A = H.matrix()
        try:
            w, U = spla.eigsh(A, k=2, which="SA", v0=_start_vector(M), tol=0,
                              maxiter=max_iter or 20 * M)
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(f"eigsh did not converge: {exc}") from exc
        order = np.argsort(w)
        E, E1, v = float(w[order[0]]), float(w[order[1]]), U[:, order[0]].copy()
    else:
        raise ValueError(f"unknown method {method!r}")
    v /= np.linalg.norm(v)
    v = _sign_normalize(v)
    residual = float(np.linalg.norm(H.matrix() @ v - E * v))
    if residual > tol:
        raise NoConvergence(f"residual {residual:.3e} above tolerance {tol:.3e}", residual)
    if E1 - E <= 1e-10 * scale:
        warnings.warn(f"ground state degenerate to {E1 - E:.2e}", DegenerateGroundState,
                      stacklevel=2)
    return SpectralResult(E, E1, v, residual)


def _lanczos_expmv(A, v, t, tol, m_max=60):
    """exp(-t A) v for symmetric sparse A by restarted Lanczos time stepping."""
    out = v.astype(float).copy()
    remaining = float(t)
    step = remaining
    while remaining > 0:
        step = min(step, remaining)
        beta0 = np.linalg.norm(out)
        if beta0 == 0:
            return out
        Q = np.zeros((out.size, m_max + 1))
        alpha = np.zeros(m_max)
        beta = np.zeros(m_max)
        Q[:, 0] = out / beta0
        m_used = m_max
        for j in range(m_max):
            w = A @ Q[:, j]
            alpha[j] = Q[:, j] @ w
            w -= alpha[j] * Q[:, j]
            if j > 0:
                w -= beta[j - 1] * Q[:, j - 1]
            w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
            beta[j] = np.linalg.norm(w)
            if beta[j] < 1e-14 * beta0:
                m_used = j + 1
                break
            Q[:, j + 1] = w / beta[j]
        T = np.diag(alpha[:m_used]) + np.diag(beta[:m_used - 1], 1) + np.diag(beta[:m_used - 1], -1)
        while True:
            c = sla.expm(-step * T)[:, 0]
            # a-posteriori error: weight on the last Krylov vector times the lost coupling
            err = abs(beta[m_used - 1] * c[-1]) if m_used == m_max else 0.0
            if err <= tol * np.linalg.norm(c) or step < 1e-12 * max(t, 1.0):
                break
            step /= 2
        out = beta0 * (Q[:, :m_used] @ c)
        remaining -= step
        if remaining <= 0:
            break
        step *= 1.5
    return out


def propagator_apply(H: Hamiltonian, v0, t: float, method: str = "auto",
                     tol: float = 1e-12) -> np.ndarray:
    """Return ``exp(-H t) v0``.

    Small systems use dense scaling-and-squaring, larger ones Lanczos-Krylov
    time stepping.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    v0 = np.asarray(v0, dtype=float)
    if t == 0:
        return v0.copy()
    if method == "auto":
        method = "dense" if H.M <= AUTO_DENSE_LIMIT else "krylov"
    if method == "dense":
        return sla.expm(-t * H.dense()) @ v0
    if method == "krylov":
        out = _lanczos_expmv(H.matrix(), v0, t, tol)
        if not np.all(np.isfinite(out)):
            raise NoConvergence("Krylov propagation produced non-finite values")
        return out
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class PartitionEnergies:
    reservoir: SpectralResult
    cavity: SpectralResult

    @property
    def e_tilde(self) -> float:
        return self.reservoir.energy

    @property
    def e_bar(self) -> float:
        return self.cavity.energy

    @property
    def e_tilde_1(self) -> float:
        return self.reservoir.gap_energy

    @property
    def e_bar_1(self) -> float:
        return self.cavity.gap_energy


def partition_energies(H: Hamiltonian, partition: Partition, method: str = "auto") -> PartitionEnergies:
    """Ground and first excited energies of the reservoir and cavity restrictions."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateGroundState)
        res = ground_state(restrict(H, partition.reservoir, allow_isolated=True), method=method)
        cav = ground_state(restrict(H, partition.cavity, allow_isolated=True), method=method)
    return PartitionEnergies(res, cav)


class Phase(str, enum.Enum):
    NORMAL = "normal"
    FROZEN = "frozen"
    CRITICAL = "critical"


def classify(e_res: float, e_cav: float, tol: float = 0.0):
    """``(min(e_res, e_cav), phase)`` from reservoir and cavity energy densities."""
    if abs(e_res - e_cav) <= tol:
        return min(e_res, e_cav), Phase.CRITICAL
    if e_res < e_cav:
        return e_res, Phase.NORMAL
    return e_cav, Phase.FROZEN


def theorem_prediction(e_tilde: float, e_bar: float, N: float, tol: float = 0.0):
    """Predicted energy density and phase from the two restricted ground energies.

    Energies are extensive; they are divided by ``N`` before comparison and
    ``tol`` applies to the densities.
    """
    if not (np.isfinite(e_tilde) and np.isfinite(e_bar)):
        raise ValueError("energies must be finite")
    return classify(e_tilde / N, e_bar / N, tol)


@dataclass(frozen=True)
class CavityCouplingReport:
    overlap_reservoir: dict
    overlap_cavity: dict
    kout_simple: float
    kout_boundary: float
    cavity_average: float
    reservoir_average: float


def _overlaps(vec):
    return vec.sum() * vec


def coupling_report(H: Hamiltonian, partition: Partition,
                    energies: PartitionEnergies | None = None) -> CavityCouplingReport:
    """Boundary overlaps of the restricted ground states and two K_out estimates.

    ``kout_simple`` is the cavity-boundary average of ``-(R_out^+ - R_out^-)``
    weighted by the squared cavity ground-state amplitude.  ``kout_boundary``
    is the product of the cavity-side average of ``sum_n K(m, n) C~_n`` and
    the reservoir-side average of ``sum_n K(m, n) C-_n / R~_out(m)``, each
    exit state ``m`` weighted by its squared ground-state amplitude on the
    corresponding boundary.
    """
    if energies is None:
        energies = partition_energies(H, partition)
    cav, res = partition.cavity, partition.reservoir
    vt = np.zeros(H.M)
    vt[res] = energies.reservoir.vector
    vb = np.zeros(H.M)
    vb[cav] = energies.cavity.vector
    c_tilde = np.zeros(H.M)
    c_tilde[res] = _overlaps(energies.reservoir.vector)
    c_bar = np.zeros(H.M)
    c_bar[cav] = _overlaps(energies.cavity.vector)

    dcb, drb = partition.cavity_boundary, partition.reservoir_boundary
    wb = vb[dcb] ** 2
    wb_sum = wb.sum()
    net_out = partition.r_out_plus[dcb] - partition.r_out_minus[dcb]
    kout_simple = float(-(wb * net_out).sum() / wb_sum) if wb_sum > 0 else 0.0

    K = H.kinetic()
    cavity_term = K[dcb] @ c_tilde  # sum over reservoir neighbours only (c_tilde is 0 in cavity)
    cavity_avg = float((wb * cavity_term).sum() / wb_sum) if wb_sum > 0 else 0.0
    wt = vt[drb] ** 2
    wt_sum = wt.sum()
    reservoir_term = (K[drb] @ c_bar) / partition.r_out[drb]
    reservoir_avg = float((wt * reservoir_term).sum() / wt_sum) if wt_sum > 0 else 0.0
    kout_boundary = -cavity_avg * reservoir_avg

    return CavityCouplingReport(
        overlap_reservoir={int(n): float(c_tilde[n]) for n in drb},
        overlap_cavity={int(n): float(c_bar[n]) for n in dcb},
        kout_simple=kout_simple,
        kout_boundary=float(kout_boundary),
        cavity_average=cavity_avg,
        reservoir_average=reservoir_avg,
    )


@dataclass(frozen=True)
class ExitRateReport:
    star: SpectralResult
    star_star_energy: float
    norm: float

    @property
    def e_star(self) -> float:
        return self.star.energy


def exit_rate_hamiltonian(H: Hamiltonian, partition: Partition) -> ExitRateReport:
    """Ground state of the star Hamiltonian (exit-time decay rate ``E*``).

    Also checks that replacing the diagonal by ``R_in`` gives ground energy
    zero and that ``E* > 0`` when the cavity has out-links.
    """
    Hs = star_hamiltonian(H, partition, "R")
    Hss = star_hamiltonian(H, partition, "R_in")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateGroundState)
        star = ground_state(Hs)
        ss = ground_state(Hss)
    norm = max(Hs.norm(), 1e-300)
    if abs(ss.energy) > 1e-10 * norm:
        raise ArithmeticError(f"E** = {ss.energy:.3e} is not zero")
    if partition.cavity_out_rate > 0 and not star.energy > 0:
        raise ArithmeticError(f"E* = {star.energy:.3e} is not positive")
    return ExitRateReport(star, ss.energy, norm)


def finite_size_prediction(e_cav: float, pibar: float, kout: float) -> float:
    """Critical-point ground energy ``E_bar + pibar * K_out``."""
    return e_cav + pibar * kout
