"""Exact probabilistic representation of exp(-Ht) by continuous-time walks.

A walker starting at ``n0`` waits an exponential time in each state, jumps
along kinetic links and accumulates the functional

    M[0, t) = exp( int_0^t [R(n_s) - V(n_s)] ds ) * prod_k lam_k        (link rates)

so that ``E(M[0, t)) = sum_n <n| exp(-Ht) |n0>``.  In the uniform mode every
link fires at rate ``rho``; the exponent uses ``rho * A(n)`` and each jump
contributes an extra factor ``eta_k / rho``.  Weights are kept as
(log|w|, sign) pairs because the exponent is extensive.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import streams
from .errors import InvalidMode, NonStoquasticRegion, SignCollapse
from .fock import Hamiltonian, Partition, restrict
from .spectral import propagator_apply


@dataclass(frozen=True)
class SamplingMode:
    """``kind="link"`` (rate eta per link) or ``kind="uniform"`` (rate rho per link)."""

    kind: str = "link"
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in ("link", "uniform"):
            raise InvalidMode(f"unknown sampling mode {self.kind!r}")
        if self.kind == "link" and self.rho is not None:
            raise InvalidMode("link-rate mode takes no rho")
        if self.rho is not None and not self.rho > 0:
            raise InvalidMode("rho must be positive")

    @classmethod
    def parse(cls, text: str) -> "SamplingMode":
        """``"link"``, ``"uniform"`` or ``"uniform:<rho>"``."""
        name, _, rho = text.partition(":")
        if name == "uniform":
            return cls("uniform", float(rho) if rho else None)
        if name == "link" and not rho:
            return cls("link")
        raise InvalidMode(f"cannot parse sampling mode {text!r}")

    def resolve(self, H: Hamiltonian) -> "SamplingMode":
        if self.kind == "uniform" and self.rho is None:
            return SamplingMode("uniform", float(H.eta.max()) if H.n_links else 1.0)
        return self

    def __str__(self):
        return self.kind if self.rho is None else f"{self.kind}:{self.rho:g}"


LINK_RATE = SamplingMode("link")


def _as_mode(mode) -> SamplingMode:
    if isinstance(mode, SamplingMode):
        return mode
    if isinstance(mode, str):
        return SamplingMode.parse(mode)
    raise InvalidMode(f"invalid sampling mode {mode!r}")


@dataclass(frozen=True)
class Trajectory:
    start: int
    t: float
    jump_times: np.ndarray
    states: np.ndarray
    sign: int
    log_weight: float
    mode: SamplingMode = LINK_RATE

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)

    @property
    def living_times(self) -> np.ndarray:
        """Sojourn times; the last entry is the residual interval up to ``t``."""
        edges = np.concatenate([[0.0], self.jump_times, [self.t]])
        return np.diff(edges)

    @property
    def weight(self) -> float:
        return self.sign * math.exp(self.log_weight)


def trajectory_log_weight(H: Hamiltonian, traj: Trajectory) -> tuple[float, int]:
    """Recompute ``(log|M|, sign)`` of a trajectory from its states and times."""
    mode = traj.mode.resolve(H)
    st = traj.states
    if mode.kind == "link":
        drift = H.R[st] - H.potential[st]
    else:
        drift = mode.rho * H.A[st] - H.potential[st]
    logw = float(np.dot(drift, traj.living_times))
    sign = 1
    for a, b in zip(st[:-1], st[1:]):
        ids, eta, lam = H.neighbors(a)
        k = int(np.searchsorted(ids, b))
        if k >= ids.size or ids[k] != b:
            raise ValueError(f"states {a} and {b} are not adjacent")
        sign *= int(lam[k])
        if mode.kind == "uniform":
            logw += math.log(eta[k] / mode.rho)
    return logw, sign


def sample_trajectory(H: Hamiltonian, n0: int, t: float, rng: np.random.Generator,
                      mode=LINK_RATE) -> Trajectory:
    """Draw one trajectory on ``[0, t)`` and its stochastic functional."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not 0 <= n0 < H.M:
        raise ValueError("n0 out of range")
    mode = _as_mode(mode).resolve(H)
    link = mode.kind == "link"
    n, s, logw, sign = int(n0), 0.0, 0.0, 1
    times, states = [], [n]
    base = (H.R[n] if link else mode.rho * H.A[n]) - H.potential[n]
    while True:
        rate = H.R[n] if link else mode.rho * H.A[n]
        drift = rate - H.potential[n] - base
        dt = rng.exponential(1.0 / rate) if rate > 0 else math.inf
        if s + dt >= t:
            logw += drift * (t - s)
            break
        logw += drift * dt
        s += dt
        ids, eta, lam = H.neighbors(n)
        u = rng.random()
        if link:
            k = min(int(np.searchsorted(np.cumsum(eta), u * H.R[n], side="right")), ids.size - 1)
        else:
            k = min(int(u * ids.size), ids.size - 1)
            logw += math.log(eta[k] / mode.rho)
        sign *= int(lam[k])
        n = int(ids[k])
        times.append(s)
        states.append(n)
    logw += base * t
    if not math.isfinite(logw):
        raise OverflowError("trajectory weight is not finite")
    return Trajectory(int(n0), float(t), np.asarray(times), np.asarray(states, dtype=np.int64),
                      sign, float(logw), mode)


# ---------------------------------------------------------------------------
# vectorized sampling kernel


@dataclass
class _Batch:
    logw: np.ndarray
    sign: np.ndarray
    exit_time: np.ndarray
    exit_state: np.ndarray
    jumps: np.ndarray


def _run_batch(H: Hamiltonian, n0: int, t: float, size: int, rng: np.random.Generator,
               mode: SamplingMode, stop: np.ndarray | None = None) -> _Batch:
    """Advance ``size`` independent walkers from ``n0`` up to time ``t``.

    With a boolean ``stop`` mask a walker halts at its first jump into a
    flagged state; its weight is then the functional on ``[0, tau)``.
    """
    link = mode.kind == "link"
    if link:
        rate = H.R
        drift = H.R - H.potential
    else:
        rate = mode.rho * H.A
        drift = mode.rho * H.A - H.potential
        log_ratio = np.log(H.nbr_eta / mode.rho)
    # exponent measured relative to the start state's drift: exact when drift is constant
    base = drift[n0]
    drift = drift - base
    cum = np.concatenate([[0.0], np.cumsum(H.nbr_eta)])
    lam = H.nbr_lam
    state = np.full(size, n0, dtype=np.int64)
    clock = np.zeros(size)
    logw = np.zeros(size)
    sign = np.ones(size, dtype=np.int8)
    jumps = np.zeros(size, dtype=np.int64)
    exit_time = np.full(size, np.nan)
    exit_state = np.full(size, -1, dtype=np.int64)
    active = np.arange(size)
    while active.size:
        st = state[active]
        r = rate[st]
        with np.errstate(divide="ignore"):
            dt = rng.standard_exponential(active.size) / r
        now = clock[active]
        done = now + dt >= t
        fin = active[done]
        logw[fin] += drift[st[done]] * (t - now[done])
        go = ~done
        active, st, dt = active[go], st[go], dt[go]
        if not active.size:
            break
        logw[active] += drift[st] * dt
        clock[active] += dt
        lo, hi = H.indptr[st], H.indptr[st + 1]
        u = rng.random(active.size)
        if link:
            k = np.searchsorted(cum, cum[lo] + u * rate[st], side="right") - 1
        else:
            k = lo + (u * (hi - lo)).astype(np.int64)
        k = np.clip(k, lo, hi - 1)
        target = H.nbr_idx[k]
        if stop is not None:
            leaving = stop[target]
            if np.any(leaving):
                out = active[leaving]
                exit_time[out] = clock[out]
                logw[out] += base * clock[out]
                exit_state[out] = st[leaving]
                keep = ~leaving
                active, k, target = active[keep], k[keep], target[keep]
        sign[active] *= lam[k]
        if not link:
            logw[active] += log_ratio[k]
        state[active] = target
        jumps[active] += 1
    if stop is None:
        logw += base * t
    else:
        logw[np.isnan(exit_time)] += base * t
    return _Batch(logw, sign, exit_time, exit_state, jumps)


# ---------------------------------------------------------------------------
# sufficient statistics in the log domain


def _scaled(x: float, shift: float) -> float:
    """``x * exp(shift)``, saturating to +-inf instead of raising."""
    if x == 0:
        return 0.0
    try:
        return math.copysign(math.exp(math.log(abs(x)) + shift), x)
    except OverflowError:
        return math.copysign(math.inf, x)


@dataclass(frozen=True)
class WeightStats:
    """Mergeable count/mean/scatter of signed weights ``sign * exp(logw)``.

    ``mean``, ``m2`` and ``abs_mean`` are stored relative to ``exp(shift)``.
    """

    count: int = 0
    shift: float = 0.0
    mean: float = 0.0
    m2: float = 0.0
    sign_sum: float = 0.0
    abs_mean: float = 0.0

    @classmethod
    def from_samples(cls, logw, sign) -> "WeightStats":
        logw = np.asarray(logw, dtype=float)
        sign = np.asarray(sign, dtype=float)
        live = sign != 0
        shift = float(np.max(logw[live])) if np.any(live) else 0.0
        x = np.where(live, sign * np.exp(np.where(live, logw, shift) - shift), 0.0)
        mean = float(x.mean())
        m2 = float(np.sum((x - mean) ** 2))
        return cls(int(x.size), shift, mean, m2, float(sign.sum()), float(np.abs(x).mean()))

    def merge(self, other: "WeightStats") -> "WeightStats":
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        shift = max(self.shift, other.shift)
        fa = math.exp(self.shift - shift)
        fb = math.exp(other.shift - shift)
        ma, mb = self.mean * fa, other.mean * fb
        n = self.count + other.count
        delta = mb - ma
        mean = ma + delta * other.count / n
        m2 = self.m2 * fa * fa + other.m2 * fb * fb + delta * delta * self.count * other.count / n
        abs_mean = (self.abs_mean * fa * self.count + other.abs_mean * fb * other.count) / n
        return WeightStats(n, shift, mean, m2, self.sign_sum + other.sign_sum, abs_mean)

    @property
    def value(self) -> float:
        return _scaled(self.mean, self.shift)

    @property
    def log_abs_value(self) -> float:
        return math.log(abs(self.mean)) + self.shift if self.mean != 0 else -math.inf

    @property
    def std_error(self) -> float:
        if self.count < 2:
            return 0.0
        return _scaled(math.sqrt(self.m2 / (self.count - 1) / self.count), self.shift)

    @property
    def mean_sign(self) -> float:
        return self.sign_sum / self.count if self.count else 0.0

    @property
    def effective_samples(self) -> float:
        """Kish effective sample size ``(sum |w|)^2 / sum w^2``."""
        sq = self.m2 + self.count * self.mean * self.mean
        return self.count * self.count * self.abs_mean ** 2 / sq if sq > 0 else 0.0


def _merge_all(parts) -> WeightStats:
    total = WeightStats()
    for p in parts:
        total = total.merge(p)
    return total


def _pool_map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _propagator_block(task) -> WeightStats:
    H, n0, t, size, seed, key, mode = task
    batch = _run_batch(H, n0, t, size, streams.stream(seed, *key), mode)
    return WeightStats.from_samples(batch.logw, batch.sign)


@dataclass(frozen=True)
class EprEstimate:
    t: float
    sample_count: int
    mean: float
    std_error: float
    mean_sign: float
    mode: SamplingMode
    log_abs_mean: float = field(default=float("nan"))
    effective_samples: float = field(default=float("nan"))

    @property
    def log_std_error(self) -> float:
        """Standard error of ``log|mean|`` by the delta method."""
        return self.std_error / abs(self.mean) if self.mean else math.inf


def estimate_propagator_sum(H: Hamiltonian, n0: int, t: float, samples: int, seed: int,
                            workers: int = 1, mode=LINK_RATE, _point: int = 0) -> EprEstimate:
    """Monte Carlo estimate of ``sum_n <n| exp(-Ht) |n0>``.

    Trajectories are grouped in blocks of :data:`streams.BLOCK_SIZE`, each
    with its own counter-based stream, and block statistics are merged in
    block order, so the result is independent of ``workers``.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    mode = _as_mode(mode).resolve(H)
    tasks = [(H, int(n0), float(t), size, seed, (streams.PROPAGATOR, _point, b), mode)
             for b, size in enumerate(streams.blocks(samples))]
    stats = _merge_all(_pool_map(_propagator_block, tasks, workers))
    return EprEstimate(float(t), stats.count, stats.value, stats.std_error, stats.mean_sign,
                       mode, stats.log_abs_value, stats.effective_samples)


class UnconvergedTime(UserWarning):
    """Curvature of log E(M) over the time window: excited states still present."""


class HeavyTailedWeights(UserWarning):
    """A few trajectories carry most of the weight; the error bar is unreliable."""


MIN_EFFECTIVE_SAMPLES = 100


@dataclass(frozen=True)
class GroundEnergyEstimate:
    energy: float
    std_error: float
    points: tuple
    curvature: float
    curvature_error: float


def _weighted_polyfit(x, y, sigma, deg):
    if np.all(sigma > 0):
        w = 1.0 / sigma
    else:
        w = np.ones_like(x)
    X = np.vander(x - x.mean(), deg + 1)
    Xw = X * w[:, None]
    coef, *_ = np.linalg.lstsq(Xw, y * w, rcond=None)
    if np.all(sigma > 0):
        cov = np.linalg.inv(Xw.T @ Xw)
    else:
        cov = np.zeros((deg + 1, deg + 1))
    return coef, cov


def estimate_ground_energy(H: Hamiltonian, n0: int, t_grid, samples: int, seed: int,
                           workers: int = 1, mode=LINK_RATE) -> GroundEnergyEstimate:
    """Ground energy as the slope of ``-log E(M[0, t))`` over ``t_grid``.

    Each grid point uses independent trajectories; the slope is a weighted
    least-squares fit and its error is propagated from the per-point errors.
    A quadratic term significant at 3 sigma triggers :class:`UnconvergedTime`;
    fewer than ``MIN_EFFECTIVE_SAMPLES`` at any point triggers
    :class:`HeavyTailedWeights`.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 3 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be ascending with at least 3 points")
    points = []
    for i, t in enumerate(t_grid):
        est = estimate_propagator_sum(H, n0, t, samples, seed, workers, mode, _point=i)
        if abs(est.mean_sign) < 0.01 or not est.mean > 0:
            raise SignCollapse(f"mean sign {est.mean_sign:.3g} at t={t:g}")
        if est.effective_samples < MIN_EFFECTIVE_SAMPLES:
            warnings.warn(f"only {est.effective_samples:.0f} effective samples at t={t:g}; "
                          "estimate and error bar are dominated by rare paths",
                          HeavyTailedWeights, stacklevel=2)
        points.append(est)
    y = np.array([-p.log_abs_mean for p in points])
    sig = np.array([p.log_std_error for p in points])
    coef, cov = _weighted_polyfit(t_grid, y, sig, 1)
    energy, err = float(coef[0]), float(math.sqrt(cov[0, 0]))
    curv, curv_err = 0.0, 0.0
    if t_grid.size >= 4:
        c2, cov2 = _weighted_polyfit(t_grid, y, sig, 2)
        curv, curv_err = float(c2[0]), float(math.sqrt(cov2[0, 0]))
        if abs(curv) > 3 * curv_err and abs(curv) > 1e-12:
            warnings.warn(f"log E(M) curved over the window ({curv:.3g} +- {curv_err:.2g}); "
                          "increase t", UnconvergedTime, stacklevel=2)
    return GroundEnergyEstimate(energy, err, tuple(points), curv, curv_err)


# ---------------------------------------------------------------------------
# first exit from a cavity


@dataclass(frozen=True)
class ExitSample:
    tau: float | None
    exit_state: int

    @property
    def censored(self) -> bool:
        return self.tau is None


def default_exit_horizon(partition: Partition) -> float:
    """``50 / min R_out`` over the cavity boundary."""
    r = partition.r_out[partition.cavity_boundary]
    if r.size == 0:
        raise ValueError("cavity has no boundary")
    return 50.0 / float(r.min())


def sample_first_exit(H: Hamiltonian, partition: Partition, n0: int, rng: np.random.Generator,
                      t_max: float | None = None) -> ExitSample:
    """Run the link-rate chain from ``n0`` until its first jump out of the cavity."""
    if not partition.in_cavity[n0]:
        raise ValueError("n0 must lie in the cavity")
    t_max = default_exit_horizon(partition) if t_max is None else t_max
    n, s = int(n0), 0.0
    while True:
        s += rng.exponential(1.0 / H.R[n])
        if s > t_max:
            return ExitSample(None, -1)
        ids, eta, _ = H.neighbors(n)
        k = min(int(np.searchsorted(np.cumsum(eta), rng.random() * H.R[n], side="right")),
                ids.size - 1)
        if not partition.in_cavity[ids[k]]:
            return ExitSample(float(s), n)
        n = int(ids[k])


@dataclass(frozen=True)
class ExitTimes:
    tau: np.ndarray
    exit_state: np.ndarray
    t_max: float

    @property
    def censored(self) -> np.ndarray:
        return np.isnan(self.tau)


def _exit_block(task):
    H, stop, n0, t_max, size, seed, key = task
    b = _run_batch(H, n0, t_max, size, streams.stream(seed, *key), LINK_RATE, stop)
    return b.exit_time, b.exit_state


def sample_exit_times(H: Hamiltonian, partition: Partition, n0: int, samples: int, seed: int,
                      t_max: float | None = None, workers: int = 1) -> ExitTimes:
    """Many independent first-exit times; ``nan`` marks walkers censored at ``t_max``."""
    if not partition.in_cavity[n0]:
        raise ValueError("n0 must lie in the cavity")
    t_max = default_exit_horizon(partition) if t_max is None else float(t_max)
    stop = ~partition.in_cavity
    tasks = [(H, stop, int(n0), t_max, size, seed, (streams.FIRST_EXIT, b))
             for b, size in enumerate(streams.blocks(samples))]
    parts = _pool_map(_exit_block, tasks, workers)
    return ExitTimes(np.concatenate([p[0] for p in parts]),
                     np.concatenate([p[1] for p in parts]), t_max)


@dataclass(frozen=True)
class ExitRateFit:
    rate: float
    std_error: float
    threshold: float
    events: int


def fit_exit_rate(times: ExitTimes, tail_quantile: float = 0.5) -> ExitRateFit:
    """Asymptotic decay rate of the exit-time density from its tail.

    Beyond the threshold ``tau0`` (a quantile of all samples) the excess
    ``tau - tau0`` is treated as exponential; the censored maximum-likelihood
    rate is events / exposure.
    """
    tau = np.where(times.censored, times.t_max, times.tau)
    tau0 = float(np.quantile(tau, tail_quantile)) if tail_quantile > 0 else 0.0
    tail = tau > tau0
    events = int(np.sum(tail & ~times.censored))
    exposure = float(np.sum(tau[tail] - tau0))
    if events == 0 or exposure <= 0:
        raise ValueError("no uncensored exits in the tail")
    rate = events / exposure
    return ExitRateFit(rate, rate / math.sqrt(events), tau0, events)


def exit_histogram(times: ExitTimes, bins: int = 50):
    """Density histogram of the uncensored exit times: ``(counts, edges, density)``."""
    tau = times.tau[~times.censored]
    counts, edges = np.histogram(tau, bins=bins, range=(0.0, float(tau.max()) if tau.size else 1.0))
    width = np.diff(edges)
    density = counts / (times.tau.size * width)
    return counts, edges, density


# ---------------------------------------------------------------------------
# weight/probability balance at the first exit


@dataclass(frozen=True)
class LemmaCheck:
    lhs: float
    lhs_error: float
    rhs: float
    t: float
    samples: int

    @property
    def agree(self) -> bool:
        return abs(self.lhs - self.rhs) <= 3 * self.lhs_error

    @property
    def z(self) -> float:
        return (self.lhs - self.rhs) / self.lhs_error if self.lhs_error > 0 else math.inf


def _lemma_block(task):
    H, stop, n0, t, size, seed, key = task
    b = _run_batch(H, n0, t, size, streams.stream(seed, *key), LINK_RATE, stop)
    exited = ~np.isnan(b.exit_time)
    return WeightStats.from_samples(np.where(exited, b.logw, 0.0), np.where(exited, b.sign, 0))


def lemma_rhs(H: Hamiltonian, partition: Partition, n0: int, t: float,
              epsrel: float = 1e-8) -> float:
    """``int_0^t sum_n R_out(n) <n| exp(-H_cav x) |n0> dx`` by adaptive quadrature."""
    cav = partition.cavity
    Hbar = restrict(H, cav, allow_isolated=True)
    e0 = np.zeros(cav.size)
    e0[int(np.searchsorted(cav, n0))] = 1.0
    r_out = partition.r_out[cav]
    val, _ = integrate.quad(lambda x: float(r_out @ propagator_apply(Hbar, e0, x)),
                            0.0, t, epsrel=epsrel, epsabs=0.0, limit=200)
    return float(val)


def check_exit_lemma(H: Hamiltonian, partition: Partition, n0: int, t: float, samples: int,
                     seed: int, workers: int = 1) -> LemmaCheck:
    """Compare the Monte Carlo functional up to the first exit with its quadrature form.

    The left side is ``E(M[0, tau) 1{tau < t})`` with the full weighted degree
    in the exponent; the right side replaces weights by the cavity-internal
    propagator times the exit rate.  Only sign-free cavities are supported.
    """
    if not partition.in_cavity[n0]:
        raise ValueError("n0 must lie in the cavity")
    touch = partition.in_cavity[H.heads] | partition.in_cavity[H.tails]
    if np.any(H.lam[touch] < 0):
        raise NonStoquasticRegion("cavity links carry negative signs")
    stop = ~partition.in_cavity
    tasks = [(H, stop, int(n0), float(t), size, seed, (streams.LEMMA, b))
             for b, size in enumerate(streams.blocks(samples))]
    stats = _merge_all(_pool_map(_lemma_block, tasks, workers))
    return LemmaCheck(stats.value, stats.std_error, lemma_rhs(H, partition, n0, t), float(t),
                      stats.count)
