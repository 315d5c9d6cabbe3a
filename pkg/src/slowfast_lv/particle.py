"""Exact stochastic simulation of the finite-N jump process.

Channel i moves one particle from species i to species i+1 at rate
n_i (a + n_{i+1}).  Simulation uses the direct method (exponential holding
time, proportional channel choice) with a counter-based Philox generator;
per-run streams are derived from (seed, run index), so ensembles are
reproducible regardless of scheduling.  Small populations also get the full
generator matrix and the product-form invariant measure for exact checks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import sparse
from scipy.special import gammaln, logsumexp

from .core import CountState, JumpVector, ModelParams, SimplexPoint, to_point, z_of

_DRAW_BLOCK = 1 << 16  # uniforms per refill; consumption order is block-size invariant

_NEED_DRAWS = 0
_DONE = 1
_ABSORBED = 2
_EVENTS_FULL = 3


@dataclass(frozen=True)
class RateVector:
    """Per-channel event rates r_i = n_i (a + n_{i+1}) and their sum."""

    r0: float
    r1: float
    r2: float

    @property
    def total(self) -> float:
        return self.r0 + self.r1 + self.r2

    def as_array(self) -> np.ndarray:
        return np.array([self.r0, self.r1, self.r2])


def rates(s: CountState, params: ModelParams) -> RateVector:
    a = params.a
    return RateVector(s.n1 * (a + s.n2), s.n2 * (a + s.n3), s.n3 * (a + s.n1))


# ---------------------------------------------------------------------------
# simulation kernel
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _ssa_kernel(n1, n2, n3, a, t, t_final, u,
                obs_times, obs_idx, obs_out,
                record, ev_t, ev_ch, ev_n, min_count):
    """Advance the chain until draws run out, the horizon or absorption is hit,
    or the event buffer fills.  Two uniforms are consumed per event, in order."""
    k = 0
    nu = u.shape[0]
    nobs = obs_times.shape[0]
    cap = ev_t.shape[0]
    while True:
        r0 = n1 * (a + n2)
        r1 = n2 * (a + n3)
        r2 = n3 * (a + n1)
        tot = r0 + r1 + r2
        if tot <= 0.0:
            while obs_idx < nobs:
                obs_out[obs_idx, 0] = n1
                obs_out[obs_idx, 1] = n2
                obs_out[obs_idx, 2] = n3
                obs_idx += 1
            return n1, n2, n3, t, k, obs_idx, ev_n, min_count, _ABSORBED
        if k + 2 > nu:
            return n1, n2, n3, t, k, obs_idx, ev_n, min_count, _NEED_DRAWS
        if record and ev_n >= cap:
            return n1, n2, n3, t, k, obs_idx, ev_n, min_count, _EVENTS_FULL
        t_new = t - np.log(1.0 - u[k]) / tot
        while obs_idx < nobs and obs_times[obs_idx] < t_new:
            obs_out[obs_idx, 0] = n1
            obs_out[obs_idx, 1] = n2
            obs_out[obs_idx, 2] = n3
            obs_idx += 1
        if t_new >= t_final:
            while obs_idx < nobs:
                obs_out[obs_idx, 0] = n1
                obs_out[obs_idx, 1] = n2
                obs_out[obs_idx, 2] = n3
                obs_idx += 1
            return n1, n2, n3, t_final, k, obs_idx, ev_n, min_count, _DONE
        v = u[k + 1] * tot
        k += 2
        t = t_new
        if v < r0:
            ch = 0
            n1 -= 1
            n2 += 1
        elif v < r0 + r1:
            ch = 1
            n2 -= 1
            n3 += 1
        else:
            ch = 2
            n3 -= 1
            n1 += 1
        if record:
            ev_t[ev_n] = t
            ev_ch[ev_n] = ch
            ev_n += 1
        lo = min(n1, min(n2, n3))
        if lo < min_count:
            min_count = lo


@njit(cache=True, nogil=True)
def _occupation_kernel(n1, n2, n3, a, n_total, t, u, events_left, occupancy):
    """Accumulate holding time per state (triangular index) for events_left jumps."""
    k = 0
    nu = u.shape[0]
    while events_left > 0:
        r0 = n1 * (a + n2)
        r1 = n2 * (a + n3)
        r2 = n3 * (a + n1)
        tot = r0 + r1 + r2
        if tot <= 0.0:
            return n1, n2, n3, t, k, events_left, _ABSORBED
        if k + 2 > nu:
            return n1, n2, n3, t, k, events_left, _NEED_DRAWS
        dt = -np.log(1.0 - u[k]) / tot
        idx = n1 * (n_total + 1) - (n1 * (n1 - 1)) // 2 + n2
        occupancy[idx] += dt
        v = u[k + 1] * tot
        k += 2
        t += dt
        if v < r0:
            n1 -= 1
            n2 += 1
        elif v < r0 + r1:
            n2 -= 1
            n3 += 1
        else:
            n3 -= 1
            n1 += 1
        events_left -= 1
    return n1, n2, n3, t, k, 0, _DONE


def _run_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


@dataclass(frozen=True)
class JumpTrajectory:
    """One realization: event times and channels, plus optional sampled states."""

    initial: CountState
    params: ModelParams
    seed: int
    stream: int
    t_final: float
    times: np.ndarray
    channels: np.ndarray
    obs_times: np.ndarray
    obs_counts: np.ndarray
    final: CountState
    min_count: int
    absorbed: bool
    absorption_time: float | None = None
    absorbed_vertex: int | None = None

    @property
    def n_events(self) -> int:
        return len(self.times)

    def count_path(self) -> np.ndarray:
        """States before/after every event, shape (n_events + 1, 3)."""
        deltas = np.array([[-1, 1, 0], [0, -1, 1], [1, 0, -1]], dtype=np.int64)
        path = np.empty((self.n_events + 1, 3), dtype=np.int64)
        path[0] = self.initial.counts()
        if self.n_events:
            path[1:] = path[0] + np.cumsum(deltas[self.channels], axis=0)
        return path

    def z_path(self) -> np.ndarray:
        counts = self.count_path().astype(float)
        n = self.initial.n
        return counts[:, 0] * counts[:, 1] * counts[:, 2] / n**3


def ssa_run(initial: CountState, params: ModelParams, t_final: float, seed: int,
            obs_times=None, record_events: bool = True, stream: int = 0) -> JumpTrajectory:
    """Statistically exact realization up to t_final (or absorption).

    Identical (initial, params, t_final, seed, stream) reproduce the event
    list bit-exactly.  With record_events=False only the states at obs_times
    are kept, which bounds memory on long runs.
    """
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    obs = np.asarray([] if obs_times is None else obs_times, dtype=float)
    if np.any(np.diff(obs) < 0):
        raise ValueError("obs_times must be nondecreasing")
    rng = _run_stream(seed, stream)
    n1, n2, n3 = initial.counts()
    t = 0.0
    obs_idx = 0
    obs_out = np.zeros((len(obs), 3), dtype=np.int64)
    cap = 1 << 14 if record_events else 0
    ev_t = np.empty(cap, dtype=np.float64)
    ev_ch = np.empty(cap, dtype=np.int8)
    ev_n = 0
    min_count = min(n1, n2, n3)
    absorbed = False
    while True:
        u = rng.random(_DRAW_BLOCK)
        used = 0
        while True:
            n1, n2, n3, t, k, obs_idx, ev_n, min_count, status = _ssa_kernel(
                n1, n2, n3, params.a, t, t_final, u[used:],
                obs, obs_idx, obs_out, record_events, ev_t, ev_ch, ev_n, min_count)
            used += k
            if status == _EVENTS_FULL:
                ev_t = np.concatenate([ev_t, np.empty_like(ev_t)])
                ev_ch = np.concatenate([ev_ch, np.empty_like(ev_ch)])
                continue
            break
        if status != _NEED_DRAWS:
            absorbed = status == _ABSORBED
            break
    final = CountState(int(n1), int(n2), int(n3))
    vertex = None
    if absorbed:
        vertex = int(np.argmax(final.counts()))
    return JumpTrajectory(
        initial=initial, params=params, seed=seed, stream=stream, t_final=t_final,
        times=ev_t[:ev_n].copy(), channels=ev_ch[:ev_n].copy(),
        obs_times=obs, obs_counts=obs_out, final=final, min_count=int(min_count),
        absorbed=absorbed, absorption_time=float(t) if absorbed else None,
        absorbed_vertex=vertex)


@dataclass(frozen=True)
class ParticleEnsemble:
    """States of independent runs sampled at common observation times."""

    metadata: dict
    obs_times: np.ndarray
    counts: np.ndarray        # (runs, nobs, 3)
    min_counts: np.ndarray    # (runs,)
    absorbed: np.ndarray      # (runs,) bool
    absorption_times: np.ndarray  # (runs,), nan where not absorbed

    @property
    def runs(self) -> int:
        return self.counts.shape[0]

    def z_values(self, t_index: int) -> np.ndarray:
        c = self.counts[:, t_index, :].astype(float)
        n = float(self.metadata["n"])
        return c[:, 0] * c[:, 1] * c[:, 2] / n**3

    def points(self, t_index: int) -> np.ndarray:
        return self.counts[:, t_index, :] / float(self.metadata["n"])


def ssa_ensemble(initial: CountState, params: ModelParams, obs_times, runs: int,
                 seed: int, threads: int = 1) -> ParticleEnsemble:
    """Independent runs sampled at obs_times; run r uses stream (seed, r)."""
    obs = np.asarray(obs_times, dtype=float)
    if obs.ndim != 1 or len(obs) == 0 or np.any(np.diff(obs) < 0):
        raise ValueError("obs_times must be a nondecreasing nonempty sequence")
    t_final = float(obs[-1])
    counts = np.zeros((runs, len(obs), 3), dtype=np.int64)
    min_counts = np.zeros(runs, dtype=np.int64)
    absorbed = np.zeros(runs, dtype=bool)
    t_abs = np.full(runs, np.nan)

    def work(r):
        traj = ssa_run(initial, params, t_final, seed, obs_times=obs,
                       record_events=False, stream=r)
        counts[r] = traj.obs_counts
        min_counts[r] = traj.min_count
        absorbed[r] = traj.absorbed
        if traj.absorbed:
            t_abs[r] = traj.absorption_time

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(runs)))
    else:
        for r in range(runs):
            work(r)
    meta = {"kind": "particle", "n": initial.n, "a": params.a,
            "initial": initial.counts(), "obs_times": [float(v) for v in obs],
            "runs": runs, "seed": seed}
    return ParticleEnsemble(metadata=meta, obs_times=obs, counts=counts,
                            min_counts=min_counts, absorbed=absorbed,
                            absorption_times=t_abs)


def occupation_times(initial: CountState, params: ModelParams, n_events: int,
                     seed: int, stream: int = 0) -> np.ndarray:
    """Holding-time-weighted state occupancy over a single long run.

    Returns the normalized occupation measure indexed like enumerate_states.
    """
    n = initial.n
    occ = np.zeros((n + 1) * (n + 2) // 2, dtype=np.float64)
    rng = _run_stream(seed, stream)
    n1, n2, n3 = initial.counts()
    t = 0.0
    left = n_events
    while left > 0:
        u = rng.random(_DRAW_BLOCK)
        n1, n2, n3, t, k, left, status = _occupation_kernel(
            n1, n2, n3, params.a, n, t, u, left, occ)
        if status == _ABSORBED:
            raise RuntimeError("trajectory absorbed; occupation requires a > 0")
    return occ / occ.sum()


# ---------------------------------------------------------------------------
# exact small-N objects
# ---------------------------------------------------------------------------

def enumerate_states(n: int) -> np.ndarray:
    """All (n1, n2, n3) with total n, lexicographic in (n1, n2); shape (M, 3)."""
    out = []
    for n1 in range(n + 1):
        for n2 in range(n - n1 + 1):
            out.append((n1, n2, n - n1 - n2))
    return np.array(out, dtype=np.int64)


def state_index(n: int, n1: int, n2: int) -> int:
    """Row of (n1, n2, .) in enumerate_states(n)."""
    return n1 * (n + 1) - (n1 * (n1 - 1)) // 2 + n2


def generator_matrix(n: int, params: ModelParams, max_n: int = 60):
    """Sparse generator over all states of total n; rows sum to zero.

    Returns (matrix, states).  Rejected above max_n to keep the state count
    (n+1)(n+2)/2 manageable.
    """
    if n > max_n:
        raise ValueError(f"n={n} too large for dense enumeration (limit {max_n})")
    states = enumerate_states(n)
    a = params.a
    rows, cols, vals = [], [], []
    for idx, (n1, n2, n3) in enumerate(states):
        r = (n1 * (a + n2), n2 * (a + n3), n3 * (a + n1))
        targets = ((n1 - 1, n2 + 1), (n1, n2 - 1), (n1 + 1, n2))
        diag = 0.0
        for rate, (m1, m2) in zip(r, targets):
            if rate <= 0.0:
                continue
            rows.append(idx)
            cols.append(state_index(n, m1, m2))
            vals.append(rate)
            diag += rate
        rows.append(idx)
        cols.append(idx)
        vals.append(-diag)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states)))
    return mat, states


@dataclass(frozen=True)
class GridMeasure:
    """Probability weights over the enumerated states of a fixed total."""

    n: int
    a: float
    states: np.ndarray
    weights: np.ndarray

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def z_values(self) -> np.ndarray:
        c = self.states.astype(float)
        return c[:, 0] * c[:, 1] * c[:, 2] / float(self.n) ** 3


def invariant_measure(n: int, params: ModelParams) -> GridMeasure:
    """Product-form stationary measure with per-species factor
    Gamma(n_i + a) / Gamma(n_i + 1), normalized in log space."""
    if params.a <= 0.0:
        raise ValueError("invariant measure requires a > 0 (vertices absorb at a = 0)")
    states = enumerate_states(n)
    a = params.a
    logw = gammaln(states + a).sum(axis=1) - gammaln(states + 1.0).sum(axis=1)
    logw -= logsumexp(logw)
    return GridMeasure(n=n, a=a, states=states, weights=np.exp(logw))


def sample_invariant(gm: GridMeasure, count: int, seed: int) -> list[CountState]:
    """i.i.d. draws from the measure by inverse CDF over the enumerated states."""
    idx = sample_invariant_indices(gm, count, seed)
    return [CountState(*map(int, gm.states[i])) for i in idx]


def sample_invariant_indices(gm: GridMeasure, count: int, seed: int) -> np.ndarray:
    rng = _run_stream(seed, 0)
    cdf = np.cumsum(gm.weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(count), side="right")


# ---------------------------------------------------------------------------
# pointwise operators and limits
# ---------------------------------------------------------------------------

def quadratic_operator(g, s: CountState, params: ModelParams) -> float:
    """Sum over channels of x_i (a/N + x_{i+1}) N^2 (g(x + u_i/N) - g(x))^2,
    evaluated at x = counts/N.  Controls the quadratic variation of g along
    the jump process."""
    n = s.n
    if n < 1:
        raise ValueError("state must have at least one particle")
    x = np.array(s.counts(), dtype=float) / n
    gx = g(SimplexPoint.from_array(x))
    total = 0.0
    for j in (JumpVector(0), JumpVector(1), JumpVector(2)):
        w = x[j.source] * (params.a / n + x[j.target])
        if w <= 0.0:
            continue
        xp = x + j.delta() / n
        total += w * n**2 * (g(SimplexPoint.from_array(xp)) - gx) ** 2
    return total


def wendel_ratio(n: int, x: float, a: float) -> float:
    """n^(1-a) Gamma(nx + a) / Gamma(nx + 1); tends to x^(a-1) as n grows."""
    if x < 0.0:
        raise ValueError("x must be >= 0")
    if x == 0.0 and a < 1.0:
        raise ValueError("x = 0 requires a >= 1")
    return float(np.exp((1.0 - a) * np.log(n) + gammaln(n * x + a) - gammaln(n * x + 1.0)))
