"""Finite-state continuous-time Markov chains with piecewise-constant rates.

States are the unit vectors e_0..e_{N-1} of R^N, stored as integer indices.
Rate matrices use the *column* convention: column i of A is the drift of X
out of state i, so ``A[j, i]`` (j != i) is the jump rate i -> j and every
column sums to zero.  With this convention

    X_t = X_0 + int_0^t A_u X_{u-} du + M_t

holds literally, and ``P = expm(A * dt)`` is column-stochastic with
``E[X_t | X_s = e_i] = P[:, i]``.  Many references use the transposed
(row) convention; convert with ``A.T`` before calling into this module.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import (
    BadSegmentTimes,
    ColumnSumNonzero,
    DimensionMismatch,
    NegativeOffDiagonal,
    NotOnSimplex,
    ValidationError,
)

COLUMN_SUM_TOL = 1e-12
SIMPLEX_TOL = 1e-8
CLIP_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Generator:
    """Piecewise-constant rate matrix on [0, T].

    ``starts[k]`` is the left end of segment k; segment k covers
    ``[starts[k], starts[k+1])`` and the last segment runs to ``T``.
    """

    matrices: np.ndarray  # (S, N, N)
    starts: np.ndarray  # (S,)
    T: float

    @property
    def N(self) -> int:
        return self.matrices.shape[1]

    @property
    def n_segments(self) -> int:
        return self.matrices.shape[0]

    @property
    def segments(self):
        return [(float(s), a) for s, a in zip(self.starts, self.matrices)]

    @cached_property
    def ends(self) -> np.ndarray:
        return np.append(self.starts[1:], self.T)

    def segment_index(self, t):
        """Index of the segment containing t (right-continuous; t = T maps to the last)."""
        idx = np.searchsorted(self.starts, t, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def rate(self, t: float) -> np.ndarray:
        return self.matrices[int(self.segment_index(t))]

    @cached_property
    def phi_tables(self) -> np.ndarray:
        """Phi for every (segment, state): shape (S, N, N, N)."""
        return np.stack([[_phi(a, i) for i in range(self.N)] for a in self.matrices])

    def phi_table(self, t: float) -> np.ndarray:
        return self.phi_tables[int(self.segment_index(t))]

    def to_dict(self) -> dict:
        return {
            "T": float(self.T),
            "segments": [
                {"t_start": float(s), "A": a.tolist()} for s, a in self.segments
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Generator":
        segs = d["segments"]
        return validate_generator(
            [s["A"] for s in segs], d["T"], starts=[s["t_start"] for s in segs]
        )


@dataclass(frozen=True)
class StateLawPath:
    grid: np.ndarray  # (K+1,)
    laws: np.ndarray  # (K+1, N)

    def at(self, k: int) -> np.ndarray:
        return self.laws[k]

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "laws": self.laws.tolist()}


@dataclass(frozen=True)
class ChainPath:
    x0: int
    times: tuple = ()
    states: tuple = ()
    T: float = 1.0

    def state_at(self, t: float) -> int:
        """X_t (right-continuous)."""
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.x0 if k == 0 else self.states[k - 1]

    def state_before(self, t: float) -> int:
        """X_{t-}."""
        k = int(np.searchsorted(self.times, t, side="left"))
        return self.x0 if k == 0 else self.states[k - 1]

    @property
    def visited(self) -> list:
        return [self.x0, *self.states]

    def holding_intervals(self):
        """Yield (start, end, state) covering [0, T]."""
        knots = [0.0, *self.times, self.T]
        for a, b, s in zip(knots[:-1], knots[1:], self.visited):
            yield a, b, s

    def to_dict(self) -> dict:
        return {
            "x0": int(self.x0),
            "T": float(self.T),
            "events": [[float(t), int(s)] for t, s in zip(self.times, self.states)],
        }

    def to_csv(self) -> str:
        lines = ["jump_time,new_state"]
        lines += [f"{float(t)!r},{int(s)}" for t, s in zip(self.times, self.states)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ChainPath":
        ev = d.get("events", [])
        return cls(
            int(d["x0"]),
            tuple(float(e[0]) for e in ev),
            tuple(int(e[1]) for e in ev),
            float(d["T"]),
        )


@dataclass(frozen=True)
class PathBatch:
    """Many paths in ragged (CSR) layout: events of path p are
    ``times[offsets[p]:offsets[p+1]]`` / ``states[...]``."""

    x0: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    states: np.ndarray
    T: float

    def __len__(self):
        return len(self.x0)

    @property
    def n_jumps(self) -> np.ndarray:
        return np.diff(self.offsets)

    def path(self, p: int) -> ChainPath:
        lo, hi = self.offsets[p], self.offsets[p + 1]
        return ChainPath(
            int(self.x0[p]),
            tuple(float(t) for t in self.times[lo:hi]),
            tuple(int(s) for s in self.states[lo:hi]),
            self.T,
        )

    @cached_property
    def jump_owner(self) -> np.ndarray:
        return np.repeat(np.arange(len(self)), self.n_jumps)

    @cached_property
    def pre_jump_states(self) -> np.ndarray:
        prev = np.empty_like(self.states)
        if len(prev):
            prev[1:] = self.states[:-1]
            firsts = self.offsets[:-1][self.n_jumps > 0]
            prev[firsts] = self.x0[self.n_jumps > 0]
        return prev

    @cached_property
    def terminal_states(self) -> np.ndarray:
        out = self.x0.copy()
        has = self.n_jumps > 0
        out[has] = self.states[self.offsets[1:][has] - 1]
        return out

    def holding_intervals(self):
        """Arrays (owner, start, end, state) of all holding intervals, path-major."""
        n = len(self)
        counts = self.n_jumps + 1
        owner = np.repeat(np.arange(n), counts)
        first = np.concatenate([[0], np.cumsum(counts)[:-1]])
        # interval j of path p is interval index first[p] + j
        start = np.zeros(len(owner))
        end = np.full(len(owner), float(self.T))
        state = np.empty(len(owner), dtype=np.int64)
        state[first] = self.x0
        jump_slot = np.arange(len(self.times)) + np.repeat(first - self.offsets[:-1], self.n_jumps) + 1
        start[jump_slot] = self.times
        state[jump_slot] = self.states
        end[jump_slot - 1] = self.times
        return owner, start, end, state


def validate_generator(matrices, T, starts=None) -> Generator:
    """Check and freeze raw rate matrices.

    ``matrices`` is one N x N matrix or a list of them (one per segment);
    ``starts`` lists the segment start times, defaulting to evenly spaced.
    """
    mats = np.asarray(matrices, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise DimensionMismatch(f"rate matrices must be square, got shape {mats.shape[1:]}")
    n_seg, N, _ = mats.shape
    if N < 2:
        raise DimensionMismatch("need at least 2 states")
    T = float(T)
    if not T > 0:
        raise BadSegmentTimes(f"horizon must be positive, got {T}")
    if starts is None:
        starts = np.arange(n_seg) * (T / n_seg)
    starts = np.asarray(starts, dtype=float)
    if starts.shape != (n_seg,):
        raise BadSegmentTimes(f"{n_seg} segments but {starts.size} start times")
    if starts[0] != 0.0:
        raise BadSegmentTimes(f"first segment must start at 0, got {starts[0]}")
    if np.any(np.diff(starts) <= 0):
        raise BadSegmentTimes("segment start times must be strictly increasing")
    if starts[-1] >= T:
        raise BadSegmentTimes(f"segment start {starts[-1]} is not below the horizon {T}")
    if not np.all(np.isfinite(mats)):
        raise ValidationError("rate matrices contain non-finite entries")
    for s, a in enumerate(mats):
        off = a - np.diag(np.diag(a))
        bad = np.argwhere(off < 0)
        if len(bad):
            r, c = bad[0]
            raise NegativeOffDiagonal(int(r), int(c), s, float(a[r, c]))
        sums = a.sum(axis=0)
        bad_cols = np.flatnonzero(np.abs(sums) > COLUMN_SUM_TOL)
        if len(bad_cols):
            c = int(bad_cols[0])
            raise ColumnSumNonzero(c, s, float(sums[c]))
    mats.setflags(write=False)
    starts.setflags(write=False)
    return Generator(mats, starts, T)


def _phi(a: np.ndarray, state: int) -> np.ndarray:
    col = a[:, state]
    out = np.diag(col)
    out[state, :] -= col
    out[:, state] -= col
    return out


def phi(gen: Generator, t: float, state: int) -> np.ndarray:
    """diag(A X) - diag(X) A^T - A diag(X) at X = e_state, the density of <M, M>."""
    if not 0 <= t <= gen.T:
        raise ValueError(f"t={t} outside [0, {gen.T}]")
    if not 0 <= state < gen.N:
        raise ValueError(f"state {state} out of range")
    return gen.phi_table(t)[state].copy()


def seminorm_sq(z, gen: Generator, t: float, state: int) -> float:
    z = np.asarray(z, dtype=float)
    if z.shape != (gen.N,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({gen.N},)")
    if not 0 <= state < gen.N:
        raise ValueError(f"state {state} out of range")
    return float(seminorm_batch(gen.phi_table(t), z, state) ** 2)


def seminorm(z, gen: Generator, t: float, state: int) -> float:
    return float(np.sqrt(seminorm_sq(z, gen, t, state)))


def seminorm_batch(phis: np.ndarray, z, state) -> np.ndarray:
    """sqrt(z Phi_state z^T) with numpy broadcasting.

    ``phis`` is a (N, N, N) table indexed by state, ``z`` has shape S1+(N,),
    ``state`` an integer array of shape S2; S1 and S2 must broadcast.
    Evaluated as sum_j a_j (z_j - z_state)^2 with a_j = Phi_state[j, j]
    (the jump rates out of ``state``), which avoids the cancellation of the
    quadratic form when z is large.
    """
    z = np.asarray(z, dtype=float)
    state = np.asarray(state)
    N = phis.shape[-1]
    onehot = np.eye(N)[state]
    w = np.diagonal(phis[state], axis1=-2, axis2=-1) * (1.0 - onehot)
    zi = np.sum(z * onehot, axis=-1, keepdims=True)
    return np.sqrt(np.maximum(np.sum(w * (z - zi) ** 2, axis=-1), 0.0))


def transition_matrix(gen: Generator, s: float, t: float) -> np.ndarray:
    """Column-stochastic P(s, t) = prod of expm(A_k * overlap_k), later segments on the left."""
    if s > t:
        raise ValueError(f"s={s} > t={t}")
    if s < 0 or t > gen.T * (1 + 1e-12):
        raise ValueError(f"[{s}, {t}] not inside [0, {gen.T}]")
    P = np.eye(gen.N)
    lo = np.maximum(gen.starts, s)
    hi = np.minimum(gen.ends, t)
    for a, l, h in zip(gen.matrices, lo, hi):
        if h > l:
            P = scipy.linalg.expm(a * (h - l)) @ P
    return P


def _check_simplex(mu, N):
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (N,):
        raise DimensionMismatch(f"law has shape {mu.shape}, expected ({N},)")
    if np.any(mu < -SIMPLEX_TOL) or abs(mu.sum() - 1) > SIMPLEX_TOL:
        raise NotOnSimplex(f"{mu.tolist()} is not a probability vector")
    return mu


def _project(mu):
    if np.any(mu < -CLIP_TOL):
        raise NotOnSimplex(f"law drifted off the simplex: min entry {mu.min()!r}")
    mu = np.maximum(mu, 0.0)
    return mu / mu.sum()


def evolve_law(gen: Generator, mu0, grid) -> StateLawPath:
    """Marginal laws mu(t_k) by stepping the forward equation exactly between grid points."""
    mu = _check_simplex(mu0, gen.N)
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0 or abs(grid[-1] - gen.T) > 1e-12 * max(1.0, gen.T) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must increase strictly from 0 to T")
    laws = np.empty((len(grid), gen.N))
    laws[0] = mu
    cache = {}
    for k in range(len(grid) - 1):
        s, t = grid[k], min(grid[k + 1], gen.T)
        seg = int(gen.segment_index(s))
        if gen.ends[seg] >= t:
            key = (seg, round(t - s, 15))
            if key not in cache:
                cache[key] = transition_matrix(gen, s, t)
            P = cache[key]
        else:
            P = transition_matrix(gen, s, t)
        mu = _project(P @ mu)
        laws[k + 1] = mu
    return StateLawPath(grid, laws)


def stationary_law(gen: Generator, t: float = 0.0) -> np.ndarray:
    """Null vector of A(t) normalized to the simplex (unique for irreducible chains)."""
    a = gen.rate(t)
    w, v = np.linalg.eig(a)
    k = int(np.argmin(np.abs(w)))
    mu = np.real(v[:, k])
    return mu / mu.sum()


def _jump_probs(a: np.ndarray) -> np.ndarray:
    """Cumulative next-state probabilities per current state: (N, N), row = from."""
    rates = a.T.copy()
    np.fill_diagonal(rates, 0.0)
    tot = rates.sum(axis=1, keepdims=True)
    probs = np.divide(rates, tot, out=np.zeros_like(rates), where=tot > 0)
    return np.cumsum(probs, axis=1)


def sample_path(gen: Generator, x0: int, seed) -> ChainPath:
    """Exact jump-chain simulation; segment boundaries restart the exponential clock."""
    rng = np.random.default_rng(seed)
    if not 0 <= x0 < gen.N:
        raise ValueError(f"state {x0} out of range")
    cum = [_jump_probs(a) for a in gen.matrices]
    t, state, times, states = 0.0, int(x0), [], []
    seg = 0
    while True:
        seg = int(gen.segment_index(t))
        end = gen.ends[seg]
        rate = -gen.matrices[seg][state, state]
        hold = rng.exponential() / rate if rate > 0 else np.inf
        if t + hold >= end:
            if end >= gen.T:
                break
            t = float(end)
            continue
        t += hold
        state = int(min(np.searchsorted(cum[seg][state], rng.random(), side="right"), gen.N - 1))
        times.append(t)
        states.append(state)
    return ChainPath(int(x0), tuple(times), tuple(states), gen.T)


def sample_paths(gen: Generator, n: int, seed, x0=None, mu0=None) -> PathBatch:
    """Vectorized version of :func:`sample_path` for n paths.

    Start states are ``x0`` (int or array) or drawn from ``mu0``.
    Not draw-for-draw identical to calling sample_path n times, but
    deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    if x0 is None:
        mu = _check_simplex(mu0 if mu0 is not None else np.full(gen.N, 1 / gen.N), gen.N)
        start = np.minimum(np.searchsorted(np.cumsum(mu), rng.random(n), side="right"), gen.N - 1)
    else:
        start = np.broadcast_to(np.asarray(x0, dtype=np.int64), (n,)).copy()
    cum = np.stack([_jump_probs(a) for a in gen.matrices])
    diag = -np.stack([np.diag(a) for a in gen.matrices])  # (S, N)
    t = np.zeros(n)
    state = start.copy()
    active = np.arange(n)
    ev_path, ev_time, ev_state = [], [], []
    while len(active):
        seg = gen.segment_index(t[active])
        end = gen.ends[seg]
        rate = diag[seg, state[active]]
        e = rng.exponential(size=len(active))
        u = rng.random(len(active))
        with np.errstate(divide="ignore"):
            hold = np.where(rate > 0, e / np.where(rate > 0, rate, 1.0), np.inf)
        tn = t[active] + hold
        cross = tn >= end
        done = cross & (end >= gen.T)
        t[active[cross]] = end[cross]
        jump = ~cross
        jp = active[jump]
        if len(jp):
            c = cum[seg[jump], state[jp]]
            new = np.minimum((c <= u[jump, None]).sum(axis=1), gen.N - 1)
            t[jp] = tn[jump]
            state[jp] = new
            ev_path.append(jp)
            ev_time.append(tn[jump])
            ev_state.append(new)
        active = active[~done]
    if ev_path:
        p = np.concatenate(ev_path)
        tt = np.concatenate(ev_time)
        ss = np.concatenate(ev_state)
        order = np.lexsort((tt, p))
        p, tt, ss = p[order], tt[order], ss[order]
    else:
        p, tt, ss = (np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64))
    offsets = np.concatenate([[0], np.cumsum(np.bincount(p, minlength=n))])
    return PathBatch(start, offsets, tt, ss.astype(np.int64), float(gen.T))


def concat_batches(batches) -> PathBatch:
    batches = list(batches)
    shifts = np.cumsum([0] + [len(b.times) for b in batches[:-1]])
    offsets = np.concatenate([[0]] + [b.offsets[1:] + s for b, s in zip(batches, shifts)])
    return PathBatch(
        np.concatenate([b.x0 for b in batches]),
        offsets,
        np.concatenate([b.times for b in batches]),
        np.concatenate([b.states for b in batches]),
        batches[0].T,
    )


def worker_count() -> int:
    """Thread cap from MFBSDE_WORKERS (default 1)."""
    try:
        return max(1, int(os.environ.get("MFBSDE_WORKERS", "1")))
    except ValueError:
        return 1


def sample_paths_chunked(gen: Generator, n: int, seed, x0=None, mu0=None,
                         chunk: int = 25_000, workers: int | None = None) -> PathBatch:
    """sample_paths over fixed-size chunks with spawned child seeds.

    The result depends only on (n, seed, chunk), not on the worker count:
    chunks are merged in seed order.
    """
    sizes = [min(chunk, n - lo) for lo in range(0, n, chunk)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    job = lambda a: sample_paths(gen, a[0], a[1], x0=x0, mu0=mu0)  # noqa: E731
    workers = workers or worker_count()
    if workers == 1 or len(sizes) == 1:
        parts = [job(a) for a in zip(sizes, seeds)]
    else:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(job, zip(sizes, seeds)))
    return concat_batches(parts)
