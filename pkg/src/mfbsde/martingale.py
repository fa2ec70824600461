"""Compensated chain martingale M_t = X_t - X_0 - int_0^t A_u X_{u-} du.

Single-path functions work on :class:`ChainPath` and compute compensators
exactly per inter-jump interval.  The ``*_batch`` functions do the same for
a :class:`PathBatch` with numpy and are what the Monte Carlo checks use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .chain import ChainPath, Generator, PathBatch, sample_paths_chunked


@dataclass(frozen=True)
class MartingalePath:
    path: ChainPath
    gen: Generator

    def compensator(self, t: float) -> np.ndarray:
        """int_0^t A_u X_{u-} du."""
        out = np.zeros(self.gen.N)
        for a, b, i in _pieces(self.path, self.gen, t):
            out += (b - a) * self.gen.rate(a)[:, i]
        return out

    def value(self, t: float) -> np.ndarray:
        return martingale_value(self, t)


def _pieces(path: ChainPath, gen: Generator, upto=None):
    """(start, end, state) sub-intervals of [0, upto] on which both X and A are constant."""
    upto = gen.T if upto is None else upto
    for a, b, i in path.holding_intervals():
        b = min(b, upto)
        if b <= a:
            if a >= upto:
                break
            continue
        cuts = [a, *[s for s in gen.starts if a < s < b], b]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            yield lo, hi, i


def martingale_value(mp: MartingalePath, t: float) -> np.ndarray:
    x = np.zeros(mp.gen.N)
    x[mp.path.state_at(t)] += 1.0
    x[mp.path.x0] -= 1.0
    return x - mp.compensator(t)


def stochastic_integral(z, mp: MartingalePath, epsabs=1e-12, epsrel=1e-10) -> float:
    """int_0^T z(s, X_{s-}) dM_s for a row-vector integrand z(t, state)."""
    path, gen = mp.path, mp.gen
    jumps = 0.0
    prev = path.x0
    for t, s in zip(path.times, path.states):
        zv = np.asarray(z(t, prev), dtype=float)
        jumps += zv[s] - zv[prev]
        prev = s
    drift = 0.0
    for a, b, i in _pieces(path, gen):
        col = gen.rate(a)[:, i]
        val, _ = quad(lambda s: float(np.asarray(z(s, i)) @ col), a, b,
                      epsabs=epsabs, epsrel=epsrel, limit=200)
        drift += val
    return jumps - drift


def realized_qv(mp: MartingalePath) -> np.ndarray:
    """[M, M]_T = sum of Delta M Delta M^T over the jumps."""
    N = mp.gen.N
    out = np.zeros((N, N))
    prev = mp.path.x0
    for s in mp.path.states:
        d = np.zeros(N)
        d[s] += 1.0
        d[prev] -= 1.0
        out += np.outer(d, d)
        prev = s
    return out


def predictable_qv(mp: MartingalePath, gen: Generator | None = None) -> np.ndarray:
    """<M, M>_T = int_0^T Phi_u(X_{u-}) du, exact on each piece."""
    gen = gen or mp.gen
    out = np.zeros((gen.N, gen.N))
    for a, b, i in _pieces(mp.path, gen):
        out += (b - a) * gen.phi_table(a)[i]
    return out


# ---------------------------------------------------------------- batches


def batch_pieces(batch: PathBatch, gen: Generator):
    """Holding intervals split at segment starts: arrays (owner, start, end, state, segment)."""
    owner, a, b, state = batch.holding_intervals()
    if gen.n_segments == 1:
        return owner, a, b, state, np.zeros(len(a), dtype=np.int64)
    parts = []
    for k, (s0, s1) in enumerate(zip(gen.starts, gen.ends)):
        lo = np.maximum(a, s0)
        hi = np.minimum(b, s1)
        keep = hi > lo
        parts.append((owner[keep], lo[keep], hi[keep], state[keep],
                      np.full(keep.sum(), k, dtype=np.int64)))
    return tuple(np.concatenate(c) for c in zip(*parts))


def occupation(batch: PathBatch, gen: Generator) -> np.ndarray:
    """Time spent in each (segment, state): shape (n_paths, S, N)."""
    owner, a, b, state, seg = batch_pieces(batch, gen)
    occ = np.zeros((len(batch), gen.n_segments, gen.N))
    np.add.at(occ, (owner, seg, state), b - a)
    return occ


def terminal_martingale_batch(batch: PathBatch, gen: Generator) -> np.ndarray:
    """M_T for every path: shape (n, N)."""
    n = len(batch)
    x = np.zeros((n, gen.N))
    x[np.arange(n), batch.terminal_states] += 1.0
    x[np.arange(n), batch.x0] -= 1.0
    comp = np.einsum("psi,sji->pj", occupation(batch, gen), gen.matrices)
    return x - comp


def realized_qv_batch(batch: PathBatch, gen: Generator) -> np.ndarray:
    n, N = len(batch), gen.N
    out = np.zeros((n, N, N))
    pre, post, own = batch.pre_jump_states, batch.states, batch.jump_owner
    np.add.at(out, (own, pre, pre), 1.0)
    np.add.at(out, (own, post, post), 1.0)
    np.add.at(out, (own, pre, post), -1.0)
    np.add.at(out, (own, post, pre), -1.0)
    return out


def predictable_qv_batch(batch: PathBatch, gen: Generator) -> np.ndarray:
    return np.einsum("psi,siab->pab", occupation(batch, gen), gen.phi_tables)


def integrate_state_function(antideriv, batch: PathBatch, gen: Generator) -> np.ndarray:
    """int_0^T h(s, X_s) ds per path, given ``antideriv(t) -> (len(t), N)`` of h."""
    owner, a, b, state, _ = batch_pieces(batch, gen)
    vals = antideriv(b)[np.arange(len(b)), state] - antideriv(a)[np.arange(len(a)), state]
    return np.bincount(owner, weights=vals, minlength=len(batch))


def stochastic_integral_batch(z, z_antideriv, batch: PathBatch, gen: Generator) -> np.ndarray:
    """int_0^T z(s) dM_s per path for a state-independent row integrand z(t).

    ``z(t)`` and ``z_antideriv(t)`` map an array of times to (len(t), N);
    the drift part is exact given the antiderivative since A is constant
    on each piece.
    """
    jumps = np.zeros(len(batch))
    if len(batch.times):
        zv = z(batch.times)
        idx = np.arange(len(batch.times))
        np.add.at(jumps, batch.jump_owner, zv[idx, batch.states] - zv[idx, batch.pre_jump_states])
    owner, a, b, state, seg = batch_pieces(batch, gen)
    dz = z_antideriv(b) - z_antideriv(a)  # (m, N)
    cols = gen.matrices[seg][np.arange(len(a)), :, state]  # A_seg[:, state]
    drift = np.bincount(owner, weights=np.einsum("mj,mj->m", dz, cols), minlength=len(batch))
    return jumps - drift


def _row(name, samples):
    est = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(len(samples)))
    z = est / se if se > 0 else (0.0 if est == 0 else float("inf"))
    return name, est, se, z


def martingale_battery(gen: Generator, n_paths: int, seed, x0=None, mu0=None) -> list:
    """Rows (statistic, estimate, stderr, z_score): E[M_T]_j and E([M,M]_T - <M,M>_T)_ab,
    each of which should be zero."""
    batch = sample_paths_chunked(gen, n_paths, seed, x0=x0, mu0=mu0)
    mT = terminal_martingale_batch(batch, gen)
    diff = realized_qv_batch(batch, gen) - predictable_qv_batch(batch, gen)
    rows = [_row(f"mean_M_T[{j}]", mT[:, j]) for j in range(gen.N)]
    rows += [_row(f"qv_diff[{a},{b}]", diff[:, a, b])
             for a in range(gen.N) for b in range(a, gen.N)]
    return rows
