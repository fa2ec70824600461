"""Independent reference solutions.

``tree_solve`` is a discrete-time brute force: it enumerates every state
sequence x_0..x_K with its exact probability and runs the explicit scheme

    Y_k = E[Y_{k+1} | F_k] + dt * E'[f(t_k, .)]

backward over the path tree, with the mean-field term taken against the
exact discrete law of the nodes at level k.  It shares no code with the
RK4 solvers beyond the transition matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bsde import Driver, MeanFieldProblem, TerminalCondition
from .chain import Generator, transition_matrix
from .errors import DimensionMismatch, TreeTooLarge, UnknownForm, ValidationError

MAX_TREE = 10**7
PINV_RCOND = 1e-10


@dataclass(frozen=True)
class DiscreteProblem:
    gen: Generator
    K: int
    P: np.ndarray  # (K, N, N) column-stochastic one-step matrices
    mu0: np.ndarray
    f: Driver
    xi: TerminalCondition

    @property
    def N(self) -> int:
        return self.gen.N

    @property
    def dt(self) -> float:
        return self.gen.T / self.K

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt


def discretize(p: MeanFieldProblem, K: int) -> DiscreteProblem:
    if K < 1:
        raise ValidationError("K must be positive")
    dt = p.T / K
    P = np.stack([transition_matrix(p.gen, k * dt, min((k + 1) * dt, p.T)) for k in range(K)])
    return DiscreteProblem(p.gen, K, P, p.mu0, p.f, p.xi)


@dataclass
class TreeResult:
    y0: np.ndarray  # (N,) Y_0 per starting state
    laws: np.ndarray  # (K+1, N) discrete marginal laws
    values: list | None  # per level, Y on every node (full) or per state (lattice)
    z: list | None
    mode: str

    def mean_y0(self) -> float:
        return float(self.laws[0] @ self.y0)


def _regression_maps(P: np.ndarray) -> np.ndarray:
    """For each current state i, the matrix B_i with Z = B_i R, where R holds the
    next-step residuals Y_{k+1}(j) - E[Y_{k+1}]: least squares of R on X_{k+1} - E[X_{k+1}]."""
    N = P.shape[0]
    out = np.empty((N, N, N))
    for i in range(N):
        p = P[:, i]
        cov = np.diag(p) - np.outer(p, p)
        out[i] = np.linalg.pinv(cov, rcond=PINV_RCOND, hermitian=True) @ np.diag(p)
    return out


def _meanfield_step(f: Driver, t, w, a_state, a_y, a_z, o_state, o_y, o_z) -> np.ndarray:
    """For own rows o, sum_q w_q f(t, a_state_q, a_y_q, a_z_q, o_state, o_y, o_z)."""
    tab = f.eval(t, a_state[:, None], a_y[:, None], a_z[:, None, :],
                 o_state[None, :], o_y[None, :], o_z[None, :, :])
    tab = np.broadcast_to(tab, (len(w), len(o_y)))
    return w @ tab


def _decode(idx: np.ndarray, N: int, length: int) -> np.ndarray:
    seqs = np.empty((len(idx), length), dtype=np.int64)
    rest = idx.copy()
    for c in range(length - 1, -1, -1):
        seqs[:, c] = rest % N
        rest //= N
    return seqs


def tree_solve(dp: DiscreteProblem, mode: str = "auto", keep: bool = False) -> TreeResult:
    """Backward induction on the discrete path tree.

    ``mode="full"`` enumerates all N^(K+1) sequences (required for path
    functionals, capped at N^K <= 1e7).  ``mode="lattice"`` merges nodes
    with the same current state, which is exact for Markovian terminal data
    by the Markov property.  ``"auto"`` picks full when it fits.
    """
    N, K = dp.N, dp.K
    big = N**K > MAX_TREE
    if mode == "auto":
        mode = "lattice" if big and dp.xi.kind == "markovian" else "full"
    if mode == "full" and big:
        raise TreeTooLarge(f"N^K = {N}^{K} exceeds {MAX_TREE:.0e}")
    if mode == "lattice" and dp.xi.kind != "markovian":
        raise ValidationError("lattice mode needs a Markovian terminal condition")
    if mode not in ("full", "lattice"):
        raise ValidationError(f"unknown tree mode {mode!r}")
    return _full(dp, keep) if mode == "full" else _lattice(dp, keep)


def _lattice(dp: DiscreteProblem, keep: bool) -> TreeResult:
    N, K = dp.N, dp.K
    laws = np.empty((K + 1, N))
    laws[0] = dp.mu0
    for k in range(K):
        laws[k + 1] = dp.P[k] @ laws[k]
    Y = dp.xi.g.astype(float).copy()
    values = [Y] if keep else None
    zs = [] if keep else None
    states = np.arange(N)
    for k in range(K - 1, -1, -1):
        P = dp.P[k]
        yhat = P.T @ Y
        R = Y[None, :] - yhat[:, None]
        Z = np.einsum("iab,ib->ia", _regression_maps(P), R)
        Ef = _meanfield_step(dp.f, dp.times[k], laws[k], states, yhat, Z, states, yhat, Z)
        Y = yhat + dp.dt * Ef
        if keep:
            values.insert(0, Y)
            zs.insert(0, Z)
    return TreeResult(Y, laws, values, zs, "lattice")


def _full(dp: DiscreteProblem, keep: bool) -> TreeResult:
    N, K = dp.N, dp.K
    probs = [np.asarray(dp.mu0, dtype=float)]
    for k in range(K):
        last = np.arange(len(probs[-1])) % N
        probs.append((probs[-1][:, None] * dp.P[k][:, last].T).ravel())
    laws = np.stack([np.bincount(np.arange(len(q)) % N, weights=q, minlength=N) for q in probs])
    n_leaves = N ** (K + 1)
    if dp.xi.kind == "markovian":
        Y = dp.xi.g[np.arange(n_leaves) % N].astype(float)
    else:
        Y = np.empty(n_leaves)
        chunk = 1 << 18
        for lo in range(0, n_leaves, chunk):
            idx = np.arange(lo, min(lo + chunk, n_leaves))
            Y[idx] = dp.xi.functional(_decode(idx, N, K + 1))
    values = [Y] if keep else None
    zs = [] if keep else None
    for k in range(K - 1, -1, -1):
        P = dp.P[k]
        children = Y.reshape(-1, N)
        last = np.arange(children.shape[0]) % N
        pc = P[:, last].T
        yhat = np.sum(pc * children, axis=1)
        R = children - yhat[:, None]
        Z = np.einsum("mab,mb->ma", _regression_maps(P)[last], R)
        rows = np.column_stack([last, yhat, Z])
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        inv = inv.ravel()
        w = np.bincount(inv, weights=probs[k], minlength=len(uniq))
        u_state = uniq[:, 0].astype(np.int64)
        Ef = _meanfield_step(dp.f, dp.times[k], w, u_state, uniq[:, 1], uniq[:, 2:],
                             u_state, uniq[:, 1], uniq[:, 2:])
        Y = yhat + dp.dt * Ef[inv]
        if keep:
            values.insert(0, Y)
            zs.insert(0, Z)
    return TreeResult(Y, laws, values, zs, "full")


def hitting_probability(P: np.ndarray, mu0, target: int) -> float:
    """P(the discrete chain visits ``target`` at some step 0..K) via stay-probabilities."""
    N = P.shape[1]
    keep = np.ones(N, dtype=bool)
    keep[target] = False
    q = np.where(keep, np.asarray(mu0, dtype=float), 0.0)
    for Pk in P:
        q = (Pk @ q) * keep
    return 1.0 - float(q.sum())


# ---------------------------------------------------------------- closed forms

FORMS = ("zero_driver", "pure_meanfield_exp", "linear_decay")


def closed_form(name: str, params: dict) -> Callable:
    """Analytic u(t)_state for three reference problems.

    zero_driver: params ``gen``, ``g``; u(t) = P(t, T)^T g.
    pure_meanfield_exp (f = y', xi = c): u_i(t) = c e^{T - t}; params ``c``, ``T``.
    linear_decay (f = -y, xi = c): u_i(t) = c e^{-(T - t)}; params ``c``, ``T``.
    """
    if name == "zero_driver":
        gen, g = params["gen"], np.asarray(params["g"], dtype=float)
        if g.shape != (gen.N,):
            raise DimensionMismatch("g must have one entry per state")
        return lambda t, state: float(transition_matrix(gen, t, gen.T)[:, state] @ g)
    if name == "pure_meanfield_exp":
        c, T = float(params["c"]), float(params["T"])
        return lambda t, state: c * math.exp(T - t)
    if name == "linear_decay":
        c, T = float(params["c"]), float(params["T"])
        return lambda t, state: c * math.exp(-(T - t))
    raise UnknownForm(f"unknown closed form {name!r}; expected one of {FORMS}")


def closed_form_grid(name: str, params: dict, grid, N: int) -> np.ndarray:
    fn = closed_form(name, params)
    return np.array([[fn(t, i) for i in range(N)] for t in grid])
