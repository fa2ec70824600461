"""Mean-field BSDEs on a finite-state chain, Markovian representation.

For Markovian terminal data xi = g . X_T the solution is Y_t = u(t) . X_{t-}
and Z_t = u(t) (up to Phi-null directions), where u solves the backward ODE

    u_i'(t) = -(A(t)^T u)_i - sum_{i'} mu_{i'}(t) f(t, i', u_{i'}, u, i, u_i, u),

with mu(t) the marginal law of the chain.  All solvers here integrate this
system backward with classical RK4 on a uniform grid.  The four stage
values of each step are kept, so Picard schemes can freeze the primed
arguments stage-by-stage; a converged Picard iteration then reproduces the
direct solver's discrete solution exactly.

Driver callables take ``(t, ip, yp, zp, i, y, z)`` and must broadcast over
numpy arrays: ``ip``/``i`` are integer state indices, ``yp``/``y`` values,
``zp``/``z`` row vectors along the last axis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PPoly

from .chain import (
    Generator,
    StateLawPath,
    _check_simplex,
    evolve_law,
    sample_paths_chunked,
    seminorm_batch,
)
from .errors import (
    ConvergenceWarning,
    DimensionMismatch,
    GridTooCoarse,
    HypothesisViolated,
    LipschitzWarning,
    NonFiniteValue,
    ValidationError,
)
from .martingale import integrate_state_function, stochastic_integral_batch

VARIANTS = ("y", "zprime")


@dataclass(frozen=True)
class Driver:
    eval: Callable
    lipschitz: float = 0.0
    description: str = ""

    def __call__(self, t, ip, yp, zp, i, y, z):
        return self.eval(t, ip, yp, zp, i, y, z)


def zero_driver() -> Driver:
    return Driver(lambda t, ip, yp, zp, i, y, z: np.zeros(np.broadcast(ip, yp, i, y).shape), 0.0, "0")


def pure_meanfield_driver() -> Driver:
    return Driver(lambda t, ip, yp, zp, i, y, z: yp + 0.0 * y, 1.0, "yp")


def linear_decay_driver() -> Driver:
    return Driver(lambda t, ip, yp, zp, i, y, z: -y + 0.0 * yp, 1.0, "-y")


NAMED_DRIVERS = {
    "zero": zero_driver,
    "pure_meanfield": pure_meanfield_driver,
    "linear_decay": linear_decay_driver,
}


@dataclass(frozen=True)
class TerminalCondition:
    """xi = g . X_T (Markovian) or an arbitrary functional of the state sequence."""

    g: np.ndarray | None = None
    functional: Callable | None = None
    bound: float = math.inf

    @classmethod
    def markovian(cls, g) -> "TerminalCondition":
        g = np.asarray(g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise ValidationError("terminal vector must be finite")
        return cls(g=g, bound=float(np.max(np.abs(g))))

    @classmethod
    def path_functional(cls, fn, bound) -> "TerminalCondition":
        return cls(functional=fn, bound=float(bound))

    @property
    def kind(self) -> str:
        return "markovian" if self.g is not None else "path"


@dataclass(frozen=True)
class MeanFieldProblem:
    gen: Generator
    mu0: np.ndarray
    xi: TerminalCondition
    f: Driver

    def __post_init__(self):
        object.__setattr__(self, "mu0", _check_simplex(self.mu0, self.gen.N))
        if self.xi.g is not None and self.xi.g.shape != (self.gen.N,):
            raise DimensionMismatch(
                f"terminal vector has length {self.xi.g.size}, generator has N={self.gen.N}"
            )

    @property
    def T(self) -> float:
        return self.gen.T

    @property
    def N(self) -> int:
        return self.gen.N

    def with_(self, **kw) -> "MeanFieldProblem":
        d = dict(gen=self.gen, mu0=self.mu0, xi=self.xi, f=self.f)
        d.update(kw)
        return MeanFieldProblem(**d)


@dataclass
class MarkovianSolution:
    grid: np.ndarray  # (K+1,) uniform output grid
    u: np.ndarray  # (K+1, N)
    law: StateLawPath
    mesh: _Mesh  # integration mesh: the output grid plus segment starts falling between grid points
    mesh_u: np.ndarray  # (M+1, N) u on the integration mesh
    stages: np.ndarray  # (M, 4, N): RK4 stage values of each backward step

    @property
    def z_representative(self) -> np.ndarray:
        return self.u

    @property
    def steps(self) -> int:
        return len(self.grid) - 1

    def y0(self, mu0=None) -> float:
        """E[Y_0] under mu0 (defaults to the forward law at 0)."""
        mu = self.law.laws[0] if mu0 is None else np.asarray(mu0)
        return float(mu @ self.u[0])

    def to_csv(self) -> str:
        rows = ["t,state,u,mu"]
        for k, t in enumerate(self.grid):
            for i in range(self.u.shape[1]):
                rows.append(f"{float(t)!r},{i},{float(self.u[k, i])!r},{float(self.law.laws[k, i])!r}")
        return "\n".join(rows) + "\n"


@dataclass
class PicardDiagnostics:
    variant: str
    u_gaps: list = field(default_factory=list)
    z_gaps: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    converged: bool = False
    tol: float = 1e-9
    history: list | None = None

    @property
    def iterations(self) -> list:
        return list(zip(self.u_gaps, self.z_gaps, self.ratios))

    @property
    def n_iter(self) -> int:
        return len(self.u_gaps)

    @property
    def gaps(self) -> list:
        return [a + b for a, b in zip(self.u_gaps, self.z_gaps)]

    def to_csv(self) -> str:
        rows = ["iter,u_gap,z_gap,ratio"]
        for n, (a, b, r) in enumerate(self.iterations, start=1):
            rows.append(f"{n},{float(a)!r},{float(b)!r},{float(r)!r}")
        return "\n".join(rows) + "\n"


def meanfield_terms(f: Driver, t, law, yp, zp, y, z) -> np.ndarray:
    """Vector over own states i of sum_{i'} law_{i'} f(t, i', yp_{i'}, zp, i, y_i, z)."""
    N = len(law)
    states = np.arange(N)
    table = f.eval(t, states[:, None], np.asarray(yp)[:, None], zp, states[None, :],
                   np.asarray(y)[None, :], z)
    table = np.broadcast_to(table, (N, N))
    return law @ table


def meanfield_expectation(law, u, z, f: Driver, t, i, y, z_outer) -> float:
    """E'[f] at own state i: sum_{i'} law(i') f(t, i', u_{i'}, z, i, y, z_outer)."""
    law = np.asarray(law, dtype=float)
    ip = np.arange(len(law))
    vals = np.broadcast_to(f.eval(t, ip, np.asarray(u, dtype=float), np.asarray(z, dtype=float),
                                  np.full(len(law), i), np.full(len(law), float(y)),
                                  np.asarray(z_outer, dtype=float)), (len(law),))
    return float(law @ vals)


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class _Mesh:
    grid: np.ndarray
    laws: np.ndarray
    mid_laws: np.ndarray
    rates_t: np.ndarray  # (K, N, N) transposed rate matrix per cell
    out: np.ndarray  # positions of the uniform output grid within ``grid``

    @property
    def K(self):
        return len(self.grid) - 1

    def stage(self, k, s):
        """(driver time, law) of RK stage s in cell k, stages ordered t_{k+1}, mid, mid, t_k."""
        if s == 0:
            # just inside the cell so the driver's Phi uses this cell's segment
            return np.nextafter(self.grid[k + 1], self.grid[k]), self.laws[k + 1]
        if s == 3:
            return self.grid[k], self.laws[k]
        return 0.5 * (self.grid[k] + self.grid[k + 1]), self.mid_laws[k]


def _mesh(p: MeanFieldProblem, steps: int) -> _Mesh:
    if steps < 2:
        raise ValidationError(f"need at least 2 steps, got {steps}")
    uniform = np.linspace(0.0, p.T, steps + 1)
    # a rate switch inside a cell would cost RK4 its order, so cut cells there
    h = p.T / steps
    near = np.abs(p.gen.starts[1:, None] - uniform[None, :]).min(axis=1) if p.gen.n_segments > 1 else []
    cuts = [s for s, d in zip(p.gen.starts[1:], near) if d > 1e-9 * h]
    grid = np.union1d(uniform, cuts) if cuts else uniform
    mids = 0.5 * (grid[:-1] + grid[1:])
    fine = np.empty(2 * len(grid) - 1)
    fine[::2] = grid
    fine[1::2] = mids
    law = evolve_law(p.gen, p.mu0, fine).laws
    rates_t = np.transpose(p.gen.matrices[p.gen.segment_index(mids)], (0, 2, 1))
    out = np.searchsorted(grid, uniform)
    return _Mesh(grid, law[::2], law[1::2], rates_t, out)


def _solution(mesh: _Mesh, u: np.ndarray, stages: np.ndarray) -> MarkovianSolution:
    grid = mesh.grid[mesh.out]
    return MarkovianSolution(grid, u[mesh.out], StateLawPath(grid, mesh.laws[mesh.out]), mesh, u, stages)


def _backward(p: MeanFieldProblem, mesh: _Mesh, assemble) -> tuple[np.ndarray, np.ndarray]:
    """RK4 from u(T) = g down to 0; ``assemble(k, s, U)`` returns the
    (yp, zp, y, z) driver arguments at stage s given live stage value U."""
    K, N = mesh.K, p.N
    u = np.empty((K + 1, N))
    stages = np.empty((K, 4, N))
    u[K] = p.xi.g
    f = p.f

    def rhs(k, s, U):
        t, law = mesh.stage(k, s)
        yp, zp, y, z = assemble(k, s, U)
        return mesh.rates_t[k] @ U + meanfield_terms(f, t, law, yp, zp, y, z)

    for k in range(K - 1, -1, -1):
        h = mesh.grid[k + 1] - mesh.grid[k]
        U1 = u[k + 1]
        K1 = rhs(k, 0, U1)
        U2 = U1 + 0.5 * h * K1
        K2 = rhs(k, 1, U2)
        U3 = U1 + 0.5 * h * K2
        K3 = rhs(k, 2, U3)
        U4 = U1 + h * K3
        K4 = rhs(k, 3, U4)
        u[k] = U1 + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
        stages[k] = (U1, U2, U3, U4)
        if not np.all(np.isfinite(u[k])):
            raise NonFiniteValue(f"non-finite value at t={mesh.grid[k]!r} (driver blow-up?)")
    return u, stages


def _require_markovian(p):
    if p.xi.kind != "markovian":
        raise ValidationError("Markovian solvers need xi = g . X_T; use oracles.tree_solve")


def apriori_bound(p: MeanFieldProblem, n_times: int = 101) -> float:
    """exp((2C+1)T) (|g|_inf + T max|f(t, ., 0, 0, ., 0, 0)|), a coarse sup bound on u."""
    N = p.N
    zero = np.zeros(N)
    f0 = 0.0
    for t in np.linspace(0, p.T, n_times):
        tab = p.f.eval(t, np.arange(N)[:, None], np.zeros((N, 1)), zero,
                       np.arange(N)[None, :], np.zeros((1, N)), zero)
        f0 = max(f0, float(np.max(np.abs(tab))))
    C = p.f.lipschitz
    return math.exp((2 * C + 1) * p.T) * (float(np.max(np.abs(p.xi.g))) + p.T * f0)


def solve_markovian(p: MeanFieldProblem, steps: int = 200, check_grid: bool = False,
                    tol: float = 1e-9) -> MarkovianSolution:
    """Forward law, then backward RK4 with every argument live."""
    _require_markovian(p)
    mesh = _mesh(p, steps)
    u, stages = _backward(p, mesh, lambda k, s, U: (U, U, U, U))
    sol = _solution(mesh, u, stages)
    if check_grid:
        coarse = solve_markovian(p, max(steps // 2, 2))
        change = float(np.max(np.abs(coarse.u[0] - u[0])))
        if change > 10 * tol:
            warnings.warn(f"halving K from {steps} moves u(0) by {change:.3e}", GridTooCoarse,
                          stacklevel=2)
    return sol


def _z_gap(du: np.ndarray, mesh: _Mesh, gen: Generator) -> float:
    """Grid-L2 (trapezoid) in time of E||du||^2 under the forward law."""
    seg = gen.segment_index(mesh.grid)
    phis = gen.phi_tables[seg]  # (K+1, N, N, N)
    q = np.einsum("ka,kiab,kb->ki", du, phis, du)
    per_t = np.sum(mesh.laws * np.maximum(q, 0.0), axis=1)
    return float(math.sqrt(max(np.trapezoid(per_t, mesh.grid), 0.0)))


def _energy(du: np.ndarray, mesh: _Mesh) -> float:
    """int_0^T E|Y^n - Y^{n-1}|^2 ds, the quantity the factorial estimate controls."""
    return float(np.trapezoid(np.sum(mesh.laws * du ** 2, axis=1), mesh.grid))


def _as_stages(z0, mesh: _Mesh, N) -> np.ndarray:
    """Stage values (M, 4, N) from a grid function on the output grid or on the mesh."""
    z0 = np.asarray(z0, dtype=float)
    M, K = mesh.K, len(mesh.out) - 1
    if z0.shape == (M, 4, N):
        return z0
    if z0.shape == (K + 1, N):
        if M != K:
            z0 = np.column_stack([np.interp(mesh.grid, mesh.grid[mesh.out], z0[:, j]) for j in range(N)])
        mid = 0.5 * (z0[:-1] + z0[1:])
        return np.stack([z0[1:], mid, mid, z0[:-1]], axis=1)
    raise DimensionMismatch(f"z0 must have shape ({K + 1}, {N}) or ({M}, 4, {N}), got {z0.shape}")


def picard_solve(p: MeanFieldProblem, steps: int = 200, variant: str = "y", max_iter: int = 60,
                 tol: float = 1e-9, z0=None, keep_history: bool = False):
    """Successive approximations.

    ``variant="y"`` freezes (y', z', y) at the previous iterate and solves for
    the new z; it starts from Y = 0.  ``variant="zprime"`` freezes only z' and
    keeps (y', y, z) live; it starts from Z = ``z0`` (default 0), given as a
    grid function of shape (K+1, N) on the output grid or as stage values
    (M, 4, N) on the integration mesh (``solution.stages`` has this shape).

    Returns ``(solution, diagnostics)``.  If ``max_iter`` is hit the last
    iterate is returned with ``diagnostics.converged = False`` and a
    :class:`ConvergenceWarning`.
    """
    _require_markovian(p)
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    mesh = _mesh(p, steps)
    K, N = mesh.K, p.N
    n_out = len(mesh.out)
    diag = PicardDiagnostics(variant, tol=tol, history=[np.zeros((n_out, N))] if keep_history else None)
    prev_u = np.zeros((K + 1, N))
    if variant == "y":
        frozen = np.zeros((K, 4, N))
        assemble = lambda k, s, U: (frozen[k, s], frozen[k, s], frozen[k, s], U)  # noqa: E731
    else:
        frozen = np.zeros((K, 4, N)) if z0 is None else _as_stages(z0, mesh, N)
        assemble = lambda k, s, U: (U, frozen[k, s], U, U)  # noqa: E731
    prev_total = None
    u = prev_u
    for _ in range(max_iter):
        u, stages = _backward(p, mesh, assemble)
        du = u - prev_u
        ug = float(np.max(np.abs(du)))
        zg = _z_gap(du, mesh, p.gen)
        total = ug + zg
        diag.u_gaps.append(ug)
        diag.z_gaps.append(zg)
        diag.ratios.append(total / prev_total if prev_total else math.nan)
        diag.energies.append(_energy(du, mesh))
        if keep_history:
            diag.history.append(u[mesh.out].copy())
        prev_total = total
        prev_u = u
        frozen = stages
        if total <= tol:
            diag.converged = True
            break
    if not diag.converged:
        warnings.warn(f"Picard ({variant}) did not reach tol={tol} in {max_iter} iterations; "
                      f"last gap {prev_total:.3e}", ConvergenceWarning, stacklevel=2)
    sol = _solution(mesh, u, frozen)
    return sol, diag


def factorial_bound(C: float, n_terms: int) -> np.ndarray:
    """(c e^c)^n / n! for n = 0..n_terms-1 with c = max(6 C^2, 1)."""
    c = max(6.0 * C * C, 1.0)
    n = np.arange(n_terms)
    logs = n * (math.log(c) + c) - np.array([math.lgamma(k + 1) for k in n])
    with np.errstate(over="ignore"):
        return np.exp(logs)


# ---------------------------------------------------------------- residuals


def _driver_values(p: MeanFieldProblem, t, law, u) -> np.ndarray:
    return meanfield_terms(p.f, t, law, u, u, u, u)


def interpolants(sol: MarkovianSolution, p: MeanFieldProblem):
    """Piecewise polynomials on the solution grid: cubic Hermite u(t) built from
    the ODE slopes, and a per-cell quadratic through E'[f] at (t_k, mid, t_{k+1})."""
    mesh, u = sol.mesh, sol.mesh_u
    grid = mesh.grid
    K, N = len(grid) - 1, u.shape[1]
    seg = p.gen.segment_index(0.5 * (grid[:-1] + grid[1:]))
    At = np.transpose(p.gen.matrices[seg], (0, 2, 1))
    h = np.diff(grid)[:, None]
    F_left = np.empty((K, N))
    F_right = np.empty((K, N))
    F_mid = np.empty((K, N))
    for k in range(K):
        F_left[k] = _driver_values(p, grid[k], mesh.laws[k], u[k])
        F_right[k] = _driver_values(p, np.nextafter(grid[k + 1], grid[k]), mesh.laws[k + 1], u[k + 1])
    d0 = -(np.einsum("kij,kj->ki", At, u[:-1]) + F_left)
    d1 = -(np.einsum("kij,kj->ki", At, u[1:]) + F_right)
    du = (u[1:] - u[:-1]) / h
    c2 = (3 * du - 2 * d0 - d1) / h
    c3 = (d0 + d1 - 2 * du) / h ** 2
    u_pp = PPoly(np.stack([c3, c2, d0, u[:-1]]), grid)
    mids = 0.5 * (grid[:-1] + grid[1:])
    u_mid = u_pp(mids)
    for k in range(K):
        F_mid[k] = _driver_values(p, mids[k], mesh.mid_laws[k], u_mid[k])
    a = 2 * (F_right - 2 * F_mid + F_left) / h ** 2
    b = (4 * F_mid - 3 * F_left - F_right) / h
    F_pp = PPoly(np.stack([a, b, F_left]), grid)
    return u_pp, F_pp


@dataclass
class ResidualStats:
    mean: float
    stderr: float
    max_abs: float
    n_paths: int
    budget: float

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == 0 else math.inf
        return self.mean / self.stderr

    @property
    def within_3se(self) -> bool:
        return abs(self.mean) <= 3 * self.stderr

    @property
    def within_budget(self) -> bool:
        return abs(self.mean) <= self.budget

    @property
    def passed(self) -> bool:
        return self.within_3se and self.within_budget


def residual_samples(sol: MarkovianSolution, p: MeanFieldProblem, n_paths: int, seed) -> np.ndarray:
    """R = xi + int E'[f] ds - int Z dM - Y_0 on n_paths sampled chain paths."""
    u_pp, F_pp = interpolants(sol, p)
    u_anti = u_pp.antiderivative()
    F_anti = F_pp.antiderivative()
    batch = sample_paths_chunked(p.gen, n_paths, seed, mu0=p.mu0)
    xi = p.xi.g[batch.terminal_states]
    y0 = sol.mesh_u[0][batch.x0]
    drift = integrate_state_function(F_anti, batch, p.gen)
    mart = stochastic_integral_batch(u_pp, u_anti, batch, p.gen)
    return xi + drift - mart - y0


def residual_check(sol: MarkovianSolution, p: MeanFieldProblem, n_paths: int = 100_000,
                   seed=0, budget: float | None = None) -> ResidualStats:
    """Monte Carlo check of the pathwise BSDE identity.

    ``budget`` bounds |mean residual|; by default it is ten times the
    change in u(0) when the step count is halved.
    """
    r = residual_samples(sol, p, n_paths, seed)
    if budget is None:
        coarse = solve_markovian(p, max(sol.steps // 2, 2))
        budget = max(10 * float(np.max(np.abs(coarse.u[0] - sol.u[0]))), 1e-12)
    sd = float(np.std(r, ddof=1)) if n_paths > 1 else 0.0
    return ResidualStats(float(np.mean(r)), sd / math.sqrt(n_paths), float(np.max(np.abs(r))),
                         n_paths, budget)


# ---------------------------------------------------------------- comparison


@dataclass
class ComparisonResult:
    min_gap: float
    argmin: tuple  # (t, state)
    terminal_ok: bool
    driver_ok: bool
    first_violation: tuple | None  # (t, primed state, state) or (T, state)
    tol: float
    sol1: MarkovianSolution | None = None
    sol2: MarkovianSolution | None = None

    @property
    def hypotheses_ok(self) -> bool:
        return self.terminal_ok and self.driver_ok

    @property
    def ordered(self) -> bool:
        return self.min_gap >= -self.tol

    def report(self) -> str:
        lines = [
            f"terminal_dominance: {'ok' if self.terminal_ok else 'VIOLATED'}",
            f"driver_dominance: {'ok' if self.driver_ok else 'VIOLATED'}",
        ]
        if self.first_violation is not None:
            lines.append(f"first_violation: {self.first_violation}")
        lines += [
            f"min_gap: {self.min_gap!r}",
            f"argmin_t: {self.argmin[0]!r}",
            f"argmin_state: {self.argmin[1]}",
            f"ordered: {self.ordered}",
        ]
        return "\n".join(lines) + "\n"


def compare_solutions(p1: MeanFieldProblem, p2: MeanFieldProblem, steps: int = 200,
                      tol: float = 1e-7, slack: float = 1e-12, strict: bool = False) -> ComparisonResult:
    """Solve both problems and report min over grid and states of u1 - u2.

    Driver dominance f1 >= f2 is checked a posteriori at the second
    solution on every grid point and every (primed, own) state pair.
    """
    _require_markovian(p1)
    _require_markovian(p2)
    if p1.gen is not p2.gen and not (np.array_equal(p1.gen.matrices, p2.gen.matrices)
                                     and np.array_equal(p1.gen.starts, p2.gen.starts)
                                     and p1.T == p2.T):
        raise ValidationError("compared problems must share the generator and horizon")
    if not np.allclose(p1.mu0, p2.mu0, atol=0, rtol=0):
        raise ValidationError("compared problems must share the initial law")
    N = p1.N
    violation = None
    bad = np.flatnonzero(p1.xi.g < p2.xi.g)
    terminal_ok = len(bad) == 0
    if not terminal_ok:
        violation = (p1.T, int(bad[0]))
    s1 = solve_markovian(p1, steps)
    s2 = solve_markovian(p2, steps)
    driver_ok = True
    ip, i = np.arange(N)[:, None], np.arange(N)[None, :]
    for k, t in enumerate(s2.grid):
        u = s2.u[k]
        d = (np.broadcast_to(p1.f.eval(t, ip, u[:, None], u, i, u[None, :], u), (N, N))
             - np.broadcast_to(p2.f.eval(t, ip, u[:, None], u, i, u[None, :], u), (N, N)))
        if np.any(d < -slack):
            a, b = np.argwhere(d < -slack)[0]
            driver_ok = False
            if violation is None:
                violation = (float(t), int(a), int(b))
            break
    gap = s1.u - s2.u
    k, j = np.unravel_index(int(np.argmin(gap)), gap.shape)
    res = ComparisonResult(float(gap[k, j]), (float(s1.grid[k]), int(j)), terminal_ok, driver_ok,
                           violation, tol, s1, s2)
    if strict and not res.hypotheses_ok:
        raise HypothesisViolated(f"comparison hypothesis fails at {violation}", violation)
    return res


# ---------------------------------------------------------------- (A1) spot check


def lipschitz_ratio(f: Driver, gen: Generator, n_pairs: int = 1000, seed=0, scale: float = 2.0) -> float:
    """Largest |f(a) - f(b)| / (|dy'| + ||dz'||_{i'} + |dy| + ||dz||_i) over random pairs."""
    rng = np.random.default_rng(seed)
    N = gen.N
    t = rng.uniform(0, gen.T, n_pairs)
    ip = rng.integers(0, N, n_pairs)
    i = rng.integers(0, N, n_pairs)
    pts = [scale * rng.standard_normal((2, n_pairs)) for _ in range(2)]
    zs = [scale * rng.standard_normal((2, n_pairs, N)) for _ in range(2)]
    best = 0.0
    for m in range(n_pairs):
        phis = gen.phi_table(t[m])
        fa = f.eval(t[m], ip[m], pts[0][0, m], zs[0][0, m], i[m], pts[1][0, m], zs[1][0, m])
        fb = f.eval(t[m], ip[m], pts[0][1, m], zs[0][1, m], i[m], pts[1][1, m], zs[1][1, m])
        den = (abs(pts[0][0, m] - pts[0][1, m]) + abs(pts[1][0, m] - pts[1][1, m])
               + float(seminorm_batch(phis, zs[0][0, m] - zs[0][1, m], ip[m]))
               + float(seminorm_batch(phis, zs[1][0, m] - zs[1][1, m], i[m])))
        if den > 1e-12:
            best = max(best, abs(float(fa) - float(fb)) / den)
    return best


def check_lipschitz(f: Driver, gen: Generator, n_pairs: int = 1000, seed=0) -> float:
    ratio = lipschitz_ratio(f, gen, n_pairs, seed)
    if ratio > 1.05 * f.lipschitz:
        warnings.warn(f"driver {f.description!r}: observed Lipschitz ratio {ratio:.4g} exceeds "
                      f"declared C={f.lipschitz}", LipschitzWarning, stacklevel=2)
    return ratio
