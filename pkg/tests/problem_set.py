"""Problems shared by the unit and acceptance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mfbsde.bsde import (
    Driver,
    MeanFieldProblem,
    TerminalCondition,
    linear_decay_driver,
    pure_meanfield_driver,
    zero_driver,
)
from mfbsde.chain import validate_generator
from mfbsde.dsl import DriverExpr

A2 = [[-1.0, 2.0], [1.0, -2.0]]
RATE1 = [[-1.0, 1.0], [1.0, -1.0]]


@dataclass(frozen=True)
class Case:
    name: str
    problem: MeanFieldProblem
    deterministic: bool  # u(t) has equal entries, so Y is a function of t only


def _expr(gen, text, C):
    return DriverExpr.parse(text, C, gen.N).to_driver(gen)


def acceptance_problems() -> list[Case]:
    g2 = validate_generator([A2], 1.0)
    g3 = validate_generator(
        [[[-1.0, 0.5, 0.2], [0.6, -1.5, 0.8], [0.4, 1.0, -1.0]],
         [[-2.0, 0.3, 1.0], [1.5, -0.8, 0.5], [0.5, 0.5, -1.5]]],
        1.0, starts=[0.0, 0.4])
    g4 = validate_generator([[[-1.2, 0.4, 0.3, 0.5], [0.5, -1.0, 0.2, 0.3],
                              [0.3, 0.3, -0.9, 0.4], [0.4, 0.3, 0.4, -1.2]]], 1.0)
    mu2 = [0.3, 0.7]
    mk = TerminalCondition.markovian
    return [
        Case("zero_driver", MeanFieldProblem(g2, mu2, mk([1.0, -0.5]), zero_driver()), False),
        Case("pure_meanfield", MeanFieldProblem(g2, mu2, mk([1.0, 1.0]), pure_meanfield_driver()), True),
        Case("linear_decay", MeanFieldProblem(g2, mu2, mk([2.0, 2.0]), linear_decay_driver()), True),
        Case("tanh_snorm_2", MeanFieldProblem(
            g2, mu2, mk([1.0, -0.5]),
            _expr(g2, "0.5*tanh(yp) - 0.3*y + 0.2*snorm(z) + 0.1*cos(t)", 1.0)), False),
        Case("piecewise_3", MeanFieldProblem(
            g3, [0.2, 0.5, 0.3], mk([0.5, -1.0, 2.0]),
            _expr(g3, "0.4*sin(yp) - 0.2*max(y, 0) + 0.2*snorm_p(zp) - 0.1*abs(z2 - z1)", 1.0)), False),
        Case("minmax_4", MeanFieldProblem(
            g4, [0.25, 0.25, 0.25, 0.25], mk([1.0, 0.0, -1.0, 0.5]),
            _expr(g4, "0.3*min(yp, y) + 0.2*tanh(snorm(z)) - 0.1*snorm_p(zp) + 0.2*sin(3*t)", 1.0)), False),
    ]


def random_generator(rng, N, n_segments=1, T=1.0, rate_scale=2.0, min_rate=0.0):
    """Random valid generator; off-diagonal rates uniform on [min_rate, min_rate + rate_scale)."""
    mats = []
    for _ in range(n_segments):
        A = min_rate + rate_scale * rng.random((N, N))
        np.fill_diagonal(A, 0.0)
        np.fill_diagonal(A, -A.sum(axis=0))
        mats.append(A)
    starts = np.concatenate([[0.0], np.sort(rng.uniform(0, T, n_segments - 1))])
    return validate_generator(mats, T, starts=starts)


def random_law(rng, N):
    w = rng.random(N) + 0.05
    return w / w.sum()


def random_lipschitz_problem(rng, N=None, T=1.0) -> MeanFieldProblem:
    """Driver a1 tanh(y') + a2 y + a3 ||z'||_{i'} + a4 sin(||z||_i) + a5 cos(t) + a6 (y' - y) with sum|a_k| <= 1."""
    N = N or int(rng.integers(2, 5))
    gen = random_generator(rng, N, n_segments=int(rng.integers(1, 3)), T=T)
    a = rng.uniform(-1, 1, 6)
    a *= rng.uniform(0.3, 1.0) / np.abs(a).sum()
    a0, a1, a2, a3, a4, a5 = (float(v) for v in a)
    text = (f"{a0!r}*tanh(yp) + {a1!r}*y + {a2!r}*snorm_p(zp) + {a3!r}*sin(snorm(z))"
            f" + {a4!r}*cos(t) + {a5!r}*(yp - y)")
    C = float(np.abs(a).sum())
    f = _expr(gen, text, C)
    g = rng.uniform(-1, 1, N)
    return MeanFieldProblem(gen, random_law(rng, N), TerminalCondition.markovian(g), f)


def comparison_pair(rng):
    """(p1, p2) with xi1 >= xi2 and f1 = f2 + h, h >= 0.

    f2 is nondecreasing in y', does not depend on z', and depends on z only
    through beta ||z||_i with |beta| <= sqrt(min positive rate); this is the
    class on which ordering of solutions holds (see test_comparison for
    counterexamples outside it).
    """
    N = int(rng.integers(2, 5))
    gen = random_generator(rng, N, n_segments=int(rng.integers(1, 3)), min_rate=0.2)
    off = gen.matrices[:, ~np.eye(N, dtype=bool)]
    beta = rng.uniform(-1, 1) * math.sqrt(off.min())
    beta = float(beta)
    a1, a2 = rng.uniform(0, 0.8), rng.uniform(-0.8, 0.8)
    a3, a4 = rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)
    d0, d1 = (float(v) for v in rng.uniform(0, 0.3, 2))
    base = f"{a1!r}*tanh(yp) + {a2!r}*y + {beta!r}*snorm(z) + {a3!r}*sin(3*t) + {a4!r}*cos(y)"
    C = a1 + abs(a2) + abs(beta) + abs(a4)
    f2 = _expr(gen, base, C)
    f1 = _expr(gen, f"{base} + {d0!r} + {d1!r}*(1 + sin(5*t))", C)
    g2 = rng.uniform(-1, 1, N)
    g1 = g2 + rng.uniform(0, 0.5, N) * (rng.random(N) < 0.7)
    mu0 = random_law(rng, N)
    p1 = MeanFieldProblem(gen, mu0, TerminalCondition.markovian(g1), f1)
    p2 = MeanFieldProblem(gen, mu0, TerminalCondition.markovian(g2), f2)
    return p1, p2


def driver(fn, C=1.0, description=""):
    return Driver(fn, C, description)
