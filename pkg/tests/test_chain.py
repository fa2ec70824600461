import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from mfbsde.chain import (
    ChainPath,
    Generator,
    evolve_law,
    phi,
    sample_path,
    sample_paths,
    sample_paths_chunked,
    seminorm,
    seminorm_batch,
    seminorm_sq,
    stationary_law,
    transition_matrix,
    validate_generator,
)
from mfbsde.errors import (
    BadSegmentTimes,
    ColumnSumNonzero,
    DimensionMismatch,
    NegativeOffDiagonal,
    NotOnSimplex,
)
from problem_set import A2, RATE1, random_generator


@st.composite
def generators(draw, max_n=6):
    N = draw(st.integers(2, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    n_seg = draw(st.integers(1, 3))
    return random_generator(np.random.default_rng(seed), N, n_segments=n_seg)


# ---------------------------------------------------------------- validation


def test_column_sum_error_names_column_and_segment():
    bad = [[-1.0, 2.1], [1.0, -2.0]]
    with pytest.raises(ColumnSumNonzero) as e:
        validate_generator([A2, bad], 1.0, starts=[0.0, 0.5])
    assert e.value.column == 1 and e.value.segment == 1
    assert "column 1" in str(e.value) and "segment 1" in str(e.value)


def test_negative_rate_rejected():
    with pytest.raises(NegativeOffDiagonal) as e:
        validate_generator([[1.0, 1.0], [-1.0, -1.0]], 1.0)
    assert (e.value.row, e.value.column) == (1, 0)


@pytest.mark.parametrize("n_seg, starts", [(1, [0.1]), (2, [0.0, 0.0]), (2, [0.0, 1.0]), (2, [0.0])])
def test_bad_segment_times(n_seg, starts):
    with pytest.raises(BadSegmentTimes):
        validate_generator([A2] * n_seg, 1.0, starts=starts)


def test_shape_errors():
    with pytest.raises(DimensionMismatch):
        validate_generator([[0.0, 0.0, 0.0]], 1.0)
    with pytest.raises(DimensionMismatch):
        validate_generator([[0.0]], 1.0)


def test_segment_lookup_is_right_continuous():
    gen = validate_generator([A2, RATE1], 1.0, starts=[0.0, 0.5])
    assert gen.segment_index(0.4999) == 0
    assert gen.segment_index(0.5) == 1
    assert gen.segment_index(1.0) == 1
    np.testing.assert_array_equal(gen.rate(0.75), RATE1)


def test_generator_round_trips_through_json():
    gen = validate_generator([A2, RATE1], 2.0, starts=[0.0, 0.7])
    back = Generator.from_dict(json.loads(gen.to_json()))
    np.testing.assert_array_equal(back.matrices, gen.matrices)
    np.testing.assert_array_equal(back.starts, gen.starts)
    assert back.T == gen.T


# ---------------------------------------------------------------- Phi and seminorm


@settings(max_examples=60, deadline=None)
@given(generators(), st.data())
def test_phi_properties(gen, data):
    t = data.draw(st.floats(0, gen.T))
    i = data.draw(st.integers(0, gen.N - 1))
    P = phi(gen, t, i)
    assert np.allclose(P, P.T, atol=0)
    assert np.linalg.eigvalsh(P).min() >= -1e-10
    np.testing.assert_allclose(P @ np.ones(gen.N), 0.0, atol=1e-12)
    z = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=gen.N, max_size=gen.N)))
    c = data.draw(st.floats(-100, 100))
    assert seminorm(z + c, gen, t, i) == pytest.approx(seminorm(z, gen, t, i), abs=1e-9)


def test_seminorm_is_weighted_sum_of_squared_differences():
    rng = np.random.default_rng(3)
    gen = random_generator(rng, 5)
    z = rng.standard_normal(5)
    for i in range(5):
        a = gen.rate(0.0)[:, i]
        direct = sum(a[j] * (z[j] - z[i]) ** 2 for j in range(5) if j != i)
        assert seminorm_sq(z, gen, 0.0, i) == pytest.approx(direct, rel=1e-12)


def test_seminorm_batch_matches_scalar():
    rng = np.random.default_rng(4)
    gen = random_generator(rng, 4, n_segments=2)
    z = rng.standard_normal((7, 4))
    states = rng.integers(0, 4, 7)
    got = seminorm_batch(gen.phi_table(0.9), z, states)
    want = [seminorm(z[k], gen, 0.9, states[k]) for k in range(7)]
    np.testing.assert_allclose(got, want, rtol=1e-12)


# ---------------------------------------------------------------- laws


def test_two_state_transition_closed_form():
    # rates a: 0->1, b: 1->0; P(0->0, t) = (b + a e^{-(a+b)t}) / (a+b)
    a, b, t = 1.0, 2.0, 0.7
    gen = validate_generator([A2], 1.0)
    P = transition_matrix(gen, 0.0, t)
    assert P[0, 0] == pytest.approx((b + a * np.exp(-(a + b) * t)) / (a + b), rel=1e-13)
    np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(generators(), st.floats(0, 1), st.floats(0, 1))
def test_transition_semigroup(gen, s, u):
    s, u = sorted((s, u))
    lhs = transition_matrix(gen, 0.0, u)
    rhs = transition_matrix(gen, s, u) @ transition_matrix(gen, 0.0, s)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_transition_against_product_of_segment_exponentials():
    gen = validate_generator([A2, RATE1], 1.0, starts=[0.0, 0.3])
    want = scipy.linalg.expm(np.array(RATE1) * 0.6) @ scipy.linalg.expm(np.array(A2) * 0.2)
    np.testing.assert_allclose(transition_matrix(gen, 0.1, 0.9), want, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(generators())
def test_evolved_law_stays_on_simplex(gen):
    mu0 = np.full(gen.N, 1.0 / gen.N)
    path = evolve_law(gen, mu0, np.linspace(0, gen.T, 41))
    assert np.all(path.laws >= 0)
    np.testing.assert_allclose(path.laws.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(path.laws[-1], transition_matrix(gen, 0, gen.T) @ mu0, atol=1e-12)


def test_evolve_law_rejects_off_simplex():
    gen = validate_generator([A2], 1.0)
    with pytest.raises(NotOnSimplex):
        evolve_law(gen, [0.6, 0.6], [0.0, 1.0])


def test_stationary_law_is_fixed():
    gen = validate_generator([A2], 1.0)
    pi = stationary_law(gen)
    np.testing.assert_allclose(pi, [2 / 3, 1 / 3], atol=1e-14)
    np.testing.assert_allclose(evolve_law(gen, pi, [0.0, 1.0]).laws[-1], pi, atol=1e-14)


# ---------------------------------------------------------------- sampling


def test_single_path_structure():
    gen = validate_generator([A2, RATE1], 3.0, starts=[0.0, 1.0])
    path = sample_path(gen, 0, seed=11)
    assert all(0 < t < 3.0 for t in path.times)
    assert list(path.times) == sorted(path.times)
    prev = 0
    for s in path.states:
        assert s != prev
        prev = s
    back = ChainPath.from_dict(path.to_dict())
    assert back == path
    assert path.to_csv().splitlines()[0] == "jump_time,new_state"


def test_jump_count_mean_is_poisson():
    gen = validate_generator([RATE1], 1.0)
    batch = sample_paths(gen, 40_000, seed=5, x0=0)
    n = batch.n_jumps
    assert abs(n.mean() - 1.0) < 4 * np.sqrt(1.0 / len(n))
    assert abs(n.var() - 1.0) < 0.05


def test_batch_law_matches_transition_matrix():
    gen = validate_generator([A2, RATE1], 1.0, starts=[0.0, 0.4])
    mu0 = np.array([0.3, 0.7])
    batch = sample_paths(gen, 60_000, seed=2, mu0=mu0)
    freq = np.bincount(batch.terminal_states, minlength=2) / len(batch)
    want = transition_matrix(gen, 0, 1) @ mu0
    se = np.sqrt(want * (1 - want) / len(batch))
    assert np.all(np.abs(freq - want) < 4 * se)


def test_scalar_and_vector_samplers_agree_in_distribution():
    gen = validate_generator([A2], 1.0)
    loop = [sample_path(gen, 1, seed=s).state_at(1.0) for s in range(3000)]
    vec = sample_paths(gen, 3000, seed=0, x0=1).terminal_states
    p = transition_matrix(gen, 0, 1)[0, 1]
    se = np.sqrt(p * (1 - p) / 3000)
    assert abs(np.mean(np.array(loop) == 0) - p) < 4 * se
    assert abs(np.mean(vec == 0) - p) < 4 * se


def test_batch_paths_are_consistent():
    gen = validate_generator([A2, RATE1], 1.0, starts=[0.0, 0.5])
    batch = sample_paths(gen, 200, seed=9, x0=0)
    for p in range(0, 200, 17):
        path = batch.path(p)
        assert path.state_at(1.0) == batch.terminal_states[p]
        assert len(path.times) == batch.n_jumps[p]


def test_chunked_sampling_ignores_worker_count():
    gen = validate_generator([A2], 1.0)
    a = sample_paths_chunked(gen, 10_000, seed=3, x0=0, chunk=1500, workers=1)
    b = sample_paths_chunked(gen, 10_000, seed=3, x0=0, chunk=1500, workers=4)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.offsets, b.offsets)
