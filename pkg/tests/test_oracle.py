import itertools

import numpy as np
import pytest

from chaoskit import oracle
from chaoskit.oracle import (build_generator, check_csiszar, check_grunbaum,
                             check_w1_isometry, evolve_to_csv, exact_evolve,
                             exact_marginal, exact_moment_measure,
                             finite_choose_leader, finite_cyclic_collision,
                             index_state, nonlinear_finite_ode, state_index,
                             w1_lp)

GEN = np.random.default_rng(77)


def rand_kernel(m, gen=GEN):
    k = gen.random((m, m)) + 0.1
    return k / k.sum(axis=1, keepdims=True)


def random_symmetric_law(m, n, gen=GEN):
    """Random exchangeable probability vector on m^n states."""
    f = gen.random(m ** n)
    # symmetrize by averaging over all slot permutations
    out = np.zeros_like(f)
    for perm in itertools.permutations(range(n)):
        for s in range(m ** n):
            digits = index_state(s, m, n)
            out[state_index([digits[p] for p in perm], m)] += f[s]
    out /= out.sum()
    return out


def test_state_index_roundtrip():
    m, n = 4, 3
    for s in range(m ** n):
        assert state_index(index_state(s, m, n), m) == s


def test_build_generator_two_state_swap():
    model = finite_cyclic_collision(m=2)
    q = build_generator(model, 2).toarray()
    assert np.allclose(q.sum(axis=1), 0.0, atol=1e-14)
    # equal-pair states are absorbing (rate vanishes on the diagonal pair)
    s00 = state_index([0, 0], 2)
    s11 = state_index([1, 1], 2)
    assert np.allclose(q[s00], 0.0) and np.allclose(q[s11], 0.0)


def test_generator_permutation_covariance():
    m, n = 3, 3
    for model in (finite_choose_leader(rand_kernel(m)),
                  finite_cyclic_collision(m)):
        q = build_generator(model, n).toarray()
        for perm in itertools.permutations(range(n)):
            sigma = np.array([state_index([index_state(s, m, n)[p]
                                           for p in perm], m)
                              for s in range(m ** n)])
            assert np.allclose(q[np.ix_(sigma, sigma)], q, atol=1e-12)


def test_exact_evolve_two_state_closed_form():
    q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    f0 = np.array([1.0, 0.0])
    for t in (0.1, 0.5, 2.0):
        ft = exact_evolve(q, f0, t)
        want = 0.5 * (1.0 - np.exp(-2.0 * t))
        assert abs(ft[1] - want) < 1e-10
    assert np.array_equal(exact_evolve(q, f0, 0.0), f0)


def test_exact_evolve_semigroup_and_mass():
    model = finite_choose_leader(rand_kernel(3))
    q = build_generator(model, 3)
    f0 = GEN.random(27)
    f0 /= f0.sum()
    one_shot = exact_evolve(q, f0, 0.7)
    two_step = exact_evolve(q, exact_evolve(q, f0, 0.3), 0.4)
    assert np.max(np.abs(one_shot - two_step)) < 1e-10
    assert abs(one_shot.sum() - 1.0) < 1e-10
    assert np.all(one_shot >= -1e-14)


def test_exact_marginal_consistency():
    m, n = 3, 3
    fn = GEN.random(m ** n)
    fn /= fn.sum()
    # k = n returns fn itself
    assert np.array_equal(exact_marginal(fn, n, m, n), fn)
    # marginalizing the 2-marginal reproduces the 1-marginal
    m2 = exact_marginal(fn, 2, m, n).reshape(m, m, order="F")
    m1 = exact_marginal(fn, 1, m, n)
    assert np.allclose(m2.sum(axis=1), m1, atol=1e-14)
    assert abs(m1.sum() - 1.0) < 1e-12


def test_exact_marginal_product_law():
    m, n = 2, 4
    p = np.array([0.3, 0.7])
    fn = np.ones(m ** n)
    for s in range(m ** n):
        fn[s] = np.prod(p[list(index_state(s, m, n))])
    m2 = exact_marginal(fn, 2, m, n).reshape(m, m, order="F")
    assert np.allclose(m2, np.outer(p, p), atol=1e-14)


def test_moment_measure_hand_case():
    # uniform on {01, 10} with m=2, N=2: the 2nd moment measure of the
    # empirical law puts 1/4 on each of the four pairs
    fn = np.zeros(4)
    fn[state_index([0, 1], 2)] = 0.5
    fn[state_index([1, 0], 2)] = 0.5
    mm = exact_moment_measure(fn, 2, 2, 2)
    assert np.allclose(mm, 0.25, atol=1e-14)
    marg = exact_marginal(fn, 2, 2, 2)
    tv = np.abs(mm - marg).sum()
    assert abs(tv - 1.0) < 1e-12
    bound = 2 * 2 * (2 - 1) / 2  # 2k(k-1)/N
    assert tv <= bound


def test_moment_measure_trivial_cases():
    m, n = 3, 3
    fn = GEN.random(m ** n)
    fn /= fn.sum()
    fn = oracle.symmetrize(fn, m, n)
    assert np.allclose(exact_moment_measure(fn, 1, m, n),
                       exact_marginal(fn, 1, m, n), atol=1e-14)
    single = GEN.random(4)
    single /= single.sum()
    assert np.allclose(exact_moment_measure(single, 1, 4, 1), single)


def test_grunbaum_bound_value_and_k1():
    m, n = 3, 4
    fn = random_symmetric_law(m, n)
    tv, bound, ok = check_grunbaum(fn, 1, m, n)
    assert tv < 1e-12 and ok
    _, bound_k2_n10, _ = check_grunbaum(np.full(2 ** 10, 2.0 ** -10), 2, 2, 10)
    assert bound_k2_n10 == 0.4


def test_grunbaum_random_sweep_small():
    for _ in range(25):
        m, n = 3, int(GEN.integers(3, 6))
        fn = random_symmetric_law(m, n)
        for k in (2, 3):
            tv, bound, ok = check_grunbaum(fn, k, m, n)
            assert ok, (tv, bound)


def test_csiszar_product_and_full_block():
    m, n = 3, 4
    p = GEN.random(m)
    p /= p.sum()
    fn = np.ones(m ** n)
    for s in range(m ** n):
        fn[s] = np.prod(p[list(index_state(s, m, n))])
    lhs, rhs, ok = check_csiszar(fn, p, 2, m, n)
    assert abs(lhs) < 1e-10 and abs(rhs) < 1e-10 and ok
    fn2 = random_symmetric_law(m, 3)
    lhs, rhs, ok = check_csiszar(fn2, p, 3, m, 3)
    assert abs(lhs - rhs) < 1e-10 and ok  # k = N is an equality


def test_w1_lp_hand_case():
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert abs(w1_lp(np.array([1.0, 0.0]), np.array([0.0, 1.0]), cost)
               - 1.0) < 1e-9
    assert abs(w1_lp(np.array([0.5, 0.5]), np.array([0.5, 0.5]), cost)) < 1e-9


def test_isometry_identity_and_hand_case():
    m, n = 2, 2
    ground = np.array([[0.0, 1.0], [1.0, 0.0]])
    fn = np.zeros(4)
    fn[state_index([0, 0], 2)] = 1.0
    lhs, rhs, gap = check_w1_isometry(fn, fn, ground, m, n)
    assert abs(lhs) < 1e-12 and abs(rhs) < 1e-12 and gap < 1e-12
    gn = np.zeros(4)
    gn[state_index([0, 1], 2)] = 0.5
    gn[state_index([1, 0], 2)] = 0.5
    lhs, rhs, gap = check_w1_isometry(fn, gn, ground, m, n)
    assert abs(lhs - 0.5) < 1e-9
    assert abs(rhs - 0.5) < 1e-9
    assert gap < 1e-8


def test_isometry_requires_symmetry():
    gn = np.zeros(4)
    gn[state_index([0, 1], 2)] = 1.0  # not exchangeable
    fn = np.full(4, 0.25)
    ground = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        check_w1_isometry(fn, gn, ground, 2, 2)


def test_nonlinear_ode_matches_linear_case():
    # measure-independent kernel: the nonlinear flow is the one-particle
    # linear semigroup
    m = 3
    kmat = GEN.random((m, m))
    kmat /= kmat.sum(axis=1, keepdims=True)

    model = oracle.FiniteMeanFieldModel(
        m=m,
        rate=lambda a, hist: 1.0,
        kernel=lambda a, hist: kmat[a],
    )
    q1 = np.zeros((m, m))
    for a in range(m):
        q1[a] = kmat[a]
        q1[a, a] -= 1.0
    f0 = GEN.random(m)
    f0 /= f0.sum()
    ft = nonlinear_finite_ode(model, f0, 0.8)
    want = exact_evolve(q1, f0, 0.8)
    assert np.max(np.abs(ft - want)) < 1e-8


def test_nonlinear_ode_fixed_point_and_mass():
    model = finite_choose_leader(np.eye(3))
    f0 = np.array([0.2, 0.5, 0.3])
    ft = nonlinear_finite_ode(model, f0, 2.0)
    assert np.max(np.abs(ft - f0)) < 1e-10  # copying a leader's state is a fixed point
    model2 = finite_choose_leader(rand_kernel(3))
    ft2 = nonlinear_finite_ode(model2, f0, 1.0)
    assert abs(ft2.sum() - 1.0) < 1e-12
    assert np.all(ft2 >= -1e-12)


def test_cyclic_collision_kernel_is_stochastic():
    model = finite_cyclic_collision(3)
    for a in range(3):
        for b in range(3):
            g2 = model.gamma2(a, b)
            assert abs(g2.sum() - 1.0) < 1e-14
            assert np.all(g2 >= 0.0)
    assert model.rate(1, 1) == 0.0 and model.rate(0, 1) == 1.0


def test_evolve_to_csv_schema(tmp_path):
    q = np.array([[-1.0, 1.0], [1.0, -1.0]])
    path = tmp_path / "law.csv"
    evolve_to_csv(exact_evolve(q, np.array([1.0, 0.0]), 0.5), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "state,probability"
    assert len(lines) == 3
    total = sum(float(l.split(",")[1]) for l in lines[1:])
    assert abs(total - 1.0) < 1e-10


def test_state_cap_guard():
    with pytest.raises(ValueError):
        build_generator(finite_cyclic_collision(10), 8)
