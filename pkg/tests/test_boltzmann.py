import numpy as np
import pytest
from scipy import stats

from chaoskit import boltzmann, chaos
from chaoskit.boltzmann import (InteractionGraph, count_recollisions,
                                cross_section_rate, cyclic_mixing_model,
                                events_to_csv, graph_forward_realize,
                                hard_sphere_model, kac_collision, kac_model,
                                maxwell_collision, maxwell_model,
                                nanbu_simulate, pair_clock_simulate,
                                sample_interaction_graph,
                                semiparametric_reduce, uniform_clock_simulate,
                                wagner_symmetrize)
from chaoskit.core import CollisionModel, RngStream
from chaoskit.metrics import w1_exact_1d

ROOT = RngStream(9090)


# ---------------------------------------------------------------------------
# Collision rules and cross sections
# ---------------------------------------------------------------------------

def test_kac_rotation_special_angles():
    v1, v2 = 1.5, -0.5
    assert kac_collision(v1, v2, 0.0) == (v1, v2)
    w1, w2 = kac_collision(v1, v2, np.pi / 2.0)
    assert abs(w1 - v2) < 1e-15 and abs(w2 + v1) < 1e-15


def test_kac_rotation_preserves_energy():
    gen = np.random.default_rng(1)
    for _ in range(200):
        v1, v2, th = gen.standard_normal(3)
        w1, w2 = kac_collision(v1, v2, th)
        assert abs(w1 ** 2 + w2 ** 2 - v1 ** 2 - v2 ** 2) < 1e-12


def test_maxwell_collision_parallel_direction_is_identity():
    v = np.array([1.0, 2.0, 3.0])
    vstar = np.array([0.0, 2.0, 3.0])
    sigma = (v - vstar) / np.linalg.norm(v - vstar)
    w, wstar = maxwell_collision(v, vstar, sigma)
    assert np.allclose(w, v, atol=1e-14)
    assert np.allclose(wstar, vstar, atol=1e-14)


def test_maxwell_collision_conserves_momentum_and_energy():
    gen = np.random.default_rng(2)
    for _ in range(200):
        v, vstar = gen.standard_normal((2, 3))
        sigma = gen.standard_normal(3)
        sigma /= np.linalg.norm(sigma)
        w, wstar = maxwell_collision(v, vstar, sigma)
        assert np.max(np.abs(w + wstar - v - vstar)) < 1e-12
        e0 = np.sum(v ** 2) + np.sum(vstar ** 2)
        e1 = np.sum(w ** 2) + np.sum(wstar ** 2)
        assert abs(e1 - e0) < 1e-12 * max(1.0, e0)


def test_maxwell_collision_requires_unit_direction():
    with pytest.raises(ValueError):
        maxwell_collision(np.zeros(3), np.ones(3), np.array([1.0, 1.0, 0.0]))


def test_cross_section_values():
    v = np.array([1.0, 0.0, 0.0])
    assert cross_section_rate("hard_sphere", v, v) == 0.0
    assert cross_section_rate("hard_sphere", v, -v) == 2.0
    assert cross_section_rate("maxwell_cutoff", v, -v, angular_mass=3.0) == 3.0
    with pytest.raises(ValueError):
        cross_section_rate("soft_potential", v, v)


# ---------------------------------------------------------------------------
# Schedulers
# ---------------------------------------------------------------------------

def test_uniform_clock_zero_rate_is_frozen():
    model = CollisionModel(rate=lambda a, b: 0.0, rate_bound=0.0,
                           post=lambda a, b, g: (a, b))
    x0 = np.array([[1.0], [2.0], [3.0]])
    bundle, events = uniform_clock_simulate(model, x0, 1.0, ROOT.split(1))
    assert len(events) == 0
    assert np.array_equal(bundle.states[-1], x0)


def test_uniform_clock_candidate_count_two_particles():
    # master clock rate bound*(n-1)/2: for n=2 the mean count is bound*T/2
    lam, t_final, reps = 2.0, 1.0, 2000
    model = kac_model(lam)
    counts = np.empty(reps)
    for r in range(reps):
        _, events = uniform_clock_simulate(
            model, np.array([[1.0], [-1.0]]), t_final, ROOT.split(2, r))
        counts[r] = len(events)
    want = lam * t_final / 2.0
    se = np.sqrt(want / reps)  # Poisson count
    assert abs(counts.mean() - want) <= 4 * se


def test_kac_energy_exactly_conserved():
    model = kac_model(1.0)
    gen = np.random.default_rng(3)
    x0 = gen.standard_normal((16, 1))
    bundle, events = uniform_clock_simulate(model, x0, 5.0, ROOT.split(3))
    assert len(events) > 10
    e0 = np.sum(x0 ** 2)
    e1 = np.sum(bundle.states[-1] ** 2)
    assert abs(e1 - e0) <= 1e-12 * e0


def test_pair_clock_rejects_large_systems():
    with pytest.raises(ValueError):
        pair_clock_simulate(kac_model(1.0), np.zeros((65, 1)), 1.0, ROOT)


def test_pair_clock_single_pair_gap_distribution():
    # n=2: one candidate clock of rate bound/2
    lam = 2.0
    model = kac_model(lam)
    _, events = pair_clock_simulate(model, np.array([[1.0], [-1.0]]),
                                    5000.0, ROOT.split(4))
    ts = np.array([ev.time for ev in events])
    gaps = np.diff(np.concatenate([[0.0], ts]))
    _, pval = stats.kstest(gaps, "expon", args=(0, 2.0 / lam))
    assert pval > 0.01
    assert len(events) > 3000


def counting_model(rate):
    """Every accepted collision adds +1 to the updated coordinate(s)."""
    return CollisionModel(
        rate=lambda a, b: float(rate), rate_bound=float(rate),
        psi1=lambda z1, z2, th: z1 + 1.0,
        psi2=lambda z1, z2, th: z2 + 1.0,
        theta_sampler=lambda gen: 0.0)


def test_nanbu_updates_exactly_one_particle_per_event():
    model = counting_model(1.0)
    x0 = np.zeros((6, 1))
    bundle, events = nanbu_simulate(model, x0, 4.0, ROOT.split(5))
    acc = sum(not ev.fictitious for ev in events)
    assert float(bundle.states[-1].sum()) == float(acc)
    bundle2, events2 = uniform_clock_simulate(model, x0, 4.0, ROOT.split(6))
    acc2 = sum(not ev.fictitious for ev in events2)
    assert float(bundle2.states[-1].sum()) == float(2 * acc2)


def test_schedulers_share_candidate_intensity():
    # all three schedulers draw candidates at total rate bound*(n-1)/2
    model = kac_model(1.0)
    x0 = np.random.default_rng(4).standard_normal((8, 1))
    t_final = 400.0
    want = 1.0 * 7 / 2.0 * t_final
    for sim, lab in ((uniform_clock_simulate, 7),
                     (nanbu_simulate, 8),
                     (pair_clock_simulate, 9)):
        _, events = sim(model, x0, t_final, ROOT.split(lab))
        assert abs(len(events) - want) <= 4 * np.sqrt(want)


# ---------------------------------------------------------------------------
# Wagner symmetrization and the semiparametric reduction
# ---------------------------------------------------------------------------

def test_wagner_symmetric_input_is_unchanged_pointwise():
    # wealth exchange with L + R = 1 already satisfies the symmetry
    # condition, so both branches produce the same outputs
    lw, rw = 0.3, 0.7
    model = wagner_symmetrize(
        lam_tilde=lambda z1, z2: 1.0,
        psi1_tilde=lambda z1, z2, th: lw * z1 + rw * z2,
        psi2_tilde=lambda z1, z2, th: lw * z2 + rw * z1,
        nu_tilde=lambda gen: 0.0,
        rate_bound=1.0)
    gen = np.random.default_rng(5)
    for _ in range(100):
        z1, z2 = gen.standard_normal((2, 1))
        for sig in (0.1, 0.9):
            assert np.allclose(model.psi1(z1, z2, (0.0, sig)),
                               lw * z1 + rw * z2, atol=1e-14)
            assert np.allclose(model.psi2(z1, z2, (0.0, sig)),
                               lw * z2 + rw * z1, atol=1e-14)
    assert model.rate(np.zeros(1), np.ones(1)) == 1.0


def test_wagner_wealth_total_exactly_conserved():
    lw, rw = 0.25, 0.75
    model = wagner_symmetrize(
        lam_tilde=lambda z1, z2: 1.0,
        psi1_tilde=lambda z1, z2, th: lw * z1 + rw * z2,
        psi2_tilde=lambda z1, z2, th: lw * z2 + rw * z1,
        nu_tilde=lambda gen: 0.0,
        rate_bound=1.0)
    gen = np.random.default_rng(6)
    x0 = gen.random((8, 1))
    bundle, events = uniform_clock_simulate(model, x0, 4.0, ROOT.split(10))
    assert sum(not e.fictitious for e in events) > 5
    assert abs(bundle.states[-1].sum() - x0.sum()) < 1e-12


def test_wagner_swapped_arguments_same_pair_law():
    # asymmetric ordered rate: the symmetrized kernel of (z1, z2) equals
    # that of (z2, z1) with the roles swapped, in law
    lam_tilde = lambda z1, z2: 1.0 + z1[0] ** 2
    psi1_tilde = lambda z1, z2, th: z1 + th * z2
    psi2_tilde = lambda z1, z2, th: z2 - th * z1
    model = wagner_symmetrize(lam_tilde, psi1_tilde, psi2_tilde,
                              nu_tilde=lambda gen: float(gen.integers(2)),
                              rate_bound=10.0)
    z1 = np.array([1.0])
    z2 = np.array([2.0])
    n_draw = 40_000
    gen_a = ROOT.split(11).generator()
    gen_b = ROOT.split(12).generator()

    def draw_pairs(a, b, g, swap_roles):
        out = np.empty((n_draw, 2))
        for k in range(n_draw):
            th = model.theta_sampler(g)
            p1 = float(model.psi1(a, b, th)[0])
            p2 = float(model.psi2(a, b, th)[0])
            out[k] = (p2, p1) if swap_roles else (p1, p2)
        return out

    pa = draw_pairs(z1, z2, gen_a, swap_roles=False)
    pb = draw_pairs(z2, z1, gen_b, swap_roles=True)
    # finitely many outcomes: compare joint frequencies
    vals_a, counts_a = np.unique(pa, axis=0, return_counts=True)
    vals_b, counts_b = np.unique(pb, axis=0, return_counts=True)
    assert np.allclose(vals_a, vals_b)
    freq_a = counts_a / n_draw
    freq_b = counts_b / n_draw
    se = np.sqrt(freq_a * (1 - freq_a) / n_draw)
    assert np.all(np.abs(freq_a - freq_b) <= 4 * se + 1e-9)


def test_semiparametric_trivial_reduction_is_identity():
    base = kac_model(1.0)
    q0 = 1.0 / (2.0 * np.pi)
    reduced, scale = semiparametric_reduce(
        base, q_density=lambda z1, z2, th: q0, m_bound=1.0,
        q0_sampler=base.theta_sampler, q0_density=lambda th: q0)
    assert scale == 1.0
    gen = ROOT.split(13).generator()
    z1, z2 = np.array([1.0]), np.array([-2.0])
    for _ in range(50):
        th, eta = reduced.theta_sampler(gen)
        assert np.allclose(reduced.psi1(z1, z2, (th, eta)),
                           base.psi1(z1, z2, th), atol=1e-15)
        assert np.allclose(reduced.psi2(z1, z2, (th, eta)),
                           base.psi2(z1, z2, th), atol=1e-15)


def test_semiparametric_half_density_preserves_state_half_the_time():
    base = kac_model(1.0)
    q0 = 1.0 / (2.0 * np.pi)
    reduced, _ = semiparametric_reduce(
        base, q_density=lambda z1, z2, th: 0.5 * q0, m_bound=1.0,
        q0_sampler=base.theta_sampler, q0_density=lambda th: q0)
    gen = ROOT.split(14).generator()
    z1, z2 = np.array([1.0]), np.array([-2.0])
    kept = 0
    n_draw = 20_000
    for _ in range(n_draw):
        ext = reduced.theta_sampler(gen)
        if np.array_equal(reduced.psi1(z1, z2, ext), z1):
            kept += 1
    se = 0.5 / np.sqrt(n_draw)
    assert abs(kept / n_draw - 0.5) <= 4 * se


def test_semiparametric_envelope_violation_raises():
    base = kac_model(1.0)
    q0 = 1.0 / (2.0 * np.pi)
    reduced, _ = semiparametric_reduce(
        base, q_density=lambda z1, z2, th: 2.0 * q0, m_bound=1.0,
        q0_sampler=base.theta_sampler, q0_density=lambda th: q0)
    gen = ROOT.split(15).generator()
    with pytest.raises(ValueError):
        reduced.psi1(np.array([1.0]), np.array([2.0]),
                     reduced.theta_sampler(gen))


def test_semiparametric_time_rescale_matches_base_law():
    # thinning the parameter density by 1/2 with envelope constant M=2 and
    # running for t*M reproduces the base dynamics in law
    base = kac_model(1.0)
    q0 = 1.0 / (2.0 * np.pi)
    reduced, scale = semiparametric_reduce(
        base, q_density=lambda z1, z2, th: q0, m_bound=2.0,
        q0_sampler=base.theta_sampler, q0_density=lambda th: q0)
    assert scale == 2.0
    n, t_final, reps = 32, 1.0, 300
    init = lambda g: g.standard_normal(1)
    base_pool, red_pool = [], []
    for r in range(reps):
        b, _ = uniform_clock_simulate(base, init, t_final,
                                      ROOT.split(16, r), n=n,
                                      collect_events=False)
        base_pool.append(b.states[-1][:, 0])
        c, _ = uniform_clock_simulate(reduced, init, t_final * scale,
                                      ROOT.split(17, r), n=n,
                                      collect_events=False)
        red_pool.append(c.states[-1][:, 0])
    base_pool = np.concatenate(base_pool)
    red_pool = np.concatenate(red_pool)
    floor = chaos.split_half_floor(base_pool, red_pool)
    assert w1_exact_1d(base_pool[:, None], red_pool[:, None]) <= 3 * floor


def test_hard_sphere_bound_and_escape_detection():
    model = hard_sphere_model(d=3, v_max=1.0)
    assert model.rate_bound == 2.0 * np.sqrt(3.0)
    gen = np.random.default_rng(7)
    x0 = gen.uniform(-1, 1, (8, 3))
    uniform_clock_simulate(model, x0, 0.5, ROOT.split(18))  # within support
    bad = np.vstack([x0[:7], [[5.0, 0.0, 0.0]]])
    with pytest.raises(ValueError):
        uniform_clock_simulate(model, bad, 5.0, ROOT.split(19))


def test_cyclic_mixing_equal_states_never_collide():
    model = cyclic_mixing_model(3)
    bundle, events = uniform_clock_simulate(
        model, np.full((4, 1), 2.0), 5.0, ROOT.split(20))
    assert all(ev.fictitious for ev in events)
    assert np.array_equal(bundle.states[-1], np.full((4, 1), 2.0))


def test_events_to_csv_schema(tmp_path):
    _, events = uniform_clock_simulate(
        kac_model(1.0), np.array([[1.0], [-1.0], [0.5]]), 3.0, ROOT.split(21))
    path = tmp_path / "collisions.csv"
    events_to_csv(events, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,i,j,fictitious,theta_digest"
    assert len(lines) == 1 + len(events)


# ---------------------------------------------------------------------------
# Interaction graphs
# ---------------------------------------------------------------------------

def test_graph_validates_route_times():
    with pytest.raises(ValueError):
        InteractionGraph(4, 0, 1.0, (0.2, 0.5), ((1, 0), (2, 0)))
    with pytest.raises(ValueError):
        InteractionGraph(4, 0, 1.0, (1.5,), ((1, 0),))


def test_zero_rate_graph_is_empty():
    g = sample_interaction_graph(100, 0.0, 2.0, 0, ROOT.split(22))
    assert g.routes == () and g.collected() == {0}


def test_recollision_count_hand_case():
    g = InteractionGraph(4, 0, 1.0, (0.9, 0.6, 0.3),
                         ((1, 0), (2, 0), (2, 1)))
    assert count_recollisions(g) == 1
    tree = InteractionGraph(4, 0, 1.0, (0.9, 0.6), ((1, 0), (2, 1)))
    assert count_recollisions(tree) == 0


def test_recollisions_equal_routes_minus_new_members():
    for r in range(200):
        g = sample_interaction_graph(40, 1.0, 1.5, r % 40, ROOT.split(23, r))
        assert count_recollisions(g) == len(g.routes) - (len(g.collected()) - 1)


def test_route_count_matches_birth_process_oracle():
    # for N >> 1 the collected set grows like a pure birth process of
    # per-member rate bound, so E[#routes] ~ exp(bound * t) - 1
    n, lam, t, reps = 10_000, 1.0, 2.0, 4000
    counts = np.empty(reps)
    for r in range(reps):
        g = sample_interaction_graph(n, lam, t, 0, ROOT.split(24, r))
        counts[r] = len(g.routes)
    want = np.exp(lam * t) - 1.0
    assert abs(counts.mean() / want - 1.0) < 0.05


def test_forward_realization_of_empty_graph_is_initial_draw():
    g = InteractionGraph(10, 3, 1.0, (), ())
    model = kac_model(1.0)
    times, states = graph_forward_realize(g, model,
                                          lambda gen: gen.standard_normal(1),
                                          ROOT.split(25))
    assert np.array_equal(times, [0.0, 1.0])
    assert np.array_equal(states[0], states[1])


def test_forward_realization_conserves_pair_energy():
    g = InteractionGraph(5, 0, 1.0, (0.7, 0.4), ((1, 0), (2, 0)))
    model = kac_model(1.0)
    times, states = graph_forward_realize(
        g, model, lambda gen: gen.standard_normal(1), ROOT.split(26))
    assert len(times) == 4
    assert np.all(np.isfinite(states))
