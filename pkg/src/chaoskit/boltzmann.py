"""Binary-collision particle simulators and interaction graphs.

Three equal-in-law event schedulers (single master clock, exact per-pair
thinning clocks, and the one-sided update variant), classical collision
rules and cross sections, symmetrization of ordered-pair models, an
accept-reject reduction of state-dependent parameter densities, and
backward random interaction graphs with forward realization.
"""

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import core
from .core import CollisionModel, canonical_order
from .mckean import draw_init


@dataclass(frozen=True)
class CollisionEvent:
    """One candidate collision; fictitious events change nothing."""

    time: float
    i: int
    j: int
    fictitious: bool
    theta: object = None


def events_to_csv(events, path):
    with open(path, "w", newline="") as fh:
        fh.write("time,i,j,fictitious,theta_digest\n")
        from .jumps import theta_digest
        for ev in events:
            dig = theta_digest(ev.theta) if ev.theta is not None else ""
            fh.write(f"{core.FMT % ev.time},{ev.i},{ev.j},"
                     f"{int(ev.fictitious)},{dig}\n")


def _check_rate(lam, bound):
    if lam < -1e-12 or lam > bound * (1.0 + 1e-12):
        raise ValueError(f"collision rate {lam} escapes declared bound {bound}")


def _apply_post(model, xs, i, j, gen):
    """Draw post-collision states for particles i, j; roles by canonical
    order of the two current states so runs are permutation equivariant."""
    zi, zj = xs[i], xs[j]
    swap = tuple(zj) < tuple(zi)
    if swap:
        i, j = j, i
        zi, zj = zj, zi
    theta = None
    if model.post is None:
        theta = model.theta_sampler(gen)
        z1 = np.asarray(model.psi1(zi, zj, theta), dtype=float)
        z2 = np.asarray(model.psi2(zi, zj, theta), dtype=float)
    else:
        z1, z2 = model.post(zi, zj, gen)
    xs[i] = np.asarray(z1, dtype=float).reshape(xs.shape[1])
    xs[j] = np.asarray(z2, dtype=float).reshape(xs.shape[1])
    return theta


def _grid_recorder(xs, model, t_final, n_grid):
    grid = np.linspace(0.0, t_final, max(2, n_grid))
    rec = np.empty((len(grid),) + xs.shape)
    rec[0] = xs
    return grid, rec


def uniform_clock_simulate(model: CollisionModel, init, t_final, root,
                           n=None, d=1, n_grid=2, collect_events=True,
                           labels=None):
    """Collision simulation with one master clock of rate bound*(n-1)/2.

    At each candidate, an unordered pair is drawn uniformly (by canonical
    position) and accepted with probability rate/bound; fictitious
    candidates leave the state unchanged.  Free flight (if declared) is
    applied between events.
    """
    if not callable(init):
        arr = np.asarray(init, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        n, d = arr.shape
        init = arr
    if labels is None:
        labels = np.arange(n)
    xs = draw_init(init, root, n, d, labels)
    gen = root.split(core.EVENTS).generator()
    master = model.rate_bound * (n - 1) / 2.0
    grid, rec = _grid_recorder(xs, model, t_final, n_grid)
    next_rec = 1
    events = []
    t = 0.0

    def advance(target):
        nonlocal xs, t, next_rec
        while next_rec < len(grid) and grid[next_rec] <= target + 1e-15:
            xs = model.transport(xs, grid[next_rec] - t)
            t = grid[next_rec]
            rec[next_rec] = xs
            next_rec += 1
        xs = model.transport(xs, target - t)
        t = target

    while master > 0:
        t_next = t + float(gen.exponential(1.0 / master))
        if t_next >= t_final:
            break
        advance(t_next)
        order = core.canonical_order_labeled(xs, labels)
        a = int(gen.integers(n))
        b = int(gen.integers(n - 1))
        if b >= a:
            b += 1
        i, j = int(order[a]), int(order[b])
        lam = float(model.rate(xs[i], xs[j]))
        _check_rate(lam, model.rate_bound)
        accept = bool(gen.random() < lam / model.rate_bound)
        theta = None
        if accept:
            theta = _apply_post(model, xs, i, j, gen)
        if collect_events:
            events.append(CollisionEvent(t_next, min(i, j), max(i, j),
                                         not accept, theta))
    advance(t_final)
    from .core import TrajectoryBundle
    return TrajectoryBundle(grid, rec, model.domain), events


def pair_clock_simulate(model: CollisionModel, init, t_final, root,
                        n=None, d=1, n_grid=2, collect_events=True,
                        labels=None):
    """Collision simulation with one exact thinning clock per pair.

    Each unordered slot pair (i < j) owns a candidate Poisson clock of
    rate bound/n whose stream is keyed by the pair; acceptance evaluates
    the state-dependent rate at the flowed states, which realizes the
    time-integral thinning exactly.  Equal in law to the master-clock
    scheduler.  Intended for small n (the clock count is n(n-1)/2).
    """
    if not callable(init):
        arr = np.asarray(init, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        n, d = arr.shape
        init = arr
    if n > 64:
        raise ValueError("per-pair clocks are limited to n <= 64")
    if labels is None:
        labels = list(range(n))
    xs = draw_init(init, root, n, d, labels)
    grid, rec = _grid_recorder(xs, model, t_final, n_grid)
    next_rec = 1
    events = []
    t = 0.0
    mean_gap = n / model.rate_bound if model.rate_bound > 0 else None
    gens = {}
    heap = []
    for i in range(n):
        for j in range(i + 1, n):
            if mean_gap is None:
                continue
            # streams keyed by the persistent pair labels, not slot numbers,
            # so permuting particles together with labels permutes the run;
            # the pair is carried in label order so tie-broken collision
            # roles are label-equivariant too
            la, lb = int(labels[i]), int(labels[j])
            si, sj = (i, j) if la < lb else (j, i)
            g = root.split(core.PAIR, min(la, lb), max(la, lb)).generator()
            gens[(si, sj)] = g
            heapq.heappush(heap, (float(g.exponential(mean_gap)), si, sj))

    def advance(target):
        nonlocal xs, t, next_rec
        while next_rec < len(grid) and grid[next_rec] <= target + 1e-15:
            xs = model.transport(xs, grid[next_rec] - t)
            t = grid[next_rec]
            rec[next_rec] = xs
            next_rec += 1
        xs = model.transport(xs, target - t)
        t = target

    while heap:
        t_ev, i, j = heapq.heappop(heap)
        if t_ev >= t_final:
            break
        advance(t_ev)
        g = gens[(i, j)]
        lam = float(model.rate(xs[i], xs[j]))
        _check_rate(lam, model.rate_bound)
        accept = bool(g.random() < lam / model.rate_bound)
        theta = None
        if accept:
            theta = _apply_post(model, xs, i, j, g)
        if collect_events:
            events.append(CollisionEvent(t_ev, i, j, not accept, theta))
        heapq.heappush(heap, (t_ev + float(g.exponential(mean_gap)), i, j))
    advance(t_final)
    from .core import TrajectoryBundle
    return TrajectoryBundle(grid, rec, model.domain), events


def nanbu_simulate(model: CollisionModel, init, t_final, root,
                   n=None, d=1, n_grid=2, collect_events=True, labels=None):
    """One-sided collision variant: per accepted event, one uniformly
    chosen member of the pair updates to the corresponding marginal of the
    post-collision law; the other keeps its state."""
    if not callable(init):
        arr = np.asarray(init, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        n, d = arr.shape
        init = arr
    if labels is None:
        labels = np.arange(n)
    xs = draw_init(init, root, n, d, labels)
    gen = root.split(core.EVENTS).generator()
    master = model.rate_bound * (n - 1) / 2.0
    grid, rec = _grid_recorder(xs, model, t_final, n_grid)
    next_rec = 1
    events = []
    t = 0.0

    def advance(target):
        nonlocal xs, t, next_rec
        while next_rec < len(grid) and grid[next_rec] <= target + 1e-15:
            xs = model.transport(xs, grid[next_rec] - t)
            t = grid[next_rec]
            rec[next_rec] = xs
            next_rec += 1
        xs = model.transport(xs, target - t)
        t = target

    while master > 0:
        t_next = t + float(gen.exponential(1.0 / master))
        if t_next >= t_final:
            break
        advance(t_next)
        order = core.canonical_order_labeled(xs, labels)
        a = int(gen.integers(n))
        b = int(gen.integers(n - 1))
        if b >= a:
            b += 1
        i, j = int(order[a]), int(order[b])
        lam = float(model.rate(xs[i], xs[j]))
        _check_rate(lam, model.rate_bound)
        accept = bool(gen.random() < lam / model.rate_bound)
        theta = None
        if accept:
            # the updating particle takes the first-argument role
            upd, other = (i, j) if gen.random() < 0.5 else (j, i)
            if model.post is None:
                theta = model.theta_sampler(gen)
                z_new = model.psi1(xs[upd], xs[other], theta)
            else:
                z_new = model.post(xs[upd], xs[other], gen)[0]
            xs[upd] = np.asarray(z_new, dtype=float).reshape(d)
        if collect_events:
            events.append(CollisionEvent(t_next, min(i, j), max(i, j),
                                         not accept, theta))
    advance(t_final)
    from .core import TrajectoryBundle
    return TrajectoryBundle(grid, rec, model.domain), events


def replicate_final_states(model: CollisionModel, init, t_final, root,
                           reps, n, d=1):
    """Final configurations of many independent master-clock runs.

    Lean path for oracle-equivalence checks on flow-free models; the event
    construction is identical to uniform_clock_simulate.
    """
    if model.free_flight:
        raise ValueError("fast replicator only supports flow-free models")
    out = np.empty((reps, n, d))
    master = model.rate_bound * (n - 1) / 2.0
    for r in range(reps):
        rroot = root.split(core.REPLICA, r)
        xs = draw_init(init, rroot, n, d)
        gen = rroot.split(core.EVENTS).generator()
        t = 0.0
        while master > 0:
            t += gen.exponential(1.0 / master)
            if t >= t_final:
                break
            order = canonical_order(xs)
            a = int(gen.integers(n))
            b = int(gen.integers(n - 1))
            if b >= a:
                b += 1
            i, j = int(order[a]), int(order[b])
            lam = float(model.rate(xs[i], xs[j]))
            _check_rate(lam, model.rate_bound)
            if gen.random() < lam / model.rate_bound:
                _apply_post(model, xs, i, j, gen)
        out[r] = xs
    return out


def cyclic_mixing_model(m=3):
    """Cyclic mixing collisions on {0..m-1}: distinct states react at unit
    rate and update to ((a + w b) mod m, (b + w a) mod m), w uniform."""

    def psi1(z1, z2, w):
        return np.array([float((int(round(z1[0])) + w * int(round(z2[0]))) % m)])

    def psi2(z1, z2, w):
        return np.array([float((int(round(z2[0])) + w * int(round(z1[0]))) % m)])

    return CollisionModel(
        rate=lambda z1, z2: 0.0 if round(z1[0]) == round(z2[0]) else 1.0,
        rate_bound=1.0,
        psi1=psi1, psi2=psi2,
        theta_sampler=lambda gen: int(gen.integers(m)))


# ---------------------------------------------------------------------------
# Collision rules, cross sections, model transformations
# ---------------------------------------------------------------------------

def kac_collision(v1, v2, theta):
    """Rotation of a velocity pair in the plane: energy-preserving
    one-dimensional collision rule."""
    c, s = np.cos(theta), np.sin(theta)
    return v1 * c + v2 * s, -v1 * s + v2 * c


def maxwell_collision(v, vstar, sigma):
    """Post-collisional velocities given a unit scattering direction."""
    sigma = np.asarray(sigma, dtype=float)
    if abs(np.linalg.norm(sigma) - 1.0) > 1e-12:
        raise ValueError("scattering direction must be a unit vector")
    v = np.asarray(v, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    center = (v + vstar) / 2.0
    half = np.linalg.norm(v - vstar) / 2.0
    return center + half * sigma, center - half * sigma


def cross_section_rate(kind, v, vstar, angular_mass=1.0):
    """Velocity part of the collision kernel: |v - v*| for hard spheres,
    constant for cutoff Maxwell molecules."""
    if kind == "hard_sphere":
        return float(angular_mass) * float(
            np.linalg.norm(np.asarray(v, dtype=float)
                           - np.asarray(vstar, dtype=float)))
    if kind == "maxwell_cutoff":
        return float(angular_mass)
    raise ValueError(f"unknown cross-section kind {kind!r}")


def wagner_symmetrize(lam_tilde, psi1_tilde, psi2_tilde, nu_tilde,
                      rate_bound, **model_kw):
    """Symmetrize an ordered-pair collision mechanism.

    Input: ordered-pair rate lam_tilde(z1, z2) with post maps
    psi1_tilde/psi2_tilde and parameter sampler nu_tilde.  Output: an
    unordered-pair parametric model with rate (lt(z1,z2)+lt(z2,z1))/2 and
    extended parameter (theta, sigma), sigma uniform on [0,1], choosing
    between the two orderings with probability lt(z1,z2)/(2 lambda).
    """

    def lam(z1, z2):
        return 0.5 * (lam_tilde(z1, z2) + lam_tilde(z2, z1))

    def _branch(z1, z2, sigma):
        total = lam(z1, z2)
        if total <= 0.0:
            raise AssertionError("zero symmetrized rate cannot trigger events")
        return sigma <= lam_tilde(z1, z2) / (2.0 * total)

    def psi1(z1, z2, theta):
        th, sigma = theta
        if _branch(z1, z2, sigma):
            return psi1_tilde(z1, z2, th)
        return psi2_tilde(z2, z1, th)

    def psi2(z1, z2, theta):
        th, sigma = theta
        if _branch(z1, z2, sigma):
            return psi2_tilde(z1, z2, th)
        return psi1_tilde(z2, z1, th)

    def sampler(gen):
        return (nu_tilde(gen), float(gen.random()))

    return CollisionModel(rate=lam, rate_bound=rate_bound, psi1=psi1,
                          psi2=psi2, theta_sampler=sampler, **model_kw)


def semiparametric_reduce(model: CollisionModel, q_density, m_bound,
                          q0_sampler, q0_density):
    """Reduce a state-dependent parameter density to an accept-reject model.

    `q_density(z1, z2, theta)` must satisfy q <= m_bound * q0_density(theta)
    everywhere.  The returned model draws theta from the envelope and an
    acceptance uniform; rejected candidates preserve both states.  Run the
    result for a rescaled horizon t * m_bound to match the original in law;
    the rescale factor is returned alongside.
    """

    def _accepts(z1, z2, theta, eta):
        ratio = q_density(z1, z2, theta) / (m_bound * q0_density(theta))
        if ratio > 1.0 + 1e-12:
            raise ValueError("envelope violation: q > M * q0 at a sampled point")
        return eta <= ratio

    def psi1(z1, z2, ext):
        theta, eta = ext
        return model.psi1(z1, z2, theta) if _accepts(z1, z2, theta, eta) else z1

    def psi2(z1, z2, ext):
        theta, eta = ext
        return model.psi2(z1, z2, theta) if _accepts(z1, z2, theta, eta) else z2

    def sampler(gen):
        return (q0_sampler(gen), float(gen.random()))

    reduced = CollisionModel(
        rate=model.rate, rate_bound=model.rate_bound, psi1=psi1, psi2=psi2,
        theta_sampler=sampler, free_flight=model.free_flight,
        pos_dim=model.pos_dim, box_size=model.box_size,
        constant_rate=model.constant_rate, domain=model.domain)
    return reduced, float(m_bound)


# ---------------------------------------------------------------------------
# Model builders
# ---------------------------------------------------------------------------

def kac_model(rate=1.0):
    """Energy-conserving pair rotations of 1d velocities at constant rate."""

    def psi1(z1, z2, theta):
        return np.array([kac_collision(z1[0], z2[0], theta)[0]])

    def psi2(z1, z2, theta):
        return np.array([kac_collision(z1[0], z2[0], theta)[1]])

    return CollisionModel(
        rate=lambda z1, z2: float(rate),
        rate_bound=float(rate),
        psi1=psi1, psi2=psi2,
        theta_sampler=lambda gen: float(gen.uniform(0.0, 2.0 * np.pi)),
        constant_rate=True)


def maxwell_model(d=3, rate=1.0):
    """Cutoff Maxwell molecules: constant pair rate, uniform scattering
    direction on the sphere."""

    def sphere(gen):
        v = gen.standard_normal(d)
        return v / np.linalg.norm(v)

    def psi1(z1, z2, sigma):
        return maxwell_collision(z1, z2, sigma)[0]

    def psi2(z1, z2, sigma):
        return maxwell_collision(z1, z2, sigma)[1]

    return CollisionModel(
        rate=lambda z1, z2: float(rate),
        rate_bound=float(rate),
        psi1=psi1, psi2=psi2,
        theta_sampler=sphere,
        constant_rate=True)


def hard_sphere_model(d=3, v_max=1.0, angular_mass=1.0):
    """Hard-sphere collisions with rate |v - v*| and uniform scattering.

    The declared rate bound is the supremum over the velocity support box
    [-v_max, v_max]^d; escapes are detected at runtime.
    """
    bound = float(angular_mass) * 2.0 * np.sqrt(d) * float(v_max)

    def sphere(gen):
        v = gen.standard_normal(d)
        return v / np.linalg.norm(v)

    def psi1(z1, z2, sigma):
        return maxwell_collision(z1, z2, sigma)[0]

    def psi2(z1, z2, sigma):
        return maxwell_collision(z1, z2, sigma)[1]

    return CollisionModel(
        rate=lambda z1, z2: cross_section_rate("hard_sphere", z1, z2,
                                               angular_mass),
        rate_bound=bound,
        psi1=psi1, psi2=psi2,
        theta_sampler=sphere)


# ---------------------------------------------------------------------------
# Interaction graphs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InteractionGraph:
    """Backward collision history of one root particle.

    times are strictly decreasing in (0, t); route (i, j) has j already
    collected when walking backward from the root; i may be new (tree
    edge) or already collected (recollision).
    """

    n: int
    root: int
    t: float
    times: tuple
    routes: tuple

    def __post_init__(self):
        ts = np.asarray(self.times, dtype=float)
        if len(ts) and (np.any(np.diff(ts) >= 0) or ts[0] >= self.t
                        or ts[-1] <= 0.0):
            raise ValueError("route times must decrease strictly inside (0, t)")

    def collected(self):
        """Index set touched by the backward history (root included)."""
        out = {self.root}
        for i, j in self.routes:
            out.add(i)
            out.add(j)
        return out


def sample_interaction_graph(n, rate_bound, t, root_index, root):
    """Backward recursion over per-pair candidate clocks of rate bound/n.

    Walking backward from time t, the collected set starts at the root and
    each candidate involving a collected particle is added as a route; the
    partner joins the set (new particles enter by uniform choice among the
    not-yet-collected, which is exchangeable in law).
    """
    gen = root.split(core.EVENTS).generator()
    collected = [int(root_index)]
    in_set = {int(root_index)}
    times, routes = [], []
    tau = float(t)
    while True:
        k = len(collected)
        touching = k * (n - k) + k * (k - 1) // 2
        total = rate_bound / n * touching
        if total <= 0.0:
            break
        tau -= float(gen.exponential(1.0 / total))
        if tau <= 0.0:
            break
        inside = k * (k - 1) // 2
        if gen.random() < inside / touching:
            a, b = gen.integers(k), gen.integers(k - 1)
            a, b = int(a), int(b)
            if b >= a:
                b += 1
            i, j = collected[a], collected[b]
        else:
            j = collected[int(gen.integers(k))]
            # uniform among the n-k outside particles
            outside_rank = int(gen.integers(n - k))
            i = _nth_outside(in_set, outside_rank, n)
            collected.append(i)
            in_set.add(i)
        times.append(tau)
        routes.append((i, j))
    return InteractionGraph(n, int(root_index), float(t),
                            tuple(times), tuple(routes))


def _nth_outside(in_set, rank, n):
    seen = 0
    for idx in range(n):
        if idx in in_set:
            continue
        if seen == rank:
            return idx
        seen += 1
    raise RuntimeError("rank exceeds outside count")


def count_recollisions(graph: InteractionGraph) -> int:
    """Routes whose both endpoints were already collected (backward)."""
    collected = {graph.root}
    count = 0
    for i, j in graph.routes:
        if i in collected and j in collected:
            count += 1
        collected.add(i)
        collected.add(j)
    return count


def graph_forward_realize(graph: InteractionGraph, model: CollisionModel,
                          init, root):
    """Realize one root trajectory from a backward interaction graph.

    Collected particles start i.i.d. from init; forward in time the graph's
    routes fire in increasing order, each accepted with probability
    rate/bound and updated by the post-collision law; other candidate
    clocks are irrelevant to the root's state and are not simulated.
    Returns (times, root states) including the endpoints 0 and t.
    """
    members = sorted(graph.collected())
    pos = {idx: k for k, idx in enumerate(members)}
    gen_init = root.split(core.INIT)
    x0 = draw_init(init, gen_init, len(members), _init_dim(init, gen_init))
    xs = x0.copy()
    gen = root.split(core.EVENTS).generator()
    forward = sorted(zip(graph.times, graph.routes))
    times = [0.0]
    states = [xs[pos[graph.root]].copy()]
    t = 0.0
    for t_ev, (i, j) in forward:
        xs = model.transport(xs, t_ev - t)
        t = t_ev
        a, b = pos[i], pos[j]
        lam = float(model.rate(xs[a], xs[b]))
        _check_rate(lam, model.rate_bound)
        if gen.random() < lam / model.rate_bound:
            _apply_post(model, xs, a, b, gen)
        times.append(t)
        states.append(xs[pos[graph.root]].copy())
    xs = model.transport(xs, graph.t - t)
    times.append(graph.t)
    states.append(xs[pos[graph.root]].copy())
    return np.asarray(times), np.asarray(states)


def _init_dim(init, root):
    if not callable(init):
        arr = np.asarray(init, dtype=float)
        return 1 if arr.ndim == 1 else arr.shape[1]
    probe = np.asarray(init(root.split(0xD1).generator()), dtype=float)
    return probe.size
