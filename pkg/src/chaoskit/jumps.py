"""Mean-field jump / piecewise-deterministic simulators and couplings.

Thinning against a declared rate bound drives all event generation;
between events a deterministic flow is integrated with RK4.  Includes the
simultaneous-jump (collateral) extension, a frozen-flow fixed-point
reference for the nonlinear limit, and a quantile-map jump coupling in 1d.
"""

import hashlib
import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import core
from .core import (MeanFieldJumpModel, RngStream, TrajectoryBundle,
                   bootstrap_ci, canonical_order, canonical_sort)
from .mckean import CouplingReport, ReferenceFlow, draw_init
from .metrics import w1_exact_1d, wp_assignment

FLOW_H_MAX = 0.01  # RK4 substep ceiling for deterministic flow segments


@dataclass(frozen=True)
class JumpEvent:
    """One thinning candidate: accepted events change the state."""

    time: float
    index: int
    theta: object
    accepted: bool
    collateral_applied: bool = False


def theta_digest(theta):
    """Stable short hash of a jump parameter for event-log CSVs."""
    if isinstance(theta, np.ndarray):
        payload = theta.tobytes()
    else:
        payload = repr(theta).encode()
    return hashlib.md5(payload).hexdigest()[:12]


def events_to_csv(events, path, replica=0):
    with open(path, "w", newline="") as fh:
        fh.write("time,replica,index,accepted,collateral_flag,theta_digest\n")
        for ev in events:
            dig = theta_digest(ev.theta) if ev.theta is not None else ""
            fh.write(f"{core.FMT % ev.time},{replica},{ev.index},"
                     f"{int(ev.accepted)},{int(ev.collateral_applied)},{dig}\n")


def rk4_flow(xs, flow, dt_total, h_max=FLOW_H_MAX):
    """Integrate dx/dt = flow(x) over dt_total with classical RK4."""
    if flow is None or dt_total <= 0.0:
        return xs
    nsub = max(1, int(np.ceil(dt_total / h_max - 1e-12)))
    h = dt_total / nsub
    for _ in range(nsub):
        k1 = flow(xs)
        k2 = flow(xs + 0.5 * h * k1)
        k3 = flow(xs + 0.5 * h * k2)
        k4 = flow(xs + h * k3)
        xs = xs + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return xs


def _check_rate(lam, bound, xs=None):
    if lam < -1e-12 or lam > bound * (1.0 + 1e-12) + 1e-300:
        raise ValueError(
            f"jump rate {lam} escapes declared bound {bound}"
            + ("" if xs is None else f" at state {xs!r}"))


def thinning_next_event(state, model: MeanFieldJumpModel, gen,
                        h_max=FLOW_H_MAX):
    """Draw one thinning candidate for an n-particle configuration.

    Returns (time increment, particle index, accept flag).  The candidate
    increment is exponential with the system envelope rate n * rate_bound;
    the target is uniform by canonical position; the acceptance rate is
    evaluated after flowing the deterministic part to the candidate time.
    """
    n = state.n
    total = n * model.rate_bound
    if total <= 0.0:
        return float("inf"), -1, False
    dt_c = float(gen.exponential(1.0 / total))
    xs = rk4_flow(np.asarray(state.xs, dtype=float), model.flow, dt_c, h_max)
    order = canonical_order(xs)
    atoms = xs[order]
    i = int(order[int(gen.integers(n))])
    lam = float(model.rate(xs[i], atoms))
    _check_rate(lam, model.rate_bound, xs[i])
    accept = bool(gen.random() < lam / model.rate_bound)
    return dt_c, i, accept


def pdmp_simulate(model, init, t_final, root, n=None, d=1, n_grid=2,
                  labels=None, simultaneous=False, h_max=FLOW_H_MAX):
    """Simulate the n-particle jump system with a single system clock.

    Candidate events arrive at rate n * rate_bound; the target particle is
    uniform (chosen by canonical position so runs are permutation
    equivariant); acceptance probability is rate/bound at the flowed state.
    With `simultaneous`, every accepted main jump of particle i also moves
    each other particle by collateral(...)/n, with collateral parameters
    drawn from a separate stream keyed by the event counter.

    Returns (TrajectoryBundle on a uniform n_grid-point grid incl. 0 and
    t_final, event log).
    """
    if not callable(init):
        init_arr = np.asarray(init, dtype=float)
        if init_arr.ndim == 1:
            init_arr = init_arr[:, None]
        n, d = init_arr.shape
        init = init_arr
    if n is None:
        raise ValueError("n is required with a callable init")
    if labels is None:
        labels = np.arange(n)
    root = root if isinstance(root, RngStream) else RngStream(int(root))
    xs = draw_init(init, root, n, d, labels)
    gen = root.split(core.EVENTS).generator()
    grid = np.linspace(0.0, t_final, max(2, n_grid))
    rec = np.empty((len(grid), n, d))
    rec[0] = xs
    next_rec = 1
    events = []
    t = 0.0
    total = n * model.rate_bound

    def advance_to(target):
        nonlocal xs, t, next_rec
        while next_rec < len(grid) and grid[next_rec] <= target + 1e-15:
            xs = rk4_flow(xs, model.flow, grid[next_rec] - t, h_max)
            t = grid[next_rec]
            rec[next_rec] = xs
            next_rec += 1
        xs = rk4_flow(xs, model.flow, target - t, h_max)
        t = target

    while True:
        dt_c = float(gen.exponential(1.0 / total)) if total > 0 else float("inf")
        t_next = t + dt_c
        if t_next >= t_final:
            advance_to(t_final)
            break
        advance_to(t_next)
        order = core.canonical_order_labeled(xs, labels)
        atoms = xs[order]
        i = int(order[int(gen.integers(n))])
        lam = float(model.rate(xs[i], atoms))
        _check_rate(lam, model.rate_bound, xs[i])
        accept = bool(gen.random() < lam / model.rate_bound)
        theta = None
        coll = False
        if accept:
            theta = model.theta_sampler(gen)
            x_pre = xs[i].copy()
            xs[i] = np.asarray(model.jump(xs[i], atoms, theta),
                               dtype=float).reshape(d)
            if simultaneous and model.collateral is not None:
                cgen = root.split(core.COLLATERAL, len(events)).generator()
                for pos in range(n):
                    j = int(order[pos])
                    if j == i:
                        continue
                    theta_j = model.theta_sampler(cgen)
                    disp = np.asarray(
                        model.collateral(xs[j], x_pre, atoms, theta_j, theta),
                        dtype=float).reshape(d)
                    xs[j] = xs[j] + disp / n
                coll = True
        events.append(JumpEvent(t_next, i, theta, accept, coll))
    bundle = TrajectoryBundle(grid, rec, model.domain)
    return bundle, events


def parametric_jump_simulate(model, init, t_final, root, **kw):
    """Poisson-random-measure form of the same dynamics; identical
    construction (and output, seed for seed) as pdmp_simulate."""
    return pdmp_simulate(model, init, t_final, root, **kw)


def simultaneous_jump_simulate(model, init, t_final, root, **kw):
    """Jump system with collateral displacements at every accepted event."""
    if model.collateral is None:
        raise ValueError("model declares no collateral jump amplitude")
    kw["simultaneous"] = True
    return pdmp_simulate(model, init, t_final, root, **kw)


def replicate_final_states(model, init, t_final, root, reps, n, d=1):
    """Final configurations of `reps` independent flow-free runs.

    Lean path used by oracle-equivalence checks: same construction as
    pdmp_simulate for models without a deterministic flow.
    """
    if model.flow is not None:
        raise ValueError("fast replicator only supports flow-free models")
    out = np.empty((reps, n, d))
    bound = model.rate_bound
    total = n * bound
    for r in range(reps):
        rroot = root.split(core.REPLICA, r)
        xs = draw_init(init, rroot, n, d)
        gen = rroot.split(core.EVENTS).generator()
        t = 0.0
        while total > 0:
            t += gen.exponential(1.0 / total)
            if t >= t_final:
                break
            order = canonical_order(xs)
            atoms = xs[order]
            i = int(order[int(gen.integers(n))])
            lam = float(model.rate(xs[i], atoms))
            _check_rate(lam, bound, xs[i])
            if gen.random() < lam / bound:
                theta = model.theta_sampler(gen)
                xs[i] = np.asarray(model.jump(xs[i], atoms, theta),
                                   dtype=float).reshape(d)
        out[r] = xs
    return out


# ---------------------------------------------------------------------------
# Nonlinear reference (frozen-flow fixed point) for jump dynamics
# ---------------------------------------------------------------------------

def _collateral_drift(model, xs, atoms, cgen, n_samples):
    """Monte Carlo of the mean-field collateral drift
    int rate(z, f) * collateral(x, z, f, .) f(dz) on frozen atoms."""
    m = len(atoms)
    take = min(n_samples, m)
    idx = cgen.permutation(m)[:take]
    out = np.zeros_like(xs)
    for z_i in idx:
        z = atoms[z_i]
        lam = float(model.rate(z, atoms))
        theta_z = model.theta_sampler(cgen)
        for q in range(len(xs)):
            theta_x = model.theta_sampler(cgen)
            out[q] += lam * np.asarray(
                model.collateral(xs[q], z, atoms, theta_x, theta_z),
                dtype=float).reshape(xs.shape[1])
    return out / take


def nonlinear_jump_reference(model, m_copies, t_final, picard_iters, root,
                             init, d=1, n_grid=101, tol=0.03,
                             coll_samples=64, h_max=FLOW_H_MAX):
    """Frozen-flow fixed-point ensemble for the nonlinear jump limit.

    Iteration 0 is the plain interacting system with per-copy Poisson
    clocks; each later iteration re-runs the same per-copy clocks against
    the frozen empirical flow of the previous iteration (rates, jump
    measures, and the collateral term - replaced by its mean-field drift -
    all read the frozen atoms).  Returns a ReferenceFlow whose bundle holds
    the grid states of the last iterate.
    """
    if m_copies < 2 or picard_iters < 1:
        raise ValueError("need m_copies >= 2 and picard_iters >= 1")
    grid = np.linspace(0.0, t_final, n_grid)
    labels = np.arange(m_copies)
    x0 = draw_init(init, root, m_copies, d, labels)
    bound = model.rate_bound

    def run_sweep(frozen):
        xs = x0.copy()
        rec = np.empty((n_grid, m_copies, d))
        rec[0] = xs
        gens = [root.split(int(l), core.EVENTS).generator() for l in labels]
        heap = []
        for i in range(m_copies):
            if bound > 0:
                heapq.heappush(heap, (float(gens[i].exponential(1.0 / bound)), i))
        t = 0.0
        next_rec = 1
        ev_count = 0

        def frozen_atoms_at(tt):
            k = min(n_grid - 1, int(np.floor(tt / t_final * (n_grid - 1))))
            return frozen[k]

        def flow_to(target):
            nonlocal xs, t, next_rec
            while next_rec < n_grid and grid[next_rec] <= target + 1e-15:
                seg = grid[next_rec] - t
                xs = rk4_flow(xs, model.flow, seg, h_max)
                if frozen is not None and model.collateral is not None:
                    cgen = root.split(core.COLLATERAL, 10 ** 6 + next_rec
                                      ).generator()
                    xs = xs + seg * _collateral_drift(
                        model, xs, frozen_atoms_at(t), cgen, coll_samples)
                t = grid[next_rec]
                rec[next_rec] = xs
                next_rec += 1
            xs = rk4_flow(xs, model.flow, target - t, h_max)
            t = target

        while heap:
            t_ev, i = heapq.heappop(heap)
            if t_ev >= t_final:
                break
            flow_to(t_ev)
            if frozen is None:
                atoms = canonical_sort(xs)
            else:
                atoms = frozen_atoms_at(t_ev)
            lam = float(model.rate(xs[i], atoms))
            _check_rate(lam, bound, xs[i])
            if gens[i].random() < lam / bound:
                theta = model.theta_sampler(gens[i])
                x_pre = xs[i].copy()
                xs[i] = np.asarray(model.jump(xs[i], atoms, theta),
                                   dtype=float).reshape(d)
                if frozen is None and model.collateral is not None:
                    order = canonical_order(xs)
                    cgen = root.split(core.COLLATERAL, ev_count).generator()
                    for pos in range(m_copies):
                        j = int(order[pos])
                        if j == i:
                            continue
                        theta_j = model.theta_sampler(cgen)
                        disp = np.asarray(
                            model.collateral(xs[j], x_pre, atoms, theta_j,
                                             theta), dtype=float).reshape(d)
                        xs[j] = xs[j] + disp / m_copies
                ev_count += 1
            heapq.heappush(heap, (t_ev + float(gens[i].exponential(1.0 / bound)), i))
        flow_to(t_final)
        return rec

    flow = run_sweep(None)
    increments = []
    for _ in range(picard_iters):
        frozen = np.stack([canonical_sort(s) for s in flow])
        new_flow = run_sweep(frozen)
        if d == 1:
            inc = w1_exact_1d(flow[-1], new_flow[-1])
        else:
            m = min(m_copies, 2048)
            inc = wp_assignment(flow[-1][:m], new_flow[-1][:m], p=1, cap=2048)
        increments.append(inc)
        flow = new_flow
    bundle = TrajectoryBundle(grid, flow, model.domain)
    return ReferenceFlow(bundle, init if callable(init) else None,
                         grid[1] - grid[0], increments,
                         increments[-1] <= tol)


# ---------------------------------------------------------------------------
# Quantile-map jump coupling (1d)
# ---------------------------------------------------------------------------

def optimal_jump_coupling_1d(model, n, reference: ReferenceFlow, t_final,
                             root, reps=1, q_samples=256, p=1,
                             h_max=FLOW_H_MAX):
    """Couple particles to nonlinear copies through shared jump clocks.

    Particle i and copy i share the same candidate times and acceptance
    uniforms against the common envelope.  When both accept, the copy
    samples its own jump value and the particle jumps to its image under
    the empirical monotone quantile map from q_samples reference jump
    samples to q_samples particle jump samples.  Per-event transport costs
    are returned alongside the CouplingReport.
    """
    if reference.bundle.d != 1:
        raise ValueError("quantile-map coupling requires d = 1")
    if reference.init is None:
        raise ValueError("reference built from a fixed array cannot be coupled")
    grid = reference.bundle.times
    frozen = reference.sorted_states()
    bound = model.rate_bound
    n_grid = len(grid)
    pathwise = np.empty(reps)
    pointwise = np.empty(reps)
    transport_costs = []
    for r in range(reps):
        rroot = root.split(core.REPLICA, r)
        x0 = draw_init(reference.init, rroot, n, 1)
        xs = x0.copy()
        ys = x0.copy()
        gens = [rroot.split(i, core.EVENTS).generator() for i in range(n)]
        heap = []
        for i in range(n):
            if bound > 0:
                heapq.heappush(heap, (float(gens[i].exponential(1.0 / bound)), i))
        t = 0.0
        ev_counts = np.zeros(n, dtype=int)
        sup_pp = np.zeros(n)
        sup_mean = 0.0

        def frozen_at(tt):
            k = min(n_grid - 1, int(np.floor(tt / t_final * (n_grid - 1))))
            return frozen[k]

        while heap:
            t_ev, i = heapq.heappop(heap)
            if t_ev >= t_final:
                break
            seg = t_ev - t
            xs = rk4_flow(xs, model.flow, seg, h_max)
            ys = rk4_flow(ys, model.flow, seg, h_max)
            t = t_ev
            atoms_p = canonical_sort(xs)
            atoms_r = frozen_at(t)
            lam_p = float(model.rate(xs[i], atoms_p))
            lam_r = float(model.rate(ys[i], atoms_r))
            _check_rate(lam_p, bound, xs[i])
            _check_rate(lam_r, bound, ys[i])
            u = gens[i].random()
            acc_p = u < lam_p / bound
            acc_r = u < lam_r / bound
            if acc_p or acc_r:
                theta = model.theta_sampler(gens[i])
                if acc_r:
                    y_new = float(np.asarray(
                        model.jump(ys[i], atoms_r, theta)).reshape(()))
                if acc_p and acc_r:
                    qgen = rroot.split(core.PAIR, i,
                                       int(ev_counts[i])).generator()
                    thetas = [model.theta_sampler(qgen)
                              for _ in range(q_samples)]
                    ref_cloud = np.sort([float(np.asarray(
                        model.jump(ys[i], atoms_r, th)).reshape(()))
                        for th in thetas])
                    part_cloud = np.sort([float(np.asarray(
                        model.jump(xs[i], atoms_p, th)).reshape(()))
                        for th in thetas])
                    rank = int(np.searchsorted(ref_cloud, y_new,
                                               side="right")) - 1
                    rank = min(max(rank, 0), q_samples - 1)
                    x_new = part_cloud[rank]
                    transport_costs.append(abs(x_new - ref_cloud[rank]))
                    xs[i, 0] = x_new
                elif acc_p:
                    xs[i] = np.asarray(model.jump(xs[i], atoms_p, theta),
                                       dtype=float).reshape(1)
                if acc_r:
                    ys[i, 0] = y_new
                ev_counts[i] += 1
                gap = np.abs(xs[:, 0] - ys[:, 0]) ** p
                sup_pp = np.maximum(sup_pp, gap)
                sup_mean = max(sup_mean, float(gap.mean()))
            heapq.heappush(heap, (t_ev + float(gens[i].exponential(1.0 / bound)), i))
        gap = np.abs(xs[:, 0] - ys[:, 0]) ** p
        sup_pp = np.maximum(sup_pp, gap)
        sup_mean = max(sup_mean, float(gap.mean()))
        pathwise[r] = sup_pp.mean()
        pointwise[r] = sup_mean
    report = CouplingReport(
        n, t_final, grid[1] - grid[0], p, pathwise, pointwise,
        float(pathwise.mean()), float(pointwise.mean()),
        bootstrap_ci(pathwise), bootstrap_ci(pointwise))
    return report, np.asarray(transport_costs)


# ---------------------------------------------------------------------------
# Model builders
# ---------------------------------------------------------------------------

def choose_leader_model(kernel):
    """Imitation dynamics: at unit rate, adopt another particle's state
    pushed through a transition kernel.

    `kernel` is either a row-stochastic matrix over integer-coded states
    (finite case) or a callable (y, w) -> new point with w uniform(0,1).
    The copied particle is chosen uniformly among the *other* n-1
    particles (one occurrence of the jumper's own value is excluded).
    """
    if callable(kernel):
        push = kernel
    else:
        kmat = np.asarray(kernel, dtype=float)
        if np.any(np.abs(kmat.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("kernel rows must sum to 1")
        cum = np.cumsum(kmat, axis=1)

        def push(y, w):
            row = cum[int(round(float(y)))]
            return float(np.searchsorted(row, w, side="right").clip(0, len(row) - 1))

    def jump(x, atoms, theta):
        u, w = theta
        vals = atoms[:, 0]
        # drop one occurrence of the jumper's own value (insertion point is
        # clipped: against a frozen reference flow the value may be absent)
        self_pos = min(int(np.searchsorted(vals, x[0])), len(vals) - 1)
        rest = np.delete(vals, self_pos)
        if len(rest) == 0:
            return np.array([push(x[0], w)])
        y = rest[min(int(u * len(rest)), len(rest) - 1)]
        return np.array([push(y, w)])

    return MeanFieldJumpModel(
        rate=lambda x, atoms: 1.0,
        rate_bound=1.0,
        jump=jump,
        theta_sampler=lambda gen: (float(gen.random()), float(gen.random())),
        flow=None,
        domain="euclidean")


def bgk_model(collision_rate, box_size, radius, d):
    """Relaxation-to-local-equilibrium kinetic model on R^{2d}.

    States are (position, velocity); positions drift with velocity in a
    periodic box; at constant rate the velocity is resampled from the
    Gaussian whose mean/temperature are the empirical moments of the
    velocities within `radius` of the particle (wrapped distance).
    """

    def flow(zs):
        out = np.zeros_like(zs)
        out[:, :d] = zs[:, d:]
        return out

    def local_moments(x_pos, atoms):
        diff = np.abs(atoms[:, :d] - x_pos[None, :])
        diff = np.minimum(diff, box_size - diff)
        mask = np.sqrt(np.sum(diff * diff, axis=1)) <= radius
        if not np.any(mask):
            mask = np.ones(len(atoms), dtype=bool)
        vel = atoms[mask, d:]
        u = vel.mean(axis=0)
        temp = float(np.mean(np.sum((vel - u) ** 2, axis=1)) / d)
        return u, max(temp, 0.0)

    def jump(z, atoms, theta):
        u, temp = local_moments(z[:d], atoms)
        out = z.copy()
        out[d:] = u + np.sqrt(temp) * np.asarray(theta, dtype=float)
        return out

    return MeanFieldJumpModel(
        rate=lambda z, atoms: float(collision_rate),
        rate_bound=float(collision_rate),
        jump=jump,
        theta_sampler=lambda gen: gen.standard_normal(d),
        flow=flow,
        domain="kinetic")
