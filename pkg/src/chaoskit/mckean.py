"""Mean-field diffusion simulators, nonlinear references, and couplings.

Euler-Maruyama particle systems whose drift/diffusion see the empirical
measure, a frozen-flow fixed-point construction of the limiting nonlinear
process, the synchronous coupling between the two, and a reflection
coupling for contraction diagnostics.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import core
from .core import (DiffusionModel, ParticleNoise, ParticleState, RngStream,
                   TrajectoryBundle, bootstrap_ci, canonical_sort,
                   domain_distance, wrap_torus)
from .kernels import alignment_force_cross
from .metrics import w1_exact_1d, wp_assignment

NOISE_CHUNK = 128  # steps of pre-drawn normals held in memory at once


@dataclass(frozen=True)
class DiffusionRun:
    """Configuration of one particle-system simulation."""

    model: DiffusionModel
    n: int
    dt: float
    t_final: float
    root: RngStream
    init: object  # (n, d) array, or sampler gen -> (d,) point
    d: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("t_final must be an integral number of dt steps")

    @property
    def steps(self):
        return int(round(self.t_final / self.dt))


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        bad = int(np.where(~np.isfinite(arr).all(axis=-1))[0][0])
        raise FloatingPointError(f"non-finite {what} at particle index {bad}")


def _step_xs(xs, model, dt, noise, atoms):
    """One Euler-Maruyama step on raw coordinate arrays."""
    b = np.asarray(model.drift(xs, atoms), dtype=float)
    _check_finite(b, "drift")
    sig = np.asarray(model.sigma_at(xs, atoms), dtype=float)
    _check_finite(sig, "diffusion coefficient")
    out = xs + b * dt + sig * np.sqrt(dt) * noise
    if model.domain == "torus":
        out = wrap_torus(out)
    return out


def em_step(state, model, dt, noise):
    """Single Euler-Maruyama step; interaction measure is the state itself."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    atoms = canonical_sort(state.xs)
    xs = _step_xs(np.asarray(state.xs), model, dt, np.asarray(noise, dtype=float),
                  atoms)
    return ParticleState(state.t + dt, xs, model.domain)


def draw_init(init, root, n, d, labels=None):
    """Initial configuration: fixed array, or one draw per particle from
    that particle's own labelled stream (keeps permutation equivariance)."""
    if not callable(init):
        return np.array(init, dtype=float).reshape(n, d)  # copy: never mutate caller data
    if labels is None:
        labels = range(n)
    gens = [root.split(int(l), core.INIT).generator() for l in labels]
    return np.stack([np.asarray(init(g), dtype=float).reshape(d)
                     for g in gens])


def simulate_particles(run: DiffusionRun, labels=None) -> TrajectoryBundle:
    """Euler-Maruyama simulation of the interacting particle system.

    Per-particle noise comes from streams keyed by persistent labels
    (default 0..n-1), independent of evaluation order.
    """
    model, n, dt = run.model, run.n, run.dt
    if labels is None:
        labels = np.arange(n)
    xs = draw_init(run.init, run.root, n, run.d, labels)
    if model.domain == "torus":
        xs = wrap_torus(xs)
    noise = ParticleNoise(run.root, labels, run.d)
    steps = run.steps
    rec_times = [0.0]
    rec_states = [xs.copy()]
    t = 0.0
    done = 0
    while done < steps:
        take = min(NOISE_CHUNK, steps - done)
        block = noise.block(take)  # (n, take, d)
        for s in range(take):
            atoms = canonical_sort(xs)
            xs = _step_xs(xs, model, dt, block[:, s, :], atoms)
            t = (done + s + 1) * dt
            if (done + s + 1) % run.stride == 0 or done + s + 1 == steps:
                rec_times.append(t)
                rec_states.append(xs.copy())
        done += take
    return TrajectoryBundle(np.array(rec_times), np.array(rec_states),
                            model.domain)


# ---------------------------------------------------------------------------
# Nonlinear reference via frozen-flow fixed-point iteration
# ---------------------------------------------------------------------------

@dataclass
class ReferenceFlow:
    """Ensemble approximation of the limiting nonlinear process.

    bundle holds M copies on the full time grid; the copies of the last
    iterate are driven by the *frozen* empirical flow of the previous
    iterate, so they are conditionally independent given that flow.
    """

    bundle: TrajectoryBundle
    init: Callable
    dt: float
    picard_increments: list
    converged: bool
    _sorted: Optional[np.ndarray] = field(default=None, repr=False)

    def sorted_states(self):
        """Canonically sorted flow atoms per grid time, computed once."""
        if self._sorted is None:
            self._sorted = np.stack([canonical_sort(s)
                                     for s in self.bundle.states])
        return self._sorted

    def marginal_atoms(self, k=None):
        """Flow atoms at grid index k (default: final time)."""
        if k is None:
            k = len(self.bundle.times) - 1
        return self.bundle.states[k]


def _flow_increment(prev, new, domain, cap=2048):
    """W_1 between two flow snapshots at the final time."""
    a, b = prev[-1], new[-1]
    if a.shape[1] == 1 and domain != "torus":
        return w1_exact_1d(a, b)
    m = min(len(a), cap)
    return wp_assignment(a[:m], b[:m], p=1, cap=cap)


def nonlinear_reference(model, init, m_copies, t_final, dt, picard_iters,
                        root, tol=1e-2, d=1):
    """Frozen-flow fixed-point ensemble for the nonlinear limit process.

    Iteration 0 is a plain m_copies-particle system.  Each later iteration
    re-simulates the same m_copies paths with identical per-copy noise,
    feeding the drift the frozen empirical flow of the previous iteration.
    Returns the last iterate with per-iteration W_1 increments at the final
    time; converged is False if the last increment exceeds tol.
    """
    if m_copies < 2:
        raise ValueError("need at least 2 copies")
    if picard_iters < 1:
        raise ValueError("picard_iters must be >= 1")
    steps = int(round(t_final / dt))
    if abs(t_final / dt - steps) > 1e-9:
        raise ValueError("t_final must be an integral number of dt steps")
    labels = np.arange(m_copies)
    x0 = draw_init(init, root, m_copies, d)
    if model.domain == "torus":
        x0 = wrap_torus(x0)

    def run_once(frozen):
        """One sweep; frozen is None (self-interacting) or (steps+1, M, d)
        pre-sorted flow atoms."""
        noise = ParticleNoise(root, labels, d)
        xs = x0.copy()
        out = np.empty((steps + 1, m_copies, d))
        out[0] = xs
        done = 0
        while done < steps:
            take = min(NOISE_CHUNK, steps - done)
            block = noise.block(take)
            for s in range(take):
                k = done + s
                atoms = canonical_sort(xs) if frozen is None else frozen[k]
                xs = _step_xs(xs, model, dt, block[:, s, :], atoms)
                out[k + 1] = xs
            done += take
        return out

    flow = run_once(None)
    increments = []
    for _ in range(picard_iters):
        frozen = np.stack([canonical_sort(s) for s in flow])
        new_flow = run_once(frozen)
        increments.append(_flow_increment(flow, new_flow, model.domain))
        flow = new_flow
        del frozen
    times = np.arange(steps + 1) * dt
    bundle = TrajectoryBundle(times, flow, model.domain)
    converged = increments[-1] <= tol
    return ReferenceFlow(bundle, init if callable(init) else None, dt,
                         increments, converged)


# ---------------------------------------------------------------------------
# Couplings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingReport:
    """Pathwise/pointwise coupling errors per replica and aggregated.

    pathwise[r] estimates E sup_t |X^i - Xbar^i|^p in replica r (mean over
    particles of the per-particle running sup); pointwise[r] estimates
    sup_t E |X^i - Xbar^i|^p (running sup of the particle mean)."""

    n: int
    t_final: float
    dt: float
    p: int
    pathwise: np.ndarray
    pointwise: np.ndarray
    eps_pathwise: float
    eps_pointwise: float
    ci_pathwise: tuple
    ci_pointwise: tuple

    def __post_init__(self):
        if np.any(np.asarray(self.pointwise) >
                  np.asarray(self.pathwise) + 1e-14):
            raise ValueError("pointwise error exceeds pathwise error")


def synchronous_coupling(model, n, reference: ReferenceFlow, t_final, dt,
                         root, reps=1, p=2) -> CouplingReport:
    """Couple an n-particle system to n nonlinear copies with shared noise.

    Copies i = 0..n-1 of the reference are re-simulated against the frozen
    reference flow using exactly the noise streams of particles 0..n-1, so
    the gap isolates the empirical-vs-limit drift mismatch.
    """
    times = reference.bundle.times
    steps = len(times) - 1
    if abs(times[1] - times[0] - dt) > 1e-12 or \
            abs(times[-1] - t_final) > 1e-9:
        raise ValueError("coupling grid does not match the reference grid")
    if reference.bundle.n < n:
        raise ValueError("reference must hold at least n copies")
    if reference.init is None:
        raise ValueError("reference built from a fixed array cannot be coupled")
    frozen = reference.sorted_states()
    labels = np.arange(n)
    pathwise = np.empty(reps)
    pointwise = np.empty(reps)
    for r in range(reps):
        rroot = root.split(core.REPLICA, r)
        x0 = draw_init(reference.init, rroot, n, reference.bundle.d)
        if model.domain == "torus":
            x0 = wrap_torus(x0)
        xs = x0.copy()
        ys = x0.copy()
        noise = ParticleNoise(rroot, labels, reference.bundle.d)
        sup_per_particle = np.zeros(n)
        sup_mean = 0.0
        done = 0
        while done < steps:
            take = min(NOISE_CHUNK, steps - done)
            block = noise.block(take)
            for s in range(take):
                k = done + s
                atoms = canonical_sort(xs)
                xs = _step_xs(xs, model, dt, block[:, s, :], atoms)
                ys = _step_xs(ys, model, dt, block[:, s, :], frozen[k])
                gap = domain_distance(model.domain, xs, ys) ** p
                sup_per_particle = np.maximum(sup_per_particle, gap)
                sup_mean = max(sup_mean, float(gap.mean()))
            done += take
        pathwise[r] = sup_per_particle.mean()
        pointwise[r] = sup_mean
    return CouplingReport(
        n, t_final, dt, p, pathwise, pointwise,
        float(pathwise.mean()), float(pointwise.mean()),
        bootstrap_ci(pathwise), bootstrap_ci(pointwise))


@dataclass(frozen=True)
class ReflectionConfig:
    """Reflection-coupling diagnostics configuration.

    f is a concave increasing distance warp with f(0) = 0 (default
    1 - exp(-r)); c is the claimed contraction rate; pairs closer than
    delta_couple are merged permanently (None = 2 sigma sqrt(dt))."""

    f: Callable = None
    c: float = 1.0
    delta_couple: Optional[float] = None
    kappa: Optional[Callable] = None

    def __post_init__(self):
        if self.f is None:
            object.__setattr__(self, "f", lambda r: 1.0 - np.exp(-r))
        grid = np.linspace(0.0, 10.0, 201)
        vals = self.f(grid)
        if abs(float(np.atleast_1d(self.f(0.0))[0])) > 1e-12:
            raise ValueError("f(0) must be 0")
        dif = np.diff(vals)
        if np.any(dif < -1e-12) or np.any(np.diff(dif) > 1e-12):
            raise ValueError("f must be increasing and concave")


def reflection_coupling(model, n_pairs, t_final, dt, config: ReflectionConfig,
                        root, d=1, init=None):
    """Run n_pairs independent reflection-coupled pairs of one diffusion.

    The partner's noise is the mirror image of the primary's across the
    current difference direction; merged pairs evolve identically forever.
    Returns the time grid, mean f(|X_t - Y_t|), and the coupled fraction.
    """
    if callable(model.sigma):
        raise ValueError("reflection coupling needs a constant scalar sigma")
    sigma = float(np.asarray(model.sigma).reshape(-1)[0])
    delta = config.delta_couple
    if delta is None:
        delta = 2.0 * sigma * np.sqrt(dt)
    steps = int(round(t_final / dt))
    if init is None:
        init = lambda g: g.standard_normal(d)
    xs = draw_init(init, root.split(0), n_pairs, d)
    ys = draw_init(init, root.split(1), n_pairs, d)
    noise = ParticleNoise(root, np.arange(n_pairs), d)
    merged = np.zeros(n_pairs, dtype=bool)
    times = np.arange(steps + 1) * dt
    mean_f = np.empty(steps + 1)
    frac = np.empty(steps + 1)

    def record(k):
        r = np.linalg.norm(xs - ys, axis=1)
        r[merged] = 0.0
        mean_f[k] = float(np.mean(config.f(r)))
        frac[k] = float(np.mean(merged))

    merged |= np.linalg.norm(xs - ys, axis=1) < delta
    ys[merged] = xs[merged]
    record(0)
    done = 0
    while done < steps:
        take = min(NOISE_CHUNK, steps - done)
        block = noise.block(take)
        for s in range(take):
            diff = xs - ys
            r = np.linalg.norm(diff, axis=1)
            safe = np.where(r > 0, r, 1.0)
            e = diff / safe[:, None]
            xi = block[:, s, :]
            # mirrored noise for the partner, same noise once merged
            inner = np.sum(e * xi, axis=1)
            xi_y = np.where(merged[:, None], xi,
                            xi - 2.0 * inner[:, None] * e)
            bx = np.asarray(model.drift(xs, xs), dtype=float)
            by = np.asarray(model.drift(ys, ys), dtype=float)
            xs = xs + bx * dt + sigma * np.sqrt(dt) * xi
            ys = ys + by * dt + sigma * np.sqrt(dt) * xi_y
            newly = ~merged & (np.linalg.norm(xs - ys, axis=1) < delta)
            merged |= newly
            ys[merged] = xs[merged]
            record(done + s + 1)
        done += take
    return {"times": times, "mean_f": mean_f, "coupled_fraction": frac}


# ---------------------------------------------------------------------------
# Model builders
# ---------------------------------------------------------------------------

def gradient_model(grad_v, grad_w, sigma):
    """Gradient system b(x, mu) = -grad V(x) - mean_mu grad W(x - y).

    grad_v maps an (n, d) array to (n, d); grad_w maps an (n, m, d) array
    of differences to the same shape; either may be None (absent term).
    """

    def drift(xs, atoms):
        b = np.zeros_like(xs)
        if grad_v is not None:
            b -= np.asarray(grad_v(xs), dtype=float)
        if grad_w is not None:
            diff = xs[:, None, :] - atoms[None, :, :]
            b -= np.asarray(grad_w(diff), dtype=float).mean(axis=1)
        return b

    return DiffusionModel(drift=drift, sigma=sigma, domain="euclidean")


def kuramoto_model(k0, sigma):
    """Coupled oscillators on the circle with sinusoidal attraction.

    The mean-field drift at angle t is k0 * mean over atoms of sin(a - t),
    evaluated through the order parameter for an O(n + m) step.
    """

    def drift(xs, atoms):
        s = float(np.mean(np.sin(atoms[:, 0])))
        c = float(np.mean(np.cos(atoms[:, 0])))
        th = xs[:, 0]
        return (k0 * (s * np.cos(th) - c * np.sin(th)))[:, None]

    return DiffusionModel(drift=drift, sigma=sigma, domain="torus")


def cucker_smale_model(comm_scale, comm_decay, sigma, d):
    """Kinetic flocking model on R^{2d} states (position, velocity).

    Positions follow velocities; velocities feel the mean alignment force
    weighted by the communication kernel comm_scale/(1+r^2)^comm_decay.
    Noise acts on the velocity block only.
    """

    def drift(zs, atoms):
        pos = np.ascontiguousarray(zs[:, :d])
        vel = np.ascontiguousarray(zs[:, d:])
        apos = np.ascontiguousarray(atoms[:, :d])
        avel = np.ascontiguousarray(atoms[:, d:])
        force = alignment_force_cross(pos, vel, apos, avel,
                                      float(comm_scale), float(comm_decay))
        return np.hstack([vel, force])

    sig = np.concatenate([np.zeros(d), np.full(d, float(sigma))])
    return DiffusionModel(drift=drift, sigma=sig, domain="kinetic")
