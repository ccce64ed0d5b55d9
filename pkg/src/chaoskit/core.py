"""Shared state types, splittable randomness, and model descriptions."""

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from numpy.random import Generator, SeedSequence, default_rng

TWO_PI = 2.0 * np.pi
_MASK64 = (1 << 64) - 1

# purpose tags used as the last element of RNG paths
INIT = 0
DIFFUSION = 1
EVENTS = 2
COLLATERAL = 3
PAIR = 4
REPLICA = 5


@dataclass(frozen=True)
class RngStream:
    """Counter-based splittable random stream.

    A stream is identified by (seed, path); children are derived by appending
    64-bit labels to the path.  Identical (seed, path) reproduces the
    identical number sequence on any thread schedule.
    """

    seed: int
    path: tuple = ()

    def split(self, *labels) -> "RngStream":
        extra = tuple(int(l) & _MASK64 for l in labels)
        return RngStream(self.seed, self.path + extra)

    def generator(self) -> Generator:
        return default_rng(SeedSequence(self.seed, spawn_key=self.path))


def split_stream(parent: RngStream, label: int) -> RngStream:
    """Child stream with path = parent path ++ [label]."""
    return parent.split(label)


def wrap_torus(xs):
    return np.mod(xs, TWO_PI)


@dataclass(frozen=True)
class ParticleState:
    """Time-stamped N-particle configuration in R^d (or on the torus)."""

    t: float
    xs: np.ndarray  # (N, d)
    domain: str = "euclidean"  # euclidean | torus | kinetic

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim != 2 or xs.shape[0] < 1:
            raise ValueError("xs must be a (N, d) array with N >= 1")
        if not np.all(np.isfinite(xs)):
            raise ValueError("non-finite coordinate in particle state")
        if self.domain == "torus":
            xs = wrap_torus(xs)
        xs = xs.copy()
        xs.setflags(write=False)
        object.__setattr__(self, "xs", xs)

    @property
    def n(self):
        return self.xs.shape[0]

    @property
    def d(self):
        return self.xs.shape[1]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform-weight atomic measure (1/N) sum_i delta_{x_i}."""

    atoms: np.ndarray  # (N, d)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.shape[0] < 1:
            raise ValueError("empirical measure needs at least one atom")
        atoms = atoms.copy()
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self):
        return self.atoms.shape[0]

    @property
    def d(self):
        return self.atoms.shape[1]

    @property
    def weight(self):
        return 1.0 / self.n


def canonical_sort(atoms: np.ndarray) -> np.ndarray:
    """Lexicographically sorted copy of an atom array.

    Simulators pass canonically sorted atoms to model callbacks so that every
    derived quantity is invariant, bit for bit, under particle permutations.
    """
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    if atoms.shape[1] == 1:
        return np.sort(atoms, axis=0)
    order = np.lexsort(atoms.T[::-1])
    return atoms[order]


def canonical_order(atoms: np.ndarray) -> np.ndarray:
    """Index array putting atoms into canonical (lexicographic) order."""
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    if atoms.shape[1] == 1:
        return np.argsort(atoms[:, 0], kind="stable")
    return np.lexsort(atoms.T[::-1])


def canonical_order_labeled(atoms: np.ndarray, labels) -> np.ndarray:
    """Canonical order with ties between equal atoms broken by persistent
    label, so the position -> particle map is permutation equivariant even
    when coordinates coincide."""
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    keys = (np.asarray(labels),) + tuple(atoms.T)[::-1]
    return np.lexsort(keys)


def empirical_of(state: ParticleState) -> EmpiricalMeasure:
    """Empirical measure of a configuration; atom order preserved."""
    return EmpiricalMeasure(state.xs)


def domain_distance(domain: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise distance between (N,d) arrays; wrapped metric on the torus."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if domain == "torus":
        diff = np.mod(diff, TWO_PI)
        diff = np.minimum(diff, TWO_PI - diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class TrajectoryBundle:
    """Time-gridded path ensemble: states[k] is the configuration at times[k]."""

    times: np.ndarray  # (K+1,) strictly increasing
    states: np.ndarray  # (K+1, N, d)
    domain: str = "euclidean"
    jump_log: Optional[list] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ValueError("grid times must be strictly increasing")
        if states.shape[0] != times.shape[0]:
            raise ValueError("one state per grid time required")
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def d(self):
        return self.states.shape[2]

    def state_at(self, k: int) -> ParticleState:
        return ParticleState(self.times[k], self.states[k], self.domain)

    def final_state(self) -> ParticleState:
        return self.state_at(len(self.times) - 1)


FMT = "%.17g"


def bundle_to_csv(bundle: TrajectoryBundle, path, replica: int = 0):
    """One row per particle per grid time: replica, t, index, coordinates."""
    d = bundle.d
    header = "replica,t,particle," + ",".join(f"x{k}" for k in range(d))
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for k, t in enumerate(bundle.times):
            for i in range(bundle.n):
                coords = ",".join(FMT % v for v in bundle.states[k, i])
                fh.write(f"{replica},{FMT % t},{i},{coords}\n")


# ---------------------------------------------------------------------------
# Model specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionModel:
    """Mean-field diffusion dX = b(X, mu) dt + sigma(X, mu) dB.

    `drift(xs, atoms)` is evaluated for the whole configuration at once:
    xs is the (N,d) coordinate array and atoms the canonically sorted atoms
    of the interaction measure.  `sigma` is a scalar, a (d,) diagonal, or a
    callable with the same signature returning a (N,d) diagonal field
    (general full matrices are not needed by any model in this suite).
    """

    drift: Callable
    sigma: Union[float, np.ndarray, Callable]
    domain: str = "euclidean"
    lipschitz: Optional[dict] = None

    def sigma_at(self, xs, atoms):
        if callable(self.sigma):
            return self.sigma(xs, atoms)
        return np.broadcast_to(np.asarray(self.sigma, dtype=float), xs.shape)


@dataclass(frozen=True)
class MeanFieldJumpModel:
    """Mean-field jump / PDMP mechanism.

    rate(x, atoms) <= rate_bound everywhere; jump(x, atoms, theta) returns
    the post-jump point with theta drawn by theta_sampler(gen); flow(xs) is
    the deterministic drift field between jumps (None = no flow);
    collateral(x_other, x_jumper, atoms, theta_other, theta_jumper) is the
    simultaneous-jump amplitude applied as collateral/N to every other
    particle (None = no simultaneous jumps).
    """

    rate: Callable
    rate_bound: float
    jump: Callable
    theta_sampler: Callable
    flow: Optional[Callable] = None
    collateral: Optional[Callable] = None
    domain: str = "euclidean"


@dataclass(frozen=True)
class CollisionModel:
    """Binary-collision mechanism with bounded symmetric pair rate.

    Either a parametric post-collision map (psi1, psi2, theta_sampler) or a
    general sampler post(z1, z2, gen) -> (z1', z2') must be given.  With
    free_flight set, the first pos_dim coordinates advance by the trailing
    pos_dim coordinates between events (kinetic transport); box_size, when
    set, wraps positions periodically.
    """

    rate: Callable
    rate_bound: float
    psi1: Optional[Callable] = None
    psi2: Optional[Callable] = None
    theta_sampler: Optional[Callable] = None
    post: Optional[Callable] = None
    free_flight: bool = False
    pos_dim: int = 0
    box_size: Optional[float] = None
    constant_rate: bool = False
    domain: str = "euclidean"

    def __post_init__(self):
        parametric = self.psi1 is not None and self.psi2 is not None \
            and self.theta_sampler is not None
        if not parametric and self.post is None:
            raise ValueError("collision model needs (psi1, psi2, nu) or post sampler")

    def sample_post(self, z1, z2, gen: Generator):
        if self.post is not None:
            return self.post(z1, z2, gen)
        theta = self.theta_sampler(gen)
        return (np.asarray(self.psi1(z1, z2, theta), dtype=float),
                np.asarray(self.psi2(z1, z2, theta), dtype=float))

    def transport(self, xs, dt):
        """Deterministic flow between events."""
        if not self.free_flight or dt == 0.0:
            return xs
        out = xs.copy()
        p = self.pos_dim
        out[:, :p] = out[:, :p] + dt * out[:, p:2 * p]
        if self.box_size is not None:
            out[:, :p] = np.mod(out[:, :p], self.box_size)
        return out


def bootstrap_ci(values, n_boot=200, seed=0, level=0.95):
    """Percentile bootstrap interval for the mean of `values`.

    Deterministic given the seed; resampling is independent of the order in
    which the values were produced only through their sorted arrangement,
    so aggregates do not depend on replica scheduling.
    """
    values = np.sort(np.asarray(values, dtype=float))
    gen = default_rng(SeedSequence(seed, spawn_key=(0xB007,)))
    idx = gen.integers(0, len(values), size=(n_boot, len(values)))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


class ParticleNoise:
    """Per-particle Gaussian noise streams keyed by persistent labels.

    Draw order inside each per-label stream is fixed, so permuting particles
    together with their labels permutes the noise exactly.
    """

    def __init__(self, root: RngStream, labels, d: int):
        self.d = d
        self.gens = [root.split(int(l), DIFFUSION).generator() for l in labels]

    def block(self, steps: int) -> np.ndarray:
        """(n_particles, steps, d) standard normals."""
        return np.stack([g.standard_normal((steps, self.d)) for g in self.gens])
