"""Exact finite-state computations used as ground truth for simulators.

Sparse generator matrices on product spaces E^N (E = {0..m-1}), stable
evolution of distributions by uniformization, exact marginals and moment
measures, checks of the marginal-approximation, entropy-subadditivity and
empirical-map isometry bounds, and the nonlinear single-particle ODE.
"""

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .metrics import relative_entropy_discrete

STATE_CAP = 2_000_000


# ---------------------------------------------------------------------------
# Indexing: mixed-radix little-endian (slot 0 is the least significant digit)
# ---------------------------------------------------------------------------

def state_index(x, m):
    """Index of the configuration tuple x = (x_0, ..., x_{N-1})."""
    s = 0
    for k in reversed(range(len(x))):
        s = s * m + int(x[k])
    return s


def index_state(s, m, n):
    """Configuration tuple of an index (inverse of state_index)."""
    out = []
    for _ in range(n):
        out.append(s % m)
        s //= m
    return tuple(out)


def _as_grid(f, m, n):
    """(m,)*n array view with axis i = slot i (little-endian layout)."""
    return np.asarray(f, dtype=float).reshape([m] * n, order="F")


def _from_grid(arr):
    return np.asarray(arr).reshape(-1, order="F")


# ---------------------------------------------------------------------------
# Finite models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteMeanFieldModel:
    """Finite-state mean-field jump mechanism.

    rate(e, hist) and kernel(e, hist) -> row over E, where hist is the
    empirical histogram seen by the jumping particle; with exclude_self the
    histogram counts only the other N-1 particles (matching the
    imitation-type simulators), otherwise all N.
    """

    m: int
    rate: Callable
    kernel: Callable
    exclude_self: bool = True


@dataclass(frozen=True)
class FiniteCollisionModel:
    """Finite-state binary-collision mechanism.

    rate(e1, e2) symmetric with rate(e, e) allowed to be 0; gamma2(e1, e2)
    is the (m, m) post-collision distribution over ordered outcomes.
    """

    m: int
    rate: Callable
    gamma2: Callable


def _hist_of(x, m, skip=None):
    h = np.zeros(m)
    for k, e in enumerate(x):
        if k == skip:
            continue
        h[e] += 1.0
    return h / h.sum()


def build_generator(model, n):
    """Sparse rate matrix Q over E^n (rows sum to zero).

    Mean-field: each slot jumps at rate(e_i, hist) to kernel(e_i, hist);
    collision: each unordered pair reacts at rate(e_i, e_j)/n with ordered
    outcomes from gamma2.
    """
    m = model.m
    size = m ** n
    if size > STATE_CAP:
        raise ValueError(f"state space {size} exceeds cap {STATE_CAP}")
    rows, cols, vals = [], [], []

    def add(s, s2, q):
        rows.append(s)
        cols.append(s2)
        vals.append(q)
        rows.append(s)
        cols.append(s)
        vals.append(-q)

    if isinstance(model, FiniteMeanFieldModel):
        for s in range(size):
            x = index_state(s, m, n)
            for i in range(n):
                hist = _hist_of(x, m, skip=i if model.exclude_self else None)
                lam = float(model.rate(x[i], hist))
                if lam < 0:
                    raise ValueError("negative rate")
                if lam == 0.0:
                    continue
                row = np.asarray(model.kernel(x[i], hist), dtype=float)
                if abs(row.sum() - 1.0) > 1e-12 or np.any(row < -1e-15):
                    raise ValueError("kernel row is not a distribution")
                for e2 in range(m):
                    if e2 == x[i] or row[e2] == 0.0:
                        continue
                    add(s, s + (e2 - x[i]) * m ** i, lam * row[e2])
    elif isinstance(model, FiniteCollisionModel):
        for s in range(size):
            x = index_state(s, m, n)
            for i in range(n):
                for j in range(i + 1, n):
                    lam = float(model.rate(x[i], x[j])) / n
                    if lam < 0:
                        raise ValueError("negative rate")
                    if lam == 0.0:
                        continue
                    g = np.asarray(model.gamma2(x[i], x[j]), dtype=float)
                    if abs(g.sum() - 1.0) > 1e-12 or np.any(g < -1e-15):
                        raise ValueError("gamma2 is not a distribution")
                    for e1 in range(m):
                        for e2 in range(m):
                            if g[e1, e2] == 0.0 or (e1 == x[i] and e2 == x[j]):
                                continue
                            s2 = s + (e1 - x[i]) * m ** i + (e2 - x[j]) * m ** j
                            add(s, s2, lam * g[e1, e2])
    else:
        raise TypeError("unknown finite model type")
    q = sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))
    q.sum_duplicates()
    return q


def exact_evolve(q, f0, t, tail=1e-12):
    """Distribution at time t by uniformization of e^{tQ}.

    f_t = sum_k Poisson(k; eta t) * f0 (I + Q/eta)^k, truncated when the
    remaining Poisson mass drops below `tail`.  Positivity- and
    mass-preserving for any t >= 0.
    """
    f0 = np.asarray(f0, dtype=float)
    if t < 0:
        raise ValueError("t must be nonnegative")
    eta = float(-q.diagonal().min())
    if eta == 0.0 or t == 0.0:
        return f0.copy()
    mu = eta * t
    v = f0.copy()
    out = np.zeros_like(f0)
    log_w = -mu  # log Poisson weight at k = 0
    cum = 0.0
    k = 0
    while cum < 1.0 - tail:
        w = np.exp(log_w)
        out += w * v
        cum += w
        k += 1
        v = v + (v @ q) / eta
        log_w += np.log(mu) - np.log(k)
        if k > mu + 50 * np.sqrt(mu) + 50:
            break
    return out


def exact_marginal(fn, k, m, n):
    """k-particle marginal: sum out slots k..n-1."""
    if k > n:
        raise ValueError("k must not exceed n")
    arr = _as_grid(fn, m, n)
    if k == n:
        return np.asarray(fn, dtype=float).copy()
    return _from_grid(arr.sum(axis=tuple(range(k, n))))


def exact_moment_measure(fn, k, m, n):
    """k-th moment measure of the empirical histogram under f^N.

    F^{k,N} = sum_x f^N(x) mu_x^{tensor k}, enumerated exactly.
    """
    fn = np.asarray(fn, dtype=float)
    if m ** k > STATE_CAP:
        raise ValueError("moment-measure target exceeds cap")
    out = np.zeros([m] * k)
    for s, p in enumerate(fn):
        if p == 0.0:
            continue
        x = index_state(s, m, n)
        mu = _hist_of(x, m)
        tens = mu
        for _ in range(k - 1):
            tens = np.multiply.outer(tens, mu)
        out += p * tens
    # multiply.outer stacks axes in slot order, matching the grid layout
    return _from_grid(out)


def is_symmetric(fn, m, n, tol=1e-10):
    """Invariance under all adjacent slot transpositions (generates S_n)."""
    arr = _as_grid(fn, m, n)
    for i in range(n - 1):
        if not np.allclose(arr, np.swapaxes(arr, i, i + 1), atol=tol):
            return False
    return True


def symmetrize(fn, m, n):
    """Average of fn over all slot permutations."""
    arr = _as_grid(fn, m, n)
    acc = np.zeros_like(arr)
    perms = list(itertools.permutations(range(n)))
    for p in perms:
        acc += np.transpose(arr, p)
    return _from_grid(acc / len(perms))


def check_grunbaum(fn, k, m, n):
    """Total variation between the k-marginal and the k-th moment measure
    against the dimensional bound 2k(k-1)/n."""
    if not is_symmetric(fn, m, n):
        raise ValueError("check_grunbaum requires a symmetric distribution")
    tv = float(np.abs(exact_marginal(fn, k, m, n)
                      - exact_moment_measure(fn, k, m, n)).sum())
    bound = 2.0 * k * (k - 1) / n
    return tv, bound, tv <= bound + 1e-12


def check_csiszar(fn, f, k, m, n):
    """Entropy subadditivity: H(f^{k,N} | f^{tensor k}) vs (k/N) times the
    full relative entropy against the product law."""
    if not is_symmetric(fn, m, n):
        raise ValueError("check_csiszar requires a symmetric distribution")
    f = np.asarray(f, dtype=float)

    def product(j):
        tens = f
        for _ in range(j - 1):
            tens = np.multiply.outer(tens, f)
        return _from_grid(tens) if j > 1 else f.copy()

    lhs = relative_entropy_discrete(exact_marginal(fn, k, m, n), product(k))
    rhs = k / n * relative_entropy_discrete(np.asarray(fn, dtype=float),
                                            product(n))
    return lhs, rhs, lhs <= rhs + 1e-12


# ---------------------------------------------------------------------------
# Wasserstein LP and the empirical-map isometry check
# ---------------------------------------------------------------------------

def w1_lp(p, q, cost):
    """Exact W_1 between two distributions via the transport LP."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    cost = np.asarray(cost, dtype=float)
    a, b = len(p), len(q)
    c = cost.reshape(-1)
    rows = []
    rhs = []
    data, ri, ci = [], [], []
    for i in range(a):
        for j in range(b):
            ri.append(i)
            ci.append(i * b + j)
            data.append(1.0)
    for j in range(b):
        for i in range(a):
            ri.append(a + j)
            ci.append(i * b + j)
            data.append(1.0)
    a_eq = sparse.csr_matrix((data, (ri, ci)), shape=(a + b, a * b))
    b_eq = np.concatenate([p, q])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def check_w1_isometry(fn, gn, ground, m, n):
    """Empirical-map isometry: W_1 on E^N with the normalized product
    distance equals W_1 between the pushforwards onto histograms with
    ground cost W_1 on P(E).

    Returns (lhs, rhs, gap)."""
    if not (is_symmetric(fn, m, n) and is_symmetric(gn, m, n)):
        raise ValueError("check_w1_isometry requires symmetric inputs")
    size = m ** n
    if size > 1000:
        raise ValueError("state space too large for the LP check")
    ground = np.asarray(ground, dtype=float)
    states = [index_state(s, m, n) for s in range(size)]
    cost = np.empty((size, size))
    for s1, x in enumerate(states):
        for s2, y in enumerate(states):
            cost[s1, s2] = np.mean([ground[a, b] for a, b in zip(x, y)])
    lhs = w1_lp(fn, gn, cost)

    hists = {}
    for s, x in enumerate(states):
        key = tuple(np.bincount(x, minlength=m))
        hists.setdefault(key, [0.0, 0.0])
    for s, x in enumerate(states):
        key = tuple(np.bincount(x, minlength=m))
        hists[key][0] += fn[s]
        hists[key][1] += gn[s]
    keys = sorted(hists)
    pf = np.array([hists[k][0] for k in keys])
    pg = np.array([hists[k][1] for k in keys])
    hcost = np.empty((len(keys), len(keys)))
    for a, ka in enumerate(keys):
        mu_a = np.asarray(ka, dtype=float) / n
        for b, kb in enumerate(keys):
            mu_b = np.asarray(kb, dtype=float) / n
            hcost[a, b] = w1_lp(mu_a, mu_b, ground)
    rhs = w1_lp(pf, pg, hcost)
    return lhs, rhs, abs(lhs - rhs)


def nonlinear_finite_ode(model: FiniteMeanFieldModel, f0, t_final,
                         n_steps=1000):
    """RK4 integration of the m-dimensional limiting evolution equation
    d f / dt = sum_e f(e) rate(e, f) (kernel(e, f) - delta_e)."""
    f = np.asarray(f0, dtype=float).copy()
    m = model.m

    def rhs(f):
        out = np.zeros(m)
        for e in range(m):
            lam = float(model.rate(e, f))
            if lam == 0.0 or f[e] == 0.0:
                continue
            row = np.asarray(model.kernel(e, f), dtype=float)
            out += f[e] * lam * row
            out[e] -= f[e] * lam
        return out

    h = t_final / n_steps
    for _ in range(n_steps):
        k1 = rhs(f)
        k2 = rhs(f + 0.5 * h * k1)
        k3 = rhs(f + 0.5 * h * k2)
        k4 = rhs(f + h * k3)
        f = f + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return f


def evolve_to_csv(f, path):
    """State-indexed probabilities, one row per state."""
    with open(path, "w", newline="") as fh:
        fh.write("state,probability\n")
        for s, p in enumerate(np.asarray(f, dtype=float)):
            fh.write(f"{s},{p:.17g}\n")


# ---------------------------------------------------------------------------
# Finite model builders matching the simulator-side builders
# ---------------------------------------------------------------------------

def finite_choose_leader(kernel):
    """Imitation dynamics on a finite state set: unit rate, adopt a
    uniformly chosen other particle's state pushed through the kernel."""
    kmat = np.asarray(kernel, dtype=float)

    def krow(e, hist):
        return hist @ kmat

    return FiniteMeanFieldModel(m=kmat.shape[0],
                                rate=lambda e, hist: 1.0,
                                kernel=krow,
                                exclude_self=True)


def finite_cyclic_collision(m=3):
    """Cyclic mixing collisions on Z_m: distinct states react at unit rate
    and update to ((a + w b) mod m, (b + w a) mod m) with w uniform."""

    def gamma2(a, b):
        g = np.zeros((m, m))
        for w in range(m):
            g[(a + w * b) % m, (b + w * a) % m] += 1.0 / m
        return g

    return FiniteCollisionModel(m=m,
                                rate=lambda a, b: 0.0 if a == b else 1.0,
                                gamma2=gamma2)
