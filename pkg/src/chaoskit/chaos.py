"""Chaos estimators, theorem-bound monitors, and convergence sweeps.

Monte Carlo estimates of the Wasserstein chaos functionals, reference rate
curves, the pathwise entropy-bound functional, the block empirical-measure
bound, a linear-model empirical-process statistic, and the sweep driver
with log-log slope fits.
"""

from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import RngStream, bootstrap_ci, canonical_sort
from .mckean import (ParticleNoise, ReferenceFlow, _step_xs, draw_init,
                     kuramoto_model, nonlinear_reference, synchronous_coupling)
from .metrics import get_kernel, hs_sq, w1_exact_1d, wp_assignment

NOISE_CHUNK = 128


# ---------------------------------------------------------------------------
# Slope fitting
# ---------------------------------------------------------------------------

def fit_loglog(ns, values, n_boot=200, seed=0):
    """OLS slope of log(mean value) against log N with a replica bootstrap.

    `values` is a list of per-replica arrays, one per N.  Returns
    (slope, intercept, ci_lo, ci_hi)."""
    ns = np.asarray(ns, dtype=float)
    means = np.array([float(np.mean(v)) for v in values])
    if np.any(means <= 0):
        raise ValueError("nonpositive estimate cannot be slope-fitted")
    lx = np.log(ns)
    slope, intercept = np.polyfit(lx, np.log(means), 1)
    gen = np.random.default_rng(np.random.SeedSequence(seed,
                                                       spawn_key=(0xF17,)))
    boots = np.empty(n_boot)
    vals = [np.asarray(v, dtype=float) for v in values]
    for b in range(n_boot):
        resampled = np.array([v[gen.integers(0, len(v), size=len(v))].mean()
                              for v in vals])
        resampled = np.maximum(resampled, 1e-300)
        boots[b] = np.polyfit(lx, np.log(resampled), 1)[0]
    lo, hi = np.quantile(boots, [0.025, 0.975])
    return float(slope), float(intercept), float(lo), float(hi)


def split_half_floor(xs, ys=None, n_splits=4, seed=0):
    """Self-distance noise floor by split halves.

    1d samples are split into random halves and the W_1 between the halves
    is averaged; with two sample sets the floors of both are averaged.
    Used wherever a '<= Monte Carlo noise' tolerance is needed.
    """
    gen = np.random.default_rng(np.random.SeedSequence(seed,
                                                       spawn_key=(0x5F,)))
    sets = [np.asarray(xs, dtype=float).reshape(-1)]
    if ys is not None:
        sets.append(np.asarray(ys, dtype=float).reshape(-1))
    floors = []
    for arr in sets:
        half = len(arr) // 2
        for _ in range(n_splits):
            perm = gen.permutation(len(arr))
            floors.append(w1_exact_1d(arr[perm[:half]],
                                      arr[perm[half:2 * half]]))
    return float(np.mean(floors))


# ---------------------------------------------------------------------------
# Chaos functionals
# ---------------------------------------------------------------------------

def omega_estimates(runs, ref_atoms, k, p=2, seed=0, cap=4096):
    """Wasserstein chaos functionals of R replica configurations.

    runs is (R, N, d); ref_atoms (M, d) are samples of the limit law.
    Returns a dict with the k-particle functional (W_p between the replica
    cloud of leading k-tuples and i.i.d. reference k-tuples, normalized
    product distance), the full-configuration analogue, and the mean
    empirical-measure distance to the reference cloud.
    """
    runs = np.asarray(runs, dtype=float)
    r, n, d = runs.shape
    if r < 30:
        raise ValueError("need at least 30 replicas")
    ref = np.asarray(ref_atoms, dtype=float)
    if ref.ndim == 1:
        ref = ref[:, None]
    gen = np.random.default_rng(np.random.SeedSequence(seed,
                                                       spawn_key=(0x03A,)))

    def tuple_cloud(j):
        idx = gen.integers(0, len(ref), size=(r, j))
        return ref[idx].reshape(r, j * d)

    def omega_j(j):
        cloud = runs[:, :j, :].reshape(r, j * d)
        return wp_assignment(cloud, tuple_cloud(j), p=p, cap=cap, block_d=d)

    omega_k = omega_j(k)
    omega_n = omega_j(n)
    if d == 1 and p == 1:
        dists = [w1_exact_1d(runs[i], ref) for i in range(r)]
    else:
        sub = ref[gen.permutation(len(ref))[:n]]
        dists = [wp_assignment(runs[i], sub, p=p, cap=cap) for i in range(r)]
    return {"omega_k": float(omega_k), "omega_n": float(omega_n),
            "omega_inf": float(np.mean(dists))}


def fournier_guillin_beta(n, d, p, q):
    """Reference empirical-measure convergence rate curve (constants = 1).

    Piecewise in the moment order q > p: the p > d/2, p = d/2 (log
    correction) and p < d/2 regimes, with the excluded boundary values of
    q rejected.
    """
    if q <= p:
        raise ValueError("q must exceed p")
    tail = float(n) ** (-(q - p) / q)
    if p > d / 2.0:
        if q == 2 * p:
            raise ValueError("q = 2p is the excluded boundary of the p > d/2 case")
        return float(n) ** (-0.5) + tail
    if p == d / 2.0:
        return float(n) ** (-0.5) * np.log(1.0 + n) + tail
    if q == d / (d - p):
        raise ValueError("q = d/(d-p) is the excluded boundary of the p < d/2 case")
    return float(n) ** (-p / d) + tail


def iid_wasserstein_rate_check(sampler, d, p, ns, reps, root,
                               ref_size=100_000, cap=12_000):
    """Empirical W_p(mu_N, f) decay rate for i.i.d. clouds.

    d = 1 compares each cloud to a large fixed reference sample (exact
    unequal-size W_1); d > 1 uses an independent equal-size second cloud
    (same decay rate, assignment-solvable).  Returns the slope fit and the
    per-N values.
    """
    values = []
    for ni, n in enumerate(ns):
        per_rep = np.empty(reps)
        for rep in range(reps):
            gen = root.split(ni, rep).generator()
            cloud = np.asarray(sampler(gen, n), dtype=float)
            if cloud.ndim == 1:
                cloud = cloud[:, None]
            if d == 1 and p == 1:
                refg = root.split(0xEF, ni, rep).generator()
                ref = np.asarray(sampler(refg, ref_size), dtype=float)
                per_rep[rep] = w1_exact_1d(cloud, ref.reshape(-1, 1))
            else:
                gen2 = root.split(0xEF, ni, rep).generator()
                other = np.asarray(sampler(gen2, n), dtype=float)
                per_rep[rep] = wp_assignment(cloud, other, p=p, cap=cap)
        values.append(per_rep)
    slope, intercept, lo, hi = fit_loglog(ns, values)
    return {"slope": slope, "intercept": intercept, "ci": (lo, hi),
            "ns": list(ns), "values": values}


def girsanov_entropy_rhs(model, n, reference: ReferenceFlow, t_final, dt,
                         reps, root):
    """Monte Carlo of the drift-mismatch entropy functional
    (1/2) E int |b(X^1, mu_N) - b(X^1, f_t)|^2 dt.

    This is the pathwise upper bound on the one-particle relative entropy;
    the particle average replaces the single-particle expectation by
    exchangeability.  Requires unit diffusion.
    """
    if callable(model.sigma) or not np.allclose(np.asarray(model.sigma), 1.0):
        raise ValueError("entropy bound requires identity diffusion")
    times = reference.bundle.times
    steps = len(times) - 1
    if abs(times[1] - times[0] - dt) > 1e-12:
        raise ValueError("grid mismatch with the reference flow")
    frozen = reference.sorted_states()
    estimates = np.empty(reps)
    d = reference.bundle.d
    for rep in range(reps):
        rroot = root.split(core.REPLICA, rep)
        xs = draw_init(reference.init, rroot, n, d)
        noise = ParticleNoise(rroot, np.arange(n), d)
        acc = 0.0
        done = 0
        while done < steps:
            take = min(NOISE_CHUNK, steps - done)
            block = noise.block(take)
            for s in range(take):
                k = done + s
                atoms = canonical_sort(xs)
                b_emp = np.asarray(model.drift(xs, atoms), dtype=float)
                b_ref = np.asarray(model.drift(xs, frozen[k]), dtype=float)
                acc += float(np.mean(np.sum((b_emp - b_ref) ** 2,
                                            axis=1))) * dt
                xs = _step_xs(xs, model, dt, block[:, s, :], atoms)
            done += take
        estimates[rep] = 0.5 * acc
    return {"estimate": float(estimates.mean()),
            "ci": bootstrap_ci(estimates),
            "per_replica": estimates}


def hs_block_bound_check(clouds, m_sub, kernel):
    """Block empirical-measure bound in the squared H^{-s} seminorm.

    lhs averages |mu_{first M} - mu_{all N}|^2 over exchangeable clouds;
    rhs = 2 phi(0) (1/M - 1/N).  Passes when lhs <= rhs plus twice the
    bootstrap CI half-width.
    """
    clouds = np.asarray(clouds, dtype=float)
    r, n, d = clouds.shape
    if not 0 < m_sub <= n:
        raise ValueError("block size must lie in 1..N")
    vals = np.array([hs_sq(c[:m_sub], c, kernel) for c in clouds])
    lhs = float(vals.mean())
    rhs = 2.0 * kernel.phi0 * (1.0 / m_sub - 1.0 / n)
    lo, hi = bootstrap_ci(vals)
    half = (hi - lo) / 2.0
    return {"lhs": lhs, "rhs": rhs, "pass": lhs <= rhs + 2.0 * half,
            "ci": (lo, hi)}


def toy_linear_d2_check(model, ns, t_final, family, root, reps, f_limit,
                        support):
    """Variance-type empirical-process statistic for imitation dynamics.

    For each N, estimates sup over the Lipschitz family of the replica
    variance of <mu_N at T, phi> (the squared mean against the limit law
    is subtracted, removing the N-independent deterministic residual) and
    fits the log-log slope against N.
    """
    from .jumps import replicate_final_states
    support = np.asarray(support, dtype=float).reshape(-1, 1)
    f_limit = np.asarray(f_limit, dtype=float)
    phi_on_support = family.eval_all(support)  # (K, m)
    limit_vals = phi_on_support @ f_limit  # (K,)
    values = []
    for ni, n in enumerate(ns):
        init = _finite_init(f_limit, support)
        finals = replicate_final_states(model, init, t_final,
                                        root.split(ni), reps, n)
        pv = family.eval_all(finals.reshape(reps * n, 1))  # (K, reps*n)
        pv = pv.reshape(len(family), reps, n).mean(axis=2)  # (K, reps)
        gaps = pv - limit_vals[:, None]
        # centering removes the squared mean (the deterministic residual),
        # leaving the pure fluctuation part of E<mu - f, phi>^2
        centered_sq = (gaps - gaps.mean(axis=1, keepdims=True)) ** 2
        best = int(np.argmax(centered_sq.mean(axis=1)))
        values.append(centered_sq[best])
    slope, intercept, lo, hi = fit_loglog(ns, values)
    return {"slope": slope, "intercept": intercept, "ci": (lo, hi),
            "ns": list(ns), "values": values}


def _finite_init(f, support):
    cum = np.cumsum(f)

    def init(gen):
        return support[int(np.searchsorted(cum, gen.random()))]

    return init


# ---------------------------------------------------------------------------
# Sweep driver
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ["model", "N", "T", "dt", "reps", "metric", "estimator",
                  "value", "ci_lo", "ci_hi", "slope", "slope_ci_lo",
                  "slope_ci_hi", "seed"]


@dataclass
class ChaosReport:
    """Per-N estimator rows plus the fitted log-log slope."""

    rows: list = field(default_factory=list)

    def add(self, **kw):
        self.rows.append({c: kw.get(c, "") for c in REPORT_COLUMNS})

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(REPORT_COLUMNS) + "\n")
            for row in self.rows:
                cells = []
                for c in REPORT_COLUMNS:
                    v = row[c]
                    cells.append(core.FMT % v if isinstance(v, float)
                                 else str(v))
                fh.write(",".join(cells) + "\n")


VALID_SWEEPS = ("kuramoto_coupling", "iid_gauss_1d", "iid_cube_3d",
                "linear_drift_girsanov", "recollision")


def sweep(model_tag, ns, t_final, dt, reps, seed, metric="w1",
          ref_mult=16, picard_iters=2):
    """Run a named convergence experiment over a list of system sizes.

    Deterministic given the seed; returns a ChaosReport whose rows carry
    per-N estimates and the fitted slope with bootstrap CI.
    """
    ns = list(ns)
    if not ns:
        raise ValueError("empty N list")
    if model_tag not in VALID_SWEEPS:
        raise ValueError(f"unknown sweep tag {model_tag!r}; "
                         f"valid: {', '.join(VALID_SWEEPS)}")
    root = RngStream(int(seed))
    report = ChaosReport()

    if model_tag == "kuramoto_coupling":
        model = kuramoto_model(1.0, 0.5)
        init = lambda gen: np.array([gen.uniform(0.0, 2.0 * np.pi)])
        ref = nonlinear_reference(model, init, ref_mult * max(ns), t_final,
                                  dt, picard_iters, root.split(0xA))
        values = []
        for ni, n in enumerate(ns):
            rep = synchronous_coupling(model, n, ref, t_final, dt,
                                       root.split(0xB, ni), reps=reps, p=2)
            values.append(rep.pathwise)
            lo, hi = rep.ci_pathwise
            report.add(model=model_tag, N=n, T=t_final, dt=dt, reps=reps,
                       metric=metric, estimator="pathwise_sq_gap",
                       value=rep.eps_pathwise, ci_lo=lo, ci_hi=hi, seed=seed)
        slope, _, lo, hi = fit_loglog(ns, values)

    elif model_tag in ("iid_gauss_1d", "iid_cube_3d"):
        if model_tag == "iid_gauss_1d":
            sampler = lambda gen, size: gen.standard_normal((size, 1))
            d = 1
        else:
            sampler = lambda gen, size: gen.random((size, 3))
            d = 3
        res = iid_wasserstein_rate_check(sampler, d, 1, ns, reps,
                                         root.split(0xC))
        for ni, n in enumerate(ns):
            v = res["values"][ni]
            lo_i, hi_i = bootstrap_ci(v)
            report.add(model=model_tag, N=n, T=t_final, dt=dt, reps=reps,
                       metric="w1", estimator="iid_w1",
                       value=float(np.mean(v)), ci_lo=lo_i, ci_hi=hi_i,
                       seed=seed)
        slope, lo, hi = res["slope"], res["ci"][0], res["ci"][1]

    elif model_tag == "linear_drift_girsanov":
        model = linear_drift_model()
        init = lambda gen: gen.standard_normal(1)
        ref = nonlinear_reference(model, init, ref_mult * max(ns), t_final,
                                  dt, picard_iters, root.split(0xA))
        values = []
        for ni, n in enumerate(ns):
            res = girsanov_entropy_rhs(model, n, ref, t_final, dt, reps,
                                       root.split(0xB, ni))
            values.append(res["per_replica"])
            report.add(model=model_tag, N=n, T=t_final, dt=dt, reps=reps,
                       metric="entropy", estimator="girsanov_rhs",
                       value=res["estimate"], ci_lo=res["ci"][0],
                       ci_hi=res["ci"][1], seed=seed)
        slope, _, lo, hi = fit_loglog(ns, values)

    else:  # recollision
        from .boltzmann import count_recollisions, sample_interaction_graph
        values = []
        for ni, n in enumerate(ns):
            counts = np.empty(reps)
            groot = root.split(0xD, ni)
            for rep in range(reps):
                g = sample_interaction_graph(n, 1.0, t_final, 0,
                                             groot.split(rep))
                counts[rep] = 1.0 if count_recollisions(g) > 0 else 0.0
            values.append(counts)
            lo_i, hi_i = bootstrap_ci(counts)
            report.add(model=model_tag, N=n, T=t_final, dt=dt, reps=reps,
                       metric="probability", estimator="recollision_prob",
                       value=float(counts.mean()), ci_lo=lo_i, ci_hi=hi_i,
                       seed=seed)
        slope, _, lo, hi = fit_loglog(ns, values)

    for row in report.rows:
        row["slope"] = slope
        row["slope_ci_lo"] = lo
        row["slope_ci_hi"] = hi
    return report


def linear_drift_model():
    """Attraction to the running mean: b(x, mu) = mean(mu) - x, unit noise."""
    from .core import DiffusionModel

    def drift(xs, atoms):
        return atoms.mean(axis=0)[None, :] - xs

    return DiffusionModel(drift=drift, sigma=1.0)
