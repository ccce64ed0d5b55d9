"""Distances and divergences between empirical measures and discrete laws.

Wasserstein distances (exact 1d quantile form and exact assignment form),
histogram total variation, a negative-Sobolev squared seminorm with a
tabulated radial kernel, a weighted Lipschitz-family distance, and discrete
relative entropy.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln, kve

from .core import EmpiricalMeasure
from .kernels import phi_cross_sum, phi_interp, phi_self_sum

DEFAULT_ASSIGNMENT_CAP = 4096


def _atoms(mu):
    if isinstance(mu, EmpiricalMeasure):
        return mu.atoms
    a = np.asarray(mu, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def w1_exact_1d(mu, nu):
    """Exact 1d Wasserstein-1 distance between empirical measures.

    Equal sizes reduce to the mean absolute difference of sorted atoms;
    unequal sizes integrate |F_mu^{-1} - F_nu^{-1}| over the merged
    quantile grid.  Both are the exact optimal transport cost.
    """
    ax, ay = _atoms(mu), _atoms(nu)
    if ax.shape[1] != 1 or ay.shape[1] != 1:
        raise ValueError("w1_exact_1d requires d = 1")
    n, m = ax.shape[0], ay.shape[0]
    if n == 0 or m == 0:
        raise ValueError("empty measure")
    x = np.sort(ax[:, 0])
    y = np.sort(ay[:, 0])
    if n == m:
        return float(np.mean(np.abs(x - y)))
    cum_x = np.arange(1, n + 1) / n
    cum_y = np.arange(1, m + 1) / m
    levels = np.union1d(cum_x, cum_y)
    widths = np.diff(np.concatenate(([0.0], levels)))
    ix = np.searchsorted(cum_x, levels, side="left").clip(0, n - 1)
    iy = np.searchsorted(cum_y, levels, side="left").clip(0, m - 1)
    return float(np.sum(widths * np.abs(x[ix] - y[iy])))


def _pair_cost(xs, ys, p, block_d=None):
    """Pairwise |x-y|^p cost matrix; with block_d, the normalized product
    cost (1/k) sum over blocks of block-Euclidean distance^p."""
    if block_d is None:
        n = len(xs)
        dist = np.empty((n, len(ys)))
        step = max(1, 10 ** 7 // max(1, len(ys)))  # bound the temporary
        for lo in range(0, n, step):
            diff = xs[lo:lo + step, None, :] - ys[None, :, :]
            dist[lo:lo + step] = np.sqrt(np.sum(diff * diff, axis=-1))
        return dist if p == 1 else dist ** p
    k = xs.shape[1] // block_d
    xb = xs.reshape(len(xs), k, block_d)
    yb = ys.reshape(len(ys), k, block_d)
    diff = xb[:, None, :, :] - yb[None, :, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return np.mean(dist if p == 1 else dist ** p, axis=-1)


def wp_assignment(mu, nu, p=1, cap=DEFAULT_ASSIGNMENT_CAP, block_d=None):
    """Exact Wasserstein-p distance between equal-size empirical measures.

    Solves the min-cost perfect matching on |x_i - y_j|^p exactly and
    returns (cost / N)^{1/p}.  `block_d` switches the ground cost to the
    normalized product distance ((1/k) sum_b |x_b - y_b|^p)^{1/p} over
    consecutive coordinate blocks of that width.
    """
    xs, ys = _atoms(mu), _atoms(nu)
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if xs.shape[0] != ys.shape[0]:
        raise ValueError("wp_assignment requires equal atom counts; resample upstream")
    if xs.shape[0] > cap:
        raise ValueError(f"atom count {xs.shape[0]} exceeds assignment cap {cap}")
    cost = _pair_cost(xs, ys, p, block_d)
    rows, cols = linear_sum_assignment(cost)
    total = float(cost[rows, cols].sum()) / xs.shape[0]
    return total if p == 1 else float(np.sqrt(total))


def tv_hist(mu, nu, bins=None):
    """Histogram total-variation estimate, sum over bins of |mu(b) - nu(b)|.

    Normalization gives values in [0, 2].  Bins cover the common bounding
    box; the default per-axis count follows bin width = range * N^{-1/(d+2)}
    with N the smaller sample size.
    """
    xs, ys = _atoms(mu), _atoms(nu)
    d = xs.shape[1]
    lo = np.minimum(xs.min(axis=0), ys.min(axis=0))
    hi = np.maximum(xs.max(axis=0), ys.max(axis=0))
    hi = np.where(hi > lo, hi, lo + 1.0)
    if bins is None:
        n_small = min(len(xs), len(ys))
        nb = max(1, int(np.ceil(n_small ** (1.0 / (d + 2)))))
        bins = [nb] * d
    elif np.isscalar(bins):
        bins = [int(bins)] * d
    edges = [np.linspace(lo[j], hi[j], int(bins[j]) + 1) for j in range(d)]
    h_mu, _ = np.histogramdd(xs, bins=edges)
    h_nu, _ = np.histogramdd(ys, bins=edges)
    return float(np.sum(np.abs(h_mu / len(xs) - h_nu / len(ys))))


# ---------------------------------------------------------------------------
# Negative-Sobolev kernel and squared seminorm
# ---------------------------------------------------------------------------

def _log_phi_radial(r, d, s):
    """log of the radial kernel phi(r) = int exp(-i z.xi) (1+|xi|^2)^(-s) dxi
    at |z| = r > 0, in the Matern/Bessel closed form; computed in log space
    so large radii do not underflow."""
    nu = s - d / 2.0
    log_c = (d / 2.0) * np.log(2.0 * np.pi) + (1.0 - s) * np.log(2.0) - gammaln(s)
    return log_c + nu * np.log(r) + np.log(kve(nu, r)) - r


def phi_at_zero(d, s):
    """phi(0) = pi^{d/2} Gamma(s - d/2) / Gamma(s)."""
    return float(np.exp((d / 2.0) * np.log(np.pi) + gammaln(s - d / 2.0) - gammaln(s)))


@dataclass(frozen=True)
class SobolevKernel:
    """Radial kernel table for the squared H^{-s} seminorm, s > d/2.

    Values are tabulated on a log-spaced radius grid and interpolated
    linearly in (log r, log phi); below the grid the kernel is flat at
    phi(0), above it the last segment extrapolates log-linearly.  The
    default table density keeps the interpolation error below 1e-6
    relative over the whole tabulated range (the error scales like
    r * (grid spacing in log r)^2 / 8, worst at the largest radius).
    """

    d: int
    s: float
    log_r: np.ndarray
    log_phi: np.ndarray
    phi0: float

    @classmethod
    def build(cls, d, s, r_lo=1e-6, r_hi=1e3, n_table=400_000, scale=1.0):
        if s <= d / 2.0:
            raise ValueError("SobolevKernel requires s > d/2 (kernel diverges)")
        radii = np.geomspace(r_lo * scale, r_hi * scale, n_table)
        log_phi = _log_phi_radial(radii, d, s)
        log_r = np.log(radii)
        log_r.setflags(write=False)
        log_phi.setflags(write=False)
        return cls(d, s, log_r, log_phi, phi_at_zero(d, s))

    def phi(self, r):
        r_arr = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.array([phi_interp(v, self.log_r, self.log_phi, self.phi0)
                        for v in r_arr])
        return float(out[0]) if np.isscalar(r) or np.ndim(r) == 0 else out


_KERNEL_CACHE = {}


def get_kernel(d, s):
    key = (int(d), float(s))
    if key not in _KERNEL_CACHE:
        _KERNEL_CACHE[key] = SobolevKernel.build(*key)
    return _KERNEL_CACHE[key]


def phi_s(r, d, s):
    """Tabulated radial kernel of the H^{-s} seminorm at radius r."""
    if s <= d / 2.0:
        raise ValueError("phi_s requires s > d/2")
    return get_kernel(d, s).phi(r)


def hs_sq(mu, nu, kernel):
    """Squared H^{-s} seminorm of mu - nu: the double integral of
    phi(x - y) against (mu - nu) tensor (mu - nu)."""
    xs = np.ascontiguousarray(_atoms(mu))
    ys = np.ascontiguousarray(_atoms(nu))
    if xs.shape[1] != ys.shape[1]:
        raise ValueError("dimension mismatch")
    n, m = len(xs), len(ys)
    sxx = phi_self_sum(xs, kernel.log_r, kernel.log_phi, kernel.phi0)
    syy = phi_self_sum(ys, kernel.log_r, kernel.log_phi, kernel.phi0)
    sxy = phi_cross_sum(xs, ys, kernel.log_r, kernel.log_phi, kernel.phi0)
    return float(sxx / n ** 2 + syy / m ** 2 - 2.0 * sxy / (n * m))


# ---------------------------------------------------------------------------
# Weighted Lipschitz-family distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LipschitzFamily:
    """Ordered test functions phi_k(x) = max(0, w_k - |x - c_k|).

    Widths w_k <= 1 keep every function 1-bounded and 1-Lipschitz; the k-th
    function enters with weight 2^{-k} (k starting at 1).
    """

    centers: np.ndarray  # (K, d)
    widths: np.ndarray  # (K,)

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        widths = np.asarray(self.widths, dtype=float)
        if np.any(widths <= 0) or np.any(widths > 1.0 + 1e-12):
            raise ValueError("tent widths must lie in (0, 1]")
        centers.setflags(write=False)
        widths.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)

    def __len__(self):
        return len(self.widths)

    def eval_all(self, xs):
        """(K, n) matrix of phi_k(x_i)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        dist = np.sqrt(np.sum((self.centers[:, None, :] - xs[None, :, :]) ** 2,
                              axis=-1))
        return np.maximum(0.0, self.widths[:, None] - dist)

    @property
    def weights(self):
        return 2.0 ** (-np.arange(1, len(self) + 1, dtype=float))


def tent_family(lo, hi, levels=4, d=1):
    """Default family: tents on dyadic center grids of [lo, hi]^d axes.

    Only d = 1 centers are gridded; higher d uses the same grid on the
    diagonal which is sufficient for the diagnostics in this suite.
    """
    centers, widths = [], []
    for lev in range(levels):
        n_c = 2 ** lev + 1
        cs = np.linspace(lo, hi, n_c)
        w = min(1.0, (hi - lo) / max(1, 2 ** lev))
        for c in cs:
            centers.append([c] * d)
            widths.append(w)
    return LipschitzFamily(np.array(centers), np.array(widths))


def d1_dist(mu, nu, family):
    """Weighted sum over the family of |<mu - nu, phi_k>|; bounded by
    W_1(mu, nu) up to the truncation tail 2^{-K}."""
    xs, ys = _atoms(mu), _atoms(nu)
    vals_mu = family.eval_all(xs).mean(axis=1)
    vals_nu = family.eval_all(ys).mean(axis=1)
    return float(np.sum(family.weights * np.abs(vals_mu - vals_nu)))


def relative_entropy_discrete(p, q):
    """Discrete relative entropy sum p_i log(p_i / q_i); +inf when the
    support of p is not contained in the support of q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("probability vectors must have equal length")
    for v, name in ((p, "p"), (q, "q")):
        if np.any(v < -1e-15):
            raise ValueError(f"{name} has negative entries")
        if abs(v.sum() - 1.0) > 1e-12:
            raise ValueError(f"{name} does not sum to 1")
    pos = p > 0
    if np.any(q[pos] == 0.0):
        return float("inf")
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))
