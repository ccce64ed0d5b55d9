"""Hot numeric inner loops.

Everything here is plain-loop code compiled with numba when available (see
:mod:`chaoskit.accel`).  The pure-numpy fallback executes the identical loops,
so both paths give bit-identical results; `benchmarks/bench_kernels.py`
compares their speed.
"""

import numpy as np

from .accel import maybe_njit


@maybe_njit
def phi_interp(r, log_r, log_phi, phi0):
    """Evaluate a radial kernel from its (log r, log phi) table.

    Below the tabulated range the kernel is flat (returns phi0); above it
    the last segment is extrapolated linearly in log-log space.
    """
    if r <= 0.0:
        return phi0
    lr = np.log(r)
    n = log_r.shape[0]
    if lr <= log_r[0]:
        return phi0
    if lr >= log_r[n - 1]:
        slope = (log_phi[n - 1] - log_phi[n - 2]) / (log_r[n - 1] - log_r[n - 2])
        return np.exp(log_phi[n - 1] + slope * (lr - log_r[n - 1]))
    j = np.searchsorted(log_r, lr)
    # log_r[j-1] < lr <= log_r[j]
    w = (lr - log_r[j - 1]) / (log_r[j] - log_r[j - 1])
    return np.exp(log_phi[j - 1] * (1.0 - w) + log_phi[j] * w)


@maybe_njit
def phi_cross_sum(xs, ys, log_r, log_phi, phi0):
    """Sum of phi(|x_i - y_j|) over all pairs; xs is (N,d), ys is (M,d)."""
    n, d = xs.shape
    m = ys.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(m):
            r2 = 0.0
            for k in range(d):
                diff = xs[i, k] - ys[j, k]
                r2 += diff * diff
            total += phi_interp(np.sqrt(r2), log_r, log_phi, phi0)
    return total


@maybe_njit
def phi_self_sum(xs, log_r, log_phi, phi0):
    """Sum of phi(|x_i - x_j|) over all ordered pairs, diagonal included."""
    n, d = xs.shape
    total = n * phi0
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                diff = xs[i, k] - xs[j, k]
                r2 += diff * diff
            total += 2.0 * phi_interp(np.sqrt(r2), log_r, log_phi, phi0)
    return total


@maybe_njit
def alignment_force(pos, vel, comm_scale, comm_decay):
    """Velocity-alignment force (1/N) sum_j K(|x_j-x_i|)(v_j-v_i).

    The communication kernel is K(r) = comm_scale / (1 + r^2)^comm_decay.
    pos, vel are (N,d); returns (N,d).  Summation runs over j in the given
    (canonically sorted) order so the result is permutation-invariant.
    """
    n, d = pos.shape
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(n):
            r2 = 0.0
            for k in range(d):
                diff = pos[j, k] - pos[i, k]
                r2 += diff * diff
            w = comm_scale / (1.0 + r2) ** comm_decay
            for k in range(d):
                out[i, k] += w * (vel[j, k] - vel[i, k])
    for i in range(n):
        for k in range(d):
            out[i, k] /= n
    return out


@maybe_njit
def alignment_force_cross(pos, vel, apos, avel, comm_scale, comm_decay):
    """Velocity-alignment force of an external atom set on each particle.

    Same kernel as `alignment_force`, but the mean runs over the atoms
    (apos, avel) instead of the particle set itself.
    """
    n, d = pos.shape
    m = apos.shape[0]
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(m):
            r2 = 0.0
            for k in range(d):
                diff = apos[j, k] - pos[i, k]
                r2 += diff * diff
            w = comm_scale / (1.0 + r2) ** comm_decay
            for k in range(d):
                out[i, k] += w * (avel[j, k] - vel[i, k])
    for i in range(n):
        for k in range(d):
            out[i, k] /= m
    return out


@maybe_njit
def pair_grad_sum(xs, atoms, grad_coeff):
    """Mean over atoms of grad_coeff * (x_i - y_j): quadratic-interaction drift.

    Used for gradient systems with W(x) = grad_coeff * |x|^2 / 2, i.e.
    grad W(x - y) = grad_coeff * (x - y).
    """
    n, d = xs.shape
    m = atoms.shape[0]
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(m):
            for k in range(d):
                out[i, k] += grad_coeff * (xs[i, k] - atoms[j, k])
    for i in range(n):
        for k in range(d):
            out[i, k] /= m
    return out
