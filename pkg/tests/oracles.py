"""Reference implementations that share no code with the package.

They are slow and simple on purpose: mpmath for the normal law, brute-force
grids for the optimizer, dense composite Simpson for the integrals and
plain numpy sampling for conditional power.
"""

import math

import mpmath
import numpy as np
from scipy import integrate

mpmath.mp.dps = 40


def phi(x):
    return float(mpmath.npdf(x))


def Phi(x):
    return float(mpmath.ncdf(x))


def Phi_erf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def quantile_bisect(p, lo=-40.0, hi=40.0):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if Phi(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def K_of(sigma, theta):
    return theta / (2.0 * sigma)


def cp(z1, n2, sigma, theta, n1, w1, w2, c):
    """Conditional power at full mpmath precision."""
    K = mpmath.mpf(theta) / (2 * mpmath.mpf(sigma))
    a = K * mpmath.sqrt(mpmath.mpf(n2) - n1) - (mpmath.mpf(c) - mpmath.mpf(w1) * z1) / mpmath.mpf(w2)
    return mpmath.ncdf(a)


def cp_mp(z1, n2, d):
    return cp(z1, n2, d.sigma, d.theta_alt, d.n1, d.w1, d.w2, d.c_crit)


def cp_d(z1, n2, d):
    return float(cp_mp(z1, n2, d))


def cp_mc(z1, n2, d, reps, seed):
    rng = np.random.default_rng(seed)
    K = d.theta_alt / (2 * d.sigma)
    z_inc = K * math.sqrt(n2 - d.n1) + rng.standard_normal(reps)
    hits = np.count_nonzero(d.w1 * z1 + d.w2 * z_inc > d.c_crit)
    p = hits / reps
    return p, math.sqrt(p * (1 - p) / reps)


def _cp_vec(z1, n, d):
    from scipy.special import ndtr

    K = d.theta_alt / (2 * d.sigma)
    return ndtr(K * np.sqrt(n - d.n1) - (d.c_crit - d.w1 * z1) / d.w2)


def grid_optimum(z1, gamma, d, n_lo, n_hi, points=100_001):
    """Brute-force argmax of CP - gamma * n2 on a uniform grid; ties go to the smallest n."""
    n = np.linspace(n_lo, n_hi, points)
    v = _cp_vec(z1, n, d) - gamma * (n - n_lo)
    i = int(np.argmax(v))
    return float(n[i]), float(v[i]), (n_hi - n_lo) / (points - 1)


def objective(z1, n2, gamma, d, n_lo):
    return float(_cp_vec(z1, np.asarray(n2, dtype=float), d) - gamma * (n2 - n_lo))


def lr_ratio(z1, d):
    delta = d.theta_alt / (2 * d.sigma) * math.sqrt(d.n1)
    return math.exp(-z1 * delta + 0.5 * delta * delta)


def _jumps(n2_vec, z, n, tol=5.0):
    out = []
    for i in np.nonzero(np.abs(np.diff(n)) > tol)[0]:
        a, b, na, nb = z[i], z[i + 1], n[i], n[i + 1]
        for _ in range(60):
            m = 0.5 * (a + b)
            nm = n2_vec(np.array([m]))[0]
            if abs(nm - na) <= abs(nm - nb):
                a = m
            else:
                b = m
        if abs(n2_vec(np.array([a]))[0] - n2_vec(np.array([b]))[0]) > 1.0:
            out.append(0.5 * (a + b))
    return out


def ocs_simpson(n2_vec, d, lo=None, hi=None, n_scan=4001, per_piece=40_001):
    """Power and expected sizes by composite Simpson, split at bisected jumps."""
    delta = d.theta_alt / (2 * d.sigma) * math.sqrt(d.n1)
    lo = min(0.0, delta) - 8.0 if lo is None else lo
    hi = max(0.0, delta) + 8.0 if hi is None else hi
    z = np.linspace(lo, hi, n_scan)
    points = sorted(set([lo, *_jumps(n2_vec, z, n2_vec(z)), hi]))
    out = {"power": 0.0, "e_n_null": 0.0, "e_n_alt": 0.0}
    for a, b in zip(points[:-1], points[1:]):
        # nudge inward so each piece sees only one branch of the rule
        eps = 1e-12 * max(1.0, abs(a), abs(b))
        v = np.linspace(a + eps, b - eps, per_piece)
        n = n2_vec(v)
        f0 = np.exp(-0.5 * v * v) / math.sqrt(2 * math.pi)
        f1 = np.exp(-0.5 * (v - delta) ** 2) / math.sqrt(2 * math.pi)
        cpv = _cp_vec(v, n, d)
        out["power"] += integrate.simpson(cpv * f1, x=v)
        out["e_n_null"] += integrate.simpson(n * f0, x=v)
        out["e_n_alt"] += integrate.simpson(n * f1, x=v)
    return out
