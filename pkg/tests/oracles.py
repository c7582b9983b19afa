"""Reference implementations written independently of the package.

Plain loops, no shared helpers: these recompute every cost from its
definition so that agreement with the package is meaningful.
"""
import math

import numpy as np


def levels(T, N, E, m_buf):
    # smallest l >= 1 with T^l >= N*E/m_buf + 1, found by repeated multiplication
    target = N * E / m_buf + 1.0
    lev, cap = 1, T
    while cap < target * (1 - 1e-12):
        lev += 1
        cap *= T
    return lev


def fprs(T, m_filt, N, L):
    out = []
    for i in range(1, L + 1):
        v = (T ** (T / (T - 1.0))) / (T ** (L + 1 - i)) * math.exp(-(m_filt / N) * math.log(2) ** 2)
        out.append(0.0 if v < 0 else (1.0 if v > 1 else v))
    return out


def costs(T, m_filt, K, N, E, B, m, f_a=1.0, f_seq=1.0, s_rq=0.0):
    m_buf = m - m_filt
    L = len(K)
    f = fprs(T, m_filt, N, L)
    per_buf = m_buf / E
    level_entries = [(T - 1) * T ** (i - 1) * per_buf for i in range(1, L + 1)]
    n_full = 0.0
    for x in level_entries:
        n_full += x

    z0 = 0.0
    for i in range(L):
        z0 += K[i] * f[i]

    z1 = 0.0
    for i in range(L):
        above = 0.0
        for j in range(i):
            above += K[j] * f[j]
        z1 += (level_entries[i] / n_full) * (1 + above + (K[i] - 1) / 2.0 * f[i])

    runs = 0.0
    for k in K:
        runs += k
    q = f_seq * s_rq * N / B + runs

    per_level = 0.0
    for k in K:
        per_level += (T - 1 + k) / (2.0 * k)
    w = f_seq * (1 + f_a) / B * per_level
    return z0, z1, q, w


def kl(p, q):
    s = 0.0
    for a, b in zip(p, q):
        if a > 0:
            s += a * math.log(a / b)
    return s


def simplex_grid(step):
    """All points of the 4-simplex with coordinates on a ``step`` lattice."""
    n = int(round(1 / step))
    pts = []
    for a in range(n + 1):
        for b in range(n + 1 - a):
            for c in range(n + 1 - a - b):
                pts.append((a, b, c, n - a - b - c))
    return np.array(pts, dtype=float) / n


def inner_max(c, center, rho, grid):
    """max w.c over grid points inside the KL ball."""
    G = grid
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(G > 0, G * np.log(np.where(G > 0, G, 1.0) / center), 0.0)
    inside = terms.sum(axis=1) <= rho
    return float((G[inside] @ c).max())


def tilted_max(c, center, rho):
    """Inner max along the exponential-tilt family w_t ~ center * exp(t c).

    The KL-ball maximizer lies on this one-parameter family; bisect on t until
    the divergence hits rho.
    """
    c = np.asarray(c, dtype=float)
    center = np.asarray(center, dtype=float)

    def point(t):
        z = center * np.exp(t * (c - c.max()))
        return z / z.sum()

    lo, hi = 0.0, 1.0
    while kl(point(hi), center) < rho and hi < 1e6:
        hi *= 2
    if kl(point(hi), center) < rho:
        return float(point(hi) @ c)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kl(point(mid), center) < rho:
            lo = mid
        else:
            hi = mid
    return float(point(lo) @ c)


def brute_nominal(workload, N, E, B, m, policy, T_values, n_filt, f_a=1.0, f_seq=1.0, s_rq=0.0):
    """Best (cost, T, m_filt) on a grid of integer T and evenly spaced filter memory."""
    best = (math.inf, None, None)
    for T in T_values:
        for m_filt in np.linspace(0, m - E, n_filt):
            L = levels(T, N, E, m - m_filt)
            K = [1.0] * L if policy == "leveling" else [T - 1.0] * L
            c = costs(T, m_filt, K, N, E, B, m, f_a, f_seq, s_rq)
            total = sum(wi * ci for wi, ci in zip(workload, c))
            if total < best[0]:
                best = (total, T, m_filt)
    return best


def full_tree(T, per_buf, L):
    total = 0.0
    for i in range(1, L + 1):
        total += (T - 1) * T ** (i - 1) * per_buf
    return total
