"""Independent reference implementations used only to check the library.

These deliberately avoid the code paths under test: the incomplete beta
is a continued fraction evaluated in mpmath arbitrary precision, the curve
fit is a hand-rolled Gauss-Newton, k-means is brute-force enumeration, and
the rand index is direct pair counting.
"""

from __future__ import annotations

import itertools
from collections import Counter

import mpmath
import numpy as np

mpmath.mp.dps = 50


def _betacf(a, b, x):
    """Modified Lentz continued fraction for the incomplete beta."""
    tiny = mpmath.mpf("1e-60")
    qab = a + b
    qap = a + 1
    qam = a - 1
    c = mpmath.mpf(1)
    d = 1 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1 / d
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < mpmath.mpf("1e-40"):
            return h
    raise RuntimeError("continued fraction did not converge")


def regularized_incomplete_beta(x, a, b):
    """I_x(a, b) by continued fraction, high precision."""
    x = mpmath.mpf(x)
    a = mpmath.mpf(a)
    b = mpmath.mpf(b)
    if x <= 0:
        return mpmath.mpf(0)
    if x >= 1:
        return mpmath.mpf(1)
    ln_front = (
        a * mpmath.log(x)
        + b * mpmath.log(1 - x)
        - (mpmath.loggamma(a) + mpmath.loggamma(b) - mpmath.loggamma(a + b))
    )
    front = mpmath.e**ln_front
    if x < (a + 1) / (a + b + 2):
        return front * _betacf(a, b, x) / a
    return 1 - front * _betacf(b, a, 1 - x) / b


def welch_reference(x, y):
    """(t, df, two-sided p) of the Welch test by direct formula in mpf."""
    x = [mpmath.mpf(v) for v in x]
    y = [mpmath.mpf(v) for v in y]
    nx, ny = len(x), len(y)
    mx = sum(x) / nx
    my = sum(y) / ny
    vx = sum((v - mx) ** 2 for v in x) / (nx - 1)
    vy = sum((v - my) ** 2 for v in y) / (ny - 1)
    se2 = vx / nx + vy / ny
    t = (mx - my) / mpmath.sqrt(se2)
    df = se2**2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1))
    p = regularized_incomplete_beta(df / (df + t * t), df / 2, mpmath.mpf(1) / 2)
    return float(t), float(df), float(p)


def anova_reference(groups):
    """(F, df1, df2, p) of one-way ANOVA by direct formula in mpf."""
    groups = [[mpmath.mpf(v) for v in g] for g in groups]
    k = len(groups)
    n = sum(len(g) for g in groups)
    grand = sum(sum(g) for g in groups) / n
    means = [sum(g) / len(g) for g in groups]
    ssb = sum(len(g) * (m - grand) ** 2 for g, m in zip(groups, means))
    ssw = sum(sum((v - m) ** 2 for v in g) for g, m in zip(groups, means))
    df1 = k - 1
    df2 = n - k
    f = (ssb / df1) / (ssw / df2)
    p = regularized_incomplete_beta(
        mpmath.mpf(df2) / (df2 + df1 * f), mpmath.mpf(df2) / 2, mpmath.mpf(df1) / 2
    )
    return float(f), float(df1), float(df2), float(p)


def bh_reference(p_values):
    """Benjamini-Hochberg by the definition: q_(i) = min over j >= i of
    p_(j) * m / j, computed without vectorized tricks."""
    m = len(p_values)
    indexed = sorted(range(m), key=lambda i: p_values[i])
    adjusted_sorted = [None] * m
    running = 1.0
    for rank in range(m, 0, -1):
        i = indexed[rank - 1]
        running = min(running, p_values[i] * m / rank)
        adjusted_sorted[rank - 1] = min(running, 1.0)
    out = [None] * m
    for rank, i in enumerate(indexed, start=1):
        out[i] = adjusted_sorted[rank - 1]
    return out


def sse_of_partition(points: np.ndarray, labels) -> float:
    """Within-cluster SSE of a given labeling, around the cluster means."""
    labels = np.asarray(labels)
    sse = 0.0
    for j in sorted(set(labels.tolist())):
        members = points[labels == j]
        sse += float(((members - members.mean(axis=0)) ** 2).sum())
    return sse


def brute_force_min_sse(points: np.ndarray, k: int) -> float:
    """Minimal within-cluster SSE over every assignment of points to k
    non-empty clusters."""
    n = points.shape[0]
    best = np.inf
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) != k:
            continue
        best = min(best, sse_of_partition(points, labels))
    return best


def ari_pair_counting(a, b) -> float:
    """Adjusted Rand index from explicit enumeration of all point pairs."""
    n = len(a)
    n11 = n00 = n10 = n01 = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_a = a[i] == a[j]
            same_b = b[i] == b[j]
            if same_a and same_b:
                n11 += 1
            elif same_a:
                n10 += 1
            elif same_b:
                n01 += 1
            else:
                n00 += 1
    total = n11 + n10 + n01 + n00
    sum_a = n11 + n10
    sum_b = n11 + n01
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return (n11 - expected) / (max_index - expected)


def fit_ab_gauss_newton(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares (a, b) for 1/(1 + a d^(2b)) against the offset
    exponential target, via damped Gauss-Newton with analytic Jacobian."""
    xs = np.linspace(0.0, 3.0 * spread, 300)
    ys = np.where(xs < min_dist, 1.0, np.exp(-(xs - min_dist) / spread))

    def residuals(a, b):
        with np.errstate(divide="ignore"):
            xp = np.where(xs > 0, xs ** (2 * b), 0.0)
        return 1.0 / (1.0 + a * xp) - ys, xp

    a, b = 1.0, 1.0
    r, xp = residuals(a, b)
    cost = float(r @ r)
    for _ in range(200):
        denom = (1.0 + a * xp) ** 2
        da = -xp / denom
        with np.errstate(divide="ignore"):
            logx = np.where(xs > 0, np.log(xs), 0.0)
        db = -2.0 * a * xp * logx / denom
        jac = np.column_stack([da, db])
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        scale = 1.0
        for _ in range(40):
            na, nb = a + scale * step[0], b + scale * step[1]
            nr, nxp = residuals(na, nb)
            ncost = float(nr @ nr)
            if ncost < cost:
                break
            scale /= 2.0
        else:
            break
        a, b, r, xp, prev = na, nb, nr, nxp, cost
        cost = ncost
        if abs(prev - cost) < 1e-15:
            break
    return a, b


def two_blob_matrix(n_per: int, dim: int, separation: float, seed: int):
    """Two Gaussian blobs and their generative labels."""
    rng = np.random.default_rng(seed)
    offset = np.zeros(dim)
    offset[0] = separation
    x = np.vstack(
        [rng.normal(size=(n_per, dim)), rng.normal(size=(n_per, dim)) + offset]
    )
    labels = [0] * n_per + [1] * n_per
    return x, labels


def clustering_agreement(labels_a, labels_b) -> float:
    """ARI between two clusterings (contingency form, independent of the
    pair-counting oracle above)."""
    n = len(labels_a)
    cont = Counter(zip(labels_a, labels_b))

    def comb2(x):
        return x * (x - 1) // 2

    sum_ij = sum(comb2(c) for c in cont.values())
    sum_a = sum(comb2(c) for c in Counter(labels_a).values())
    sum_b = sum(comb2(c) for c in Counter(labels_b).values())
    total = comb2(n)
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)
