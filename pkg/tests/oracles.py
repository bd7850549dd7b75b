"""Independent reference implementations used only to compute expected test
values. These deliberately avoid the package's code paths: t quantiles come
from numerically integrated densities, and Rosner's procedure is a literal
plain-Python transliteration."""

import math
from functools import lru_cache

from scipy.integrate import quad


def t_pdf(x: float, dof: int) -> float:
    log_c = (math.lgamma((dof + 1) / 2.0) - math.lgamma(dof / 2.0)
             - 0.5 * math.log(dof * math.pi))
    return math.exp(log_c) * (1.0 + x * x / dof) ** (-(dof + 1) / 2.0)


@lru_cache(maxsize=None)
def t_quantile(p: float, dof: int) -> float:
    """Invert the t CDF by bisection over a numerically integrated density."""
    assert 0.5 < p < 1.0

    def cdf(x):
        return 0.5 + quad(t_pdf, 0.0, x, args=(dof,), limit=200)[0]

    lo, hi = 0.0, 1.0
    while cdf(hi) < p:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("t quantile bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def rosner_gesd(values, max_outlier_fraction=0.20, alpha=0.05):
    """Literal Rosner (1983) generalized ESD many-outlier procedure."""
    x = [float(v) for v in values]
    n = len(x)
    r = math.ceil(max_outlier_fraction * n)
    working = list(enumerate(x))
    removed = []
    last_significant = 0
    for i in range(1, r + 1):
        m = len(working)
        mean = sum(v for _, v in working) / m
        var = sum((v - mean) ** 2 for _, v in working) / (m - 1)
        std = math.sqrt(var)
        if std == 0.0:
            break
        dev, idx_in_working = max(
            ((abs(v - mean), j) for j, (_, v) in enumerate(working)))
        r_stat = dev / std
        p = 1.0 - alpha / (2.0 * m)
        t_crit = t_quantile(p, m - 2)
        lam = (m - 1) * t_crit / math.sqrt((m - 2 + t_crit ** 2) * m)
        removed.append(working.pop(idx_in_working)[0])
        if r_stat > lam:
            last_significant = i
    return set(removed[:last_significant])
