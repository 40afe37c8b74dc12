"""Classical tests for comparing behavior across hazard types.

One-way between-groups ANOVA, Tukey HSD post-hoc comparisons (with the
Tukey-Kramer adjustment for unbalanced groups), and a one-sample
Kolmogorov-Smirnov test. Tail probabilities come from numerical evaluation
of the F and studentized-range distributions, and the KS p-value from the
asymptotic Kolmogorov series; no table lookups anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import stats as spstats


@dataclass(frozen=True)
class GroupedSample:
    """Labelled groups of unitless measurements."""

    groups: tuple  # of (label, np.ndarray) pairs

    @classmethod
    def from_pairs(cls, pairs):
        groups = tuple((str(label), np.asarray(values, dtype=float)) for label, values in pairs)
        if len(groups) < 2:
            raise ValueError("need at least 2 groups")
        for label, values in groups:
            if values.ndim != 1 or values.size < 2:
                raise ValueError(f"group {label!r} needs at least 2 values")
            if not np.all(np.isfinite(values)):
                raise ValueError(f"group {label!r} has non-finite values")
        return cls(groups=groups)

    @classmethod
    def from_dict(cls, mapping):
        return cls.from_pairs(mapping.items())

    def labels(self):
        return [label for label, _ in self.groups]


def oneway_anova(sample: GroupedSample) -> dict:
    """Between-groups F test.

    Returns {"F", "df_between", "df_within", "p"}. Raises if the pooled
    within-group variance is zero (the statistic is undefined).
    """
    values = [v for _, v in sample.groups]
    k = len(values)
    n_total = sum(v.size for v in values)
    grand = sum(v.sum() for v in values) / n_total
    ss_between = sum(v.size * (v.mean() - grand) ** 2 for v in values)
    ss_within = sum(((v - v.mean()) ** 2).sum() for v in values)
    df_between = k - 1
    df_within = n_total - k
    if ss_within <= 0:
        raise ValueError("zero within-group variance; F statistic undefined")
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    F = ms_between / ms_within
    p = float(spstats.f.sf(F, df_between, df_within))
    return {"F": float(F), "df_between": df_between, "df_within": df_within, "p": p}


def tukey_hsd(sample: GroupedSample, alpha: float = 0.05) -> list:
    """All pairwise comparisons via the studentized range.

    Unbalanced groups use the Tukey-Kramer standard error. Each result dict
    carries the signed mean difference (first minus second), the q statistic,
    its p-value, and significance at `alpha`.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    values = dict(sample.groups)
    labels = sample.labels()
    k = len(labels)
    n_total = sum(v.size for v in values.values())
    df_within = n_total - k
    ss_within = sum(((v - v.mean()) ** 2).sum() for v in values.values())
    if ss_within <= 0:
        raise ValueError("zero within-group variance; comparisons undefined")
    ms_within = ss_within / df_within
    q_crit = float(spstats.studentized_range.ppf(1.0 - alpha, k, df_within))

    results = []
    for a, b in combinations(labels, 2):
        va, vb = values[a], values[b]
        diff = float(va.mean() - vb.mean())
        se = math.sqrt(ms_within / 2.0 * (1.0 / va.size + 1.0 / vb.size))
        q = abs(diff) / se
        p = float(spstats.studentized_range.sf(q, k, df_within))
        results.append(
            {
                "pair": (a, b),
                "mean_diff": diff,
                "q": float(q),
                "p": p,
                "significant": bool(q > q_crit),
            }
        )
    return results


def _kolmogorov_sf(lam: float) -> float:
    """Asymptotic Kolmogorov tail sum 2*sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lam^2),
    truncated once terms drop below 1e-10."""
    if lam <= 0:
        return 1.0
    total = 0.0
    for j in range(1, 101):
        term = 2.0 * (-1.0) ** (j - 1) * math.exp(-2.0 * j * j * lam * lam)
        total += term
        if abs(term) < 1e-10:
            break
    return min(max(total, 0.0), 1.0)


def ks_test(values, reference_cdf) -> dict:
    """One-sample Kolmogorov-Smirnov test against a callable CDF.

    D is the supremum distance between the empirical CDF and the reference;
    the p-value uses the asymptotic distribution of sqrt(n) * D.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n < 8:
        raise ValueError("need at least 8 values")
    F = np.asarray(reference_cdf(x), dtype=float)
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    D = float(max(np.max(ecdf_hi - F), np.max(F - ecdf_lo)))
    p = _kolmogorov_sf(math.sqrt(n) * D)
    return {"D": D, "p": p}
