"""Latent performance profiles via a constrained Gaussian mixture.

Participants' per-hazard accuracies are clustered by EM into profiles that
share one diagonal covariance: variances are equal across profiles and
covariances are structurally zero. Profiles are then named High/Medium/Low
by their overall accuracy and participants assigned by posterior
responsibility.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

PROFILE_NAMES = ("High", "Medium", "Low")
BEHAVIOR_CSV_HEADER = ["participant_id", "acc_EL", "acc_LEP", "acc_SI"]

_DEGENERATE_WEIGHT = 1e-6


@dataclass
class ProfileModel:
    """Fitted mixture with shared diagonal covariance."""

    n_profiles: int
    means: np.ndarray  # [n_profiles x n_cols]
    variances: np.ndarray  # [n_cols], shared across profiles
    weights: np.ndarray  # simplex over profiles
    responsibilities: np.ndarray  # [n x n_profiles]
    log_likelihood: float
    loglik_trace: list = field(default_factory=list)
    converged: bool = False
    n_iterations: int = 0
    names: tuple | None = None  # set by name_profiles


def _log_gaussian_diag(data, means, variances):
    """Componentwise log density, [n x k]."""
    d = data.shape[1]
    const = -0.5 * d * math.log(2.0 * math.pi) - 0.5 * np.sum(np.log(variances))
    diff = data[:, None, :] - means[None, :, :]
    return const - 0.5 * np.sum(diff**2 / variances[None, None, :], axis=2)


def _e_step(data, means, variances, weights):
    log_comp = _log_gaussian_diag(data, means, variances) + np.log(weights)[None, :]
    norm = logsumexp(log_comp, axis=1)
    resp = np.exp(log_comp - norm[:, None])
    return resp, float(norm.sum())


def _m_step(data, resp):
    n = data.shape[0]
    nk = resp.sum(axis=0)
    weights = nk / n
    means = (resp.T @ data) / nk[:, None]
    diff = data[:, None, :] - means[None, :, :]
    # one shared variance per column, pooled over profiles
    variances = np.einsum("nk,nkd->d", resp, diff**2) / n
    return means, np.maximum(variances, 1e-12), weights


def _kmeanspp_means(data, k, rng):
    """Distance-weighted seeding of initial profile means."""
    idx = [rng.integers(data.shape[0])]
    for _ in range(k - 1):
        d2 = np.min(
            ((data[:, None, :] - data[idx][None, :, :]) ** 2).sum(axis=2), axis=1
        )
        total = d2.sum()
        if total <= 0:
            idx.append(int(rng.integers(data.shape[0])))
            continue
        idx.append(int(rng.choice(data.shape[0], p=d2 / total)))
    return data[idx].copy()


def fit_gmm_em(
    data,
    n_profiles: int,
    seed: int = 0,
    n_restarts: int = 20,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> ProfileModel:
    """EM fit of the equal-variance, zero-covariance mixture.

    Runs `n_restarts` seeded restarts and keeps the best final
    log-likelihood (ties break toward the earliest restart). A restart is
    abandoned as degenerate when any profile weight collapses below 1e-6;
    if every restart degenerates, raises.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("data must be 2-D [participants x indicators]")
    n, d = data.shape
    if n <= n_profiles:
        raise ValueError("need more participants than profiles")
    if np.any(data.var(axis=0) <= 0):
        raise ValueError("every indicator column needs positive variance")

    best = None
    for restart in range(n_restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, restart]))
        means = _kmeanspp_means(data, n_profiles, rng)
        variances = data.var(axis=0)
        weights = np.full(n_profiles, 1.0 / n_profiles)

        trace = []
        degenerate = False
        converged = False
        resp = None
        for it in range(max_iter):
            resp, ll = _e_step(data, means, variances, weights)
            trace.append(ll)
            means, variances, weights = _m_step(data, resp)
            if np.any(weights < _DEGENERATE_WEIGHT):
                degenerate = True
                break
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
                converged = True
                break
        if degenerate or resp is None:
            continue
        resp, ll = _e_step(data, means, variances, weights)
        trace.append(ll)
        model = ProfileModel(
            n_profiles=n_profiles,
            means=means,
            variances=variances,
            weights=weights,
            responsibilities=resp,
            log_likelihood=ll,
            loglik_trace=trace,
            converged=converged,
            n_iterations=len(trace),
        )
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    if best is None:
        raise RuntimeError("all EM restarts degenerated")
    return best


def assign_profiles(model: ProfileModel) -> np.ndarray:
    """Hard assignment by maximum responsibility; ties go to the lower index."""
    return np.argmax(model.responsibilities, axis=1)


def name_profiles(model: ProfileModel) -> dict:
    """Name profiles High/Medium/Low by grand mean accuracy, descending.

    Exact grand-mean ties are ordered by profile index and flagged with a
    warning. Returns {profile_index: name} and records it on the model.
    """
    if model.n_profiles != len(PROFILE_NAMES):
        raise ValueError(f"naming expects exactly {len(PROFILE_NAMES)} profiles")
    grand = model.means.mean(axis=1)
    if len(np.unique(grand)) < grand.size:
        warnings.warn("profiles tie on grand mean accuracy; ordered by index")
    order = np.argsort(-grand, kind="stable")
    mapping = {int(order[rank]): PROFILE_NAMES[rank] for rank in range(len(order))}
    model.names = tuple(mapping[i] for i in range(model.n_profiles))
    return mapping


def bic(model: ProfileModel, n: int) -> float:
    """Bayesian information criterion; lower is better."""
    d = model.means.shape[1]
    n_params = model.n_profiles * d + d + (model.n_profiles - 1)
    return -2.0 * model.log_likelihood + n_params * math.log(n)


def bic_profile_sweep(data, k_range=(1, 2, 3, 4, 5), seed: int = 0) -> dict:
    """Informational BIC across candidate profile counts."""
    data = np.asarray(data, dtype=float)
    out = {}
    for k in k_range:
        try:
            model = fit_gmm_em(data, k, seed=seed)
            out[k] = bic(model, data.shape[0])
        except (RuntimeError, ValueError) as err:
            out[k] = float("nan")
            warnings.warn(f"BIC sweep failed for {k} profiles: {err}")
    return out


def standardized_means(model: ProfileModel, data) -> np.ndarray:
    """Profile means on centered-and-scaled columns, for display only."""
    data = np.asarray(data, dtype=float)
    mu = data.mean(axis=0)
    sd = data.std(axis=0, ddof=0)
    return (model.means - mu[None, :]) / sd[None, :]


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def write_behavior_csv(path, participant_ids, matrix, assignments=None, names=None):
    matrix = np.asarray(matrix, dtype=float)
    header = list(BEHAVIOR_CSV_HEADER)
    if assignments is not None:
        header.append("profile")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, pid in enumerate(participant_ids):
            row = [pid] + [repr(float(x)) for x in matrix[i]]
            if assignments is not None:
                label = assignments[i]
                if names is not None:
                    label = names[int(label)]
                row.append(label)
            w.writerow(row)


def read_behavior_csv(path):
    ids, rows = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:4] != BEHAVIOR_CSV_HEADER:
            raise ValueError(f"unexpected behavior header {header!r}")
        for row in r:
            ids.append(row[0])
            rows.append([float(x) for x in row[1:4]])
    return ids, np.array(rows)
