"""Gradient-based MCMC: Hamiltonian dynamics with no-U-turn termination.

Trajectories grow by doubling until the slice-sampling tree makes a U-turn
or hits the depth cap; step sizes adapt during warmup by dual averaging
toward a target acceptance statistic. Chains are independent, each with its
own deterministic RNG stream, so runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import lba

__all__ = [
    "ChainConfig",
    "PosteriorDraws",
    "leapfrog",
    "nuts_sample",
    "gelman_rubin",
    "posterior_summary",
    "fit_lba_by_hazard",
    "save_draws",
    "load_draws",
]

# Slice threshold for flagging a divergent transition (Delta_max).
_DIVERGENCE_SLACK = 1000.0


@dataclass(frozen=True)
class ChainConfig:
    """Sampler run configuration.

    n_iterations counts all transitions per chain including warmup;
    post-warmup draws are kept every `thinning` iterations. With
    adapt_mass_matrix on (and warmup of at least 100), the first half of
    warmup runs with unit mass, then per-coordinate scales are estimated
    from the mid-warmup draws and step-size adaptation restarts in the
    rescaled space; badly scaled posteriors otherwise force very deep
    trajectory trees.
    """

    n_iterations: int = 1000
    n_warmup: int = 500
    thinning: int = 1
    n_chains: int = 4
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    adapt_mass_matrix: bool = True

    def __post_init__(self):
        if not self.n_warmup < self.n_iterations:
            raise ValueError("need n_warmup < n_iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.n_chains < 2:
            raise ValueError("need at least 2 chains for convergence checks")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must be in (0, 1)")


#: Full-scale settings (4 chains x 4000 iterations, 2000 warmup).
PAPER_SCALE = ChainConfig(n_iterations=4000, n_warmup=2000)
#: Desk-scale default (4 chains x 1000 iterations, 500 warmup).
DESK_SCALE = ChainConfig(n_iterations=1000, n_warmup=500)


@dataclass
class PosteriorDraws:
    """Kept draws, [kept_iterations x n_chains x n_params]."""

    draws: np.ndarray
    divergent: np.ndarray  # bool, [kept_iterations x n_chains]
    param_names: tuple
    config: ChainConfig
    step_sizes: np.ndarray  # per chain, post-adaptation
    diagnostics: dict = field(default_factory=dict)

    def pooled(self) -> np.ndarray:
        """Draws flattened over iterations and chains, [n x n_params]."""
        return self.draws.reshape(-1, self.draws.shape[2])


def leapfrog(position, momentum, step_size, gradient_fn):
    """One symplectic leapfrog step along the log-density gradient.

    Reversible: repeating the step from (position', -momentum') returns the
    start. A non-finite gradient propagates into the outputs, which the
    tree builder flags as a divergence.
    """
    position = np.asarray(position, dtype=float)
    momentum = np.asarray(momentum, dtype=float)
    r_half = momentum + 0.5 * step_size * np.asarray(gradient_fn(position), dtype=float)
    new_position = position + step_size * r_half
    new_momentum = r_half + 0.5 * step_size * np.asarray(
        gradient_fn(new_position), dtype=float
    )
    return new_position, new_momentum


def _step(theta, r, grad, eps, target):
    """Leapfrog step that reuses cached gradients; returns logp/grad too."""
    r_half = r + 0.5 * eps * grad
    theta1 = theta + eps * r_half
    logp1, grad1 = target(theta1)
    if not np.isfinite(logp1) or grad1 is None or not np.all(np.isfinite(grad1)):
        return theta1, r_half, -np.inf, None
    r1 = r_half + 0.5 * eps * grad1
    return theta1, r1, logp1, grad1


def _find_reasonable_epsilon(theta, logp, grad, target, rng):
    eps = 1.0
    r = rng.standard_normal(theta.size)
    joint0 = logp - 0.5 * r @ r
    theta1, r1, logp1, _ = _step(theta, r, grad, eps, target)
    while not np.isfinite(logp1):
        eps *= 0.5
        if eps < 1e-10:
            raise RuntimeError("could not find a stable initial step size")
        theta1, r1, logp1, _ = _step(theta, r, grad, eps, target)
    log_ratio = logp1 - 0.5 * r1 @ r1 - joint0
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    while direction * log_ratio > -direction * math.log(2.0):
        eps *= 2.0**direction
        if eps > 1e7 or eps < 1e-10:
            break
        theta1, r1, logp1, _ = _step(theta, r, grad, eps, target)
        if not np.isfinite(logp1):
            log_ratio = -np.inf
            continue
        log_ratio = logp1 - 0.5 * r1 @ r1 - joint0
    return eps


class _Tree:
    """State carried while doubling one trajectory."""

    __slots__ = (
        "theta_m", "r_m", "grad_m", "theta_p", "r_p", "grad_p",
        "proposal", "logp_prop", "grad_prop", "n", "s", "alpha", "n_alpha",
        "divergent",
    )


def _build_tree(theta, r, grad, log_u, direction, depth, eps, joint0, target, rng):
    """Recursively double the trajectory (slice-sampler tree)."""
    if depth == 0:
        theta1, r1, logp1, grad1 = _step(theta, r, grad, direction * eps, target)
        if logp1 == -np.inf:
            joint = -np.inf
        else:
            joint = logp1 - 0.5 * r1 @ r1
        divergent = not (joint - log_u > -_DIVERGENCE_SLACK)
        t = _Tree()
        t.theta_m = t.theta_p = theta1
        t.r_m = t.r_p = r1
        t.grad_m = t.grad_p = grad1
        t.proposal, t.logp_prop, t.grad_prop = theta1, logp1, grad1
        t.n = int(log_u <= joint)
        t.s = 0 if divergent else 1
        t.alpha = min(1.0, math.exp(min(joint - joint0, 0.0)))
        t.n_alpha = 1
        t.divergent = divergent
        return t

    t = _build_tree(theta, r, grad, log_u, direction, depth - 1, eps, joint0, target, rng)
    if t.s == 1:
        if direction == -1:
            t2 = _build_tree(
                t.theta_m, t.r_m, t.grad_m, log_u, direction, depth - 1, eps, joint0, target, rng
            )
            t.theta_m, t.r_m, t.grad_m = t2.theta_m, t2.r_m, t2.grad_m
        else:
            t2 = _build_tree(
                t.theta_p, t.r_p, t.grad_p, log_u, direction, depth - 1, eps, joint0, target, rng
            )
            t.theta_p, t.r_p, t.grad_p = t2.theta_p, t2.r_p, t2.grad_p
        if t2.n > 0 and rng.random() < t2.n / max(t.n + t2.n, 1):
            t.proposal, t.logp_prop, t.grad_prop = t2.proposal, t2.logp_prop, t2.grad_prop
        span = t.theta_p - t.theta_m
        no_uturn = int(span @ t.r_m >= 0) * int(span @ t.r_p >= 0)
        t.s = t.s * t2.s * no_uturn
        t.n += t2.n
        t.alpha += t2.alpha
        t.n_alpha += t2.n_alpha
        t.divergent = t.divergent or t2.divergent
    return t


def _run_chain(target, theta0, config: ChainConfig, rng):
    """One chain; returns (kept draws, divergence flags, final step size).

    Dual averaging tunes the step size throughout warmup. When mass
    adaptation is on, sampling happens in whitened coordinates y with
    theta = L @ y: halfway through warmup, L becomes the Cholesky factor of
    the mid-warmup draw covariance (a dense mass matrix, which also absorbs
    the strong parameter correlations) and step-size adaptation restarts in
    the new geometry.
    """
    theta = np.asarray(theta0, dtype=float)
    dim = theta.size
    L = np.eye(dim)

    def scaled_target(y):
        lp, g = target(L @ y)
        return lp, (L.T @ g if g is not None else None)

    y = theta.copy()
    logp, grad = scaled_target(y)
    if not np.isfinite(logp):
        raise ValueError("chain must start at a point of finite log density")
    eps = _find_reasonable_epsilon(y, logp, grad, scaled_target, rng)
    mu = math.log(10.0 * eps)
    log_eps_bar = 0.0
    h_bar = 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75
    delta = config.target_accept
    adapt_step = 0  # dual-averaging step counter, restarts on rescale

    rescale_at = config.n_warmup // 2 if (
        config.adapt_mass_matrix and config.n_warmup >= 100
    ) else None
    window = []  # theta-space draws used to estimate scales

    n_keep = (config.n_iterations - config.n_warmup) // config.thinning
    kept = np.empty((n_keep, dim))
    kept_div = np.zeros(n_keep, dtype=bool)
    k = 0

    for m in range(1, config.n_iterations + 1):
        r0 = rng.standard_normal(dim)
        joint0 = logp - 0.5 * r0 @ r0
        log_u = joint0 - rng.exponential()

        t = _Tree()
        t.theta_m = t.theta_p = y
        t.r_m = t.r_p = r0
        t.grad_m = t.grad_p = grad
        t.proposal, t.logp_prop, t.grad_prop = y, logp, grad
        t.n, t.s = 1, 1
        t.divergent = False
        alpha, n_alpha = 1.0, 1
        depth = 0
        while t.s == 1 and depth < config.max_tree_depth:
            direction = 1 if rng.random() < 0.5 else -1
            if direction == -1:
                sub = _build_tree(
                    t.theta_m, t.r_m, t.grad_m, log_u, direction, depth, eps,
                    joint0, scaled_target, rng,
                )
                t.theta_m, t.r_m, t.grad_m = sub.theta_m, sub.r_m, sub.grad_m
            else:
                sub = _build_tree(
                    t.theta_p, t.r_p, t.grad_p, log_u, direction, depth, eps,
                    joint0, scaled_target, rng,
                )
                t.theta_p, t.r_p, t.grad_p = sub.theta_p, sub.r_p, sub.grad_p
            alpha, n_alpha = sub.alpha, sub.n_alpha
            if sub.s == 1 and sub.n > 0 and rng.random() < min(1.0, sub.n / t.n):
                t.proposal, t.logp_prop, t.grad_prop = sub.proposal, sub.logp_prop, sub.grad_prop
            t.n += sub.n
            span = t.theta_p - t.theta_m
            t.s = sub.s * int(span @ t.r_m >= 0) * int(span @ t.r_p >= 0)
            t.divergent = t.divergent or sub.divergent
            depth += 1

        y, logp, grad = t.proposal, t.logp_prop, t.grad_prop

        if m <= config.n_warmup:
            adapt_step += 1
            frac = 1.0 / (adapt_step + t0)
            h_bar = (1.0 - frac) * h_bar + frac * (delta - alpha / n_alpha)
            log_eps = mu - math.sqrt(adapt_step) / gamma * h_bar
            eta = adapt_step**-kappa
            log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
            eps = math.exp(log_eps)

            if rescale_at is not None:
                if m > rescale_at // 2:
                    window.append(L @ y)
                if m == rescale_at:
                    draws = np.asarray(window)
                    cov = np.cov(draws.T, ddof=1)
                    cov = np.atleast_2d(cov)
                    # shrink toward the diagonal so a short window cannot
                    # produce a near-singular factor
                    diag = np.diag(np.maximum(np.diag(cov), 1e-10))
                    cov = 0.9 * cov + 0.1 * diag + 1e-10 * np.eye(dim)
                    L = np.linalg.cholesky(cov)
                    y = np.linalg.solve(L, draws[-1])
                    logp, grad = scaled_target(y)
                    eps = _find_reasonable_epsilon(y, logp, grad, scaled_target, rng)
                    mu = math.log(10.0 * eps)
                    log_eps_bar, h_bar, adapt_step = 0.0, 0.0, 0
                    window = None
                    rescale_at = None
            if m == config.n_warmup:
                eps = math.exp(log_eps_bar)
        else:
            if (m - config.n_warmup) % config.thinning == 0 and k < n_keep:
                kept[k] = L @ y
                kept_div[k] = t.divergent
                k += 1
    return kept, kept_div, eps


def nuts_sample(target, config: ChainConfig, initial, param_names=None) -> PosteriorDraws:
    """Sample with independent no-U-turn chains.

    `target(theta) -> (log_density, gradient)`; the gradient may be None
    where the log density is -inf. `initial` is one start point shared by
    all chains or an [n_chains x dim] array. Chain RNG streams derive
    deterministically from (config.seed, chain index).
    """
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    if initial.shape[0] == 1:
        initial = np.repeat(initial, config.n_chains, axis=0)
    if initial.shape[0] != config.n_chains:
        raise ValueError("initial must give one point or one per chain")
    dim = initial.shape[1]
    if param_names is None:
        param_names = tuple(f"theta{i}" for i in range(dim))

    chains, divs, steps = [], [], []
    for c in range(config.n_chains):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, c]))
        kept, kept_div, eps = _run_chain(target, initial[c], config, rng)
        chains.append(kept)
        divs.append(kept_div)
        steps.append(eps)

    draws = np.stack(chains, axis=1)  # [kept, chain, param]
    divergent = np.stack(divs, axis=1)
    rate = float(divergent.mean())
    diagnostics = {"divergence_rate": rate, "ok": rate <= 0.10}
    if rate > 0.10:
        diagnostics["message"] = (
            f"{rate:.1%} of post-warmup transitions diverged; "
            "treat these draws with suspicion"
        )
        warnings.warn(diagnostics["message"])
    return PosteriorDraws(
        draws=draws,
        divergent=divergent,
        param_names=tuple(param_names),
        config=config,
        step_sizes=np.array(steps),
        diagnostics=diagnostics,
    )


def gelman_rubin(chain_values):
    """Split-chain potential scale reduction factor.

    Accepts [n_draws x n_chains] or [n_draws x n_chains x n_params]; returns
    a scalar or per-parameter array. Each chain is halved, the classic
    between/within variance ratio is computed over the split chains, and the
    result is floored at 1 (the unfloored statistic dips below 1 by O(1/n)
    noise even at perfect convergence). Chains that are exactly identical
    carry no between-chain evidence and report exactly 1. Zero within-chain
    variance everywhere yields NaN with a warning.
    """
    x = np.asarray(chain_values, dtype=float)
    scalar = x.ndim == 2
    if scalar:
        x = x[:, :, None]
    n, m, d = x.shape
    if m < 2:
        raise ValueError("need at least 2 chains")
    if n < 4:
        raise ValueError("need at least 4 draws per chain to split")

    out = np.empty(d)
    for j in range(d):
        xj = x[:, :, j]
        if all((xj[:, i] == xj[:, 0]).all() for i in range(1, m)):
            out[j] = 1.0
            continue
        half = n // 2
        split = np.concatenate([xj[:half], xj[n - half :]], axis=1)  # [half, 2m]
        W = split.var(axis=0, ddof=1).mean()
        if W == 0:
            warnings.warn("zero within-chain variance in every chain")
            out[j] = np.nan
            continue
        B_over_n = split.mean(axis=0).var(ddof=1)
        var_plus = (half - 1) / half * W + B_over_n
        out[j] = math.sqrt(max(var_plus, W) / W)
    return float(out[0]) if scalar and d == 1 else out


_QUANTILES = (0.025, 0.1, 0.5, 0.9, 0.975)


def posterior_summary(draws):
    """Median and 80%/95% intervals per parameter, pooled over chains.

    Quantiles use linear interpolation of order statistics (numpy's
    default rule): q maps to position 1 + q*(n-1) among sorted draws.
    """
    if isinstance(draws, PosteriorDraws):
        pooled = draws.pooled()
        names = draws.param_names
    else:
        pooled = np.asarray(draws, dtype=float)
        if pooled.ndim == 1:
            pooled = pooled[:, None]
        if pooled.ndim == 3:
            pooled = pooled.reshape(-1, pooled.shape[2])
        names = tuple(f"theta{i}" for i in range(pooled.shape[1]))
    if pooled.size == 0:
        raise ValueError("no draws to summarize")
    qs = np.quantile(pooled, _QUANTILES, axis=0)
    return {
        name: {
            "median": float(qs[2, i]),
            "ci80": (float(qs[1, i]), float(qs[3, i])),
            "ci95": (float(qs[0, i]), float(qs[4, i])),
        }
        for i, name in enumerate(names)
    }


def summary_to_csv_rows(summaries_by_group):
    """Flatten {group: posterior_summary(...)} into CSV rows."""
    rows = [["group", "parameter", "median", "q10", "q90", "q025", "q975"]]
    for group in sorted(summaries_by_group):
        for name, s in summaries_by_group[group].items():
            rows.append(
                [
                    group,
                    name,
                    repr(s["median"]),
                    repr(s["ci80"][0]),
                    repr(s["ci80"][1]),
                    repr(s["ci95"][0]),
                    repr(s["ci95"][1]),
                ]
            )
    return rows


@dataclass
class LbaFit:
    """Posterior fit of one hazard type's correct trials."""

    hazard_type: str
    draws: PosteriorDraws  # constrained scale: A, k, v_correct, v_error, psi
    r_hat: dict
    summary: dict
    rt_min: float
    n_trials: int


def fit_lba_by_hazard(trials, config: ChainConfig):
    """Independent posterior fits per hazard type over correct trials only.

    Hazard groups with no correct trials are skipped with a warning. Chain
    seeds derive from (config.seed, hazard index) so a rerun with the same
    config reproduces every draw bit for bit.
    """
    fits = {}
    for idx, hazard in enumerate(lba.HAZARD_TYPES):
        rts = np.array(
            [t.rt for t in trials if t.hazard_type == hazard and t.correct], dtype=float
        )
        if rts.size == 0:
            warnings.warn(f"no correct trials for hazard {hazard}; skipped")
            continue
        rt_min = float(rts.min())
        target = lba.LbaPosterior(rts)

        init_rng = np.random.default_rng(np.random.SeedSequence([config.seed, idx, 1]))
        initial = lba.PRIOR_MEANS + 0.5 * init_rng.standard_normal(
            (config.n_chains, len(lba.PRIOR_MEANS))
        )
        chain_cfg = ChainConfig(
            n_iterations=config.n_iterations,
            n_warmup=config.n_warmup,
            thinning=config.thinning,
            n_chains=config.n_chains,
            target_accept=config.target_accept,
            max_tree_depth=config.max_tree_depth,
            seed=int(np.random.SeedSequence([config.seed, idx, 2]).generate_state(1)[0]),
        )
        raw = nuts_sample(target, chain_cfg, initial, param_names=lba.UNCONSTRAINED_NAMES)

        constrained = np.empty_like(raw.draws)
        constrained[:, :, 0:4] = np.exp(raw.draws[:, :, 0:4])
        constrained[:, :, 4] = rt_min / (1.0 + np.exp(-raw.draws[:, :, 4]))
        draws = PosteriorDraws(
            draws=constrained,
            divergent=raw.divergent,
            param_names=lba.PARAM_NAMES,
            config=chain_cfg,
            step_sizes=raw.step_sizes,
            diagnostics=dict(raw.diagnostics),
        )
        r_hat = {
            name: float(gelman_rubin(constrained[:, :, i]))
            for i, name in enumerate(lba.PARAM_NAMES)
        }
        fits[hazard] = LbaFit(
            hazard_type=hazard,
            draws=draws,
            r_hat=r_hat,
            summary=posterior_summary(draws),
            rt_min=rt_min,
            n_trials=int(rts.size),
        )
    return fits


# ---------------------------------------------------------------------------
# Persistence: flat little-endian binary + JSON sidecar
# ---------------------------------------------------------------------------

def save_draws(draws: PosteriorDraws, bin_path, json_path):
    arr = np.ascontiguousarray(draws.draws, dtype="<f8")
    arr.tofile(bin_path)
    sidecar = {
        "shape": list(draws.draws.shape),
        "layout": "kept_iteration x chain x parameter, little-endian float64",
        "param_names": list(draws.param_names),
        "config": asdict(draws.config),
        "step_sizes": [float(e) for e in draws.step_sizes],
        "divergent": draws.divergent.astype(int).tolist(),
        "diagnostics": draws.diagnostics,
    }
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_draws(bin_path, json_path) -> PosteriorDraws:
    with open(json_path) as fh:
        sidecar = json.load(fh)
    shape = tuple(sidecar["shape"])
    arr = np.fromfile(bin_path, dtype="<f8").reshape(shape)
    return PosteriorDraws(
        draws=arr,
        divergent=np.array(sidecar["divergent"], dtype=bool),
        param_names=tuple(sidecar["param_names"]),
        config=ChainConfig(**sidecar["config"]),
        step_sizes=np.array(sidecar["step_sizes"]),
        diagnostics=sidecar.get("diagnostics", {}),
    )
