"""Two-accumulator linear ballistic race model of choice response time.

Each response alternative owns an accumulator that starts at a uniform
point in [0, A], gathers evidence linearly at a normally distributed rate,
and responds when it crosses the threshold b = A + k. Response time is the
winning accumulator's crossing time plus a non-decision offset psi.

Drift rates are truncated to positive values (a negative draw is redrawn),
so every trial terminates; the closed-form densities carry the matching
truncation correction. Only correct-response trials contribute to the
likelihood: the correct accumulator's first-passage density times the
survival probability of the competing one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, expit, ndtr

HAZARD_TYPES = ("EL", "LEP", "SI")
RESPONSES = ("hazardous", "safe")

#: Between-trial drift standard deviation, fixed for identifiability.
DRIFT_SD = 1.0

#: Order of the unconstrained parameter vector used for sampling.
UNCONSTRAINED_NAMES = ("log_A", "log_k", "log_v_correct", "log_v_error", "logit_psi")
PARAM_NAMES = ("A", "k", "v_correct", "v_error", "psi")

#: Prior means on the unconstrained scale; all prior sds are 1. Equivalent
#: to lognormal priors on A, k and the drifts (medians 0.5, 0.5, 2, 2) and a
#: logit-normal prior on psi / rt_min.
PRIOR_MEANS = np.array([math.log(0.5), math.log(0.5), math.log(2.0), math.log(2.0), 0.0])

_SQRT_2PI = math.sqrt(2.0 * math.pi)

TRIALS_CSV_HEADER = ["participant_id", "hazard_type", "response", "correct", "rt_s"]


@dataclass(frozen=True)
class LbaParams:
    """Latent psychology of one hazard condition.

    v_correct / v_error are the mean drift rates of the accumulator matching
    the correct response and of its competitor (evidence/s). A bounds the
    uniform start-point distribution, k = b - A is the relative threshold,
    psi is the non-decision time in seconds, and s is the fixed between-trial
    drift sd.
    """

    v_correct: float
    v_error: float
    A: float
    k: float
    psi: float
    s: float = DRIFT_SD

    def __post_init__(self):
        for name in ("v_correct", "v_error", "A", "k", "psi", "s"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.A <= 0 or self.k <= 0:
            raise ValueError("A and k must be positive")
        if self.v_correct <= 0 or self.v_error <= 0:
            raise ValueError("mean drift rates must be positive")
        if self.psi < 0:
            raise ValueError("psi must be nonnegative")
        if self.s <= 0:
            raise ValueError("s must be positive")

    @property
    def b(self) -> float:
        """Decision threshold."""
        return self.A + self.k


@dataclass(frozen=True)
class Trial:
    """One behavioral observation."""

    rt: float
    response: str
    hazard_type: str
    correct: bool
    participant_id: str

    def __post_init__(self):
        if not (math.isfinite(self.rt) and self.rt > 0):
            raise ValueError("rt must be positive and finite")
        if self.hazard_type not in HAZARD_TYPES:
            raise ValueError(f"unknown hazard type {self.hazard_type!r}")
        if self.response not in RESPONSES:
            raise ValueError(f"unknown response {self.response!r}")


_GL32_X, _GL32_W = np.polynomial.legendre.leggauss(32)
_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)

# Relative conditioning threshold below which the closed form has lost too
# many digits to cancellation and a stable evaluation path takes over.
_CANCEL_TOL = 1e-6


def _phi(z):
    return np.exp(-0.5 * z * z) / _SQRT_2PI


def _mills(z):
    # Upper-tail ratio (1 - ndtr(z)) / phi(z), stable for large positive z.
    return math.sqrt(math.pi / 2.0) * erfcx(z / math.sqrt(2.0))


def _check_node_args(b, A, v, s):
    for name, x in (("b", b), ("A", A), ("v", v), ("s", s)):
        if not np.isfinite(x):
            raise ValueError(f"{name} must be finite")
    if not (b > A > 0):
        raise ValueError("need b > A > 0")
    if s <= 0:
        raise ValueError("s must be positive")


def _pdf_terms(t, b, A, v, s, stable=True):
    """Untruncated first-passage density f(t) and partials wrt (b, A, v, t).

    The closed form cancels catastrophically in both tails (f orders of
    magnitude below its additive terms), so with stable=True such entries
    are recomputed: slow tail by Gauss-Legendre quadrature over the start
    point (all-positive integrand), fast tail via the scaled complementary
    error function. stable=False clips the cancellation noise instead,
    which suffices where tiny densities only feed sums dominated by large
    ones. Requires t > 0 elementwise.
    """
    t = np.asarray(t, dtype=float)
    ts = t * s
    z1 = (b - A - t * v) / ts
    z2 = (b - t * v) / ts
    P1, P2 = ndtr(z1), ndtr(z2)
    p1, p2 = _phi(z1), _phi(z2)
    g = -v * P1 + s * p1 + v * P2 - s * p2
    t2s = t * t * s
    dg_db = (-p1 * (b - A) + p2 * b) / t2s
    dg_dA = p1 * (b - A) / t2s
    dg_dv = P2 - P1 + (p1 * (b - A) - p2 * b) / ts
    dg_dt = (p1 * (b - A) ** 2 - p2 * b * b) / (t2s * t)
    f = g / A
    df_db = dg_db / A
    df_dA = dg_dA / A - g / (A * A)
    df_dv = dg_dv / A
    df_dt = dg_dt / A

    if not stable:
        np.maximum(f, 0.0, out=f)
        return f, df_db, df_dA, df_dv, df_dt

    scale = v * (P1 + P2) + s * (p1 + p2)
    bad = g < _CANCEL_TOL * scale
    if np.any(bad):
        fast = bad & (z1 > 4.0)
        slow = bad & ~fast
        if np.any(fast):
            i = np.nonzero(fast)[0]
            r1, r2 = _mills(z1[i]), _mills(z2[i])
            gf = p1[i] * (s + v * r1) - p2[i] * (s + v * r2)
            f[i] = gf / A
            df_db[i] = dg_db[i] / A
            df_dA[i] = dg_dA[i] / A - gf / (A * A)
            df_dv[i] = (
                p1[i] * r1 - p2[i] * r2 + (p1[i] * (b - A) - p2[i] * b) / ts[i]
            ) / A
            df_dt[i] = dg_dt[i] / A
        if np.any(slow):
            i = np.nonzero(slow)[0]
            ti = t[i][:, None]
            kap = 0.5 * A * (_GL32_X + 1.0)[None, :]
            w_q = (0.5 * A * _GL32_W)[None, :]
            c = (b - kap) / (ti * ti * s)  # drift density scale at this start
            warg = ((b - kap) / ti - v) / s
            ph = _phi(warg)
            integ = c * ph
            f[i] = (integ * w_q).sum(axis=1) / A
            df_db[i] = ((ph / (ti * ti * s) - c * warg * ph / (ti * s)) * w_q).sum(
                axis=1
            ) / A
            edge = ((b - A) / (ti[:, 0] ** 2 * s)) * _phi(z1[i])
            df_dA[i] = -f[i] / A + edge / A
            df_dv[i] = ((c * warg * ph / s) * w_q).sum(axis=1) / A
            df_dt[i] = ((-2.0 * c * ph / ti + c * c * warg * ph) * w_q).sum(axis=1) / A
    return f, df_db, df_dA, df_dv, df_dt


def _survival_terms(t, b, A, v, s, stable=True):
    """Raw survival P(finish time > t) = P(drift > 0) - F(t) and partials.

    With stable=True, near-zero survivals (error accumulator almost surely
    done) are recomputed by nested quadrature over start point and drift
    interval; elsewhere the closed form is well conditioned.
    """
    t = np.asarray(t, dtype=float)
    ts = t * s
    z1 = (b - A - t * v) / ts
    z2 = (b - t * v) / ts
    P1, P2 = ndtr(z1), ndtr(z2)
    p1, p2 = _phi(z1), _phi(z2)
    zv = -v / s
    Pv = ndtr(zv)
    one_minus_F = (ts / A) * (-z1 * P1 + z2 * P2 - p1 + p2)
    S = one_minus_F - Pv
    dS_db = -(P1 - P2) / A
    c2 = b - t * v
    dS_dA = (c2 / A**2) * (P1 - P2) + (ts / A**2) * (p1 - p2)
    dS_dv = _phi(zv) / s + (t / A) * (P1 - P2)
    g = -v * P1 + s * p1 + v * P2 - s * p2
    dS_dt = -g / A

    if not stable:
        np.maximum(S, 0.0, out=S)
        return S, dS_db, dS_dA, dS_dv, dS_dt

    scale = (ts / A) * (np.abs(z1) * P1 + np.abs(z2) * P2 + p1 + p2) + Pv
    bad = S < _CANCEL_TOL * scale
    if np.any(bad):
        i = np.nonzero(bad)[0]
        ti = t[i][:, None]
        kap = 0.5 * A * (_GL32_X + 1.0)[None, :]
        w_q = (0.5 * A * _GL32_W)[None, :]
        eta = (b - kap) / (ti * s)  # drift interval width above zv, in sd units
        # inner integral of phi over [zv, zv + eta] per outer node
        u = zv + eta[..., None] * 0.5 * (_GL16_X + 1.0)
        D = (eta * 0.5) * (_phi(u) * _GL16_W).sum(axis=-1)
        ph_w = _phi(zv + eta)
        S[i] = (D * w_q).sum(axis=1) / A
        dS_db[i] = (ph_w / (ti * s) * w_q).sum(axis=1) / A
        eta_edge = (b - A) / (ti[:, 0] * s)
        u_edge = zv + eta_edge[:, None] * 0.5 * (_GL16_X + 1.0)[None, :]
        D_edge = (eta_edge * 0.5) * (_phi(u_edge) * _GL16_W[None, :]).sum(axis=1)
        dS_dA[i] = -S[i] / A + D_edge / A
        dS_dv[i] = _phi(zv) / s - (ph_w * w_q).sum(axis=1) / (A * s)
        dS_dt[i] = -(eta * ph_w * w_q).sum(axis=1) / (A * ti[:, 0])
        S[i] = np.maximum(S[i], 0.0)
    return S, dS_db, dS_dA, dS_dv, dS_dt


def _raw_pdf(t, b, A, v, s):
    """First-passage density of one accumulator with untruncated N(v, s) drift."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    if np.any(pos):
        f = _pdf_terms(t[pos], b, A, v, s)[0]
        out[pos] = np.maximum(f, 0.0)
    return out


def _raw_cdf(t, b, A, v, s):
    """Companion CDF of _raw_pdf; tends to P(drift > 0) as t grows."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    if np.any(pos):
        S = _survival_terms(t[pos], b, A, v, s)[0]
        out[pos] = np.clip(ndtr(v / s) - S, 0.0, 1.0)
    return out


def node_pdf(t, b, A, v, s=DRIFT_SD):
    """First-passage density at decision time t, truncated-positive drift.

    Returns 0 for t <= 0. With the truncation correction the density
    integrates to 1: every trial finishes.
    """
    _check_node_args(b, A, v, s)
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("t must be finite")
    out = _raw_pdf(t_arr, b, A, v, s) / ndtr(v / s)
    return float(out) if np.isscalar(t) else out


def node_cdf(t, b, A, v, s=DRIFT_SD):
    """Probability the accumulator has finished by decision time t."""
    _check_node_args(b, A, v, s)
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise ValueError("t must be finite")
    out = np.clip(_raw_cdf(t_arr, b, A, v, s) / ndtr(v / s), 0.0, 1.0)
    return float(out) if np.isscalar(t) else out


def defective_pdf(t, params: LbaParams):
    """Density that the correct accumulator finishes at t and the error one
    has not; integrates over t to the probability of a correct response."""
    fc = node_pdf(t, params.b, params.A, params.v_correct, params.s)
    Se = 1.0 - node_cdf(t, params.b, params.A, params.v_error, params.s)
    return fc * Se


def decision_logliks(decision_times, params: LbaParams):
    """Log defective density of correct responses at each decision time.

    Entries with nonpositive decision time, underflowed density, or zero
    survival get -inf.
    """
    td = np.asarray(decision_times, dtype=float)
    out = np.full(td.shape, -np.inf)
    ok = td > 0
    if not np.any(ok):
        return out
    f = _pdf_terms(td[ok], params.b, params.A, params.v_correct, params.s)[0]
    S = _survival_terms(td[ok], params.b, params.A, params.v_error, params.s)[0]
    good = (f > 0) & (S > 0)
    vals = np.full(f.shape, -np.inf)
    vals[good] = (
        np.log(f[good])
        - math.log(ndtr(params.v_correct / params.s))
        + np.log(S[good])
        - math.log(ndtr(params.v_error / params.s))
    )
    out[ok] = vals
    return out


def correct_trial_loglik(trial: Trial, params: LbaParams) -> float:
    """Log-likelihood of one correct trial; -inf when rt <= psi."""
    if not trial.correct:
        raise ValueError("only correct trials enter the likelihood")
    return float(decision_logliks(np.array([trial.rt - params.psi]), params)[0])


# ---------------------------------------------------------------------------
# Unconstrained parameterization and posterior gradient
# ---------------------------------------------------------------------------

def constrain(theta, rt_min: float):
    """Map an unconstrained vector (log A, log k, log v_c, log v_e,
    logit(psi/rt_min)) to an LbaParams."""
    theta = np.asarray(theta, dtype=float)
    A, k, vc, ve = np.exp(theta[:4])
    psi = rt_min * expit(theta[4])
    return LbaParams(v_correct=vc, v_error=ve, A=A, k=k, psi=psi)


def unconstrain(params: LbaParams, rt_min: float):
    if not 0 < params.psi < rt_min:
        raise ValueError("psi must lie strictly inside (0, rt_min)")
    p = params.psi / rt_min
    return np.array(
        [
            math.log(params.A),
            math.log(params.k),
            math.log(params.v_correct),
            math.log(params.v_error),
            math.log(p / (1.0 - p)),
        ]
    )


def _time_quadrature_nodes(scale: float, n: int = 96):
    """Fixed nodes for integrating defective densities over (0, inf).

    Rational map t = scale * (1+u)/(1-u) of Gauss-Legendre nodes; the node
    positions must not depend on model parameters so that gradients of
    node-based integrals stay exact.
    """
    u, w = np.polynomial.legendre.leggauss(n)
    t = scale * (1.0 + u) / (1.0 - u)
    w_t = w * 2.0 * scale / (1.0 - u) ** 2
    return t, w_t


def log_posterior_and_grad(theta, rts, rt_min: float, cond_nodes=None):
    """Unconstrained log posterior and its analytic gradient.

    The likelihood is the conditional density of the observed correct-trial
    response times given that the response was correct: the defective
    density normalized by the choice probability. (Fitting the defective
    density unnormalized rewards parameters that make errors vanish and
    badly biases every other parameter.) The choice probability and its
    partials are integrated on fixed quadrature nodes, so the gradient is
    exact for the evaluated function. Priors are independent normals on the
    unconstrained coordinates (PRIOR_MEANS, sd 1); the change of variables
    is absorbed in that prior choice. Returns (-inf, None) in the
    zero-likelihood region.
    """
    theta = np.asarray(theta, dtype=float)
    rts = np.asarray(rts, dtype=float)
    # |theta| > 50 would overflow exp and describes absurd physiology anyway
    if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > 50.0):
        return -np.inf, None
    s = DRIFT_SD
    A, k, vc, ve = np.exp(theta[:4])
    sig = expit(theta[4])
    psi = rt_min * sig
    b = A + k

    grad_prior = PRIOR_MEANS - theta
    logprior = float(-0.5 * np.sum((theta - PRIOR_MEANS) ** 2)) - 2.5 * math.log(
        2.0 * math.pi
    )
    if rts.size == 0:
        return logprior, grad_prior

    td = rts - psi
    if np.any(td <= 0):
        return -np.inf, None

    f, df_db, df_dA, df_dv, df_dt = _pdf_terms(td, b, A, vc, s)
    S, dS_db, dS_dA, dS_dv, dS_dt = _survival_terms(td, b, A, ve, s)
    if np.any(f <= 0) or np.any(S <= 0):
        return -np.inf, None

    if cond_nodes is None:
        cond_nodes = _time_quadrature_nodes(float(np.median(rts)))
    tq, wq = cond_nodes
    # tail nodes contribute nothing to the integral, so the cheap
    # clipped evaluation is plenty accurate here
    qf, qf_db, qf_dA, qf_dv, _ = _pdf_terms(tq, b, A, vc, s, stable=False)
    qS, qS_db, qS_dA, qS_dv, _ = _survival_terms(tq, b, A, ve, s, stable=False)
    R = float(np.sum(wq * qf * qS))  # untruncated-scale choice probability
    if not R > 0:
        return -np.inf, None
    n = rts.size
    R_db = np.sum(wq * (qf_db * qS + qf * qS_db))
    R_dA = np.sum(wq * (qf_dA * qS + qf * qS_dA))
    R_dvc = np.sum(wq * qf_dv * qS)
    R_dve = np.sum(wq * qf * qS_dv)

    loglik = float(np.sum(np.log(f)) + np.sum(np.log(S)) - n * math.log(R))

    inv_f = 1.0 / f
    inv_S = 1.0 / S
    dL_db = np.sum(df_db * inv_f) + np.sum(dS_db * inv_S) - n * R_db / R
    dL_dA_direct = np.sum(df_dA * inv_f) + np.sum(dS_dA * inv_S) - n * R_dA / R
    dL_dvc = np.sum(df_dv * inv_f) - n * R_dvc / R
    dL_dve = np.sum(dS_dv * inv_S) - n * R_dve / R
    dL_dpsi = -(np.sum(df_dt * inv_f) + np.sum(dS_dt * inv_S))

    # b = A + k, so the model-level A partial carries the b partial too.
    dL_dA = dL_dA_direct + dL_db
    dL_dk = dL_db

    grad_lik = np.array(
        [
            dL_dA * A,
            dL_dk * k,
            dL_dvc * vc,
            dL_dve * ve,
            dL_dpsi * psi * (1.0 - sig),
        ]
    )
    return loglik + logprior, grad_lik + grad_prior


class LbaPosterior:
    """Callable log posterior over one hazard group's correct trials.

    Precomputes the conditioning quadrature nodes so repeated evaluations
    (as in a sampler) stay cheap and mutually consistent.
    """

    def __init__(self, rts, rt_min: float | None = None, n_nodes: int = 96):
        self.rts = np.asarray(rts, dtype=float)
        if self.rts.size and np.any(self.rts <= 0):
            raise ValueError("response times must be positive")
        self.rt_min = float(self.rts.min()) if rt_min is None else float(rt_min)
        scale = float(np.median(self.rts)) if self.rts.size else 1.0
        self.cond_nodes = _time_quadrature_nodes(scale, n_nodes)

    def __call__(self, theta):
        return log_posterior_and_grad(theta, self.rts, self.rt_min, self.cond_nodes)


def loglik_gradient(trials, theta, rt_min: float | None = None):
    """Gradient of the total unconstrained log posterior over correct trials.

    Returns (log_posterior, gradient); gradient is None and the log posterior
    -inf in the divergent (zero-likelihood) region.
    """
    rts = np.array([t.rt for t in trials if t.correct], dtype=float)
    if rt_min is None:
        if rts.size == 0:
            raise ValueError("rt_min must be given when there are no trials")
        rt_min = float(rts.min())
    return log_posterior_and_grad(theta, rts, rt_min)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _positive_normal(rng, mean, sd, n):
    """Truncated-positive normal drifts; negative draws are redrawn."""
    d = rng.normal(mean, sd, n)
    bad = d <= 0
    while np.any(bad):
        d[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = d <= 0
    return d


def simulate_decision_outcomes(params: LbaParams, n: int, rng):
    """Vectorized race: returns (rt array, correct flags) for n trials."""
    start_c = rng.uniform(0.0, params.A, n)
    start_e = rng.uniform(0.0, params.A, n)
    drift_c = _positive_normal(rng, params.v_correct, params.s, n)
    drift_e = _positive_normal(rng, params.v_error, params.s, n)
    t_c = (params.b - start_c) / drift_c
    t_e = (params.b - start_e) / drift_e
    correct = t_c < t_e
    rt = np.where(correct, t_c, t_e) + params.psi
    return rt, correct


def simulate_trial(
    params: LbaParams,
    rng_seed,
    hazard_type: str = "EL",
    participant_id: str = "sim",
) -> Trial:
    """Simulate one trial of a hazardous scene.

    The correct accumulator corresponds to the "hazardous" response; if the
    competing accumulator wins, the simulated response is "safe" and the
    trial is incorrect.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    rt, correct = simulate_decision_outcomes(params, 1, rng)
    ok = bool(correct[0])
    return Trial(
        rt=float(rt[0]),
        response="hazardous" if ok else "safe",
        hazard_type=hazard_type,
        correct=ok,
        participant_id=participant_id,
    )


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def write_trials_csv(path, trials):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIALS_CSV_HEADER)
        for t in trials:
            w.writerow(
                [
                    t.participant_id,
                    t.hazard_type,
                    t.response,
                    "true" if t.correct else "false",
                    repr(t.rt),
                ]
            )


def read_trials_csv(path):
    trials = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != TRIALS_CSV_HEADER:
            raise ValueError(f"unexpected trials header {header!r}")
        for row in r:
            pid, hz, resp, corr, rt = row
            trials.append(
                Trial(
                    rt=float(rt),
                    response=resp,
                    hazard_type=hz,
                    correct=corr == "true",
                    participant_id=pid,
                )
            )
    return trials
