import numpy as np
import pytest
from scipy.integrate import quad

from adaptalert import lba

from oracles import (
    central_difference,
    oracle_choice_probability,
    oracle_correct_loglik,
    oracle_mean_rt,
    oracle_pdf,
    oracle_survival,
)

P = lba.LbaParams(v_correct=2.0, v_error=1.0, A=0.5, k=0.5, psi=0.25)


def test_pdf_zero_at_zero_time():
    assert lba.node_pdf(0.0, b=1.0, A=0.5, v=2.0, s=1.0) == 0.0
    assert lba.node_pdf(-1.0, b=1.0, A=0.5, v=2.0, s=1.0) == 0.0


def test_pdf_rejects_bad_domain():
    with pytest.raises(ValueError):
        lba.node_pdf(0.5, b=np.nan, A=0.5, v=2.0, s=1.0)
    with pytest.raises(ValueError):
        lba.node_pdf(0.5, b=0.4, A=0.5, v=2.0, s=1.0)
    with pytest.raises(ValueError):
        lba.node_pdf(np.inf, b=1.0, A=0.5, v=2.0, s=1.0)


def test_pdf_matches_simulated_histogram():
    # sup-distance between bin-averaged density and a 1e6-draw histogram
    rng = np.random.default_rng(7)
    params = lba.LbaParams(v_correct=2.0, v_error=1.0, A=0.5, k=0.5, psi=0.0)
    t, _ = lba.simulate_decision_outcomes(
        lba.LbaParams(v_correct=2.0, v_error=1e-8 + 1.0, A=0.5, k=0.5, psi=0.0), 1, rng
    )
    single = lba.LbaParams(v_correct=2.0, v_error=1.0, A=0.5, k=0.5, psi=0.0)
    start = rng.uniform(0.0, single.A, 1_000_000)
    drift = rng.normal(single.v_correct, single.s, 1_000_000)
    while np.any(drift <= 0):
        bad = drift <= 0
        drift[bad] = rng.normal(single.v_correct, single.s, int(bad.sum()))
    finish = (single.b - start) / drift

    edges = np.arange(0.0, 4.0 + 1e-9, 0.05)
    hist, _ = np.histogram(finish, bins=edges)
    hist_density = hist / finish.size / 0.05
    cdf_edges = lba.node_cdf(edges, b=1.0, A=0.5, v=2.0, s=1.0)
    bin_avg_density = np.diff(cdf_edges) / 0.05
    assert np.max(np.abs(hist_density - bin_avg_density)) < 0.01


def test_pdf_degenerate_limit_concentrates_at_b_over_v():
    # A -> 0 and small drift sd: mass piles up near t = b/v = 0.5 s
    grid = np.linspace(0.01, 2.0, 4000)
    dens = lba.node_pdf(grid, b=1.0, A=1e-4, v=2.0, s=0.05)
    mode = grid[np.argmax(dens)]
    assert abs(mode - 0.5) / 0.5 < 0.05


def test_cdf_basics():
    assert lba.node_cdf(0.0, b=1.0, A=0.5, v=2.0, s=1.0) == 0.0
    assert lba.node_cdf(1e5, b=1.0, A=0.5, v=2.0, s=1.0) == pytest.approx(1.0, abs=1e-5)
    grid = np.linspace(0.0, 10.0, 500)
    F = lba.node_cdf(grid, b=1.0, A=0.5, v=2.0, s=1.0)
    assert np.all(np.diff(F) >= -1e-12)
    assert np.all((F >= 0.0) & (F <= 1.0))


def test_cdf_half_at_simulated_median():
    rng = np.random.default_rng(11)
    start = rng.uniform(0.0, 0.5, 1_000_000)
    drift = rng.normal(2.0, 1.0, 1_000_000)
    while np.any(drift <= 0):
        bad = drift <= 0
        drift[bad] = rng.normal(2.0, 1.0, int(bad.sum()))
    finish = (1.0 - start) / drift
    med = np.median(finish)
    assert lba.node_cdf(med, b=1.0, A=0.5, v=2.0, s=1.0) == pytest.approx(0.5, abs=0.01)


def test_cdf_matches_oracle():
    grid = np.array([0.2, 0.5, 1.0, 2.0])
    ours = lba.node_cdf(grid, b=1.0, A=0.5, v=2.0, s=1.0)
    orc = np.array([float(1.0 - oracle_survival(t, 1.0, 0.5, 2.0, 1.0)[0]) for t in grid])
    assert np.allclose(ours, orc, atol=1e-8)


def test_defective_densities_integrate_to_complementary_choice_probs():
    swapped = lba.LbaParams(
        v_correct=P.v_error, v_error=P.v_correct, A=P.A, k=P.k, psi=P.psi
    )
    pc, _ = quad(lambda t: lba.defective_pdf(t, P), 0, 60, limit=300)
    pe, _ = quad(lambda t: lba.defective_pdf(t, swapped), 0, 60, limit=300)
    assert pc + pe == pytest.approx(1.0, abs=1e-4)


def test_loglik_sentinel_at_zero_decision_time():
    t = lba.Trial(rt=P.psi, response="hazardous", hazard_type="EL", correct=True, participant_id="p0")
    assert lba.correct_trial_loglik(t, P) == -np.inf


def test_loglik_matches_quadrature_oracle():
    rng = np.random.default_rng(3)
    rt, correct = lba.simulate_decision_outcomes(P, 4000, rng)
    td = (rt - P.psi)[correct][:2000]
    ours = lba.decision_logliks(td, P)
    orc = oracle_correct_loglik(td, P)
    assert abs(np.mean(ours) - np.mean(orc)) < 1e-3
    assert np.max(np.abs(ours - orc)) < 1e-3


def test_decision_time_reconstruction():
    # distance between start point and threshold divided by the drift rate
    start, b, drift = 0.3, 1.0, 1.4
    assert (b - start) / drift == pytest.approx(0.5)


def test_gradient_matches_finite_differences_at_random_points():
    rng = np.random.default_rng(42)
    rt, correct = lba.simulate_decision_outcomes(P, 300, rng)
    rts = rt[correct]
    rt_min = float(rts.min())
    worst = 0.0
    for _ in range(10):
        theta = lba.unconstrain(P, rt_min) + rng.normal(0.0, 0.3, 5)
        lp, g = lba.log_posterior_and_grad(theta, rts, rt_min)
        assert np.isfinite(lp)
        fd = central_difference(
            lambda th: lba.log_posterior_and_grad(th, rts, rt_min)[0], theta
        )
        rel = np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6))
        worst = max(worst, rel)
    assert worst < 1e-4


def test_gradient_prior_only_with_zero_trials():
    theta = lba.PRIOR_MEANS.copy()
    lp, g = lba.log_posterior_and_grad(theta, np.array([]), rt_min=0.5)
    assert np.allclose(g, 0.0)
    theta2 = theta + 0.3
    _, g2 = lba.log_posterior_and_grad(theta2, np.array([]), rt_min=0.5)
    assert np.allclose(g2, lba.PRIOR_MEANS - theta2)


def test_gradient_doubles_likelihood_part_on_duplicated_trials():
    rng = np.random.default_rng(5)
    rt, correct = lba.simulate_decision_outcomes(P, 200, rng)
    rts = rt[correct]
    rt_min = float(rts.min())
    theta = lba.unconstrain(P, rt_min)
    _, g1 = lba.log_posterior_and_grad(theta, rts, rt_min)
    _, g2 = lba.log_posterior_and_grad(theta, np.concatenate([rts, rts]), rt_min)
    _, gp = lba.log_posterior_and_grad(theta, np.array([]), rt_min)
    assert np.allclose(g2 - gp, 2.0 * (g1 - gp), rtol=1e-12)


def test_gradient_flags_divergent_region():
    # psi parameterization keeps rt > psi, so force a bad theta instead
    lp, g = lba.loglik_gradient([], np.array([np.nan, 0, 0, 0, 0]), rt_min=0.5)
    assert lp == -np.inf and g is None


def test_simulate_dominant_drift():
    params = lba.LbaParams(v_correct=1000.0, v_error=0.01, A=0.5, k=0.5, psi=0.3)
    rng = np.random.default_rng(0)
    rt, correct = lba.simulate_decision_outcomes(params, 2000, rng)
    assert np.mean(correct) == 1.0
    assert np.all(rt > 0.3)
    assert np.all(rt < 0.3 + 0.01)


def test_simulated_accuracy_matches_quadrature_oracle():
    params = lba.LbaParams(v_correct=3.0, v_error=1.0, A=0.5, k=0.5, psi=0.25)
    rng = np.random.default_rng(123)
    _, correct = lba.simulate_decision_outcomes(params, 100_000, rng)
    p_oracle = oracle_choice_probability(params)
    assert abs(np.mean(correct) - p_oracle) < 0.005


def test_simulated_mean_rt_matches_quadrature_oracle():
    rng = np.random.default_rng(321)
    rt, _ = lba.simulate_decision_outcomes(P, 1_000_000, rng)
    m_oracle = oracle_mean_rt(P)
    assert abs(np.mean(rt) - m_oracle) / m_oracle < 0.01


def test_simulated_correct_rts_match_analytic_defective_density():
    # KS distance between simulated correct decision times and the
    # normalized analytic defective CDF
    rng = np.random.default_rng(99)
    rt, correct = lba.simulate_decision_outcomes(P, 140_000, rng)
    td = np.sort((rt - P.psi)[correct][:100_000])
    grid = np.linspace(1e-6, max(td.max() * 1.05, 8.0), 20_000)
    dens = lba.defective_pdf(grid, P)
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * np.diff(grid))])
    cdf /= cdf[-1]
    F_at = np.interp(td, grid, cdf)
    n = td.size
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    ks = max(np.max(np.abs(F_at - ecdf_hi)), np.max(np.abs(F_at - ecdf_lo)))
    assert ks < 0.01


def test_pdf_matches_start_point_quadrature_oracle():
    grid = np.array([0.1, 0.3, 0.7, 1.5, 3.0])
    ours = lba.node_pdf(grid, b=1.3, A=0.6, v=1.7, s=1.0)
    orc = oracle_pdf(grid, 1.3, 0.6, 1.7, 1.0)
    assert np.allclose(ours, orc, rtol=1e-8)


def test_simulate_trial_fields():
    t = lba.simulate_trial(P, rng_seed=5, hazard_type="SI", participant_id="p7")
    assert t.hazard_type == "SI"
    assert t.participant_id == "p7"
    assert (t.response == "hazardous") == t.correct
    same = lba.simulate_trial(P, rng_seed=5, hazard_type="SI", participant_id="p7")
    assert same == t


def test_params_validation():
    with pytest.raises(ValueError):
        lba.LbaParams(v_correct=2.0, v_error=1.0, A=-0.1, k=0.5, psi=0.2)
    with pytest.raises(ValueError):
        lba.LbaParams(v_correct=0.0, v_error=1.0, A=0.5, k=0.5, psi=0.2)
    with pytest.raises(ValueError):
        lba.Trial(rt=0.5, response="maybe", hazard_type="EL", correct=True, participant_id="x")


def test_constrain_unconstrain_roundtrip():
    theta = lba.unconstrain(P, rt_min=0.6)
    back = lba.constrain(theta, rt_min=0.6)
    assert back.A == pytest.approx(P.A)
    assert back.k == pytest.approx(P.k)
    assert back.psi == pytest.approx(P.psi)


def test_trials_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    trials = [
        lba.simulate_trial(P, rng, hazard_type="LEP", participant_id=f"p{i}")
        for i in range(20)
    ]
    path = tmp_path / "trials.csv"
    lba.write_trials_csv(path, trials)
    back = lba.read_trials_csv(path)
    assert back == trials
