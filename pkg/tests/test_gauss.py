import math
import warnings

import numpy as np
import pytest

from magrnn import gauss, sim
from magrnn.kernels import loops, vectorized

P = sim.DEFAULT_PARAMS
P8 = P.replace(n_steps=8)


def test_build_model_defaults():
    m = gauss.build_model(P)
    np.testing.assert_allclose(m.observation, [math.sqrt(18 * 0.01), 0.0], rtol=1e-15)
    assert m.observation[0] == pytest.approx(0.4242640687119285, abs=1e-15)
    np.testing.assert_array_equal(m.prior.cov, np.diag([0.5, 1.0]))
    np.testing.assert_allclose(m.transition, [[1, -0.9], [0, 0.99]], rtol=1e-15)
    np.testing.assert_allclose(m.process_noise, np.diag([0, 0.02]), rtol=1e-15)
    assert m.obs_noise == 0.5


def test_build_model_no_coupling():
    m = gauss.build_model(P.replace(mu=0.0))
    np.testing.assert_array_equal(m.transition, np.diag([1.0, 0.99]))


def test_single_step_matches_scalar_bayes():
    m = gauss.build_model(P)
    fr = gauss.kalman_filter(m, [1.0])
    h = math.sqrt(0.18)
    # only p is observed; B is a priori independent of p, so it is untouched
    post_var_p = 1.0 / (1.0 / 0.5 + h * h / 0.5)
    post_mean_p = post_var_p * h * 1.0 / 0.5
    np.testing.assert_allclose(fr.means[0, 0], [post_mean_p, 0.0], atol=1e-12)
    np.testing.assert_allclose(fr.covs[0], np.diag([post_var_p, 1.0]), atol=1e-12)


def test_uninformative_measurement_keeps_prior():
    p = P.replace(kappa=0.0)
    m = gauss.build_model(p)
    x = sim.generate_dataset(p, 3, seed=1).signals
    fr, sr = gauss.filter_smooth_batch(m, x)
    P_k = m.prior.cov
    for k in range(p.n_steps):
        np.testing.assert_allclose(fr.covs[k], P_k, atol=1e-12)
        P_k = m.transition @ P_k @ m.transition.T + m.process_noise
    # Euler-discretized OU settles at sigma*tau/(1-(1-gamma*tau)^2) = 1.005, not exactly 1
    np.testing.assert_allclose(fr.covs[:, 1, 1], 1.0, atol=5e-3)
    np.testing.assert_allclose(fr.means[:, :, 1], 0.0, atol=1e-12)
    np.testing.assert_allclose(sr.means, fr.means, atol=1e-12)
    np.testing.assert_allclose(sr.covs, fr.covs, atol=1e-12)


def test_smoother_boundary_identity():
    m = gauss.build_model(P)
    x = sim.generate_dataset(P, 4, seed=2).signals
    fr = gauss.kalman_filter(m, x)
    sr = gauss.rts_smoother(m, fr)
    assert np.array_equal(sr.means[:, -1], fr.means[:, -1])
    assert np.array_equal(sr.covs[-1], fr.covs[-1])


def test_rejects_nonfinite_signal():
    m = gauss.build_model(P)
    with pytest.raises(ValueError):
        gauss.kalman_filter(m, [0.0, np.nan])


def test_rts_and_batch_paths_agree():
    m = gauss.build_model(P)
    x = sim.generate_dataset(P, 5, seed=3).signals
    fr, sr = gauss.filter_smooth_batch(m, x)
    sr2 = gauss.rts_smoother(m, gauss.kalman_filter(m, x))
    np.testing.assert_allclose(sr.means, sr2.means, atol=1e-12)


def test_backends_agree_on_filter():
    m = gauss.build_model(P)
    x = sim.generate_dataset(P, 6, seed=4).signals
    fr, _ = gauss.filter_smooth_batch(m, x)
    G, _, _ = gauss._smoother_gains(m, fr.covs, fr.pred_covs)
    a = loops.kalman_rts_means(m.transition, m.observation, fr.gains, G, m.prior.mean, x)
    b = vectorized.kalman_rts_means(m.transition, m.observation, fr.gains, G, m.prior.mean, x)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-12)


def test_oracle_agrees_with_smoother():
    m = gauss.build_model(P8)
    d = sim.generate_dataset(P8, 20, seed=21)
    _, sr = gauss.filter_smooth_batch(m, d.signals)
    for i in range(20):
        om, ov = gauss.joint_gaussian_oracle(m, d.signals[i])
        assert np.max(np.abs(om - sr.means[i, :, 1])) < 1e-8
        assert np.max(np.abs(ov - sr.covs[:, 1, 1])) < 1e-8


def test_oracle_filtered_marginals():
    # conditioning on the first k+1 samples gives the filtered belief at k
    m = gauss.build_model(P8)
    x = sim.generate_dataset(P8, 1, seed=5).signals[0]
    fr = gauss.kalman_filter(m, x)
    for k in range(8):
        om, ov = gauss.joint_gaussian_oracle(m, x[:k + 1], n_steps=8)
        assert abs(om[k] - fr.means[0, k, 1]) < 1e-10
        assert abs(ov[k] - fr.covs[k, 1, 1]) < 1e-10


def test_oracle_without_measurements_is_prior():
    m = gauss.build_model(P8)
    om, ov = gauss.joint_gaussian_oracle(m, [], n_steps=8)
    np.testing.assert_allclose(om, 0.0)
    # stationary OU with Euler steps: variance drifts from 1 by O(gamma*tau)^2 per step
    v = [1.0]
    for _ in range(7):
        v.append(0.99 ** 2 * v[-1] + 0.02)
    np.testing.assert_allclose(ov, v, rtol=1e-13)


def test_oracle_step_cap():
    m = gauss.build_model(P)
    with pytest.raises(ValueError):
        gauss.joint_gaussian_oracle(m, np.zeros(65))


def test_repeated_rows_sufficiency():
    m = gauss.build_model(P8)
    mean, cov = gauss.joint_prior(m, 8)
    row = np.zeros(16)
    row[3] = m.observation[0]
    y1, y2 = 0.7, -0.2
    a = gauss.condition_gaussian(mean, cov, np.vstack([row, row]), 0.5, [y1, y2])
    b = gauss.condition_gaussian(mean, cov, row[None, :], 0.25, [(y1 + y2) / 2])
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], atol=1e-12)


def test_psd_and_smoothing_dominance():
    m = gauss.build_model(P)
    x = sim.generate_dataset(P, 2, seed=6).signals
    fr, sr = gauss.filter_smooth_batch(m, x)
    for covs in (fr.covs, sr.covs):
        assert np.max(np.abs(covs - covs.transpose(0, 2, 1))) < 1e-12
        assert np.linalg.eigvalsh(covs).min() > -1e-10
    assert np.all(sr.covs[:, 1, 1] <= fr.covs[:, 1, 1] + 1e-10)


def test_singular_prediction_uses_pinv():
    # no field diffusion and a field that is fully known a priori -> singular prediction
    p = P.replace(n_steps=5, sigma_b=0.0)
    m = gauss.build_model(p)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _, sr = gauss.filter_smooth_batch(m, np.zeros((1, 5)))
    assert sr.used_pinv
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    assert np.all(np.isfinite(sr.means))


def test_innovations_whiteness_and_calibration():
    m = gauss.build_model(P)
    d = sim.generate_dataset(P, 1000, seed=31)
    fr, sr = gauss.filter_smooth_batch(m, d.signals)
    e = fr.innovations
    n = e.shape[1]
    # lag-1 autocorrelation averaged over records
    rho = np.mean(np.sum(e[:, 1:] * e[:, :-1], axis=1) / np.sum(e * e, axis=1))
    assert abs(rho) < 4 / math.sqrt(n)
    # innovation variance matches H P H' + R
    z = e / np.sqrt(fr.innovation_var)
    se = math.sqrt(2.0 / z.size)
    assert abs(z.var() - 1.0) < 3 * se * 3  # pooled over correlated-in-time entries
    for k in (0, 50, 100):
        assert abs(e[:, k].mean()) < 3 * math.sqrt(fr.innovation_var[k] / len(e))
        assert abs(e[:, k].var() / fr.innovation_var[k] - 1) < 3 * math.sqrt(2 / len(e))
    # standardized smoothed residual at mid-interval
    mid = gauss._mid_mask(P)
    resid = (d.fields - sr.means[:, :, 1]) / np.sqrt(sr.covs[:, 1, 1])
    v = resid[:, mid].var(axis=0)
    assert 0.9 <= v.mean() <= 1.1


def test_baseline_curve_kappa_zero_is_prior():
    p = P.replace(kappa=0.0)
    d = sim.generate_dataset(p, 4000, seed=8)
    bc = gauss.baseline_error_curve(p, d)
    assert np.all(np.abs(bc.error_smoothed - 1.0) < 3 * math.sqrt(2 / 4000) + 0.02)


def test_baseline_curve_rejects_mismatch():
    d = sim.generate_dataset(P, 3, seed=8)
    with pytest.raises(ValueError):
        gauss.baseline_error_curve(P.replace(mu=10.0), d)


def test_perfect_estimator_summary_is_zero():
    s = gauss.error_summary(P, np.zeros(P.n_steps))
    assert s["mid"] == 0.0 and s["edge_start"] == 0.0


def test_baseline_csv(tmp_path):
    d = sim.generate_dataset(P, 50, seed=9)
    bc = gauss.baseline_error_curve(P, d)
    out = tmp_path / "b.csv"
    bc.write_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,error_smoothed,error_filtered"
    assert len(lines) == P.n_steps + 1
    _, sr = gauss.filter_smooth_batch(gauss.build_model(P), d.signals[:1])
    est = tmp_path / "e.csv"
    gauss.write_estimate_csv(P, d.fields[0], sr, est)
    assert est.read_text().splitlines()[0] == "t,B_true,B_smoothed,B_var_smoothed"
