import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdpcox.cox import (
    PrivateCoxPH,
    SgdParams,
    default_rounds,
    fit_private_cox,
    run_cdp_cox,
    run_fdp_cox,
    run_fdp_cox_interactive,
)
from fdpcox.datagen import CoxModelSpec, simulate
from fdpcox.federation import FederationConfig, make_servers
from fdpcox.privacy import PrivacyBudget, cdp_cox_sigma, fdp_cox_sigma, gaussian_sigma, grad_sensitivity_bound
from fdpcox.survival import Dataset, ModelBounds, gradient, hessian, project_ball

UNIT = ModelBounds(1.0, 1.0)
SPEC = CoxModelSpec.paper_default()


def _newton_mle(data, steps=40):
    beta = np.zeros(data.dimension)
    for _ in range(steps):
        beta = beta + np.linalg.solve(hessian(data, beta), gradient(data, beta))
    return beta


def _fdp(datasets, rounds, eps=1.0, mult=1.0, seed=0, step=0.5):
    cfg = FederationConfig(tuple(d.n for d in datasets), (PrivacyBudget(eps, 1e-3),) * len(datasets), rounds, 3)
    return run_fdp_cox(cfg, make_servers(cfg, datasets), SgdParams(rounds, step, UNIT, mult), seed)


def test_params_validation():
    with pytest.raises(ValueError):
        SgdParams(0)
    with pytest.raises(ValueError):
        SgdParams(3, step_size=0.0)
    with pytest.raises(ValueError):
        SgdParams(3, noise_multiplier=-1.0)


def test_default_rounds():
    assert default_rounds(5000, 3) == math.ceil(6 * math.log(5000 / 9))
    assert default_rounds(2, 3) == 1


def test_fdp_sigma_example_value():
    expected = math.sqrt(72 * math.log(1250) * math.exp(4) * math.log(101) ** 2) / 100
    assert fdp_cox_sigma(100, PrivacyBudget(1.0, 0.001), UNIT) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10**6), st.floats(0.01, 20), st.floats(1e-9, 0.5))
def test_fdp_sigma_covers_gaussian_mechanism_at_unit_bounds(b, eps, delta):
    budget = PrivacyBudget(eps, delta)
    needed = gaussian_sigma(grad_sensitivity_bound(b, UNIT).value, budget)
    assert fdp_cox_sigma(b, budget, UNIT) >= needed * (1 - 1e-12)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 10**5), st.floats(0.05, 3), st.floats(0.05, 3))
def test_fdp_sigma_coverage_condition(b, cz, cb):
    # the printed noise dominates the Gaussian mechanism on the bound exactly when
    # (3 max(cz, cz^2) - 2 cz) e^{2 cz cb} log(b+1) >= 4 cz
    bounds = ModelBounds(cz, cb)
    budget = PrivacyBudget(1.0, 1e-3)
    covered = fdp_cox_sigma(b, budget, bounds) >= gaussian_sigma(grad_sensitivity_bound(b, bounds).value, budget)
    margin = (3 * max(cz, cz * cz) - 2 * cz) * math.exp(2 * cz * cb) * math.log(b + 1) - 4 * cz
    if abs(margin) > 1e-9:
        assert covered == (margin > 0)


def test_fdp_sigma_falls_short_for_small_batches_and_bounds():
    bounds = ModelBounds(0.5, 0.5)
    budget = PrivacyBudget(1.0, 1e-3)
    assert fdp_cox_sigma(2, budget, bounds) < gaussian_sigma(grad_sensitivity_bound(2, bounds).value, budget)


def test_trajectory_shape_and_projection():
    data = simulate(SPEC, 400, 1)
    res = run_cdp_cox(data, PrivacyBudget(0.5, 1e-3), SgdParams(12, 0.5, UNIT), seed=3)
    assert res.trajectory.shape == (13, 3)
    assert np.all(res.trajectory[0] == 0)
    assert np.all(np.linalg.norm(res.trajectory, axis=1) <= 1.0 + 1e-15)
    assert res.sigmas.shape == (12, 1)


def test_transcript_sigmas_match_formulas():
    data = [simulate(SPEC, n, 2, s) for s, n in enumerate((300, 500))]
    res = _fdp(data, 10, eps=2.0)
    assert res.sigmas[0].tolist() == [fdp_cox_sigma(30, PrivacyBudget(2.0, 1e-3), UNIT),
                                      fdp_cox_sigma(50, PrivacyBudget(2.0, 1e-3), UNIT)]
    res = run_cdp_cox(data[0], PrivacyBudget(2.0, 1e-3), SgdParams(7, 0.5, UNIT), 0)
    assert res.sigmas[0, 0] == cdp_cox_sigma(300, PrivacyBudget(2.0, 1e-3), 7, UNIT)


def test_identical_servers_match_single_server():
    data = simulate(SPEC, 600, 4)
    single = _fdp([data], 6, mult=0.0)
    double = _fdp([data, data], 6, mult=0.0)
    np.testing.assert_allclose(double.trajectory, single.trajectory, atol=1e-14)


def test_interactive_single_server_equals_central():
    data = simulate(SPEC, 500, 5)
    params = SgdParams(9, 0.5, UNIT)
    budget = PrivacyBudget(1.5, 1e-3)
    cfg = FederationConfig((500,), (budget,), 9, 3)
    a = run_fdp_cox_interactive(cfg, make_servers(cfg, [data]), params, 11)
    b = run_cdp_cox(data, budget, params, 11)
    np.testing.assert_array_equal(a.trajectory, b.trajectory)


def test_noise_only_first_step_is_projected_noise():
    data = Dataset(np.linspace(0.1, 0.9, 50), np.zeros(50, dtype=int), np.zeros((50, 3)))
    res = run_cdp_cox(data, PrivacyBudget(0.5, 1e-3), SgdParams(1, 0.5, UNIT), 8)
    noise = res.transcript.messages[0].payload
    np.testing.assert_allclose(res.beta_hat, project_ball(0.5 * noise, 1.0))
    assert np.linalg.norm(res.beta_hat) <= 1.0 + 1e-15


def test_zero_noise_is_plain_projected_ascent():
    data = simulate(SPEC, 300, 6)
    res = run_cdp_cox(data, PrivacyBudget(1.0, 1e-3), SgdParams(5, 0.5, UNIT, 0.0), 0)
    beta = np.zeros(3)
    for _ in range(5):
        beta = project_ball(beta + 0.5 * gradient(data, beta), 1.0)
    np.testing.assert_allclose(res.beta_hat, beta, atol=1e-15)
    assert all(s == 0.0 for s in res.transcript.sigmas())


def test_zero_noise_with_many_rounds_reaches_mle():
    # this sample's MLE lies outside the unit ball, so widen the projection radius
    data = simulate(SPEC, 2000, 7)
    mle = _newton_mle(data)
    assert 1.0 < np.linalg.norm(mle) < 2.0
    res = run_cdp_cox(data, PrivacyBudget(1.0, 1e-3), SgdParams(3000, 2.0, ModelBounds(1.0, 2.0), 0.0), 0)
    assert np.linalg.norm(res.beta_hat - mle) < 1e-4


def test_zero_noise_default_rounds_within_0_05_of_mle():
    # n = 5000, K = ceil(6 log n), eta = 0.5
    data = simulate(SPEC, 5000, 8)
    mle = _newton_mle(data)
    res = run_cdp_cox(data, PrivacyBudget(1.0, 1e-3), SgdParams(math.ceil(6 * math.log(5000)), 0.5, UNIT, 0.0), 0)
    assert np.linalg.norm(res.beta_hat - mle) < 0.05


def test_zero_noise_batched_mse_within_mle_envelope():
    # envelope C d^2 / n, C fitted from the MLE's squared error on independent data
    spec0 = CoxModelSpec((0.0, 0.0, 0.0))
    n, d, reps = 5000, 3, 50
    c_fit = np.mean([np.sum(_newton_mle(simulate(spec0, n, 1000 + r)) ** 2) for r in range(reps)]) * n / d**2
    errs = [np.sum(_fdp([simulate(spec0, n, r)], 100, mult=0.0).beta_hat ** 2) for r in range(reps)]
    assert np.mean(errs) < 3.0 * c_fit * d**2 / n


def test_fit_private_cox_dispatch():
    data = simulate(SPEC, 200, 9)
    with pytest.raises(ValueError):
        fit_private_cox("central", [data], [PrivacyBudget(1, 1e-3)], SgdParams(3))
    with pytest.raises(ValueError):
        fit_private_cox("cdp", [data, data], [PrivacyBudget(1, 1e-3)] * 2, SgdParams(3))


def test_result_json_round_trip():
    import json

    res = run_cdp_cox(simulate(SPEC, 200, 9), PrivacyBudget(1, 1e-3), SgdParams(3), 1)
    back = json.loads(res.to_json())
    assert back["beta_hat"] == res.beta_hat.tolist() and len(back["trajectory"]) == 4


def test_estimator_api():
    data = simulate(SPEC, 600, 10)
    y = np.column_stack([data.time, data.event])
    est = PrivateCoxPH(epsilon=5.0, random_state=0).fit(data.covariates, y)
    assert est.coef_.shape == (3,)
    assert est.predict(data.covariates[:4]).shape == (4,)
    assert np.isfinite(est.score(data.covariates, y))
    again = PrivateCoxPH(**est.get_params()).fit(data.covariates, y)
    np.testing.assert_array_equal(again.coef_, est.coef_)
    groups = np.arange(600) % 3
    fed = PrivateCoxPH(algorithm="fdp", epsilon=5.0, random_state=0).fit(data.covariates, y, groups=groups)
    assert fed.weights_.shape == (3,) and fed.server_labels_ == [0, 1, 2]
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 2)))


def test_estimator_rejects_out_of_bound_covariates():
    X = np.array([[2.0, 0.0], [0.1, 0.1]])
    with pytest.raises(ValueError):
        PrivateCoxPH().fit(X, (np.array([0.2, 0.5]), np.array([1, 0])))


def test_estimator_accepts_structured_y():
    data = simulate(SPEC, 200, 11)
    y = np.zeros(200, dtype=[("event", bool), ("time", float)])
    y["event"], y["time"] = data.event.astype(bool), data.time
    est = PrivateCoxPH(n_rounds=3, random_state=1).fit(data.covariates, y)
    ref = PrivateCoxPH(n_rounds=3, random_state=1).fit(data.covariates, (data.time, data.event))
    np.testing.assert_array_equal(est.coef_, ref.coef_)
