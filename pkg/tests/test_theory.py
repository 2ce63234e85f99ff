import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdm.model import closed_form_model, generate_trajectory
from qdm.theory import (LinearFit, check_lemma_bounds, check_theorem1_growth, closed_form_rollout,
                        construct_trig_qdm, fit_linear_map, linear_map_spectrum, run_theory_suite, spiral_check,
                        trig_coefficients)

TH = 0.04 * np.pi
REFERENCE_FIT = (0.12754, 0.9996, 0.9973)


def reference_trajectory(steps=200):
    traj = generate_trajectory(closed_form_model(-TH, TH, 0.0, 0.5), steps)
    return np.stack([traj.memory[:, 0, 0], traj.data[:, 0, 0]], axis=1)


def test_fit_recovers_exact_linear_map():
    true = LinearFit(0.13, 0.999, 0.99)
    z = np.empty((120, 2))
    z[0] = (0.1, 0.6)
    for t in range(119):
        z[t + 1] = true.matrix @ z[t]
    fit = fit_linear_map(z)
    # R, beta and alpha are identifiable; the triple is only fixed up to b cos a, b g sin a
    assert np.max(np.abs(fit.matrix - true.matrix)) < 1e-8
    assert fit.beta == pytest.approx(true.beta, abs=1e-8)
    assert fit.alpha == pytest.approx(true.alpha, abs=1e-8)
    start_at_truth = fit_linear_map(z, initial_guess=(0.13, 0.999, 0.99))
    assert (start_at_truth.a, start_at_truth.b, start_at_truth.gamma) == pytest.approx((0.13, 0.999, 0.99), abs=1e-8)


def test_fit_on_reference_trajectory():
    fit = fit_linear_map(reference_trajectory())
    assert abs(fit.a - REFERENCE_FIT[0]) <= 0.01
    assert abs(fit.b - REFERENCE_FIT[1]) <= 0.002
    assert abs(fit.gamma - REFERENCE_FIT[2]) <= 0.005
    assert all(abs(l) < 1 for l in fit.eigenvalues)


def test_fit_rejects_bad_trajectories():
    with pytest.raises(ValueError):
        fit_linear_map(np.zeros((60, 2)))
    with pytest.raises(ValueError):
        fit_linear_map(reference_trajectory(20))
    with pytest.raises(ValueError):
        fit_linear_map(reference_trajectory(), objective="global")


def test_rollout_objective_also_stable():
    fit = fit_linear_map(reference_trajectory(), objective="rollout")
    assert linear_map_spectrum(fit).classification == "stable focus"


def test_spectrum_examples():
    sp = linear_map_spectrum(LinearFit(*REFERENCE_FIT))
    assert sp.modulus == pytest.approx(0.99956, abs=5e-6)
    assert sp.classification == "stable focus"
    for a in (0.0, 0.3, 2.0):
        assert linear_map_spectrum(LinearFit(a, 1.0, 1.0)).classification == "center"
    fit = LinearFit(*REFERENCE_FIT)
    scaled = linear_map_spectrum(fit, mu=1 / fit.beta)
    assert scaled.modulus == pytest.approx(1.0, abs=1e-14) and scaled.classification == "center"
    assert linear_map_spectrum(fit, mu=1.01).classification == "unstable focus"


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 2), st.floats(0.01, 1))
def test_factorization_exact(a, b, g):
    fit = LinearFit(a, b, g)
    assert np.max(np.abs(fit.matrix - fit.beta * fit.rotation)) < 1e-14
    lam = fit.eigenvalues[0]
    assert abs(lam) == pytest.approx(fit.beta, rel=1e-12)


def test_spiral_examples():
    fit = LinearFit(*REFERENCE_FIT)
    assert spiral_check(fit, (0.0, 0.5), 100).linear_deviation < 1e-12
    unit = LinearFit(0.2, 1.0, 1.0)  # beta = 1: constant norm
    assert unit.beta == pytest.approx(1.0)
    assert spiral_check(unit, (0.3, 0.4), 100).linear_deviation < 1e-12


def test_spiral_on_qdm_trajectory():
    z = reference_trajectory()
    fit = fit_linear_map(z)
    rep = spiral_check(fit, z[0], 200, z)
    # the average per-step contraction matches beta; single steps wobble by a few 1e-3
    assert rep.qdm_mean_ratio_deviation < 1e-3
    assert rep.qdm_ratio_deviation < 1e-2


def test_mu_scaling_changes_type():
    base = closed_form_rollout(-TH, TH, 0.0, 0.5, 300)
    grown = closed_form_rollout(-TH, TH, 0.0, 0.3, 60, mu=1.01)
    assert np.linalg.norm(base[-1]) < 0.5
    assert np.linalg.norm(grown[-1]) > np.linalg.norm(grown[0])


def test_lemma_examples():
    r = {c.name: c for c in check_lemma_bounds(0.5 - 1e-9, 0.04)}
    assert r["lemma1_stated"].bound == pytest.approx(0.0314159, abs=1e-7)
    # direct evaluation of A (1 - sqrt(1 - A^2)) |sin(pi delta)| gives 0.0083957; reference digits say 0.0083952
    assert r["lemma1_tight"].bound == pytest.approx(0.0083952, abs=1e-6)
    assert r["lemma1_tight"].bound == pytest.approx(0.5 * (1 - np.sqrt(0.75)) * np.sin(TH), abs=1e-9)
    assert r["lemma1_tight"].passed and r["lemma1_stated"].passed and r["lemma2"].passed
    assert r["lemma1_tight"].observed <= r["lemma1_tight"].bound
    for A, D in ((0.3, 0.0), (0.0, 0.04)):
        assert check_lemma_bounds(A, D)[0].observed == pytest.approx(0.0, abs=1e-16)


def test_lemma_preconditions_reported_not_asserted():
    r = check_lemma_bounds(0.8, 0.04)[0]
    assert r.details["preconditions"] is False


def test_theorem1_examples():
    err, env, res = check_theorem1_growth(0.4, 0.04, 100)
    assert res.passed and np.all(err <= env + 1e-15)
    assert err[0] == 0.0
    assert np.all(np.diff(env) >= 0)


def test_trig_coefficients_single_mode():
    t = np.arange(50)
    spec = trig_coefficients(0.4 * np.cos(TH * t), 3)
    assert spec.alpha[0] == pytest.approx(0.4, abs=1e-3)
    assert np.max(np.abs(spec.alpha[1:])) < 1e-12 and np.max(np.abs(spec.beta)) < 1e-12
    assert spec.omegas[0] == pytest.approx(TH)
    with pytest.raises(ValueError):
        trig_coefficients(np.ones(6), 3)


def test_construct_constant():
    q = construct_trig_qdm(lambda t: 0.3 + 0 * t, 4)
    dc = q.mode == 0
    assert dc.sum() == 1 and np.all(q.theta[dc] == 0) and q.x0[dc][0] == pytest.approx(0.3)
    assert q.quadrature_error < 1e-14 and q.total_error < 1e-14


def test_construct_ramp_converges():
    errs = [construct_trig_qdm(lambda t: t - 0.5, J).quadrature_error for J in (2, 4, 8, 16)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_construct_splits_large_modes():
    q = construct_trig_qdm(lambda t: 1.4 * np.cos(2 * np.pi * t), 2, steps=200, extension=0.0)
    for j in set(q.mode) - {0}:
        amps = np.hypot(q.m0[q.mode == j], q.x0[q.mode == j])
        assert np.all(amps < 0.5)
    assert q.check().passed


@pytest.mark.parametrize("name", ["ramp", "gaussian_bump", "cubic"])
def test_construct_triangle_inequality(name):
    from qdm.theory import default_test_functions
    q = construct_trig_qdm(default_test_functions()[name], 8)
    r = q.check()
    assert r.passed
    assert q.total_error <= q.quadrature_error + q.rollout_error + 1e-12


def test_theory_suite_passes_quickly():
    t0 = time.perf_counter()
    results = run_theory_suite()
    assert time.perf_counter() - t0 < 120
    assert len(results) == 10
    failed = [r.name for r in results if not r.passed]
    assert failed == []
    for r in results:
        d = r.to_dict()
        assert set(d) >= {"name", "bound", "observed", "pass"}
