import math

import numpy as np
import pytest

import limitload as ll
from limitload.certificates import estimate_norm_a
from limitload.errors import ConvergenceError

import corpus


def test_projection_map_examples():
    p1 = corpus.ball_1d()
    assert ll.project_Pi_alpha(p1, 1.0, [1.0]) == pytest.approx([1.0])
    assert ll.project_Pi_alpha(p1, 4.0, [1.0]) == pytest.approx([2.0])
    p2 = corpus.ball_free()
    assert np.allclose(ll.project_Pi_alpha(p2, 3.0, [0.0, 0.0]), 0.0)


def test_projection_map_requires_positive_alpha():
    with pytest.raises(ValueError):
        ll.project_Pi_alpha(corpus.ball_1d(), 0.0, [1.0])


def test_regularized_support_examples():
    p1 = corpus.ball_1d()
    assert ll.eval_J_alpha(p1, 1.0, [1.0]) == pytest.approx(0.5)
    assert ll.eval_J_alpha(p1, 4.0, [1.0]) == pytest.approx(1.5)


def test_regularized_support_deviatoric_point_values():
    # unit deviatoric strain against a unit-threshold deviator ball
    prob = corpus.dev_ball()
    g = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    assert ll.eval_J_alpha(prob, 0.5, g) == pytest.approx(0.25, abs=1e-10)
    assert ll.eval_J_alpha(prob, 2.0, g) == pytest.approx(0.75, abs=1e-10)
    # cross-check by a dense sample of the admissible set: deviator disc
    # (the trace direction pairs to zero against a deviatoric g, and only
    # lowers the quadratic penalty, so the optimum sits at zero trace)
    d1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    d2 = np.array([0.0, 0.0, 1.0])
    th = np.linspace(0.0, 2 * math.pi, 720, endpoint=False)
    rr = np.linspace(0.0, 1.0, 400)
    dirs = np.outer(np.cos(th), d1) + np.outer(np.sin(th), d2)
    gx = prob.gy(g)
    pair = dirs @ gx                       # unit weights on this instance
    for alpha in (0.5, 2.0):
        vals = np.outer(pair, rr) - rr * rr / (2 * alpha)
        best = float(vals.max())
        assert best <= ll.eval_J_alpha(prob, alpha, g) + 1e-9
        assert best >= ll.eval_J_alpha(prob, alpha, g) - 1e-5


def test_gradient_examples_and_finite_differences():
    p1 = corpus.ball_1d()
    assert ll.grad_J_alpha(p1, 1.0, [1.0]) == pytest.approx([1.0])
    assert np.allclose(ll.grad_J_alpha(p1, 2.0, [0.0]), 0.0)
    rng = np.random.default_rng(11)
    for prob in (corpus.ball_1d(), corpus.ball_free(), corpus.vm_square(2),
                 corpus.delamination_square(2)):
        for _ in range(20):
            y = rng.standard_normal(prob.n_y)
            alpha = float(rng.uniform(0.4, 2.5))
            g = ll.grad_J_alpha(prob, alpha, y)
            h = 1e-6
            for k in rng.choice(prob.n_y, size=min(4, prob.n_y),
                                replace=False):
                e = np.zeros(prob.n_y)
                e[k] = h
                fd = (ll.eval_J_alpha(prob, alpha, y + e)
                      - ll.eval_J_alpha(prob, alpha, y - e)) / (2 * h)
                assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_monotonicity_in_alpha_and_bounded_by_support():
    rng = np.random.default_rng(12)
    for prob in (corpus.ball_1d(), corpus.dev_ball(), corpus.mixed_int_free()):
        ys = corpus.finite_support_samples(prob, 20, rng)
        alphas = [0.5, 1.0, 4.0, 32.0, 1e3]
        for y in ys:
            J = ll.eval_support_J(prob, y)
            vals = [ll.eval_J_alpha(prob, a, y) for a in alphas]
            for a, b in zip(vals, vals[1:]):
                assert a <= b + 1e-12
            assert vals[-1] <= J + 1e-12


def test_pointwise_limit_on_finite_domain():
    rng = np.random.default_rng(13)
    for prob in (corpus.ball_1d(), corpus.dev_ball(), corpus.ball_free()):
        for y in corpus.finite_support_samples(prob, 10, rng):
            J = ll.eval_support_J(prob, y)
            Ja = ll.eval_J_alpha(prob, 1e6, y)
            assert Ja <= J + 1e-12
            assert J - Ja <= 1e-4 * max(abs(J), 1e-8)


def test_projection_map_lipschitz():
    rng = np.random.default_rng(14)
    for prob in (corpus.diag_balls(), corpus.dev_ball(), corpus.vm_square(2)):
        na = estimate_norm_a(prob)
        for alpha in (0.5, 3.0, 20.0):
            for _ in range(10):
                y1 = rng.standard_normal(prob.n_y)
                y2 = rng.standard_normal(prob.n_y)
                lhs = prob.x_norm(ll.project_Pi_alpha(prob, alpha, y1)
                                  - ll.project_Pi_alpha(prob, alpha, y2))
                assert lhs <= alpha * na * prob.y_norm(y1 - y2) * (1 + 1e-10)


def test_solve_psi_singleton_slice():
    p1 = corpus.ball_1d()
    rec = ll.solve_psi(p1, 4.0)
    assert rec.psi == pytest.approx(1.5)
    assert rec.lambda_alpha == pytest.approx(2.0)
    assert rec.y_alpha == pytest.approx([1.0])
    assert rec.kkt_residual <= 1e-12
    rec = ll.solve_psi(p1, 100.0)
    assert rec.psi == pytest.approx(1.98)


def test_solve_psi_slice_constraint_exact():
    for prob in (corpus.ball_free(), corpus.metric_scaled(),
                 corpus.vm_square(2)):
        rec = ll.solve_psi(prob, 7.0)
        assert float(prob.load @ rec.y_alpha) == pytest.approx(1.0, rel=1e-12)


def test_solve_psi_weak_duality_diagnostic():
    for prob in (corpus.ball_free(), corpus.dev_ball(), corpus.diag_balls()):
        for alpha in (1.0, 8.0, 64.0):
            rec = ll.solve_psi(prob, alpha)
            slack = rec.kkt_residual * prob.y_norm(rec.y_alpha) + 1e-10
            assert rec.psi <= rec.lambda_alpha + slack


def test_solve_psi_restart_reproducibility():
    rng = np.random.default_rng(15)
    for prob in (corpus.ball_free(), corpus.vm_square(2)):
        rec1 = ll.solve_psi(prob, 16.0)
        y0 = rng.standard_normal(prob.n_y)
        y0 /= float(prob.load @ y0)
        rec2 = ll.solve_psi(prob, 16.0, warm_start=y0)
        assert rec1.psi == pytest.approx(rec2.psi, rel=1e-8)


def test_solve_psi_iteration_cap_raises_with_record():
    prob = corpus.vm_square(2)
    with pytest.raises(ConvergenceError) as exc:
        ll.solve_psi(prob, 50.0, tol=1e-16, max_iter=2,
                     stagnation_window=10**9)
    rec = exc.value.best
    assert rec.alpha == 50.0 and not rec.converged


def test_schedule_validation():
    with pytest.raises(ValueError):
        ll.AlphaSchedule(alpha0=0.0)
    with pytest.raises(ValueError):
        ll.AlphaSchedule(alpha0=1.0, growth=1.0)
    with pytest.raises(ValueError):
        ll.AlphaSchedule(alpha0=1.0, count=0)
    vals = ll.AlphaSchedule(alpha0=2.0, growth=3.0, count=4).values()
    assert vals == [2.0, 6.0, 18.0, 54.0]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_continuation_closed_form_sequence():
    sched = ll.AlphaSchedule(alpha0=1.0, growth=2.0, count=11)
    recs = ll.run_alpha_continuation(corpus.ball_1d(), sched)
    got = [r.psi for r in recs]
    # clamp saturates at alpha >= 2: quadratic branch before, affine after
    expect = [a / 2.0 if a <= 2.0 else 2.0 - 2.0 / a for a in sched.values()]
    assert np.allclose(got, expect, rtol=1e-10)
    assert got[:4] == pytest.approx([0.5, 1.0, 1.5, 1.75])
    assert all(b >= a - 1e-12 for a, b in zip(got, got[1:]))


def test_continuation_reaches_critical_value():
    prob = corpus.ball_free()
    recs = ll.run_alpha_continuation(prob, ll.default_schedule(prob))
    assert all(r.converged for r in recs)
    assert abs(recs[-1].psi - 1.0) <= 1e-3


def test_continuation_delamination_within_percent():
    prob = corpus.delamination_square(4)
    expect = ll.delamination_closed_form(1.0, 1.0, 0.5)
    recs = ll.run_alpha_continuation(prob, ll.default_schedule(prob))
    best = ll.best_lower_bound(recs)
    assert best <= expect + 1e-8
    assert best >= expect * 0.99


def test_continuation_sandwich_and_monotone():
    for prob in (corpus.ball_1d(), corpus.ball_free(), corpus.dev_ball(),
                 corpus.vm_square(2)):
        recs = ll.run_alpha_continuation(prob, ll.default_schedule(prob, count=8))
        psis = [r.psi for r in recs]
        alphas = [r.alpha for r in recs]
        for a, b in zip(psis, psis[1:]):
            assert b >= a - 1e-8
        for i in range(len(recs)):
            for j in range(i + 1, len(recs)):
                assert (alphas[i] / alphas[j]) * psis[j] <= psis[i] + 1e-8


def test_continuation_lower_bound_property():
    for name, prob in (("ball_1d", corpus.ball_1d()),
                       ("ball_free", corpus.ball_free()),
                       ("interval_asym", corpus.interval_asym())):
        lam_star = ll.brute_zeta(prob)
        recs = ll.run_alpha_continuation(prob, ll.default_schedule(prob))
        for r in recs:
            assert r.psi <= lam_star + 1e-6, name


def test_parallel_sweep_matches_serial_values():
    prob = corpus.ball_free()
    sched = ll.AlphaSchedule(alpha0=1.0, growth=4.0, count=6)
    serial = ll.run_alpha_continuation(prob, sched)
    parallel = ll.run_alpha_continuation(prob, sched, parallel=True)
    for a, b in zip(serial, parallel):
        assert a.alpha == b.alpha
        assert a.psi == pytest.approx(b.psi, rel=1e-7, abs=1e-9)


def test_early_stop_on_small_increment():
    sched = ll.AlphaSchedule(alpha0=1.0, growth=2.0, count=20,
                             psi_increment_stop=1e-3)
    recs = ll.run_alpha_continuation(corpus.ball_1d(), sched)
    assert len(recs) < 20


def test_lambda_alpha_diagnostic_tracks_limit():
    prob = corpus.ball_free()
    recs = ll.run_alpha_continuation(prob, ll.default_schedule(prob))
    lams = [r.lambda_alpha for r in recs]
    assert lams[-1] == pytest.approx(1.0, abs=1e-5)
    assert recs[-1].psi <= lams[-1] + 1e-6
