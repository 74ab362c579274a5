import math

import numpy as np
import pytest
import scipy.linalg as sla

import limitload as ll
from limitload.certificates import majorant_value
from limitload.dual import finite_support_projector
from limitload.errors import InfSupDegenerateError

import corpus


def test_bounded_support_examples():
    p2 = corpus.ball_free()
    assert ll.eval_J_A(p2, [1.0, 0.1]) == pytest.approx(1.0)
    assert ll.eval_J_A(p2, [0.0, 0.0]) == 0.0


def test_bounded_support_equals_support_on_finite_domain():
    rng = np.random.default_rng(21)
    for prob in (corpus.ball_free(), corpus.dev_ball(), corpus.vm_square(2)):
        for y in corpus.finite_support_samples(prob, 10, rng):
            assert ll.eval_J_A(prob, y) == \
                pytest.approx(ll.eval_support_J(prob, y), rel=1e-12)


def test_cone_distance_examples():
    p2 = corpus.ball_free()
    assert ll.eval_piC_norm(p2, [1.0, 0.1]) == pytest.approx(0.1)
    rng = np.random.default_rng(22)
    for prob in (corpus.ball_free(), corpus.dev_ball()):
        for y in corpus.finite_support_samples(prob, 5, rng):
            assert ll.eval_piC_norm(prob, y) <= 1e-12


def test_cone_distance_is_maximum_value():
    # definition check: sqrt(max over cone x of 2<x,Gy> - ||x||^2)
    prob = corpus.dev_ball()
    rng = np.random.default_rng(23)
    t = np.array([1.0, 1.0, 0.0]) / math.sqrt(2.0)
    for _ in range(5):
        y = rng.standard_normal(3)
        g = prob.gy(y)
        best = max(2.0 * c * float(t @ g) - c * c
                   for c in np.linspace(-10, 10, 20001))
        assert math.sqrt(max(best, 0.0)) == \
            pytest.approx(ll.eval_piC_norm(prob, y), abs=1e-3)


def test_operator_norm_examples():
    assert ll.estimate_norm_a(corpus.ball_1d()) == pytest.approx(1.0)
    assert ll.estimate_norm_a(corpus.ball_free()) == pytest.approx(1.0)
    assert ll.estimate_norm_a(corpus.diag_balls()) == \
        pytest.approx(3.0, rel=1e-7)


def test_operator_norm_with_metrics():
    p = corpus.ball_1d_scaled()
    # sup |x W G y| / (sqrt(W)|x| sqrt(M)|y|) = 2*0.5/(sqrt(0.5)*2)
    expect = (0.5 * 2.0) / (math.sqrt(0.5) * 2.0)
    assert ll.estimate_norm_a(p) == pytest.approx(expect, rel=1e-7)


def test_load_dual_norm_examples():
    assert ll.estimate_norm_L_dual(corpus.ball_1d()) == pytest.approx(1.0)
    assert ll.estimate_norm_L_dual(corpus.ball_free()) == pytest.approx(1.0)
    assert ll.estimate_norm_L_dual(corpus.metric_scaled()) == \
        pytest.approx(1.0)


def test_stability_constant_examples():
    assert ll.estimate_C_star_discrete(corpus.ball_free()) == \
        pytest.approx(1.0)
    G = [[1.0, 0.0], [0.0, 0.5]]
    p = ll.DiscreteSaddleProblem(G, [1.0, 0.0],
                                 blocks=[ll.ball_block(0, 1, 1.0),
                                         ll.free_block(1, 2)])
    assert ll.estimate_C_star_discrete(p) == pytest.approx(2.0)


def test_stability_constant_degenerate_cases():
    with pytest.raises(InfSupDegenerateError):
        ll.estimate_C_star_discrete(corpus.ball_1d())      # no cone at all
    p = ll.DiscreteSaddleProblem([[1.0, 0.0], [0.0, 0.0]], [1.0, 0.0],
                                 blocks=[ll.ball_block(0, 1, 1.0),
                                         ll.free_block(1, 2)])
    with pytest.raises(InfSupDegenerateError):
        ll.estimate_C_star_discrete(p)                     # only a dead cone


def test_stability_constant_skips_quotient_directions():
    # the padded dead direction must not drag the constant to zero
    assert ll.estimate_C_star_discrete(corpus.ball_free_padded()) == \
        pytest.approx(1.0)


def test_rho_bound_value():
    assert ll.rho_A(corpus.ball_free()) == pytest.approx(1.0)
    prob = corpus.vm_square(2, gamma=1.5)
    assert ll.rho_A(prob) == pytest.approx(1.5)   # gamma sqrt(total area)


def test_majorant_examples():
    p2 = corpus.ball_free()
    cert = ll.compute_majorant(p2, [1.0, 0.1], 1.0, rho_A_value=1.0)
    assert cert.bound == pytest.approx(11.0 / 9.0)
    assert cert.admissible
    cert0 = ll.compute_majorant(p2, [1.0, 0.0], 1.0)
    assert cert0.bound == pytest.approx(1.0)
    assert cert0.piC_norm <= 1e-14
    bad = ll.compute_majorant(p2, [1.0, 5.0], 1.0)
    assert not bad.admissible and bad.bound is None
    assert bad.denominator <= 0.0


def test_majorant_guard_on_zero_constant():
    with pytest.raises(ValueError):
        ll.compute_majorant(corpus.ball_free(), [1.0, 0.5], 0.0)
    cert = ll.compute_majorant(corpus.ball_1d(), [1.0], 0.0,
                               provenance="none (no cone directions)")
    assert cert.bound == pytest.approx(2.0)


def test_majorant_reduces_when_cone_distance_vanishes():
    rng = np.random.default_rng(24)
    for prob in (corpus.ball_free(), corpus.dev_ball()):
        c_star = ll.estimate_C_star_discrete(prob)
        for y in corpus.finite_support_samples(prob, 8, rng):
            if float(prob.load @ y) <= 0.1:
                continue
            cert = ll.compute_majorant(prob, y, c_star)
            expect = ll.eval_J_A(prob, y) / float(prob.load @ y)
            assert cert.bound == pytest.approx(expect, rel=1e-9)


def test_bounded_support_inequalities():
    rng = np.random.default_rng(25)
    for prob in (corpus.ball_free(), corpus.diag_balls(), corpus.dev_ball(),
                 corpus.vm_square(2)):
        rho = ll.rho_A(prob)
        na = ll.estimate_norm_a(prob)
        for _ in range(100):
            y1 = rng.standard_normal(prob.n_y)
            y2 = rng.standard_normal(prob.n_y)
            d = ll.eval_J_A(prob, y1 - y2)
            assert abs(ll.eval_J_A(prob, y1) - ll.eval_J_A(prob, y2)) \
                <= d + 1e-12
            assert d <= rho * na * prob.y_norm(y1 - y2) * (1 + 1e-10)


def test_cone_distance_bounds_distance_to_finite_domain():
    rng = np.random.default_rng(26)
    for prob in (corpus.ball_free(), corpus.ball_free_padded(),
                 corpus.dev_ball(), corpus.mixed_int_free()):
        c_star = ll.estimate_C_star_discrete(prob)
        N, gram_cho, MN, _, _ = finite_support_projector(prob)
        for _ in range(10):
            y = rng.standard_normal(prob.n_y)
            # brute projection onto the finite-support subspace
            z = sla.cho_solve(gram_cho, MN.T @ y)
            dist = prob.y_norm(y - N @ z)
            assert dist <= c_star * ll.eval_piC_norm(prob, y) + 1e-8


def test_majorant_dominates_bisection():
    rng = np.random.default_rng(27)
    for prob in (corpus.ball_free(), corpus.dev_ball(),
                 corpus.mixed_int_free()):
        tol_lambda = 1e-6
        zeta = ll.bisect_zeta(prob, tol_lambda=tol_lambda)
        c_star = ll.estimate_C_star_discrete(prob)
        recs = ll.run_alpha_continuation(prob, ll.default_schedule(prob))
        candidates = [recs[-1].y_alpha]
        candidates += corpus.finite_support_samples(prob, 5, rng)
        for y in candidates:
            if float(prob.load @ y) <= 0:
                continue
            cert = ll.compute_majorant(prob, y, c_star)
            if cert.admissible:
                assert cert.bound >= zeta - tol_lambda


def test_simple_bound_consistency():
    rng = np.random.default_rng(28)
    for prob in (corpus.ball_free(), corpus.dev_ball(), corpus.vm_square(2)):
        tol_lambda = 1e-5
        zeta = ll.bisect_zeta(prob, tol_lambda=tol_lambda)
        for y in corpus.finite_support_samples(prob, 10, rng):
            Ly = float(prob.load @ y)
            if Ly <= 1e-6:
                continue
            ratio = ll.eval_support_J(prob, y) / Ly
            assert ratio >= zeta - tol_lambda


def test_certificate_dict_and_revalidation():
    prob = corpus.ball_free()
    cert = ll.compute_majorant(prob, [1.0, 0.05],
                               ll.estimate_C_star_discrete(prob))
    d = cert.to_dict()
    _, bound = majorant_value(d["J_A_value"], d["piC_norm"], d["C_star"],
                              d["rho_A"], d["norm_a"], d["norm_L_dual"],
                              d["L_of_y"])
    assert bound == d["bound"]
    assert d["split_exact"] is True
    assert d["C_star_provenance"] == "discrete"


def test_coercivity_minorant():
    rng = np.random.default_rng(29)
    for prob in (corpus.ball_free(), corpus.dev_ball()):
        for lam in (0.0, 1.0, 3.0):
            slope, offset = ll.coercivity_minorant(prob, lam)
            assert slope > 0
            for _ in range(20):
                x = prob.ops.project_set(5.0 * rng.standard_normal(prob.n_x))
                assert ll.eval_Phi_lambda(prob, x, lam) >= \
                    slope * prob.x_norm(x) - offset - 1e-10
