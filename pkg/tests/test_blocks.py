import math

import numpy as np
import pytest

from limitload.blocks import (AdmissibleBlock, BlockOps, ball_block,
                              deviatoric_ball_block, free_block,
                              interval_block, mandel_size, trace_direction,
                              zero_block)


def test_kind_validation():
    with pytest.raises(ValueError):
        AdmissibleBlock(0, 1, "TRIANGLE")
    with pytest.raises(ValueError):
        ball_block(0, 1, 0.0)
    with pytest.raises(ValueError):
        ball_block(2, 2, 1.0)
    with pytest.raises(ValueError):
        interval_block(0, 1, 0.5, 2.0)       # 0 not inside
    with pytest.raises(ValueError):
        deviatoric_ball_block(0, 1.0, dim=4)
    with pytest.raises(ValueError):
        AdmissibleBlock(0, 2, "DEVIATORIC_BALL", gamma=1.0, dim=2)


def test_split_roles():
    assert ball_block(0, 1, 1.0).split_role == "A"
    assert interval_block(0, 1, -1, 1).split_role == "A"
    assert free_block(0, 1).split_role == "C"
    assert zero_block(0, 1).split_role == "C"
    assert deviatoric_ball_block(0, 1.0).split_role == "A+C"
    assert not deviatoric_ball_block(0, 1.0).is_bounded
    assert zero_block(0, 1).is_bounded


def test_mandel_helpers():
    assert mandel_size(2) == 3 and mandel_size(3) == 6
    t2 = trace_direction(2)
    assert np.allclose(t2, [1 / math.sqrt(2), 1 / math.sqrt(2), 0.0])
    assert abs(np.linalg.norm(trace_direction(3)) - 1.0) < 1e-15


def _ops(blocks, w):
    return BlockOps(tuple(blocks), np.asarray(w, float))


def test_ball_projection_radial_clamp():
    ops = _ops([ball_block(0, 2, 1.0)], [1.0, 1.0])
    z = np.array([3.0, 4.0])
    p = ops.project_set(z)
    assert np.allclose(p, z / 5.0)
    inside = np.array([0.1, -0.2])
    assert np.allclose(ops.project_set(inside), inside)


def test_interval_projection_and_support():
    ops = _ops([interval_block(0, 2, -0.5, 2.0)], [1.0, 3.0])
    assert np.allclose(ops.project_set(np.array([5.0, -1.0])), [2.0, -0.5])
    g = np.array([1.0, -1.0])
    # 1*(2*1) + 3*(-0.5*-1)
    assert ops.support_bounded(g) == pytest.approx(2.0 + 1.5)


def test_deviatoric_projection_keeps_trace():
    ops = _ops([deviatoric_ball_block(0, 1.0, dim=2)], np.ones(3))
    z = np.array([5.0, 1.0, 2.0])          # trace part 3 per diagonal slot
    p = ops.project_set(z)
    t = trace_direction(2)
    assert float(p @ t) == pytest.approx(float(z @ t))
    dev = p - float(p @ t) * t
    assert np.linalg.norm(dev) == pytest.approx(1.0)
    # inside the deviator ball: untouched
    z2 = np.array([1.0, 1.0, 0.3])
    assert np.allclose(ops.project_set(z2), z2)


def test_projection_idempotent_random():
    rng = np.random.default_rng(7)
    blocks = [ball_block(0, 2, 0.7), deviatoric_ball_block(2, 1.3, dim=2),
              interval_block(5, 7, -1.0, 0.5), free_block(7, 9),
              zero_block(9, 10)]
    w = np.concatenate([[2.0, 2.0], [0.5] * 3, [1.0, 3.0], [1.0, 1.0], [4.0]])
    ops = _ops(blocks, w)
    for _ in range(25):
        z = 3.0 * rng.standard_normal(10)
        p = ops.project_set(z)
        assert np.allclose(ops.project_set(p), p, atol=1e-14)
        # projection never increases the distance to an admissible point
        q = ops.project_set(rng.standard_normal(10))
        assert np.linalg.norm(p - q) <= np.linalg.norm(z - q) + 1e-12


def test_cone_projection_and_violation():
    blocks = [ball_block(0, 1, 1.0), free_block(1, 3),
              deviatoric_ball_block(3, 1.0, dim=2)]
    w = np.array([1.0, 2.0, 2.0, 0.5, 0.5, 0.5])
    ops = _ops(blocks, w)
    g = np.array([9.0, 1.0, -1.0, 2.0, 2.0, 7.0])
    pc = ops.cone_project(g)
    assert np.allclose(pc[:1], 0.0)
    assert np.allclose(pc[1:3], g[1:3])
    assert np.allclose(pc[3:], [2.0, 2.0, 0.0])   # trace part of (2,2,7)
    expect = 2.0 * (1 + 1) + 0.5 * (2 + 2) ** 2 / 2
    assert ops.cone_violation_sq(g) == pytest.approx(expect)


def test_rho_bounded_sq():
    blocks = [ball_block(0, 2, 2.0), interval_block(2, 3, -0.5, 3.0),
              free_block(3, 4)]
    w = np.array([5.0, 5.0, 2.0, 9.0])
    ops = _ops(blocks, w)
    assert ops.rho_bounded_sq() == pytest.approx(4.0 * 5.0 + 2.0 * 9.0)


def test_cone_basis_columns():
    blocks = [ball_block(0, 1, 1.0), free_block(1, 3),
              deviatoric_ball_block(3, 1.0, dim=2), zero_block(6, 7)]
    w = np.array([1.0, 2.0, 3.0, 0.5, 0.5, 0.5, 1.0])
    C, w_c, labels = _ops(blocks, w).cone_basis()
    assert C.shape == (7, 3)
    assert np.allclose(np.linalg.norm(C, axis=0), 1.0)
    assert list(w_c) == [2.0, 3.0, 0.5]
    assert [b for b, _ in labels] == [1, 1, 2]
