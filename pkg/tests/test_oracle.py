import dataclasses

import numpy as np
import pytest

from allocshift import (NumericalError, check_dr_submodular, chi_square_div,
                        enumerate_problems, enumeration_size, exact_gradient,
                        exact_hessian, exact_objective, oracle_maximize)
from allocshift.losses import MisclassRate
from allocshift.oracle import _project_ball_simplex, exact_objective_batch
from conftest import random_binary_setup, random_regression_setup, tiny_setup

from conftest import binary_specs, regression_specs


def tiny_enum(labels, scores, draw_size, losses=None):
    """Enumeration for a small pool; optionally overwrite the per-multiset losses."""
    _, pool, predictor = tiny_setup("p", labels, scores)
    enum = enumerate_problems(pool, predictor, MisclassRate(), draw_size)
    if losses is not None:
        enum = dataclasses.replace(enum, losses=np.asarray(losses, dtype=np.float64))
    return enum


def test_enumeration_counts_and_coeffs():
    enum = tiny_enum([0, 1], [0.2, 0.8], 2)
    assert enumeration_size(2, 2) == 3
    assert enum.counts.tolist() == [[2, 0], [1, 1], [0, 2]]
    assert enum.coeffs.tolist() == [1.0, 2.0, 1.0]
    # three individuals, two draws: C(4, 2) = 6 multisets, coeff 2 on mixed rows
    enum3 = tiny_enum([0, 1, 0], [0.2, 0.8, 0.4], 2)
    assert enum3.counts.shape == (6, 3)
    assert sorted(enum3.coeffs.tolist()) == [1.0, 1.0, 1.0, 2.0, 2.0, 2.0]
    assert enum3.coeffs.sum() == 2**2 + 5  # sum of multinomials = m^n


def test_enumeration_cap_names_size():
    _, pool, predictor = tiny_setup("p", [0, 1, 0, 1], [0.2, 0.8, 0.4, 0.6])
    with pytest.raises(NumericalError, match=r"C\(4\+3-1, 3\) = 20"):
        enumerate_problems(pool, predictor, MisclassRate(), 3, cap=10)


def test_exact_objective_frozen():
    enum = tiny_enum([0, 1], [0.2, 0.8], 2, losses=[-1.0, -0.5, 0.0])
    assert exact_objective(enum, np.array([0.5, 0.5])) == pytest.approx(-0.5, abs=1e-15)
    # vertex: only the pure-A multiset survives
    assert exact_objective(enum, np.array([1.0, 0.0])) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError):
        exact_objective(enum, np.array([0.5, 0.3, 0.2]))


def test_exact_objective_batch_matches_loop(rng):
    enum = tiny_enum([0, 1, 1], [0.2, 0.8, 0.6], 3)
    qs = rng.dirichlet(np.ones(3), size=50)
    batch = exact_objective_batch(enum, qs)
    looped = np.array([exact_objective(enum, q) for q in qs])
    assert np.allclose(batch, looped, atol=1e-14)


def central_diff_gradient(enum, q, h=1e-6):
    g = np.zeros_like(q)
    for a in range(len(q)):
        e = np.zeros_like(q)
        e[a] = h
        g[a] = (exact_objective(enum, q + e) - exact_objective(enum, q - e)) / (2 * h)
    return g


def test_exact_gradient_matches_finite_differences(rng):
    for labels, scores, n in ([[0, 1], [0.3, 0.7], 2],
                              [[0, 1, 1], [0.2, 0.8, 0.6], 3]):
        enum = tiny_enum(labels, scores, n, losses=rng.uniform(-1, 0, enum_size(len(labels), n)))
        for _ in range(10):
            q = rng.dirichlet(np.ones(len(labels)))
            q = 0.9 * q + 0.1 / len(labels)  # keep away from the boundary
            assert np.allclose(exact_gradient(enum, q),
                               central_diff_gradient(enum, q), atol=1e-6)


def enum_size(m, n):
    return enumeration_size(m, n)


def test_exact_gradient_boundary_limit():
    # F = -qA^2 - qA qB with qA = 0: dF/dqA -> -qB, dF/dqB -> 0
    enum = tiny_enum([0, 1], [0.2, 0.8], 2, losses=[-1.0, -0.5, 0.0])
    g = exact_gradient(enum, np.array([0.0, 1.0]))
    assert g == pytest.approx([-1.0, 0.0], abs=1e-12)
    with pytest.raises(ValueError):
        exact_gradient(enum, np.array([-0.1, 1.1]))


def test_exact_hessian_frozen():
    # F(q) = -qA^2 - qA qB: d2/dA2 = -2, d2/dAdB = -1, d2/dB2 = 0
    enum = tiny_enum([0, 1], [0.2, 0.8], 2, losses=[-1.0, -0.5, 0.0])
    hess = exact_hessian(enum, np.array([0.3, 0.7]))
    assert np.allclose(hess, [[-2.0, -1.0], [-1.0, 0.0]], atol=1e-12)
    with pytest.raises(ValueError):
        exact_hessian(enum, np.array([0.0, 1.0]))


def test_exact_hessian_matches_finite_differences(rng):
    enum = tiny_enum([0, 1, 1], [0.2, 0.8, 0.6], 2,
                     losses=rng.uniform(-1, 0, enum_size(3, 2)))
    q = np.array([0.3, 0.45, 0.25])
    hess = exact_hessian(enum, q)
    h = 1e-5
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        fd = (central_diff_gradient(enum, q + e) - central_diff_gradient(enum, q - e)) / (2 * h)
        assert np.allclose(hess[a], fd, atol=1e-4)
    assert np.allclose(hess, hess.T, atol=1e-12)


def test_dr_submodular_on_random_instances(rng):
    for trial in range(12):
        if trial % 2 == 0:
            _, pool, predictor = random_binary_setup(rng, m=4)
            specs = binary_specs(4, 2)
        else:
            _, pool, predictor = random_regression_setup(rng, m=4)
            specs = regression_specs()
        for spec in specs:
            enum = enumerate_problems(pool, predictor, spec, 2)
            for _ in range(5):
                q = rng.dirichlet(np.ones(4)) * 0.9 + 0.025
                assert check_dr_submodular(enum, q), (trial, spec.kind)


def test_project_ball_simplex(rng):
    for _ in range(100):
        m = int(rng.integers(2, 6))
        rho = float(rng.uniform(0.05, 2.0))
        x = rng.normal(size=m)
        p = _project_ball_simplex(x, rho)
        u = np.full(m, 1.0 / m)
        assert abs(p.sum() - 1.0) < 1e-9
        assert (p >= -1e-12).all()
        assert chi_square_div(np.maximum(p, 0) / p.sum(), u) <= rho + 1e-9
        # projecting a feasible point is (nearly) the identity
        again = _project_ball_simplex(p, rho)
        assert np.allclose(again, p, atol=1e-8)


def test_oracle_maximize_beats_dense_grid(rng):
    for m, n in ((2, 3), (3, 2)):
        labels = [int(v) for v in rng.integers(0, 2, m)]
        scores = [float(v) for v in rng.uniform(0.1, 0.9, m)]
        enum = tiny_enum(labels, scores, n, losses=rng.uniform(-1, 0, enum_size(m, n)))
        rho = float(rng.uniform(0.1, 1.0))
        q, val = oracle_maximize(enum, rho, restarts=10)
        assert val == pytest.approx(exact_objective(enum, q), abs=1e-12)
        u = np.full(m, 1.0 / m)
        assert chi_square_div(np.maximum(q, 0) / q.sum(), u) <= rho + 1e-6
        # a dense feasible grid cannot beat the oracle by more than a hair
        ticks = 200
        if m == 2:
            a = np.arange(ticks + 1) / ticks
            pts = np.stack([a, 1 - a], axis=1)
        else:
            pts = np.array([(i / ticks, j / ticks, (ticks - i - j) / ticks)
                            for i in range(ticks + 1) for j in range(ticks + 1 - i)])
        divs = ((pts - u) ** 2 / u).sum(axis=1)
        grid_val = exact_objective_batch(enum, pts[divs <= rho]).max()
        assert val >= grid_val - 1e-6


def test_oracle_rho_zero_is_center():
    enum = tiny_enum([0, 1], [0.2, 0.8], 2, losses=[-1.0, -0.5, 0.0])
    q, val = oracle_maximize(enum, 0.0)
    assert np.allclose(q, [0.5, 0.5])
    assert val == pytest.approx(-0.5, abs=1e-15)
    with pytest.raises(ValueError):
        oracle_maximize(enum, -0.5)


def test_oracle_dominates_extra_starts(rng):
    enum = tiny_enum([0, 1, 1], [0.2, 0.8, 0.6], 2,
                     losses=rng.uniform(-1, 0, enum_size(3, 2)))
    rho = 0.8
    handed = [rng.dirichlet(np.ones(3)) for _ in range(5)]
    _, val = oracle_maximize(enum, rho, restarts=4, extra_starts=handed)
    for q0 in handed:
        q0 = _project_ball_simplex(q0, rho)
        assert val >= exact_objective(enum, q0) - 1e-12
