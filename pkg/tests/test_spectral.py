import numpy as np
import pytest

import rahtp
from rahtp import oracle
from rahtp.kernels import gram_levels
from rahtp.spectral import (ApproxConfig, CallableOperator, DenseOperator,
                            SeriesDivergence, apply_series, eigen_bound,
                            series_coefficients)

from _helpers import random_cloud


def test_coefficients_frozen_values():
    assert series_coefficients("inv", 5).tolist() == [1.0] * 6
    assert series_coefficients("invsqrt", 3).tolist() == [1.0, 0.5, 0.375, 0.3125]
    assert series_coefficients("sqrt", 3).tolist() == [1.0, -0.5, -0.125, -0.0625]


def test_coefficients_cache_is_immutable():
    b = series_coefficients("inv", 4)
    with pytest.raises(ValueError):
        b[0] = 2.0


def test_unknown_function_rejected():
    with pytest.raises(ValueError):
        series_coefficients("exp", 4)


def test_inverse_series_diag_example_exact():
    # X = diag(2,4), tau = 1/4: geometric sums over (1 - x/4)
    # x=2: 0.25 * (1 + .5 + .25 + .125) = 0.46875;  x=4: exact after k=1
    op = DenseOperator(np.diag([2.0, 4.0]))
    out = apply_series(op, np.ones((2, 1)), "inv",
                       ApproxConfig(order=3, step=0.25))
    assert out[:, 0].tolist() == [0.46875, 0.25]


def test_series_converges_to_matrix_functions():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((6, 6))
    mat = b @ b.T + 0.5 * np.eye(6)
    v = rng.standard_normal((6, 2))
    cfg = ApproxConfig(order=600, tolerance=1e-15)
    lam = np.linalg.eigvalsh(mat).max() * 1.01
    for h in ("inv", "invsqrt", "sqrt"):
        ref = oracle.matfun_exact(mat, h) @ v
        out = apply_series(DenseOperator(mat), v, h, cfg, lam_max=lam)
        assert np.abs(out - ref).max() < 1e-9, h


def test_eigen_bound_gershgorin_identity():
    assert eigen_bound(DenseOperator(np.eye(4))) == 1.0


def test_eigen_bound_power_iteration_diag():
    bound = eigen_bound(DenseOperator(np.diag([2.0, 4.0])), "power_iteration")
    assert 4.0 <= bound <= 4.2


def test_power_iteration_deterministic():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((8, 8))
    mat = b @ b.T
    op = DenseOperator(mat)
    b1 = eigen_bound(op, "power_iteration")
    b2 = eigen_bound(op, "power_iteration")
    assert b1 == b2
    assert b1 >= np.linalg.eigvalsh(mat).max()


def test_gershgorin_refused_for_matrix_free():
    op = CallableOperator(lambda x: x, 3)
    with pytest.raises(ValueError):
        eigen_bound(op, "gershgorin")


def test_error_halves_when_order_doubles():
    # box-order Grams are diagonal with occupancy-count entries, so the
    # series contracts by (1 - w_min/bound) per term and doubling the order
    # at least halves the error on any not-yet-converged level
    cl = random_cloud(5, 200, 3)
    h = rahtp.build_hierarchy(cl, 1)
    grams = gram_levels(h)
    rng = np.random.default_rng(2)
    checked = 0
    for g in grams[:-1]:
        dense = g.to_csr().toarray()
        w = dense @ rng.standard_normal((dense.shape[0], 1))
        ref = oracle.matfun_exact(dense, "inv") @ w
        lam = g.gershgorin()
        errs = [np.abs(apply_series(g, w, "inv", ApproxConfig(order=k),
                                    lam_max=lam) - ref).max()
                for k in (8, 16, 32)]
        if errs[0] < 1e-12:
            continue
        assert errs[1] <= errs[0] / 2
        assert errs[2] <= errs[1] / 2
        checked += 1
    assert checked >= 1


def test_divergence_guard_raises():
    op = DenseOperator(np.diag([2.0, 4.0]))
    with pytest.raises(SeriesDivergence):
        apply_series(op, np.ones((2, 1)), "inv",
                     ApproxConfig(order=32), lam_max=0.1)


def test_zero_bound_semantics():
    op = DenseOperator(np.zeros((2, 2)))
    z = np.zeros((2, 1))
    v = np.ones((2, 1))
    cfg = ApproxConfig(order=4)
    assert np.array_equal(apply_series(op, z, "inv", cfg, lam_max=0.0), z)
    assert np.array_equal(apply_series(op, v, "sqrt", cfg, lam_max=0.0), z)
    with pytest.raises(SeriesDivergence):
        apply_series(op, v, "inv", cfg, lam_max=0.0)


def test_tolerance_early_stop_matches_full_run():
    rng = np.random.default_rng(3)
    b = rng.standard_normal((5, 5))
    mat = b @ b.T + 2.0 * np.eye(5)
    v = rng.standard_normal((5, 1))
    lam = np.linalg.eigvalsh(mat).max() * 1.01
    full = apply_series(DenseOperator(mat), v, "invsqrt",
                        ApproxConfig(order=2000), lam_max=lam)
    early = apply_series(DenseOperator(mat), v, "invsqrt",
                         ApproxConfig(order=2000, tolerance=1e-14), lam_max=lam)
    assert np.abs(full - early).max() < 1e-10


def test_identity_returning_operator_is_not_corrupted():
    # an operator that hands back its input array must not be clobbered by
    # the in-place update loop
    op = CallableOperator(lambda x: x, 3)
    v = np.ones((3, 1))
    out = apply_series(op, v, "inv", ApproxConfig(order=200), lam_max=1.0)
    assert np.abs(out - 1.0).max() < 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        ApproxConfig(order=-1)
    with pytest.raises(ValueError):
        ApproxConfig(step=0.0)
    with pytest.raises(ValueError):
        ApproxConfig(bound_method="exact")
