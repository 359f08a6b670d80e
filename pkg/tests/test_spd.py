import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescap import spd
from bayescap.errors import DegenerateInputError, DomainError, ValidationError

from conftest import random_spd


def test_sym_eigen_identity():
    w, Q = spd.sym_eigen(np.eye(3))
    np.testing.assert_allclose(w, [1, 1, 1])
    np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-14)


def test_sym_eigen_2x2_by_hand():
    w, Q = spd.sym_eigen([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(w, [3.0, 1.0], rtol=1e-14)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(np.abs(Q[:, 0]), [s, s], rtol=1e-14)
    np.testing.assert_allclose(abs(Q[0, 1] * Q[1, 1]), 0.5, rtol=1e-14)
    assert Q[0, 1] * Q[1, 1] < 0


def test_sym_eigen_descending_and_reconstructs(rng):
    for _ in range(50):
        A = rng.standard_normal((5, 5))
        A = A + A.T
        w, Q = spd.sym_eigen(A)
        assert np.all(np.diff(w) <= 0)
        assert np.linalg.norm(Q * w @ Q.T - A) <= 1e-10 * np.linalg.norm(A)


def test_sym_eigen_rejects_asymmetric():
    with pytest.raises(ValidationError):
        spd.sym_eigen([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValidationError):
        spd.sym_eigen(np.ones((2, 3)))


def test_spd_function_examples():
    np.testing.assert_allclose(spd.spd_function(np.eye(4), "log"), np.zeros((4, 4)), atol=1e-15)
    np.testing.assert_allclose(spd.spd_function(np.diag([np.e, np.e**2]), "log"), np.diag([1.0, 2.0]), atol=1e-14)
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    R = spd.spd_function(A, "sqrt")
    # eigen-oracle: sqrt(3) on (1,1)/sqrt2, 1 on (1,-1)/sqrt2
    expected = 0.5 * np.array([[np.sqrt(3) + 1, np.sqrt(3) - 1], [np.sqrt(3) - 1, np.sqrt(3) + 1]])
    np.testing.assert_allclose(R, expected, rtol=1e-14)
    np.testing.assert_allclose(R @ R, A, rtol=1e-13)


def test_spd_function_inverse_and_inv_sqrt(rng):
    A = random_spd(rng, 4)
    np.testing.assert_allclose(spd.spd_function(A, "inverse") @ A, np.eye(4), atol=1e-12)
    W = spd.spd_function(A, "inv_sqrt")
    np.testing.assert_allclose(W @ A @ W, np.eye(4), atol=1e-12)


def test_exp_log_round_trip(rng):
    for _ in range(100):
        A = random_spd(rng, 5, cond=1e4)
        B = spd.spd_function(spd.spd_function(A, "log"), "exp")
        assert np.linalg.norm(B - A) <= 1e-8 * np.linalg.norm(A)


def test_exp_accepts_indefinite():
    out = spd.spd_function(np.diag([-1.0, 2.0]), "exp")
    np.testing.assert_allclose(out, np.diag([np.exp(-1), np.exp(2)]))


def test_non_pd_domain_error_names_eigenvalue():
    with pytest.raises(DomainError, match="-1"):
        spd.spd_function(np.diag([3.0, -1.0]), "log")
    with pytest.raises(DomainError):
        spd.spd_function(np.diag([1.0, 0.0]), "sqrt")
    with pytest.raises(ValidationError):
        spd.spd_function(np.eye(2), "cosh")


def test_log_det_examples():
    assert spd.log_det(np.eye(3)) == 0.0
    assert spd.log_det(np.diag([2.0, 3.0])) == pytest.approx(np.log(6), rel=1e-15)
    assert spd.log_det([[1.0, 0.5], [0.5, 1.0]]) == pytest.approx(np.log(0.75), rel=1e-14)
    with pytest.raises(DomainError):
        spd.log_det([[1.0, 2.0], [2.0, 1.0]])


def test_log_det_matches_eigen_product(rng):
    for _ in range(20):
        A = random_spd(rng, 6)
        w, _ = spd.sym_eigen(A)
        assert spd.log_det(A) == pytest.approx(np.log(np.prod(w)), rel=1e-10)


def test_polar_examples():
    G, S = spd.polar_factor(np.eye(4)[:, :2])
    np.testing.assert_allclose(G, np.eye(4)[:, :2], atol=1e-15)
    np.testing.assert_allclose(S, np.eye(2), atol=1e-15)
    G, S = spd.polar_factor([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    np.testing.assert_allclose(G, [[1, 0], [0, 1], [0, 0]], atol=1e-15)
    np.testing.assert_allclose(S, np.diag([2.0, 3.0]), atol=1e-14)


def test_polar_rank_deficient():
    with pytest.raises(DegenerateInputError):
        spd.polar_factor([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(ValidationError):
        spd.polar_factor(np.ones((2, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6))
def test_polar_properties(d, seed):
    rng = np.random.default_rng(seed)
    p = d + int(rng.integers(0, 4))
    U = rng.standard_normal((p, d))
    G, S = spd.polar_factor(U)
    assert np.linalg.norm(G @ S - U) <= 1e-10 * np.linalg.norm(U)
    assert np.linalg.norm(G.T @ G - np.eye(d)) <= 1e-10
    np.testing.assert_allclose(spd.polar_factor_stack(U[None])[0], G, atol=1e-12)


def test_tangent_map_examples(rng):
    Sstar = random_spd(rng, 4)
    W = spd.spd_function(Sstar, "inv_sqrt")
    assert np.abs(spd.tangent_map(Sstar, W)).max() <= 1e-10
    A = random_spd(rng, 3)
    np.testing.assert_allclose(spd.tangent_map(A, np.eye(3)), spd.spd_function(A, "log"), atol=1e-13)
    out = spd.tangent_map(4 * np.e * np.eye(2), spd.spd_function(4 * np.eye(2), "inv_sqrt"))
    np.testing.assert_allclose(out, np.eye(2), atol=1e-14)


def test_tangent_map_non_pd_product():
    with pytest.raises(DomainError):
        spd.tangent_map(np.diag([1.0, -1.0]), np.eye(2))


def test_macg_examples(rng):
    G = spd.sample_haar_orthonormal(5, 2, rng)
    assert spd.macg_log_density(G, np.eye(5)) == pytest.approx(0.0, abs=1e-14)
    assert spd.macg_log_density(G, 7.3 * np.eye(5)) == pytest.approx(0.0, abs=1e-12)
    val = spd.macg_log_density(np.array([[1.0], [0.0], [0.0]]), np.diag([4.0, 1.0, 1.0]))
    # -(1/2) log 4 - (3/2) log(1/4) = 2 log 2
    assert val == pytest.approx(-0.5 * np.log(4) - 1.5 * np.log(0.25), rel=1e-14)
    assert val == pytest.approx(2 * np.log(2), rel=1e-14)


def test_macg_scale_invariance(rng):
    for _ in range(100):
        Psi = random_spd(rng, 5)
        G = spd.sample_haar_orthonormal(5, 3, rng)
        c = float(np.exp(rng.uniform(-3, 3)))
        assert abs(spd.macg_log_density(G, c * Psi) - spd.macg_log_density(G, Psi)) <= 1e-12 * max(
            1.0, abs(spd.macg_log_density(G, Psi))
        )


def test_macg_shape_mismatch(rng):
    with pytest.raises(ValidationError):
        spd.macg_log_density(np.eye(3)[:, :1], np.eye(4))


def test_haar_scalar_signs():
    rng = np.random.default_rng(1)
    draws = np.array([spd.sample_haar_orthonormal(1, 1, rng)[0, 0] for _ in range(2000)])
    assert set(np.round(draws, 12)) == {-1.0, 1.0}
    assert abs(np.mean(draws > 0) - 0.5) < 3 * 0.5 / np.sqrt(2000)


def test_haar_orthonormal_always(rng):
    for _ in range(200):
        G = spd.sample_haar_orthonormal(5, 2, rng)
        assert np.linalg.norm(G.T @ G - np.eye(2)) <= 1e-10


def test_haar_second_moment():
    rng = np.random.default_rng(7)
    N = 10_000
    g = np.array([spd.sample_haar_orthonormal(3, 1, rng)[:, 0] for _ in range(N)])
    outer = g[:, :, None] * g[:, None, :]
    mean = outer.mean(axis=0)
    se = outer.std(axis=0, ddof=1) / np.sqrt(N)
    assert np.all(np.abs(mean - np.eye(3) / 3) <= 3 * se + 1e-15)


def test_haar_bad_dims(rng):
    with pytest.raises(ValidationError):
        spd.sample_haar_orthonormal(2, 3, rng)
