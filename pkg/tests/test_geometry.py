import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bearing_dyn import geometry as geo

finite = st.floats(-10, 10, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)
nonzero_vec3 = vec3.filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_hat_examples():
    np.testing.assert_allclose(geo.hat([0, 0, 1]) @ [1, 0, 0], [0, 1, 0])
    np.testing.assert_array_equal(geo.hat([0, 0, 0]), np.zeros((3, 3)))
    a = np.array([1.5, -2.0, 0.25])
    np.testing.assert_array_equal(geo.vee(geo.hat(a)), a)


def test_vee_examples():
    np.testing.assert_array_equal(geo.vee(geo.hat([3, 4, 5])), [3, 4, 5])
    np.testing.assert_array_equal(geo.vee(np.zeros((3, 3))), [0, 0, 0])
    with pytest.raises(geo.GeometryError):
        geo.vee(np.eye(3))


@given(vec3, vec3)
def test_hat_is_cross_product(a, b):
    np.testing.assert_allclose(geo.hat(a) @ b, np.cross(a, b), atol=1e-12)
    np.testing.assert_allclose(geo.cross(a, b), np.cross(a, b), atol=1e-12)


@given(vec3)
def test_hat_vee_roundtrip(a):
    np.testing.assert_array_equal(geo.vee(geo.hat(a)), a)
    S = geo.hat(a)
    np.testing.assert_array_equal(S, -S.T)


def test_hat_broadcasts():
    a = np.random.default_rng(0).normal(size=(4, 5, 3))
    H = geo.hat(a)
    assert H.shape == (4, 5, 3, 3)
    np.testing.assert_allclose(H[2, 3], geo.hat(a[2, 3]))


def test_projector_examples():
    np.testing.assert_array_equal(geo.projector([0, 0, 1.0]), np.diag([1.0, 1.0, 0.0]))
    g = np.array([1, 2, 2]) / 3.0
    np.testing.assert_allclose(geo.projector(g) @ g, 0.0, atol=1e-15)


@given(nonzero_vec3)
def test_projector_idempotent_trace_two(v):
    g = v / np.linalg.norm(v)
    P = geo.projector(g)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    assert np.trace(P) == pytest.approx(2.0, abs=1e-12)


def test_lemma_symmetric_part_identity_is_zero():
    np.testing.assert_array_equal(geo.lemma_symmetric_part(np.eye(3), [0.3, -1.0, 2.0]), np.zeros((3, 3)))


def _jacobian_of_gyroscopic_term(A, omega, h=1e-6):
    f = lambda w: np.cross(A @ w, w)
    J = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        J[:, j] = (f(omega + e) - f(omega - e)) / (2 * h)
    return J


def test_lemma_symmetric_part_matches_finite_differences():
    A = np.diag([1.0, 2.0, 3.0])
    omega = np.array([0.0, 0.0, 1.0])
    J = _jacobian_of_gyroscopic_term(A, omega)
    np.testing.assert_allclose(geo.lemma_symmetric_part(A, omega), 0.5 * (J + J.T), atol=1e-8)


def test_lemma_symmetric_part_random(rng):
    for _ in range(20):
        B = rng.uniform(-10, 10, (3, 3))
        A = B + B.T
        omega = rng.uniform(-1, 1, 3)
        J = _jacobian_of_gyroscopic_term(A, omega)
        np.testing.assert_allclose(geo.lemma_symmetric_part(A, omega), 0.5 * (J + J.T), atol=1e-7)


def test_commutator_identity_random(rng):
    # (A w) x w == [A, hat(w)] w for symmetric A
    worst = 0.0
    for _ in range(100):
        B = rng.uniform(-10, 10, (3, 3))
        A = 0.5 * (B + B.T)
        w = rng.uniform(-1, 1, 3)
        worst = max(worst, np.max(np.abs(np.cross(A @ w, w) - geo.commutator(A, geo.hat(w)) @ w)))
    assert worst <= 1e-12


def test_check_symmetric():
    A = np.diag([1.0, 2.0, 3.0])
    assert geo.check_symmetric(A) is not None
    A[0, 1] = 1e-10
    with pytest.raises(geo.GeometryError):
        geo.check_symmetric(A)
    with pytest.raises(geo.GeometryError):
        geo.check_symmetric(np.eye(2))


def test_unit_renormalizes_and_rejects():
    v = np.array([0.0, 0.0, 1.0 + 1e-6])
    np.testing.assert_allclose(np.linalg.norm(geo.unit(v)), 1.0, atol=1e-12)
    with pytest.raises(geo.GeometryError):
        geo.unit([0.0, 0.0, 1.01])
    with pytest.raises(geo.GeometryError):
        geo.unit([np.nan, 0.0, 1.0])


@given(nonzero_vec3, st.floats(-10, 10))
def test_rotation_is_proper(axis, angle):
    g = geo.rotation(axis, angle)
    assert geo.orthogonality_defect(g) <= 1e-12
    assert np.linalg.det(g) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(g @ axis, axis, atol=1e-10)


def test_rotation_about_z():
    g = geo.rotation([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(g @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_check_rotation():
    g = geo.rotation([1, 2, 3], 0.7)
    geo.check_rotation(g)
    with pytest.raises(geo.GeometryError):
        geo.check_rotation(g * 1.001)
    with pytest.raises(geo.GeometryError):
        geo.check_rotation(-g)  # det -1
    geo.check_rotation(g * (1 + 1e-6), tol=1e-5)


def test_reorthonormalize_repairs_drift(rng):
    g = geo.rotation([0.3, -1.0, 0.5], 1.2)
    noisy = g + 1e-7 * rng.normal(size=(3, 3))
    fixed = geo.reorthonormalize(noisy)
    assert geo.orthogonality_defect(fixed) <= 1e-15
    assert np.linalg.det(fixed) == pytest.approx(1.0)
    np.testing.assert_allclose(fixed, g, atol=1e-6)
    batch = geo.reorthonormalize(np.stack([noisy, noisy]))
    np.testing.assert_allclose(batch[1], fixed)


def test_random_unit_on_sphere(rng):
    v = geo.random_unit(rng, 1000)
    np.testing.assert_allclose(np.linalg.norm(v, axis=-1), 1.0, atol=1e-15)
    # roughly isotropic
    assert np.all(np.abs(v.mean(axis=0)) < 0.1)


def test_adjugate_and_det(rng):
    for _ in range(10):
        A = rng.normal(size=(3, 3))
        np.testing.assert_allclose(A @ geo.adjugate(A), geo.det3(A) * np.eye(3), atol=1e-12)
        assert geo.det3(A) == pytest.approx(np.linalg.det(A), rel=1e-12)


def test_outer_dot_broadcast():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(geo.outer(a, a)[1], np.outer(a[1], a[1]))
    np.testing.assert_array_equal(geo.dot(a, a), [5.0, 50.0])
