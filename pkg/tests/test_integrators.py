import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bearing_dyn import integrators as it
from bearing_dyn.geometry import orthogonality_defect
from bearing_dyn import planar as pl
from bearing_dyn import spherical as sp
from bearing_dyn import verification as ver

from conftest import make_spherical


def zero_field(z):
    return np.zeros_like(z)


def exp_field(z):
    return np.asarray(z, dtype=float)


def euler_top():
    p = sp.SphericalParams.free_body(1.0, 2.0, 3.0)
    return p, sp.reduced_field(p), np.array([0.8, -0.5, 0.6])


def test_rk4_zero_field_is_identity():
    z = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(it.rk4_step(zero_field, z, 0.1), z)


def test_rk4_exponential_single_step():
    x = it.rk4_step(exp_field, np.array([1.0]), 0.1)[0]
    assert x == pytest.approx(1.10517083, abs=5e-9)
    # RK4 reproduces the degree-4 Taylor polynomial exactly
    assert x == pytest.approx(1 + 0.1 + 0.1**2 / 2 + 0.1**3 / 6 + 0.1**4 / 24, rel=1e-15)
    assert abs(x - math.exp(0.1)) <= 1e-7


def test_rk4_non_finite_field_aborts_with_state():
    def bad(z):
        return np.full_like(z, np.nan)

    z = np.array([1.0, 2.0])
    with pytest.raises(it.NonFiniteFieldError) as info:
        it.rk4_step(bad, z, 0.1)
    np.testing.assert_array_equal(info.value.state, z)


def test_integrate_sample_count_and_times():
    res = it.integrate(zero_field, np.zeros(2), 0.1, 0.3)
    assert len(res.states) == 4
    np.testing.assert_allclose(res.times, [0.0, 0.1, 0.2, 0.3])
    assert res.times[-1] == 0.3
    assert np.all(np.diff(res.times) > 0)


def test_integrate_exact_final_partial_step():
    res = it.integrate(exp_field, np.array([1.0]), 0.1, 0.25)
    assert res.times[-1] == 0.25
    assert it.step_schedule(0.1, 0.25) == pytest.approx([0.1, 0.1, 0.05])
    assert res.final[0] == pytest.approx(math.exp(0.25), rel=1e-6)


def test_integrate_sample_every():
    res = it.integrate(zero_field, np.zeros(1), 0.01, 1.0, sample_every=10)
    assert len(res.times) == 11
    np.testing.assert_allclose(res.times, np.linspace(0, 1, 11), atol=1e-12)


@pytest.mark.parametrize("h,t_end", [(0.0, 1.0), (-0.1, 1.0), (0.1, 0.0)])
def test_integrate_rejects_bad_arguments(h, t_end):
    with pytest.raises(ValueError):
        it.integrate(zero_field, np.zeros(1), h, t_end)


def test_observer_abort_propagates():
    def stop(step, t, z):
        if t >= 0.5:
            raise it.IntegrationAborted("left the admissible region")

    with pytest.raises(it.IntegrationAborted):
        it.integrate(exp_field, np.array([1.0]), 0.1, 1.0, observers=[stop])


def test_observer_replacement_is_used():
    def clamp(step, t, z):
        return np.minimum(z, 2.0)

    res = it.integrate(exp_field, np.array([1.0]), 0.01, 2.0, observers=[clamp])
    assert res.final[0] == 2.0


def test_integrate_is_deterministic():
    p = make_spherical()
    z = ver.random_spherical_state(p, np.random.default_rng(3)).vector()
    a = it.integrate(sp.reduced_field(p), z, 1e-2, 1.0).states
    b = it.integrate(sp.reduced_field(p), z, 1e-2, 1.0).states
    assert a.tobytes() == b.tobytes()


def test_integrate_batched_matches_single():
    p = make_spherical()
    rng = np.random.default_rng(4)
    zs = np.stack([ver.random_spherical_state(p, rng).vector() for _ in range(3)])
    f = sp.reduced_field(p)
    batch = it.integrate(f, zs, 1e-2, 0.5).final
    for k in range(3):
        np.testing.assert_allclose(batch[k], it.integrate(f, zs[k], 1e-2, 0.5).final, atol=1e-14)


def test_order_exponential():
    order = ver.observed_order(exp_field, np.array([1.0]), 0.1, 1.0)
    assert order >= 3.9


def test_order_euler_top():
    _, f, z = euler_top()
    errs = []
    ref = it.integrate(f, z, 1e-3, 2.0, sample_every=10**6).final
    for h in (0.1, 0.05):
        errs.append(np.max(np.abs(it.integrate(f, z, h, 2.0, sample_every=10**6).final - ref)))
    assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.1)
    assert ver.observed_order(f, z, 0.05, 2.0) >= 3.9


def test_euler_top_classical_integrals():
    p, f, z = euler_top()
    res = it.integrate(f, z, 1e-3, 10.0, sample_every=100)
    I = np.array([1.0, 2.0, 3.0])
    energy = 0.5 * np.sum(I * res.states**2, axis=1)
    momentum = np.sum((I * res.states) ** 2, axis=1)
    assert np.max(np.abs(energy - energy[0])) <= 1e-12
    assert np.max(np.abs(momentum - momentum[0])) <= 1e-12


def test_forward_backward_planar():
    p = pl.PlanarParams.solid_balls()
    full = ver.random_planar_full(p, np.random.default_rng(5))
    f = pl.phase_field(p)
    z0 = full.phase_vector()
    fwd = it.integrate(f, z0, 1e-3, 1.0).final
    back = it.integrate(lambda z: -f(z), fwd, 1e-3, 1.0).final
    assert np.max(np.abs(back - z0)) <= 1e-8


def test_spherical_energy_drift():
    p = make_spherical(spins=(0.3, -0.5))
    s = ver.random_spherical_state(p, np.random.default_rng(6))
    units = sp.reduced_unit_slices(p.n)
    res = it.integrate(sp.reduced_field(p), s.vector(), 1e-3, 10.0, [it.Renormalizer(units)], 100)
    T = sp.integrals(p, sp.SphericalState.from_vector(res.states, p.n)).T
    assert np.max(np.abs(T - T[0])) / max(1.0, abs(T[0])) <= 1e-9


def test_fd_jacobian_linear():
    L = np.array([[1.0, 2.0], [-3.0, 0.5]])
    J = it.fd_jacobian(lambda z: z @ L.T, np.array([0.3, -2.0]))
    np.testing.assert_allclose(J, L, atol=1e-9)


def test_tangent_flow_zero_field():
    res = it.tangent_flow(zero_field, np.ones(3), 0.1, 1.0)
    np.testing.assert_array_equal(res.jacobians[0], np.eye(3))
    np.testing.assert_allclose(res.jacobians[-1], np.eye(3), atol=1e-15)


def test_tangent_flow_trace_free_linear():
    lam = np.array([1.0, -1.0])
    res = it.tangent_flow(lambda z: z * lam, np.array([0.5, 2.0]), 1e-2, 2.0)
    dets = np.linalg.det(res.jacobians)
    assert np.max(np.abs(dets - 1.0)) <= 1e-9
    np.testing.assert_allclose(np.diag(res.jacobians[-1]), np.exp(2.0 * lam), rtol=1e-8)


def test_tangent_flow_multiplicative():
    p = make_spherical(spins=(0.3,))
    z0 = ver.random_spherical_state(p, np.random.default_rng(7)).vector()
    f = sp.reduced_field(p)
    t = 0.5
    first = it.tangent_flow(f, z0, 1e-3, t, sample_every=10**6)
    second = it.tangent_flow(f, first.final, 1e-3, t, sample_every=10**6)
    whole = it.tangent_flow(f, z0, 1e-3, 2 * t, sample_every=10**6)
    np.testing.assert_allclose(second.jacobians[-1] @ first.jacobians[-1], whole.jacobians[-1], atol=1e-7)


def test_renormalizer_policy():
    obs = it.Renormalizer([slice(0, 3)], every=100, threshold=1e-10)
    z = np.array([0.0, 0.0, 1.0 + 1e-6])
    assert obs(99, 0.0, z) is None  # not a renormalization step
    out = obs(100, 0.0, z)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-15)
    assert obs(200, 0.0, np.array([0.0, 0.0, 1.0 + 1e-12])) is None  # below threshold
    assert obs.applied == 1


def test_reorthonormalizer_policy():
    g = np.eye(3) + 1e-8
    obs = it.Reorthonormalizer([slice(0, 9)], every=100)
    out = obs(100, 0.0, g.ravel())
    assert out is not None
    assert orthogonality_defect(out.reshape(3, 3)) <= 1e-15
    assert obs(100, 0.0, np.eye(3).ravel()) is None


@given(st.floats(0.01, 0.2), st.integers(1, 30))
def test_step_schedule_covers_interval(h, k):
    t_end = k * h * 1.37
    steps = it.step_schedule(h, t_end)
    assert sum(steps) == pytest.approx(t_end, rel=1e-12)
    assert all(0 < s <= h * (1 + 1e-9) for s in steps)
