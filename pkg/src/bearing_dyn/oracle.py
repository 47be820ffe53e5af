"""Full-coordinate Lagrange-multiplier formulation of the planar bearing.

Every body keeps its own velocities: the plate ``(v_x, v_y, v_phi)``, each
ball centre ``u_i`` and each ball angular velocity ``w_i``.  The 4n rolling
constraints are differentiated in time, the Newton-Euler equations are
substituted, and the resulting square system is solved for the contact
forces.  Nothing here uses the reduced equations, so agreement with
:func:`bearing_dyn.planar.reduced_rhs` is a genuine cross-check.

Multiplier ordering: ``lambda[2i:2i+2]`` is the force of the fixed plane on
ball i (lower contact), ``lambda[2n+2i:2n+2i+2]`` the force of the plate on
ball i (upper contact).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import geometry as geo
from .planar import PlanarFullState, PlanarParams

PIVOT_RATIO_TOL = 1e-12

_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])
_GAMMA = geo.VERTICAL


class SingularMultiplierSystem(np.linalg.LinAlgError):
    def __init__(self, condition: float):
        super().__init__(f"multiplier system is singular (condition estimate {condition:.3e}); "
                         "the input state is probably inconsistent")
        self.condition = condition


@dataclass
class MultiplierSolution:
    lambdas: np.ndarray
    accelerations: np.ndarray  # generalized accelerations, see _dof_layout

    @property
    def n(self) -> int:
        return len(self.lambdas) // 4

    @property
    def lower(self) -> np.ndarray:
        return self.lambdas[: 2 * self.n].reshape(self.n, 2)

    @property
    def upper(self) -> np.ndarray:
        return self.lambdas[2 * self.n:].reshape(self.n, 2)

    @property
    def forces(self) -> np.ndarray:
        """Force of the plate on each ball, ``F_i = (lambda_upper, 0)``."""
        return np.concatenate((self.upper, np.zeros((self.n, 1))), axis=1)


def _dof_layout(n: int) -> tuple[slice, list[slice], list[slice]]:
    """Generalized velocity layout: plate (3), ball centres (2 each), ball spins (3 each)."""
    plate = slice(0, 3)
    lin = [slice(3 + 2 * i, 5 + 2 * i) for i in range(n)]
    ang = [slice(3 + 2 * n + 3 * i, 6 + 2 * n + 3 * i) for i in range(n)]
    return plate, lin, ang


def _mass_diagonal(p: PlanarParams) -> np.ndarray:
    lin = [b.mass for b in p.balls for _ in range(2)]
    ang = [b.inertia for b in p.balls for _ in range(3)]
    return np.array([p.m, p.m, p.I] + lin + ang)


def _velocities(full: PlanarFullState) -> np.ndarray:
    return np.concatenate((full.velocity, full.center_velocities.ravel(), full.spins.ravel()))


def _force_map(p: PlanarParams, full: PlanarFullState) -> np.ndarray:
    """Generalized forces produced by unit multipliers (columns), from Newton-Euler.

    Ball: ``m_i u_i' = L_i + U_i`` and ``I_i w_i' = (-r e3) x L_i + (r e3) x U_i``;
    plate: ``m v_O' = -sum U_i`` and ``I v_phi' = -sum (OA_i x U_i)_z``.
    """
    n = p.n
    plate, lin, ang = _dof_layout(n)
    B = np.zeros((3 + 5 * n, 4 * n))
    offsets = np.concatenate((full.offsets, np.zeros((n, 1))), axis=1)
    for i in range(n):
        for k, e in enumerate((_EX, _EY)):
            lo, up = 2 * i + k, 2 * n + 2 * i + k
            B[lin[i], lo] = e[:2]
            B[ang[i], lo] = np.cross(-p.r * _GAMMA, e)
            B[lin[i], up] = e[:2]
            B[ang[i], up] = np.cross(p.r * _GAMMA, e)
            B[plate, up] = np.append(-e[:2], -np.cross(offsets[i], e)[2])
    return B


def _constraint_jacobian(p: PlanarParams, full: PlanarFullState) -> tuple[np.ndarray, np.ndarray]:
    """Constraint matrix ``G`` and velocity-product term ``c`` with ``d/dt(G qdot) = G qdot' + c``.

    Lower rows: ``u_i - r w_i x e3``; upper rows:
    ``u_i + r w_i x e3 - v_O - v_phi e3 x OA_i``.
    """
    n = p.n
    plate, lin, ang = _dof_layout(n)
    G = np.zeros((4 * n, 3 + 5 * n))
    c = np.zeros(4 * n)
    dw_cross_gamma = -geo.hat(_GAMMA)  # d(w x e3)/dw
    vO = full.velocity[:2]
    vphi = full.velocity[2]
    for i in range(n):
        oa = full.offsets[i]
        rel = full.center_velocities[i] - vO  # d/dt OA_i
        zx_oa = np.array([-oa[1], oa[0]])
        zx_rel = np.array([-rel[1], rel[0]])
        for k in range(2):
            lo, up = 2 * i + k, 2 * n + 2 * i + k
            G[lo, lin[i]] = np.eye(2)[k]
            G[lo, ang[i]] = -p.r * dw_cross_gamma[k]
            G[up, lin[i]] = np.eye(2)[k]
            G[up, ang[i]] = p.r * dw_cross_gamma[k]
            G[up, plate] = np.array([-np.eye(2)[k, 0], -np.eye(2)[k, 1], -zx_oa[k]])
            c[up] = -vphi * zx_rel[k]
    return G, c


def constraint_values(p: PlanarParams, full: PlanarFullState) -> np.ndarray:
    """All 4n scalar rolling-constraint values (zero on the constraint manifold)."""
    G, _ = _constraint_jacobian(p, full)
    return G @ _velocities(full)


def solve_multipliers(p: PlanarParams, full: PlanarFullState) -> MultiplierSolution:
    """Contact forces keeping every rolling constraint satisfied at the acceleration level.

    Solves ``(G Mass^{-1} B) lambda = -c`` by LU with partial pivoting.

    Raises:
        SingularMultiplierSystem: if the pivot ratio falls below 1e-12.
    """
    B = _force_map(p, full)
    G, c = _constraint_jacobian(p, full)
    minv = 1.0 / _mass_diagonal(p)
    S = G @ (minv[:, None] * B)
    with warnings.catch_warnings():
        # singularity is detected below from the pivot ratio
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(S)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= PIVOT_RATIO_TOL * pivots.max():
        raise SingularMultiplierSystem(float(np.linalg.cond(S)))
    lam = scipy.linalg.lu_solve((lu, piv), -c)
    return MultiplierSolution(lam, minv * (B @ lam))


def full_oracle_rhs(p: PlanarParams, full: PlanarFullState) -> np.ndarray:
    """Time derivative of the full state in :meth:`PlanarFullState.vector` layout."""
    sol = solve_multipliers(p, full)
    n = p.n
    plate, lin, ang = _dof_layout(n)
    a = sol.accelerations
    return np.concatenate((
        full.velocity,
        a[plate],
        full.center_velocities.ravel(),
        np.concatenate([a[s] for s in lin]),
        np.concatenate([a[s] for s in ang]),
    ))


def oracle_field(p: PlanarParams):
    n = p.n

    def f(z):
        z = np.asarray(z, dtype=float)
        if z.ndim > 1:
            return np.array([f(row) for row in z])
        return full_oracle_rhs(p, PlanarFullState.from_vector(z, n))

    return f


def constraint_rates(p: PlanarParams, full: PlanarFullState) -> np.ndarray:
    """``d/dt`` of every scalar constraint along the oracle accelerations."""
    G, c = _constraint_jacobian(p, full)
    return G @ solve_multipliers(p, full).accelerations + c


def reduced_rates(p: PlanarParams, full: PlanarFullState, zdot: np.ndarray) -> np.ndarray:
    """``(v_x', v_y', v_phi', N_1', N_2', M')`` from a full-state derivative, by the chain rule."""
    n = p.n
    k = 6 + 2 * n
    u = zdot[6:k].reshape(n, 2)
    rel = u - zdot[0:2]
    N_dot = p.deltas @ rel
    M_dot = 2.0 * np.sum(p.deltas * np.sum(full.offsets * rel, axis=1))
    return np.concatenate((zdot[3:6], N_dot, [M_dot]))


def mass_ratio_residual(p: PlanarParams, sol: MultiplierSolution) -> float:
    """Max deviation from ``L_i = (m_i r^2 - I_i)/(m_i r^2 + I_i) U_i``."""
    ratio = np.array([(b.mass * p.r**2 - b.inertia) / (b.mass * p.r**2 + b.inertia) for b in p.balls])
    return float(np.max(np.abs(sol.lower - ratio[:, None] * sol.upper)))


def _wedge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def derived_force_equation_residual(p: PlanarParams, full: PlanarFullState,
                                    sol: MultiplierSolution) -> float:
    """Residual of the upper-contact force equations as they follow from Newton-Euler.

    ``4 I r^2/(m_i r^2 + I_i) F_i = -(sum_j OA_j ^ F_j) e3 x OA_i
    + I w x (u_i - v_O) - (I/m) sum_j F_j``
    """
    F = sol.upper
    off = full.offsets
    torque = np.sum(_wedge(off, F))
    vphi = full.velocity[2]
    out = 0.0
    for i, b in enumerate(p.balls):
        lhs = 4.0 * p.I * p.r**2 / (b.mass * p.r**2 + b.inertia) * F[i]
        rel = full.center_velocities[i] - full.velocity[:2]
        rhs = (-torque * np.array([-off[i, 1], off[i, 0]])
               + p.I * vphi * np.array([-rel[1], rel[0]])
               - p.I / p.m * F.sum(axis=0))
        out = max(out, float(np.max(np.abs(lhs - rhs))))
    return out


def printed_force_equation_residual(p: PlanarParams, full: PlanarFullState,
                                    sol: MultiplierSolution) -> float:
    """Residual of the force equations in the published form, reading ``^`` as the planar wedge.

    Reported as a diagnostic only; the published form is not dimensionally
    consistent (the velocity term lacks a factor I) so it is nonzero in general.
    """
    F = sol.upper
    off = full.offsets
    torque = np.sum(_wedge(off, F))
    vphi = full.velocity[2]
    out = 0.0
    for i, b in enumerate(p.balls):
        lhs = 4.0 * p.I * p.r**2 / (b.mass * p.r**2 + b.inertia) * F[i]
        rel = full.center_velocities[i] - full.velocity[:2]
        rhs = torque * off[i] + vphi * np.array([-rel[1], rel[0]]) - p.I / p.m * F.sum(axis=0)
        out = max(out, float(np.max(np.abs(lhs - rhs))))
    return out
