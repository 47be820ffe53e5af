"""Spherical ball bearing: n balls rolling between a fixed sphere and an outer shell.

State conventions (all in the frame of the outer sphere S):

* ``omega`` -- angular velocity of S, shape ``(..., 3)``
* ``gammas`` -- unit directions to the ball centres, shape ``(..., n, 3)``

The flat state vector used by the integrators is ``[omega, gamma_1, ..., gamma_n]``;
the full (reconstruction) vector appends ``g`` and ``g_1..g_n`` row-major.
Every function broadcasts over leading batch axes.  Off the unit spheres the
same formulas define the extended field on R^{3n+3}, which is what the
divergence and transport checks differentiate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo


@dataclass(frozen=True)
class Ball:
    inertia: float
    mass: float
    spin: float = 0.0  # conserved <Omega_i, Gamma_i>


@dataclass(frozen=True)
class SphericalParams:
    R: float
    r: float
    A: float
    B: float
    C: float
    balls: tuple[Ball, ...]
    epsilon_override: Optional[float] = None
    allow_empty: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "balls", tuple(self.balls))
        if self.R <= 0 or self.r <= 0:
            raise ValueError("radii R and r must be positive")
        if min(self.A, self.B, self.C) <= 0:
            raise ValueError("principal moments A, B, C must be positive")
        if not self.balls and not self.allow_empty:
            raise ValueError("at least one ball is required")
        for b in self.balls:
            if b.inertia <= 0 or b.mass <= 0:
                raise ValueError("ball inertia and mass must be positive")

    @classmethod
    def free_body(cls, A: float, B: float, C: float) -> "SphericalParams":
        """Degenerate n=0 system: the free rigid body (Euler top).  Intended for tests."""
        return cls(R=1.0, r=1.0, A=A, B=B, C=C, balls=(), allow_empty=True)

    @property
    def n(self) -> int:
        return len(self.balls)

    @cached_property
    def epsilon(self) -> float:
        return derived_params(self)[0]

    @cached_property
    def delta(self) -> float:
        return derived_params(self)[1]

    @cached_property
    def inertia(self) -> np.ndarray:
        return np.diag([self.A, self.B, self.C])

    @cached_property
    def ball_weights(self) -> np.ndarray:
        """``delta^2 (I_i + m_i r^2)`` per ball."""
        d = self.delta
        return np.array([d * d * (b.inertia + b.mass * self.r**2) for b in self.balls])

    @cached_property
    def spins(self) -> np.ndarray:
        return np.array([b.spin for b in self.balls], dtype=float)

    def with_spins(self, spins: Sequence[float]) -> "SphericalParams":
        balls = tuple(Ball(b.inertia, b.mass, float(c)) for b, c in zip(self.balls, spins))
        return SphericalParams(self.R, self.r, self.A, self.B, self.C, balls,
                               self.epsilon_override, self.allow_empty)


def derived_params(p: SphericalParams) -> tuple[float, float]:
    """Return ``(epsilon, delta)``; ``epsilon_override`` replaces epsilon if set."""
    if p.R <= 0 or p.r <= 0:
        raise ValueError("radii must be positive")
    eps = p.R / (2.0 * p.R + 2.0 * p.r)
    if p.epsilon_override is not None:
        eps = float(p.epsilon_override)
    delta = (p.R + 2.0 * p.r) / (2.0 * p.r)
    return eps, delta


@dataclass
class SphericalState:
    omega: np.ndarray
    gammas: np.ndarray

    @classmethod
    def create(cls, omega, gammas) -> "SphericalState":
        """Validated constructor; ball directions are renormalized."""
        omega = np.asarray(omega, dtype=float)
        gammas = np.asarray(gammas, dtype=float).reshape(omega.shape[:-1] + (-1, 3))
        if not np.all(np.isfinite(omega)):
            raise ValueError("omega must be finite")
        return cls(omega, geo.unit(gammas) if gammas.size else gammas)

    @property
    def n(self) -> int:
        return self.gammas.shape[-2]

    def vector(self) -> np.ndarray:
        lead = self.omega.shape[:-1]
        return np.concatenate((self.omega, self.gammas.reshape(lead + (-1,))), axis=-1)

    @classmethod
    def from_vector(cls, z: np.ndarray, n: int) -> "SphericalState":
        z = np.asarray(z, dtype=float)
        return cls(z[..., :3], z[..., 3:3 + 3 * n].reshape(z.shape[:-1] + (n, 3)))


@dataclass
class FullSphericalState:
    reduced: SphericalState
    g: np.ndarray
    g_list: np.ndarray  # (..., n, 3, 3)

    @classmethod
    def create(cls, reduced: SphericalState, g=None, g_list=None, tol: float = geo.ROT_TOL):
        n = reduced.n
        g = geo.E3.copy() if g is None else geo.check_rotation(g, tol)
        g_list = np.tile(geo.E3, (n, 1, 1)) if g_list is None else geo.check_rotation(
            np.asarray(g_list, dtype=float).reshape(-1, 3, 3), tol)
        return cls(reduced, g, g_list)

    def vector(self) -> np.ndarray:
        lead = self.g.shape[:-2]
        return np.concatenate(
            (self.reduced.vector(), self.g.reshape(lead + (9,)),
             self.g_list.reshape(lead + (-1,))), axis=-1)

    @classmethod
    def from_vector(cls, z: np.ndarray, n: int) -> "FullSphericalState":
        z = np.asarray(z, dtype=float)
        lead = z.shape[:-1]
        k = 3 + 3 * n
        return cls(SphericalState.from_vector(z, n), z[..., k:k + 9].reshape(lead + (3, 3)),
                   z[..., k + 9:k + 9 + 9 * n].reshape(lead + (n, 3, 3)))


@dataclass
class SphericalIntegrals:
    F1: np.ndarray
    F2: np.ndarray
    F_gram: np.ndarray
    T: np.ndarray


def gamma_operator(p: SphericalParams, gammas: np.ndarray) -> np.ndarray:
    """``sum_i delta^2 (I_i + m_i r^2) (Gamma_i (x) Gamma_i - E)``."""
    gammas = np.asarray(gammas, dtype=float)
    k = p.ball_weights
    if k.size == 0:
        return np.zeros(gammas.shape[:-2] + (3, 3))
    terms = geo.outer(gammas, gammas) - geo.E3
    return np.einsum("i,...ijk->...jk", k, terms)


def modified_inertia(p: SphericalParams, gammas: np.ndarray) -> np.ndarray:
    """Inertia of S augmented by the balls' contribution: ``I - gamma_operator``."""
    return p.inertia - gamma_operator(p, gammas)


def spin_vector(p: SphericalParams, gammas: np.ndarray) -> np.ndarray:
    """``N = delta sum_i I_i c_i Gamma_i``."""
    gammas = np.asarray(gammas, dtype=float)
    w = p.delta * np.array([b.inertia * b.spin for b in p.balls])
    if w.size == 0:
        return np.zeros(gammas.shape[:-2] + (3,))
    return np.einsum("i,...ij->...j", w, gammas)


def vectors_MN(p: SphericalParams, s: SphericalState) -> tuple[np.ndarray, np.ndarray]:
    Imod = modified_inertia(p, s.gammas)
    M = np.einsum("...ij,...j->...i", Imod, s.omega)
    return M, spin_vector(p, s.gammas)


def omega_ball(p: SphericalParams, omega, gamma_i, c_i) -> np.ndarray:
    """Angular velocity of ball i (S-frame) on the level set ``<Omega_i, Gamma_i> = c_i``."""
    omega = np.asarray(omega, dtype=float)
    gamma_i = np.asarray(gamma_i, dtype=float)
    c_i = np.asarray(c_i, dtype=float)
    d = p.delta
    return c_i[..., None] * gamma_i + d * omega - d * geo.dot(gamma_i, omega)[..., None] * gamma_i


def ball_omegas(p: SphericalParams, s: SphericalState) -> np.ndarray:
    """All ``Omega_i`` at once, shape ``(..., n, 3)``."""
    return omega_ball(p, s.omega[..., None, :], s.gammas, p.spins)


def reduced_rhs(p: SphericalParams, s: SphericalState) -> tuple[np.ndarray, np.ndarray]:
    """Reduced vector field on R^3 x (S^2)^n.

    ``Omega'`` comes from the solved form
    ``Imod Omega' = I Omega x Omega - (1-eps) (Gop Omega) x Omega + (1-eps) N x Omega``
    and ``Gamma_i' = eps Gamma_i x Omega``.
    """
    eps = p.epsilon
    omega, gammas = s.omega, s.gammas
    Gop = gamma_operator(p, gammas)
    N = spin_vector(p, gammas)
    Iw = p.inertia.diagonal() * omega
    Gw = np.einsum("...ij,...j->...i", Gop, omega)
    rhs = geo.cross(Iw - (1.0 - eps) * Gw + (1.0 - eps) * N, omega)
    Imod = p.inertia - Gop
    omega_dot = np.linalg.solve(Imod, rhs[..., None])[..., 0]
    gammas_dot = eps * geo.cross(gammas, omega[..., None, :])
    return omega_dot, gammas_dot


def reduced_field(p: SphericalParams):
    """Flat-vector form of :func:`reduced_rhs` for the integrators."""
    n = p.n

    def f(z: np.ndarray) -> np.ndarray:
        s = SphericalState.from_vector(z, n)
        w, G = reduced_rhs(p, s)
        return np.concatenate((w, G.reshape(z.shape[:-1] + (3 * n,))), axis=-1)

    return f


def gamma_operator_rate(p: SphericalParams, s: SphericalState) -> np.ndarray:
    """Time derivative of the gamma operator along the flow, by the chain rule."""
    _, gd = reduced_rhs(p, s)
    k = p.ball_weights
    if k.size == 0:
        return np.zeros(s.omega.shape[:-1] + (3, 3))
    terms = geo.outer(gd, s.gammas) + geo.outer(s.gammas, gd)
    return np.einsum("i,...ijk->...jk", k, terms)


def integrals(p: SphericalParams, s: SphericalState) -> SphericalIntegrals:
    M, N = vectors_MN(p, s)
    F1 = 0.5 * geo.dot(M, s.omega)
    K = M + N
    gram = np.einsum("...ik,...jk->...ij", s.gammas, s.gammas)
    spin_energy = 0.5 * sum(b.inertia * b.spin**2 for b in p.balls)
    return SphericalIntegrals(F1=F1, F2=geo.dot(K, K), F_gram=gram, T=F1 + spin_energy)


def kinetic_energy(p: SphericalParams, s: SphericalState) -> np.ndarray:
    """Kinetic energy summed body by body from reconstructed velocities.

    Independent of the ``Imod`` bookkeeping: uses ``Omega_i`` and
    ``V_Oi = r Omega_i x Gamma_i`` directly.
    """
    T = 0.5 * geo.dot(p.inertia.diagonal() * s.omega, s.omega)
    Wi = ball_omegas(p, s)
    V = p.r * geo.cross(Wi, s.gammas)
    for i, b in enumerate(p.balls):
        T = T + 0.5 * b.inertia * geo.dot(Wi[..., i, :], Wi[..., i, :])
        T = T + 0.5 * b.mass * geo.dot(V[..., i, :], V[..., i, :])
    return T


def measure_density(p: SphericalParams, gammas: np.ndarray) -> np.ndarray:
    """Invariant-measure density ``sqrt(det Imod)`` (positive root)."""
    return np.sqrt(np.linalg.det(modified_inertia(p, gammas)))


def no_contact_margin(p: SphericalParams, gammas: np.ndarray) -> float:
    """``min_{i<j} |Gamma_i - Gamma_j| - 2r/(r+R)``; positive means no ball contact."""
    gammas = np.asarray(gammas, dtype=float)
    n = gammas.shape[-2]
    if n < 2:
        return np.inf
    bound = 2.0 * p.r / (p.r + p.R)
    dmin = min(np.min(np.linalg.norm(gammas[..., i, :] - gammas[..., j, :], axis=-1))
               for i in range(n) for j in range(i + 1, n))
    return float(dmin - bound)


def full_rhs(p: SphericalParams, f: FullSphericalState):
    """Derivative of the full configuration ``(Omega, Gamma, g, g_i)``.

    ``g' = g hat(Omega)``, and each ball rotates with space-frame angular
    velocity ``omega_i = g Omega_i``, i.e. ``g_i' = g hat(Omega_i) g^T g_i``.
    """
    w_dot, G_dot = reduced_rhs(p, f.reduced)
    g = f.g
    g_dot = g @ geo.hat(f.reduced.omega)
    Wi = ball_omegas(p, f.reduced)
    gT = np.swapaxes(g, -1, -2)
    gi_dot = g[..., None, :, :] @ geo.hat(Wi) @ gT[..., None, :, :] @ f.g_list
    return w_dot, G_dot, g_dot, gi_dot


def full_field(p: SphericalParams):
    n = p.n

    def f(z: np.ndarray) -> np.ndarray:
        lead = z.shape[:-1]
        w, G, gd, gid = full_rhs(p, FullSphericalState.from_vector(z, n))
        return np.concatenate(
            (w, G.reshape(lead + (3 * n,)), gd.reshape(lead + (9,)), gid.reshape(lead + (9 * n,))),
            axis=-1)

    return f


def full_slices(n: int) -> tuple[list[slice], list[slice]]:
    """Slices of the unit-vector blocks and rotation blocks in the full flat vector."""
    units = [slice(3 + 3 * i, 6 + 3 * i) for i in range(n)]
    k = 3 + 3 * n
    rots = [slice(k + 9 * i, k + 9 * (i + 1)) for i in range(n + 1)]
    return units, rots


def reduced_unit_slices(n: int) -> list[slice]:
    return [slice(3 + 3 * i, 6 + 3 * i) for i in range(n)]


@dataclass
class ConstraintResiduals:
    inner: np.ndarray  # |V_Oi - r Omega_i x Gamma_i|, per ball
    outer: np.ndarray  # |(R+2r) Omega x Gamma_i - r Omega_i x Gamma_i - V_Oi|, per ball

    @property
    def max(self) -> float:
        return float(max(np.max(self.inner, initial=0.0), np.max(self.outer, initial=0.0)))


def constraint_residuals(p: SphericalParams, f: FullSphericalState,
                         ball_omega: Optional[np.ndarray] = None) -> ConstraintResiduals:
    """Rolling-constraint residuals with ``V_Oi = (R+r)(Gamma_i' + Omega x Gamma_i)``.

    ``ball_omega`` overrides the reconstructed ``Omega_i`` (used to probe the
    residuals with perturbed ball velocities).
    """
    s = f.reduced
    _, G_dot = reduced_rhs(p, s)
    V = (p.R + p.r) * (G_dot + geo.cross(s.omega[..., None, :], s.gammas))
    Wi = ball_omegas(p, s) if ball_omega is None else np.asarray(ball_omega, dtype=float)
    roll = p.r * geo.cross(Wi, s.gammas)
    inner = np.linalg.norm(V - roll, axis=-1)
    outer = np.linalg.norm(
        (p.R + 2 * p.r) * geo.cross(s.omega[..., None, :], s.gammas) - roll - V, axis=-1)
    return ConstraintResiduals(inner, outer)


def space_frame_residual(p: SphericalParams, f: FullSphericalState) -> np.ndarray:
    """``|gamma_i' - r/(R+r) omega_i x gamma_i|`` per ball with ``gamma_i = g Gamma_i``."""
    _, G_dot, g_dot, _ = full_rhs(p, f)
    g = f.g[..., None, :, :]
    gam = np.einsum("...ij,...j->...i", g, f.reduced.gammas)
    gam_dot = (np.einsum("...ij,...j->...i", g_dot[..., None, :, :], f.reduced.gammas)
               + np.einsum("...ij,...j->...i", g, G_dot))
    w = np.einsum("...ij,...j->...i", g, ball_omegas(p, f.reduced))
    return np.linalg.norm(gam_dot - p.r / (p.R + p.r) * geo.cross(w, gam), axis=-1)
