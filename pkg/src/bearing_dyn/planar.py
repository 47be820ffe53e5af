"""Planar ball bearing: n balls between a fixed plane and a moving plate.

Reduced coordinates on Q are ``v = (v_x, v_y, v_phi)`` and
``nvec = (N_1, N_2, M)`` where ``N = sum_i delta_i OA_i`` and
``M = sum_i delta_i |OA_i|^2`` are inertia-weighted moments of the contact
points about the plate centre O.  The 12-dimensional phase space P adds the
plate pose and the ball-centre positions; ball spins about the vertical are
carried, never integrated.

Flat layouts:

* reduced: ``[v_x, v_y, v_phi, N_1, N_2, M]``
* phase (P): ``[x, y, phi, v_x, v_y, v_phi, x_1, y_1, ..., x_n, y_n]``
* full (oracle): phase + ``[u_1 (2), ..., u_n (2), w_1 (3), ..., w_n (3)]``
  with ball-centre velocities ``u_i`` and ball angular velocities ``w_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from . import geometry as geo


@dataclass(frozen=True)
class PlanarBall:
    mass: float
    inertia: float


@dataclass(frozen=True)
class PlanarParams:
    r: float
    m: float
    I: float
    balls: tuple[PlanarBall, ...]

    def __post_init__(self):
        object.__setattr__(self, "balls", tuple(self.balls))
        if self.r <= 0 or self.m <= 0 or self.I <= 0:
            raise ValueError("r, m and I must be positive")
        if not self.balls:
            raise ValueError("at least one ball is required")
        for b in self.balls:
            if b.mass <= 0 or b.inertia <= 0:
                raise ValueError("ball mass and inertia must be positive")

    @classmethod
    def solid_balls(cls, r=1.0, m=2.0, I=1.0, n=3, ball_mass=1.0) -> "PlanarParams":
        """n identical homogeneous balls (moment 2/5 m r^2)."""
        return cls(r, m, I, tuple(PlanarBall(ball_mass, 0.4 * ball_mass * r * r) for _ in range(n)))

    @property
    def n(self) -> int:
        return len(self.balls)

    @cached_property
    def deltas(self) -> np.ndarray:
        return ball_deltas(self)[0]

    @cached_property
    def delta(self) -> float:
        return float(np.sum(self.deltas))


def ball_deltas(p: PlanarParams) -> tuple[np.ndarray, float]:
    """``delta_i = (m_i r^2 + I_i) / (4 r^2)`` and their sum."""
    d = np.array([(b.mass * p.r**2 + b.inertia) / (4.0 * p.r**2) for b in p.balls])
    return d, float(d.sum())


@dataclass
class PlanarReducedState:
    v: np.ndarray
    nvec: np.ndarray

    @classmethod
    def create(cls, p: PlanarParams, v, nvec) -> "PlanarReducedState":
        """Validated constructor: rejects states outside Q (``delta M <= N_1^2 + N_2^2``)."""
        s = cls(np.asarray(v, dtype=float), np.asarray(nvec, dtype=float))
        if np.any(q_margin(p, s) <= 0):
            raise ValueError("state is outside Q: delta*M must exceed N1^2 + N2^2")
        return s

    def vector(self) -> np.ndarray:
        return np.concatenate((self.v, self.nvec), axis=-1)

    @classmethod
    def from_vector(cls, z) -> "PlanarReducedState":
        z = np.asarray(z, dtype=float)
        return cls(z[..., :3], z[..., 3:6])


@dataclass
class PlanarFullState:
    pose: np.ndarray  # (x, y, phi)
    velocity: np.ndarray  # (v_x, v_y, v_phi)
    centers: np.ndarray  # (n, 2)
    center_velocities: np.ndarray  # (n, 2)
    spins: np.ndarray  # (n, 3), space frame

    @classmethod
    def consistent(cls, p: PlanarParams, pose, velocity, centers, spin_z=None) -> "PlanarFullState":
        """Full state satisfying every rolling constraint, built from the plate motion.

        Ball-centre velocities follow from the plate velocity at the contact
        points; ball angular velocities from the lower rolling constraint plus
        the free vertical spin ``spin_z``.
        """
        centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        spin_z = np.zeros(len(centers)) if spin_z is None else np.asarray(spin_z, dtype=float)
        partial = cls(np.asarray(pose, float), np.asarray(velocity, float), centers,
                      np.zeros_like(centers), np.zeros((len(centers), 3)))
        rates = kinematic_rhs(p, partial, spin_z)
        return cls(partial.pose, partial.velocity, centers, rates.center_velocities, rates.spins)

    @property
    def offsets(self) -> np.ndarray:
        """Contact points relative to O (horizontal components of OA_i)."""
        return self.centers - self.pose[..., None, :2]

    def phase_vector(self) -> np.ndarray:
        return np.concatenate((self.pose, self.velocity, self.centers.ravel()))

    def vector(self) -> np.ndarray:
        return np.concatenate((self.phase_vector(), self.center_velocities.ravel(), self.spins.ravel()))

    @classmethod
    def from_vector(cls, z, n: int) -> "PlanarFullState":
        z = np.asarray(z, dtype=float)
        k = 6 + 2 * n
        return cls(z[0:3], z[3:6], z[6:k].reshape(n, 2), z[k:k + 2 * n].reshape(n, 2),
                   z[k + 2 * n:k + 5 * n].reshape(n, 3))

    @classmethod
    def from_phase_vector(cls, p: PlanarParams, z, spin_z=None) -> "PlanarFullState":
        z = np.asarray(z, dtype=float)
        return cls.consistent(p, z[0:3], z[3:6], z[6:].reshape(-1, 2), spin_z)


class PlanarIntegrals(NamedTuple):
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    f4: np.ndarray


class KinematicRates(NamedTuple):
    pose_dot: np.ndarray
    center_velocities: np.ndarray
    spins: np.ndarray


@dataclass(frozen=True)
class LevelSetParams:
    d1: float
    d2: float
    d3: float

    def __post_init__(self):
        if self.d3 <= 0:
            raise ValueError("d3 = delta*M - |N|^2 must be positive")


def _aggregates(deltas: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    N = np.einsum("i,...ij->...j", deltas, offsets)
    M = np.einsum("i,...i->...", deltas, np.sum(offsets * offsets, axis=-1))
    return np.concatenate((N, M[..., None]), axis=-1)


def aggregates(p: PlanarParams, full: PlanarFullState) -> np.ndarray:
    """``(N_1, N_2, M)`` of the contact points.

    Raises:
        ValueError: for degenerate configurations with ``delta M - |N|^2 <= 0``.
    """
    nvec = _aggregates(p.deltas, full.offsets)
    if p.delta * nvec[..., 2] - nvec[..., 0] ** 2 - nvec[..., 1] ** 2 <= 0:
        raise ValueError("degenerate configuration: contact points coincide")
    return nvec


def q_margin(p: PlanarParams, s: PlanarReducedState) -> np.ndarray:
    N1, N2, M = s.nvec[..., 0], s.nvec[..., 1], s.nvec[..., 2]
    return p.delta * M - N1 * N1 - N2 * N2


def mass_matrix(p: PlanarParams, s: PlanarReducedState) -> np.ndarray:
    N1, N2, M = s.nvec[..., 0], s.nvec[..., 1], s.nvec[..., 2]
    md = p.m + p.delta
    A = np.zeros(s.nvec.shape[:-1] + (3, 3))
    A[..., 0, 0] = md
    A[..., 1, 1] = md
    A[..., 0, 2] = A[..., 2, 0] = -N2
    A[..., 1, 2] = A[..., 2, 1] = N1
    A[..., 2, 2] = p.I + M
    return A


def mass_matrix_det(p: PlanarParams, s: PlanarReducedState) -> np.ndarray:
    """``(m+delta)((m+delta) I + m M + (delta M - N_1^2 - N_2^2))``."""
    md = p.m + p.delta
    return md * (md * p.I + p.m * s.nvec[..., 2] + q_margin(p, s))


def mass_matrix_inverse(p: PlanarParams, s: PlanarReducedState) -> np.ndarray:
    """The explicit inverse written entry by entry (independent of :func:`geometry.adjugate`)."""
    N1, N2, M = s.nvec[..., 0], s.nvec[..., 1], s.nvec[..., 2]
    md = p.m + p.delta
    a = md * (p.I + M)
    out = np.empty(s.nvec.shape[:-1] + (3, 3))
    out[..., 0, 0] = a - N1 * N1
    out[..., 0, 1] = out[..., 1, 0] = -N1 * N2
    out[..., 0, 2] = out[..., 2, 0] = md * N2
    out[..., 1, 1] = a - N2 * N2
    out[..., 1, 2] = out[..., 2, 1] = -md * N1
    out[..., 2, 2] = md * md
    return out / mass_matrix_det(p, s)[..., None, None]


def forcing(p: PlanarParams, s: PlanarReducedState) -> np.ndarray:
    """Right-hand side ``m(v, N)`` of the momentum equations."""
    vx, vy, vp = s.v[..., 0], s.v[..., 1], s.v[..., 2]
    N1, N2 = s.nvec[..., 0], s.nvec[..., 1]
    d = p.delta
    return 0.5 * np.stack(
        (N1 * vp * vp - d * vp * vy, N2 * vp * vp + d * vp * vx, vp * (N1 * vx + N2 * vy)), axis=-1)


def aggregate_rates(p: PlanarParams, s: PlanarReducedState) -> np.ndarray:
    """``(N_1', N_2', M') = J v``."""
    vx, vy, vp = s.v[..., 0], s.v[..., 1], s.v[..., 2]
    N1, N2 = s.nvec[..., 0], s.nvec[..., 1]
    d = p.delta
    return -0.5 * np.stack((d * vx + N2 * vp, d * vy - N1 * vp, 2.0 * (N1 * vx + N2 * vy)), axis=-1)


def reduced_rhs(p: PlanarParams, s: PlanarReducedState) -> tuple[np.ndarray, np.ndarray]:
    """``v' = Imat^{-1} m(v, N)``, ``nvec' = J v``.  Inverse via adjugate / closed-form det."""
    inv = geo.adjugate(mass_matrix(p, s)) / mass_matrix_det(p, s)[..., None, None]
    v_dot = np.einsum("...ij,...j->...i", inv, forcing(p, s))
    return v_dot, aggregate_rates(p, s)


def implicit_residual(p: PlanarParams, s: PlanarReducedState, v_dot: np.ndarray) -> np.ndarray:
    """Residuals of the three implicit momentum equations for a given ``v'``."""
    vx, vy, vp = s.v[..., 0], s.v[..., 1], s.v[..., 2]
    ax, ay, ap = v_dot[..., 0], v_dot[..., 1], v_dot[..., 2]
    N1, N2, M = s.nvec[..., 0], s.nvec[..., 1], s.nvec[..., 2]
    d, md = p.delta, p.m + p.delta
    return np.stack((
        md * ax - (0.5 * N1 * vp * vp - 0.5 * d * vp * vy + N2 * ap),
        md * ay - (0.5 * N2 * vp * vp + 0.5 * d * vp * vx - N1 * ap),
        (p.I + M) * ap - (0.5 * vp * (N1 * vx + N2 * vy) + N2 * ax - N1 * ay),
    ), axis=-1)


def reduced_field(p: PlanarParams):
    def f(z):
        v_dot, n_dot = reduced_rhs(p, PlanarReducedState.from_vector(z))
        return np.concatenate((v_dot, n_dot), axis=-1)

    return f


def integrals(p: PlanarParams, s: PlanarReducedState) -> PlanarIntegrals:
    vx, vy, vp = s.v[..., 0], s.v[..., 1], s.v[..., 2]
    N1, N2, M = s.nvec[..., 0], s.nvec[..., 1], s.nvec[..., 2]
    md = p.m + p.delta
    f4 = 0.5 * (p.I + M) * vp * vp + 0.5 * md * (vx * vx + vy * vy) + vp * (N1 * vy - N2 * vx)
    return PlanarIntegrals(md * vx - vp * N2, md * vy + vp * N1, q_margin(p, s), f4)


def measure_density(p: PlanarParams, s: PlanarReducedState) -> np.ndarray:
    return np.sqrt(mass_matrix_det(p, s))


def kinematic_rhs(p: PlanarParams, full: PlanarFullState, spin_z=None) -> KinematicRates:
    """Pose rates, ball-centre velocities and reconstructed ball angular velocities.

    Each ball centre moves at half the plate velocity at its contact point;
    ``w_i = (1/r) e_3 x u_i + c_i e_3`` with ``c_i`` the carried vertical spin
    (taken from ``full.spins`` unless ``spin_z`` is given).
    """
    vx, vy, vp = full.velocity
    off = full.offsets
    plate_at_contact = np.stack((vx - vp * off[:, 1], vy + vp * off[:, 0]), axis=-1)
    u = 0.5 * plate_at_contact
    c = full.spins[:, 2] if spin_z is None else np.asarray(spin_z, dtype=float)
    u3 = np.concatenate((u, np.zeros((len(u), 1))), axis=-1)
    spins = geo.cross(geo.VERTICAL, u3) / p.r + c[:, None] * geo.VERTICAL
    return KinematicRates(np.array([vx, vy, vp]), u, spins)


def phase_field(p: PlanarParams):
    """Closed system on P: reduced dynamics with (N, M) evaluated from ball positions."""
    n = p.n
    deltas = p.deltas

    def f(z):
        z = np.asarray(z, dtype=float)
        vel = z[..., 3:6]
        centers = z[..., 6:6 + 2 * n].reshape(z.shape[:-1] + (n, 2))
        off = centers - z[..., None, 0:2]
        s = PlanarReducedState(vel, _aggregates(deltas, off))
        v_dot, _ = reduced_rhs(p, s)
        vx, vy, vp = vel[..., 0, None], vel[..., 1, None], vel[..., 2, None]
        u = 0.5 * np.stack((vx - vp * off[..., 1], vy + vp * off[..., 0]), axis=-1)
        return np.concatenate((vel, v_dot, u.reshape(z.shape[:-1] + (2 * n,))), axis=-1)

    return f


def reduced_from_phase(p: PlanarParams, z) -> PlanarReducedState:
    z = np.asarray(z, dtype=float)
    centers = z[..., 6:6 + 2 * p.n].reshape(z.shape[:-1] + (p.n, 2))
    return PlanarReducedState(z[..., 3:6], _aggregates(p.deltas, centers - z[..., None, 0:2]))


def kinetic_energy(p: PlanarParams, full: PlanarFullState) -> float:
    """Total kinetic energy summed over plate and balls from full-state velocities."""
    v = full.velocity
    T = 0.5 * p.I * v[2] ** 2 + 0.5 * p.m * (v[0] ** 2 + v[1] ** 2)
    for b, u, w in zip(p.balls, full.center_velocities, full.spins):
        T += 0.5 * b.inertia * float(w @ w) + 0.5 * b.mass * float(u @ u)
    return T


def level_set_det(p: PlanarParams, d: LevelSetParams, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    md, dl = p.m + p.delta, p.delta
    nn = y[..., 1] ** 2 + y[..., 2] ** 2
    return md * (md * p.I + (p.m / dl) * nn + p.m * d.d3 / dl + d.d3)


def level_set_rhs(p: PlanarParams, d: LevelSetParams, y) -> np.ndarray:
    """Closed system in ``(v_phi, N_1, N_2)`` on the level set ``f_1, f_2, f_3 = d``."""
    y = np.asarray(y, dtype=float)
    vp, N1, N2 = y[..., 0], y[..., 1], y[..., 2]
    md = p.m + p.delta
    rot = (p.m + 2.0 * p.delta) / (2.0 * md)
    shift = p.delta / (2.0 * md)
    return np.stack((
        p.m * vp * (N1 * d.d1 + N2 * d.d2) / (2.0 * level_set_det(p, d, y)),
        -rot * N2 * vp - shift * d.d1,
        rot * N1 * vp - shift * d.d2,
    ), axis=-1)


def level_set_field(p: PlanarParams, d: LevelSetParams):
    return lambda y: level_set_rhs(p, d, y)


def level_set_divergence(p: PlanarParams, d: LevelSetParams, y) -> np.ndarray:
    """Closed-form divergence ``m (N_1 d_1 + N_2 d_2) / (2 det Imat)``."""
    y = np.asarray(y, dtype=float)
    return p.m * (y[..., 1] * d.d1 + y[..., 2] * d.d2) / (2.0 * level_set_det(p, d, y))


def level_set_density(p: PlanarParams, d: LevelSetParams, y) -> np.ndarray:
    return np.sqrt(level_set_det(p, d, y))


def level_set_embed(p: PlanarParams, d: LevelSetParams, y) -> PlanarReducedState:
    """Lift ``(v_phi, N_1, N_2)`` to the reduced state on the level set."""
    y = np.asarray(y, dtype=float)
    vp, N1, N2 = y[..., 0], y[..., 1], y[..., 2]
    md = p.m + p.delta
    v = np.stack(((vp * N2 + d.d1) / md, (-vp * N1 + d.d2) / md, vp), axis=-1)
    M = (N1 * N1 + N2 * N2 + d.d3) / p.delta
    return PlanarReducedState(v, np.stack((N1, N2, M), axis=-1))


def level_set_of(p: PlanarParams, s: PlanarReducedState) -> tuple[LevelSetParams, np.ndarray]:
    f = integrals(p, s)
    return LevelSetParams(float(f.f1), float(f.f2), float(f.f3)), np.array(
        [s.v[2], s.nvec[0], s.nvec[1]])


def closed_form_zero_d(p: PlanarParams, d3: float, y0, t) -> np.ndarray:
    """Exact solution of the level-set system for ``d_1 = d_2 = 0``.

    ``v_phi`` is constant and ``(N_1, N_2)`` rotates rigidly at
    ``(m + 2 delta) v_phi / (2 (m + delta))``.  ``d3`` only fixes M and does
    not enter the motion.  Returns shape ``(len(t), 3)`` (or ``(3,)`` for scalar t).
    """
    if d3 <= 0:
        raise ValueError("d3 must be positive")
    vp, N1, N2 = np.asarray(y0, dtype=float)
    t = np.asarray(t, dtype=float)
    w = (p.m + 2.0 * p.delta) * vp / (2.0 * (p.m + p.delta))
    c, s = np.cos(w * t), np.sin(w * t)
    return np.stack((np.full_like(t, vp), c * N1 - s * N2, s * N1 + c * N2), axis=-1)


def pairwise_distances(centers: np.ndarray) -> np.ndarray:
    """All ``|O_iO_j|`` for ``i<j``; ``centers`` shape ``(..., n, 2)``."""
    centers = np.asarray(centers, dtype=float)
    n = centers.shape[-2]
    iu, ju = np.triu_indices(n, 1)
    return np.linalg.norm(centers[..., iu, :] - centers[..., ju, :], axis=-1)


def triangle_residuals(trajectory: Sequence[PlanarFullState] | np.ndarray) -> float:
    """Max over pairs and samples of ``|dist(O_i,O_j)(t) - dist(O_i,O_j)(0)|``.

    Accepts a sequence of full states or an array of centres ``(k, n, 2)``.
    """
    if isinstance(trajectory, np.ndarray):
        centers = trajectory
    else:
        centers = np.array([f.centers for f in trajectory])
    dist = pairwise_distances(centers)
    return float(np.max(np.abs(dist - dist[0]), initial=0.0))


def one_side_margin(p: PlanarParams, centers: np.ndarray) -> float:
    """``min_{i<j} |O_iO_j| - 2r``; non-negative at admissible states."""
    dist = pairwise_distances(centers)
    return float(np.min(dist) - 2.0 * p.r) if dist.size else np.inf
