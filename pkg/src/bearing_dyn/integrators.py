"""Fixed-step RK4 integration and tangent-flow (variational) propagation.

A *field* is any callable ``f(z) -> dz/dt`` on numpy arrays.  Fields in this
package are autonomous and broadcast over leading axes, which the
finite-difference Jacobian exploits by evaluating all ``2d`` perturbed states
in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import orthogonality_defect, reorthonormalize

Field = Callable[[np.ndarray], np.ndarray]
# observer(step_index, t, state) -> replacement state or None
Observer = Callable[[int, float, np.ndarray], Optional[np.ndarray]]

FD_STEP = 1e-6


class NonFiniteFieldError(FloatingPointError):
    def __init__(self, state: np.ndarray):
        super().__init__(f"vector field is not finite at state {np.array2string(np.asarray(state))}")
        self.state = state


class IntegrationAborted(RuntimeError):
    """Raised by an observer to stop a run (e.g. the state left its admissible region)."""


@dataclass
class FlowResult:
    times: np.ndarray
    states: np.ndarray
    h: float
    jacobians: Optional[np.ndarray] = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _eval(field: Field, z: np.ndarray) -> np.ndarray:
    dz = field(z)
    if not np.all(np.isfinite(dz)):
        raise NonFiniteFieldError(z)
    return dz


def rk4_step(field: Field, state: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of size ``h``."""
    k1 = _eval(field, state)
    k2 = _eval(field, state + 0.5 * h * k1)
    k3 = _eval(field, state + 0.5 * h * k2)
    k4 = _eval(field, state + h * k3)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_schedule(h: float, t_end: float) -> list[float]:
    """Step sizes covering ``[0, t_end]``: whole steps plus an exact final partial step."""
    if h <= 0:
        raise ValueError("step size must be positive")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    ratio = t_end / h
    n = int(round(ratio))
    if abs(ratio - n) > 1e-9 * max(1.0, ratio):
        n = int(np.floor(ratio))
    steps = [h] * n
    rem = t_end - n * h
    if rem > 1e-12 * h:
        steps.append(rem)
    return steps


def integrate(
    field: Field,
    state: np.ndarray,
    h: float,
    t_end: float,
    observers: Sequence[Observer] = (),
    sample_every: int = 1,
) -> FlowResult:
    """Integrate ``field`` from ``state`` over ``[0, t_end]`` with fixed-step RK4.

    States are sampled at t=0, every ``sample_every`` steps, and at ``t_end``.
    Observers run after every step and may return a replacement state.
    """
    z = np.array(state, dtype=float)
    steps = step_schedule(h, t_end)
    times, states = [0.0], [z.copy()]
    t = 0.0
    for k, dt in enumerate(steps, start=1):
        z = rk4_step(field, z, dt)
        t = t_end if k == len(steps) else k * h
        for obs in observers:
            new = obs(k, t, z)
            if new is not None:
                z = new
        if k % sample_every == 0 or k == len(steps):
            times.append(t)
            states.append(z.copy())
    return FlowResult(np.array(times), np.array(states), h)


def fd_jacobian(field: Field, z: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference Jacobian, step scaled by ``max(1, |z_j|)``."""
    z = np.asarray(z, dtype=float)
    d = z.size
    hs = step * np.maximum(1.0, np.abs(z))
    pert = np.diag(hs)
    F = field(np.concatenate((z + pert, z - pert)))
    return ((F[:d] - F[d:]) / (2.0 * hs)[:, None]).T


def tangent_flow(
    field: Field,
    state: np.ndarray,
    h: float,
    t_end: float,
    sample_every: int = 1,
    fd_step: float = FD_STEP,
) -> FlowResult:
    """Integrate the state together with its flow Jacobian ``J`` (``J' = Df(z) J``, ``J(0) = E``).

    Both use the same RK4 tableau; ``Df`` is taken by central differences at
    every stage state.
    """
    z = np.array(state, dtype=float)
    d = z.size

    def aug(z_, J_):
        return _eval(field, z_), fd_jacobian(field, z_, fd_step) @ J_

    J = np.eye(d)
    steps = step_schedule(h, t_end)
    times, states, jacs = [0.0], [z.copy()], [J.copy()]
    t = 0.0
    for k, dt in enumerate(steps, start=1):
        a1, b1 = aug(z, J)
        a2, b2 = aug(z + 0.5 * dt * a1, J + 0.5 * dt * b1)
        a3, b3 = aug(z + 0.5 * dt * a2, J + 0.5 * dt * b2)
        a4, b4 = aug(z + dt * a3, J + dt * b3)
        z = z + (dt / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        J = J + (dt / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        t = t_end if k == len(steps) else k * h
        if k % sample_every == 0 or k == len(steps):
            times.append(t)
            states.append(z.copy())
            jacs.append(J.copy())
    return FlowResult(np.array(times), np.array(states), h, np.array(jacs))


class Renormalizer:
    """Observer that rescales selected unit-vector blocks every ``every`` steps.

    ``blocks`` is a list of slices into the flat state, each covering one
    3-vector.  Only applied when the deviation exceeds ``threshold``.
    """

    def __init__(self, blocks: Sequence[slice], every: int = 100, threshold: float = 1e-10):
        self.blocks = list(blocks)
        self.every = every
        self.threshold = threshold
        self.applied = 0

    def __call__(self, step: int, t: float, z: np.ndarray):
        if step % self.every:
            return None
        out = None
        for sl in self.blocks:
            v = z[..., sl]
            norm = np.linalg.norm(v, axis=-1, keepdims=True)
            if np.max(np.abs(norm - 1.0)) > self.threshold:
                if out is None:
                    out = z.copy()
                out[..., sl] = v / norm
        if out is not None:
            self.applied += 1
        return out


class Reorthonormalizer:
    """Observer that re-orthonormalizes 3x3 rotation blocks (Gram-Schmidt on columns)."""

    def __init__(self, blocks: Sequence[slice], every: int = 100, threshold: float = 1e-10):
        self.blocks = list(blocks)
        self.every = every
        self.threshold = threshold
        self.applied = 0

    def __call__(self, step: int, t: float, z: np.ndarray):
        if step % self.every:
            return None
        out = None
        for sl in self.blocks:
            g = z[..., sl].reshape(z.shape[:-1] + (3, 3))
            if orthogonality_defect(g) > self.threshold:
                if out is None:
                    out = z.copy()
                out[..., sl] = reorthonormalize(g).reshape(z.shape[:-1] + (9,))
        if out is not None:
            self.applied += 1
        return out
