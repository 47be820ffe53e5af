"""Fixed-size 3-vector / 3x3-matrix kernel.

Vectors are numpy arrays of shape ``(..., 3)`` and matrices ``(..., 3, 3)``;
every helper broadcasts over leading axes so that vector fields can be
evaluated on whole batches of states at once.
"""

from __future__ import annotations

import numpy as np

SYM_TOL = 1e-14
UNIT_TOL = 1e-12
UNIT_REJECT_TOL = 1e-3
ROT_TOL = 1e-9

E3 = np.eye(3)
VERTICAL = np.array([0.0, 0.0, 1.0])


class GeometryError(ValueError):
    """Raised when an input violates a structural invariant (skew, unit, SO(3))."""


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Broadcasting cross product; noticeably cheaper than ``np.cross`` on small arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = ay * bz - az * by
    out[..., 1] = az * bx - ax * bz
    out[..., 2] = ax * by - ay * bx
    return out


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def hat(a: np.ndarray) -> np.ndarray:
    """Map a vector to the skew matrix with ``hat(a) @ v == a x v``."""
    a = np.asarray(a, dtype=float)
    z = np.zeros_like(a[..., 0])
    x, y, w = a[..., 0], a[..., 1], a[..., 2]
    return np.stack(
        (
            np.stack((z, -w, y), axis=-1),
            np.stack((w, z, -x), axis=-1),
            np.stack((-y, x, z), axis=-1),
        ),
        axis=-2,
    )


def vee(S: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    """Inverse of :func:`hat`.

    Raises:
        GeometryError: if the symmetric part of ``S`` exceeds ``tol`` (absolute).
    """
    S = np.asarray(S, dtype=float)
    sym = 0.5 * (S + np.swapaxes(S, -1, -2))
    if np.max(np.abs(sym), initial=0.0) > tol:
        raise GeometryError("matrix is not skew-symmetric")
    return np.stack((S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]), axis=-1)


def outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.asarray(a)[..., :, None] * np.asarray(b)[..., None, :]


def projector(gamma: np.ndarray) -> np.ndarray:
    """``E - gamma (x) gamma``: orthogonal projection onto the plane normal to a unit vector."""
    return E3 - outer(gamma, gamma)


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def lemma_symmetric_part(A: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Symmetric part of the Jacobian of ``w -> (A w) x w`` at ``omega``.

    For symmetric ``A`` this is ``0.5 * [A, hat(omega)]``; the closed form is
    what we return, the finite-difference cross-check lives in the tests.
    """
    return 0.5 * commutator(A, hat(omega))


def check_symmetric(A: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (3, 3):
        raise GeometryError(f"expected a 3x3 matrix, got shape {A.shape}")
    if np.max(np.abs(A - np.swapaxes(A, -1, -2)), initial=0.0) > tol:
        raise GeometryError("matrix is not symmetric")
    return A


def unit(v: np.ndarray, reject_tol: float = UNIT_REJECT_TOL) -> np.ndarray:
    """Renormalize ``v`` to unit length.

    Small deviations (integration drift) are silently corrected; a deviation
    larger than ``reject_tol`` indicates a corrupted state and is rejected.
    """
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if not np.all(np.isfinite(v)) or np.max(np.abs(norm - 1.0), initial=0.0) > reject_tol:
        raise GeometryError(f"vector norm deviates from 1 by more than {reject_tol}")
    return v / norm


def orthogonality_defect(g: np.ndarray) -> float:
    """Max-norm of ``g^T g - E`` over all matrices in the batch."""
    g = np.asarray(g, dtype=float)
    return float(np.max(np.abs(np.swapaxes(g, -1, -2) @ g - E3), initial=0.0))


def check_rotation(g: np.ndarray, tol: float = ROT_TOL) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape[-2:] != (3, 3):
        raise GeometryError(f"expected a 3x3 matrix, got shape {g.shape}")
    if orthogonality_defect(g) > tol or np.any(np.linalg.det(g) <= 0):
        raise GeometryError("matrix is not a proper rotation")
    return g


def reorthonormalize(g: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns of each matrix (keeps the first column direction)."""
    g = np.array(g, dtype=float)
    c0 = g[..., :, 0]
    c0 = c0 / np.linalg.norm(c0, axis=-1, keepdims=True)
    c1 = g[..., :, 1] - dot(g[..., :, 1], c0)[..., None] * c0
    c1 = c1 / np.linalg.norm(c1, axis=-1, keepdims=True)
    c2 = cross(c0, c1)
    return np.stack((c0, c1, c2), axis=-1)


def rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula for the rotation by ``angle`` about ``axis``."""
    k = hat(np.asarray(axis, dtype=float) / np.linalg.norm(axis))
    return E3 + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def random_unit(rng: np.random.Generator, size: int | tuple = ()) -> np.ndarray:
    """Uniform samples on S^2 from normalized Gaussian triples."""
    shape = (size,) if isinstance(size, int) else tuple(size)
    v = rng.standard_normal(shape + (3,))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def adjugate(A: np.ndarray) -> np.ndarray:
    """Closed-form adjugate of 3x3 matrices (``A @ adjugate(A) == det(A) E``)."""
    A = np.asarray(A, dtype=float)
    c0, c1, c2 = A[..., :, 0], A[..., :, 1], A[..., :, 2]
    # rows of the adjugate are the pairwise cross products of the columns
    return np.stack((cross(c1, c2), cross(c2, c0), cross(c0, c1)), axis=-2)


def det3(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return dot(A[..., :, 0], cross(A[..., :, 1], A[..., :, 2]))
