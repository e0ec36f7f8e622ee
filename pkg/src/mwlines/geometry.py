"""Rotation and Pluecker-line primitives.

Every function broadcasts over leading axes: a ``(..., 3)`` vector or a
``(..., 3, 3)`` matrix argument yields a result with the same leading shape.
This lets the simulator push whole batches of trials through the same code
path used for a single line.

Axis labels of Manhattan directions are 0-based (0, 1, 2). A reduced moment
keeps the two components of ``o = R n`` whose index differs from the line's
axis, in ascending order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DET_EPS = 1e-12
AXIS_TOL = 1e-6
DEGENERATE_TOL = 1e-9

# KEEP[j] = indices of o that survive for a line along direction j
KEEP = np.array([[1, 2], [0, 2], [0, 1]])
# SELECT[j] is the 3x2 one-hot map from a reduced moment to o for axis j
SELECT = np.zeros((3, 3, 2))
for _j in range(3):
    SELECT[_j, KEEP[_j], [0, 1]] = 1.0


class GeometryError(ValueError):
    pass


class SingularRotation(GeometryError):
    """Rotation of (numerically) 180 degrees, outside the Cayley chart."""


class AxisMismatch(GeometryError):
    """Moment has a non-zero component along the line's assigned direction."""


class DegenerateLine(GeometryError):
    """Line passes through the optical center."""


@dataclass(frozen=True)
class PlueckerLine:
    """Binormalized Pluecker line: unit direction, unit moment, depth."""

    d: np.ndarray
    n: np.ndarray
    l: float


def cross(a, b):
    """``np.cross`` for trailing 3-vectors without its axis bookkeeping."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def matrix3(rows):
    """Assemble a ``(..., 3, 3)`` array from nested per-entry arrays."""
    shape = np.broadcast_shapes(*(np.shape(e) for row in rows for e in row))
    out = np.empty(shape + (3, 3))
    for i, row in enumerate(rows):
        for j, e in enumerate(row):
            out[..., i, j] = e
    return out


def skew(v):
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -z, y
    out[..., 1, 0], out[..., 1, 2] = z, -x
    out[..., 2, 0], out[..., 2, 1] = -y, x
    return out


def inv3(a, eps=DET_EPS):
    """Closed-form 3x3 inverse via the adjugate.

    Returns ``(inverse, det)``. Entries with ``|det| < eps`` come back as NaN
    so that callers can decide whether to raise.
    """
    a = np.asarray(a, dtype=float)
    a00, a01, a02 = a[..., 0, 0], a[..., 0, 1], a[..., 0, 2]
    a10, a11, a12 = a[..., 1, 0], a[..., 1, 1], a[..., 1, 2]
    a20, a21, a22 = a[..., 2, 0], a[..., 2, 1], a[..., 2, 2]
    c00 = a11 * a22 - a12 * a21
    c01 = a12 * a20 - a10 * a22
    c02 = a10 * a21 - a11 * a20
    det = a00 * c00 + a01 * c01 + a02 * c02
    adj = matrix3([
        [c00, a02 * a21 - a01 * a22, a01 * a12 - a02 * a11],
        [c01, a00 * a22 - a02 * a20, a02 * a10 - a00 * a12],
        [c02, a01 * a20 - a00 * a21, a00 * a11 - a01 * a10],
    ])
    ok = np.abs(det) >= eps
    safe = np.where(ok, det, 1.0)
    inv = np.where(ok[..., None, None], adj / safe[..., None, None], np.nan)
    return inv, det


def cayley_from_rotation(R):
    """Cayley parameters of a rotation, ``G = (R - I)(R + I)^-1``.

    The parameters are read off the skew-symmetric pattern::

        G = [[  0, -c3,  c2],
             [ c3,   0, -c1],
             [-c2,  c1,   0]]

    i.e. ``c1 = G[2, 1]``, ``c2 = G[0, 2]``, ``c3 = G[1, 0]``. For a rotation
    by ``theta`` about a unit axis ``u`` this gives ``c = tan(theta / 2) u``.

    Raises
    ------
    SingularRotation
        If ``|det(R + I)| < 1e-12`` for any matrix in the batch.
    """
    G = cayley_matrix(R)
    return G[..., [2, 0, 1], [1, 2, 0]]


def cayley_matrix(R):
    """The full matrix ``G`` (useful to check skew-symmetry)."""
    R = np.asarray(R, dtype=float)
    eye = np.eye(3)
    inv, det = inv3(R + eye)
    if np.any(np.abs(det) < DET_EPS):
        raise SingularRotation("rotation of 180 degrees has no Cayley parameters")
    return (R - eye) @ inv


def rotation_from_cayley(c):
    """Inverse Cayley transform, ``R = (I + G)(I - G)^-1``.

    Uses the expanded form ``((1 - |c|^2) I + 2 c c^T + 2 [c]x) / (1 + |c|^2)``,
    which is exact for every finite ``c``.
    """
    c = np.asarray(c, dtype=float)
    cc = np.sum(c * c, axis=-1)[..., None, None]
    outer = c[..., :, None] * c[..., None, :]
    return ((1.0 - cc) * np.eye(3) + 2.0 * outer + 2.0 * skew(c)) / (1.0 + cc)


def reduce_moment(o, axis):
    """Drop component ``axis`` of ``o``; no consistency check."""
    o = np.asarray(o, dtype=float)
    return (o[..., None, :] @ SELECT[np.asarray(axis)])[..., 0, :]


def expand_moment(tau, axis):
    """Zero-pad a reduced moment back to the 3-vector ``o``."""
    tau = np.asarray(tau, dtype=float)
    return (SELECT[np.asarray(axis)] @ tau[..., None])[..., 0]


def project_moment(R, n, axis, tol=AXIS_TOL):
    """Reduced moment of ``n`` in the Manhattan frame ``R``.

    Computes ``o = R n`` and returns the two components whose index differs
    from ``axis``.

    Raises
    ------
    AxisMismatch
        If ``|o[axis]| > tol``, i.e. the line does not belong to ``axis``.
    """
    o = np.einsum("...ij,...j->...i", np.asarray(R, dtype=float), np.asarray(n, dtype=float))
    ax = np.broadcast_to(np.asarray(axis), o.shape[:-1])
    along = np.take_along_axis(o, ax[..., None], axis=-1)[..., 0]
    if np.any(np.abs(along) > tol):
        raise AxisMismatch(f"moment component along direction {axis} is {np.max(np.abs(along)):.3g}")
    return reduce_moment(o, ax)


def reconstruct_moment(tau, R, axis):
    """Moment vector ``n = sum_j o_j d_j`` with ``d_j`` the rows of ``R``."""
    o = expand_moment(tau, axis)
    return (o[..., None, :] @ np.asarray(R, dtype=float))[..., 0, :]


def line_from_point_direction(p, d):
    """Pluecker line through ``p`` with unit direction ``d``.

    The moment is ``p x d`` normalized; its norm is the depth.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    m = cross(p, d)
    depth = float(np.linalg.norm(m))
    if depth <= DEGENERATE_TOL:
        raise DegenerateLine("line passes through the optical center")
    return PlueckerLine(d=d.copy(), n=m / depth, l=depth)


def rotation_angle(R):
    """Rotation angle in radians, in ``[0, pi]``."""
    R = np.asarray(R, dtype=float)
    cos = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    ortho = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(3), axis=(-2, -1))
    return bool(np.all(ortho < tol) and np.all(np.abs(np.linalg.det(R) - 1.0) < tol))
