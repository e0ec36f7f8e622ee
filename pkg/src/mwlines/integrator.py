"""Fixed-step explicit integration shared by the simulator and the observers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

RK4 = "rk4"
EULER = "euler"


class NonFiniteState(FloatingPointError):
    """An integration step produced NaN or Inf."""


class ZeroNorm(ValueError):
    """A unit-vector block collapsed to (numerically) zero."""


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1e-3
    method: str = RK4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.method not in (RK4, EULER):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class StateLayout:
    """Named blocks laid out along the last axis of a flat state array.

    ``blocks`` maps a name to the block's shape, e.g. ``{"c": (3,),
    "tau": (6, 2), "chi": (6,)}``. Blocks listed in ``unit`` hold unit vectors
    along their last axis and are rescaled by :func:`renormalize_rotation_block`.
    """

    blocks: dict[str, tuple[int, ...]]
    unit: tuple[str, ...] = ()
    slices: dict[str, slice] = field(init=False)
    size: int = field(init=False)

    def __post_init__(self):
        self.slices = {}
        start = 0
        for name, shape in self.blocks.items():
            n = int(np.prod(shape, dtype=int))
            self.slices[name] = slice(start, start + n)
            start += n
        self.size = start
        for name in self.unit:
            if name not in self.blocks:
                raise KeyError(name)

    def pack(self, **arrays) -> np.ndarray:
        missing = set(self.blocks) - set(arrays)
        if missing:
            raise KeyError(f"missing blocks: {sorted(missing)}")
        parts, leads = {}, []
        for name, shape in self.blocks.items():
            a = np.asarray(arrays[name], dtype=float)
            k = a.ndim - len(shape)
            if k < 0 or a.shape[k:] != tuple(shape):
                raise ValueError(f"block {name!r} has shape {a.shape}, expected (..., *{shape})")
            parts[name] = a
            leads.append(a.shape[:k])
        lead = np.broadcast_shapes(*leads)
        out = np.empty(lead + (self.size,))
        for name, shape in self.blocks.items():
            a = np.broadcast_to(parts[name], lead + tuple(shape))
            out[..., self.slices[name]] = a.reshape(lead + (-1,))
        return out

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Views of each block, reshaped to ``(..., *shape)``."""
        lead = x.shape[:-1]
        return {
            name: x[..., self.slices[name]].reshape(lead + tuple(shape))
            for name, shape in self.blocks.items()
        }


def step(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    state: np.ndarray,
    t: float,
    cfg: StepConfig,
    check_finite: bool = True,
) -> np.ndarray:
    """Advance ``state`` from ``t`` to ``t + cfg.dt``.

    ``rhs(t, x)`` must return an array of the same shape as ``x``. The RK4
    stages are evaluated at ``t``, ``t + dt/2`` (twice) and ``t + dt``.

    Raises
    ------
    NonFiniteState
        If ``check_finite`` and any output component is NaN or Inf.
    """
    dt = cfg.dt
    x = np.asarray(state, dtype=float)
    if cfg.method == RK4:
        k1 = rhs(t, x)
        k2 = rhs(t + 0.5 * dt, x + (0.5 * dt) * k1)
        k3 = rhs(t + 0.5 * dt, x + (0.5 * dt) * k2)
        k4 = rhs(t + dt, x + dt * k3)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        out = x + dt * rhs(t, x)
    if check_finite and not np.all(np.isfinite(out)):
        raise NonFiniteState(f"non-finite state after step at t={t:.6g}")
    return out


def normalize_rows(v, eps=1e-12):
    """Rescale vectors along the last axis to unit norm."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm < eps):
        raise ZeroNorm("cannot normalize a zero vector")
    return v / norm


def renormalize_rotation_block(state: np.ndarray, layout: StateLayout) -> np.ndarray:
    """Rescale every unit-vector block of ``state`` to unit norm.

    Blocks that are already unit within 1e-12 are left bit-for-bit unchanged.
    """
    out = np.array(state, dtype=float, copy=True)
    blocks = layout.unpack(out)
    for name in layout.unit:
        v = blocks[name]
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.any(norm < 1e-12):
            raise ZeroNorm(f"block {name!r} has zero norm")
        scaled = np.where(np.abs(norm - 1.0) <= 1e-12, v, v / norm)
        out[..., layout.slices[name]] = scaled.reshape(out.shape[:-1] + (-1,))
    return out


def orthonormalize(R):
    """Nearest rotation matrix (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(R, dtype=float))
    return u @ vt


def polish_rotation(R):
    """One Newton-Schulz step towards the polar factor, ``R (3I - R^T R) / 2``.

    Quadratically convergent, so a matrix that is orthonormal up to ``e``
    comes back orthonormal up to ``O(e^2)``. Meant for the tiny drift of a
    single integration step; use :func:`orthonormalize` otherwise.
    """
    R = np.asarray(R, dtype=float)
    return R @ (1.5 * np.eye(3) - 0.5 * (np.swapaxes(R, -1, -2) @ R))
