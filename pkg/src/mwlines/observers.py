"""Plane/velocity observer, Manhattan-World multi-line observer and cascade.

All functions broadcast over leading batch axes. Per-line arrays carry the
line index on the axis just before the component axis, e.g. ``tau`` is
``(..., N, 2)`` and ``chi`` is ``(..., N)``.

The line-observer terms ``T``, ``X`` and ``Q`` are evaluated at the
*measured* ``(tau, c)``, never at the estimates; this is what makes the
error dynamics exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .world_sim import ImuExtrinsics

PSI_FLOOR = 1e-4


class ScaleDegenerate(FloatingPointError):
    """Inverse plane depth estimate too close to zero to recover velocity."""


@dataclass(frozen=True)
class PlaneGains:
    k_s: float = 2.0
    k_rho: float = 20.0

    def __post_init__(self):
        if not (self.k_s > 0 and self.k_rho > 0):
            raise ValueError("plane gains must be positive")


@dataclass(frozen=True)
class ManhattanGains:
    """Line-observer gains; ``k_tau`` and ``k_chi`` may be scalars or per line."""

    k_c: float
    k_tau: float | np.ndarray
    k_chi: float | np.ndarray

    def __post_init__(self):
        for v in (self.k_c, self.k_tau, self.k_chi):
            if not np.all(np.asarray(v) > 0):
                raise ValueError("Manhattan gains must be positive")

    @classmethod
    def from_k_chi(cls, k_chi: float) -> "ManhattanGains":
        """``k_c = k_tau = 2 sqrt(k_chi)``, the setting used for the noiseless runs."""
        k = 2.0 * np.sqrt(k_chi)
        return cls(k_c=k, k_tau=k, k_chi=k_chi)


@dataclass
class PlaneVelState:
    s_hat: np.ndarray
    psi_hat: np.ndarray


@dataclass
class ManhattanEstimate:
    c_hat: np.ndarray
    tau_hat: np.ndarray
    chi_hat: np.ndarray


# --- plane / velocity observer ------------------------------------------------

def _omega_regressor(omega, a_I, ext: ImuExtrinsics):
    """``R_IC a_I + [omega]x^2 t_IC`` as a row-vector regressor."""
    W = geo.skew(omega)
    return np.einsum("ij,...j->...i", ext.R_IC, a_I) + np.einsum("...ij,...j->...i", W @ W, ext.t_IC)


def plane_dynamics(s, psi, m, omega, a_I, ext: ImuExtrinsics):
    """True dynamics of ``(s, psi)``."""
    sm = np.sum(s * m, axis=-1)
    ds = -geo.cross(omega, s) - s * sm[..., None] + _omega_regressor(omega, a_I, ext) * psi[..., None]
    dpsi = -psi * sm
    return ds, dpsi


def plane_observer_rhs(state: PlaneVelState, s, m, omega, a_I, ext: ImuExtrinsics,
                       gains: PlaneGains) -> PlaneVelState:
    """Time derivative of the plane/velocity estimate.

    The motion terms use the measured ``s``; only the innovation
    ``s - s_hat`` involves the estimate.
    """
    psi_hat = np.asarray(state.psi_hat, dtype=float)
    Om = _omega_regressor(omega, a_I, ext)
    sm = np.sum(s * m, axis=-1)
    s_err = s - state.s_hat
    ds = -geo.cross(omega, s) - s * sm[..., None] + Om * psi_hat[..., None] + gains.k_s * s_err
    dpsi = -psi_hat * sm + gains.k_rho * np.sum(Om * s_err, axis=-1)
    return PlaneVelState(ds, dpsi)


# --- Manhattan-World terms ----------------------------------------------------

def mw_Q(c):
    """Jacobian mapping angular velocity to Cayley-parameter rates."""
    c = np.asarray(c, dtype=float)
    c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2]
    Q = geo.matrix3([
        [1 + c1 * c1, c1 * c2 - c3, c1 * c3 + c2],
        [c1 * c2 + c3, 1 + c2 * c2, c2 * c3 - c1],
        [c1 * c3 - c2, c2 * c3 + c1, 1 + c3 * c3],
    ])
    return -0.5 * Q


def _mw_geometry(tau, R, axis):
    """Moments ``n``, ``X = n x d_j`` and the kept rows of ``R X``."""
    R = np.asarray(R, dtype=float)
    axis = np.asarray(axis)
    lead = np.broadcast_shapes(axis.shape[:-1], R.shape[:-2]) if axis.ndim else R.shape[:-2]
    axis = np.broadcast_to(axis, lead + axis.shape[-1:])
    n = geo.expand_moment(tau, axis) @ R
    dj = np.eye(3)[axis] @ R
    X = geo.cross(n, dj)
    RX = X @ np.swapaxes(R, -1, -2)
    return n, X, geo.reduce_moment(RX, axis)


def mw_terms(tau, R, axis):
    """``(T, X)`` for every line given the Manhattan frame ``R``.

    ``X = n x d_j`` with shape ``(..., N, 3)``; ``T`` has shape ``(..., N, 3, 2)``
    and its transpose is made of the rows of ``R (n x d_j) n^T`` that survive
    the reduction (the row along ``axis`` is identically zero).
    """
    n, X, RX_kept = _mw_geometry(tau, R, axis)
    T = n[..., :, None] * RX_kept[..., None, :]
    return T, X


def mw_products(tau, R, axis, nu):
    """``(T^T nu, X^T nu)`` without forming ``T``.

    ``T = n (R X)_kept^T`` is an outer product, so ``T^T nu = (n . nu) (R X)_kept``.
    """
    nu = np.asarray(nu, dtype=float)[..., None, :]
    n, X, RX_kept = _mw_geometry(tau, R, axis)
    Ttnu = np.sum(n * nu, axis=-1)[..., None] * RX_kept
    return Ttnu, np.sum(X * nu, axis=-1)


def _single_or_batch(tau, c, axis):
    tau = np.asarray(tau, dtype=float)
    axis = np.asarray(axis)
    single = tau.ndim == 1
    if single:
        tau, axis = tau[None], axis[None]
    T, X = mw_terms(tau, geo.rotation_from_cayley(c), axis)
    return (T[0], X[0]) if single else (T, X)


def mw_X(tau, c, axis):
    """``n x d_j``: the regressor of the inverse-depth dynamics."""
    return _single_or_batch(tau, c, axis)[1]


def mw_T(tau, c, axis):
    """``T`` such that the reduced moment evolves as ``T^T nu chi``."""
    return _single_or_batch(tau, c, axis)[0]


def mw_observer_rhs(est: ManhattanEstimate, c, tau, axis, nu, omega,
                    gains: ManhattanGains) -> ManhattanEstimate:
    """Time derivative of the Manhattan-World estimate."""
    c = np.asarray(c, dtype=float)
    nu = np.asarray(nu, dtype=float)
    Ttnu, Xtnu = mw_products(tau, geo.rotation_from_cayley(c), axis, nu)
    tau_err = tau - est.tau_hat
    k_tau = np.asarray(gains.k_tau, dtype=float)
    k_chi = np.asarray(gains.k_chi, dtype=float)
    dc = (mw_Q(c) @ np.asarray(omega, dtype=float)[..., None])[..., 0] + gains.k_c * (c - est.c_hat)
    dtau = Ttnu * est.chi_hat[..., None] + k_tau[..., None] * tau_err
    dchi = Xtnu * est.chi_hat**2 + k_chi * np.sum(Ttnu * tau_err, axis=-1)
    return ManhattanEstimate(dc, dtau, dchi)


def mw_error_rhs(c_err, tau_err, chi_err, chi, tau, c, axis, nu, gains: ManhattanGains):
    """Error dynamics of the line observer, written directly on the errors."""
    Ttnu, Xtnu = mw_products(tau, geo.rotation_from_cayley(c), axis, nu)
    chi_hat = chi - chi_err
    k_tau = np.asarray(gains.k_tau, dtype=float)
    dc = -gains.k_c * c_err
    dtau = Ttnu * chi_err[..., None] - k_tau[..., None] * tau_err
    dchi = Xtnu * (chi + chi_hat) * chi_err - gains.k_chi * np.sum(Ttnu * tau_err, axis=-1)
    return dc, dtau, dchi


def lyapunov_V(c_err, tau_err, chi_err, k_chi):
    """``0.5 * sum(|tau_err|^2 + chi_err^2 / k_chi) + 0.5 * |c_err|^2``."""
    tau_err = np.asarray(tau_err, dtype=float)
    chi_err = np.asarray(chi_err, dtype=float)
    c_err = np.asarray(c_err, dtype=float)
    lines = np.sum(tau_err**2, axis=(-2, -1)) + np.sum(chi_err**2 / np.asarray(k_chi, dtype=float), axis=-1)
    return 0.5 * lines + 0.5 * np.sum(c_err**2, axis=-1)


def stability_conditions(tau, c, axis, nu, chi_hat):
    """Per-line masks for the two sufficient conditions of asymptotic stability.

    Returns ``(sign_ok, excited)``: ``sign_ok`` requires ``X^T nu <= 0`` when
    ``chi_hat > 0`` and ``X^T nu == 0`` otherwise; ``excited`` requires
    ``nu^T T T^T nu > 0``.
    """
    Ttnu, Xtnu = mw_products(tau, geo.rotation_from_cayley(c), axis, nu)
    sign_ok = np.where(chi_hat > 0, Xtnu <= 0, Xtnu == 0)
    excited = np.sum(Ttnu**2, axis=-1) > 0
    return sign_ok, excited


# --- cascade ------------------------------------------------------------------

def velocity_estimate(plane: PlaneVelState, psi_floor: float = PSI_FLOOR):
    """``nu_hat = s_hat / psi_hat`` and the mask of rows where it is undefined."""
    psi = np.asarray(plane.psi_hat, dtype=float)
    bad = ~(np.abs(psi) > psi_floor)
    safe = np.where(bad, 1.0, psi)
    return plane.s_hat / safe[..., None], bad


def cascade_rhs_masked(plane: PlaneVelState, mw: ManhattanEstimate, frame, ext: ImuExtrinsics,
                       plane_gains: PlaneGains, mw_gains: ManhattanGains,
                       psi_floor: float = PSI_FLOOR, nu_override=None):
    """Cascade derivatives plus the mask of scale-degenerate rows.

    Rows whose ``|psi_hat| <= psi_floor`` get a zero line-observer derivative
    (the update is skipped). ``nu_override`` replaces the estimated velocity,
    which turns the cascade into the standalone line observer.
    """
    dplane = plane_observer_rhs(plane, frame.s, frame.m, frame.omega, frame.a_I, ext, plane_gains)
    if nu_override is None:
        nu_hat, bad = velocity_estimate(plane, psi_floor)
    else:
        nu_hat = np.asarray(nu_override, dtype=float)
        bad = np.zeros(np.shape(plane.psi_hat), dtype=bool)
    dmw = mw_observer_rhs(mw, frame.c, frame.tau, frame.axes, nu_hat, frame.omega, mw_gains)
    if np.any(bad):
        keep = ~bad
        dmw = ManhattanEstimate(
            dmw.c_hat * keep[..., None],
            dmw.tau_hat * keep[..., None, None],
            dmw.chi_hat * keep[..., None],
        )
    return dplane, dmw, bad


def cascade_rhs(plane: PlaneVelState, mw: ManhattanEstimate, frame, ext: ImuExtrinsics,
                plane_gains: PlaneGains, mw_gains: ManhattanGains,
                psi_floor: float = PSI_FLOOR, nu_override=None):
    """Joint derivative of the plane observer and the line observer.

    The line observer is driven by ``(s_hat / psi_hat, omega)``.

    Raises
    ------
    ScaleDegenerate
        If ``|psi_hat| <= psi_floor``.
    """
    dplane, dmw, bad = cascade_rhs_masked(plane, mw, frame, ext, plane_gains, mw_gains,
                                          psi_floor, nu_override)
    if np.any(bad):
        raise ScaleDegenerate(f"|psi_hat| <= {psi_floor}")
    return dplane, dmw
