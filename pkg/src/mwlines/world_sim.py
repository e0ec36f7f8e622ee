"""Ground-truth world: static Manhattan scene, camera motion, measurements.

Conventions
-----------
The world frame is the initial camera frame. A :class:`CameraPose` stores
the world-to-camera rotation ``R`` and the camera position ``t`` so that a
world point maps to ``P_c = R (P_w - t)``.

The twist ``(nu, omega)`` fed to the observers follows the line-kinematics
convention: a static world point moves in the camera frame as
``dP_c/dt = nu + omega x P_c``. Hence the pose evolves as ``dR/dt = [omega]x R``
and ``dt/dt = -R^T nu``, and line directions obey ``dd/dt = omega x d``.

The plane is ``m^T P_c = rho`` with ``m`` pointing from the camera towards the
plane (``rho > 0`` when the plane is in front). With the same twist this gives
``d(psi)/dt = -psi s^T m`` for ``psi = 1/rho`` and ``s = nu psi``.

The IMU acceleration ``a_I`` is synthesized as the signal that closes the
plane kinematics: ``R_IC a_I + [omega]x^2 t_IC = d(nu)/dt + omega x nu``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import geometry as geo
from .integrator import polish_rotation

DEPTH_EPS = 1e-6
GRAVITY = 9.80665
CUBE_SIDE = 25.0
CUBE_CENTER = (0.0, 0.0, 17.5)


class DepthSingularity(ValueError):
    """A line (or the plane) reached zero depth."""


class RetryExhausted(RuntimeError):
    pass


@dataclass
class WorldScene:
    """Static scene expressed in the world (= initial camera) frame.

    All array fields may carry a common leading batch axis.

    Attributes
    ----------
    directions : (..., 3, 3)
        Manhattan basis, rows ``d_1, d_2, d_3``.
    anchors : (..., N, 3)
        One point on each line.
    axes : (..., N) int
        Direction label of each line, 0-based.
    plane_normal : (..., 3)
    plane_offset : (...)
    seed : int or None
    """

    directions: np.ndarray
    anchors: np.ndarray
    axes: np.ndarray
    plane_normal: np.ndarray
    plane_offset: np.ndarray
    seed: int | None = None

    @property
    def n_lines(self) -> int:
        return self.anchors.shape[-2]

    def line_directions(self) -> np.ndarray:
        """World direction of every line, shape ``(..., N, 3)``."""
        idx = np.broadcast_to(self.axes[..., None], self.axes.shape + (3,))
        return np.take_along_axis(self.directions, idx, axis=-2)


def stack_scenes(scenes: list[WorldScene]) -> WorldScene:
    return WorldScene(
        directions=np.stack([s.directions for s in scenes]),
        anchors=np.stack([s.anchors for s in scenes]),
        axes=np.stack([s.axes for s in scenes]),
        plane_normal=np.stack([s.plane_normal for s in scenes]),
        plane_offset=np.array([s.plane_offset for s in scenes], dtype=float),
        seed=None,
    )


@dataclass
class CameraPose:
    R: np.ndarray
    t: np.ndarray

    @classmethod
    def identity(cls, batch: tuple[int, ...] = ()) -> "CameraPose":
        return cls(np.broadcast_to(np.eye(3), batch + (3, 3)).copy(), np.zeros(batch + (3,)))


@dataclass
class ImuExtrinsics:
    R_IC: np.ndarray = field(default_factory=lambda: np.eye(3))
    t_IC: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g: float = GRAVITY

    def __post_init__(self):
        self.R_IC = np.asarray(self.R_IC, dtype=float)
        self.t_IC = np.asarray(self.t_IC, dtype=float)
        if not geo.is_rotation(self.R_IC):
            raise ValueError("R_IC is not a rotation matrix")


@dataclass
class VelocityProfile:
    """Per-axis sinusoidal twist ``offset + amp * sin(freq * t + phase)``.

    Linear and angular parts have independent parameters; every field is a
    ``(..., 3)`` array so a batch of trials can share one profile object.
    """

    lin_amp: np.ndarray
    lin_freq: np.ndarray
    lin_phase: np.ndarray
    ang_amp: np.ndarray
    ang_freq: np.ndarray
    ang_phase: np.ndarray
    lin_offset: np.ndarray | float = 0.0
    ang_offset: np.ndarray | float = 0.0

    def __post_init__(self):
        for name in ("lin_amp", "lin_freq", "lin_phase", "ang_amp", "ang_freq", "ang_phase",
                     "lin_offset", "ang_offset"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def nu(self, t):
        return self.lin_offset + self.lin_amp * np.sin(self.lin_freq * t + self.lin_phase)

    def nu_dot(self, t):
        return self.lin_amp * self.lin_freq * np.cos(self.lin_freq * t + self.lin_phase)

    def omega(self, t):
        return self.ang_offset + self.ang_amp * np.sin(self.ang_freq * t + self.ang_phase)

    def twist(self, t):
        return self.nu(t), self.omega(t)

    def scaled(self, lin: float = 1.0, ang: float = 1.0) -> "VelocityProfile":
        return replace(
            self,
            lin_amp=self.lin_amp * lin,
            lin_offset=self.lin_offset * lin,
            ang_amp=self.ang_amp * ang,
            ang_offset=self.ang_offset * ang,
        )

    def max_norms(self, duration: float, ext: ImuExtrinsics | None = None, samples: int = 20001):
        """Maximum of ``|a_I(t)|`` and ``|omega(t)|`` over ``[0, duration]``.

        Evaluated on a dense grid; the signals are band-limited sinusoids so
        the grid maximum is accurate to ``O((freq * duration / samples)^2)``.
        """
        ts = np.linspace(0.0, duration, samples)[:, None]
        a = imu_acceleration(self.nu(ts), self.nu_dot(ts), self.omega(ts), ext or ImuExtrinsics())
        w = self.omega(ts)
        return float(np.max(np.linalg.norm(a, axis=-1))), float(np.max(np.linalg.norm(w, axis=-1)))


@dataclass
class MeasurementFrame:
    """Everything the observers can measure at one instant, plus the truth.

    Per-line arrays have shape ``(..., N, k)``. ``l`` and ``chi`` are never fed
    to an observer; they are kept for error computation. When the frame was
    produced by :func:`perturb`, ``truth`` holds the exact frame.
    """

    t: float
    R_CW: np.ndarray
    c: np.ndarray
    axes: np.ndarray
    d: np.ndarray
    n: np.ndarray
    l: np.ndarray
    chi: np.ndarray
    tau: np.ndarray
    m: np.ndarray
    rho: np.ndarray
    s: np.ndarray
    psi: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    a_I: np.ndarray | None = None
    truth: "MeasurementFrame | None" = None

    @property
    def exact(self) -> "MeasurementFrame":
        return self if self.truth is None else self.truth


# --- scene generation ---------------------------------------------------------

def random_scene(
    seed,
    n_lines_per_axis=(2, 2, 2),
    cube_side: float = CUBE_SIDE,
    cube_center=CUBE_CENTER,
    rho_range=(4.0, 6.0),
    depth_floor: float = 0.1,
    max_angle: float = np.pi - 0.1,
    max_attempts: int = 100,
) -> WorldScene:
    """Random Manhattan scene in front of the initial camera.

    The Manhattan basis is uniform on SO(3) restricted to rotation angles
    below ``max_angle``. Each line gets an anchor uniform in an axis-aligned
    cube and is resampled until its depth exceeds ``depth_floor``. The plane
    faces the camera along the optical axis at an offset uniform in
    ``rho_range``.
    """
    counts = [int(k) for k in n_lines_per_axis]
    if len(counts) != 3 or min(counts) < 0 or sum(counts) < 1:
        raise ValueError(f"invalid line counts {n_lines_per_axis}")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        R = Rotation.random(random_state=rng).as_matrix()
        if geo.rotation_angle(R) < max_angle:
            break
    else:
        raise RetryExhausted("could not draw a Manhattan frame inside the Cayley chart")

    axes = np.repeat(np.arange(3), counts)
    center = np.asarray(cube_center, dtype=float)
    anchors = np.empty((len(axes), 3))
    for i, j in enumerate(axes):
        for _ in range(max_attempts):
            p = center + cube_side * (rng.random(3) - 0.5)
            if np.linalg.norm(np.cross(p, R[j])) > depth_floor:
                anchors[i] = p
                break
        else:
            raise RetryExhausted(f"line {i}: no anchor with depth above {depth_floor}")

    return WorldScene(
        directions=R,
        anchors=anchors,
        axes=axes,
        plane_normal=np.array([0.0, 0.0, 1.0]),
        plane_offset=np.asarray(rng.uniform(*rho_range)),
        seed=None if seed is None else int(seed),
    )


def save_scene(scene: WorldScene, path) -> None:
    """Write a single scene as a key-value file for trial replay."""
    cp = configparser.ConfigParser()
    fmt = lambda a: " ".join(repr(float(x)) for x in np.ravel(a))  # noqa: E731
    cp["scene"] = {
        "seed": "" if scene.seed is None else str(scene.seed),
        "directions": fmt(scene.directions),
        "plane_normal": fmt(scene.plane_normal),
        "plane_offset": repr(float(scene.plane_offset)),
    }
    cp["lines"] = {
        f"line{i}": f"{fmt(p)} {int(j)}" for i, (p, j) in enumerate(zip(scene.anchors, scene.axes))
    }
    with open(path, "w") as fh:
        cp.write(fh)


def load_scene(path) -> WorldScene:
    cp = configparser.ConfigParser()
    if not cp.read(Path(path)):
        raise FileNotFoundError(path)
    sc = cp["scene"]
    nums = lambda s: np.array([float(x) for x in s.split()])  # noqa: E731
    rows = [nums(v) for _, v in sorted(cp["lines"].items(), key=lambda kv: int(kv[0][4:]))]
    seed = sc.get("seed", "").strip()
    return WorldScene(
        directions=nums(sc["directions"]).reshape(3, 3),
        anchors=np.array([r[:3] for r in rows]),
        axes=np.array([int(r[3]) for r in rows]),
        plane_normal=nums(sc["plane_normal"]),
        plane_offset=np.asarray(float(sc["plane_offset"])),
        seed=int(seed) if seed else None,
    )


# --- motion -------------------------------------------------------------------

def _pose_rhs(R, nu, omega):
    dR = geo.skew(omega) @ R
    dt = -np.einsum("...ji,...j->...i", R, nu)
    return dR, dt


def advance_pose(pose: CameraPose, nu, omega, dt: float, t: float = 0.0) -> CameraPose:
    """One RK4 step of the camera pose under the twist ``(nu, omega)``.

    ``nu`` and ``omega`` are either constant arrays or callables of absolute
    time, evaluated at ``t``, ``t + dt/2`` and ``t + dt``. The rotation is
    projected back onto SO(3) after the step.
    """
    lin = nu if callable(nu) else (lambda _t, v=np.asarray(nu, dtype=float): v)
    ang = omega if callable(omega) else (lambda _t, w=np.asarray(omega, dtype=float): w)
    R0, p0 = pose.R, pose.t
    h = 0.5 * dt
    k1R, k1p = _pose_rhs(R0, lin(t), ang(t))
    k2R, k2p = _pose_rhs(R0 + h * k1R, lin(t + h), ang(t + h))
    k3R, k3p = _pose_rhs(R0 + h * k2R, lin(t + h), ang(t + h))
    k4R, k4p = _pose_rhs(R0 + dt * k3R, lin(t + dt), ang(t + dt))
    R = R0 + (dt / 6.0) * (k1R + 2.0 * k2R + 2.0 * k3R + k4R)
    p = p0 + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return CameraPose(polish_rotation(R), p)


def imu_acceleration(nu, nu_dot, omega, ext: ImuExtrinsics):
    """Gravity-free IMU acceleration consistent with the plane kinematics."""
    W = geo.skew(omega)
    accel_c = nu_dot + geo.cross(omega, nu) - np.einsum("...ij,...j->...i", W @ W, ext.t_IC)
    return np.einsum("ji,...j->...i", ext.R_IC, accel_c)


def synthesize_imu(profile: VelocityProfile, t: float, pose: CameraPose, ext: ImuExtrinsics):
    """Angular velocity and gravity-compensated acceleration at time ``t``.

    ``pose`` is accepted for symmetry with :func:`specific_force`; the
    compensated acceleration does not depend on attitude.
    """
    nu, omega = profile.twist(t)
    return omega, imu_acceleration(nu, profile.nu_dot(t), omega, ext)


def _world_to_imu(pose: CameraPose, ext: ImuExtrinsics):
    return np.swapaxes(ext.R_IC, -1, -2) @ pose.R


def specific_force(a_I, pose: CameraPose, ext: ImuExtrinsics):
    """Raw accelerometer reading ``f_I = a_I - R_W^I [0, 0, g]``."""
    return a_I - _world_to_imu(pose, ext)[..., :, 2] * ext.g


def compensate_gravity(f_I, pose: CameraPose, ext: ImuExtrinsics):
    """``a_I = f_I + R_W^I [0, 0, g]``."""
    return f_I + _world_to_imu(pose, ext)[..., :, 2] * ext.g


# --- measurements -------------------------------------------------------------

def depth_violations(frame: MeasurementFrame) -> np.ndarray:
    """Boolean mask over the batch: some line depth is at or below 1e-6."""
    return np.any(~(frame.l > DEPTH_EPS), axis=-1)


def observe(scene: WorldScene, pose: CameraPose, nu, omega, a_I=None, t: float = 0.0,
            check: bool = True) -> MeasurementFrame:
    """Exact measurements of ``scene`` seen from ``pose``.

    Raises
    ------
    DepthSingularity
        If ``check`` and any line depth is ``<= 1e-6``.
    geometry.SingularRotation
        If ``check`` and the Manhattan frame is a 180 degree rotation.

    With ``check=False`` the offending entries are returned as NaN/garbage
    and callers are expected to mask them (see :func:`depth_violations`).
    """
    R, p = pose.R, pose.t
    nu = np.asarray(nu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    Rt = np.swapaxes(R, -1, -2)
    R_CW = scene.directions @ Rt
    d = scene.line_directions() @ Rt
    P = (scene.anchors - p[..., None, :]) @ Rt
    mom = geo.cross(P, d)
    l = np.linalg.norm(mom, axis=-1)
    if check and np.any(~(l > DEPTH_EPS)):
        raise DepthSingularity(f"line depth {np.min(l):.3g} at t={t:.6g}")
    with np.errstate(divide="ignore", invalid="ignore"):
        n = mom / l[..., None]
        chi = 1.0 / l
    o = n @ np.swapaxes(R_CW, -1, -2)
    tau = geo.reduce_moment(o, scene.axes)
    if check:
        c = geo.cayley_from_rotation(R_CW)
    else:
        c = cayley_or_nan(R_CW)
    m = (R @ np.asarray(scene.plane_normal)[..., None])[..., 0]
    rho = scene.plane_offset - np.sum(scene.plane_normal * p, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi = 1.0 / rho
        s = nu * psi[..., None]
    return MeasurementFrame(
        t=t, R_CW=R_CW, c=c, axes=scene.axes, d=d, n=n, l=l, chi=chi, tau=tau,
        m=m, rho=rho, s=s, psi=psi, nu=nu, omega=omega,
        a_I=None if a_I is None else np.asarray(a_I, dtype=float),
    )


def cayley_or_nan(R):
    """Cayley parameters with NaN rows where the chart is singular."""
    inv, det = geo.inv3(R + np.eye(3))
    G = (R - np.eye(3)) @ np.nan_to_num(inv)
    c = G[..., [2, 0, 1], [1, 2, 0]]
    return np.where((np.abs(det) < geo.DET_EPS)[..., None], np.nan, c)


# --- noise --------------------------------------------------------------------

def euler_noise(rng: np.random.Generator, sigma_deg: float, shape=()) -> np.ndarray:
    """Euler angles (radians), uniform, zero mean, standard deviation ``sigma_deg``."""
    half = np.sqrt(3.0) * np.deg2rad(sigma_deg)
    return rng.uniform(-half, half, size=tuple(shape) + (3,))


def euler_matrix(angles):
    """Extrinsic x-y-z Euler angles to ``Rz @ Ry @ Rx``."""
    angles = np.asarray(angles, dtype=float)
    ca, cb, cg = np.cos(angles[..., 0]), np.cos(angles[..., 1]), np.cos(angles[..., 2])
    sa, sb, sg = np.sin(angles[..., 0]), np.sin(angles[..., 1]), np.sin(angles[..., 2])
    return geo.matrix3([
        [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa],
        [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa],
        [-sb, cb * sa, cb * ca],
    ])


def apply_noise(frame: MeasurementFrame, frame_angles, moment_angles) -> MeasurementFrame:
    """Rotate the Manhattan frame and each moment by the given Euler angles.

    ``frame_angles`` has shape ``(..., 3)``, ``moment_angles`` ``(..., N, 3)``.
    Reduced moments are recomputed by projecting the noisy moments onto the
    noisy frame; the component along the line's axis is simply dropped.
    """
    R_CW = euler_matrix(frame_angles) @ frame.R_CW
    n = np.einsum("...ij,...j->...i", euler_matrix(moment_angles), frame.n)
    o = np.einsum("...ij,...nj->...ni", R_CW, n)
    idx = np.broadcast_to(frame.axes[..., None], R_CW.shape[:-2] + frame.axes.shape[-1:] + (3,))
    return replace(
        frame,
        R_CW=R_CW,
        c=cayley_or_nan(R_CW),
        d=np.take_along_axis(R_CW, idx, axis=-2),
        n=n,
        tau=geo.reduce_moment(o, frame.axes),
        truth=frame.exact,
    )


def perturb(frame: MeasurementFrame, sigma_deg: float, rng: np.random.Generator) -> MeasurementFrame:
    """Noisy copy of ``frame``; inputs (nu, omega, a_I) are left exact."""
    if sigma_deg < 0:
        raise ValueError("sigma_deg must be non-negative")
    if sigma_deg == 0:
        return frame
    lead = frame.R_CW.shape[:-2]
    fa = euler_noise(rng, sigma_deg, lead)
    ma = euler_noise(rng, sigma_deg, frame.n.shape[:-1])
    return apply_noise(frame, fa, ma)


# --- velocity profiles --------------------------------------------------------

def cascade_profile(duration: float = 12.0, max_accel: float = 2.0, max_omega: float = 0.5,
                    ext: ImuExtrinsics | None = None) -> VelocityProfile:
    """Sinusoidal twist for the observer-cascade experiment.

    Each axis has its own frequency and phase. Amplitudes are scaled so that
    the peak IMU acceleration and peak angular rate over ``duration`` equal
    ``max_accel`` and ``max_omega``.
    """
    base = VelocityProfile(
        lin_amp=np.array([1.0, 1.0, 1.0]),
        lin_freq=np.array([2.75, 2.25, 3.25]),
        lin_phase=np.array([0.0, 2.1, 4.2]),
        ang_amp=np.array([1.0, 1.0, 1.0]),
        ang_freq=np.array([0.7, 1.0, 0.5]),
        ang_phase=np.array([1.0, 3.0, 5.0]),
    )
    return calibrate_profile(base, duration, max_accel, max_omega, ext)


def calibrate_profile(profile: VelocityProfile, duration: float, max_accel: float,
                      max_omega: float, ext: ImuExtrinsics | None = None) -> VelocityProfile:
    """Rescale amplitudes to hit the requested peak norms.

    The angular part is fixed first (its peak is linear in the scale); the
    linear scale is then found by bisection because ``a_I`` contains the
    ``omega x nu`` coupling.
    """
    _, w = profile.max_norms(duration, ext)
    prof = profile.scaled(ang=max_omega / w)
    lo, hi = 0.0, 1.0
    while prof.scaled(lin=hi).max_norms(duration, ext)[0] < max_accel:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if prof.scaled(lin=mid).max_norms(duration, ext)[0] < max_accel:
            lo = mid
        else:
            hi = mid
    return prof.scaled(lin=0.5 * (lo + hi))
