"""Reference dynamics written straight from the model equations.

These are deliberately independent of ``mwlines.observers``: every right-hand
side below is transcribed in its textbook form and only the simulator's
exact geometry is shared.
"""
import numpy as np

from mwlines import world_sim as ws


def cross(a, b):
    return np.cross(a, b)


def skew(v):
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    o = np.zeros_like(x)
    return np.stack([np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)], -2)


def cayley_Q(c):
    c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2]
    rows = [
        [1 + c1**2, c1 * c2 - c3, c1 * c3 + c2],
        [c1 * c2 + c3, 1 + c2**2, c2 * c3 - c1],
        [c1 * c3 - c2, c2 * c3 + c1, 1 + c3**2],
    ]
    return -0.5 * np.stack([np.stack(r, -1) for r in rows], -2)


def quantities(f):
    """Measured quantities plus the full projected moment ``o = R_CW n``."""
    o = np.einsum("...ij,...nj->...ni", f.R_CW, f.n)
    return {"d": f.d, "n": f.n, "l": f.l, "s": f.s, "psi": f.psi, "c": f.c, "o": o, "chi": f.chi}


def rhs(f, ext):
    """Time derivatives predicted by the line, plane and Manhattan models."""
    w = f.omega[..., None, :]
    v = f.nu[..., None, :]
    d, n, l = f.d, f.n, f.l
    vn = np.sum(v * n, -1)
    dxn = cross(d, n)
    out = {
        "d": cross(w, d),
        "n": cross(w, n) - (vn / l)[..., None] * dxn,
        "l": np.sum(v * dxn, -1),
    }
    W = skew(f.omega)
    Om = np.einsum("ij,...j->...i", ext.R_IC, f.a_I) + np.einsum("...ij,...j->...i", W @ W, ext.t_IC)
    sm = np.sum(f.s * f.m, -1)
    out["s"] = -cross(f.omega, f.s) - f.s * sm[..., None] + Om * f.psi[..., None]
    out["psi"] = -f.psi * sm
    out["c"] = np.einsum("...ij,...j->...i", cayley_Q(f.c), f.omega)
    # the rotation terms of d(o)/dt cancel; only the translational part survives
    dj = f.R_CW[..., f.axes, :]
    nxd = cross(n, dj)
    out["o"] = np.einsum("...ij,...nj->...ni", f.R_CW, vn[..., None] * nxd) * f.chi[..., None]
    out["chi"] = np.sum(v * nxd, -1) * f.chi**2
    return out


def sinusoid_profile():
    return ws.VelocityProfile(
        lin_amp=[0.4, 0.3, 0.35], lin_freq=[1.3, 0.7, 1.1], lin_phase=[0.2, 1.4, 2.9],
        ang_amp=[0.2, 0.25, 0.15], ang_freq=[0.9, 1.6, 0.5], ang_phase=[1.0, 0.3, 2.2],
        lin_offset=[0.0, 0.0, 0.1],
    )


def tilted_extrinsics():
    from scipy.spatial.transform import Rotation
    R = Rotation.from_euler("xyz", [0.2, -0.4, 1.0]).as_matrix()
    return ws.ImuExtrinsics(R_IC=R, t_IC=np.array([0.05, -0.02, 0.1]))


def trajectory(profile, duration, dt):
    """Poses at every step of a fixed-step simulation, stacked along axis 0."""
    pose = ws.CameraPose.identity()
    Rs, ts = [pose.R], [pose.t]
    for k in range(int(round(duration / dt))):
        pose = ws.advance_pose(pose, profile.nu, profile.omega, dt, k * dt)
        Rs.append(pose.R)
        ts.append(pose.t)
    times = dt * np.arange(len(Rs))
    return times, ws.CameraPose(np.array(Rs), np.array(ts))


def frames_at(scene, profile, times, pose, ext):
    tt = times[:, None]
    nu, om = profile.twist(tt)
    a_I = ws.imu_acceleration(nu, profile.nu_dot(tt), om, ext)
    return ws.observe(scene, pose, nu, om, a_I, t=0.0)


def finite_difference_errors(scene, profile, ext, duration=5.0, dt=1e-3, h=1e-4, stride=1):
    """Max |central difference - model rhs| per quantity along a trajectory.

    Neighbouring poses at ``t +- h`` are obtained by one RK4 step of size
    ``+-h`` from the pose at ``t``, so the only error left is the
    ``O(h^2)`` truncation of the difference quotient.
    """
    times, pose = trajectory(profile, duration, dt)
    times = times[::stride]
    pose = ws.CameraPose(pose.R[::stride], pose.t[::stride])
    tt = times[:, None]
    fwd = ws.advance_pose(pose, profile.nu, profile.omega, h, tt)
    bwd = ws.advance_pose(pose, profile.nu, profile.omega, -h, tt)
    f0 = frames_at(scene, profile, times, pose, ext)
    fp = frames_at(scene, profile, times + h, fwd, ext)
    fm = frames_at(scene, profile, times - h, bwd, ext)
    qp, qm = quantities(fp), quantities(fm)
    model = rhs(f0, ext)
    errs = {k: float(np.max(np.abs((qp[k] - qm[k]) / (2 * h) - model[k]))) for k in model}
    o = quantities(f0)["o"]
    along = np.take_along_axis(o, np.broadcast_to(f0.axes[..., None], o.shape[:-1] + (1,)), axis=-1)
    return errs, float(np.max(np.abs(along)))
