"""Error metrics, single trials, Monte-Carlo aggregation and noise sweeps.

Trials are simulated in batches: every array carries a leading trial axis and
one call to :func:`simulate` advances all of them on a shared clock. Each
trial draws from its own seeded generators, so a trial's record does not
depend on which batch it ran in.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from types import SimpleNamespace

import numpy as np

from . import geometry as geo
from . import observers as obs
from . import world_sim as ws
from .integrator import StateLayout, StepConfig, step

MW_ONLY = "mw_only"
CASCADE = "cascade"
CONVERGED = "converged"
DIVERGED = "diverged"
TIMEOUT = "timeout"

PROFILE_RANDOM = "random"
PROFILE_CASCADE = "cascade"

CHUNK = 100


def direction_error(d_hat, d):
    """Angle between unit vectors.

    Evaluated as ``atan2(|a x b|, a . b)``: same value as ``arccos(a . b)``
    but accurate for nearly parallel vectors.
    """
    a, b = np.asarray(d_hat, dtype=float), np.asarray(d, dtype=float)
    return np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.sum(a * b, axis=-1))


def depth_error(l_hat, l):
    return np.abs(np.asarray(l_hat, dtype=float) - np.asarray(l, dtype=float))


@dataclass(frozen=True)
class TrialConfig:
    seed: int = 0
    mode: str = MW_ONLY
    lines_per_axis: tuple[int, int, int] = (2, 2, 2)
    k_chi: float = 100.0
    k_c: float | None = None
    k_tau: float | None = None
    k_s: float = 2.0
    k_rho: float = 20.0
    dt: float = 1e-3
    duration: float = 15.0
    noise_deg: float = 0.0
    conv_fraction: float = 0.01
    div_factor: float = 1e3
    c_max: float = 100.0  # Cayley norm of the true rotation past which the trial stops
    debounce: float = 0.2
    profile: str = PROFILE_RANDOM
    lin_speed: float = 1.0
    ang_speed: float = 0.1
    retreat_speed: float = 0.4
    freq_range: tuple[float, float] = (0.6, 1.8)
    max_accel: float = 2.0
    max_omega: float = 0.5
    chi0_range: tuple[float, float] = (0.05, 1.0)
    psi0_range: tuple[float, float] = (0.05, 1.0)
    exact_init: bool = False
    c_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cube_side: float = ws.CUBE_SIDE
    rho_range: tuple[float, float] = (4.0, 6.0)
    psi_floor: float = obs.PSI_FLOOR
    force_true_velocity: bool = False
    decimation: int = 10
    record_conditions: bool = False

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not (self.conv_fraction > 0 and self.div_factor > 0 and self.c_max > 0 and self.debounce >= 0):
            raise ValueError("thresholds must be positive")
        if self.mode not in (MW_ONLY, CASCADE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.profile not in (PROFILE_RANDOM, PROFILE_CASCADE):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.noise_deg < 0:
            raise ValueError("noise_deg must be non-negative")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        StepConfig(self.dt)

    @property
    def n_lines(self) -> int:
        return int(sum(self.lines_per_axis))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def mw_gains(self) -> obs.ManhattanGains:
        k = 2.0 * math.sqrt(self.k_chi)
        return obs.ManhattanGains(
            k_c=k if self.k_c is None else self.k_c,
            k_tau=k if self.k_tau is None else self.k_tau,
            k_chi=self.k_chi,
        )

    def plane_gains(self) -> obs.PlaneGains:
        return obs.PlaneGains(self.k_s, self.k_rho)


@dataclass
class TrialRecord:
    """Outcome and decimated error series of one trial.

    ``distance`` is the camera path length up to the verdict time (the
    convergence time, the divergence time, or the end of a timed-out trial).
    """

    seed: int
    verdict: str
    t_c: float | None
    t_d: float | None
    cause: str | None
    distance: float
    total_distance: float
    times: np.ndarray
    err_norm: np.ndarray
    c_err: np.ndarray
    V: np.ndarray
    eps_d: np.ndarray
    eps_l: np.ndarray
    final_eps_d: np.ndarray
    final_eps_l: np.ndarray
    sign_violations: np.ndarray
    pe_violations: np.ndarray
    chi_hat0: np.ndarray
    init_convention: str
    plane_err: np.ndarray | None = None
    plane_t_c: float | None = None
    scale_degenerate_steps: int = 0
    conditions: np.ndarray | None = None

    @property
    def success(self) -> bool:
        return self.verdict == CONVERGED


@dataclass
class AggregateReport:
    n_trials: int
    success_rate: float
    median_t_c: float
    median_distance: float
    median_eps_d: float
    median_eps_l: float
    n_converged: int
    n_diverged: int
    n_timeout: int
    records: list[TrialRecord] = field(default_factory=list, repr=False)

    def row(self) -> str:
        return (f"MWLEst & {self.success_rate:.1f} & {self.median_t_c:.2f} & "
                f"{self.median_distance:.2f}")


# --- trial setup --------------------------------------------------------------

def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def random_profile(rng: np.random.Generator, lin_speed: float, ang_speed: float,
                   freq_range=(0.3, 1.2), retreat_speed: float = 0.0) -> ws.VelocityProfile:
    """Sinusoidal twist on all six axes with random frequency and phase.

    ``retreat_speed`` adds a constant ``+z`` component to ``nu``: the scene
    recedes along the optical axis, i.e. the camera backs away from it.
    """
    lo, hi = freq_range
    return ws.VelocityProfile(
        lin_offset=np.array([0.0, 0.0, retreat_speed]),
        lin_amp=np.full(3, lin_speed),
        lin_freq=rng.uniform(lo, hi, 3),
        lin_phase=rng.uniform(0.0, 2 * np.pi, 3),
        ang_amp=np.full(3, ang_speed),
        ang_freq=rng.uniform(lo, hi, 3),
        ang_phase=rng.uniform(0.0, 2 * np.pi, 3),
    )


def trial_profile(cfg: TrialConfig, seed: int) -> ws.VelocityProfile:
    if cfg.profile == PROFILE_CASCADE:
        return ws.cascade_profile(cfg.duration, cfg.max_accel, cfg.max_omega)
    return random_profile(_rng(seed, 1), cfg.lin_speed, cfg.ang_speed, cfg.freq_range,
                          cfg.retreat_speed)


def trial_scene(cfg: TrialConfig, seed: int) -> ws.WorldScene:
    return ws.random_scene(seed, cfg.lines_per_axis, cube_side=cfg.cube_side, rho_range=cfg.rho_range)


def _stack_profiles(profiles: list[ws.VelocityProfile]) -> ws.VelocityProfile:
    return ws.VelocityProfile(**{
        f.name: np.stack([np.broadcast_to(getattr(p, f.name), (3,)) for p in profiles])
        for f in fields(ws.VelocityProfile)
    })


class _NoiseBuffer:
    """Per-trial Euler-angle noise drawn from each trial's own generator."""

    def __init__(self, seeds, n_lines, sigma_deg):
        self.gens = [_rng(s, 3) for s in seeds]
        self.n_lines = n_lines
        self.sigma = sigma_deg

    def take(self, count):
        """Angles for ``count`` consecutive frames, ``(count, B, 3)`` and ``(count, B, N, 3)``."""
        draws = np.stack([ws.euler_noise(g, self.sigma, (count, self.n_lines + 1)) for g in self.gens], axis=1)
        return draws[:, :, 0], draws[:, :, 1:]


# --- simulation ---------------------------------------------------------------

BLOCK = 250

_MW_INPUTS = ("c", "tau", "nu", "omega")
_CASCADE_INPUTS = ("s", "m", "a_I")
_TRUTH = ("c", "tau", "chi", "l", "d", "s", "psi")


def simulate(cfg: TrialConfig, seeds) -> list[TrialRecord]:
    """Run one trial per seed in a single vectorized batch.

    Ground truth does not depend on the estimator, so poses are advanced and
    measurements synthesized for ``BLOCK`` steps at a time; the observer is
    then integrated over the block and the verdict bookkeeping runs on the
    block's samples at once.
    """
    seeds = [int(s) for s in seeds]
    B, N = len(seeds), cfg.n_lines
    scene = ws.stack_scenes([trial_scene(cfg, s) for s in seeds])
    profile = _stack_profiles([trial_profile(cfg, s) for s in seeds])
    ext = ws.ImuExtrinsics()
    cascade = cfg.mode == CASCADE
    mw_gains, plane_gains = cfg.mw_gains(), cfg.plane_gains()
    k_chi = np.asarray(mw_gains.k_chi, dtype=float)
    noise = _NoiseBuffer(seeds, N, cfg.noise_deg) if cfg.noise_deg > 0 else None
    inputs = _MW_INPUTS + (_CASCADE_INPUTS if cascade else ())
    dt, h, q = cfg.dt, 0.5 * cfg.dt, 0.25 * cfg.dt

    init = [_rng(s, 2) for s in seeds]
    chi_hat0 = np.stack([g.uniform(*cfg.chi0_range, N) for g in init])
    psi_hat0 = np.array([g.uniform(*cfg.psi0_range) for g in init])

    def frames(times, R, p):
        tt = times[:, None, None]
        nu, omega = profile.twist(tt)
        a_I = ws.imu_acceleration(nu, profile.nu_dot(tt), omega, ext) if cascade else None
        f = ws.observe(scene, ws.CameraPose(R, p), nu, omega, a_I, t=float(times[0]), check=False)
        if noise is not None:
            f = ws.apply_noise(f, *noise.take(len(times)))
        return f

    blocks = {"c": (3,), "tau": (N, 2), "chi": (N,)}
    if cascade:
        blocks.update(s=(3,), psi=())
    layout = StateLayout(blocks)
    stepcfg = StepConfig(dt)

    def rhs_factory(inp, j0, t0, degenerate):
        def rhs(t, xs):
            j = j0 + int(round((t - t0) / h))
            b = layout.unpack(xs)
            est = obs.ManhattanEstimate(b["c"], b["tau"], b["chi"])
            if cascade:
                f = SimpleNamespace(axes=scene.axes, **{k: inp[k][j] for k in inputs})
                plane = obs.PlaneVelState(b["s"], b["psi"])
                override = f.nu if cfg.force_true_velocity else None
                dplane, dmw, bad = obs.cascade_rhs_masked(
                    plane, est, f, ext, plane_gains, mw_gains, cfg.psi_floor, override)
                degenerate[:] |= bad
                return layout.pack(c=dmw.c_hat, tau=dmw.tau_hat, chi=dmw.chi_hat,
                                   s=dplane.s_hat, psi=dplane.psi_hat)
            d = obs.mw_observer_rhs(est, inp["c"][j], inp["tau"][j], scene.axes, inp["nu"][j],
                                    inp["omega"][j], mw_gains)
            return layout.pack(c=d.c_hat, tau=d.tau_hat, chi=d.chi_hat)
        return rhs

    tracker = _Tracker(cfg, B, N, k_chi, scene.axes)
    with np.errstate(all="ignore"):
        pose = ws.CameraPose.identity((B,))
        f0 = frames(np.zeros(1), pose.R[None], pose.t[None])
        if cfg.exact_init:
            chi_hat0, psi_hat0 = f0.exact.chi[0].copy(), f0.exact.psi[0].copy()
        init_state = {"c": f0.c[0] + np.asarray(cfg.c_offset), "tau": f0.tau[0], "chi": chi_hat0}
        if cascade:
            init_state.update(s=f0.s[0], psi=psi_hat0)
        x = layout.pack(**init_state)
        tracker.samples(np.array([0]), layout.unpack(x[None]), f0)
        carry = {k: getattr(f0, k) for k in inputs}

        for start in range(0, cfg.n_steps, BLOCK):
            K = min(BLOCK, cfg.n_steps - start)
            # twist on the quarter-step grid covers every RK4 stage of the half steps
            nu_q, om_q = profile.twist(((4 * start + np.arange(4 * K + 1)) * q)[:, None, None])
            lin = lambda t: nu_q[int(round(t / q)) - 4 * start]  # noqa: E731
            ang = lambda t: om_q[int(round(t / q)) - 4 * start]  # noqa: E731
            Rs, ps = [], []
            for j in range(2 * K):
                pose = ws.advance_pose(pose, lin, ang, h, (2 * start + j) * h)
                Rs.append(pose.R)
                ps.append(pose.t)
            fb = frames((2 * start + np.arange(1, 2 * K + 1)) * h, np.stack(Rs), np.stack(ps))
            inp = {k: np.concatenate([carry[k], getattr(fb, k)]) for k in inputs}

            states = np.empty((K,) + x.shape)
            degenerate = np.zeros((K, B), dtype=bool)
            for i in range(K):
                t = (start + i) * dt
                x = step(rhs_factory(inp, 2 * i, t, degenerate[i]), x, t, stepcfg, check_finite=False)
                states[i] = x
            tracker.samples(start + 1 + np.arange(K), layout.unpack(states), fb, odd=True,
                            nu=inp["nu"], degenerate=degenerate)
            carry = {k: v[-1:] for k, v in inp.items()}
            x = np.where(tracker.dead[:, None], np.nan_to_num(x), x)
            if tracker.all_done():
                break

    return tracker.records(seeds, chi_hat0, cfg)


class _Tracker:
    """Per-trial verdict bookkeeping and series recording for a batch.

    Works on stacks of samples: per-step error norms are kept for the whole
    run and the debounced convergence verdict is read off them at the end.
    """

    SERIES = ("e", "c", "V", "eps_d", "eps_l", "pe")

    def __init__(self, cfg: TrialConfig, B: int, N: int, k_chi, axes):
        self.cfg, self.B, self.N, self.k_chi, self.axes = cfg, B, N, k_chi, axes
        n = cfg.n_steps + 1
        self.E = np.full((n, B), np.nan)
        self.PE = np.full((n, B), np.nan)
        self.LIVE = np.zeros((n, B), dtype=bool)
        self.CUM = np.zeros((n, B))
        self.e0 = self.pe0 = None
        self.kd = np.full(B, -1)
        self.cause = [None] * B
        self.hold = {}
        self.sign_viol = np.zeros((B, N), dtype=int)
        self.pe_viol = np.zeros((B, N), dtype=int)
        self.scale_degenerate = np.zeros(B, dtype=int)
        self.series = {k: [] for k in self.SERIES + ("t", "cond")}
        self.final = None
        self.n_done = 0

    @property
    def dead(self) -> np.ndarray:
        return self.kd >= 0

    def all_done(self) -> bool:
        return bool(np.all(self.dead))

    def samples(self, ks, est, frame, odd=False, nu=None, degenerate=None):
        """Process samples ``ks`` given stacked estimates and frames.

        With ``odd`` the frames are on the half-step grid and the samples sit
        at its odd entries; ``nu`` then spans the block including its first
        half-step frame and feeds the distance quadrature.
        """
        cfg, B = self.cfg, self.B
        sl = slice(1, None, 2) if odd else slice(None)
        truth = {k: getattr(frame.exact, k)[sl] for k in _TRUTH}
        c_err = truth["c"] - est["c"]
        tau_err = truth["tau"] - est["tau"]
        chi_err = truth["chi"] - est["chi"]
        e = np.sqrt(np.sum(c_err**2, -1) + np.sum(tau_err**2, (-2, -1)) + np.sum(chi_err**2, -1))
        pe = None
        if cfg.mode == CASCADE:
            pe = np.sqrt(np.sum((truth["s"] - est["s"]) ** 2, -1) + (truth["psi"] - est["psi"]) ** 2)
        if self.e0 is None:
            self.e0 = e[0].copy()
            self.pe0 = None if pe is None else pe[0].copy()

        # divergence
        bad_c = ~(np.linalg.norm(truth["c"], axis=-1) <= cfg.c_max)
        bad_l = np.any(~(truth["l"] > ws.DEPTH_EPS), -1)
        bad = bad_c | bad_l | ~np.isfinite(e) | ((self.e0 > 0) & (e > cfg.div_factor * self.e0))
        first = np.argmax(bad, axis=0)
        for b in np.flatnonzero(bad.any(axis=0) & ~self.dead):
            s = first[b]
            self.kd[b] = ks[s]
            if bad_c[s, b]:
                self.cause[b] = "SingularRotation"
            elif bad_l[s, b]:
                self.cause[b] = "DepthSingularity"
            elif not np.isfinite(e[s, b]):
                self.cause[b] = "NonFiniteState"
            else:
                self.cause[b] = "ErrorGrowth"
        kd = np.where(self.dead, self.kd, np.iinfo(np.int64).max)
        live = ks[:, None] < kd
        self.LIVE[ks] = live

        # path length, Simpson per step, frozen once a trial is dead
        if nu is not None:
            speed = np.linalg.norm(nu, axis=-1)
            inc = (cfg.dt / 6.0) * (speed[:-1:2] + 4.0 * speed[1::2] + speed[2::2])
            inc = np.where(ks[:, None] - 1 < kd, inc, 0.0)
            self.CUM[ks] = self.CUM[ks[0] - 1] + np.cumsum(inc, axis=0)
        if degenerate is not None:
            self.scale_degenerate += np.sum(degenerate & live, axis=0)

        meas = {k: getattr(frame, k)[sl] for k in ("c", "tau")}
        nu_s = frame.nu[sl]
        sign_ok, excited = obs.stability_conditions(meas["tau"], meas["c"], self.axes, nu_s, est["chi"])
        self.sign_viol += np.sum(live[..., None] & ~sign_ok, axis=0)
        self.pe_viol += np.sum(live[..., None] & ~excited, axis=0)

        R_hat = geo.rotation_from_cayley(est["c"])
        idx = np.broadcast_to(self.axes[..., None], R_hat.shape[:-2] + self.axes.shape[-1:] + (3,))
        d_hat = np.take_along_axis(R_hat, idx, axis=-2)
        vals = {
            "e": e,
            "c": np.linalg.norm(c_err, axis=-1),
            "V": obs.lyapunov_V(c_err, tau_err, chi_err, self.k_chi),
            "eps_d": direction_error(d_hat, truth["d"]),
            "eps_l": depth_error(1.0 / est["chi"], truth["l"]),
        }
        if pe is not None:
            vals["pe"] = pe
        self.E[ks] = e
        if pe is not None:
            self.PE[ks] = pe

        # everything recorded after a trial's divergence holds its value at that sample
        for b in np.flatnonzero(self.dead):
            if b not in self.hold:
                s = int(np.flatnonzero(ks == self.kd[b])[0])
                self.hold[b] = {k: v[s, b].copy() for k, v in vals.items()}
            after = ks > self.kd[b]
            for k, v in vals.items():
                v[after, b] = self.hold[b][k]
        self.final = (vals["eps_d"][-1].copy(), vals["eps_l"][-1].copy())

        sel = (ks % cfg.decimation == 0) | (ks == cfg.n_steps)
        self.series["t"].append(ks[sel] * cfg.dt)
        for k, v in vals.items():
            self.series[k].append(v[sel])
        if cfg.record_conditions:
            self.series["cond"].append((sign_ok & excited)[sel])
        self.n_done = int(ks[-1])

    def _first_settled(self, err, err0):
        """Start sample of the first run below threshold lasting the debounce time."""
        T = self.n_done + 1
        D = max(int(np.ceil(self.cfg.debounce / self.cfg.dt - 1e-6)), 0)
        below = self.LIVE[:T] & (err[:T] < self.cfg.conv_fraction * err0)
        hit = np.zeros(self.B, dtype=bool)
        k = np.zeros(self.B, dtype=int)
        if T > D:
            cs = np.concatenate([np.zeros((1, self.B), dtype=int), np.cumsum(below, axis=0)])
            window = (cs[D + 1:] - cs[:-D - 1]) == D + 1
            hit = window.any(axis=0)
            k = np.argmax(window, axis=0)
        zero = err0 == 0
        return hit | zero, np.where(zero, 0, k)

    def records(self, seeds, chi_hat0, cfg: TrialConfig) -> list[TrialRecord]:
        cat = lambda key: np.concatenate(self.series[key], axis=0) if self.series[key] else None  # noqa: E731
        times = cat("t")
        stacked = {k: cat(k) for k in self.SERIES + ("cond",)}
        conv, kc = self._first_settled(self.E, self.e0)
        if self.pe0 is not None:
            pconv, pkc = self._first_settled(self.PE, self.pe0)
        last = self.n_done
        out = []
        for i, seed in enumerate(seeds):
            if self.kd[i] >= 0:
                verdict, t_c, dist = DIVERGED, None, self.CUM[self.kd[i], i]
            elif conv[i]:
                verdict, t_c, dist = CONVERGED, float(kc[i] * cfg.dt), self.CUM[kc[i], i]
            else:
                verdict, t_c, dist = TIMEOUT, None, self.CUM[last, i]
            series = {k: (None if v is None else v[:, i]) for k, v in stacked.items()}
            out.append(TrialRecord(
                seed=seed,
                verdict=verdict,
                t_c=t_c,
                t_d=float(self.kd[i] * cfg.dt) if self.kd[i] >= 0 else None,
                cause=self.cause[i],
                distance=float(dist),
                total_distance=float(self.CUM[last, i]),
                times=times,
                err_norm=series["e"],
                c_err=series["c"],
                V=series["V"],
                eps_d=series["eps_d"],
                eps_l=series["eps_l"],
                final_eps_d=self.final[0][i].copy(),
                final_eps_l=self.final[1][i].copy(),
                sign_violations=self.sign_viol[i].copy(),
                pe_violations=self.pe_viol[i].copy(),
                chi_hat0=chi_hat0[i].copy(),
                init_convention=("exact" if cfg.exact_init else
                                 f"chi_hat0 ~ U{tuple(cfg.chi0_range)}; measured states at truth; "
                                 "unit-norm-then-scaled convention not used"),
                plane_err=series["pe"],
                plane_t_c=((float(pkc[i] * cfg.dt) if pconv[i] else None)
                           if self.pe0 is not None else None),
                scale_degenerate_steps=int(self.scale_degenerate[i]),
                conditions=series["cond"],
            ))
        return out


def run_trial(cfg: TrialConfig) -> TrialRecord:
    """Single trial; identical to the same seed's record inside any batch."""
    return simulate(cfg, [cfg.seed])[0]


# --- Monte Carlo --------------------------------------------------------------

def trial_seeds(seed: int, n_trials: int) -> list[int]:
    """Independent per-trial seeds derived from one master seed."""
    ss = np.random.SeedSequence(int(seed))
    return [int(v) for v in ss.generate_state(n_trials, dtype=np.uint32)]


def _simulate_chunk(args):
    cfg, seeds = args
    return simulate(cfg, seeds)


def run_batch(cfg: TrialConfig, seeds, workers: int = 1, chunk: int = CHUNK) -> list[TrialRecord]:
    """Simulate ``seeds`` in fixed-size chunks, optionally across processes.

    Chunk boundaries do not depend on ``workers`` and records come back in
    seed order, so the output is identical for any worker count.
    """
    seeds = list(seeds)
    jobs = [(cfg, seeds[i:i + chunk]) for i in range(0, len(seeds), chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(j) for j in jobs]
    return [r for part in parts for r in part]


def aggregate(records: list[TrialRecord]) -> AggregateReport:
    """Table-style statistics.

    Convergence time and distance medians use converged trials; end-of-trial
    error medians pool every line of every trial that did not diverge.
    """
    n = len(records)
    ok = [r for r in records if r.verdict == CONVERGED]
    alive = [r for r in records if r.verdict != DIVERGED]
    med = lambda xs: float(np.median(xs)) if len(xs) else float("nan")  # noqa: E731
    eps_d = np.concatenate([r.final_eps_d for r in alive]) if alive else np.array([])
    eps_l = np.concatenate([r.final_eps_l for r in alive]) if alive else np.array([])
    return AggregateReport(
        n_trials=n,
        success_rate=100.0 * len(ok) / n if n else float("nan"),
        median_t_c=med([r.t_c for r in ok]),
        median_distance=med([r.distance for r in ok]),
        median_eps_d=med(eps_d),
        median_eps_l=med(eps_l),
        n_converged=len(ok),
        n_diverged=sum(r.verdict == DIVERGED for r in records),
        n_timeout=sum(r.verdict == TIMEOUT for r in records),
        records=list(records),
    )


def run_monte_carlo(cfg: TrialConfig, n_trials: int, seed: int | None = None,
                    workers: int = 1) -> AggregateReport:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    seeds = trial_seeds(cfg.seed if seed is None else seed, n_trials)
    return aggregate(run_batch(cfg, seeds, workers))


def run_noise_sweep(cfg: TrialConfig, sigmas, n_trials: int, seed: int | None = None,
                    workers: int = 1) -> list[tuple[float, AggregateReport]]:
    """One Monte-Carlo run per noise level, sharing scenes across levels."""
    sigmas = [float(s) for s in sigmas]
    if not sigmas or min(sigmas) < 0:
        raise ValueError("noise levels must be a non-empty list of non-negative values")
    seeds = trial_seeds(cfg.seed if seed is None else seed, n_trials)
    return [(s, aggregate(run_batch(replace(cfg, noise_deg=s), seeds, workers))) for s in sigmas]


# --- CSV ----------------------------------------------------------------------

def trial_table_header(n_lines: int) -> list[str]:
    return (["seed", "verdict", "t_c", "distance"]
            + [f"eps_d_{i}" for i in range(n_lines)]
            + [f"eps_l_{i}" for i in range(n_lines)])


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_trial_table(records: list[TrialRecord], path) -> None:
    n = len(records[0].final_eps_d) if records else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trial_table_header(n))
        for r in records:
            w.writerow([r.seed, r.verdict, _fmt(r.t_c), _fmt(r.distance)]
                       + [_fmt(v) for v in r.final_eps_d] + [_fmt(v) for v in r.final_eps_l])


def series_header(n_lines: int, cascade: bool) -> list[str]:
    cols = ["t", "err_norm", "c_err", "V"]
    cols += [f"eps_d_{i}" for i in range(n_lines)] + [f"eps_l_{i}" for i in range(n_lines)]
    if cascade:
        cols.append("plane_err")
    return cols


def write_series(record: TrialRecord, path) -> None:
    n = record.eps_d.shape[-1]
    cascade = record.plane_err is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(series_header(n, cascade))
        for k, t in enumerate(record.times):
            row = [_fmt(t), _fmt(record.err_norm[k]), _fmt(record.c_err[k]), _fmt(record.V[k])]
            row += [_fmt(v) for v in record.eps_d[k]] + [_fmt(v) for v in record.eps_l[k]]
            if cascade:
                row.append(_fmt(record.plane_err[k]))
            w.writerow(row)


REPORT_HEADER = ["n_trials", "success_rate", "median_t_c", "median_distance",
                 "median_eps_d", "median_eps_l", "n_converged", "n_diverged", "n_timeout"]


def write_report(report: AggregateReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        w.writerow([report.n_trials, _fmt(report.success_rate), _fmt(report.median_t_c),
                    _fmt(report.median_distance), _fmt(report.median_eps_d),
                    _fmt(report.median_eps_l), report.n_converged, report.n_diverged,
                    report.n_timeout])


SWEEP_HEADER = ["sigma_deg", "median_eps_d", "median_eps_l", "n_trials", "n_diverged"]


def write_sweep(levels: list[tuple[float, AggregateReport]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for sigma, rep in levels:
            w.writerow([_fmt(sigma), _fmt(rep.median_eps_d), _fmt(rep.median_eps_l),
                        rep.n_trials, rep.n_diverged])


def config_dict(cfg: TrialConfig) -> dict:
    return asdict(cfg)
