"""Command-line entry point: ``mwlines {single,mc,sweep}``.

Configuration files are INI text with a ``[trial]`` section (any
:class:`~mwlines.trials.TrialConfig` field) and a ``[run]`` section
(``seed``, ``trials``, ``workers``, ``sigmas``). Every run first writes
``manifest.ini`` to the output directory; passing that file back with
``--config`` replays the run exactly.

Exit codes: 0 success, 1 diverged (``single`` only), 2 usage or config error.
"""
from __future__ import annotations

import argparse
import configparser
import sys
import types
import typing
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import trials as tr

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2

DEFAULT_SIGMAS = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


PRESETS: dict[str, tuple[dict, dict]] = {
    "mwlest-noiseless": (
        dict(mode=tr.MW_ONLY, k_chi=100.0, duration=15.0, noise_deg=0.0),
        dict(seed=2023, trials=200),
    ),
    "mwlest-noise": (
        dict(mode=tr.MW_ONLY, k_chi=100.0, duration=15.0, noise_deg=2.0),
        dict(seed=2023, trials=200, sigmas=DEFAULT_SIGMAS),
    ),
    "cascade-vib": (
        dict(mode=tr.CASCADE, profile=tr.PROFILE_CASCADE, k_chi=200.0, k_c=20.0, k_tau=20.0,
             k_s=2.0, k_rho=20.0, duration=12.0, max_accel=2.0, max_omega=0.5),
        dict(seed=0, trials=1),
    ),
}

RUN_KEYS = {"seed": int, "trials": int, "workers": int, "sigmas": tuple}


class ConfigError(ValueError):
    pass


# --- config parsing -----------------------------------------------------------

_HINTS = typing.get_type_hints(tr.TrialConfig)


def _parse_tuple(text: str, cast=float) -> tuple:
    parts = text.replace(",", " ").split()
    return tuple(cast(p) for p in parts)


def _parse_value(key: str, text: str, hint):
    text = text.strip()
    try:
        origin = typing.get_origin(hint)
        args = typing.get_args(hint)
        if hint is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if origin is tuple or hint is tuple:
            cast = int if args and args[0] is int else float
            out = _parse_tuple(text, cast)
            if args and args[-1] is not Ellipsis and len(out) != len(args):
                raise ValueError(f"expected {len(args)} values")
            return out
        if origin in (typing.Union, types.UnionType):
            if text.lower() in ("none", ""):
                return None
            inner = next(a for a in args if a is not type(None))
            return _parse_value(key, text, inner)
        return hint(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for '{key}': {text!r} ({exc})") from None


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return " ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config(path) -> tuple[dict, dict]:
    """Parse an INI file into ``(trial overrides, run overrides)``."""
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    for section in cp.sections():
        if section not in ("trial", "run"):
            raise ConfigError(f"unknown section '[{section}]'")
    trial, run = {}, {}
    if cp.has_section("trial"):
        for key, text in cp.items("trial"):
            if key not in _HINTS:
                raise ConfigError(f"unknown key '{key}' in [trial]")
            trial[key] = _parse_value(key, text, _HINTS[key])
    if cp.has_section("run"):
        for key, text in cp.items("run"):
            if key in ("command", "version", "out", "preset", "config"):
                continue
            if key not in RUN_KEYS:
                raise ConfigError(f"unknown key '{key}' in [run]")
            run[key] = _parse_value(key, text, RUN_KEYS[key])
    return trial, run


def build_config(trial: dict) -> tr.TrialConfig:
    try:
        return tr.TrialConfig(**trial)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid trial configuration: {exc}") from None


def write_manifest(path: Path, command: str, cfg: tr.TrialConfig, run: dict, out: Path,
                   preset: str | None, config: str | None) -> None:
    cp = configparser.ConfigParser()
    cp["run"] = {
        "command": command,
        "version": __version__,
        "preset": preset or "none",
        "config": config or "none",
        "out": str(out),
        **{k: _format_value(v) for k, v in run.items()},
    }
    cp["trial"] = {f.name: _format_value(getattr(cfg, f.name)) for f in fields(cfg)}
    with open(path, "w") as fh:
        cp.write(fh)


# --- SVG ----------------------------------------------------------------------

def svg_plot(series: dict[str, tuple], path, title: str = "", xlabel: str = "", ylabel: str = "",
             logy: bool = False, width: int = 640, height: int = 400) -> None:
    """Minimal polyline plot of ``{label: (x, y)}``."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]
    pad_l, pad_r, pad_t, pad_b = 70, 150, 40, 50
    xs, ys = [], []
    clean = {}
    for label, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(x) & np.isfinite(y) & ((y > 0) if logy else True)
        x, y = x[keep], y[keep]
        if logy:
            y = np.log10(y)
        clean[label] = (x, y)
        xs.append(x)
        ys.append(y)
    allx = np.concatenate(xs) if xs else np.array([0.0, 1.0])
    ally = np.concatenate(ys) if ys else np.array([0.0, 1.0])
    if allx.size == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b
    sx = lambda v: pad_l + (v - x0) / (x1 - x0) * pw  # noqa: E731
    sy = lambda v: pad_t + ph - (v - y0) / (y1 - y0) * ph  # noqa: E731
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle">{title}</text>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{pad_t + ph / 2:.1f}" transform="rotate(-90 15 {pad_t + ph / 2:.1f})" '
        f'text-anchor="middle">{ylabel}{" (log10)" if logy else ""}</text>',
    ]
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{pad_t + ph + 15}" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{pad_l - 5}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for i, (label, (x, y)) in enumerate(clean.items()):
        color = colors[i % len(colors)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = pad_t + 15 * (i + 1)
        out.append(f'<line x1="{pad_l + pw + 10}" y1="{ly - 4}" x2="{pad_l + pw + 30}" y2="{ly - 4}" stroke="{color}"/>')
        out.append(f'<text x="{pad_l + pw + 35}" y="{ly}">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def _series_svg(record: tr.TrialRecord, path) -> None:
    curves = {"state error": (record.times, record.err_norm)}
    if record.plane_err is not None:
        curves["plane error"] = (record.times, record.plane_err)
    svg_plot(curves, path, title=f"trial {record.seed}", xlabel="t (s)", ylabel="error norm", logy=True)


# --- commands -----------------------------------------------------------------

def _resolve(args) -> tuple[tr.TrialConfig, dict]:
    trial, run = {}, {}
    if args.preset:
        p_trial, p_run = PRESETS[args.preset]
        trial.update(p_trial)
        run.update(p_run)
    if args.config:
        c_trial, c_run = read_config(args.config)
        trial.update(c_trial)
        run.update(c_run)
    if args.seed is not None:
        run["seed"] = args.seed
    if args.noise_deg is not None:
        trial["noise_deg"] = args.noise_deg
    if getattr(args, "trials", None) is not None:
        run["trials"] = args.trials
    if getattr(args, "workers", None) is not None:
        run["workers"] = args.workers
    run.setdefault("seed", 0)
    run.setdefault("workers", 1)
    trial["seed"] = run["seed"]
    cfg = build_config(trial)
    if run.get("trials", 1) < 1:
        raise ConfigError("invalid value for 'trials': must be >= 1")
    if run["workers"] < 1:
        raise ConfigError("invalid value for 'workers': must be >= 1")
    return cfg, run


def cmd_single(args, cfg: tr.TrialConfig, run: dict, out: Path) -> int:
    rec = tr.run_trial(cfg)
    tr.write_trial_table([rec], out / "trial.csv")
    tr.write_series(rec, out / "series.csv")
    if args.emit_svg:
        _series_svg(rec, out / "series.svg")
    t_c = "-" if rec.t_c is None else f"{rec.t_c:.3f}"
    line = f"seed {rec.seed}: {rec.verdict} t_c={t_c} distance={rec.distance:.3f}"
    if rec.plane_t_c is not None:
        line += f" plane_t_c={rec.plane_t_c:.3f}"
    if rec.cause:
        line += f" cause={rec.cause}"
    print(line)
    (out / "verdict.txt").write_text(line + "\n")
    return EXIT_DIVERGED if rec.verdict == tr.DIVERGED else EXIT_OK


def cmd_mc(args, cfg: tr.TrialConfig, run: dict, out: Path) -> int:
    n = run.setdefault("trials", 200)
    seeds = tr.trial_seeds(run["seed"], n)
    records = tr.run_batch(cfg, seeds, run["workers"])
    rep = tr.aggregate(records)
    tr.write_trial_table(records, out / "trials.csv")
    tr.write_report(rep, out / "report.csv")
    if args.emit_series:
        (out / "series").mkdir(exist_ok=True)
        for r in records:
            tr.write_series(r, out / "series" / f"trial_{r.seed}.csv")
            if args.emit_svg:
                _series_svg(r, out / "series" / f"trial_{r.seed}.svg")
    print("method & success (%) & median t_c (s) & median distance")
    print(rep.row())
    return EXIT_OK


def cmd_sweep(args, cfg: tr.TrialConfig, run: dict, out: Path) -> int:
    sigmas = run.setdefault("sigmas", DEFAULT_SIGMAS)
    n = run.setdefault("trials", 200)
    levels = tr.run_noise_sweep(cfg, sigmas, n, seed=run["seed"], workers=run["workers"])
    tr.write_sweep(levels, out / "sweep.csv")
    if args.emit_svg:
        s = [lv[0] for lv in levels]
        svg_plot({"median eps_d": (s, [lv[1].median_eps_d for lv in levels])}, out / "sweep_eps_d.svg",
                 title="direction error at trial end", xlabel="sigma (deg)", ylabel="rad")
        svg_plot({"median eps_l": (s, [lv[1].median_eps_l for lv in levels])}, out / "sweep_eps_l.svg",
                 title="depth error at trial end", xlabel="sigma (deg)", ylabel="length")
    for sigma, rep in levels:
        print(f"sigma={sigma:g} median_eps_d={rep.median_eps_d:.4g} median_eps_l={rep.median_eps_l:.4g}")
    return EXIT_OK


COMMANDS = {"single": cmd_single, "mc": cmd_mc, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mwlines", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--config", help="INI file with [trial] and [run] sections (a manifest works too)")
        p.add_argument("--seed", type=int)
        p.add_argument("--noise-deg", type=float)
        p.add_argument("--out", default=f"out-{name}")
        p.add_argument("--emit-series", action="store_true", help="write per-trial series CSV")
        p.add_argument("--emit-svg", action="store_true", help="write SVG plots next to the CSV")
        if name != "single":
            p.add_argument("--trials", type=int)
            p.add_argument("--workers", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        cfg, run = _resolve(args)
        if args.command == "sweep":
            sig = run.get("sigmas", DEFAULT_SIGMAS)
            if len(sig) == 0 or min(sig) < 0:
                raise ConfigError("invalid value for 'sigmas': need a non-empty list of non-negative levels")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest_run = dict(run)
    if args.command == "sweep":
        manifest_run.setdefault("sigmas", DEFAULT_SIGMAS)
    if args.command != "single":
        manifest_run.setdefault("trials", 200)
    write_manifest(out / "manifest.ini", args.command, cfg, manifest_run, out, args.preset, args.config)
    return COMMANDS[args.command](args, cfg, run, out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
