import csv
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from mwlines import cli
from mwlines import trials as tr

TINY = """\
[trial]
duration = {duration}
lines_per_axis = 1 1 1
{extra}
[run]
trials = {trials}
"""


def write_cfg(tmp_path, duration=0.1, trials=2, extra="", name="cfg.ini"):
    path = tmp_path / name
    path.write_text(TINY.format(duration=duration, trials=trials, extra=extra))
    return str(path)


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestConfigParsing:
    def test_types(self, tmp_path):
        cfg = write_cfg(tmp_path, extra="k_c = none\nexact_init = yes\nfreq_range = 0.5, 2.0\nmode = cascade")
        trial, run = cli.read_config(cfg)
        assert trial["k_c"] is None and trial["exact_init"] is True
        assert trial["freq_range"] == (0.5, 2.0) and trial["lines_per_axis"] == (1, 1, 1)
        assert trial["mode"] == tr.CASCADE and run == {"trials": 2}

    @pytest.mark.parametrize("extra, key", [
        ("bogus = 1", "bogus"),
        ("k_chi = fast", "k_chi"),
        ("freq_range = 1 2 3", "freq_range"),
        ("exact_init = maybe", "exact_init"),
    ])
    def test_bad_trial_key(self, tmp_path, capsys, extra, key):
        code = cli.main(["single", "--config", write_cfg(tmp_path, extra=extra), "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_USAGE
        assert f"'{key}'" in capsys.readouterr().err

    def test_bad_section(self, tmp_path, capsys):
        path = tmp_path / "x.ini"
        path.write_text("[trials]\nseed = 1\n")
        assert cli.main(["mc", "--config", str(path)]) == cli.EXIT_USAGE
        assert "[trials]" in capsys.readouterr().err

    def test_invalid_combination(self, tmp_path, capsys):
        code = cli.main(["single", "--config", write_cfg(tmp_path, extra="mode = sideways"),
                         "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_USAGE
        assert "sideways" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["single", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_USAGE

    @pytest.mark.parametrize("argv", [[], ["nope"], ["single", "--trials", "3"], ["mc", "--seed", "x"]])
    def test_usage_errors(self, argv):
        assert cli.main(argv) == cli.EXIT_USAGE

    @pytest.mark.parametrize("name", sorted(cli.PRESETS))
    def test_presets_build(self, name):
        trial, run = cli.PRESETS[name]
        cfg = cli.build_config(trial)
        assert cfg.n_lines == 6 and run["trials"] >= 1

    def test_cascade_preset_gains(self):
        cfg = cli.build_config(cli.PRESETS["cascade-vib"][0])
        g = cfg.mw_gains()
        assert (g.k_c, g.k_tau, g.k_chi, cfg.k_s, cfg.k_rho) == (20.0, 20.0, 200.0, 2.0, 20.0)
        assert cfg.duration == 12.0 and cfg.mode == tr.CASCADE


class TestSingle:
    def test_outputs(self, tmp_path, capsys):
        out = tmp_path / "o"
        code = cli.main(["single", "--config", write_cfg(tmp_path), "--seed", "4", "--out", str(out),
                         "--emit-svg"])
        assert code == cli.EXIT_OK
        for f in ("manifest.ini", "trial.csv", "series.csv", "series.svg", "verdict.txt"):
            assert (out / f).exists()
        assert "seed 4" in capsys.readouterr().out
        assert rows(out / "trial.csv")[1][0] == "4"
        ET.parse(out / "series.svg")

    def test_diverged_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path, extra="div_factor = 0.5")
        assert cli.main(["single", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_DIVERGED

    def test_replay_from_manifest(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["single", "--config", write_cfg(tmp_path, extra="noise_deg = 1.5"), "--seed", "9",
                  "--out", str(a)])
        assert cli.main(["single", "--config", str(a / "manifest.ini"), "--out", str(b)]) == cli.EXIT_OK
        for f in ("trial.csv", "series.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_flag_overrides_config(self, tmp_path):
        out = tmp_path / "o"
        cli.main(["single", "--config", write_cfg(tmp_path, extra="noise_deg = 1.0"), "--noise-deg", "2.5",
                  "--out", str(out)])
        trial, _ = cli.read_config(out / "manifest.ini")
        assert trial["noise_deg"] == 2.5


class TestMonteCarlo:
    def test_report(self, tmp_path, capsys):
        out = tmp_path / "o"
        code = cli.main(["mc", "--config", write_cfg(tmp_path, trials=3), "--out", str(out), "--emit-series"])
        assert code == cli.EXIT_OK
        assert len(rows(out / "trials.csv")) == 4
        assert rows(out / "report.csv")[0] == tr.REPORT_HEADER
        assert len(list((out / "series").glob("trial_*.csv"))) == 3
        assert "MWLEst &" in capsys.readouterr().out

    def test_single_trial_report_matches_record(self, tmp_path):
        out = tmp_path / "o"
        cli.main(["mc", "--config", write_cfg(tmp_path, trials=1, extra="exact_init = true"),
                  "--out", str(out)])
        table, report = rows(out / "trials.csv"), rows(out / "report.csv")
        assert report[1][2] == table[1][2]
        assert report[1][3] == table[1][3]

    def test_workers_and_replay(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cfg = write_cfg(tmp_path, duration=0.02, trials=tr.CHUNK + 5)
        assert cli.main(["mc", "--config", cfg, "--workers", "1", "--out", str(a)]) == 0
        assert cli.main(["mc", "--config", str(a / "manifest.ini"), "--workers", "2", "--out", str(b)]) == 0
        for f in ("trials.csv", "report.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()


class TestSweep:
    def test_default_levels(self, tmp_path):
        out = tmp_path / "o"
        code = cli.main(["sweep", "--config", write_cfg(tmp_path, trials=1), "--out", str(out), "--emit-svg"])
        assert code == cli.EXIT_OK
        table = rows(out / "sweep.csv")
        assert table[0] == tr.SWEEP_HEADER
        assert [float(r[0]) for r in table[1:]] == list(cli.DEFAULT_SIGMAS)
        ET.parse(out / "sweep_eps_d.svg")

    @pytest.mark.parametrize("sigmas", ["", "1 -2"])
    def test_bad_levels(self, tmp_path, sigmas):
        cfg = write_cfg(tmp_path) + ""
        with open(cfg, "a") as fh:
            fh.write(f"sigmas = {sigmas}\n")
        assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mwlines", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
    proc = subprocess.run([sys.executable, "-m", "mwlines", "mc", "--trials", "0", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == cli.EXIT_USAGE
