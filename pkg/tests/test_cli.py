import csv
import io

import numpy as np
import pytest

from cavmem.cli import (
    ConfigError,
    main,
    parse_config,
    read_mode_csv,
    resample_mode,
    run,
)
from cavmem.core import DomainError, TimeGrid


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def scan_rows(path):
    lines = [ln for ln in open(path) if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(lines))))


class TestParse:
    def test_defaults(self):
        cfg = parse_config("command = store\nC = 10\nmode = gaussian\nT = 10\nn = 401\n")
        assert cfg.params.C == 10.0 and cfg.params.delta == 0.0
        assert cfg["epsilon"] == 1e-4 and cfg["truncation_fraction"] == 0.01
        assert cfg.output == "cavmem_run"
        assert set(cfg.tolerances) == {"tol", "epsilon", "truncation_fraction", "grid_tol"}

    def test_comments_and_lists(self):
        cfg = parse_config("# sweep\ncommand = scan-breakdown  # inline\nC_list = 1, 10\n")
        assert cfg["C_list"] == (1.0, 10.0)
        assert cfg["n"] == 2001 and cfg["tcgamma_points"] == 41

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2.*coop"):
            parse_config("command = store\ncoop = 3\n")

    def test_malformed_value_names_line(self):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config("command = store\nC = 1\nT = 1x\n")

    def test_duplicate(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("command = fast\nC = 1\nC = 2\n")

    def test_missing_keys_listed(self):
        with pytest.raises(ConfigError, match="C, mode, T, n"):
            parse_config("command = store\n")
        with pytest.raises(ConfigError, match="mode"):
            parse_config("command = retrieve\nC = 1\nT = 1\nn = 11\n")
        parse_config("command = retrieve\nC = 1\nT = 1\nn = 11\ncontrol = constant\n")

    def test_domain_error_propagates(self):
        with pytest.raises(DomainError):
            parse_config("command = fast\nC = -1\nT = 1\nn = 11\n")

    @pytest.mark.parametrize("text", ["command = launch\n", "C = 1\n",
                                      "command = store\nC = 1\nmode = wiggle\nT = 1\nn = 11\n",
                                      "command = fast\nC = 1\nT = 1\nn = 2.5\n",
                                      "command = fast\nC = 1\nT = -1\nn = 11\n",
                                      "command = fast\nC = 1\nT = 1\nn = 11\ntol = nan\n",
                                      "command = fast\nC = 1\nT = 1\nn = 11\nnot a pair\n"])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)


class TestModeCsv:
    def test_read_and_resample(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("re,im\n0,0\n1,0.5\n0,0\n")
        samples = read_mode_csv(path)
        np.testing.assert_array_equal(samples, [0, 1 + 0.5j, 0])
        env = resample_mode(samples, TimeGrid.span(2.0, 101))
        assert env.norm2 == pytest.approx(1.0)
        assert env.values[50] == pytest.approx(env.values[50].real * (1 + 0.5j))

    def test_csv_mode_run(self, tmp_path):
        mode = tmp_path / "m.csv"
        x = np.linspace(-1, 1, 51)
        mode.write_text("".join(f"{np.exp(-8 * v * v):.10f},0\n" for v in x))
        cfg = write(tmp_path, f"command = store\nC = 10\nmode = {mode}\nT = 10\nn = 401\n")
        assert main([cfg, "--out", str(tmp_path / "o")]) == 0
        row = scan_rows(tmp_path / "o_scan.csv")[0]
        assert float(row["eta_s"]) > 0.85


class TestRun:
    def test_store_outputs(self, tmp_path):
        cfg = parse_config(f"command = store\nC = 10\nmode = gaussian\nT = 10\nn = 401\n"
                           f"output = {tmp_path / 'a'}\n")
        files = run(cfg)
        assert set(files) == {"trajectory", "scan", "meta"}
        first = open(files["trajectory"]).readline()
        assert first.startswith("t,")
        row = scan_rows(files["scan"])[0]
        assert float(row["eta_s"]) == pytest.approx(0.9074, abs=5e-4)
        assert row["adiabatic"] == "true"
        meta = open(files["meta"]).read()
        assert "code_version = cavmem" in meta and "config.C = 10" in meta

    def test_retrieve_shaped(self, tmp_path):
        cfg = write(tmp_path, "command = retrieve\nC = 1\nmode = gaussian\nT = 100\nn = 801\n")
        assert main([cfg, "--out", str(tmp_path / "r")]) == 0
        row = scan_rows(tmp_path / "r_scan.csv")[0]
        assert float(row["eta_r"]) == pytest.approx(0.5, abs=1e-3)
        assert float(row["mode_overlap"]) > 0.99

    def test_fast(self, tmp_path):
        cfg = write(tmp_path, "command = fast\nC = 10\nT = 1\nn = 2001\n")
        assert main([cfg, "--out", str(tmp_path / "f")]) == 0
        row = scan_rows(tmp_path / "f_scan.csv")[0]
        assert float(row["eta_s"]) == pytest.approx(10 / 11, abs=2e-3)

    def test_shape_writes_envelopes(self, tmp_path):
        cfg = write(tmp_path, "command = shape\nC = 1\nmode = square\nT = 5\nn = 101\n"
                              "direction = retrieval\n")
        assert main([cfg, "--out", str(tmp_path / "s")]) == 0
        header = open(tmp_path / "s_trajectory.csv").readline().strip().split(",")
        assert header[0] == "t" and any(h.startswith("control") for h in header)

    def test_deterministic_across_prefixes(self, tmp_path):
        cfg = write(tmp_path, "command = scan-badcavity\nratios = 3, 10\n")
        assert main([cfg, "--out", str(tmp_path / "x")]) == 0
        assert main([cfg, "--out", str(tmp_path / "y"), "--threads", "2"]) == 0
        assert (tmp_path / "x_scan.csv").read_bytes() == (tmp_path / "y_scan.csv").read_bytes()

    def test_grid_scale(self, tmp_path):
        cfg = write(tmp_path, "command = retrieve\nC = 1\nT = 40\nn = 101\ncontrol = constant\n")
        assert main([cfg, "--out", str(tmp_path / "g"), "--grid-scale", "3"]) == 0
        assert "config.n = 301" in (tmp_path / "g_meta.txt").read_text()


class TestExitCodes:
    def test_config_errors(self, tmp_path, capsys):
        assert main([write(tmp_path, "command = store\ncoop = 1\n")]) == 2
        assert "line 2" in capsys.readouterr().err
        assert main([write(tmp_path, "command = fast\nC = -1\nT = 1\nn = 11\n")]) == 2

    def test_missing_file(self, tmp_path):
        assert main([str(tmp_path / "nope.cfg")]) == 4

    def test_bad_options(self, tmp_path):
        cfg = write(tmp_path, "command = fast\nC = 1\nT = 1\nn = 11\n")
        assert main([cfg, "--threads", "0"]) == 2

    def test_failed_check(self, tmp_path, monkeypatch):
        import cavmem.cli as cli
        from cavmem.experiments import ScanCheckError

        def fail(config, threads):
            raise ScanCheckError("spread too large")

        monkeypatch.setitem(cli.RUNNERS, "scan-universality", fail)
        cfg = write(tmp_path, "command = scan-universality\n")
        assert main([cfg, "--out", str(tmp_path / "u")]) == 1
        assert not list(tmp_path.glob("u_*"))
