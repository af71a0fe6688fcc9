from __future__ import annotations

import csv
import io

import pytest

from sparsedetect import presets
from sparsedetect.cli import CSV_COLUMNS, build_parser, main, read_config_file, resolve_settings


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestBounds:
    def test_moderate(self, capsys):
        code, out, _ = run(capsys, "bounds", "--beta", "0.35", "--zeta", "0.4")
        assert code == 0
        assert "(a) moderate" in out and "0.460517" in out

    def test_extreme(self, capsys):
        code, out, _ = run(capsys, "bounds", "--beta", "0.7", "--zeta", "0.5", "--subset-size", "2",
                           "--gamma", "5000")
        assert code == 0
        assert "(b) extreme" in out and "lower bound: 10\n" in out and "18.4208" in out

    def test_boundary(self, capsys):
        code, _, err = run(capsys, "bounds", "--beta", "0.5", "--zeta", "0.5")
        assert code == 2 and "boundary" in err


class TestConfig:
    def test_file_and_flag_precedence(self, tmp_path, monkeypatch):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nlambda2 = 0.4\ntrials = 7\nn-streams = 20\nrule = xs\n")
        monkeypatch.setenv("SPARSEDETECT_SEED", "99")
        args = build_parser().parse_args(["calibrate", "--config", str(cfg), "--trials", "9"])
        del args.command
        s = resolve_settings(args)
        assert s["lambda2"] == 0.4 and s["trials"] == 9 and s["n_streams"] == 20
        assert s["seed"] == 99
        assert s["rule"].value == "xs"

    def test_flag_seed_beats_env(self, monkeypatch):
        monkeypatch.setenv("SPARSEDETECT_SEED", "99")
        args = build_parser().parse_args(["arl", "--seed", "3"])
        del args.command
        assert resolve_settings(args)["seed"] == 3

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        with pytest.raises(ValueError):
            read_config_file(cfg)

    def test_invalid_lambda2_exit_code(self, capsys):
        code, _, err = run(capsys, "calibrate", "--lambda2", "-1")
        assert code == 2 and "lambda2" in err

    def test_zero_subset_rejected(self, capsys):
        code, _, _ = run(capsys, "delay", "--threshold", "5", "--subset-sizes", "0", "--trials", "2")
        assert code == 2

    def test_incompatible_model(self, capsys):
        code, _, err = run(capsys, "delay", "--threshold", "5", "--model", "poisson", "--rule", "xs",
                           "--epsilon0", "0.1")
        assert code == 2 and "poisson" in err

    def test_missing_epsilon(self, capsys):
        code, _, _ = run(capsys, "arl", "--rule", "xs", "--threshold", "5")
        assert code == 2

    def test_unknown_rule(self):
        with pytest.raises(SystemExit):
            main(["arl", "--rule", "nope"])


class TestOutput:
    def test_delay_csv(self, capsys, tmp_path):
        out = tmp_path / "d.csv"
        code, text, _ = run(capsys, "delay", "--rule", "mei", "--threshold", "10", "--n-streams", "10",
                            "--subset-sizes", "2,10", "--trials", "5", "--seed", "4", "--out", str(out))
        assert code == 0
        rows = list(csv.reader(io.StringIO(out.read_text())))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert [r[3] for r in rows[1:]] == ["2", "10"]
        assert all(r[5] == "delay" and r[9] == "4" for r in rows[1:])
        assert "#2" in text and "(" in text

    def test_csv_to_stdout(self, capsys):
        code, text, _ = run(capsys, "arl", "--rule", "mei", "--threshold", "3", "--n-streams", "5",
                            "--trials", "3", "--format", "csv")
        assert code == 0
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)

    def test_six_significant_digits(self, capsys):
        code, text, _ = run(capsys, "arl", "--rule", "mei", "--threshold", "3.14159265", "--n-streams", "5",
                            "--trials", "3", "--format", "csv")
        row = next(csv.DictReader(io.StringIO(text)))
        assert row["threshold"] == "3.14159"

    def test_calibration_failure_exit_code(self, capsys):
        code, _, err = run(capsys, "calibrate", "--rule", "mei", "--n-streams", "5", "--gamma", "100",
                           "--trials", "10", "--horizon", "20")
        assert code == 3 and "calibration failed" in err

    def test_table_determinism_small(self, tmp_path, capsys):
        paths = []
        for workers in ("1", "2"):
            p = tmp_path / f"t6_{workers}.csv"
            code, _, _ = run(capsys, "table", "6", "--trials", "6", "--subset-sizes", "10,100", "--seed", "8",
                             "--workers", workers, "--out", str(p))
            assert code == 0
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestPresets:
    def test_table_shapes(self):
        kind, rows = presets.table_rows(1)
        assert kind == "calibrate" and len(rows) == 10
        assert rows[-1].rule.sparsity.lambda2 == pytest.approx(1.99402, abs=1e-5)
        assert all(r.rule.kind.value == "sl_one_sided" for r in rows)
        kind, rows = presets.table_rows(4)
        assert [r.rule.label for r in rows][:7] == ["XS(1)", "XS(0.1)", "Mei", "Mei(0.1)", "Mei(0.3)",
                                                    "S(0.1)", "S(0.3)"]
        assert rows[0].threshold is None and rows[2].threshold == 88.5
        kind, rows = presets.table_rows(5)
        assert kind == "arl" and [r.family.name for r in rows] == ["poisson", "binomial"]
        assert all(r.rule.kind.value == "sl_two_sided" and r.threshold == 9.1 for r in rows)

    def test_windows(self):
        assert presets.standard_windows().lengths == tuple(range(1, 201))

    def test_invalid_table(self):
        with pytest.raises(ValueError):
            presets.table_rows(7)
