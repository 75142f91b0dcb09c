import subprocess
import sys

import numpy as np
import pytest

from qtrack.cli import build_parser, main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows(path):
    return path.read_text().splitlines()


class TestTrack:
    def test_row_count(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        code, _, err = run(["track", "--stream", "normal-sine", "--controller", "oracle", "--q", "0.7",
                            "--n", "100000", "--seed", "1", "--out", str(out)], capsys)
        assert code == 0
        lines = rows(out)
        assert lines[0] == "n,x,estimate,lambda,mse_hat,true_q,sq_err"
        assert len(lines) == 100_001
        assert "observed_mse=" in err and "final_lambda=" in err and "rate=" in err

    def test_thinning(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        run(["track", "--controller", "fixed", "--n", "1001", "--thinning", "10", "--out", str(out)], capsys)
        assert len(rows(out)) == 1 + 101

    @pytest.mark.parametrize("controller", ["oracle", "hil", "fixed"])
    def test_deterministic(self, tmp_path, capsys, controller):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["track", "--stream", "chisq-sine", "--estimator", "frugal", "--controller", controller,
                "--n", "20000", "--seed", "3"]
        run(args + ["--out", str(a)], capsys)
        run(args + ["--out", str(b)], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_output(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(["track", "--n", "500", "--seed", "1", "--out", str(a)], capsys)
        run(["track", "--n", "500", "--seed", "2", "--out", str(b)], capsys)
        assert a.read_bytes() != b.read_bytes()

    def test_seed_from_environment(self, tmp_path, capsys, monkeypatch):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        monkeypatch.setenv("QTRACK_SEED", "5")
        run(["track", "--n", "300", "--out", str(a)], capsys)
        monkeypatch.delenv("QTRACK_SEED")
        run(["track", "--n", "300", "--seed", "5", "--out", str(b)], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_rate_pipeline(self, tmp_path, capsys):
        ts = tmp_path / "ticks.txt"
        code, _, _ = run(["timestamps", "--duration", "86400", "--base-rate", "0.1", "--event-at", "50000",
                          "--seed", "2", "--out", str(ts)], capsys)
        assert code == 0
        out = tmp_path / "r.csv"
        code, _, err = run(["track", "--input", str(ts), "--transform", "rate", "--estimator", "frugal",
                            "--controller", "hil", "--out", str(out)], capsys)
        assert code == 0
        n_ts = len([l for l in rows(ts) if l.strip()])
        lines = rows(out)
        assert len(lines) - 1 <= n_ts - 1
        assert lines[1].endswith(",,")
        assert "observed_mse=n/a" in err

    def test_raw_input(self, tmp_path, capsys):
        src = tmp_path / "x.txt"
        src.write_text("# values\n" + "\n".join(str(v) for v in np.linspace(1, 3, 50)))
        out = tmp_path / "o.csv"
        assert run(["track", "--input", str(src), "--controller", "fixed", "--out", str(out)], capsys)[0] == 0
        assert len(rows(out)) == 51

    def test_stdout(self, capsys):
        code, out, _ = run(["track", "--n", "5", "--controller", "fixed"], capsys)
        assert code == 0 and len(out.splitlines()) == 6

    @pytest.mark.parametrize("argv,msg", [
        (["track", "--q", "1.5", "--n", "10"], "--q"),
        (["track", "--input", "/nonexistent/file", "--out", "-"], "cannot read"),
        (["track", "--transform", "rate", "--n", "10"], "--input"),
        (["track", "--n", "0"], "--n"),
        (["track", "--controller", "fixed", "--lambda", "2.0", "--n", "10"], "DUMIQE"),
        (["track", "--stream", "chisq-sine", "--nu", "1", "--n", "10"], "invalid stream"),
        (["track", "--controller", "hil", "--a", "1.0", "--n", "10"], "a must exceed 1"),
    ])
    def test_errors(self, argv, msg, capsys):
        code, _, err = run(argv, capsys)
        assert code == 2
        assert msg in err

    def test_negative_input_with_dumiqe(self, tmp_path, capsys):
        src = tmp_path / "x.txt"
        src.write_text("-1\n2\n3\n")
        code, _, err = run(["track", "--input", str(src), "--controller", "fixed", "--out", "-"], capsys)
        assert code == 2 and "positive" in err

    def test_too_many_requested(self, tmp_path, capsys):
        src = tmp_path / "x.txt"
        src.write_text("1\n2\n3\n")
        code, _, err = run(["track", "--input", str(src), "--n", "10"], capsys)
        assert code == 2 and "exceeds" in err


class TestGrid:
    def test_default_rows(self, tmp_path, capsys):
        out = tmp_path / "g.csv"
        code, _, err = run(["grid", "--n", "20000", "--out", str(out)], capsys)
        assert code == 0
        lines = rows(out)
        assert lines[0] == "lambda,mse,n_steps,seed"
        assert len(lines) == 142
        assert float(lines[1].split(",")[0]) == pytest.approx(np.exp(-7))
        assert float(lines[-1].split(",")[0]) == pytest.approx(1.0)
        assert "argmin_lambda=" in err

    def test_single_point(self, tmp_path, capsys):
        out = tmp_path / "g.csv"
        run(["grid", "--n", "1000", "--grid-points", "1", "--out", str(out)], capsys)
        assert len(rows(out)) == 2

    def test_mixture(self, tmp_path, capsys):
        code, _, err = run(["grid", "--n", "5000", "--grid-points", "5", "--mixture", "--out",
                            str(tmp_path / "g.csv")], capsys)
        assert code == 0 and "mixture_baseline=" in err

    def test_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            run(["grid", "--n", "5000", "--estimator", "frugal", "--seed", "9", "--out", str(p)], capsys)
        assert a.read_bytes() == b.read_bytes()


class TestSynth:
    def test_rows(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        assert run(["synth", "--n", "10", "--out", str(out)], capsys)[0] == 0
        lines = rows(out)
        assert lines[0] == "n,x,true_q"
        assert len(lines) == 11
        # n = 0 has zero phase, so the 0.7-quantile is 8 + z_0.7
        assert float(lines[1].split(",")[2]) == pytest.approx(8.524400512708041, abs=1e-9)

    def test_chisq_defaults(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        run(["synth", "--stream", "chisq-sine", "--q", "0.5", "--n", "3", "--out", str(out)], capsys)
        assert float(rows(out)[1].split(",")[2]) == pytest.approx(5.348120627447121, abs=1e-9)


class TestTimestamps:
    def test_stdout(self, capsys):
        code, out, err = run(["timestamps", "--duration", "3600", "--base-rate", "0.5"], capsys)
        assert code == 0
        vals = [float(v) for v in out.split()]
        assert np.all(np.diff(vals) >= 0)
        assert f"events={len(vals)}" in err

    def test_bad_rate(self, capsys):
        code, _, err = run(["timestamps", "--base-rate", "-1", "--duration", "10"], capsys)
        assert code == 2


def test_help_lists_defaults():
    text = build_parser()._subparsers._group_actions[0].choices["track"].format_help()
    for snippet in ("default: 0.7", "default: 1.5", "default: 1000", "default: -7", "default: 141"):
        assert snippet in text


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.csv"
    res = subprocess.run([sys.executable, "-m", "qtrack", "synth", "--n", "4", "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert len(rows(out)) == 5
