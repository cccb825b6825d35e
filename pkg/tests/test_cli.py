import csv
import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectralcp.cli import DETECT_SCHEMA, main, read_series, write_series
from spectralcp.errors import InvalidInput
from spectralcp.simulation import generate_scenario, scenario_preset

FAST = ["--mc-reps", "2000"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def scenario_csv(tmp_path):
    x = generate_scenario(scenario_preset("III", 500, phi=-0.9), seed=7).values
    path = tmp_path / "series.csv"
    write_series(str(path), x, header="value")
    return path, x


class TestCsvIo:
    def test_round_trip_exact(self, tmp_path):
        x = np.random.default_rng(0).standard_normal(200) * 10.0 ** np.random.default_rng(1).integers(-8, 8, 200)
        path = tmp_path / "a.csv"
        write_series(str(path), x)
        np.testing.assert_array_equal(read_series(str(path)), x)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=50))
    def test_round_trip_property(self, values):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "s.csv"
            with open(path, "w") as fh:
                for v in values:
                    fh.write(f"{v:.17g}\n")
            np.testing.assert_array_equal(read_series(str(path)), np.array(values, dtype=float))

    def test_header_and_named_column(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("time,ch1,ch2\n0,1.5,2\n\n1,2.5,3\n")
        np.testing.assert_array_equal(read_series(str(path), "ch1"), [1.5, 2.5])
        np.testing.assert_array_equal(read_series(str(path), 2), [2.0, 3.0])

    def test_bad_values(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("1\n2\nfoo\n")
        with pytest.raises(InvalidInput):
            read_series(str(path))
        path.write_text("1\nnan\n")
        with pytest.raises(InvalidInput):
            read_series(str(path))

    def test_unknown_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a\n1\n")
        with pytest.raises(InvalidInput):
            read_series(str(path), "b")


class TestDetect:
    def test_scenario_round_trip_and_schema(self, scenario_csv, capsys):
        path, _ = scenario_csv
        code, out, _ = run(["detect", "--input", path, "--column", "value", *FAST], capsys)
        assert code == 0
        doc = json.loads(out)
        jsonschema.validate(doc, DETECT_SCHEMA)
        assert abs(doc["detection"]["k_tilde"] - 250) <= 5
        assert doc["nuisance"]["xi2"] > 0
        assert len(doc["confidence_intervals"]) == 3
        assert doc["detection"]["loss_curve_stage1"]["k"]

    def test_csv_format_and_output_file(self, scenario_csv, tmp_path, capsys):
        path, _ = scenario_csv
        out_path = tmp_path / "r.csv"
        code, _, _ = run(["detect", "--input", path, "--format", "csv", "--output", out_path, *FAST], capsys)
        assert code == 0
        rows = list(csv.DictReader(open(out_path)))
        assert [float(r["level"]) for r in rows] == [0.9, 0.95, 0.99]

    def test_ci_subcommand(self, scenario_csv, capsys):
        path, _ = scenario_csv
        code, out, _ = run(["ci", "--input", path, "--levels", "0.9", *FAST], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["command"] == "ci"
        assert "loss_curve_stage1" not in doc["detection"]
        jsonschema.validate(doc, DETECT_SCHEMA)

    def test_short_series_exit_2(self, tmp_path, capsys):
        path = tmp_path / "short.csv"
        path.write_text("\n".join(str(v) for v in range(10)) + "\n")
        code, _, err = run(["detect", "--input", path, "--min-segment", "20"], capsys)
        assert code == 2 and "shorter" in err

    def test_missing_file_exit_2(self, tmp_path, capsys):
        code, _, _ = run(["detect", "--input", tmp_path / "nope.csv"], capsys)
        assert code == 2

    def test_bad_lag_exit_2(self, scenario_csv, capsys):
        path, _ = scenario_csv
        code, _, _ = run(["detect", "--input", path, "--lag", "bic"], capsys)
        assert code == 2

    def test_no_jump_exit_3_with_document(self, tmp_path, capsys):
        path = tmp_path / "wn.csv"
        write_series(str(path), np.random.default_rng(0).standard_normal(200))
        code, out, _ = run(["detect", "--input", path, "--lag", "fixed:0", *FAST], capsys)
        assert code == 3
        doc = json.loads(out)
        assert doc["status"] == "no_jump" and doc["confidence_intervals"] == []
        jsonschema.validate(doc, DETECT_SCHEMA)

    def test_eeg_style_nested_intervals(self, tmp_path, capsys):
        # T = 110 export with a header, levels 0.70 to 0.99
        x = generate_scenario(scenario_preset("II", 110, theta=-0.9, phi=0.5), seed=2).values * 40 + 3
        path = tmp_path / "eeg.csv"
        with open(path, "w") as fh:
            fh.write("time,Fp1\n")
            for i, v in enumerate(x):
                fh.write(f"{i},{float(v)!r}\n")
        levels = "0.70,0.80,0.90,0.95,0.99"
        code, out, _ = run(["detect", "--input", path, "--column", "Fp1", "--levels", levels, *FAST], capsys)
        assert code == 0
        doc = json.loads(out)
        cis = doc["confidence_intervals"]
        assert [c["level"] for c in cis] == [0.7, 0.8, 0.9, 0.95, 0.99]
        k = doc["detection"]["k_tilde"]
        for small, big in zip(cis, cis[1:]):
            assert big["lower"] <= small["lower"] <= k <= small["upper"] <= big["upper"]
        assert 1 <= cis[-1]["lower"] and cis[-1]["upper"] <= 110

    def test_deterministic(self, scenario_csv, capsys):
        path, _ = scenario_csv
        a = run(["detect", "--input", path, "--seed", "4", *FAST], capsys)
        b = run(["detect", "--input", path, "--seed", "4", *FAST], capsys)
        assert a == b

    def test_invalid_levels_argparse(self, scenario_csv, capsys):
        path, _ = scenario_csv
        with pytest.raises(SystemExit) as exc:
            main(["detect", "--input", str(path), "--levels", "1.5"])
        assert exc.value.code == 2


class TestSpectrum:
    def test_white_noise_flat(self, tmp_path, capsys):
        path = tmp_path / "wn.csv"
        write_series(str(path), np.random.default_rng(3).standard_normal(5000))
        prefix = tmp_path / "spec"
        code, _, _ = run(["spectrum", "--input", path, "--k", "2500", "--output", prefix], capsys)
        assert code == 0
        for side in ("pre", "post"):
            data = np.loadtxt(f"{prefix}_{side}.csv", delimiter=",", skiprows=1)
            lam, f = data[:, 0], data[:, 1]
            assert lam.size == 512 and lam[0] == 0.0 and lam[-1] == np.pi
            assert np.all(f > 0)
            assert f.max() / f.min() < 1.2

    def test_detected_split_and_positive(self, scenario_csv, tmp_path, capsys):
        path, _ = scenario_csv
        prefix = tmp_path / "s3"
        code, _, _ = run(["spectrum", "--input", path, "--output", prefix, "--points", "64"], capsys)
        assert code == 0
        with open(f"{prefix}_post.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["lambda", "f"] and len(rows) == 65
        f = np.array([float(r[1]) for r in rows[1:]])
        # post-change AR(1) with phi = -0.9 puts its mass near pi
        assert np.all(f > 0) and f[-1] > 10 * f[0]


class TestSimulate:
    def test_single_rep(self, capsys):
        code, out, _ = run(["simulate", "--scenario", "III", "--phi", "-0.9", "--T", "300", "--reps", "1", *FAST], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["reps"] == 1
        assert all(v in (0.0, 1.0) for v in doc["coverage"].values())
        assert set(doc["row"]) >= {"Truth", "AB(k_hat)", "AB(k_tilde)", "CP90", "CP95", "CP99"}

    def test_deterministic_bytes(self, capsys):
        argv = ["simulate", "--scenario", "II", "--theta", "-0.9", "--phi", "0.5", "--T", "300", "--reps", "3", "--seed", "2", *FAST]
        assert run(argv, capsys) == run(argv, capsys)

    def test_csv_row(self, capsys):
        code, out, _ = run(["simulate", "--scenario", "III", "--phi", "-0.9", "--T", "300", "--reps", "2", "--format", "csv", *FAST], capsys)
        assert code == 0
        rows = list(csv.DictReader(out.splitlines()))
        assert rows[0]["Truth"] == "150"

    def test_table_3_row(self, capsys):
        argv = ["simulate", "--scenario", "III", "--phi", "-0.9", "--T", "500", "--kstar", "166", "--reps", "100", "--seed", "1", *FAST]
        code, out, _ = run(argv, capsys)
        assert code == 0
        assert 0.4 <= json.loads(out)["ab_tilde"] <= 2.5

    def test_invalid_spec_exit_2(self, capsys):
        code, _, err = run(["simulate", "--scenario", "II", "--phi", "0.5", "--reps", "1"], capsys)
        assert code == 2 and "theta" in err


class TestQuantiles:
    def test_symmetric_default_probs(self, capsys):
        code, out, _ = run(["quantiles", "--mc-reps", "20000"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert abs(doc["median"]) <= 0.5
        assert doc["probs"] == [0.005, 0.025, 0.05, 0.1, 0.15, 0.5, 0.85, 0.9, 0.95, 0.975, 0.995]
        assert doc["truncation_warning"] is False

    def test_tiny_grid_warning_field(self, capsys):
        code, out, _ = run(["quantiles", "--mc-R", "1", "--mc-delta", "0.01", "--mc-reps", "2000"], capsys)
        assert code == 0
        assert json.loads(out)["truncation_warning"] is True

    def test_custom_probs(self, capsys):
        code, out, _ = run(["quantiles", "--probs", "0.1,0.9", "--mc-reps", "2000", "--sigma2-star", "2"], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["probs"] == [0.1, 0.9] and doc["quants"][0] < doc["quants"][1]

    def test_invalid_mc_exit_2(self, capsys):
        code, _, _ = run(["quantiles", "--mc-reps", "10"], capsys)
        assert code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "spectralcp", "quantiles", "--mc-reps", "1000"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "quantiles"
