import json

import pytest

from astree.cli import main
from astree.core import read_csv_rows, read_events_csv, read_profile_csv, replay_masses


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_mean_table_has_metadata(capsys):
    code, out, _ = run(["analytic", "mean", "--c", "2", "--t", "1", "--depths", "0..3"], capsys)
    assert code == 0
    assert out.startswith("# version:")
    header, rows = read_csv_rows(out)
    assert header == ["depth", "y_n", "mean_count"] and len(rows) == 4
    assert float(rows[1][1][1]) == pytest.approx(0.4773024370823822, rel=1e-14)


def test_cov_json(capsys):
    code, out, _ = run(["analytic", "cov", "--c", "2", "--t", "1", "--n", "0", "--nprime", "1",
                        "--json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["cov_exact"] == pytest.approx(-0.35118, abs=1e-5)
    assert doc["meta"]["command"].startswith("astree analytic cov")


def test_negative_index_range(capsys):
    code, out, _ = run(["analytic", "limit-profile", "--c", "2", "--t", "1", "--i=-2..2",
                        "--json"], capsys)
    assert code == 0 and len(json.loads(out)["rows"]) == 5


def test_validation_exit_code(capsys):
    code, _, err = run(["analytic", "mean", "--c", "0.9", "--t", "1", "--depths", "0..3"], capsys)
    assert code == 1 and "c>1" in err


def test_usage_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["analytic", "mean", "--c", "2"])
    assert info.value.code == 1


def test_numerical_exit_code(capsys):
    code, _, err = run(["analytic", "mean", "--c", "2", "--t", "0.5", "--depths", "10..10",
                        "--precision", "double"], capsys)
    assert code == 2 and "numerical" in err


def test_simulate_writes_replayable_files(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code, _, _ = run(["simulate", "--c", "1.5", "--stop-external", "50", "--seed", "3",
                      "--out", str(out), "--tree-out", str(tmp_path / "tree.csv")], capsys)
    assert code == 0
    times, depths = read_events_csv(out)
    assert all(m == 1 for m in replay_masses(depths))
    assert read_profile_csv(tmp_path / "run.profile.csv").total == 50
    header, rows = read_csv_rows(tmp_path / "tree.csv")
    assert len(rows) == 50


def test_limit_curve(capsys):
    code, out, _ = run(["senescence", "limit-curve", "--c", "2", "--tmin", "0.3", "--tmax", "2",
                        "--points", "2"], capsys)
    header, rows = read_csv_rows(out)
    assert code == 0 and header[:2] == ["t", "L"]
    assert float(rows[1][1][1]) == pytest.approx(0.23939853471268485, rel=1e-12)


def test_verify_failure_exit_code(capsys):
    code, out, _ = run(["verify", "mean", "--c", "2", "--t", "1", "--depths", "0..2",
                        "--replicates", "200", "--z-max", "0.001", "--json"], capsys)
    doc = json.loads(out)
    assert code == 3 and doc["pass"] is False and len(doc["reports"]) == 3


def test_verify_pass(capsys):
    code, out, _ = run(["verify", "mean", "--c", "2", "--t", "1", "--depths", "0..2",
                        "--replicates", "2000"], capsys)
    assert code == 0 and "PASS" in out


def test_fit_roundtrip(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("t,L\n0.5,0.99\n1,0.93\n2,0.5\n3,0.24\n")
    curve = tmp_path / "curve.csv"
    code, out, _ = run(["fit", "--input", str(data), "--curve-out", str(curve), "--json"], capsys)
    doc = json.loads(out)
    assert code == 0 and 1.05 < doc["c_hat"] < 10
    header, rows = read_csv_rows(curve)
    assert header == ["t", "L_fit"] and rows


def test_fit_rejects_rows(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("t,L\n0.5,0.99\n-1,0.5\n2,1.4\n")
    code, _, err = run(["fit", "--input", str(data)], capsys)
    assert code == 1 and "line 3" in err and "line 4" in err


def test_repro_fig1(tmp_path, capsys):
    code, _, _ = run(["repro", "fig1", "--c", "3", "--external", "40",
                      "--out-dir", str(tmp_path)], capsys)
    assert code == 0 and list(tmp_path.iterdir())
