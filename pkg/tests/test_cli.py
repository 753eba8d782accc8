import csv
import io
import json

import pytest

from dtnlab import cli, config
from dtnlab.engine import InvariantViolation


def invoke(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_grid_preset(capsys):
    code, out, _ = invoke(capsys, "analyze", "--preset", "paper-fig2", "--lambda", "0.3", "--beta", "1.2")
    assert code == 0
    rep = json.loads(out)
    assert rep["schema"] == config.REPORT_SCHEMA
    assert rep["capacity"]["mu"] == pytest.approx(0.4897241, abs=1e-6)
    assert rep["J"] == 4
    assert rep["delay_bound"]["value"] > 0
    assert rep["energy_curve"]["slopes"] == pytest.approx([0.5, 1.0, 1.0, 2.0])
    assert config.report_from_json(out).mu == pytest.approx(rep["capacity"]["mu"])


def test_analyze_single_cell(capsys):
    code, out, _ = invoke(capsys, "analyze", "--preset", "single-cell")
    assert code == 0
    assert json.loads(out)["capacity"]["mu"] == pytest.approx(0.5)


def test_analyze_config_file(tmp_path, capsys):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(config.preset("oracle-2x2-n4")))
    code, out, _ = invoke(capsys, "analyze", "--config", str(path))
    assert code == 0 and json.loads(out)["capacity"]["n_users"] == 4


def test_simulate_csv_is_reproducible(tmp_path, capsys):
    args = ["simulate", "--preset", "paper-fig2", "--lambda", "0.3", "--slots", "20000", "--seed", "4"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.read_text())))
    assert list(rows[0]) == cli.CSV_COLUMNS
    assert rows[0]["schema"] == config.CSV_SCHEMA
    assert float(rows[0]["delivered_rate"]) == pytest.approx(0.3, rel=0.05)


def test_simulate_min_energy_json(capsys):
    code, out, _ = invoke(capsys, "simulate", "--preset", "paper-fig2", "--iid", "--lambda", "0.2",
                          "--algorithm", "min_energy", "--beta", "1.5", "--slots", "20000", "--format", "json")
    assert code == 0
    row = json.loads(out)
    assert row["n_AdjDirect"] == 0 and row["energy_bound"] > 0


def test_unstable_rate_warns(capsys):
    code, _, err = invoke(capsys, "simulate", "--preset", "paper-fig2", "--lambda", "0.55", "--slots", "2000")
    assert code == 0 and "warning" in err


def test_sweep_aggregate(capsys):
    code, out, _ = invoke(capsys, "sweep", "--preset", "paper-fig2", "--lambdas", "0.1,0.3",
                          "--seeds", "0,1", "--slots", "10000", "--aggregate")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [float(r["lambda"]) for r in rows] == [0.1, 0.3]


@pytest.mark.parametrize("argv", [
    ["analyze", "--preset", "paper-fig2", "--bogus"],
    ["analyze", "--preset", "no-such-preset"],
    ["analyze"],
    ["simulate", "--preset", "paper-fig2", "--lambda", "0.2", "--algorithm", "min_energy", "--beta", "5"],
    ["sweep", "--preset", "paper-fig2", "--lambdas", "0.1,x"],
    ["netcod", "--epsilon", "0.3", "--slots", "100"],
])
def test_bad_input_exits_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        raise SystemExit(cli.main(argv))
    assert exc.value.code == 1


def test_bad_config_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"topology": {"rows": 2, "cols": 2}, "n_users": 3}))
    assert invoke(capsys, "analyze", "--config", str(path))[0] == 1
    path.write_text("{not json")
    assert invoke(capsys, "analyze", "--config", str(path))[0] == 1


def test_oracle_all_small(capsys):
    code, out, _ = invoke(capsys, "oracle", "--all-small")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 9 and all(r["pass"] == "True" for r in rows)


def test_oracle_failure_exits_2(capsys):
    assert invoke(capsys, "oracle", "--preset", "oracle-2x2-n4", "--tol", "-1")[0] == 2


def test_netcod_small(capsys):
    code, out, _ = invoke(capsys, "netcod", "--slots", "70000", "--format", "json")
    assert code == 0
    data = json.loads(out)
    assert len(data["nodes"]) == 6
    assert data["summary"]["xor_broadcasts"] > 0


def test_invariant_violation_exits_2(monkeypatch, capsys):
    def boom(*a, **k):
        raise InvariantViolation("forced")

    monkeypatch.setattr(cli, "run", boom)
    code, _, err = invoke(capsys, "simulate", "--preset", "paper-fig2", "--slots", "100")
    assert code == 2 and "forced" in err
