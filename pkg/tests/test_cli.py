import csv
import io
import json
import math
import subprocess
import sys

import pytest

from glsurf import cli


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture(autouse=True)
def cache(tmp_path, monkeypatch):
    d = tmp_path / "cache"
    monkeypatch.setenv("GLSURF_CACHE_DIR", str(d))
    return d


# -- parsing ---------------------------------------------------------------


@pytest.mark.parametrize("text,value", [
    ("0.3", 0.3), ("pi/2", math.pi / 2), ("3pi/8", 3 * math.pi / 8), ("0.25*pi", math.pi / 4),
    ("-1e-3", -1e-3), ("pi", math.pi),
])
def test_parse_number(text, value):
    assert cli.parse_number(text) == pytest.approx(value)


def test_parse_grid():
    assert cli.parse_grid("0:1:5") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert cli.parse_grid("4,6,8") == [4.0, 6.0, 8.0]
    assert cli.parse_grid("0:pi/2:3")[-1] == pytest.approx(math.pi / 2)
    with pytest.raises(ValueError):
        cli.parse_grid("0:1")
    with pytest.raises(ValueError):
        cli.parse_number("abc")


def test_theta0_defaults_are_valid():
    cfg = cli.parse_and_validate(["theta0"])
    assert cfg.subcommand == "theta0"
    assert cfg.params["h"] == pytest.approx(1 / 200)
    assert cfg.seed == 0


def test_out_of_range_b_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_and_validate(["cell", "--b", "1.5", "--nu", "0", "--ell", "4"])
    assert exc.value.code == 2
    assert "--b" in capsys.readouterr().err


def test_missing_table_names_the_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_and_validate(["predict", "--mesh", "cube", "--kappa", "400", "--H", "400",
                                "--e2", "e2.json"])
    assert exc.value.code == 2
    assert "--table" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["theta0", "--bogus", "1"],
    ["theta0", "--se", "1"],  # no abbreviations
    ["cell", "--b", "x", "--nu", "0", "--ell", "4"],
    ["cell", "--b", "1", "--nu", "2", "--ell", "4"],
    ["cell", "--b", "1", "--nu", "0", "--ell", "4", "--h", "0.5"],
    ["table", "--b-grid", "0.9,0.5", "--nu-grid", "0,1"],
    ["e2", "--points", "3"],
    ["bulk", "--b-grid", "0.5", "--R", "1"],
])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.parse_and_validate(argv)
    assert exc.value.code == 2


def test_runtime_error_exits_1(tmp_path, capsys):
    bad = tmp_path / "open.off"
    bad.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    curve = tmp_path / "curve.json"
    curve.write_text(json.dumps({"nu": [0, 1.5707963267948966], "zeta": [0.59, 1.0]}))
    code, out = run(["gamma", "--mesh", str(bad), "--b", "0.8", "--curve", str(curve)], capsys)
    assert code == 1
    assert "open edge" in out.err


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "glsurf.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


# -- artifacts -------------------------------------------------------------


def test_theta0_json_and_csv(tmp_path, capsys):
    csv_path = tmp_path / "mu1.csv"
    code, out = run(["theta0", "--h", "0.02", "--csv", str(csv_path)], capsys)
    assert code == 0
    data = json.loads(out.out)
    for key in ("version", "config_hash", "seed", "grid", "provenance", "result"):
        assert key in data
    assert set(data["result"]) >= {"theta0", "xi0", "h", "residual"}
    rows = list(csv.reader(io.StringIO(csv_path.read_text())))
    assert rows[0] == ["xi", "mu1"]


def test_cell_output_is_byte_identical_across_runs(tmp_path):
    argv = ["cell", "--b", "0.9", "--nu", "0", "--ell", "2", "--serial", "--seed", "7"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(argv + ["--json", str(a)]) == 0
    assert cli.main(argv + ["--json", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    data = json.loads(a.read_text())
    assert data["seed"] == 7
    assert set(data["result"]) >= {"d", "d_per_area", "sup_norm", "virial_gap", "decay_integral"}


def _numbers(x, out):
    if isinstance(x, dict):
        for k in sorted(x):
            _numbers(x[k], out)
    elif isinstance(x, list):
        for v in x:
            _numbers(v, out)
    elif isinstance(x, float):
        out.append(x)
    return out


def test_threads_match_serial(tmp_path):
    base = ["table", "--b-grid", "0.5,0.7", "--nu-grid", "0,pi/2", "--ells", "2,3,4"]
    a, b = tmp_path / "serial.json", tmp_path / "threads.json"
    assert cli.main(base + ["--serial", "--out", str(a)]) == 0
    assert cli.main(base + ["--threads", "4", "--force", "--out", str(b)]) == 0
    x, y = _numbers(json.loads(a.read_text()), []), _numbers(json.loads(b.read_text()), [])
    assert len(x) == len(y)
    for u, v in zip(x, y):
        assert v == pytest.approx(u, rel=1e-10, abs=1e-300)


def test_stale_cache_is_refused_unless_forced(tmp_path, cache, capsys):
    argv = ["zeta", "--nu-grid", "0:pi/2:9", "--h", "0.25"]
    assert run(argv, capsys)[0] == 0
    entry = next(cache.glob("zeta-*.json"))
    data = json.loads(entry.read_text())
    data["config_hash"] = "0" * 16
    entry.write_text(json.dumps(data))
    code, out = run(argv, capsys)
    assert code == 1 and "--force" in out.err
    assert run(argv + ["--force"], capsys)[0] == 0
    assert json.loads(entry.read_text())["config_hash"] != "0" * 16


def test_zeta_csv_schema(tmp_path, capsys):
    path = tmp_path / "zeta.csv"
    assert run(["zeta", "--nu-grid", "0:pi/2:9", "--h", "0.25", "--csv", str(path)], capsys)[0] == 0
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    assert list(rows[0]) == ["nu", "zeta", "gap", "flag"]
    assert len(rows) == 9


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipeline")
    mp = pytest.MonkeyPatch()
    mp.setenv("GLSURF_CACHE_DIR", str(d / "cache"))
    zeta = d / "zeta.json"
    table = d / "table.json"
    e2 = d / "e2.json"
    assert cli.main(["zeta", "--nu-grid", "0:pi/2:9", "--h", "0.25", "--out", str(zeta)]) == 0
    assert cli.main(["table", "--b-grid", "0.5,0.75,1", "--nu-grid", "0:pi/2:3", "--ells", "3,4,5",
                     "--curve", str(zeta), "--out", str(table)]) == 0
    e2.write_text(json.dumps({"result": {"E2": -0.43}}))
    mp.undo()
    return d, zeta, table, e2


def test_pipeline_prediction_has_provenance_chain(pipeline, capsys):
    d, zeta, table, e2 = pipeline
    out = d / "pred.json"
    code = cli.main(["predict", "--mesh", "icosphere4", "--kappa", "400", "--H", "400",
                     "--table", str(table), "--e2", str(e2), "--json", str(out)])
    assert code == 0
    data = json.loads(out.read_text())
    assert set(data["upstream"]) == {"table", "e2"}
    assert data["provenance"]["surface_term"] == "extrapolated"
    res = data["result"]
    assert res["bulk_term"] == 0.0
    assert res["total"] == pytest.approx(res["surface_term"])
    assert res["total"] < 0
    tdata = json.loads(table.read_text())
    assert tdata["upstream"]["curve"]
    assert set(tdata["result"]["meta"]) >= {"theta0", "ells", "grid"}


def test_pipeline_gamma_and_scan(pipeline):
    d, zeta, table, e2 = pipeline
    g = d / "gamma.csv"
    assert cli.main(["gamma", "--mesh", "icosphere3", "--b", "0.8", "--curve", str(zeta),
                     "--csv", str(g), "--json", str(d / "gamma.json")]) == 0
    rows = list(csv.DictReader(io.StringIO(g.read_text())))
    assert list(rows[0]) == ["facet_id", "nu", "zeta", "in_gamma", "area"]
    s = d / "scan.csv"
    assert cli.main(["scan", "--mesh", "icosphere3", "--kappa", "1e4", "--a", "0.1:8:20",
                     "--table", str(table), "--e2", str(e2), "--csv", str(s),
                     "--json", str(d / "scan.json")]) == 0
    rows = list(csv.DictReader(io.StringIO(s.read_text())))
    assert list(rows[0]) == cli.CSV_COLUMNS["scan"]
    assert len(rows) == 20


def test_predict_regime_error_exits_1(pipeline, capsys):
    _, _, table, e2 = pipeline
    code, out = run(["predict", "--mesh", "cube", "--kappa", "400", "--H", "100",
                     "--table", str(table), "--e2", str(e2)], capsys)
    assert code == 1 and "kappa" in out.err
