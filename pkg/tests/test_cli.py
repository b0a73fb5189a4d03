import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qextreme import __version__
from qextreme.cli import ConfigError, config_hash, main, validate_config

REF = {
    "model": "mboson",
    "parameters": {"gamma": [6.0, 1.0], "kappa": [0.0, 1.0]},
    "truncation": 500_000,
    "outputs": ["distribution", "fit"],
    "seed": 0,
}


def _write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _sweep_table(path):
    header, rows = _read_csv(path)
    out = {}
    for value, quantity, v, _ in rows:
        out.setdefault(quantity, []).append((float(value), float(v)))
    return header, out


@pytest.fixture(scope="module")
def ref_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ref")
    cfg = _write_cfg(tmp, REF)
    assert main(["run", "--config", cfg, "--out", str(tmp / "out")]) == 0
    return tmp / "out"


# ---------------------------------------------------------------------------
# run


def test_run_reference_outputs(ref_run):
    header, rows = _read_csv(ref_run / "distribution.csv")
    assert header == ["n", "rho_nn"]
    assert len(rows) == 500_001 and rows[0][0] == "0"
    fit = json.loads((ref_run / "fit.json").read_text())
    assert fit["nu_hat"] == pytest.approx(1.5, abs=0.05)
    assert fit["nu_predicted"] == pytest.approx(1.5)


def test_manifest_fields(ref_run):
    m = json.loads((ref_run / "manifest.json").read_text())
    for key in ("config_hash", "version", "residuals", "warnings", "wall_time_s"):
        assert key in m
    assert m["version"] == __version__
    assert m["config_hash"] == config_hash(validate_config(REF))
    assert m["residuals"]["steady_state"] < 1e-12
    assert sorted(m["files"]) == ["distribution.csv", "fit.json"]


def test_csv_number_format(ref_run):
    text = (ref_run / "distribution.csv").read_text()
    assert "\r" not in text
    value = text.splitlines()[2].split(",")[1]
    assert float(value) == float(repr(float(value)))
    assert len(value.replace(".", "").replace("-", "").split("e")[0].lstrip("0")) <= 17


def test_run_is_deterministic(tmp_path):
    cfg = dict(REF, truncation=20_000, outputs=["distribution", "sample", "moments", "g2", "wigner"])
    path = _write_cfg(tmp_path, cfg)
    for out in ("a", "b"):
        assert main(["run", "--config", path, "--out", str(tmp_path / out), "--seed", "77"]) == 0
    for f in ("distribution.csv", "sample.csv", "sample_summary.json", "moments.csv", "g2.json", "wigner.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_sample_record_median(tmp_path):
    cfg = dict(REF, outputs=["sample"], n_samples=500, seed=0)
    out = tmp_path / "out"
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    header, rows = _read_csv(out / "sample.csv")
    assert header == ["n", "count"]
    assert sum(int(c) for _, c in rows) == 500
    summary = json.loads((out / "sample_summary.json").read_text())
    print(f"sample median {summary['median']}, p90 {summary['p90']}, max {summary['max_observed']}")
    assert summary["median"] == 1


def test_json_format(tmp_path):
    cfg = dict(REF, truncation=5_000, outputs=["distribution", "moments"], format="json")
    out = tmp_path / "out"
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    data = json.loads((out / "distribution.json").read_text())
    assert len(data["n"]) == 5_001 and sum(data["rho_nn"]) == pytest.approx(1.0)
    moments = json.loads((out / "moments.json").read_text())
    assert moments["k"] == [1, 2, 3, 4]


def test_closed_form_moments_in_table(tmp_path):
    cfg = dict(REF, parameters={"gamma": [24.0, 1.0], "kappa": [0.0, 1.0]}, truncation=100_000,
               outputs=["moments", "g2"], max_k=2)
    out = tmp_path / "out"
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    _, rows = _read_csv(out / "moments.csv")
    for _, numeric, closed in rows:
        assert float(numeric) == pytest.approx(float(closed), rel=1e-3)
    g2 = json.loads((out / "g2.json").read_text())
    assert g2["g2"] == pytest.approx(g2["g2_closed_form"], rel=1e-3)


def test_lienard_run(tmp_path):
    cfg = {
        "model": "lienard",
        "parameters": {"k0": 0.169, "k1": 0.12, "k2": 1.0, "k3": 0.035},
        "truncation": 60,
        "outputs": ["distribution", "coherences", "wigner"],
        "coherence_window": [5, 30],
        "offsets": [0, 2, 4],
        "wigner": {"r_max": 4.0, "points": 11},
    }
    out = tmp_path / "out"
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    header, rows = _read_csv(out / "coherences.csv")
    assert header == ["offset", "nu_hat", "stderr", "r_squared"] and len(rows) == 3
    _, wrows = _read_csv(out / "wigner.csv")
    assert len(wrows) == 121
    m = json.loads((out / "manifest.json").read_text())
    # N = 60 is too small for this state: the edge warning must surface
    assert m["warning_count"] >= 1 and "truncation" in m["warnings"][0]
    assert m["summary"]["odd_offset_max"] <= 1e-10


def test_tail_mass_warning_in_manifest(tmp_path):
    cfg = dict(REF, truncation=2_000, outputs=["g2"])
    out = tmp_path / "out"
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["warning_count"] == len(m["warnings"]) >= 1


def test_scaling_output(tmp_path):
    cfg = dict(REF, parameters={"gamma": [6.0, 1.0], "kappa": [0.0, 0.999]}, truncation=100_000,
               outputs=["scaling"])
    out = tmp_path / "out"
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    rec = json.loads((out / "scaling.json").read_text())
    assert rec["nu"] == pytest.approx(1.5)
    assert rec["delta"] == pytest.approx(1e-3)
    assert rec["g2"]["kind"] == "power"


# ---------------------------------------------------------------------------
# failures


@pytest.mark.parametrize(
    "cfg",
    [
        dict(REF, bogus=1),
        dict(REF, model="quantum"),
        dict(REF, outputs=["coherences"]),
        dict(REF, truncation=3),
        dict(REF, parameters={"gamma": [6.0, 1.0], "kappa": [0.0, -1.0]}),
        dict(REF, parameters={"k0": 1, "k1": 1, "k2": 1, "k3": 1}),
        dict(REF, method="evolve"),
        {"model": "lienard", "parameters": {"k0": 1, "k1": 1, "k2": 1, "k3": 1}, "truncation": 20,
         "outputs": ["scaling"]},
    ],
)
def test_invalid_config_exit_1(tmp_path, cfg):
    out = tmp_path / "out"
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 1
    assert not out.exists()
    assert main(["validate", "--config", _write_cfg(tmp_path, cfg)]) == 1


def test_malformed_json_exit_1(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 1
    assert not (tmp_path / "out").exists()


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", "--config", _write_cfg(tmp_path, REF)]) == 0
    assert "ok" in capsys.readouterr().out
    with pytest.raises(ConfigError):
        validate_config(dict(REF, sweep={"parameter": "delta", "values": [0.1]}))


def test_io_failures_exit_3(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = dict(REF, truncation=1_000, outputs=["g2"])
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(blocker / "sub")]) == 3


def test_solver_failure_exit_2(tmp_path, capsys):
    cfg = dict(REF, truncation=1_000, fit_window=[10, 50_000])
    assert main(["run", "--config", _write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "solver failure" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# sweep


def _slope(points):
    x, y = np.log(np.array(points)).T
    return np.polyfit(x, y, 1)[0]


def test_sweep_delta_divergence(tmp_path):
    cfg = dict(REF, outputs=["g2"], sweep={"parameter": "delta", "start": 1e-4, "stop": 1e-2, "num": 5})
    out = tmp_path / "out"
    assert main(["sweep", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    header, table = _sweep_table(out / "sweep.csv")
    assert header == ["delta", "quantity", "value", "residual"]
    assert len(table["mean"]) == 5
    assert _slope(table["mean"]) == pytest.approx(-0.5, rel=0.1)
    assert _slope(table["g2"]) == pytest.approx(-0.5, rel=0.1)


def test_sweep_single_point_matches_run(tmp_path):
    base = dict(REF, truncation=50_000, outputs=["g2"], parameters={"gamma": [6.0, 1.0], "kappa": [0.0, 0.99]})
    sweep = dict(base, sweep={"parameter": "gamma.1", "values": [6.0]})
    assert main(["run", "--config", _write_cfg(tmp_path, base), "--out", str(tmp_path / "r")]) == 0
    assert main(["sweep", "--config", _write_cfg(tmp_path, sweep, "s.json"), "--out", str(tmp_path / "s")]) == 0
    g2 = json.loads((tmp_path / "r" / "g2.json").read_text())
    _, table = _sweep_table(tmp_path / "s" / "sweep.csv")
    assert table["g2"][0][1] == g2["g2"]
    assert table["mean"][0][1] == g2["mean"]


def test_sweep_near_thermal_g2(tmp_path):
    cfg = dict(REF, truncation=20_000, outputs=["g2"], parameters={"gamma": [1.0, 1.0], "kappa": [0.0, 0.7]},
               sweep={"parameter": "nu", "values": [0.1]})
    out = tmp_path / "out"
    assert main(["sweep", "--config", _write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    _, table = _sweep_table(out / "sweep.csv")
    assert table["g2"][0][1] == pytest.approx(2.0, rel=0.1)


def test_sweep_parallel_and_failures(tmp_path):
    cfg = dict(REF, truncation=10_000, outputs=["g2", "fit"], fit_window=[10, 1000],
               sweep={"parameter": "truncation", "values": [5_000, 10_000, 500]})
    out = tmp_path / "out"
    rc = main(["sweep", "--config", _write_cfg(tmp_path, cfg), "--out", str(out), "--jobs", "2"])
    assert rc == 2  # the N = 500 point cannot host the fit window
    m = json.loads((out / "manifest.json").read_text())
    assert len(m["failures"]) == 1 and m["failures"][0]["value"] == 500
    _, table = _sweep_table(out / "sweep.csv")
    assert len(table["g2"]) == 2 and len(table["failed"]) == 1
    assert m["warning_count"] >= 1


def test_sweep_bad_parameter(tmp_path):
    cfg = dict(REF, sweep={"parameter": "omega", "values": [1.0]})
    assert main(["sweep", "--config", _write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qextreme.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "qextreme.cli", "validate", "--config",
                           _write_cfg(tmp_path, REF)], capture_output=True, text=True)
    assert proc.returncode == 0
