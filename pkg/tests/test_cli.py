import json
import os
import subprocess
import sys

import pytest

from sacdrop.cli import main

from conftest import config_text

SIM = config_text(
    domain={"shape": "disk", "delta": 0.3},
    model={"eps": 0.1},
    grid={"h_over_eps": 0.8},
    time={"dt": 0.1, "T": 1.0, "stride": 5},
    noise={"n_modes": 4, "amplitude": 0.0},
)


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_all(d):
    return {n: open(os.path.join(d, n), "rb").read() for n in sorted(os.listdir(d))}


def test_simulate_reproducible(tmp_path):
    cfg = write(tmp_path, SIM)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a), "--seed", "4"], env={}) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b), "--seed", "4"], env={}) == 0
    fa, fb = read_all(a), read_all(b)
    assert set(fa) >= {"config.ini", "meta.json", "path.csv", "report.json", "seeds.csv"}
    assert fa == fb
    meta = json.loads(fa["meta.json"])
    assert {"grid_hash", "versions", "residual_budget", "warnings"} <= set(meta)


def test_simulate_noise_seed_changes_output(tmp_path):
    cfg = write(tmp_path, SIM.replace("amplitude = 0.0", "amplitude = 0.2"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a), "--seed", "1"], env={}) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b), "--seed", "2"], env={}) == 0
    assert read_all(a)["path.csv"] != read_all(b)["path.csv"]
    assert "noise_modes.csv" in read_all(a)


def test_scalings_dispatch(tmp_path):
    cfg = write(tmp_path, config_text(domain={"shape": "disk", "delta": 0.2}, scalings={"enforce_upbound": "false"}))
    out = tmp_path / "s"
    assert main(["scalings", "--config", cfg, "--out", str(out)], env={}) == 0
    rows = (out / "scalings.csv").read_text().splitlines()
    assert rows[0] == "eps,norm,value"
    assert len(rows) == 1 + 5 * 8
    rep = json.loads((out / "report.json").read_text())
    assert {e["name"] for e in rep["slopes"]} >= {"du_l2", "A", "sigma_l2"}


def test_upbound_error_json(tmp_path):
    cfg = write(tmp_path, config_text(domain={"shape": "disk", "delta": 0.2}))
    out = tmp_path / "s"
    assert main(["scalings", "--config", cfg, "--out", str(out)], env={}) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "validation_error"
    assert err["violations"][0]["constraint"] == "upbound"


def test_missing_field_error(tmp_path):
    cfg = write(tmp_path, SIM.replace("dt = 0.1\n", ""))
    out = tmp_path / "m"
    assert main(["simulate", "--config", cfg, "--out", str(out)], env={}) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["field"] == "time.dt" and err["line"] is not None


def test_env_override(tmp_path):
    cfg = write(tmp_path, SIM)
    out = tmp_path / "e"
    assert main(["simulate", "--config", cfg, "--out", str(out)], env={"SACDROP_TIME_T": "0.5"}) == 0
    assert "T = 0.5" in (out / "config.ini").read_text()
    # header, the initial record and one record after 5 steps
    assert len((out / "path.csv").read_text().splitlines()) == 3


def test_droplet_dump(tmp_path):
    from sacdrop.fields import read_field_binary

    cfg = write(tmp_path, config_text(domain={"shape": "disk", "delta": 0.3}, model={"eps": 0.1},
                                      grid={"h_over_eps": 0.8}))
    out = tmp_path / "d"
    assert main(["droplet-dump", "--config", cfg, "--out", str(out)], env={}) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["mass_error"] <= 1e-6
    u, ghash = read_field_binary(out / "droplet_u.sacf")
    assert ghash == json.loads((out / "meta.json").read_text())["grid_hash"]
    assert u.max() <= 1 + 1e-6


def test_exit_times_json(tmp_path):
    text = config_text(
        domain={"shape": "disk", "delta": 0.3},
        model={"eps": 0.1, "bulk_correction": "true"},
        grid={"h_over_eps": 0.8},
        time={"dt": 0.1, "T": 1.0, "stride": 5},
        noise={"n_modes": 8, "amplitude": 1.0},
        exit={"replicas": 100, "ladder": "1"},
    )
    out = tmp_path / "x"
    assert main(["exit-times", "--config", write(tmp_path, text), "--out", str(out)], env={}) == 0
    rep = json.loads((out / "exit_stats.json").read_text())
    r0 = rep["rungs"][0]
    assert r0["replicas"] == 100
    lo, hi = r0["wilson"]
    assert 0.0 <= lo <= r0["probability"] <= hi <= 1.0
    assert (out / "exit_histogram.csv").exists()
    assert len((out / "seeds.csv").read_text().splitlines()) == 101


def test_module_entry_point(tmp_path):
    out = tmp_path / "p"
    res = subprocess.run([sys.executable, "-m", "sacdrop", "simulate", "--config", write(tmp_path, SIM),
                          "--out", str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "sacdrop", "simulate", "--config", str(tmp_path / "nope.ini")],
                         capture_output=True, text=True)
    assert res.returncode != 0
    assert json.loads(res.stderr.strip().splitlines()[-1])["error"] == "io_error"


def test_bad_subcommand():
    with pytest.raises(SystemExit):
        main(["nonsense"])
