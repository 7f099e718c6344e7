import json
import os

import numpy as np
import pytest

from qpsplit import cli
from qpsplit.circuit import BasisSpec, CircuitParams, omega20, qubit_gap
from qpsplit.config import DEFAULTS, resolve
from qpsplit.errors import ConfigError


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_missing_required_key_names_it(tmp_path, capsys):
    cfg = _write(tmp_path, {"schema_version": 1, "spectrum": {"model": "rabi"}})
    assert _run("spectrum", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "spectrum.grid" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, {"schema_version": 1, "spectrum": {"model": "rabi", "grid": {}, "gird": 1}})
    assert _run("spectrum", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "spectrum.gird" in capsys.readouterr().err


def test_resolve_schema_checks():
    with pytest.raises(ConfigError):
        resolve({"seed": 1})
    with pytest.raises(ConfigError):
        resolve({"schema_version": 99})
    cfg = resolve({"schema_version": 1}, seed=5)
    assert cfg["seed"] == 5 and cfg["rabi"] == DEFAULTS["rabi"]


def test_missing_input_file_is_io_error(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1, "inputs": {"charge": str(tmp_path / "nope.csv")}})
    assert _run("psd", "--config", cfg, "--out", tmp_path / "o") == 4


def test_minimal_rabi_spectrum(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1, "spectrum": {"model": "rabi",
                                                              "grid": {"start": 0, "stop": 8, "num": 41}}})
    out = tmp_path / "o"
    assert _run("spectrum", "--config", cfg, "--out", out) == 0
    for b in ("w10", "w20", "w31"):
        rows = [l for l in (out / f"{b}.csv").read_text().splitlines() if not l.startswith("#")]
        assert len(rows) == 42
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) == {"w10.csv", "w20.csv", "w31.csv"}
    assert man["config"]["spectrum"]["grid"]["num"] == 41


def test_two_parity_families(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1, "rabi": {"delta_green_ghz": 0.797},
                            "spectrum": {"model": "rabi", "grid": {"start": 0, "stop": 2, "num": 5}}})
    out = tmp_path / "o"
    assert _run("spectrum", "--config", cfg, "--out", out) == 0
    names = sorted(os.listdir(out))
    assert "blue_w20.csv" in names and "green_w20.csv" in names


def test_json_format(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1, "spectrum": {"model": "rabi",
                                                              "grid": {"start": 0, "stop": 1, "num": 3}}})
    out = tmp_path / "o"
    assert _run("spectrum", "--config", cfg, "--out", out, "--format", "json") == 0
    data = json.loads((out / "w20.json").read_text())
    assert len(json.dumps(data)) > 0 and "w20.json" in json.loads((out / "manifest.json").read_text())["outputs"]


def test_chargesweep_spot_check(tmp_path):
    basis = {"n_charge": 4, "n_harm": 14, "n_fock": 6, "n_levels_kept": 12}
    cfg = _write(tmp_path, {"schema_version": 1, "basis": basis,
                            "chargesweep": {"grid": {"start": 0, "stop": 1, "num": 3}}})
    out = tmp_path / "o"
    assert _run("chargesweep", "--config", cfg, "--out", out) == 0
    t = cli.read_table(out / "chargesweep_island2.csv")
    b = BasisSpec(**basis)
    assert t["delta_ghz"][1] == qubit_gap(CircuitParams(), (0, 0.5, 0, 0), b)
    assert t["omega20_ghz"][2] == omega20(CircuitParams(), (0, 1.0, 0, 0), 0.5018, b)


PIPE = {"schema_version": 1, "seed": 3, "synth": {"n_traces": 3000, "noise_sigma": 0.05}}


def test_pipeline_zero_noise(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1, "synth": {"n_traces": 2000, "background": {"s_1hz": 0.0}}})
    out = tmp_path / "o"
    assert _run("pipeline", "--config", cfg, "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["s1hz_e2_per_hz"] < 1e-8


def test_rerun_bit_identical(tmp_path):
    cfg = _write(tmp_path, PIPE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("pipeline", "--config", cfg, "--out", a) == 0
    assert _run("rerun", "--manifest", a / "manifest.json", "--out", b) == 0
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    for f in json.loads((a / "manifest.json").read_text())["outputs"]:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_seed_flag_changes_output(tmp_path):
    cfg = _write(tmp_path, PIPE)
    a, b = tmp_path / "a", tmp_path / "b"
    _run("synth", "--config", cfg, "--out", a)
    _run("synth", "--config", cfg, "--out", b, "--seed", 4)
    assert (a / "truth.csv").read_bytes() != (b / "truth.csv").read_bytes()


def test_stagewise_commands_match_pipeline(tmp_path):
    cfg = _write(tmp_path, PIPE)
    p = tmp_path / "p"
    assert _run("pipeline", "--config", cfg, "--out", p) == 0
    s = tmp_path / "s"
    assert _run("synth", "--config", cfg, "--out", s) == 0
    cfg2 = _write(tmp_path, dict(PIPE, inputs={"stack": str(s / "stack.npz")}), "c2.json")
    assert _run("extract", "--config", cfg2, "--out", tmp_path / "e") == 0
    cfg3 = _write(tmp_path, dict(PIPE, inputs={"splits": str(tmp_path / "e" / "split_series.csv")}), "c3.json")
    assert _run("invert", "--config", cfg3, "--out", tmp_path / "i") == 0
    cfg4 = _write(tmp_path, dict(PIPE, inputs={"charge": str(tmp_path / "i" / "charge.csv")}), "c4.json")
    assert _run("psd", "--config", cfg4, "--out", tmp_path / "q") == 0
    assert (tmp_path / "q" / "fit_report.txt").read_text() == (p / "fit_report.txt").read_text()


def test_rabi_fit_from_spectrum_files(tmp_path, capsys):
    cfg = _write(tmp_path, {"schema_version": 1, "spectrum": {"model": "rabi",
                                                              "grid": {"start": 0, "stop": 8, "num": 17}}})
    spec = tmp_path / "spec"
    assert _run("spectrum", "--config", cfg, "--out", spec) == 0
    fcfg = _write(tmp_path, {"schema_version": 1, "fit": {"model": "rabi", "n_starts": 1},
                             "inputs": {"ridges": [str(spec / f"{b}.csv") for b in ("w10", "w20", "w31")]}},
                  "fit.json")
    assert _run("fit", "--config", fcfg, "--out", tmp_path / "f") == 0
    text = (tmp_path / "f" / "fit_result.txt").read_text()
    assert "delta_blue" in text and "converged: true" in text
    assert "GHz" in capsys.readouterr().out
