import json
import os
from pathlib import Path

import pytest

from ofdm_pnt.cli import main, mode_tag
from ofdm_pnt.config import apply_overrides, config_hash, load_config, parse_config
from ofdm_pnt.io import csv_text, fmt, read_csv, write_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _doc(name):
    return json.loads((CONFIGS / name).read_text())


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_bundled_configs_validate(name):
    assert main(["validate", "--config", str(CONFIGS / name)]) == 0


def test_bounds_rows_match_sweep(tmp_path):
    doc = _doc("fig1_bounds.json")
    assert main(["bounds", "--config", str(CONFIGS / "fig1_bounds.json"), "--out", str(tmp_path)]) == 0
    meta, header, rows = read_csv(tmp_path / "bounds.csv")
    assert len(rows) == len(doc["snr_db"])
    assert header[0] == "snr_db" and rows[0][1] == "unbounded"
    run = json.loads((tmp_path / "run.json").read_text())
    assert meta["config_sha256"] == run["config_sha256"]
    assert run["subcommand"] == "bounds" and run["seed"] == doc["seed"]


def test_missing_field_is_schema_error(tmp_path, capsys):
    doc = _doc("fig2_crossover.json")
    del doc["ofdm"]["delta_f"]
    assert main(["validate", "--config", str(_write(tmp_path, doc))]) == 3
    assert "ofdm.delta_f" in capsys.readouterr().err


def test_unknown_field_rejected(tmp_path, capsys):
    doc = _doc("fig2_crossover.json")
    doc["estimator"]["delta_zz"] = 0.1
    assert main(["validate", "--config", str(_write(tmp_path, doc))]) == 3
    assert "estimator.delta_zz" in capsys.readouterr().err


def test_bad_schema_version_and_allocation(tmp_path):
    doc = _doc("fig2_crossover.json")
    doc["schema_version"] = 2
    assert main(["validate", "--config", str(_write(tmp_path, doc))]) == 3
    doc = _doc("fig2_crossover.json")
    doc["allocation"]["all_data"] = True
    assert main(["validate", "--config", str(_write(tmp_path, doc))]) == 3


def test_invalid_json_is_schema_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["validate", "--config", str(p)]) == 3


def test_usage_errors():
    assert main(["frobnicate", "--config", "x.json"]) == 2
    assert main(["bounds"]) == 2
    assert main(["validate", "--config", "/nonexistent/cfg.json"]) == 2
    assert main(["bounds", "--config", str(CONFIGS / "fig1_bounds.json"), "--workers", "0"]) == 2


def test_subcommand_kind_mismatch(tmp_path):
    assert main(["bounds", "--config", str(CONFIGS / "fig5_prs.json"), "--out", str(tmp_path)]) == 3


def test_semantic_error_exits_nonzero(tmp_path):
    doc = _doc("fig2_crossover.json")
    doc["allocation"] = {"pilot_subcarriers": [70]}
    assert main(["validate", "--config", str(_write(tmp_path, doc))]) != 0


def test_overrides_change_hash():
    cfg = load_config(CONFIGS / "fig2_crossover.json")
    h = config_hash(cfg)
    assert config_hash(apply_overrides(cfg)) == h
    assert config_hash(apply_overrides(cfg, seed=7)) != h
    z = apply_overrides(cfg, zstep=0.125, phistep_deg=10.0, gh_order=12)
    assert (z.zzb.zstep, z.zzb.phistep_deg, z.zzb.gh_order) == (0.125, 10.0, 12)


def test_pilot_table_overrides_symbols():
    doc = _doc("fig2_crossover.json")
    doc["allocation"]["pilot_table"] = [{"m": 0, "k": 3, "re": 0.0, "im": -1.0}]
    g = parse_config(doc).build().grid
    assert g.pilots[0, 3] == -1j
    doc["allocation"]["pilot_table"] = [{"m": 0, "k": 4, "re": 1.0, "im": 0.0}]
    with pytest.raises(ValueError):
        parse_config(doc).build()


def test_run_length_allocation():
    doc = _doc("fig2_crossover.json")
    doc["allocation"] = {"cells": [[["P", 2], ["D", 60], ["E", 2]]]}
    g = parse_config(doc).build().grid
    assert g.n_pilot == 2 and g.n_data == 60


def test_number_formatting():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(12345678.9012345) == "12345678.9012"
    assert fmt(None) == "unbounded"
    assert fmt(float("nan")) == "nan"
    assert fmt(3) == "3"
    text = csv_text(["a", "b"], [[1.5, "x"]], {"seed": 1})
    assert text == "# seed=1\na,b\n1.5,x\n"


def test_atomic_write_leaves_no_temp_files(tmp_path):
    write_csv(tmp_path / "sub" / "x.csv", ["a"], [[1.0]])
    assert os.listdir(tmp_path / "sub") == ["x.csv"]
    assert b"\r" not in (tmp_path / "sub" / "x.csv").read_bytes()


def test_mode_tags_are_file_safe():
    assert [mode_tag(m) for m in ("pilot-only", "data-only", "pilot+data", "dd")] == [
        "pilot_only", "data_only", "pilot_plus_data", "dd"]


def test_zzb_profile_and_mc_outputs(tmp_path):
    assert main(["zzb", "--config", str(CONFIGS / "fig3_profile.json"), "--out", str(tmp_path / "z"), "--profile",
                 "--zstep", "0.125"]) == 0
    _, header, rows = read_csv(tmp_path / "z" / "zzb_profile.csv")
    assert header == ["snr_db", "mode", "z1", "max_phi_pmin"]
    assert all(0 <= float(r[3]) <= 0.5 + 1e-6 for r in rows)
    doc = _doc("fig2_crossover.json")
    doc["snr_db"] = [5.0]
    doc["trials"] = {"n_channel": 3, "n_noise": 4}
    doc["channel"] = {"mode": "tapped", "gain_jitter_db": 2.0}
    assert main(["mc", "--config", str(_write(tmp_path, doc)), "--out", str(tmp_path / "m")]) == 0
    files = sorted(os.listdir(tmp_path / "m"))
    assert "sweep.csv" in files and "ccdf_pilot_plus_data.csv" in files
