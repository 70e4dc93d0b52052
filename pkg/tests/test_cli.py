import json
import random

import numpy as np
import pytest

from h2hub import reporting as rep
from h2hub.calibration import default_calibration, dump_calibration
from h2hub.cli import EXIT_INFEASIBLE, EXIT_INVALID, EXIT_OK, RandomnessUsed, forbid_rng, main

ARTIFACT_NAMES = set(rep.ARTIFACTS)


@pytest.fixture(scope="module")
def scenario_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("scen")
    codes = {}
    for name in ("baseline", "tech_breakthrough", "downturn"):
        codes[name] = main(["scenario", name, "--regimes", "cn", "--out", str(root / name)])
    return root, codes


def test_run_writes_every_artifact_and_reruns_identically(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--out", str(a), "--seedless"]) == EXIT_OK
    assert main(["run", "--out", str(b), "--seedless"]) == EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted([f"{n}.csv" for n in ARTIFACT_NAMES] + ["manifest.json"])
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seedless"] is True and manifest["bargaining_powers"] == {"z_shp": 1.0, "z_chpe": 1.0, "z_hub": 1.0}
    assert manifest["scenarios"] == ["baseline", "tech_breakthrough", "policy_change", "downturn"]
    assert manifest["failed_paths"] == {}
    _, tables = rep.read_run(a)
    shares = {}
    for row in tables["market_shares"]:
        if row["metric"] == "share":
            key = (row["scenario"], row["period"], row["regime"])
            shares[key] = shares.get(key, 0.0) + row["value"]
    assert shares and all(abs(v - 1.0) < 1e-12 for v in shares.values())


def test_csv_and_json_round_trip_losslessly():
    rng = np.random.default_rng(7)
    rows = [
        {"scenario": "baseline", "period": int(t), "year": 2026 + int(t), "regime": "Cn", "metric": "m", "value": float(v)}
        for t, v in zip(rng.integers(0, 10, 500), np.concatenate([rng.normal(size=490) * 10.0 ** rng.integers(-300, 300, 490), [0.0, -0.0, 1e-320, 5e-324, 1.7976931348623157e308, 1 / 3, 0.1, 2.0**-1074, 123456789.123456789, -1e-5]]))
    ]
    for fmt in ("csv", "json"):
        text = rep.render_table("penetration", rows, fmt)
        _, back = rep.parse_table(text, fmt)
        assert [r["value"] for r in back] == [r["value"] for r in rows]
        assert [r["period"] for r in back] == [r["period"] for r in rows]


def test_scenario_outputs_and_diff(scenario_dirs, capsys):
    root, codes = scenario_dirs
    assert codes["baseline"] == EXIT_OK and codes["tech_breakthrough"] == EXIT_OK
    assert codes["downturn"] in (EXIT_OK, EXIT_INFEASIBLE)
    capsys.readouterr()
    assert main(["diff", str(root / "baseline"), str(root / "baseline")]) == EXIT_OK
    same = json.loads(capsys.readouterr().out)
    for metrics in same["artifacts"].values():
        assert all(m["max_abs"] == 0.0 for m in metrics.values())
    assert main(["diff", str(root / "baseline"), str(root / "tech_breakthrough")]) == EXIT_OK
    tech = json.loads(capsys.readouterr().out)
    assert tech["final_share_delta"]["Cn/green"] > 0
    assert tech["calibration_hash"]["a"] == tech["calibration_hash"]["b"]
    assert main(["diff", str(root / "baseline"), str(root / "downturn")]) == EXIT_OK
    down = json.loads(capsys.readouterr().out)
    assert down["final_share_delta"]["Cn/green"] < 0


def test_diff_rejects_missing_run(tmp_path, capsys):
    assert main(["diff", str(tmp_path / "x"), str(tmp_path / "y")]) == EXIT_INVALID
    assert json.loads(capsys.readouterr().err)["error"] == "diff"


def test_validate(tmp_path, capsys):
    assert main(["validate"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["valid"] is True
    good = tmp_path / "cal.json"
    dump_calibration(default_calibration(), good)
    assert main(["validate", "--calibration", str(good)]) == EXIT_OK
    capsys.readouterr()
    bad = tmp_path / "bad.yaml"
    bad.write_text(good.read_text().replace('"delta": [', '"delta": [1.2, '))
    assert main(["validate", "--calibration", str(bad)]) == EXIT_INVALID
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "calibration" and err["issues"]


def test_bad_arguments(tmp_path, capsys):
    assert main(["scenario", "baseline", "--powers", "1,2", "--out", str(tmp_path)]) == EXIT_INVALID
    assert main(["scenario", "baseline", "--regimes", "ct,zz", "--out", str(tmp_path)]) == EXIT_INVALID
    assert main(["sweep-commission", "--delta-grid", "0:1", "--out", str(tmp_path)]) == EXIT_INVALID
    for line in capsys.readouterr().err.strip().splitlines():
        assert json.loads(line)["exit_code"] == EXIT_INVALID


def test_sweep_commission_command(tmp_path):
    code = main(["sweep-commission", "--delta-grid", "0:0.1:0.05", "--out", str(tmp_path), "--format", "json"])
    assert code in (EXIT_OK, EXIT_INFEASIBLE)
    manifest, tables = rep.read_run(tmp_path)
    assert manifest["format"] == "json" and sorted({r["delta"] for r in tables["commission_sweep"]}) == [0.0, 0.05, 0.1]


def test_seedless_guard_traps_generators():
    with forbid_rng():
        with pytest.raises(RandomnessUsed):
            random.random()
        with pytest.raises(RandomnessUsed):
            np.random.default_rng(0)
    assert 0 <= random.random() < 1
