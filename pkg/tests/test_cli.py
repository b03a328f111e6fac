import json

import pytest

from glucodg.cli import main


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "synth"), "--seed", "3"]) == 0
    assert main(["prepare", "--manifest", str(root / "synth" / "manifest.json"), "--out", str(root / "prep")]) == 0
    assert main(["select", "--data", str(root / "prep"), "--out", str(root / "sel")]) == 0
    return root


def test_synth_writes_five_domains(prepared):
    assert sorted(p.name for p in (prepared / "synth" / "domains").iterdir()) == [f"S{i}.csv" for i in range(1, 6)]


def test_prepare_provenance_counts(prepared):
    prov = json.loads((prepared / "prep" / "provenance.json").read_text())
    assert sum(prov["stages"]["aligned"].values()) == 509
    assert sum(prov["stages"]["balanced"].values()) == 560


def test_select_outputs(prepared):
    sel = json.loads((prepared / "sel" / "selection.json").read_text())
    assert len(sel["selected"]) + len(sel["removed"]) == 21
    assert (prepared / "sel" / "selection.csv").exists()


def test_experiment_outputs(prepared):
    out = prepared / "exp"
    args = ["experiment", "--data", str(prepared / "prep"), "--selection", str(prepared / "sel" / "selection.json"),
            "--number", "2", "--repeats", "2", "--n-estimators", "5", "--out", str(out)]
    assert main(args) == 0
    for name in ("report.json", "table.csv", "plot.csv", "timing.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert "jobs" not in json.dumps(report["config"])


def test_no_augment_keeps_raw_counts(prepared, tmp_path):
    assert main(["prepare", "--manifest", str(prepared / "synth" / "manifest.json"), "--no-augment", "--out", str(tmp_path)]) == 0
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert "balanced" not in prov["stages"]
    assert prov["totals"] == {"aligned": 509}


def test_threshold_one_selects_all(prepared, tmp_path):
    assert main(["select", "--data", str(prepared / "prep"), "--threshold", "1.0", "--out", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "selection.json").read_text())["selected"]) == 21


def test_missing_manifest_fails(tmp_path):
    assert main(["prepare", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) != 0


def test_bad_flags_exit_nonzero(prepared, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--bogus", "--out", str(tmp_path)])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        main(["experiment", "--data", str(prepared / "prep"), "--number", "10", "--out", str(tmp_path)])
    assert exc.value.code != 0


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth.nonsense": 1}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
