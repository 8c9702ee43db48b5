import csv
import json
from pathlib import Path

import numpy as np
import pytest

from shmvdr import experiment as ex
from shmvdr.cli import ConfigError, load_config, main
from shmvdr.transforms import FLAG_BESSEL_GUARD

# a short anechoic scene that runs in a couple of seconds
FAST = {
    "scene": {"duration": 2.0, "room": {"t60": 0.0}},
    "frame_size": 8192,
    "rehc_frames": 4,
    "frames_for_metrics": 3,
}


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.json"
    path.write_text(json.dumps(FAST, indent=2) + "\n")
    return path


def fast_spec(**update):
    return ex.ExperimentSpec.model_validate({**FAST, **update})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_config_error_reports_line_and_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "frame_size": 8192,\n  "scene": {\n    "snr_db": "loud"\n  }\n}\n')
    with pytest.raises(ConfigError) as err:
        load_config(path)
    msg = str(err.value)
    assert f"{path}:4: scene.snr_db:" in msg


def test_config_unknown_key_and_syntax(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "methodd": "both"\n}\n')
    with pytest.raises(ConfigError, match=r":2: methodd: Extra inputs"):
        load_config(path)
    path.write_text('{\n  "method": "both",\n}\n')
    with pytest.raises(ConfigError, match=r"bad.json:3:1:"):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_config_semantic_checks():
    with pytest.raises(ValueError):
        fast_spec(band={"f_low": 3000.0, "f_high": 1000.0})
    with pytest.raises(ValueError):
        fast_spec(sweep={"param": "t60", "values": [float("nan")]})
    with pytest.raises(ValueError):
        fast_spec(method="none")


def test_main_exit_codes(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"scene": {"seed": "x"}}')
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "scene.seed" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "--sweep-t60", "0.1", "--sweep-snr", "0"])


def test_run_is_deterministic(fast_config, tmp_path, capsys):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["run", "--config", str(fast_config), "--out", str(out)]) == 0
    assert "proposed" in capsys.readouterr().out
    for name in ("metrics.csv", "summary.csv", "diagnostics_proposed.csv", "diagnostics_baseline.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    ma = json.loads((outs[0] / "manifest.json").read_text())
    mb = json.loads((outs[1] / "manifest.json").read_text())
    # only the recorded output directory differs
    assert ma["config"].pop("outputs") != mb["config"].pop("outputs")
    assert ma == mb
    assert ma["seeds"] == [0]
    assert set(ma["versions"]) >= {"numpy", "python", "shmvdr"}


def test_manifest_regenerates_outputs(fast_config, tmp_path):
    first = tmp_path / "first"
    main(["run", "--config", str(fast_config), "--out", str(first)])
    manifest = json.loads((first / "manifest.json").read_text())
    spec = ex.ExperimentSpec.model_validate(manifest["config"])
    assert ex.spec_hash(spec) == manifest["config_sha256"]
    again = ex.run(spec, tmp_path / "again")
    for f in again.files:
        assert ex._sha256(f) == manifest["outputs"][f.name]


def test_seed_override_changes_noise(fast_config, tmp_path):
    main(["run", "--config", str(fast_config), "--out", str(tmp_path / "s0")])
    main(["run", "--config", str(fast_config), "--seed", "7", "--out", str(tmp_path / "s7")])
    assert json.loads((tmp_path / "s7" / "manifest.json").read_text())["seeds"] == [7]
    assert (tmp_path / "s0" / "metrics.csv").read_bytes() != (tmp_path / "s7" / "metrics.csv").read_bytes()


def test_staged_matches_one_shot(fast_config, tmp_path):
    sim, enh = tmp_path / "sim", tmp_path / "enh"
    assert main(["simulate", "--config", str(fast_config), "--out", str(sim)]) == 0
    assert (sim / "simulation.npz").exists() and (sim / "mixture.wav").exists()
    assert main(["enhance", str(sim), "--out", str(enh)]) == 0
    assert (enh / "proposed_est.shtc").exists() and (enh / "true_d.shtc").exists()
    assert main(["evaluate", str(enh)]) == 0
    one = ex.run(ex.ExperimentSpec.model_validate(FAST), tmp_path / "one")
    staged = read_csv(enh / "summary.csv")
    direct = read_csv(one.outdir / "summary.csv")
    assert staged == direct
    assert (enh / "metrics.csv").read_bytes() == (one.outdir / "metrics.csv").read_bytes()


def test_evaluate_without_tensors_fails(fast_config, tmp_path, capsys):
    sim = tmp_path / "sim"
    main(["simulate", "--config", str(fast_config), "--out", str(sim)])
    assert main(["evaluate", str(sim)]) == 1
    assert "no enhanced tensors" in capsys.readouterr().err


def test_flagged_bins_carry_reasons(tmp_path):
    spec = fast_spec()
    sim = ex.simulate(spec.scene, spec.rehc_samples)
    p = ex.process(spec, spec.scene, sim, audio=False)
    # force a guard flag onto one bin to exercise the reporting path
    p.methods["proposed"].flags[5] |= FLAG_BESSEL_GUARD
    rows = ex.flagged_bins(p)
    assert rows and all(r["reasons"] for r in rows)
    hit = [r for r in rows if r["method"] == "proposed" and r["bin"] == int(p.band.bins[5])]
    assert "bessel-zero-guard" in hit[0]["reasons"]
    ex.write_manifest(tmp_path / "m.json", spec, [0], rows, [])
    back = json.loads((tmp_path / "m.json").read_text())["flagged_bins"]
    assert back == rows
    ex.write_diagnostics(tmp_path / "d.csv", p, "proposed")
    diag = read_csv(tmp_path / "d.csv")
    assert diag[0] == ["bin", "freq_hz", "order", "sht_condition", "flags", "reasons"]
    assert diag[6][-1] == "bessel-zero-guard"


def test_sweep_table_layout(tmp_path):
    spec = fast_spec(sweep={"param": "snr_db", "values": [5.0, 0.0, -5.0]})
    res = ex.run(spec, tmp_path)
    rows = read_csv(tmp_path / "table_snr_db.csv")
    assert len(rows[0]) == 1 + 3 * 3
    assert rows[0][1] == "SNR=5 Error (dB)" and rows[0][-1] == "SNR=-5 NR (dB)"
    assert [r[0] for r in rows[1:]] == ["proposed", "baseline"]
    assert len(res.summaries) == 3
    for s in res.summaries:
        assert s["proposed"]["error_db"] < s["baseline"]["error_db"]


def test_reproduce_fig2_panels(tmp_path):
    res = ex.reproduce("fig2", tmp_path, base=fast_spec())
    pgms = sorted(p.name for p in tmp_path.glob("fig2_*.pgm"))
    assert len(pgms) == 6
    assert pgms[0] == "fig2_a_mixed.pgm" and pgms[-1] == "fig2_f_baseline_error.pgm"
    for p in tmp_path.glob("fig2_*.pgm"):
        assert p.read_bytes().startswith(b"P5\n21 21\n255\n")
    summary = json.loads((tmp_path / "fig2_summary.json").read_text())
    assert abs(summary["freq_hz"] - 1500.0) < 1.0
    assert summary["mean_error_db"]["proposed"] < summary["mean_error_db"]["baseline"]
    assert res.files[-1].name == "fig2_summary.json"


def test_reproduce_fig3_curves(tmp_path):
    ex.reproduce("fig3", tmp_path, base=fast_spec())
    rows = read_csv(tmp_path / "fig3_curves.csv")
    head = rows[0][2:]
    assert len(head) == 3 * 3
    assert {h.rsplit("_", 2)[0] for h in head} == set(ex.METHODS)
    band = ex.band_plan(0.042, 8192)
    assert len(rows) - 1 == len(band)
    assert (tmp_path / "fig3_curves.png").exists()


def test_unknown_figure_and_preset():
    with pytest.raises(ValueError):
        ex.reproduce("fig9", Path("/tmp/never"))
    with pytest.raises(ValueError):
        ex.preset("nope")


def test_select_frames():
    e = np.array([1.0, 5.0, 3.0, 5.0, 0.5])
    np.testing.assert_array_equal(ex.select_frames(e, 2), [1, 3])
    np.testing.assert_array_equal(ex.select_frames(e, 2, "first"), [0, 1])
    np.testing.assert_array_equal(ex.select_frames(e, 9), np.arange(5))
