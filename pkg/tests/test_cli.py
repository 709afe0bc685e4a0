import json
import os
from pathlib import Path

import numpy as np
import pytest

from biphoton import cli
from biphoton import config as cfg
from biphoton.tagstream import TagStream, TimeTag, read_bpts, write_bpts

LOSSLESS = {"efficiency": 1.0, "jitter_sigma_ps": 0, "dark_prob_per_ns": 0, "dead_time_ns": 0, "tick_ps": 1}


def _write_config(path: Path, **over) -> Path:
    data = {
        "name": "small",
        "resonator": {"linewidth_mhz": 90, "signal_mode": 2},
        "source": {"pump_power_mw": 1.0, "tau_ns": 1.77},
        "detectors": {"default": {"efficiency": 0.5, "jitter_sigma_ps": 100, "dark_prob_per_ns": 1e-4,
                                  "dead_time_ns": 0, "tick_ps": 84}},
        "run": {"duration_s": 0.05, "seed": 7},
    }
    for k, v in over.items():
        data[k] = v
    path.write_text(json.dumps(data))
    return path


def _files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run("scan", "--config", missing, "--out", tmp_path / "o") == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_preset_is_usage_error(tmp_path):
    assert run("scan", "--preset", "fig9", "--out", tmp_path) == 2


def test_zero_duration_rejected(tmp_path):
    conf = _write_config(tmp_path / "c.json", run={"duration_s": 0, "seed": 1})
    assert run("simulate", "--config", conf, "--out", tmp_path / "o") == 2
    conf = _write_config(tmp_path / "c2.json")
    assert run("simulate", "--config", conf, "--duration", 0, "--out", tmp_path / "o") == 2


def test_seed_required(tmp_path):
    conf = _write_config(tmp_path / "c.json", run={"duration_s": 0.01})
    assert run("simulate", "--config", conf, "--out", tmp_path / "o") == 2


def test_seed_precedence():
    assert cfg.effective_seed(1, None, {}) == 1
    assert cfg.effective_seed(1, None, {cfg.SEED_ENV: "5"}) == 5
    assert cfg.effective_seed(1, 9, {cfg.SEED_ENV: "5"}) == 9
    with pytest.raises(cfg.ConfigError):
        cfg.effective_seed(1, None, {cfg.SEED_ENV: "x"})


def test_stage_seeds_distinct():
    seeds = {cfg.stage_seed(7, s) for s in range(7)}
    assert len(seeds) == 7
    assert cfg.stage_seed(7, 2) == cfg.stage_seed(7, 2)


def test_presets_all_load():
    names = cfg.preset_names()
    for n in ("fig2a", "fig2b", "fig2c", "fig2d", "fig3", "fig4", "fig5-ideal", "fig5-paper"):
        assert n in names
        assert cfg.load_preset(n).run.seed >= 0


def test_simulate_lossless_count(tmp_path):
    conf = _write_config(tmp_path / "c.json",
                         source={"pump_power_mw": 1.0, "brightness_cal": 1e6, "q_loaded": 2e6},
                         resonator={}, detectors={"default": LOSSLESS},
                         run={"duration_s": 1.0, "seed": 3})
    out = tmp_path / "o"
    assert run("simulate", "--config", conf, "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["pair_rate_per_s"] == pytest.approx(1e6)
    for name in ("signal.bpts", "idler.bpts"):
        assert abs(len(read_bpts(out / name)) - 1_000_000) <= 4_000


def test_simulate_deterministic_and_env_seed(tmp_path, monkeypatch):
    conf = _write_config(tmp_path / "c.json")
    assert run("simulate", "--config", conf, "--out", tmp_path / "a") == 0
    assert run("simulate", "--config", conf, "--out", tmp_path / "b") == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    monkeypatch.setenv(cfg.SEED_ENV, "8")
    assert run("simulate", "--config", conf, "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "signal.bpts").read_bytes() != (tmp_path / "a" / "signal.bpts").read_bytes()
    assert run("simulate", "--config", conf, "--seed", 7, "--out", tmp_path / "d") == 0
    assert (tmp_path / "d" / "signal.bpts").read_bytes() == (tmp_path / "a" / "signal.bpts").read_bytes()


def test_correlate_tick_mismatch(tmp_path):
    write_bpts(TagStream.from_tags([TimeTag(84, 0)], 84, 1000, 1), tmp_path / "a.bpts")
    write_bpts(TagStream.from_tags([TimeTag(42, 0)], 42, 1000, 1), tmp_path / "b.bpts")
    assert run("correlate", tmp_path / "a.bpts", tmp_path / "b.bpts", "--out", tmp_path / "o") == 3


def test_correlate_corrupt_file_is_data_error(tmp_path):
    (tmp_path / "bad.bpts").write_bytes(b"NOPE" + bytes(40))
    assert run("correlate", tmp_path / "bad.bpts", tmp_path / "bad.bpts", "--out", tmp_path / "o") == 3


def test_correlate_default_bin_and_outputs(tmp_path):
    conf = _write_config(tmp_path / "c.json", run={"duration_s": 0.2, "seed": 1})
    sim = tmp_path / "sim"
    assert run("simulate", "--config", conf, "--out", sim) == 0
    out = tmp_path / "corr"
    args = ["correlate", sim / "signal.bpts", sim / "idler.bpts", "--normalize", "--background-correct",
            "--fit", "--out", out]
    assert run(*args) == 0
    meta = json.loads((out / "histogram.json").read_text())
    assert meta["bin_width_ps"] == 84
    assert meta["fit"]["converged"]
    assert meta["fit"]["derived"]["bandwidth_mhz"] == pytest.approx(90, rel=0.15)
    header = (out / "histogram.csv").read_text().splitlines()[0]
    assert header == "delay_ps,counts,g_normalized"
    first = _files(out)
    assert run(*args) == 0
    assert _files(out) == first


def test_correlate_hbt(tmp_path):
    conf = _write_config(tmp_path / "c.json", run={"duration_s": 0.05, "seed": 1})
    sim = tmp_path / "sim"
    assert run("simulate", "--config", conf, "--out", sim) == 0
    out = tmp_path / "hbt"
    assert run("correlate", sim / "signal.bpts", "--hbt", 0.5, "--bin", 1008, "--out", out) == 0
    meta = json.loads((out / "histogram.json").read_text())
    assert meta["mode"] == "hbt" and meta["splitter_ratio"] == 0.5


def test_scan_fig2a(tmp_path):
    out = tmp_path / "scan"
    assert run("scan", "--preset", "fig2a", "--out", out) == 0
    fit = json.loads((out / "scan_fit.json").read_text())
    assert fit["params"]["fwhm"] == pytest.approx(150, rel=0.05)
    assert (out / "scan.csv").read_text().startswith("freq_thz,transmission")
    assert run("scan", "--preset", "fig2a", "--noise", 0, "--out", tmp_path / "exact") == 0
    exact = json.loads((tmp_path / "exact" / "scan_fit.json").read_text())
    assert exact["params"]["fwhm"] == pytest.approx(150, rel=1e-6)


def test_scan_fit_failure_exit_4(tmp_path):
    assert run("scan", "--preset", "fig2a", "--noise", 0.5, "--out", tmp_path) == 4


def test_powerscan_single_power(tmp_path):
    assert run("powerscan", "--preset", "fig4", "--powers", "1.0", "--out", tmp_path) == 2
    assert run("powerscan", "--preset", "fig4", "--powers", "1.0,1.0", "--out", tmp_path) == 2


def test_franson_too_few_phases(tmp_path):
    assert run("franson", "--preset", "fig5-ideal", "--phases", "0,1,2,3", "--out", tmp_path) == 2


def test_report_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert run("report", tmp_path / "empty") == 2
    assert run("report", tmp_path / "absent") == 2


def test_tune_outputs(tmp_path):
    assert run("tune", "--preset", "fig3", "--out", tmp_path) == 0
    rows = (tmp_path / "tuning.csv").read_text().splitlines()
    assert rows[0].startswith("delta_t_k,temperature_c,shift_pm")
    last = rows[-1].split(",")
    assert float(last[0]) == pytest.approx(14.0)
    assert float(last[2]) == pytest.approx(306.6, abs=1e-6)


@pytest.mark.parametrize("cmd,extra", [
    ("scan", ["--preset", "fig2b"]),
    ("tune", ["--preset", "fig3"]),
    ("simulate", ["--preset", "fig2a", "--duration", "0.02"]),
    ("powerscan", ["--preset", "fig4", "--duration", "0.002", "--powers", "1,2,3"]),
    ("franson", ["--preset", "fig5-paper", "--duration", "0.01"]),
])
def test_command_determinism(tmp_path, cmd, extra):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(cmd, *extra, "--out", a) == 0
    assert run(cmd, *extra, "--out", b) == 0
    fa, fb = _files(a), _files(b)
    assert fa.keys() == fb.keys() and len(fa) >= 2
    assert fa == fb


def test_report_contents_and_idempotence(tmp_path):
    d = tmp_path / "run"
    assert run("scan", "--preset", "fig4", "--out", d) == 0
    assert run("powerscan", "--preset", "fig4", "--duration", "0.002", "--powers", "1,2,3", "--out", d) == 0
    assert run("tune", "--preset", "fig3", "--out", d) == 0
    assert run("report", d) == 0
    first = ((d / "report.json").read_bytes(), (d / "report.md").read_bytes())
    assert run("report", d) == 0
    assert ((d / "report.json").read_bytes(), (d / "report.md").read_bytes()) == first
    rep = json.loads(first[0])
    text = json.dumps(rep)
    for key in ("modal_brightness", "spectral_brightness"):
        assert key in text
    md = first[1].decode()
    assert "430" in md and "10" in md


def test_main_entry_point_version(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--version"])
    assert e.value.code == 0
    from biphoton import __version__
    assert capsys.readouterr().out.strip() == f"biphoton {__version__}"


def test_outputs_have_no_timestamps(tmp_path):
    conf = _write_config(tmp_path / "c.json")
    assert run("simulate", "--config", conf, "--out", tmp_path / "o") == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert not any("time" in k and "stamp" in k for k in man)
    assert np.isfinite(man["pair_rate_per_s"])
    assert os.path.exists(tmp_path / "o" / "config.json")
