import json
from datetime import date

from regimevol.cli import EXIT_CONFIG, main
from regimevol.synth import business_days

DAYS = 260
TRAIN = 150


def write_config(path, models=None, extra="", output="out"):
    dates = business_days(date(2010, 1, 4), DAYS)
    start, end = dates[22 + TRAIN + 5], dates[22 + TRAIN + 44]
    models = models or """
  - {family: har}
  - {family: markov, K: 2}
  - {family: dist_cluster, K: 2, classifier: {n_iter: 1}, segment: {min_len: 25}}
  - {family: coef_cluster, K: 3, segment: {min_len: 25}}
"""
    path.write_text(f"""
seed: 3
output: {output}
synth: {{days: {DAYS}, seed: 4}}
window: {{train_len: {TRAIN}}}
periods:
  - {{name: test, start: {start}, end: {end}, horizon: 5}}
models:{models}{extra}
""")
    return path


def test_run_writes_report_and_manifest(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml")
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "model,period,mape,mse_x1e6,n_regimes,n_records"
    assert len(lines) == 5
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and "report.csv" in manifest["outputs"]
    assert str(out / "report.csv") in capsys.readouterr().out


def test_run_is_deterministic(tmp_path):
    cfg = write_config(tmp_path / "c.yaml")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name.startswith(("report", "series_")):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_missing_data_source_is_a_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("models:\n  - {family: har}\n")
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.startswith("error[config]:") and "'data' or 'synth'" in err


def test_unknown_model_field_is_named(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", models="\n  - {family: har, lags: 3}\n")
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "lags" in capsys.readouterr().err


def test_yaml_syntax_error_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("models:\n  - {family: har\n")
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "line" in capsys.readouterr().err


def test_synth_defaults_and_seed_flag(tmp_path):
    spec = tmp_path / "s.yaml"
    spec.write_text("synth: {days: 40, seed: 1}\n")
    assert main(["synth", "--config", str(spec), "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", str(spec), "--out", str(tmp_path / "b"), "--seed", "2"]) == 0
    assert {p.name for p in (tmp_path / "a").iterdir()} == {"bars.csv", "vix.csv", "truth.csv"}
    assert (tmp_path / "a" / "vix.csv").read_bytes() != (tmp_path / "b" / "vix.csv").read_bytes()


def test_synth_bad_transition_row(tmp_path, capsys):
    spec = tmp_path / "s.yaml"
    spec.write_text("synth: {days: 40, transition: [[0.9, 0.1], [0.3, 0.3]]}\n")
    assert main(["synth", "--config", str(spec), "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    assert "transition row 2" in capsys.readouterr().err


def test_inspect_stages(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml")
    assert main(["inspect", "features", "--config", str(cfg)]) == 0
    header = (tmp_path / "out" / "features.csv").read_text().splitlines()[0]
    assert header == "date,y,rv_d,rv_w,rv_m,vix_d,vix_w,vix_m,kts,jmp"
    assert main(["inspect", "segments", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "segments.csv").read_text().startswith("segment_id,start_date,end_date,length")


def test_inspect_rejects_incompatible_family(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", models="\n  - {family: har}\n")
    assert main(["inspect", "distances", "--config", str(cfg)]) == EXIT_CONFIG
    assert "incompatible with model family har" in capsys.readouterr().err


def test_threads_must_be_positive(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml")
    assert main(["run", "--config", str(cfg), "--threads", "0"]) == EXIT_CONFIG


def test_missing_config_flag(capsys):
    assert main(["run"]) == EXIT_CONFIG
    assert "--config" in capsys.readouterr().err


def test_period_without_history_is_a_pipeline_error(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("synth: {days: 100}\nperiods:\n  - {name: p, start: 2010-02-01, end: 2010-03-01}\n"
                   "models:\n  - {family: har}\n")
    assert main(["run", "--config", str(cfg)]) == 3
    assert capsys.readouterr().err.startswith("error[pipeline]:")
