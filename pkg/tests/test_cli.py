import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from provkd import cli, pipeline
from provkd.embed import SignalMatrix
from provkd.errors import InvalidConfig, NumericalError
from provkd.ingest import ScenarioConfig, apply_mimicry, generate_cadets_scenario, write_scenario
from provkd.pipeline import ARTIFACTS, Detector, PipelineConfig, Run, config_hash, parse_kv, sweep, trend

FAST = ["--n-benign", "60", "--embed-epochs", "2", "--teacher-epochs", "40", "--student-epochs", "40",
        "--patience", "40", "--embedding-dim", "8"]


def fast_cfg(tmp_path, **kw):
    base = dict(n_benign=60, embed_epochs=2, teacher_epochs=40, student_epochs=40, patience=40,
                embedding_dim=8, out_dir=str(tmp_path / "runs"))
    base.update(kw)
    return PipelineConfig(**base)


def run_cli(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def field(out, key):
    for line in out.splitlines():
        parts = line.split("\t")
        if parts[0] == key:
            return parts[1]
    raise KeyError(key)


# -- config ---------------------------------------------------------------


def test_config_roundtrip_and_overrides(tmp_path):
    cfg = PipelineConfig(gamma=0.25, ft=False, teacher="sgc", seed=3)
    assert PipelineConfig.loads(cfg.dumps()) == cfg
    p = tmp_path / "c.txt"
    p.write_text("# comment\ngamma = 2.5\nprl = off\n")
    assert PipelineConfig.load(p).gamma == 2.5 and PipelineConfig.load(p).prl is False
    assert parse_kv("a = 1\n\n# x\nb=two") == {"a": "1", "b": "two"}
    with pytest.raises(InvalidConfig):
        PipelineConfig.loads("bogus = 1")
    with pytest.raises(InvalidConfig):
        PipelineConfig.loads("gamma = abc")
    with pytest.raises(InvalidConfig):
        PipelineConfig(ft=False, prl=False)


def test_config_hash_ignores_paths_and_tracks_inputs(tmp_path):
    a = PipelineConfig(out_dir="x")
    assert config_hash(a) == config_hash(replace(a, out_dir="y", figures=False))
    assert config_hash(a) != config_hash(replace(a, gamma=2.0))
    s = generate_cadets_scenario(ScenarioConfig(n_benign=60, seed=0))
    ev, _ = write_scenario(s, tmp_path / "a.jsonl")
    h1 = config_hash(replace(a, events=str(ev)))
    ev2, _ = write_scenario(apply_mimicry(s, 3), tmp_path / "b.jsonl")
    assert h1 != config_hash(replace(a, events=str(ev2)))


# -- pipeline ---------------------------------------------------------------


def test_denoise_off_passes_raw_through(tmp_path):
    cfg = fast_cfg(tmp_path, denoise=False)
    run = Run(cfg)
    run.denoise()
    raw = SignalMatrix.load(run.path("raw"))
    den = SignalMatrix.load(run.path("denoised"))
    np.testing.assert_array_equal(raw.values, den.values)
    assert den.flag == "denoised"


def test_detection_mode_never_loads_teacher(tmp_path, monkeypatch):
    cfg = fast_cfg(tmp_path)
    run = Run(cfg)
    run.distill()
    run.path("teacher").unlink()
    run.path("soft").unlink()

    def boom(*a, **k):
        raise AssertionError("teacher loaded in detection mode")

    monkeypatch.setattr(pipeline.TeacherParams, "load", classmethod(boom))
    monkeypatch.setattr(pipeline, "train_teacher", boom)
    fresh = Run(cfg)
    report = fresh.detect()
    assert report.metrics is not None
    det = Detector.from_run(run.dir)
    s = apply_mimicry(fresh.scenario(), 10)
    scores = det(s)
    assert set(scores) == s.entity_keys()


def test_manifest_contents(tmp_path):
    cfg = fast_cfg(tmp_path)
    run, report, rec = pipeline.run_pipeline(cfg)
    m = json.loads(run.manifest_path.read_text())
    assert m["config_hash"] == run.dir.name == config_hash(cfg)
    assert m["seed"] == cfg.seed
    for stage in pipeline.STAGES:
        assert stage in m["stage_seconds"]
    for name in ("report", "student", "communities", "paths", "dot", "scores_png"):
        assert ARTIFACTS[name] in m["artifacts"]
    assert PipelineConfig.load(run.path("config")) == cfg
    assert rec.partition.num_communities >= 1


def test_errors_are_tagged_with_stage(tmp_path):
    cfg = fast_cfg(tmp_path, cg_max_iter=1, cg_tol=1e-15)
    with pytest.raises(NumericalError) as ei:
        pipeline.fit_pipeline(cfg)
    assert ei.value.stage == "denoise"


def test_sweep_rows(tmp_path):
    cfg = fast_cfg(tmp_path)
    rows = sweep(cfg, "tau", [0.5])
    assert len(rows) == 1
    rows = sweep(cfg, "tau", [0.3, 0.5, 0.9])
    assert [r["tau"] for r in rows] == [0.3, 0.5, 0.9]
    assert isinstance(trend(rows, "tau"), float)
    with pytest.raises(InvalidConfig):
        sweep(cfg, "hidden", [1])


# -- command line -------------------------------------------------------------


def test_usage_errors(capsys, tmp_path):
    assert run_cli([], capsys)[0] == 1
    assert run_cli(["frobnicate"], capsys)[0] == 1
    assert run_cli(["run", "--no-such-flag"], capsys)[0] == 1
    assert run_cli(["run", "--set", "gamma"], capsys)[0] == 1
    assert run_cli(["sweep", "--axis", "gamma", "--values", "x,y"], capsys)[0] == 1
    assert run_cli(["mimicry", "--counts", "a"], capsys)[0] == 1


def test_data_errors(capsys, tmp_path):
    out = ["--out-dir", str(tmp_path / "runs")]
    code, _, err = run_cli(["ingest", str(tmp_path / "missing.jsonl")] + out, capsys)
    assert code == 2 and "data error" in err
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"event_id":"e1","ts":1,"relation":"connect","subject":{"id":"p","kind":"process"},'
                   '"object":{"id":"f","kind":"file"}}\n')
    code, _, err = run_cli(["ingest", str(bad)] + out, capsys)
    assert code == 2 and "line 1" in err
    assert run_cli(["run", "--set", "nope=1"] + out, capsys)[0] == 2
    assert run_cli(["run", "--n-benign", "10"] + out, capsys)[0] == 2


def test_numerical_error_exit_code(capsys, tmp_path):
    args = ["denoise", "--out-dir", str(tmp_path / "runs"), "--cg-max-iter", "1", "--cg-tol", "1e-15"] + FAST
    code, _, err = run_cli(args, capsys)
    assert code == 3 and "denoise" in err


def test_stage_by_stage_and_determinism(capsys, tmp_path):
    cfgfile = tmp_path / "cfg.txt"
    cfgfile.write_text("seed = 1\ntau = 0.5\n")
    base = ["--config", str(cfgfile)] + FAST
    out1 = ["--out-dir", str(tmp_path / "a")]
    for cmd in ("ingest", "build", "embed", "denoise", "train-teacher", "distill", "detect", "reconstruct"):
        code, out, err = run_cli([cmd] + base + out1, capsys)
        assert code == 0, (cmd, err)
    run_dir = field(out, "run_dir")
    code, out, _ = run_cli(["run"] + base + ["--out-dir", str(tmp_path / "b")], capsys)
    assert code == 0
    other = field(out, "run_dir")
    a, b = Path(run_dir), Path(other)
    assert a.name == b.name
    assert (a / "report.txt").read_bytes() == (b / "report.txt").read_bytes()
    assert (a / "student.params").read_bytes() == (b / "student.params").read_bytes()
    assert PipelineConfig.load(a / "config.txt").seed == 1
    # flags override the file
    code, out, _ = run_cli(["build", "--config", str(cfgfile), "--seed", "4"] + FAST + out1, capsys)
    assert PipelineConfig.load(Path(field(out, "run_dir")) / "config.txt").seed == 4


def test_scenario_detect_on_new_events(capsys, tmp_path):
    out = ["--out-dir", str(tmp_path / "runs")] + FAST
    code, text, _ = run_cli(["scenario", "-o", str(tmp_path / "s.jsonl"), "--mimicry", "20"] + out, capsys)
    assert code == 0 and (tmp_path / "s.labels").exists()
    assert run_cli(["distill"] + out, capsys)[0] == 0
    code, text, _ = run_cli(["detect", "--input", str(tmp_path / "s.jsonl"), "-o", str(tmp_path / "r.txt")] + out,
                            capsys)
    assert code == 0
    lines = (tmp_path / "r.txt").read_text().splitlines()
    assert lines[0].startswith("# threshold") and any(l.startswith("# F1") for l in lines)


def test_sweep_and_mimicry_commands(capsys, tmp_path):
    out = ["--out-dir", str(tmp_path / "runs")] + FAST
    code, text, _ = run_cli(["sweep", "--axis", "tau", "--values", "0.3,0.6", "-o", str(tmp_path / "sw.csv")] + out,
                            capsys)
    assert code == 0
    assert len((tmp_path / "sw.csv").read_text().splitlines()) == 3
    assert (tmp_path / "sw.png").stat().st_size > 0
    code, text, _ = run_cli(["mimicry", "--counts", "0,20", "--compare-denoise", "-o", str(tmp_path / "m.csv")] + out,
                            capsys)
    assert code == 0
    assert (tmp_path / "m.png").exists() and (tmp_path / "m-denoise-off.csv").exists()
