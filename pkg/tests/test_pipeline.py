import json
import os
import shutil
import time

import pytest

from gridlocal import cli
from gridlocal.errors import ConvergenceError, StageDependencyError, ValidationError
from gridlocal.pipeline import RunConfig, run_pipeline

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "two_bus.json")
ARTIFACTS = ["opf/outer_loop.csv", "datasets/index.csv", "design/controllers.json", "report/summary.csv",
             "report/traces.svg"] + [f"simulate/{m}_{s}.csv" for m in ("grid_code", "centralized_opf", "learned_local")
                                     for s in ("summary", "traces", "events")]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("two_bus")
    start = time.perf_counter()
    code = cli.main(["all", "--config", CONFIG, "--out", str(out)])
    elapsed = time.perf_counter() - start
    assert code == 0
    return out, elapsed


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_all_produces_every_artifact_within_a_minute(run_dir):
    out, elapsed = run_dir
    assert elapsed < 60
    for rel in ARTIFACTS:
        assert os.path.getsize(out / rel) > 0, rel
    head = (out / "report/summary.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in head[1:]] == ["grid_code", "centralized_opf", "learned_local"]


def test_rerun_all_skips_up_to_date_stages(run_dir):
    out, _ = run_dir
    cfg = RunConfig.from_json(CONFIG).with_overrides(out=str(out))
    assert run_pipeline(cfg, "all") == (0, [])


def test_design_rerun_byte_identical(run_dir):
    out, _ = run_dir
    before = _read(out / "design/controllers.json")
    cfg = RunConfig.from_json(CONFIG).with_overrides(out=str(out))
    run_pipeline(cfg, "design")
    assert _read(out / "design/controllers.json") == before
    # identical output keeps the downstream stages current
    assert run_pipeline(cfg, "all") == (0, [])


def test_simulate_without_bundle(tmp_path, capsys):
    assert cli.main(["simulate", "--config", CONFIG, "--out", str(tmp_path)]) == 2
    assert "run `gridlocal design` first" in capsys.readouterr().err
    cfg = RunConfig.from_json(CONFIG).with_overrides(out=str(tmp_path))
    with pytest.raises(StageDependencyError, match="'design'"):
        run_pipeline(cfg, "simulate")


def test_training_days_need_override(run_dir, tmp_path):
    out, _ = run_dir
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    with open(CONFIG) as fh:
        data = json.load(fh)
    data.update(simulate_days=["d00"], out=str(copy))
    cfg = RunConfig.from_dict(data, os.path.dirname(CONFIG))
    with pytest.raises(ValidationError, match="tagged train"):
        run_pipeline(cfg, "simulate")
    code, written = run_pipeline(cfg, "simulate", stage_override=True)
    assert code == 0 and len(written) == 9


def test_config_validation(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"case": "two_bus", "opf": {"colour": 1}}')
    assert cli.main(["all", "--config", str(bad)]) == 2
    bad.write_text('{"case": "moon"}')
    assert cli.main(["all", "--config", str(bad)]) == 2
    bad.write_text('{"case": "two_bus",\n "cc": {"seed": 3}}')
    with pytest.raises(ValidationError, match="seeds"):
        RunConfig.from_json(bad)
    bad.write_text('{"case": ')
    with pytest.raises(ValidationError, match="line 1"):
        RunConfig.from_json(bad)
    assert cli.main(["all", "--config", str(tmp_path / "none.json")]) == 2


def test_seed_override_replaces_all_seeds():
    cfg = RunConfig.from_json(CONFIG).with_overrides(seed=11)
    assert cfg.seeds == {"scenario": 11, "cc": 11} and cfg.cc_config().seed == 11
    assert cfg.fingerprint() != RunConfig.from_json(CONFIG).fingerprint()


def test_nonconvergence_exit_code(monkeypatch, tmp_path):
    def boom(*args, **kwargs):
        raise ConvergenceError("no")

    monkeypatch.setattr(cli, "run_pipeline", boom)
    assert cli.main(["opf", "--config", CONFIG, "--out", str(tmp_path)]) == 3
