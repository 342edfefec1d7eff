import json
import os

import numpy as np
import pytest
import yaml

from zakai.harness import ConfigError, HypothesisFailure, RunAborted, RunConfig, defaults_for, load_config, run
from zakai.harness.cli import main
from zakai.harness.config import dump_config
from zakai.harness.plots import emit_plots
from zakai.harness.reporting import RunReport, Table


def _cfg(kind, **kw):
    return RunConfig.from_dict({**defaults_for(kind), **kw})


GBM_SMALL = dict(paths=10, steps=256, ladder=[8, 4, 2, 1])


def test_negative_horizon_is_a_field_error_and_writes_nothing(tmp_path):
    out = tmp_path / "run"
    with pytest.raises(ConfigError) as exc:
        run(_cfg("gbm_exact", horizon=-1.0), out_dir=str(out))
    assert any(e.startswith("horizon:") for e in exc.value.errors)
    assert not out.exists()


def test_unknown_keys_and_bad_fields_are_itemized():
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_dict({"kind": "gbm_exact", "sede": 1})
    assert any("sede" in e for e in exc.value.errors)
    with pytest.raises(ConfigError) as exc:
        _cfg("gbm_exact", ladder=[3], options={"bogus": 1}).validate()
    fields = {e.split(":")[0] for e in exc.value.errors}
    assert {"ladder", "options"} <= fields


def test_yaml_round_trip_and_hash_ignores_out(tmp_path):
    cfg = _cfg("wong_zakai_ladder", seed=3)
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    back = load_config(str(path))
    assert back == cfg
    assert back.replace(out="elsewhere").config_hash() == cfg.config_hash()
    assert cfg.replace(seed=4).config_hash() != cfg.config_hash()
    assert yaml.safe_load(path.read_text())["kind"] == "wong_zakai_ladder"


def test_gbm_run_writes_outputs(tmp_path):
    rep = run(_cfg("gbm_exact", **GBM_SMALL), out_dir=str(tmp_path))
    assert rep.passed, rep.lines()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["master_seed"] == 0 and man["experiments"][0]["report_hash"] == rep.content_hash()
    assert (tmp_path / "theta_ladder.csv").read_text().startswith("dt,n_paths,rms_rel_error")
    stored = json.loads((tmp_path / "report.json").read_text())
    assert stored.pop("report_hash") == rep.content_hash()
    back = RunReport.from_dict(stored)
    assert back.content_hash() == rep.content_hash()


def test_reruns_and_worker_counts_agree(tmp_path, monkeypatch):
    cfg = _cfg("zakai_default", paths=6, steps=64, n=32)
    a = run(cfg, out_dir=str(tmp_path / "a"))
    b = run(cfg, out_dir=str(tmp_path / "b"))
    monkeypatch.setenv("ZAKAI_WORKERS", "2")
    c = run(cfg, out_dir=str(tmp_path / "c"))
    assert a.content_hash() == b.content_hash() == c.content_hash()


def test_bad_worker_count(monkeypatch):
    monkeypatch.setenv("ZAKAI_WORKERS", "0")
    with pytest.raises(ValueError):
        run(_cfg("gbm_exact", **GBM_SMALL), write=False)


def test_nan_path_is_isolated_like_an_excluded_path():
    base = dict(paths=20, steps=64, n=32)
    poisoned = run(_cfg("zakai_default", inject_nan=[3], **base), write=False)
    dropped = run(_cfg("zakai_default", exclude=[3], **base), write=False)
    assert poisoned.failures == [{"path": 3, "step": 32}]
    assert poisoned.summary == dropped.summary
    rows = [r for r in poisoned.tables["per_path"].rows if r[0] != 3]
    assert rows == dropped.tables["per_path"].rows


def test_too_many_failures_abort():
    with pytest.raises(RunAborted):
        run(_cfg("zakai_default", paths=20, steps=64, n=32, inject_nan=[1, 2]), write=False)


def test_strict_parabolicity_precheck():
    cfg = _cfg("const_coeff_1d", paths=2, steps=64, n=32, ladder=[2, 1], model={"beta": 1.5}, strict=True)
    with pytest.raises(HypothesisFailure):
        run(cfg, write=False)
    rep = run(cfg.replace(strict=False), write=False)
    assert not rep.passed and not rep.checks[0]["passed"]


def test_plots_carry_slope_labels(tmp_path):
    rep = run(_cfg("gbm_exact", **GBM_SMALL), write=False)
    files = emit_plots(rep, str(tmp_path))
    svg = (tmp_path / "theta_ladder.svg").read_text()
    assert f"theta=0.5: slope {rep.orders['theta']:.6f}" in svg
    dat = [f for f in files if f.endswith(".dat")]
    assert len(np.loadtxt(dat[0])) == 4


def test_empty_ladder_warns(tmp_path):
    rep = RunReport("gbm_exact", "h", 0, {}, "b", tables={"t": Table(["dt", "e"], [])},
                    ladders=[{"name": "t", "table": "t", "x": "dt", "series": [{"y": "e", "label": "e"}]}])
    with pytest.warns(UserWarning):
        assert emit_plots(rep, str(tmp_path)) == []


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["gbm_exact", "--out", str(tmp_path / "ok"), "--paths", "4"]) == 0
    assert "PASS exact_stepping_max_rel_error" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"kind": "gbm_exact", "horizon": -2.0}))
    assert main(["gbm_exact", "--config", str(bad)]) == 2
    assert "horizon" in capsys.readouterr().err
    assert main(["ito_suite", "--config", str(bad)]) == 2
    hyp = tmp_path / "hyp.yaml"
    hyp.write_text(yaml.safe_dump({"kind": "hypothesis_suite", "n": 64, "options": {"mu_tol": 0.0}}))
    assert main(["hypothesis_suite", "--config", str(hyp), "--out", str(tmp_path / "s"), "--strict"]) == 3
    assert os.path.exists(tmp_path / "s" / "report.json")
    assert main(["hypothesis_suite", "--config", str(hyp), "--out", str(tmp_path / "p"), "--permissive", "--no-plots"]) == 1
