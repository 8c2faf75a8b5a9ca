import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from quasiflow import pipeline as pl
from quasiflow.cli import main
from quasiflow.config import DEFAULT_CONFIG, load_config
from quasiflow.errors import ConfigError, QuasiflowError, StageError
from quasiflow.ingest import write_transactions
from quasiflow.synth import synthetic_economy

FAST_INI = """\
[communities]
leiden_iterations = 2
[flow]
hops = 3
top_n = 20
[anomaly]
trees = 20
[model]
rounds = 30
max_depth = 4
early_stopping = 10
seeds = 0, 1
[run]
workers = 1
"""


@pytest.fixture(scope="module")
def fixture_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    d = synthetic_economy(n_transactions=3000, n_accounts=300, illicit_rate=0.02, days=10, seed=1)
    data = root / "tx.csv"
    write_transactions(d, data)
    ini = root / "fast.ini"
    ini.write_text(FAST_INI)
    return data, ini


def config(fixture_files, tmp_path, **kw):
    data, ini = fixture_files
    over = {"data_path": str(data), "cache_dir": str(tmp_path / "cache"), "out_dir": str(tmp_path / "out")}
    over.update(kw)
    return load_config(ini, over)


def test_cache_hits_and_nine_timings(fixture_files, tmp_path):
    cfg = config(fixture_files, tmp_path)
    first, out = pl.run_pipeline(cfg)
    assert first.executed == list(pl.STAGES)
    assert len(first.records) == 9 and all(r.seconds >= 0 for r in first.records)
    second, _ = pl.run_pipeline(cfg)
    assert second.executed == []
    # changing the flow hops leaves the upstream stages cached
    third, _ = pl.run_pipeline(replace(cfg, hops=2))
    assert set(third.executed) == {"flow", "temporal_flow", "anomaly", "assemble", "train_evaluate"}
    for s in ("ingest", "graphs", "communities", "subgraph_features"):
        assert not third.record(s).executed
    assert third.record("temporal_flow").cardinality == out["graphs"]["g"].edge_count
    assert third.record("flow").cardinality == out["graphs"]["ag"].edge_count
    assert third.record("subgraph_features").cardinality == out["graphs"]["ag"].node_count


def test_no_cache_verification_and_stale_entries(fixture_files, tmp_path):
    cfg = config(fixture_files, tmp_path)
    pl.run_pipeline(cfg, until="flow")
    rep, _ = pl.run_pipeline(cfg, until="flow", use_cache=False, verify=True)
    assert [r.verified for r in rep.records] == [True] * 4
    # corrupt one entry: it is ignored and recomputed
    key = pl.stage_keys(cfg)["flow"]
    pl.StageCache(cfg.cache_dir).path("flow", key).write_bytes(b"garbage")
    rep, _ = pl.run_pipeline(cfg, until="flow")
    assert rep.executed == ["flow"]


def test_verification_detects_mismatch(fixture_files, tmp_path, monkeypatch):
    cfg = config(fixture_files, tmp_path)
    pl.run_pipeline(cfg, until="graphs")
    real = pl.BODIES["graphs"]

    def tampered(c, up):
        out = real(c, up)
        out["node_type"] = out["node_type"].copy()
        out["node_type"][0] ^= 1
        return out

    monkeypatch.setitem(pl.BODIES, "graphs", tampered)
    with pytest.raises(StageError, match="graphs"):
        pl.run_pipeline(cfg, until="graphs", use_cache=False, verify=True)


def test_data_file_change_invalidates(fixture_files, tmp_path):
    data, _ = fixture_files
    copy = tmp_path / "copy.csv"
    copy.write_bytes(data.read_bytes())
    cfg = config(fixture_files, tmp_path, data_path=str(copy))
    a = pl.stage_keys(cfg)
    copy.write_bytes(data.read_bytes() + b"99999999999,n1,n2,1.0,0\n")
    b = pl.stage_keys(cfg)
    assert all(a[s] != b[s] for s in pl.STAGES)
    assert pl.stage_keys(replace(cfg, workers=7)) == b


def test_timing_and_plot_rows(fixture_files, tmp_path):
    cfg = config(fixture_files, tmp_path)
    reports = pl.scaling_run(cfg, [1, 2], stages=("flow", "temporal_flow"))
    rows = pl.timing_report(reports, tmp_path / "t.csv")
    assert len(rows) == 2 * 2
    assert [r["workers"] for r in rows] == [1, 1, 2, 2]
    assert all(r["executed"] for r in rows)
    tf = [r for r in rows if r["stage"] == "temporal_flow"]
    assert all(r["cardinality_kind"] == "edges" for r in tf)
    runs = reports + [reports[0]]
    paths = pl.emit_plots_data(runs, tmp_path / "plots")
    with open(paths["flow"]) as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["stage", "x_metric", "x_value", "workers", "seconds"]
    assert len(got) == 1 + 3
    with pytest.raises(QuasiflowError):
        pl.emit_plots_data([], tmp_path)


def test_outputs_and_leakage_audit(fixture_files, tmp_path):
    cfg = config(fixture_files, tmp_path)
    _, out = pl.run_pipeline(cfg)
    paths = pl.write_outputs(cfg, out)
    lines = open(paths["predictions"]).read().splitlines()
    assert lines[0] == "tx_id,score,prediction,label"
    assert len(lines) - 1 == len(out["assemble"]["test"])
    ev = json.load(open(paths["evaluation"]))
    assert len(ev["per_seed"]) == 2
    assert (tmp_path / "out" / "model-seed1.qfgb").is_file()
    audit = pl.leakage_audit(cfg, out["ingest"])
    assert audit["passed"] and audit["flipped_labels"] > 0


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[flow]\nhopz = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[nonsense]\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(None, {"restart": 1.0})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    cfg = load_config()
    assert (cfg.hops, cfg.top_n, cfg.trees, cfg.rounds) == (5, 50, 100, 500)


# -- command line -----------------------------------------------------------------

def cli(fixture_files, tmp_path, *args):
    data, ini = fixture_files
    return main(["--config", str(ini), "--data", str(data), "--cache-dir", str(tmp_path / "cache"),
                 "--out-dir", str(tmp_path / "out"), *args])


def test_cli_exit_codes(fixture_files, tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[flow]\nhops = 0\n")
    assert main(["--config", str(bad), "ingest"]) == 2
    assert main(["ingest", "--data", str(tmp_path / "nope.csv")]) == 3
    broken = tmp_path / "broken.csv"
    broken.write_text("timestamp,source,target,amount,label\n1,a,b,x,0\n")
    assert main(["--cache-dir", str(tmp_path / "c"), "ingest", "--data", str(broken)]) == 3
    assert cli(fixture_files, tmp_path, "ablation", "--groups", "transaction,bogus") == 2

    def boom(cfg, up):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(pl.BODIES, "graphs", boom)
    assert cli(fixture_files, tmp_path, "features") == 4
    assert "graphs" in capsys.readouterr().err


def test_cli_ingest_and_template(fixture_files, tmp_path, capsys):
    assert cli(fixture_files, tmp_path, "ingest", "--cache-out", str(tmp_path / "d.bin")) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["edges"] == 3000
    assert (tmp_path / "d.bin").is_file()
    assert main(["config-template"]) == 0
    assert capsys.readouterr().out == DEFAULT_CONFIG


def test_cli_run_all_evaluate_report(fixture_files, tmp_path, capsys):
    rep = tmp_path / "report.json"
    assert cli(fixture_files, tmp_path, "run-all", "--audit", "--report", str(rep)) == 0
    out = json.loads(capsys.readouterr().out)
    assert " ± " in out["f1"]
    report = json.loads(rep.read_text())
    assert len(report["stages"]) == 9
    assert report["result"]["leakage_audit"]["passed"]
    model = tmp_path / "out" / "model-seed0.qfgb"
    assert cli(fixture_files, tmp_path, "evaluate", "--model", str(model), "--threshold", "0.5") == 0
    ev = json.loads(capsys.readouterr().out)
    assert ev["threshold"] == 0.5 and ev["n_test"] == 600
    assert cli(fixture_files, tmp_path, "evaluate", "--model", str(tmp_path / "none.qfgb")) == 3


def test_cli_bench_and_seed(fixture_files, tmp_path, capsys):
    assert cli(fixture_files, tmp_path, "bench", "--workers-list", "1,2", "--stages", "flow") == 0
    with open(tmp_path / "out" / "timing.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    assert (tmp_path / "out" / "scaling_flow.csv").is_file()
    assert cli(fixture_files, tmp_path, "bench", "--workers-list", "0") == 2
    capsys.readouterr()
    cfg = config(fixture_files, tmp_path)
    assert cfg.seeds == (0, 1)
    from quasiflow.cli import _config, build_parser
    args = build_parser().parse_args(["--config", str(fixture_files[1]), "train", "--seed", "7"])
    c = _config(args)
    assert (c.leiden_seed, c.anomaly_seed, c.seeds) == (7, 7, (7, 8))


def test_ablation_cli(fixture_files, tmp_path, capsys):
    assert cli(fixture_files, tmp_path, "ablation", "--groups", "transaction,random_walk") == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and lines[0].startswith("transaction ")
    with open(tmp_path / "out" / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["groups"] for r in rows] == ["transaction", "transaction+random_walk"]
    assert np.all([float(r["f1_mean"]) >= 0 for r in rows])
