import json

import pytest

from autofabric.chainsim import OrdererConfig, Simulator, TraceWriter
from autofabric.contracts import ContractCall, Function, generator_key
from autofabric.errors import InvalidConfig, SchemaMismatch
from autofabric.expctl import (COLUMNS, SCHEMA_TAG, ExperimentConfig, compare, load_config_text, main, read_csv,
                               replay_trace)


def run_cli(tmp_path, *extra, name="out"):
    out = tmp_path / name
    code = main(["run", "--out", str(out), *extra])
    return code, out


def test_baseline_run_layout(tmp_path):
    code, out = run_cli(tmp_path, "--experiment", "param-tuning", "--mode", "baseline", "--steps", "12",
                        "--seed", "7", "--step-duration", "1")
    assert code == 0
    seed_dir = out / "param-tuning-baseline" / "seed-7"
    rows = read_csv(seed_dir / "steps.csv")
    assert len(rows) == 12
    assert {r["action"] for r in rows} == {"33"}
    lines = (seed_dir / "steps.csv").read_text().splitlines()
    assert lines[0] == SCHEMA_TAG and lines[1] == ",".join(COLUMNS)
    manifest = json.loads((seed_dir / "manifest.json").read_text())
    assert manifest["seed"] == 7 and len(manifest["config_sha256"]) == 64
    summary = json.loads((seed_dir / "summary.json").read_text())
    assert summary["final"]["window"] == 12


def test_identical_invocations_are_byte_identical(tmp_path):
    args = ["--experiment", "contract-adapt", "--mode", "learn", "--steps", "20", "--seed", "3",
            "--step-duration", "1", "--set", "workload.phase_length=5"]
    _, a = run_cli(tmp_path, *args, name="a")
    _, b = run_cli(tmp_path, *args, name="b")
    rel = "contract-adapt-learn/seed-3/steps.csv"
    assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_compare_self_and_learned_vs_baseline(tmp_path):
    common = ["--experiment", "admission-fairness", "--steps", "6", "--seed", "1", "--step-duration", "0.5"]
    run_cli(tmp_path, *common, "--mode", "baseline")
    base = tmp_path / "out" / "admission-fairness-baseline" / "seed-1" / "steps.csv"
    same = compare(base, base, window=5)
    assert all(v == 0 for v in same["pct_change"].values())
    code, _ = run_cli(tmp_path, *common, "--mode", "learn", "--compare-to", str(base))
    assert code == 0
    summary = json.loads((tmp_path / "out" / "admission-fairness-learn" / "seed-1" / "summary.json").read_text())
    assert set(summary["vs_baseline"]["pct_change"]) == {"overall_tps", "success_tps", "avg_latency", "jain"}


def test_compare_rejects_bad_schema(tmp_path):
    good = tmp_path / "good.csv"
    good.write_text(SCHEMA_TAG + "\n" + ",".join(COLUMNS) + "\n" + ",".join(["0"] * len(COLUMNS)) + "\n")
    bad_cols = tmp_path / "bad.csv"
    bad_cols.write_text(SCHEMA_TAG + "\n" + ",".join(COLUMNS) + "\n" + "0,1\n")
    bad_tag = tmp_path / "tag.csv"
    bad_tag.write_text("#schema:other\n")
    with pytest.raises(SchemaMismatch):
        compare(good, bad_cols, window=1)
    with pytest.raises(SchemaMismatch):
        compare(good, bad_tag, window=1)
    assert main(["compare", str(good), str(bad_tag)]) == 2


def test_config_file_and_precedence(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text("[experiment]\nexperiment = contract-adapt\nsteps = 4\nstep_duration = 0.5\nseeds = 1, 2\n"
                   "[agent]\nepsilon_mode = constant\nepsilon_start = 0.2\n[cost]\nendorse_base = 0.02\n")
    code, out = run_cli(tmp_path, "--config", str(ini), "--steps", "3")
    assert code == 0
    for seed in (1, 2):
        rows = read_csv(out / "contract-adapt-learn" / f"seed-{seed}" / "steps.csv")
        assert len(rows) == 3
        assert {r["epsilon"] for r in rows} == {"0.200000"}


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--experiment", "param-tuning", "--steps", "0"]) == 2
    assert main(["run", "--set", "cost.warp_drive=1"]) == 2
    assert main(["run", "--baseline-knobs", "400,2,2,16"]) == 2
    with pytest.raises(InvalidConfig):
        load_config_text("[experiment]\nmode = sometimes\n").validate()
    with pytest.raises(InvalidConfig):
        load_config_text("[workload]\npopular = 4\n").validate()  # param-tuning has no songs


def test_io_error_exit_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--out", str(blocker / "sub"), "--steps", "1", "--step-duration", "0.1"]) == 3


def test_env_var_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("AUTOFABRIC_OUT", str(tmp_path / "envroot"))
    assert main(["run", "--experiment", "contract-adapt", "--steps", "2", "--step-duration", "0.5"]) == 0
    assert (tmp_path / "envroot" / "contract-adapt-learn" / "seed-0" / "steps.csv").exists()


def test_digest_ignores_output_location():
    a, b = ExperimentConfig(output="x"), ExperimentConfig(output="y")
    assert a.digest() == b.digest()
    assert a.digest() != ExperimentConfig(steps=5).digest()


def test_replay_trace_round_trip(tmp_path):
    path = tmp_path / "events.jsonl"
    with open(path, "w") as fh:
        sim = Simulator(OrdererConfig(20, 2, 0.5, 16), trace=TraceWriter(fh))
        for i in range(300):
            sim.submit(ContractCall(Function.GENERATOR_UPDATE, generator_key(i % 13)), i * 0.005)
        sim.propose_config(OrdererConfig(100, 2, 1, 16), at=0.7)
        sim.advance(10.0)
    with open(path) as fh:
        report = replay_trace(fh)
    assert report["txs"] == 301 and report["mismatches"] == []
    assert main(["replay-trace", str(path)]) == 0


def test_replay_trace_detects_tampering(tmp_path):
    path = tmp_path / "events.jsonl"
    with open(path, "w") as fh:
        sim = Simulator(OrdererConfig(5, 2, 0.5, 16), trace=TraceWriter(fh))
        for i in range(10):
            sim.submit(ContractCall(Function.GENERATOR_UPDATE, generator_key(0)), i * 0.001)
        sim.advance(5.0)
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines):
        rec = json.loads(line)
        if rec["kind"] == "BlockValidated":
            rec["txs"][-1]["status"] = "Committed"
            lines[i] = json.dumps(rec)
            break
    path.write_text("\n".join(lines) + "\n")
    assert main(["replay-trace", str(path)]) == 1


def test_event_trace_flag_and_plots(tmp_path):
    pytest.importorskip("matplotlib")
    code, out = run_cli(tmp_path, "--experiment", "contract-adapt", "--steps", "3", "--step-duration", "0.5",
                        "--event-trace", "--plots")
    assert code == 0
    seed_dir = out / "contract-adapt-learn" / "seed-0"
    assert (seed_dir / "events.jsonl").stat().st_size > 0
    assert (seed_dir / "throughput.svg").exists()
    assert main(["replay-trace", str(seed_dir / "events.jsonl")]) == 0
