"""Experiment runner CLI: ``run``, ``compare`` and ``replay-trace``.

Settings come from built-in defaults, then an optional INI file
(``--config``), then command-line flags (``--set section.key=value`` and the
dedicated options), later sources winning. Outputs land in
``<out>/<experiment>-<mode>/seed-<n>/``; ``<out>`` defaults to
``$AUTOFABRIC_OUT`` or ``./runs``.

Exit codes: 0 success, 2 invalid configuration or CSV schema, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .autopilot.agent import AgentConfig, DQNAgent
from .autopilot.envs import (ADMISSION_ACTIONS, AdmissionEnv, ContractEnv, DEFAULT_PARAM_ACTION, ParamTuningEnv,
                             encode_param)
from .autopilot.train import StepRecord, run_baseline, train
from .chainsim import CostModel, TraceWriter
from .errors import InvalidConfig, SchemaMismatch
from .ledger import TxStatus, Version, serial_oracle
from .workload import RateSchedule

SCHEMA_TAG = "#schema:autofabric-steps-v1"
COLUMNS = ("step", "phase", "send_rate", "overall_tps", "success_tps", "avg_latency", "jain",
           "org1_success", "org2_success", "action", "reward", "epsilon")
EXPERIMENTS = ("param-tuning", "contract-adapt", "admission-fairness")
MODES = ("baseline", "learn")
OUT_ENV = "AUTOFABRIC_OUT"
WINDOW = 100

WORKLOAD_KEYS = {
    "param-tuning": {"skewed": bool, "hot_keys": int, "hot_prob": float, "phase_length": int, "rates": "floats"},
    "contract-adapt": {"rate": float, "phase_length": int, "popular": int},
    "admission-fairness": {"hot_keys": int, "hot_prob": float},
}
SIM_KEYS = {"tx_overhead_bytes": int, "payload_bytes": int, "policy": int, "endorsements": int}


@dataclass
class ExperimentConfig:
    experiment: str = "param-tuning"
    mode: str = "learn"
    steps: int = 400
    step_duration: float = 30.0
    seeds: tuple = (0,)
    output: Optional[str] = None
    baseline_knobs: tuple = (500, 2.0, 2.0, 16.0)
    baseline_variant: int = 0
    cost: dict = field(default_factory=dict)
    workload: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    plots: bool = False
    event_trace: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise InvalidConfig(f"experiment must be one of {EXPERIMENTS}")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        if self.steps <= 0 or not self.step_duration > 0:
            raise InvalidConfig("steps and step_duration must be positive")
        if not self.seeds:
            raise InvalidConfig("at least one seed is required")
        if self.baseline_variant not in (0, 1):
            raise InvalidConfig("baseline variant must be 0 or 1")
        try:
            encode_param(self.baseline_knobs)
        except ValueError:
            raise InvalidConfig(f"baseline knobs {self.baseline_knobs} not in the action space") from None
        allowed = WORKLOAD_KEYS[self.experiment]
        for key in self.workload:
            if key not in allowed:
                raise InvalidConfig(f"workload key {key!r} not valid for {self.experiment}")
        for key in self.sim:
            if key not in SIM_KEYS:
                raise InvalidConfig(f"unknown sim key {key!r}")
        self.cost_model()
        self.agent_config()
        return self

    def cost_model(self) -> CostModel:
        try:
            return CostModel(**self.cost)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None

    def agent_config(self) -> AgentConfig:
        try:
            return AgentConfig(**self.agent)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None

    def canonical(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("output")
        d.pop("plots")
        return json.dumps(d, sort_keys=True, default=list)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


# config parsing ----------------------------------------------------------------

def _as_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"not a boolean: {raw!r}")


def _floats(raw: str) -> tuple:
    return tuple(float(x) for x in raw.replace(" ", "").split(",") if x)


def _convert(kind, raw: str):
    try:
        if kind is bool:
            return _as_bool(raw)
        if kind == "floats":
            return _floats(raw)
        if kind == "ints":
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        return kind(raw)
    except ValueError as exc:
        raise InvalidConfig(f"bad value {raw!r}: {exc}") from None


def _field_kind(default):
    if isinstance(default, bool):
        return bool
    if isinstance(default, tuple):
        return "ints" if all(isinstance(x, int) for x in default) else "floats"
    return type(default)


EXPERIMENT_KEYS = {"experiment": str, "mode": str, "steps": int, "step_duration": float, "seeds": "ints",
                   "output": str, "baseline_knobs": "floats", "baseline_variant": int, "plots": bool,
                   "event_trace": bool}


def apply_setting(cfg: ExperimentConfig, section: str, key: str, raw: str) -> None:
    key = key.strip().replace("-", "_")
    if section == "experiment":
        if key not in EXPERIMENT_KEYS:
            raise InvalidConfig(f"unknown experiment key {key!r}")
        value = _convert(EXPERIMENT_KEYS[key], raw)
        if key == "baseline_knobs":
            if len(value) != 4:
                raise InvalidConfig("baseline_knobs needs four values")
            value = (int(value[0]), *value[1:])
        setattr(cfg, key, value)
    elif section == "cost":
        defaults = dataclasses.asdict(CostModel())
        if key not in defaults:
            raise InvalidConfig(f"unknown cost key {key!r}")
        cfg.cost[key] = _convert(_field_kind(defaults[key]), raw)
    elif section == "agent":
        defaults = dataclasses.asdict(AgentConfig())
        if key not in defaults:
            raise InvalidConfig(f"unknown agent key {key!r}")
        cfg.agent[key] = _convert(_field_kind(defaults[key]), raw)
    elif section == "workload":
        kinds = {k: v for table in WORKLOAD_KEYS.values() for k, v in table.items()}
        if key not in kinds:
            raise InvalidConfig(f"unknown workload key {key!r}")
        cfg.workload[key] = _convert(kinds[key], raw)
    elif section == "sim":
        if key not in SIM_KEYS:
            raise InvalidConfig(f"unknown sim key {key!r}")
        cfg.sim[key] = _convert(SIM_KEYS[key], raw)
    else:
        raise InvalidConfig(f"unknown section [{section}]")


def load_config_text(text: str, cfg: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cfg = cfg or ExperimentConfig()
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfig(str(exc)) from None
    for section in cp.sections():
        for key, raw in cp.items(section):
            apply_setting(cfg, section, key, raw)
    return cfg


# environments ----------------------------------------------------------------------

def build_env(cfg: ExperimentConfig, seed: int, trace=None):
    common = dict(seed=seed, step_duration=cfg.step_duration, cost=cfg.cost_model(), sim_kwargs=dict(cfg.sim),
                  trace=trace)
    w = dict(cfg.workload)
    if cfg.experiment == "param-tuning":
        schedule = RateSchedule(w.pop("phase_length", 100), w.pop("rates", (300.0, 500.0)))
        return ParamTuningEnv(schedule=schedule, **w, **common)
    if cfg.experiment == "contract-adapt":
        return ContractEnv(**w, **common)
    return AdmissionEnv(**w, **common)


def baseline_action(cfg: ExperimentConfig) -> int:
    if cfg.experiment == "param-tuning":
        return encode_param(cfg.baseline_knobs)
    if cfg.experiment == "contract-adapt":
        return cfg.baseline_variant
    return ADMISSION_ACTIONS.index((1.0, 1.0))


def run_seed(cfg: ExperimentConfig, seed: int, trace=None) -> list[StepRecord]:
    env = build_env(cfg, seed, trace)
    if cfg.mode == "baseline":
        action = baseline_action(cfg)
        # the default knobs are already active; no config transaction needed
        apply = not (cfg.experiment == "param-tuning" and action == DEFAULT_PARAM_ACTION)
        records = run_baseline(env, cfg.steps, action if apply else None)
        for r in records:
            r.action = action
        return records
    agent = DQNAgent(len(env.obs_scale), env.n_actions, cfg.agent_config(), obs_scale=env.obs_scale, seed=seed,
                     total_steps=cfg.steps)
    return train(env, agent, cfg.steps)


# CSV ------------------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def render_csv(records: Sequence[StepRecord]) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA_TAG + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        m = r.metrics
        w.writerow([r.step, r.phase, _fmt(m.send_rate), _fmt(m.overall_tps), _fmt(m.success_tps),
                    _fmt(m.avg_latency), _fmt(m.jain), m.org1_success, m.org2_success,
                    "" if r.action is None else r.action, _fmt(r.reward), _fmt(r.epsilon)])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        tag = fh.readline().rstrip("\n")
        if tag != SCHEMA_TAG:
            raise SchemaMismatch(f"{path}: schema tag {tag!r} != {SCHEMA_TAG!r}")
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise SchemaMismatch(f"{path}: unexpected header")
    out = []
    for i, row in enumerate(rows[1:], start=3):
        if len(row) != len(COLUMNS):
            raise SchemaMismatch(f"{path}:{i}: {len(row)} columns, expected {len(COLUMNS)}")
        out.append(dict(zip(COLUMNS, row)))
    return out


METRICS = ("overall_tps", "success_tps", "avg_latency", "jain")


def window_means(rows: list[dict], window: int) -> dict:
    tail = rows[-window:]
    return {k: sum(float(r[k]) for r in tail) / len(tail) for k in METRICS}


def _pct(a: float, b: float) -> Optional[float]:
    return None if b == 0 else 100.0 * (a - b) / b


def compare(path_a, path_b, window: int = WINDOW) -> dict:
    """Final-window means of run A and run B and the % change of A relative to B."""
    a, b = read_csv(path_a), read_csv(path_b)
    if window <= 0 or window > min(len(a), len(b)):
        raise SchemaMismatch(f"window {window} exceeds run length ({len(a)}, {len(b)})")
    # align on step index: both windows end at the shorter run's last step
    n = min(len(a), len(b))
    ma, mb = window_means(a[:n], window), window_means(b[:n], window)
    return {"window": window, "a": str(path_a), "b": str(path_b), "mean_a": ma, "mean_b": mb,
            "pct_change": {k: _pct(ma[k], mb[k]) for k in METRICS}}


def summarize(records: Sequence[StepRecord], window: int = WINDOW) -> dict:
    tail = records[-window:]
    n = len(tail)
    return {
        "window": n,
        "overall_tps": sum(r.metrics.overall_tps for r in tail) / n,
        "success_tps": sum(r.metrics.success_tps for r in tail) / n,
        "avg_latency": sum(r.metrics.avg_latency for r in tail) / n,
        "jain": sum(r.metrics.jain for r in tail) / n,
        "reward": sum(r.reward for r in tail) / n,
    }


# plots ----------------------------------------------------------------------------------

def write_plots(records: Sequence[StepRecord], outdir: Path) -> list[str]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    steps = [r.step for r in records]
    series = {
        "throughput": [r.metrics.overall_tps for r in records],
        "success_throughput": [r.metrics.success_tps for r in records],
        "latency": [r.metrics.avg_latency for r in records],
        "jain": [r.metrics.jain for r in records],
    }
    written = []
    for name, ys in series.items():
        fig, ax = plt.subplots(figsize=(7, 3))
        ax.plot(steps, ys, lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel(name.replace("_", " "))
        fig.tight_layout()
        path = outdir / f"{name}.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path.name)
    return written


# run ---------------------------------------------------------------------------------------

def out_root(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output or os.environ.get(OUT_ENV) or "runs")


def _run_one(cfg: ExperimentConfig, seed: int, baseline_csv: Optional[str]) -> dict:
    outdir = out_root(cfg) / f"{cfg.experiment}-{cfg.mode}" / f"seed-{seed}"
    outdir.mkdir(parents=True, exist_ok=True)
    if cfg.event_trace:
        with open(outdir / "events.jsonl", "w") as fh:
            records = run_seed(cfg, seed, TraceWriter(fh))
    else:
        records = run_seed(cfg, seed)
    csv_path = outdir / "steps.csv"
    csv_path.write_text(render_csv(records))
    window = min(WINDOW, len(records))
    summary = {"experiment": cfg.experiment, "mode": cfg.mode, "seed": seed, "final": summarize(records, window)}
    if baseline_csv:
        summary["vs_baseline"] = compare(csv_path, baseline_csv, window)
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = {"config_sha256": cfg.digest(), "seed": seed, "config": json.loads(cfg.canonical())}
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if cfg.plots:
        write_plots(records, outdir)
    return {"seed": seed, "dir": str(outdir), **summary["final"]}


def run(cfg: ExperimentConfig, *, jobs: int = 1, baseline_csv: Optional[str] = None) -> list[dict]:
    cfg.validate()
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, [cfg] * len(cfg.seeds), cfg.seeds, [baseline_csv] * len(cfg.seeds)))
    return [_run_one(cfg, s, baseline_csv) for s in cfg.seeds]


# replay-trace -----------------------------------------------------------------------------

def replay_trace(lines) -> dict:
    """Re-validate every BlockValidated record of an event trace with the serial oracle.

    Returns counts of checked blocks and transactions and a list of
    mismatches (block, tx, recorded status, oracle status).
    """
    versions: dict = {}
    policy = 2
    blocks = txs = 0
    mismatches = []
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("kind") == "Genesis":
            versions = {k: Version(*v) for k, v in rec["keys"].items()}
            policy = rec.get("policy", 2)
            continue
        if rec.get("kind") != "BlockValidated" or "txs" not in rec:
            continue
        seq = rec["block"]
        entries = [argparse.Namespace(read_set=t["reads"], write_set=t["writes"],
                                      endorsement_count=t["endorsements"]) for t in rec["txs"]]
        expected = serial_oracle(versions, entries, policy, seq)
        for idx, (t, st) in enumerate(zip(rec["txs"], expected)):
            if t["status"] != st.value:
                mismatches.append({"block": seq, "tx": t["tx"], "recorded": t["status"], "oracle": st.value})
            if TxStatus(t["status"]) is TxStatus.COMMITTED:
                for key in t["writes"]:
                    versions[key] = Version(seq, idx)
        blocks += 1
        txs += len(entries)
    return {"blocks": blocks, "txs": txs, "mismatches": mismatches}


# CLI ----------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autofabric", description="Run and compare simulated tuning experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a baseline or learning experiment")
    r.add_argument("--config", help="INI file with [experiment], [workload], [cost], [agent], [sim] sections")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--steps", type=int)
    r.add_argument("--step-duration", type=float)
    r.add_argument("--seed", action="append", type=int, help="repeat for several seeds")
    r.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    r.add_argument("--baseline-knobs", help="M_C,P_B,B_T,S_I held in param-tuning baseline mode")
    r.add_argument("--baseline-variant", type=int, choices=(0, 1))
    r.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    r.add_argument("--compare-to", help="baseline steps.csv; adds final-window deltas to the summary")
    r.add_argument("--plots", action="store_true", help="write SVG plots (needs matplotlib)")
    r.add_argument("--event-trace", action="store_true", help="dump the simulator event trace as JSON lines")
    r.add_argument("--jobs", type=int, default=1, help="worker processes across seeds")

    c = sub.add_parser("compare", help="compare the final windows of two runs")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--window", type=int, default=WINDOW)

    t = sub.add_parser("replay-trace", help="re-validate an event trace against the serial oracle")
    t.add_argument("trace")
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config_text(Path(args.config).read_text(), cfg)
    for item in args.set:
        target, sep, raw = item.partition("=")
        section, dot, key = target.partition(".")
        if not sep or not dot:
            raise InvalidConfig(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        apply_setting(cfg, section, key, raw)
    for name in ("experiment", "mode", "steps", "step_duration", "baseline_variant"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    if args.seed:
        cfg.seeds = tuple(args.seed)
    if args.out:
        cfg.output = args.out
    if args.baseline_knobs:
        apply_setting(cfg, "experiment", "baseline_knobs", args.baseline_knobs)
    cfg.plots = cfg.plots or args.plots
    cfg.event_trace = cfg.event_trace or args.event_trace
    return cfg.validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = config_from_args(args)
            for row in run(cfg, jobs=args.jobs, baseline_csv=args.compare_to):
                print(f"seed {row['seed']}: T={row['overall_tps']:.2f} S_UT={row['success_tps']:.2f} "
                      f"latency={row['avg_latency']:.3f}s J={row['jain']:.3f} -> {row['dir']}")
        elif args.command == "compare":
            print(json.dumps(compare(args.run_a, args.run_b, args.window), indent=2, sort_keys=True))
        else:
            with open(args.trace) as fh:
                report = replay_trace(fh)
            print(f"{report['blocks']} blocks, {report['txs']} txs, {len(report['mismatches'])} mismatches")
            for m in report["mismatches"][:20]:
                print(f"  block {m['block']} {m['tx']}: recorded {m['recorded']}, oracle {m['oracle']}")
            return 1 if report["mismatches"] else 0
    except (InvalidConfig, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
