"""Experiment configuration, orchestration, persistence, and reporting.

An experiment is a YAML config naming the agent profile, environment kind,
injection surface, trigger-optimizer settings, payload-search settings,
defenses, and episode counts.  Unknown keys are rejected; defaults are
expanded before hashing, so the config hash changes exactly when an
effective value changes.  Run records persist as one JSON object per line
(UTF-8, schema-versioned) and every metric is recomputable from them.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .core import Outcome, black_box_access, white_box_access
from .defense import Budgets, DefenseConfig, SweepRow, calibrate_monitor, defense_sweep
from .metrics import (
    CostLedger,
    EpisodeStats,
    MetricsReport,
    bootstrap_ci,
    make_report,
)
from .simenv import (
    Environment,
    Injection,
    Surface,
    SyntheticAgent,
    make_agent,
    make_environment,
    run_episode,
)
from .stage1 import Stage1Config, Stage1Result, optimize_suffix
from .stage2 import Payload, Stage2Config, Stage2Result, reference_payload, run_stage2

RECORD_SCHEMA = "rdos.run.v1"


class ConfigError(ValueError):
    """Configuration parse or validation failure."""


# --------------------------------------------------------------------------
# Config model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentSpec:
    seed: int = 7
    access: str = "white"
    k: int = 10
    susceptibility: float = 1.0
    base_reasoning: float = 70.0
    benign_accuracy: float = 0.94
    distraction_threshold: float = 11.0


@dataclass(frozen=True)
class DefenseSpec:
    filter_theta: float | None = None
    monitor_c: float | None = None
    budgets: Budgets | None = None
    calibration_episodes: int = 10


@dataclass(frozen=True)
class SweepSpec:
    filter_theta: tuple[float, ...] = ()
    monitor_c: tuple[float, ...] = ()


@dataclass(frozen=True)
class ReportSpec:
    bootstrap: bool = False
    level: float = 0.95
    resamples: int = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = ""
    agent: AgentSpec = field(default_factory=AgentSpec)
    environment: str = "webshop"
    surface: Surface = Surface.ENVIRONMENT
    tasks: int = 50
    seeds: tuple[int, ...] = (0,)
    stage1: Stage1Config | None = field(default_factory=Stage1Config)
    stage2: Stage2Config | None = None
    defenses: DefenseSpec | None = None
    sweep: SweepSpec | None = None
    report: ReportSpec = field(default_factory=ReportSpec)
    output: str | None = None


_AGENT_KEYS = {"seed", "access", "k", "susceptibility", "base_reasoning",
               "benign_accuracy", "distraction_threshold"}
_STAGE1_KEYS = {"optimizer", "strategy", "max_iters", "target_pool", "intervals",
                "alpha", "beta", "lambda", "early_stop", "coevolve",
                "suffix_len", "candidates", "population"}
_STAGE2_KEYS = {"variant", "iterations", "population", "seeds", "elitism",
                "patience", "weights"}
_DEFENSE_KEYS = {"filter_theta", "monitor_c", "budgets", "calibration_episodes"}
_BUDGET_KEYS = {"max_reasoning_tokens", "max_tool_calls", "max_sim_time"}
_SWEEP_KEYS = {"filter_theta", "monitor_c"}
_REPORT_KEYS = {"bootstrap", "level", "resamples"}
_TOP_KEYS = {"name", "agent", "environment", "surface", "tasks", "seeds",
             "stage1", "stage2", "defenses", "sweep", "report", "output"}


def _check_keys(section: dict, allowed: set[str], where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _parse_float(value) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return math.inf
    return float(value)


def config_from_dict(raw: dict, source: str = "<dict>") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: config root must be a mapping")
    _check_keys(raw, _TOP_KEYS, source)

    agent_raw = raw.get("agent", {}) or {}
    _check_keys(agent_raw, _AGENT_KEYS, f"{source}: agent")
    agent = AgentSpec(
        seed=int(agent_raw.get("seed", 7)),
        access=str(agent_raw.get("access", "white")),
        k=int(agent_raw.get("k", 10)),
        susceptibility=float(agent_raw.get("susceptibility", 1.0)),
        base_reasoning=float(agent_raw.get("base_reasoning", 70.0)),
        benign_accuracy=float(agent_raw.get("benign_accuracy", 0.94)),
        distraction_threshold=float(agent_raw.get("distraction_threshold", 11.0)),
    )
    if agent.access not in ("white", "black"):
        raise ConfigError(f"{source}: agent.access must be white or black")

    environment = raw.get("environment", "webshop")
    if environment not in ("webshop", "email", "os"):
        raise ConfigError(f"{source}: unknown environment {environment!r}")
    surface_raw = raw.get("surface", "environment")
    try:
        surface = Surface(surface_raw)
    except ValueError:
        raise ConfigError(f"{source}: unknown surface {surface_raw!r}") from None

    tasks = int(raw.get("tasks", 50))
    if tasks <= 0:
        raise ConfigError(f"{source}: tasks must be positive")
    seeds_raw = raw.get("seeds", [0])
    if not isinstance(seeds_raw, (list, tuple)) or not seeds_raw:
        raise ConfigError(f"{source}: seeds must be a non-empty list")
    seeds = tuple(int(s) for s in seeds_raw)

    stage1 = None
    if "stage1" not in raw or raw["stage1"] is not None:
        s1 = raw.get("stage1", {}) or {}
        _check_keys(s1, _STAGE1_KEYS, f"{source}: stage1")
        try:
            stage1 = Stage1Config(
                max_iters=int(s1.get("max_iters", 500)),
                target_pool=int(s1.get("target_pool", 5)),
                intervals=int(s1.get("intervals", 3)),
                alpha=float(s1.get("alpha", 1.0)),
                beta=float(s1.get("beta", 1.0)),
                lam=float(s1.get("lambda", 1.0)),
                optimizer=str(s1.get(
                    "optimizer",
                    "evolutionary" if agent.access == "black" else "coordinate",
                )),
                strategy=str(s1.get("strategy", "best")),
                early_stop=bool(s1.get("early_stop", True)),
                coevolve=bool(s1.get("coevolve", True)),
                suffix_len=int(s1.get("suffix_len", 8)),
                candidates=int(s1.get("candidates", 64)),
                population=int(s1.get("population", 16)),
            )
        except ValueError as exc:
            raise ConfigError(f"{source}: stage1: {exc}") from None

    stage2 = None
    if raw.get("stage2") is not None:
        s2 = raw["stage2"]
        _check_keys(s2, _STAGE2_KEYS, f"{source}: stage2")
        weights = s2.get("weights", [1.0, 1.0, 1.0])
        if not isinstance(weights, (list, tuple)) or len(weights) != 3:
            raise ConfigError(f"{source}: stage2.weights must be three numbers")
        try:
            stage2 = Stage2Config(
                iterations=int(s2.get("iterations", 25)),
                population=int(s2.get("population", 12)),
                seeds=int(s2.get("seeds", 3)),
                variant=str(s2.get("variant", "persistent")),
                elitism=int(s2.get("elitism", 2)),
                early_stop_patience=int(s2.get("patience", 5)),
                weights=tuple(float(w) for w in weights),
            )
        except ValueError as exc:
            raise ConfigError(f"{source}: stage2: {exc}") from None

    defenses = None
    if raw.get("defenses") is not None:
        d = raw["defenses"]
        _check_keys(d, _DEFENSE_KEYS, f"{source}: defenses")
        budgets = None
        if d.get("budgets") is not None:
            b = d["budgets"]
            _check_keys(b, _BUDGET_KEYS, f"{source}: defenses.budgets")
            budgets = Budgets(
                max_reasoning_tokens=(
                    int(b["max_reasoning_tokens"])
                    if b.get("max_reasoning_tokens") is not None else None
                ),
                max_tool_calls=(
                    int(b["max_tool_calls"])
                    if b.get("max_tool_calls") is not None else None
                ),
                max_sim_time=(
                    float(b["max_sim_time"])
                    if b.get("max_sim_time") is not None else None
                ),
            )
        defenses = DefenseSpec(
            filter_theta=(
                float(d["filter_theta"]) if d.get("filter_theta") is not None else None
            ),
            monitor_c=(
                _parse_float(d["monitor_c"]) if d.get("monitor_c") is not None else None
            ),
            budgets=budgets,
            calibration_episodes=int(d.get("calibration_episodes", 10)),
        )

    sweep = None
    if raw.get("sweep") is not None:
        s = raw["sweep"]
        _check_keys(s, _SWEEP_KEYS, f"{source}: sweep")
        sweep = SweepSpec(
            filter_theta=tuple(_parse_float(v) for v in s.get("filter_theta", [])),
            monitor_c=tuple(_parse_float(v) for v in s.get("monitor_c", [])),
        )

    report_raw = raw.get("report", {}) or {}
    _check_keys(report_raw, _REPORT_KEYS, f"{source}: report")
    report = ReportSpec(
        bootstrap=bool(report_raw.get("bootstrap", False)),
        level=float(report_raw.get("level", 0.95)),
        resamples=int(report_raw.get("resamples", 1000)),
    )

    return ExperimentConfig(
        name=str(raw.get("name", "")),
        agent=agent,
        environment=environment,
        surface=surface,
        tasks=tasks,
        seeds=seeds,
        stage1=stage1,
        stage2=stage2,
        defenses=defenses,
        sweep=sweep,
        report=report,
        output=raw.get("output"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a config file, applying all defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" line {mark.line + 1}" if mark else ""
        raise ConfigError(f"{path}{line}: {exc}") from None
    return config_from_dict(raw or {}, source=str(path))


def effective_dict(cfg: ExperimentConfig) -> dict:
    """The fully-expanded config as canonical primitives."""

    def enc(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        return v

    out: dict[str, Any] = {
        "name": cfg.name,
        "agent": {
            "seed": cfg.agent.seed, "access": cfg.agent.access, "k": cfg.agent.k,
            "susceptibility": cfg.agent.susceptibility,
            "base_reasoning": cfg.agent.base_reasoning,
            "benign_accuracy": cfg.agent.benign_accuracy,
            "distraction_threshold": cfg.agent.distraction_threshold,
        },
        "environment": cfg.environment,
        "surface": cfg.surface.value,
        "tasks": cfg.tasks,
        "seeds": list(cfg.seeds),
        "stage1": None,
        "stage2": None,
        "defenses": None,
        "sweep": None,
        "report": {
            "bootstrap": cfg.report.bootstrap, "level": cfg.report.level,
            "resamples": cfg.report.resamples,
        },
    }
    if cfg.stage1 is not None:
        s1 = cfg.stage1
        out["stage1"] = {
            "optimizer": s1.optimizer, "strategy": s1.strategy,
            "max_iters": s1.max_iters, "target_pool": s1.target_pool,
            "intervals": s1.intervals, "alpha": s1.alpha, "beta": s1.beta,
            "lambda": s1.lam, "early_stop": s1.early_stop,
            "coevolve": s1.coevolve, "suffix_len": s1.suffix_len,
            "candidates": s1.candidates, "population": s1.population,
        }
    if cfg.stage2 is not None:
        s2 = cfg.stage2
        out["stage2"] = {
            "variant": s2.variant, "iterations": s2.iterations,
            "population": s2.population, "seeds": s2.seeds,
            "elitism": s2.elitism, "patience": s2.early_stop_patience,
            "weights": list(s2.weights),
        }
    if cfg.defenses is not None:
        d = cfg.defenses
        out["defenses"] = {
            "filter_theta": d.filter_theta,
            "monitor_c": enc(d.monitor_c),
            "calibration_episodes": d.calibration_episodes,
            "budgets": None if d.budgets is None else {
                "max_reasoning_tokens": d.budgets.max_reasoning_tokens,
                "max_tool_calls": d.budgets.max_tool_calls,
                "max_sim_time": d.budgets.max_sim_time,
            },
        }
    if cfg.sweep is not None:
        out["sweep"] = {
            "filter_theta": [enc(v) for v in cfg.sweep.filter_theta],
            "monitor_c": [enc(v) for v in cfg.sweep.monitor_c],
        }
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(effective_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------


def build_agent(spec: AgentSpec) -> SyntheticAgent:
    access = (
        white_box_access() if spec.access == "white" else black_box_access(spec.k)
    )
    return make_agent(
        seed=spec.seed,
        access=access,
        susceptibility=spec.susceptibility,
        base_reasoning=spec.base_reasoning,
        distraction_threshold=spec.distraction_threshold,
        benign_accuracy=spec.benign_accuracy,
    )


def build_defense(
    cfg: ExperimentConfig, agent: SyntheticAgent
) -> DefenseConfig | None:
    """Resolve the defense spec, calibrating the monitor on benign episodes."""
    spec = cfg.defenses
    if spec is None:
        return None
    monitor = None
    if spec.monitor_c is not None:
        trajs = []
        for i in range(max(spec.calibration_episodes, 1)):
            env = make_environment(cfg.environment, i % max(cfg.tasks, 1))
            trajs.append(run_episode(agent, env, seed=10_000 + i).trajectory)
        record = calibrate_monitor(trajs)
        monitor = (record.mu, record.sigma, spec.monitor_c)
    return DefenseConfig(
        filter_theta=spec.filter_theta,
        monitor=monitor,
        budgets=spec.budgets,
    )


def top_affinity_suffix(agent: SyntheticAgent, length: int = 8) -> tuple[int, ...]:
    """Oracle trigger suffix: the agent's highest-affinity tokens.

    Used as a fixed attack artifact where the sweep or a demo needs a
    strong trigger without paying for the optimizer.
    """
    order = np.argsort(agent.affinity)[::-1]
    picks = [int(t) for t in order if int(t) != 0][:length]
    return tuple(picks)


# --------------------------------------------------------------------------
# Pipeline execution
# --------------------------------------------------------------------------


def _episode_record(result, attacked: bool) -> dict:
    traj = result.trajectory
    flags = result.flags
    return {
        "outcome": traj.outcome.value,
        "tau": traj.encounter_turn,
        "final_turn": traj.final_turn,
        "reasoning_tokens": traj.total_reasoning_tokens,
        "delay": traj.total_latency,
        "per_turn": list(traj.per_turn_reasoning()),
        "defense_events": list(traj.defense_events),
        "trigger_fired": flags.trigger_fired,
        "valid_invocation": flags.valid_invocation,
        "target_seq_appeared": flags.target_sequence_appeared,
        "payload_ingested": flags.payload_ingested,
        "attacked": attacked,
    }


def _stage1_record(result: Stage1Result) -> dict:
    cand = result.candidate
    return {
        "success": result.success,
        "iterations_run": result.iterations_run,
        "iters_metric": result.iters_metric,
        "suffix": list(cand.suffix),
        "surface": cand.surface.value,
        "target": list(cand.target.tokens),
        "target_label": cand.target.label,
        "objective": cand.objective,
        "intervals": [[iv.start, iv.end, iv.score] for iv in cand.intervals],
        "log": [[r.iteration, r.objective, r.success] for r in result.log],
    }


def _stage2_record(result: Stage2Result, env: Environment) -> dict:
    feats = result.best_payload.features(env)
    return {
        "generations": result.generations_run,
        "n_roll": result.n_roll,
        "best_total": result.best_score.total,
        "best_s_rti": result.best_score.s_rti,
        "best_s_fid": result.best_score.s_fid,
        "best_s_stab": result.best_score.s_stab,
        "per_seed_rti": list(result.best_score.per_seed_rti),
        "best_payload": {
            "id": result.best_payload.id,
            "length": feats.length,
            "nesting_depth": feats.nesting_depth,
            "persistent": feats.persistent,
            "consistency": feats.consistency,
            "complexity": feats.complexity,
            "inflation": feats.inflation,
        },
        "log": [
            [g.generation, g.best_total, g.mean_total, g.best_payload]
            for g in result.log
        ],
    }


def run_pipeline_task(
    cfg: ExperimentConfig,
    task: int,
    seed: int,
    defense: DefenseConfig | None = None,
) -> dict:
    """One (task, seed) unit of work; pure function of its arguments."""
    env = make_environment(cfg.environment, task)
    agent = build_agent(cfg.agent)
    ledger = CostLedger()

    benign = run_episode(agent, env, seed=seed)
    record: dict[str, Any] = {
        "schema": RECORD_SCHEMA,
        "run_id": f"task{task:04d}-seed{seed}",
        "config_hash": config_hash(cfg),
        "kind": "pipeline" if cfg.stage1 is not None else "benign",
        "task": task,
        "seed": seed,
        "environment": cfg.environment,
        "strategy": cfg.stage1.strategy if cfg.stage1 else None,
        "benign": _episode_record(benign, attacked=False),
    }

    injection = None
    if cfg.stage1 is not None:
        s1 = optimize_suffix(
            cfg.stage1, agent, env, cfg.surface, run_seed=seed, ledger=ledger
        )
        record["stage1"] = _stage1_record(s1)
        injection = Injection(cfg.surface, s1.candidate.suffix)

        payload = None
        if cfg.stage2 is not None and s1.success:
            s2 = run_stage2(
                cfg.stage2, agent, env, injection, run_seed=seed, ledger=ledger
            )
            record["stage2"] = _stage2_record(s2, env)
            payload = s2.best_payload

        final = run_episode(
            agent, env, injected=injection, payload=payload,
            defenses=defense, seed=seed,
        )
        record["episode"] = _episode_record(final, attacked=True)

    record["ledger"] = ledger.snapshot()
    return record


def _worker(args: tuple) -> dict:
    cfg_dict, task, seed, defense = args
    cfg = config_from_dict(cfg_dict)
    return run_pipeline_task(cfg, task, seed, defense)


@dataclass
class ExperimentResult:
    records: list[dict]
    report: MetricsReport | None
    sweep_rows: list[SweepRow] = field(default_factory=list)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    parallel: int = 1,
) -> ExperimentResult:
    """Execute the configured pipeline over all (task, seed) pairs.

    Fully deterministic given the config and seeds; records merge in
    (task, seed) order regardless of worker scheduling.  Partial results
    persist incrementally when an output directory is given.
    """
    agent = build_agent(cfg.agent)
    defense = build_defense(cfg, agent)
    units = [(task, seed) for task in range(cfg.tasks) for seed in cfg.seeds]

    if parallel > 1:
        args = [(effective_dict(cfg), t, s, defense) for t, s in units]
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            records = list(pool.map(_worker, args))
    else:
        records = [run_pipeline_task(cfg, t, s, defense) for t, s in units]

    records.sort(key=lambda r: (r["task"], r["seed"]))
    report = metrics_from_records(records)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(records, out / "records.jsonl")
        (out / "effective_config.yaml").write_text(
            yaml.safe_dump(effective_dict(cfg), sort_keys=True),
            encoding="utf-8",
        )
        (out / "config_hash.txt").write_text(config_hash(cfg) + "\n", encoding="utf-8")
        if report is not None:
            (out / "metrics.json").write_text(
                json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
                encoding="utf-8",
            )
        (out / "report.txt").write_text(render_report(records, cfg.report),
                                        encoding="utf-8")
    return ExperimentResult(records=records, report=report)


def run_defense_sweep(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
) -> ExperimentResult:
    """Optimize attack artifacts once (without defenses), then evaluate the
    fixed artifacts and benign episodes across the configured grids."""
    if cfg.sweep is None:
        raise ConfigError("sweep-defenses requires a sweep section in the config")
    agent = build_agent(cfg.agent)
    envs = [make_environment(cfg.environment, t) for t in range(cfg.tasks)]

    attacks: dict[int, tuple[Injection, Payload]] = {}
    for env in envs:
        if cfg.stage1 is not None:
            s1 = optimize_suffix(cfg.stage1, agent, env, cfg.surface,
                                 run_seed=cfg.seeds[0])
            if not s1.success:
                continue
            suffix = s1.candidate.suffix
        else:
            suffix = top_affinity_suffix(agent)
        injection = Injection(cfg.surface, suffix)
        if cfg.stage2 is not None:
            s2 = run_stage2(cfg.stage2, agent, env, injection,
                            run_seed=cfg.seeds[0])
            payload = s2.best_payload
        else:
            payload = reference_payload(env)
        attacks[env.task_id] = (injection, payload)

    rows = defense_sweep(
        agent, envs, attacks,
        filter_grid=cfg.sweep.filter_theta,
        monitor_grid=cfg.sweep.monitor_c,
        seeds=cfg.seeds,
        calibration_episodes=(
            cfg.defenses.calibration_episodes if cfg.defenses else 10
        ),
    )
    records = [
        {
            "schema": RECORD_SCHEMA,
            "run_id": f"sweep-{row.defense}-{i:02d}",
            "config_hash": config_hash(cfg),
            "kind": "sweep",
            "task": -1,
            "seed": -1,
            "environment": cfg.environment,
            "sweep": row.to_dict(),
        }
        for i, row in enumerate(rows)
    ]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(records, out / "records.jsonl")
        (out / "report.txt").write_text(render_report(records, cfg.report),
                                        encoding="utf-8")
    return ExperimentResult(records=records, report=None, sweep_rows=rows)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def record_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_records(records: Sequence[dict], path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_line(record) + "\n")


def read_records(path: str | Path) -> list[dict]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def metrics_from_records(records: Sequence[dict]) -> MetricsReport | None:
    """Recompute the headline metrics from persisted run records."""
    attacked, benign, asr_pairs, iters = [], [], [], []
    for r in records:
        if r.get("kind") not in ("pipeline",):
            continue
        ep = r.get("episode")
        be = r.get("benign")
        if ep is None or be is None:
            continue
        attacked.append(EpisodeStats(
            task=r["task"], reasoning_tokens=ep["reasoning_tokens"],
            duration=ep["delay"], encountered=ep["tau"] is not None,
            success=ep["outcome"] == Outcome.SUCCESS.value,
        ))
        benign.append(EpisodeStats(
            task=r["task"], reasoning_tokens=be["reasoning_tokens"],
            duration=be["delay"], encountered=be["tau"] is not None,
            success=be["outcome"] == Outcome.SUCCESS.value,
        ))
        asr_pairs.append((ep["target_seq_appeared"], ep["valid_invocation"]))
        if "stage1" in r:
            iters.append(r["stage1"]["iters_metric"])
    if not attacked:
        return None
    return make_report(asr_pairs, attacked, benign, iters)


# --------------------------------------------------------------------------
# Exports and reporting
# --------------------------------------------------------------------------

CONVERGENCE_HEADER = "method,task,iteration,objective"


def export_convergence(records: Sequence[dict], path: str | Path) -> int:
    """Write per-iteration trigger-optimization objectives as CSV.

    Rows are (method, task id, iteration, objective), sorted; re-exports
    are byte-identical.  Returns the number of data rows written.
    """
    rows: list[tuple[str, int, int, float]] = []
    for r in records:
        s1 = r.get("stage1")
        if not s1:
            continue
        method = r.get("strategy") or "best"
        for iteration, objective, _success in s1["log"]:
            rows.append((method, r["task"], iteration, objective))
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(CONVERGENCE_HEADER + "\n")
        for method, task, iteration, objective in rows:
            fh.write(f"{method},{task},{iteration},{objective!r}\n")
    return len(rows)


def _fmt_pct(x: float) -> str:
    return f"{100.0 * x:5.1f}%"


def render_report(records: Sequence[dict], spec: ReportSpec | None = None) -> str:
    """Human-readable summary tables grouped by record kind."""
    spec = spec or ReportSpec()
    lines: list[str] = []

    pipeline = [r for r in records if r.get("kind") == "pipeline"]
    report = metrics_from_records(pipeline) if pipeline else None
    if report is not None:
        env = pipeline[0].get("environment", "?")
        strategy = pipeline[0].get("strategy") or "best"
        lines.append(f"== pipeline: env={env} strategy={strategy} "
                     f"n={report.n} ==")
        lines.append(
            "ASR_S    ASR_H    Iters    Delay      RTI     Hit      Acc      E2E"
        )
        lines.append(
            f"{_fmt_pct(report.asr_s)} {_fmt_pct(report.asr_h)} "
            f"{report.iters:8.1f} {report.delay:8.1f} {report.rti:7.2f}x "
            f"{_fmt_pct(report.hit)} {_fmt_pct(report.accuracy)} "
            f"{_fmt_pct(report.e2e)}"
        )
        if spec.bootstrap:
            acc = [1.0 if r["episode"]["outcome"] == "success" else 0.0
                   for r in pipeline]
            ci = bootstrap_ci(acc, spec.level, spec.resamples, seed=0)
            lines.append(
                f"accuracy CI ({spec.level:.0%}, {spec.resamples} resamples): "
                f"{_fmt_pct(ci.point)} ({_fmt_pct(ci.low)}, {_fmt_pct(ci.high)})"
            )
        lines.append("")

    benign_only = [r for r in records if r.get("kind") == "benign"]
    if benign_only:
        ok = sum(1 for r in benign_only
                 if r["benign"]["outcome"] == "success") / len(benign_only)
        tokens = float(np.mean([r["benign"]["reasoning_tokens"] for r in benign_only]))
        delay = float(np.mean([r["benign"]["delay"] for r in benign_only]))
        lines.append(f"== benign baseline: n={len(benign_only)} ==")
        lines.append("Acc      Tokens     Delay")
        lines.append(f"{_fmt_pct(ok)} {tokens:9.1f} {delay:9.1f}")
        lines.append("")

    sweeps = [r for r in records if r.get("kind") == "sweep"]
    if sweeps:
        lines.append("== defense sweep ==")
        lines.append("defense   value    E2E     RTI    Delay   BenignAcc  BenignDone")
        for r in sweeps:
            s = r["sweep"]
            value = "inf" if s["value"] is None else f"{s['value']:.2f}"
            lines.append(
                f"{s['defense']:<9} {value:>5} {_fmt_pct(s['e2e'])} "
                f"{s['rti']:6.2f}x {s['delay']:7.1f} {_fmt_pct(s['benign_accuracy'])}"
                f"    {_fmt_pct(s['benign_completion'])}"
            )
        lines.append("")

    if not lines:
        lines.append("(no records)")
    return "\n".join(lines).rstrip() + "\n"
