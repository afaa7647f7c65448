"""Red-team engine for reasoning-level denial-of-service against
tool-using agents, with a seeded synthetic harness, defenses, and
cost accounting."""

from .core import (
    AccessMode,
    AgentAccess,
    Outcome,
    Token,
    TokenDistribution,
    TargetIntent,
    ToolCall,
    Trajectory,
    Turn,
    Vocabulary,
    append_turn,
    black_box_access,
    detokenize,
    reasoning_tokens,
    tokenize,
    white_box_access,
)
from .defense import (
    Budgets,
    CalibrationRecord,
    DefenseConfig,
    apply_filter,
    calibrate_monitor,
    defense_sweep,
    enforce_budget,
    monitor_check,
    relevance_score,
)
from .harness import (
    ExperimentConfig,
    config_hash,
    export_convergence,
    load_config,
    metrics_from_records,
    read_records,
    render_report,
    run_defense_sweep,
    run_experiment,
    write_records,
)
from .metrics import (
    ConfidenceInterval,
    CostLedger,
    MetricsReport,
    Pricing,
    api_cost,
    bootstrap_ci,
    compute_asr,
    compute_slowdown,
    e2e,
    rollout_count,
)
from .simenv import (
    Environment,
    Injection,
    MutatorInterface,
    RemoteAgentAdapter,
    Surface,
    SyntheticAgent,
    ToolCallEvent,
    deploy_payload,
    make_agent,
    make_environment,
    reference_vocabulary,
    respond,
    run_episode,
    step,
)
from .stage1 import (
    Interval,
    Stage1Config,
    TriggerCandidate,
    attention_mass,
    coevolve_targets,
    continuation_prob,
    insertion_baselines,
    insertion_score,
    match_len,
    optimize_suffix,
    select_best_target,
    select_intervals,
    suffix_objective,
)
from .stage2 import (
    Payload,
    PayloadScore,
    Stage2Config,
    mutate_population,
    rti_turn,
    run_stage2,
    s_fid,
    s_rti,
    s_stab,
    score_payload,
)

__version__ = "0.1.0"
