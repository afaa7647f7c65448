"""Trigger optimization: insertion scoring, target co-evolution, interval
selection, and suffix search under white- and black-box access.

Positions inside a response are 0-based.  The positional score of a target
at position j combines a leading-match count, the mean continuation
probability of the matched tokens plus the next unmatched target token,
and (when available) the attention mass the matched generations place on
the adversarial suffix:

    value = (alpha * match + beta * continuation + lambda * attention) / (|t| + 1)

Interval selection maximizes total score over pairwise non-overlapping
intervals with at most ``ell`` picks, via dynamic programming.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import AccessMode, TargetIntent, TargetOrigin, TokenSeq
from .metrics import CostLedger
from .seeding import rng_for
from .simenv import (
    INTENT_VERBS,
    AgentResponse,
    Context,
    Environment,
    MutatorInterface,
    MutatorKind,
    Surface,
    SyntheticAgent,
    continuation_logprob,
    injection_context,
    reference_vocabulary,
    respond,
)

DEFAULT_PROB_FLOOR = 1e-6


# --------------------------------------------------------------------------
# Configuration and result types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Stage1Config:
    """Trigger-optimizer settings; defaults follow the reference setup."""

    max_iters: int = 500
    target_pool: int = 5
    intervals: int = 3
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    optimizer: str = "coordinate"            # or "evolutionary"
    strategy: str = "best"                   # or "random" / "fixed-prefix"
    early_stop: bool = True
    coevolve: bool = True
    suffix_len: int = 8
    candidates: int = 64
    population: int = 16
    prob_floor: float = DEFAULT_PROB_FLOOR
    no_improve_patience: int = 20
    improve_eps: float = 1e-4

    def __post_init__(self):
        for name in ("max_iters", "target_pool", "intervals", "suffix_len",
                     "candidates", "population"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("weights must be non-negative")
        if self.optimizer not in ("coordinate", "evolutionary"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.strategy not in ("best", "random", "fixed-prefix"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class InsertionScore:
    """Positional score of one target at one response position."""

    position: int
    match: int
    continuation: float
    attention: float | None
    alpha: float
    beta: float
    lam: float
    value: float


@dataclass(frozen=True)
class Interval:
    """Inclusive response-index interval carrying its anchor score."""

    start: int
    end: int
    score: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("interval start must not exceed end")

    def overlaps(self, other: "Interval") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class TriggerCandidate:
    """An adversarial suffix with its insertion context."""

    suffix: TokenSeq
    surface: Surface
    target: TargetIntent
    intervals: tuple[Interval, ...]
    objective: float

    def __post_init__(self):
        ivs = self.intervals
        for i, a in enumerate(ivs):
            for b in ivs[i + 1:]:
                if a.overlaps(b):
                    raise ValueError("intervals must be pairwise non-overlapping")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    success: bool


@dataclass(frozen=True)
class Stage1Result:
    candidate: TriggerCandidate
    log: tuple[IterationRecord, ...]
    success: bool
    iterations_run: int
    iters_metric: int      # success iteration, or the full budget on failure


# --------------------------------------------------------------------------
# Scoring primitives
# --------------------------------------------------------------------------


def _prob(dists, position: int, token: int, floor: float) -> float:
    if hasattr(dists, "prob"):
        return dists.prob(position, token, floor)
    return dists[position].prob_of(token, floor)


def match_len(response: Sequence[int], position: int, target: Sequence[int]) -> int:
    """Length of the longest target prefix matching the response at position."""
    if not (0 <= position < len(response)):
        raise ValueError(f"position {position} outside response of length {len(response)}")
    m = 0
    while (
        m < len(target)
        and position + m < len(response)
        and response[position + m] == target[m]
    ):
        m += 1
    return m


def continuation_prob(
    dists,
    position: int,
    target: Sequence[int],
    match: int,
    floor: float = 0.0,
) -> float:
    """Mean probability of the matched target tokens plus the next unmatched
    target token (a mean over ``match + 1`` terms; over ``match`` terms when
    the whole target matched)."""
    n = len(dists)
    terms: list[float] = []
    for i in range(match):
        j = position + i
        if j >= n:
            raise ValueError(f"missing distribution for required position {j}")
        terms.append(_prob(dists, j, target[i], floor))
    if match < len(target):
        j = position + match
        if j >= n:
            raise ValueError(f"missing distribution for required position {j}")
        terms.append(_prob(dists, j, target[match], floor))
    return sum(terms) / len(terms)


def attention_mass(
    attention: np.ndarray,
    position: int,
    match: int,
    suffix_span: tuple[int, int],
) -> float:
    """Mean, over the matched generation positions, of the attention weight
    summed across the suffix's context positions; 0 when nothing matched."""
    if match == 0:
        return 0.0
    lo, hi = suffix_span
    rows = attention[position : position + match, lo:hi]
    return float(rows.sum(axis=1).mean())


def insertion_score(
    match: int,
    continuation: float,
    attention: float | None,
    weights: tuple[float, float, float],
    target_len: int,
) -> float:
    """Weighted positional score, normalized by the target length plus one.

    A missing attention term contributes zero.
    """
    alpha, beta, lam = weights
    if alpha < 0 or beta < 0 or lam < 0:
        raise ValueError("weights must be non-negative")
    a = attention if attention is not None else 0.0
    return (alpha * match + beta * continuation + lam * a) / (target_len + 1)


def score_positions(
    tokens: Sequence[int],
    dists,
    target: TargetIntent,
    weights: tuple[float, float, float],
    attention: np.ndarray | None = None,
    suffix_span: tuple[int, int] | None = None,
    floor: float = 0.0,
) -> list[InsertionScore]:
    """Insertion scores of one target across all fully-coverable positions."""
    alpha, beta, lam = weights
    out: list[InsertionScore] = []
    n = len(dists)
    for j in range(min(len(tokens), n)):
        m = match_len(tokens, j, target.tokens)
        needed = j + m if m < len(target.tokens) else j + m - 1
        if needed >= n:
            continue
        p = continuation_prob(dists, j, target.tokens, m, floor)
        a = None
        if attention is not None and suffix_span is not None and lam > 0:
            a = attention_mass(attention, j, m, suffix_span)
        value = insertion_score(m, p, a, weights, len(target.tokens))
        out.append(InsertionScore(j, m, p, a, alpha, beta, lam, value))
    return out


# --------------------------------------------------------------------------
# Target co-evolution and selection
# --------------------------------------------------------------------------


def coevolve_targets(
    base: TargetIntent,
    dists,
    pool_size: int,
    mutator: MutatorInterface | None = None,
) -> tuple[TargetIntent, ...]:
    """The base intent plus up to pool_size-1 variants.

    Rule-based variants substitute the leading intent token with the verbs
    the response distributions favor; every variant keeps the base tail, so
    all end with the target url token.  An external mutator, when
    configured, proposes paraphrase texts instead.
    """
    if pool_size < 1:
        raise ValueError("pool size must be at least 1")
    pool: list[TargetIntent] = [base]
    if pool_size == 1:
        return tuple(pool)

    vocab = reference_vocabulary()
    seen = {base.tokens}

    if mutator is not None and mutator.kind == MutatorKind.EXTERNAL:
        try:
            texts = mutator.propose(
                [vocab.decode(base.tokens)], "", pool_size - 1
            )
        except Exception:
            texts = []
        for text in texts:
            toks = vocab.encode(text)
            if toks and toks[-1] == base.tokens[-1] and toks not in seen:
                pool.append(TargetIntent(toks, TargetOrigin.COEVOLVED, text))
                seen.add(toks)
            if len(pool) >= pool_size:
                return tuple(pool)

    verb_ids = [vocab.id_of(v) for v in INTENT_VERBS]
    n = len(dists)
    ranked = sorted(
        verb_ids,
        key=lambda v: -max(_prob(dists, j, v, 0.0) for j in range(n)),
    )
    for verb in ranked:
        toks = (verb,) + base.tokens[1:]
        if toks in seen:
            continue
        pool.append(TargetIntent(toks, TargetOrigin.COEVOLVED, vocab.decode(toks)))
        seen.add(toks)
        if len(pool) >= pool_size:
            break
    return tuple(pool)


def select_best_target(
    targets: Sequence[TargetIntent],
    tokens: Sequence[int],
    dists,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
    attention: np.ndarray | None = None,
    suffix_span: tuple[int, int] | None = None,
    floor: float = 0.0,
) -> tuple[TargetIntent, list[InsertionScore]]:
    """Argmax over targets of the best positional score.

    Ties break toward the earliest best position, then pool order.
    """
    if not targets:
        raise ValueError("target pool must be non-empty")
    best: tuple[float, int, int] | None = None   # (-value, best_pos, pool_idx)
    best_scores: list[InsertionScore] = []
    best_target = targets[0]
    for idx, target in enumerate(targets):
        scores = score_positions(
            tokens, dists, target, weights, attention, suffix_span, floor
        )
        if not scores:
            continue
        top = max(s.value for s in scores)
        pos = min(s.position for s in scores if s.value == top)
        key = (-top, pos, idx)
        if best is None or key < best:
            best = key
            best_scores = scores
            best_target = target
    return best_target, best_scores


# --------------------------------------------------------------------------
# Weighted interval scheduling with a cardinality cap
# --------------------------------------------------------------------------


def build_intervals(
    scores: Sequence[InsertionScore],
    target_len: int,
    min_continuation: float = 0.01,
) -> list[Interval]:
    """Candidate intervals from scored positions: any position with a match
    or with continuation probability above the threshold anchors an interval
    spanning its matched region."""
    out = []
    for s in scores:
        if s.match > 0 or s.continuation > min_continuation:
            out.append(Interval(s.position, s.position + max(s.match, 1) - 1, s.value))
    return out


def select_intervals(intervals: Sequence[Interval], ell: int) -> tuple[Interval, ...]:
    """Maximum-total-score subset of pairwise non-overlapping intervals with
    at most ``ell`` picks (dynamic programming over end-sorted intervals).

    Ties break toward the selection whose start list is lexicographically
    earliest.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    ivs = sorted(intervals, key=lambda iv: (iv.end, iv.start))
    n = len(ivs)
    if n == 0:
        return ()

    # pred[i]: number of intervals (prefix length) compatible with ivs[i].
    pred = [0] * n
    for i in range(n):
        p = 0
        for q in range(i):
            if ivs[q].end < ivs[i].start:
                p = q + 1
        pred[i] = p

    def better(a: tuple[float, tuple[int, ...]], b: tuple[float, tuple[int, ...]]) -> bool:
        if a[0] != b[0]:
            return a[0] > b[0]
        return a[1] < b[1]

    # best[i][k]: (total, sorted starts, picks) over the first i intervals
    # using at most k picks.
    empty = (0.0, (), ())
    best: list[list[tuple[float, tuple[int, ...], tuple[int, ...]]]] = [
        [empty] * (ell + 1) for _ in range(n + 1)
    ]
    for i in range(1, n + 1):
        iv = ivs[i - 1]
        for k in range(ell + 1):
            skip = best[i - 1][k]
            choice = skip
            if k >= 1:
                base_total, base_starts, base_idx = best[pred[i - 1]][k - 1]
                take = (
                    base_total + iv.score,
                    tuple(sorted(base_starts + (iv.start,))),
                    base_idx + (i - 1,),
                )
                if better((take[0], take[1]), (choice[0], choice[1])):
                    choice = take
            best[i][k] = choice
    total, _, chosen = best[n][ell]
    return tuple(sorted((ivs[i] for i in chosen), key=lambda iv: iv.start))


# --------------------------------------------------------------------------
# Suffix objective
# --------------------------------------------------------------------------


def objective_from_view(
    dists,
    intervals: Sequence[Interval],
    target: TargetIntent,
    floor: float = DEFAULT_PROB_FLOOR,
) -> float:
    """Sum over selected positions of the log-probability of generating the
    target as a continuation there, from an existing distribution view."""
    if not intervals:
        raise ValueError("interval set must be non-empty")
    n = len(dists)
    total = 0.0
    for iv in intervals:
        for i, tok in enumerate(target.tokens):
            j = iv.start + i
            p = _prob(dists, j, tok, floor) if j < n else floor
            total += math.log(max(p, floor))
    return total


def suffix_objective(
    suffix: TokenSeq,
    target: TargetIntent,
    intervals: Sequence[Interval],
    agent: SyntheticAgent,
    ctx: Context,
    floor: float = DEFAULT_PROB_FLOOR,
) -> float:
    """The trigger objective for one suffix, evaluated by querying the agent."""
    if not intervals:
        raise ValueError("interval set must be non-empty")
    c = ctx.with_suffix(suffix)
    return continuation_logprob(
        agent, c, [iv.start for iv in intervals], target.tokens, floor
    )


# --------------------------------------------------------------------------
# Suffix search
# --------------------------------------------------------------------------


def default_base_target(env: Environment) -> TargetIntent:
    vocab = reference_vocabulary()
    text = f"access {env.attacker_url}"
    return TargetIntent(vocab.encode(text), TargetOrigin.BASE, text)


def _pick_intervals(
    cfg: Stage1Config,
    scores: list[InsertionScore],
    target: TargetIntent,
    response_len: int,
    rng: np.random.Generator,
) -> tuple[Interval, ...]:
    t_len = len(target.tokens)
    if cfg.strategy == "fixed-prefix":
        return (Interval(0, t_len - 1, scores[0].value if scores else 0.0),)
    if cfg.strategy == "random":
        j = int(rng.integers(max(response_len - t_len, 1)))
        sc = next((s.value for s in scores if s.position == j), 0.0)
        return (Interval(j, j + t_len - 1, sc),)
    intervals = build_intervals(scores, t_len)
    chosen = select_intervals(intervals, cfg.intervals)
    if not chosen and scores:
        top = max(scores, key=lambda s: (s.value, -s.position))
        chosen = (Interval(top.position, top.position + max(top.match, 1) - 1, top.value),)
    return chosen or (Interval(0, t_len - 1, 0.0),)


def _record_query(ledger: CostLedger | None, ctx: Context, out_tokens: int):
    if ledger is not None:
        ledger.record(len(ctx.history_tokens) + len(ctx.suffix), out_tokens,
                      category="query")


def optimize_suffix(
    cfg: Stage1Config,
    agent: SyntheticAgent,
    env: Environment,
    surface: Surface,
    base_target: TargetIntent | None = None,
    run_seed: int = 0,
    mutator: MutatorInterface | None = None,
    ledger: CostLedger | None = None,
) -> Stage1Result:
    """Iterate respond -> co-evolve -> target/interval selection -> suffix
    update until the agent invokes the target tool, the objective stalls,
    or the budget runs out.

    The coordinate backend greedily substitutes one suffix token per
    iteration by exact objective evaluation over a seeded candidate set;
    the evolutionary backend maintains a seeded population (black-box).
    """
    vocab = reference_vocabulary()
    base = base_target or default_base_target(env)
    rng = rng_for("stage1", agent.seed, env.task_key, run_seed,
                  cfg.strategy, cfg.optimizer)
    lam = 0.0 if agent.access.mode == AccessMode.BLACK else cfg.lam
    weights = (cfg.alpha, cfg.beta, lam)

    suffix = tuple(int(t) for t in rng.integers(1, len(vocab), cfg.suffix_len))
    population = [
        tuple(int(t) for t in rng.integers(1, len(vocab), cfg.suffix_len))
        for _ in range(cfg.population - 1)
    ]
    ctx0 = injection_context(env, surface, suffix, run_seed)

    log: list[IterationRecord] = []
    target = base
    intervals: tuple[Interval, ...] = ()
    objective = -math.inf
    prev_obj = -math.inf
    stall = 0
    success = False
    iterations = 0

    for it in range(1, cfg.max_iters + 1):
        iterations = it
        ctx = ctx0.with_suffix(suffix).with_salt(it)
        resp = respond(agent, ctx)
        _record_query(ledger, ctx, len(resp.tokens))
        if resp.trigger_fired:
            success = True
            log.append(IterationRecord(
                it, objective if math.isfinite(objective) else 0.0, True
            ))
            break

        pool_size = cfg.target_pool if cfg.coevolve else 1
        targets = coevolve_targets(base, resp.distributions, pool_size, mutator)
        target, scores = select_best_target(
            targets, resp.tokens, resp.distributions, weights,
            resp.attention, resp.suffix_span, cfg.prob_floor,
        )
        intervals = _pick_intervals(cfg, scores, target, len(resp.tokens), rng)
        starts = [iv.start for iv in intervals]

        def evaluate(s: TokenSeq) -> float:
            c = ctx0.with_suffix(s).with_salt(it)
            _record_query(ledger, c, len(starts) * len(target.tokens))
            return continuation_logprob(agent, c, starts, target.tokens,
                                        cfg.prob_floor)

        if cfg.optimizer == "coordinate":
            current = evaluate(suffix)
            pos = (it - 1) % cfg.suffix_len
            cands = rng.integers(1, len(vocab), cfg.candidates)
            best_cand, best_val = suffix, current
            for c_tok in cands:
                cand = suffix[:pos] + (int(c_tok),) + suffix[pos + 1:]
                val = evaluate(cand)
                if val > best_val:
                    best_cand, best_val = cand, val
            suffix = best_cand
            objective = best_val
        else:
            pool = [suffix] + population
            offspring = []
            for parent in pool:
                child = list(parent)
                for _ in range(1 + int(rng.integers(2))):
                    child[int(rng.integers(cfg.suffix_len))] = int(
                        rng.integers(1, len(vocab))
                    )
                offspring.append(tuple(child))
            scored = sorted(
                ((evaluate(s), s) for s in pool + offspring),
                key=lambda p: -p[0],
            )
            keep = scored[: cfg.population]
            objective, suffix = keep[0]
            population = [s for _, s in keep[1:]]

        log.append(IterationRecord(it, objective, False))

        # Convergence guard: the objective changed by less than eps since
        # the last iteration, `patience` times in a row.
        if cfg.early_stop:
            if math.isfinite(prev_obj) and abs(objective - prev_obj) < cfg.improve_eps:
                stall += 1
                if stall >= cfg.no_improve_patience:
                    break
            else:
                stall = 0
            prev_obj = objective

    if not intervals:
        intervals = (Interval(0, len(target.tokens) - 1, 0.0),)
    candidate = TriggerCandidate(
        suffix=suffix,
        surface=surface,
        target=target,
        intervals=intervals,
        objective=objective if math.isfinite(objective) else 0.0,
    )
    return Stage1Result(
        candidate=candidate,
        log=tuple(log),
        success=success,
        iterations_run=iterations,
        iters_metric=iterations if success else cfg.max_iters,
    )


def insertion_baselines(
    strategy: str,
    cfg: Stage1Config,
    agent: SyntheticAgent,
    env: Environment,
    surface: Surface,
    base_target: TargetIntent | None = None,
    run_seed: int = 0,
    ledger: CostLedger | None = None,
) -> Stage1Result:
    """Baseline insertion strategies: random draws one valid position per
    iteration from the run seed; fixed-prefix always uses the first
    position.  Otherwise identical to optimize_suffix."""
    if strategy not in ("random", "fixed-prefix"):
        raise ValueError(f"unknown baseline strategy {strategy!r}")
    base_cfg = Stage1Config(
        **{**cfg.__dict__, "strategy": strategy}
    )
    return optimize_suffix(base_cfg, agent, env, surface, base_target,
                           run_seed, ledger=ledger)
