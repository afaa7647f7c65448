"""Shared domain types: tokens, vocabularies, turns, trajectories, access modes.

All types are immutable values after construction and safe to share across
threads; the operations on them are pure functions.  Token sequences are
plain tuples of vocabulary ids.  Turn indices are 1-based throughout;
token positions inside a response are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

UNK_ID = 0
UNK_TEXT = "<unk>"

TokenSeq = tuple[int, ...]


@dataclass(frozen=True)
class Token:
    """A vocabulary entry: numeric id plus its surface form."""

    id: int
    text: str

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("token id must be non-negative")
        if not self.text:
            raise ValueError("token text must be non-empty")


class Vocabulary:
    """Fixed word table mapping whitespace-delimited words to ids.

    Id 0 is reserved for the unknown-word token.  Word order is part of the
    vocabulary identity: the same word list always produces the same ids.
    """

    def __init__(self, words: Sequence[str]):
        if not words:
            raise ValueError("vocabulary requires at least one word")
        uniq: dict[str, int] = {UNK_TEXT: UNK_ID}
        for w in words:
            if not w or w == UNK_TEXT:
                continue
            if w not in uniq:
                uniq[w] = len(uniq)
        self._word_to_id = uniq
        self._id_to_word = {i: w for w, i in uniq.items()}

    def __len__(self) -> int:
        return len(self._word_to_id)

    def __contains__(self, word: str) -> bool:
        return word in self._word_to_id

    def id_of(self, word: str) -> int:
        return self._word_to_id.get(word, UNK_ID)

    def word_of(self, token_id: int) -> str:
        try:
            return self._id_to_word[token_id]
        except KeyError:
            raise ValueError(f"unknown token id {token_id}") from None

    def tokens(self) -> tuple[Token, ...]:
        return tuple(Token(i, w) for i, w in sorted(self._id_to_word.items()))

    def encode(self, text: str) -> TokenSeq:
        return tokenize(text, self)

    def decode(self, ids: Iterable[int]) -> str:
        return detokenize(ids, self)


def tokenize(text: str, vocab: Vocabulary) -> TokenSeq:
    """Whitespace tokenization against a fixed vocabulary.

    Unknown words map to the reserved UNK id.  Pure: identical (text,
    vocabulary) inputs yield identical sequences everywhere.
    """
    if len(vocab) == 0:
        raise ValueError("empty vocabulary")
    return tuple(vocab.id_of(w) for w in text.split())


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.word_of(i) for i in ids)


class DistributionMode(str, Enum):
    FULL = "full"
    TOP_K = "top-k"


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    """Next-token probability view for one response position.

    In full mode the entries cover the whole vocabulary and sum to one.
    In top-k mode the entries are the k most probable tokens in descending
    order; probabilities of hidden tokens are unknown to the caller.
    """

    position: int
    token_ids: np.ndarray
    probs: np.ndarray
    mode: DistributionMode = DistributionMode.FULL
    k: int | None = None

    def __post_init__(self):
        if len(self.token_ids) != len(self.probs):
            raise ValueError("token_ids and probs must align")
        if np.any(self.probs < -1e-12) or np.any(self.probs > 1 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.mode == DistributionMode.FULL:
            total = float(self.probs.sum())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"full distribution sums to {total}, not 1")
        else:
            if self.k is None or self.k <= 0:
                raise ValueError("top-k mode requires positive k")
            if len(self.probs) > self.k:
                raise ValueError("top-k view holds more than k entries")
            if np.any(np.diff(self.probs) > 1e-12):
                raise ValueError("top-k entries must be sorted descending")

    @property
    def entries(self) -> tuple[tuple[int, float], ...]:
        return tuple(
            (int(t), float(p)) for t, p in zip(self.token_ids, self.probs)
        )

    def prob_of(self, token_id: int, floor: float = 0.0) -> float:
        """Probability of ``token_id``, or ``floor`` when outside the view."""
        hits = np.nonzero(self.token_ids == token_id)[0]
        if len(hits) == 0:
            return floor
        return float(self.probs[hits[0]])


@dataclass(frozen=True)
class ToolCall:
    """A structured agent action: tool name plus raw argument string."""

    tool: str
    argument: str = ""


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    TERMINATED_BY_DEFENSE = "terminated-by-defense"


@dataclass(frozen=True)
class Turn:
    """One Thought/Action/Observation cycle.

    ``reasoning_tokens`` counts thought plus action tokens only; observation
    tokens are environment-produced and never counted.
    """

    index: int
    thought: TokenSeq
    action: ToolCall
    action_tokens: TokenSeq
    observation: TokenSeq
    reasoning_tokens: int
    sim_latency: float = 0.0

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("turn index is 1-based")
        expected = len(self.thought) + len(self.action_tokens)
        if self.reasoning_tokens != expected:
            raise ValueError(
                f"reasoning_tokens {self.reasoning_tokens} != thought+action {expected}"
            )
        if self.reasoning_tokens < 0 or self.sim_latency < 0:
            raise ValueError("counts and latency must be non-negative")


def make_turn(
    index: int,
    thought: TokenSeq,
    action: ToolCall,
    action_tokens: TokenSeq,
    observation: TokenSeq = (),
    sim_latency: float = 0.0,
) -> Turn:
    return Turn(
        index=index,
        thought=tuple(thought),
        action=action,
        action_tokens=tuple(action_tokens),
        observation=tuple(observation),
        reasoning_tokens=len(thought) + len(action_tokens),
        sim_latency=sim_latency,
    )


@dataclass(frozen=True)
class Trajectory:
    """Multi-turn execution record of one episode."""

    turns: tuple[Turn, ...]
    outcome: Outcome
    seed: int
    encounter_turn: int | None = None
    defense_events: tuple[str, ...] = ()

    def __post_init__(self):
        for i, turn in enumerate(self.turns, start=1):
            if turn.index != i:
                raise ValueError("turn indices must run 1..T without gaps")
        t = len(self.turns)
        if self.encounter_turn is not None and not (1 <= self.encounter_turn <= t):
            raise ValueError("encounter turn outside [1, T]")
        if self.outcome == Outcome.TERMINATED_BY_DEFENSE and not self.defense_events:
            raise ValueError("terminated-by-defense requires a defense event")

    @property
    def final_turn(self) -> int:
        return len(self.turns)

    @property
    def total_reasoning_tokens(self) -> int:
        return sum(t.reasoning_tokens for t in self.turns)

    @property
    def total_latency(self) -> float:
        return sum(t.sim_latency for t in self.turns)

    def per_turn_reasoning(self) -> tuple[int, ...]:
        return tuple(t.reasoning_tokens for t in self.turns)


def reasoning_tokens(traj: Trajectory, from_turn: int, to_turn: int) -> int:
    """Sum of per-turn reasoning tokens over the inclusive 1-based range."""
    if not (1 <= from_turn <= to_turn <= traj.final_turn):
        raise ValueError(
            f"invalid turn range ({from_turn}, {to_turn}) for T={traj.final_turn}"
        )
    return sum(t.reasoning_tokens for t in traj.turns[from_turn - 1 : to_turn])


def append_turn(traj: Trajectory, turn: Turn) -> Trajectory:
    """Return a new trajectory with ``turn`` appended; prior turns unchanged."""
    if turn.index != traj.final_turn + 1:
        raise ValueError(
            f"turn index {turn.index} is not contiguous with T={traj.final_turn}"
        )
    return Trajectory(
        turns=traj.turns + (turn,),
        outcome=traj.outcome,
        seed=traj.seed,
        encounter_turn=traj.encounter_turn,
        defense_events=traj.defense_events,
    )


class AccessMode(str, Enum):
    WHITE = "white"
    BLACK = "black"


@dataclass(frozen=True)
class AgentAccess:
    """What the attacker can observe of the agent.

    White-box access exposes full distributions and an attention analog;
    black-box access exposes top-k distributions only.
    """

    mode: AccessMode
    k: int | None = None
    attention_available: bool = False

    def __post_init__(self):
        if self.mode == AccessMode.WHITE:
            if not self.attention_available:
                raise ValueError("white-box access implies attention availability")
        else:
            if self.attention_available:
                raise ValueError("black-box access cannot expose attention")
            if self.k is None or self.k <= 0:
                raise ValueError("black-box access requires positive top-k size")


def white_box_access() -> AgentAccess:
    return AgentAccess(mode=AccessMode.WHITE, k=None, attention_available=True)


def black_box_access(k: int = 10) -> AgentAccess:
    return AgentAccess(mode=AccessMode.BLACK, k=k, attention_available=False)


class TargetOrigin(str, Enum):
    BASE = "base"
    COEVOLVED = "coevolved"


@dataclass(frozen=True)
class TargetIntent:
    """A tool-access intent expressed as a token sequence."""

    tokens: TokenSeq
    origin: TargetOrigin = TargetOrigin.BASE
    label: str = ""

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("target intent must be non-empty")

    def __len__(self) -> int:
        return len(self.tokens)


def truncate_context(tokens: TokenSeq, cap: int) -> TokenSeq:
    """Head+tail truncation: keep the first 25% and last 75% of the budget."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    if len(tokens) <= cap:
        return tokens
    head = cap // 4
    tail = cap - head
    return tokens[:head] + tokens[-tail:]
