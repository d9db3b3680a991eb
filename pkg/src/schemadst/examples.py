"""Turn a dialogue turn plus a service schema into per-element QA examples.

Each schema element queries the turn once: intents and slots on the query
side (sequence 1), the turn utterances as context (sequence 2), laid out
``[CLS] <name> : <description-or-value> [SEP] <system> <user> [SEP]``. The
slot-request task sees the user utterance only. Labels come from the gold
frame; slot status is the delta of the cumulative gold state against the
previous turn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import (
    DONTCARE,
    Dialogue,
    DialogueTurn,
    ServiceSchema,
    normalize_schema_names,
    state_update,
)
from .errors import UnbuildableExampleError, ValidationError
from .tokenization import CLS_TOKEN, SEP_TOKEN, SubwordTokenizer


class TaskKind(IntEnum):
    INTENT = 0
    REQUESTED = 1
    STATUS = 2
    CAT_VALUE = 3
    SPAN = 4


N_TASKS = len(TaskKind)

STATUS_NONE = 0
STATUS_DONTCARE = 1
STATUS_ACTIVE = 2

# (0, 0) points the span head at [CLS]: "no value in this turn"
NO_SPAN = (0, 0)


@dataclass
class BuilderConfig:
    max_seq_len: int = 128
    normalize_names: bool = False
    balance: bool = True
    seed: int = 0


@dataclass
class BuildCounters:
    dropped_unbuildable: int = 0
    truncated_spans: int = 0


@dataclass
class SequencePair:
    token_ids: list[int]
    segment_ids: list[int]
    tokens: list[str]
    # one (role, start_char, end_char) per kept sequence-2 token
    seq2_offsets: list[tuple[str, int, int]]
    seq2_lo: int
    seq2_hi: int
    n_truncated: int


@dataclass
class QAExample:
    task: TaskKind
    tokens: list[str]
    token_ids: list[int]
    segment_ids: list[int]
    label: int | tuple[int, int]
    service: str
    element: str
    dialogue_id: str
    turn_index: int
    value: str | None = None
    seq2_offsets: list[tuple[str, int, int]] = field(default_factory=list, repr=False)
    seq2_lo: int = 0
    seq2_hi: int = 0

    @property
    def valid_length(self) -> int:
        return len(self.token_ids)

    @property
    def loss_mask(self) -> tuple[int, ...]:
        mask = [0] * N_TASKS
        mask[self.task] = 1
        return tuple(mask)

    @property
    def is_negative(self) -> bool:
        if self.task == TaskKind.STATUS:
            return self.label == STATUS_NONE
        if self.task == TaskKind.SPAN:
            return tuple(self.label) == NO_SPAN
        return self.label == 0


def build_sequence_pair(
    seq1_parts: Sequence[str],
    seq2_utterances: Sequence[tuple[str, str]],
    tokenizer: SubwordTokenizer,
    max_len: int,
) -> SequencePair:
    """Tokenize and lay out one model input.

    `seq1_parts` are joined with " : "; `seq2_utterances` is a list of
    (role, text) pairs whose non-empty members are joined by a single space.
    Sequence 2 is truncated from the right to fit `max_len`; sequence 1 never
    is - if it alone does not fit, the example is unbuildable.
    """
    if not seq1_parts:
        raise ValueError("seq1_parts must be non-empty")
    seq1_text = " : ".join(seq1_parts)
    seq1_tokens, _ = tokenizer.tokenize_with_offsets(seq1_text)

    budget = max_len - len(seq1_tokens) - 3  # [CLS], two [SEP]
    if budget < 0:
        raise UnbuildableExampleError(
            f"sequence 1 ({len(seq1_tokens)} tokens) exceeds max_len={max_len}"
        )

    seq2_tokens: list[str] = []
    seq2_offsets: list[tuple[str, int, int]] = []
    for role, text in seq2_utterances:
        if not text:
            continue
        toks, offs = tokenizer.tokenize_with_offsets(text)
        seq2_tokens.extend(toks)
        seq2_offsets.extend((role, s, e) for s, e in offs)
    n_truncated = max(0, len(seq2_tokens) - budget)
    seq2_tokens = seq2_tokens[:budget]
    seq2_offsets = seq2_offsets[:budget]

    tokens = [CLS_TOKEN] + seq1_tokens + [SEP_TOKEN] + seq2_tokens + [SEP_TOKEN]
    segment_ids = [0] * (len(seq1_tokens) + 2) + [1] * (len(seq2_tokens) + 1)
    seq2_lo = len(seq1_tokens) + 2
    return SequencePair(
        token_ids=tokenizer.encode(tokens),
        segment_ids=segment_ids,
        tokens=tokens,
        seq2_offsets=seq2_offsets,
        seq2_lo=seq2_lo,
        seq2_hi=seq2_lo + len(seq2_tokens),
        n_truncated=n_truncated,
    )


def align_span(
    char_span: tuple[int, int, str], pair: SequencePair
) -> tuple[int, int] | None:
    """Smallest token window containing the [start, end) span of the given role.

    Token indices are absolute positions in the full input. Returns None when
    no window of kept tokens covers the span (e.g. it was truncated away).
    """
    start_char, end_char, role = char_span
    s_idx = e_idx = None
    for j, (tok_role, ts, te) in enumerate(pair.seq2_offsets):
        if tok_role != role:
            continue
        if te > start_char and ts < end_char:
            if s_idx is None:
                s_idx = j
            e_idx = j
    if s_idx is None:
        return None
    if pair.seq2_offsets[s_idx][1] > start_char or pair.seq2_offsets[e_idx][2] < end_char:
        return None  # span partially outside the kept token coverage
    return (pair.seq2_lo + s_idx, pair.seq2_lo + e_idx)


def _status_label(slot_name: str, update: dict[str, list[str]]) -> int:
    if slot_name not in update:
        return STATUS_NONE
    if DONTCARE in update[slot_name]:
        return STATUS_DONTCARE
    return STATUS_ACTIVE


def build_examples(
    turn: DialogueTurn,
    schema: ServiceSchema,
    tokenizer: SubwordTokenizer,
    config: BuilderConfig,
    prev_state: dict[str, list[str]] | None = None,
    counters: BuildCounters | None = None,
) -> list[QAExample]:
    """All QA examples for one (turn, service) pair.

    Emits one INTENT example per intent, one REQUESTED and one STATUS example
    per slot, one CAT_VALUE example per (categorical slot, possible value) and
    one SPAN example per non-categorical slot, in that order.
    """
    frame = turn.frame_for(schema.service_name)
    if frame is None:
        raise ValidationError(
            f"dialogue {turn.dialogue_id}, turn {turn.turn_index}: "
            f"no frame for service {schema.service_name!r}"
        )
    prev_state = prev_state or {}
    counters = counters if counters is not None else BuildCounters()
    update = state_update(frame.state_slot_values, prev_state)

    full_turn = [("system", turn.system_utterance), ("user", turn.user_utterance)]
    user_only = [("user", turn.user_utterance)]

    def make(task, seq1, seq2, label, element, value=None):
        try:
            pair = build_sequence_pair(seq1, seq2, tokenizer, config.max_seq_len)
        except UnbuildableExampleError:
            counters.dropped_unbuildable += 1
            return None
        if task == TaskKind.SPAN:
            label = _span_label(label, pair, counters)
        return QAExample(
            task=task,
            tokens=pair.tokens,
            token_ids=pair.token_ids,
            segment_ids=pair.segment_ids,
            label=label,
            service=schema.service_name,
            element=element,
            value=value,
            dialogue_id=turn.dialogue_id,
            turn_index=turn.turn_index,
            seq2_offsets=pair.seq2_offsets,
            seq2_lo=pair.seq2_lo,
            seq2_hi=pair.seq2_hi,
        )

    def _span_label(char_span, pair, counters):
        if char_span is None:
            return NO_SPAN
        aligned = align_span(char_span, pair)
        if aligned is None:
            counters.truncated_spans += 1
            return NO_SPAN
        return aligned

    examples = []
    for intent in schema.intents:
        ex = make(
            TaskKind.INTENT,
            [intent.display_name, intent.description],
            full_turn,
            int(intent.name == frame.active_intent),
            intent.name,
        )
        if ex:
            examples.append(ex)
    for slot in schema.slots:
        ex = make(
            TaskKind.REQUESTED,
            [slot.display_name, slot.description],
            user_only,
            int(slot.name in frame.requested_slots),
            slot.name,
        )
        if ex:
            examples.append(ex)
    for slot in schema.slots:
        ex = make(
            TaskKind.STATUS,
            [slot.display_name, slot.description],
            full_turn,
            _status_label(slot.name, update),
            slot.name,
        )
        if ex:
            examples.append(ex)
    for slot in schema.categorical_slots:
        for value, display_value in zip(slot.possible_values, slot.display_values):
            ex = make(
                TaskKind.CAT_VALUE,
                [slot.display_name, display_value],
                full_turn,
                int(slot.name in update and value in update[slot.name]),
                slot.name,
                value=value,
            )
            if ex:
                examples.append(ex)
    for slot in schema.noncategorical_slots:
        ex = make(
            TaskKind.SPAN,
            [slot.display_name, slot.description],
            full_turn,
            _gold_char_span(frame, slot.name, update),
            slot.name,
        )
        if ex:
            examples.append(ex)
    return examples


def _gold_char_span(frame, slot_name: str, update: dict) -> tuple[int, int, str] | None:
    """Character span for a slot updated this turn; user mention wins over system."""
    if slot_name not in update or DONTCARE in update[slot_name]:
        return None
    best = None
    for span in frame.turn_spans:
        if span.slot != slot_name:
            continue
        if span.utterance_role == "user":
            return (span.start_char, span.end_char, "user")
        best = (span.start_char, span.end_char, "system")
    return best


def balance_status_examples(examples: Sequence[QAExample], seed: int) -> list[QAExample]:
    """Subsample negative STATUS examples per (service, slot) group.

    Kept negatives = min(#negatives, max(#positives, 1)), drawn uniformly
    without replacement with the given seed; positives and all other task
    kinds pass through untouched. Relative order is preserved.
    """
    groups: dict[tuple[str, str], dict[str, list[int]]] = {}
    for i, ex in enumerate(examples):
        if ex.task != TaskKind.STATUS:
            continue
        g = groups.setdefault((ex.service, ex.element), {"pos": [], "neg": []})
        g["neg" if ex.label == STATUS_NONE else "pos"].append(i)

    rng = np.random.default_rng(seed)
    dropped: set[int] = set()
    for key in sorted(groups):
        g = groups[key]
        quota = max(len(g["pos"]), 1)
        negatives = g["neg"]
        if len(negatives) <= quota:
            continue
        keep = rng.choice(np.asarray(negatives), size=quota, replace=False)
        dropped.update(set(negatives) - set(int(k) for k in keep))
    return [ex for i, ex in enumerate(examples) if i not in dropped]


def build_corpus(
    dialogues: Iterable[Dialogue],
    schemas: Iterable[ServiceSchema],
    tokenizer: SubwordTokenizer,
    config: BuilderConfig,
) -> tuple[list[QAExample], BuildCounters]:
    """Examples for every (turn, frame) of every dialogue, optionally balanced."""
    schemas_by_name = {
        s.service_name: normalize_schema_names(s, config.normalize_names) for s in schemas
    }
    counters = BuildCounters()
    examples: list[QAExample] = []
    for dialogue in dialogues:
        prev: dict[str, dict[str, list[str]]] = {}
        for turn in dialogue.turns:
            for frame in turn.frames:
                schema = schemas_by_name.get(frame.service)
                if schema is None:
                    raise ValidationError(
                        f"dialogue {dialogue.dialogue_id}: unknown service {frame.service!r}"
                    )
                examples.extend(
                    build_examples(
                        turn,
                        schema,
                        tokenizer,
                        config,
                        prev_state=prev.get(frame.service, {}),
                        counters=counters,
                    )
                )
                prev[frame.service] = frame.state_slot_values
    if config.balance:
        examples = balance_status_examples(examples, config.seed)
    return examples, counters


# ---------------------------------------------------------------------------
# stats and JSONL

def compute_task_stats(examples: Sequence[QAExample], counters: BuildCounters | None = None) -> dict:
    """Per-task counts, population percentages and negative-example ratios."""
    counts = {t.name: 0 for t in TaskKind}
    negatives = {t.name: 0 for t in TaskKind}
    for ex in examples:
        counts[ex.task.name] += 1
        if ex.is_negative:
            negatives[ex.task.name] += 1
    total = len(examples)
    stats = {
        "total": total,
        "tasks": {
            name: {
                "count": counts[name],
                "pct": 100.0 * counts[name] / total if total else 0.0,
                "negatives": negatives[name],
                "negative_ratio": 100.0 * negatives[name] / counts[name] if counts[name] else None,
            }
            for name in counts
        },
    }
    if counters is not None:
        stats["dropped_unbuildable"] = counters.dropped_unbuildable
        stats["truncated_spans"] = counters.truncated_spans
    return stats


def example_to_json(ex: QAExample) -> str:
    obj = {
        "task": ex.task.name,
        "tokens": ex.tokens,
        "token_ids": ex.token_ids,
        "segment_ids": ex.segment_ids,
        "valid_length": ex.valid_length,
        "label": list(ex.label) if ex.task == TaskKind.SPAN else ex.label,
        "loss_mask": list(ex.loss_mask),
        "keys": {
            "service": ex.service,
            "element": ex.element,
            "value": ex.value,
            "dialogue_id": ex.dialogue_id,
            "turn_index": ex.turn_index,
        },
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def example_from_json(line: str) -> QAExample:
    obj = json.loads(line)
    task = TaskKind[obj["task"]]
    label = tuple(obj["label"]) if task == TaskKind.SPAN else obj["label"]
    keys = obj["keys"]
    return QAExample(
        task=task,
        tokens=obj["tokens"],
        token_ids=obj["token_ids"],
        segment_ids=obj["segment_ids"],
        label=label,
        service=keys["service"],
        element=keys["element"],
        value=keys["value"],
        dialogue_id=keys["dialogue_id"],
        turn_index=keys["turn_index"],
    )


def save_examples_jsonl(examples: Iterable[QAExample], path: str | Path) -> None:
    with open(path, "w") as f:
        for ex in examples:
            f.write(example_to_json(ex) + "\n")


def load_examples_jsonl(path: str | Path) -> list[QAExample]:
    with open(path) as f:
        return [example_from_json(line) for line in f if line.strip()]
