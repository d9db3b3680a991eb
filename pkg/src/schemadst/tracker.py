"""Rule-based dialogue state tracking over per-turn prediction bundles.

State is folded turn by turn, per service, starting from an empty state. A
slot predicted "none" keeps its previous value, "dontcare" overwrites with the
special value, and "active" takes the best categorical value or the decoded
span. The requested-slot set is rebuilt every turn; it does not accumulate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .data import DONTCARE, NO_INTENT, Dialogue, DialogueTurn, ServiceSchema
from .predictions import SpanPrediction, TurnPredictions

STATUS_NONE, STATUS_DONTCARE, STATUS_ACTIVE = 0, 1, 2


@dataclass(frozen=True)
class TrackerThresholds:
    intent: float = 0.5
    requested: float = 0.5
    max_answer_len: int = 30


@dataclass
class DialogueState:
    active_intent: str = NO_INTENT
    requested_slots: frozenset = frozenset()
    slot_values: dict[str, list[str]] = field(default_factory=dict)


def decode_span(
    start_logits,
    end_logits,
    seq2_lo: int,
    seq2_hi: int,
    max_answer_len: int = 30,
) -> tuple[int, int]:
    """Best (start, end) by summed logits over context windows, or (0, 0).

    Candidates are windows within [seq2_lo, seq2_hi) no longer than
    `max_answer_len` tokens, plus the no-answer sentinel (0, 0). Ties keep the
    earlier candidate, so the sentinel wins an exact tie.
    """
    best = (0, 0)
    best_score = start_logits[0] + end_logits[0]
    for s in range(seq2_lo, seq2_hi):
        for e in range(s, min(s + max_answer_len, seq2_hi)):
            score = start_logits[s] + end_logits[e]
            if score > best_score:
                best = (s, e)
                best_score = score
    return best


def _extract_span_text(span: SpanPrediction, turn: DialogueTurn, s: int, e: int) -> str | None:
    """Characters under tokens s..e; window clipped to the start token's role."""
    lo = span.seq2_lo
    if not span.offsets:
        return None
    role = span.offsets[s - lo][0]
    while e > s and span.offsets[e - lo][0] != role:
        e -= 1
    start_char = span.offsets[s - lo][1]
    end_char = span.offsets[e - lo][2]
    text = turn.system_utterance if role == "system" else turn.user_utterance
    return text[start_char:end_char]


def update(
    state: DialogueState,
    preds: TurnPredictions,
    schema: ServiceSchema,
    turn: DialogueTurn,
    thresholds: TrackerThresholds = TrackerThresholds(),
) -> DialogueState:
    """One tracking step; returns a fresh state, the input is not mutated."""
    intent = NO_INTENT
    best = None
    for idef in schema.intents:
        sc = preds.intent_scores.get(idef.name)
        if sc is not None and (best is None or sc > best):
            best = sc
            intent = idef.name
    if best is None or best <= thresholds.intent:
        intent = NO_INTENT

    requested = frozenset(
        slot.name
        for slot in schema.slots
        if preds.requested_scores.get(slot.name, 0.0) > thresholds.requested
    )

    values = {k: list(v) for k, v in state.slot_values.items()}
    for slot in schema.slots:
        probs = preds.status_probs.get(slot.name)
        if probs is None:
            continue
        status = max(range(3), key=lambda i: (probs[i], -i))  # first max wins
        if status == STATUS_NONE:
            continue
        if status == STATUS_DONTCARE:
            values[slot.name] = [DONTCARE]
            continue
        if slot.is_categorical:
            scores = preds.cat_value_scores.get(slot.name)
            if not scores:
                continue
            best_value = None
            best_score = None
            for value in slot.possible_values:
                sc = scores.get(value)
                if sc is not None and (best_score is None or sc > best_score):
                    best_score = sc
                    best_value = value
            if best_value is not None:
                values[slot.name] = [best_value]
        else:
            span = preds.spans.get(slot.name)
            if span is None:
                continue
            s, e = decode_span(
                span.start_logits, span.end_logits,
                span.seq2_lo, span.seq2_hi, thresholds.max_answer_len,
            )
            if (s, e) == (0, 0):
                continue  # no answer span this turn: keep the carried value
            text = _extract_span_text(span, turn, s, e)
            if text:
                values[slot.name] = [text]

    return DialogueState(
        active_intent=intent, requested_slots=requested, slot_values=values
    )


def run_dialogue(
    dialogue: Dialogue,
    schemas_by_name: dict[str, ServiceSchema],
    predict_fn: Callable[[DialogueTurn, ServiceSchema], TurnPredictions],
    thresholds: TrackerThresholds = TrackerThresholds(),
) -> dict[tuple[int, str], DialogueState]:
    """Track every service of one dialogue; keys are (turn_index, service)."""
    states: dict[tuple[int, str], DialogueState] = {}
    current: dict[str, DialogueState] = {}
    for turn in dialogue.turns:
        for frame in turn.frames:
            schema = schemas_by_name[frame.service]
            prev = current.get(frame.service, DialogueState())
            preds = predict_fn(turn, schema)
            nxt = update(prev, preds, schema, turn, thresholds)
            current[frame.service] = nxt
            states[(turn.turn_index, frame.service)] = nxt
    return states


def track_from_predictions(
    dialogues: Iterable[Dialogue],
    schemas_by_name: dict[str, ServiceSchema],
    predictions: Iterable[TurnPredictions],
    thresholds: TrackerThresholds = TrackerThresholds(),
) -> dict[tuple[str, int, str], DialogueState]:
    """Fold stored prediction bundles into per-turn states.

    Keys are (dialogue_id, turn_index, service). Turns lacking a stored bundle
    carry the previous state forward unchanged.
    """
    by_key = {(tp.dialogue_id, tp.turn_index, tp.service): tp for tp in predictions}
    out: dict[tuple[str, int, str], DialogueState] = {}
    for dialogue in dialogues:
        current: dict[str, DialogueState] = {}
        for turn in dialogue.turns:
            for frame in turn.frames:
                prev = current.get(frame.service, DialogueState())
                tp = by_key.get((dialogue.dialogue_id, turn.turn_index, frame.service))
                if tp is None:
                    nxt = prev
                else:
                    nxt = update(prev, tp, schemas_by_name[frame.service], turn, thresholds)
                current[frame.service] = nxt
                out[(dialogue.dialogue_id, turn.turn_index, frame.service)] = nxt
    return out


def state_to_json(dialogue_id: str, turn_index: int, service: str, state: DialogueState) -> str:
    obj = {
        "dialogue_id": dialogue_id,
        "turn_index": turn_index,
        "service": service,
        "active_intent": state.active_intent,
        "requested_slots": sorted(state.requested_slots),
        "slot_values": {k: state.slot_values[k] for k in sorted(state.slot_values)},
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def state_from_json(line: str) -> tuple[tuple[str, int, str], DialogueState]:
    obj = json.loads(line)
    key = (obj["dialogue_id"], obj["turn_index"], obj["service"])
    return key, DialogueState(
        active_intent=obj["active_intent"],
        requested_slots=frozenset(obj["requested_slots"]),
        slot_values=obj["slot_values"],
    )


def save_states_jsonl(states: dict[tuple[str, int, str], DialogueState], path: str | Path) -> None:
    with open(path, "w") as f:
        for (did, ti, svc) in sorted(states):
            f.write(state_to_json(did, ti, svc, states[(did, ti, svc)]) + "\n")


def load_states_jsonl(path: str | Path) -> dict[tuple[str, int, str], DialogueState]:
    with open(path) as f:
        return dict(state_from_json(line) for line in f if line.strip())
