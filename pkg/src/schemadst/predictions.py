"""Per-turn, per-service prediction bundles consumed by the state tracker.

A bundle holds one activation score per intent, per requested slot, the
three-way status distribution per slot, a score per categorical value and the
start/end logits (plus character offsets) per non-categorical slot. Bundles
come either from the trained model or from a gold-label oracle that emits
saturated scores; the tracker cannot tell them apart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import DialogueTurn, ServiceSchema
from .examples import BuilderConfig, QAExample, TaskKind, build_examples
from .model import NluModel, pad_batch
from .tokenization import SubwordTokenizer

ORACLE_LOGIT = 50.0


@dataclass
class SpanPrediction:
    start_logits: list[float]
    end_logits: list[float]
    seq2_lo: int
    seq2_hi: int
    # (role, start_char, end_char) per context token, parallel to positions
    # seq2_lo .. seq2_hi-1 of the logit arrays
    offsets: list[tuple[str, int, int]]


@dataclass
class TurnPredictions:
    dialogue_id: str
    turn_index: int
    service: str
    intent_scores: dict[str, float] = field(default_factory=dict)
    requested_scores: dict[str, float] = field(default_factory=dict)
    status_probs: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    cat_value_scores: dict[str, dict[str, float]] = field(default_factory=dict)
    spans: dict[str, SpanPrediction] = field(default_factory=dict)


def _assemble(turn, schema, examples: list[QAExample], scores: list[dict]) -> TurnPredictions:
    tp = TurnPredictions(
        dialogue_id=turn.dialogue_id,
        turn_index=turn.turn_index,
        service=schema.service_name,
    )
    for ex, sc in zip(examples, scores):
        if ex.task == TaskKind.INTENT:
            tp.intent_scores[ex.element] = float(sc["probs"][1])
        elif ex.task == TaskKind.REQUESTED:
            tp.requested_scores[ex.element] = float(sc["probs"][1])
        elif ex.task == TaskKind.STATUS:
            tp.status_probs[ex.element] = tuple(float(p) for p in sc["probs"])
        elif ex.task == TaskKind.CAT_VALUE:
            tp.cat_value_scores.setdefault(ex.element, {})[ex.value] = float(sc["probs"][1])
        else:
            n = ex.valid_length
            tp.spans[ex.element] = SpanPrediction(
                start_logits=[float(x) for x in sc["start_logits"][:n]],
                end_logits=[float(x) for x in sc["end_logits"][:n]],
                seq2_lo=ex.seq2_lo,
                seq2_hi=ex.seq2_hi,
                offsets=list(ex.seq2_offsets),
            )
    return tp


def predict_turn(
    model: NluModel,
    tokenizer: SubwordTokenizer,
    turn: DialogueTurn,
    schema: ServiceSchema,
    config: BuilderConfig,
) -> TurnPredictions:
    """Model predictions for every schema element of one turn."""
    examples = build_examples(turn, schema, tokenizer, config, prev_state={})
    batch = pad_batch(examples, tokenizer.pad_id)
    return _assemble(turn, schema, examples, model.predict_batch(batch))


def oracle_turn_predictions(
    turn: DialogueTurn,
    schema: ServiceSchema,
    tokenizer: SubwordTokenizer,
    config: BuilderConfig,
    prev_state: dict[str, list[str]] | None = None,
) -> TurnPredictions:
    """Gold labels rendered as saturated prediction scores.

    Spans are encoded as one-hot logits at the gold token positions, so the
    downstream decode path runs exactly as it would on model output.
    """
    examples = build_examples(turn, schema, tokenizer, config, prev_state=prev_state)
    scores = []
    for ex in examples:
        if ex.task == TaskKind.STATUS:
            probs = np.zeros(3)
            probs[ex.label] = 1.0
            scores.append({"probs": probs})
        elif ex.task == TaskKind.SPAN:
            start = np.full(ex.valid_length, -ORACLE_LOGIT)
            end = np.full(ex.valid_length, -ORACLE_LOGIT)
            s, e = ex.label
            start[s] = ORACLE_LOGIT
            end[e] = ORACLE_LOGIT
            scores.append({"start_logits": start, "end_logits": end})
        else:
            probs = np.zeros(2)
            probs[ex.label] = 1.0
            scores.append({"probs": probs})
    return _assemble(turn, schema, examples, scores)


def turn_predictions_to_json(tp: TurnPredictions) -> str:
    obj = {
        "dialogue_id": tp.dialogue_id,
        "turn_index": tp.turn_index,
        "service": tp.service,
        "intents": tp.intent_scores,
        "requested": tp.requested_scores,
        "status": {k: list(v) for k, v in tp.status_probs.items()},
        "cat_values": tp.cat_value_scores,
        "spans": {
            k: {
                "start_logits": sp.start_logits,
                "end_logits": sp.end_logits,
                "seq2_lo": sp.seq2_lo,
                "seq2_hi": sp.seq2_hi,
                "offsets": [list(o) for o in sp.offsets],
            }
            for k, sp in tp.spans.items()
        },
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def turn_predictions_from_json(line: str) -> TurnPredictions:
    obj = json.loads(line)
    return TurnPredictions(
        dialogue_id=obj["dialogue_id"],
        turn_index=obj["turn_index"],
        service=obj["service"],
        intent_scores=obj["intents"],
        requested_scores=obj["requested"],
        status_probs={k: tuple(v) for k, v in obj["status"].items()},
        cat_value_scores=obj["cat_values"],
        spans={
            k: SpanPrediction(
                start_logits=sp["start_logits"],
                end_logits=sp["end_logits"],
                seq2_lo=sp["seq2_lo"],
                seq2_hi=sp["seq2_hi"],
                offsets=[tuple(o) for o in sp["offsets"]],
            )
            for k, sp in obj["spans"].items()
        },
    )


def save_predictions_jsonl(preds: Iterable[TurnPredictions], path: str | Path) -> None:
    with open(path, "w") as f:
        for tp in preds:
            f.write(turn_predictions_to_json(tp) + "\n")


def load_predictions_jsonl(path: str | Path) -> list[TurnPredictions]:
    with open(path) as f:
        return [turn_predictions_from_json(line) for line in f if line.strip()]
