"""Dialogue state tracking metrics with seen/unseen service buckets.

Joint goal accuracy asks a frame's full slot map to match the gold state;
average goal accuracy scores each gold slot assignment independently.
Requested-slot F1 is macro-averaged per frame, intent accuracy per frame.
Non-categorical values match after lowercasing and whitespace normalization,
or, in fuzzy mode, when token-multiset Dice similarity reaches 0.9.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .data import Dialogue, ServiceRegistry, ServiceSchema
from .tracker import DialogueState

FUZZY_DICE_THRESHOLD = 0.9
BUCKETS = ("all", "seen", "unseen")


def normalize_value(text: str) -> str:
    return " ".join(text.lower().split())


def dice_similarity(a: str, b: str) -> float:
    """Token-multiset Dice coefficient of two strings (0 when both empty)."""
    ta = Counter(normalize_value(a).split())
    tb = Counter(normalize_value(b).split())
    total = sum(ta.values()) + sum(tb.values())
    if total == 0:
        return 0.0
    overlap = sum((ta & tb).values())
    return 2.0 * overlap / total


def value_match(
    pred_values: list[str],
    gold_values: list[str],
    is_categorical: bool,
    fuzzy: bool = False,
) -> bool:
    """True when any predicted string matches any acceptable gold string."""
    for p in pred_values:
        for g in gold_values:
            if is_categorical:
                if p == g:
                    return True
            elif normalize_value(p) == normalize_value(g):
                return True
            elif fuzzy and dice_similarity(p, g) >= FUZZY_DICE_THRESHOLD:
                return True
    return False


def frame_goal_match(
    pred_slot_values: dict[str, list[str]],
    gold_slot_values: dict[str, list[str]],
    schema: ServiceSchema,
    fuzzy: bool = False,
) -> bool:
    """Exact-match over the union of predicted and gold slot keys."""
    for slot_name in set(pred_slot_values) | set(gold_slot_values):
        if slot_name not in pred_slot_values or slot_name not in gold_slot_values:
            return False
        slot = schema.slots_by_name.get(slot_name)
        is_cat = slot.is_categorical if slot is not None else True
        if not value_match(
            pred_slot_values[slot_name], gold_slot_values[slot_name], is_cat, fuzzy
        ):
            return False
    return True


@dataclass
class _Accumulator:
    numer: float = 0.0
    denom: int = 0

    def add(self, value: float, weight: int = 1):
        self.numer += value
        self.denom += weight

    @property
    def mean(self) -> float:
        return self.numer / self.denom if self.denom else math.nan


@dataclass
class MetricsReport:
    values: dict = field(default_factory=dict)  # metric -> bucket -> float (nan ok)
    counts: dict = field(default_factory=dict)  # metric -> bucket -> denominator
    frames: dict = field(default_factory=dict)  # bucket -> frame count

    def to_json(self) -> str:
        obj = {
            "frames": self.frames,
            "metrics": {
                m: {
                    b: {
                        "value": None if math.isnan(self.values[m][b]) else self.values[m][b],
                        "count": self.counts[m][b],
                    }
                    for b in BUCKETS
                }
                for m in sorted(self.values)
            },
        }
        return json.dumps(obj, sort_keys=True, indent=2)

    def format_table(self, match_mode: str | None = None) -> str:
        """One line per metric as `name  all (seen/unseen)`, values x100.

        match_mode "fuzzy" or "strict" hides the goal-accuracy rows of the
        other mode; None shows every metric.
        """
        if match_mode not in (None, "fuzzy", "strict"):
            raise ValueError(f"unknown match mode {match_mode!r}")
        hidden = {"fuzzy": "_strict", "strict": "_fuzzy"}.get(match_mode)

        def fmt(m, b):
            v = self.values[m][b]
            return "-" if math.isnan(v) else f"{100.0 * v:.1f}"

        rows = [m for m in sorted(self.values) if not (hidden and m.endswith(hidden))]
        width = max(len(m) for m in rows)
        lines = [f"{'metric':<{width}}  all (seen/unseen)"]
        for m in rows:
            lines.append(
                f"{m:<{width}}  {fmt(m, 'all')} ({fmt(m, 'seen')}/{fmt(m, 'unseen')})"
            )
        return "\n".join(lines)


def _requested_f1(pred: frozenset, gold: frozenset) -> float:
    if not pred and not gold:
        return 1.0
    tp = len(pred & gold)
    if tp == 0:
        return 0.0
    precision = tp / len(pred)
    recall = tp / len(gold)
    return 2.0 * precision * recall / (precision + recall)


def evaluate(
    dialogues: Iterable[Dialogue],
    schemas_by_name: dict[str, ServiceSchema],
    states: dict[tuple[str, int, str], DialogueState],
    registry: ServiceRegistry | None = None,
) -> MetricsReport:
    """Score tracked states against gold frames, bucketed by service novelty.

    Goal accuracies are reported under strict and fuzzy value matching side by
    side; intent accuracy and requested-slot F1 do not depend on the mode.
    Frames with no stored state count as empty predictions.
    """
    metric_names = (
        "joint_goal_accuracy_strict",
        "joint_goal_accuracy_fuzzy",
        "average_goal_accuracy_strict",
        "average_goal_accuracy_fuzzy",
        "requested_slots_f1",
        "active_intent_accuracy",
    )
    acc = {m: {b: _Accumulator() for b in BUCKETS} for m in metric_names}
    frames = {b: 0 for b in BUCKETS}

    for dialogue in dialogues:
        for turn in dialogue.turns:
            for frame in turn.frames:
                schema = schemas_by_name[frame.service]
                state = states.get(
                    (dialogue.dialogue_id, turn.turn_index, frame.service),
                    DialogueState(),
                )
                if registry is None:
                    buckets = ("all", "seen")
                else:
                    buckets = ("all", registry.bucket(frame.service))
                for b in buckets:
                    frames[b] += 1

                jga_s = frame_goal_match(
                    state.slot_values, frame.state_slot_values, schema, fuzzy=False
                )
                jga_f = frame_goal_match(
                    state.slot_values, frame.state_slot_values, schema, fuzzy=True
                )
                f1 = _requested_f1(state.requested_slots, frame.requested_slots)
                intent_ok = state.active_intent == frame.active_intent

                for b in buckets:
                    acc["joint_goal_accuracy_strict"][b].add(float(jga_s))
                    acc["joint_goal_accuracy_fuzzy"][b].add(float(jga_f))
                    acc["requested_slots_f1"][b].add(f1)
                    acc["active_intent_accuracy"][b].add(float(intent_ok))

                for slot_name, gold_values in frame.state_slot_values.items():
                    slot = schema.slots_by_name.get(slot_name)
                    is_cat = slot.is_categorical if slot is not None else True
                    pred = state.slot_values.get(slot_name)
                    ok_s = pred is not None and value_match(pred, gold_values, is_cat, False)
                    ok_f = pred is not None and value_match(pred, gold_values, is_cat, True)
                    for b in buckets:
                        acc["average_goal_accuracy_strict"][b].add(float(ok_s))
                        acc["average_goal_accuracy_fuzzy"][b].add(float(ok_f))

    report = MetricsReport(frames=frames)
    for m in metric_names:
        report.values[m] = {b: acc[m][b].mean for b in BUCKETS}
        report.counts[m] = {b: acc[m][b].denom for b in BUCKETS}
    return report
