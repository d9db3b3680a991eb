"""Schemas, dialogues and gold annotations: loading, validation, serialization.

Reads the published SGD JSON layouts (a ``schema.json`` array per split and
``dialogues_*.json`` files whose turns alternate USER/SYSTEM speakers) and
exposes them as immutable-after-load dataclasses. Also provides the optional
schema-name normalization pass and seen/unseen service bookkeeping.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .errors import ParseError, ValidationError

NO_INTENT = "NONE"
DONTCARE = "dontcare"


@dataclass(frozen=True)
class IntentDef:
    name: str
    description: str
    # text used on the query side of model inputs; identical to `name`
    # unless schema-name normalization is enabled
    display_name: str = ""

    def __post_init__(self):
        if not self.display_name:
            object.__setattr__(self, "display_name", self.name)


@dataclass(frozen=True)
class SlotDef:
    name: str
    description: str
    is_categorical: bool
    possible_values: tuple[str, ...] = ()
    display_name: str = ""
    display_values: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "possible_values", tuple(self.possible_values))
        if not self.display_name:
            object.__setattr__(self, "display_name", self.name)
        if not self.display_values:
            object.__setattr__(self, "display_values", self.possible_values)


@dataclass(frozen=True)
class ServiceSchema:
    service_name: str
    description: str
    intents: tuple[IntentDef, ...]
    slots: tuple[SlotDef, ...]

    def __post_init__(self):
        object.__setattr__(self, "intents", tuple(self.intents))
        object.__setattr__(self, "slots", tuple(self.slots))

    @property
    def slots_by_name(self) -> dict[str, SlotDef]:
        return {s.name: s for s in self.slots}

    @property
    def categorical_slots(self) -> tuple[SlotDef, ...]:
        return tuple(s for s in self.slots if s.is_categorical)

    @property
    def noncategorical_slots(self) -> tuple[SlotDef, ...]:
        return tuple(s for s in self.slots if not s.is_categorical)


@dataclass(frozen=True)
class SpanLabel:
    slot: str
    utterance_role: str  # "system" | "user"
    start_char: int  # inclusive
    end_char: int  # exclusive


@dataclass(frozen=True)
class FrameAnnotation:
    service: str
    active_intent: str = NO_INTENT
    requested_slots: frozenset[str] = frozenset()
    # cumulative gold state; each slot maps to a list of acceptable strings
    state_slot_values: dict[str, list[str]] = field(default_factory=dict)
    turn_spans: tuple[SpanLabel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "requested_slots", frozenset(self.requested_slots))
        object.__setattr__(self, "turn_spans", tuple(self.turn_spans))


@dataclass(frozen=True)
class DialogueTurn:
    dialogue_id: str
    turn_index: int
    system_utterance: str  # empty on the first turn
    user_utterance: str
    frames: tuple[FrameAnnotation, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def frame_for(self, service: str) -> FrameAnnotation | None:
        for f in self.frames:
            if f.service == service:
                return f
        return None


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    services: tuple[str, ...]
    turns: tuple[DialogueTurn, ...]

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "turns", tuple(self.turns))


@dataclass(frozen=True)
class ServiceRegistry:
    seen_services: frozenset[str]
    all_services: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "seen_services", frozenset(self.seen_services))
        object.__setattr__(self, "all_services", frozenset(self.all_services))
        if not self.seen_services <= self.all_services:
            raise ValidationError("seen_services must be a subset of all_services")

    def bucket(self, service: str) -> str:
        return "seen" if service in self.seen_services else "unseen"


def validate_schema(schema: ServiceSchema) -> None:
    """Raise ValidationError if any ServiceSchema invariant is violated."""
    svc = schema.service_name
    if not svc:
        raise ValidationError("service with empty name")
    if not schema.description:
        raise ValidationError(f"service {svc!r}: empty description")
    names = [i.name for i in schema.intents]
    if len(set(names)) != len(names):
        raise ValidationError(f"service {svc!r}: duplicate intent names")
    names = [s.name for s in schema.slots]
    if len(set(names)) != len(names):
        raise ValidationError(f"service {svc!r}: duplicate slot names")
    for intent in schema.intents:
        if not intent.description:
            raise ValidationError(f"service {svc!r}, intent {intent.name!r}: empty description")
    for slot in schema.slots:
        if not slot.description:
            raise ValidationError(f"service {svc!r}, slot {slot.name!r}: empty description")
        if slot.is_categorical != bool(slot.possible_values):
            kind = "categorical" if slot.is_categorical else "non-categorical"
            raise ValidationError(
                f"service {svc!r}, slot {slot.name!r}: {kind} slot "
                f"with {len(slot.possible_values)} possible values"
            )


def _schema_from_record(rec: dict) -> ServiceSchema:
    intents = tuple(
        IntentDef(name=i["name"], description=i.get("description", ""))
        for i in rec.get("intents", [])
    )
    slots = tuple(
        SlotDef(
            name=s["name"],
            description=s.get("description", ""),
            is_categorical=bool(s.get("is_categorical", False)),
            possible_values=tuple(str(v) for v in s.get("possible_values", [])),
        )
        for s in rec.get("slots", [])
    )
    return ServiceSchema(
        service_name=rec["service_name"],
        description=rec.get("description", ""),
        intents=intents,
        slots=slots,
    )


def load_schemas(path: str | Path) -> list[ServiceSchema]:
    """Load a schema file (JSON array of service records) and validate it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected a JSON array of service records")
    schemas = []
    for rec in raw:
        try:
            schema = _schema_from_record(rec)
        except (KeyError, TypeError) as e:
            raise ParseError(f"{path}: malformed service record: {e}") from e
        validate_schema(schema)
        schemas.append(schema)
    return schemas


def schema_to_dict(schema: ServiceSchema) -> dict:
    return {
        "service_name": schema.service_name,
        "description": schema.description,
        "intents": [{"name": i.name, "description": i.description} for i in schema.intents],
        "slots": [
            {
                "name": s.name,
                "description": s.description,
                "is_categorical": s.is_categorical,
                "possible_values": list(s.possible_values),
            }
            for s in schema.slots
        ],
    }


def save_schemas(schemas: Iterable[ServiceSchema], path: str | Path) -> None:
    Path(path).write_text(json.dumps([schema_to_dict(s) for s in schemas], indent=1))


# ---------------------------------------------------------------------------
# schema-name normalization

_CAMEL_BOUNDARY = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")

_ONES = (
    "zero one two three four five six seven eight nine ten eleven twelve "
    "thirteen fourteen fifteen sixteen seventeen eighteen nineteen"
).split()
_TENS = "twenty thirty forty fifty sixty seventy eighty ninety".split()


def split_words(name: str) -> str:
    """Break a camelCase/snake_case identifier into lowercase space-separated words."""
    parts = re.split(r"[_\s]+", name.strip())
    words = []
    for part in parts:
        if not part:
            continue
        words.extend(w for w in _CAMEL_BOUNDARY.split(part) if w)
    return " ".join(w.lower() for w in words)


def number_to_words(value: str) -> str:
    """Spell out small non-negative integer strings ("2" -> "two"); other text unchanged."""
    if not re.fullmatch(r"\d+", value):
        return value
    n = int(value)
    if n < 20:
        return _ONES[n]
    if n < 100:
        tens, ones = divmod(n, 10)
        word = _TENS[tens - 2]
        return f"{word} {_ONES[ones]}" if ones else word
    if n < 1000:
        hundreds, rest = divmod(n, 100)
        word = f"{_ONES[hundreds]} hundred"
        return f"{word} {number_to_words(str(rest))}" if rest else word
    return " ".join(_ONES[int(d)] for d in value)


def normalize_schema_names(schema: ServiceSchema, enabled: bool = True) -> ServiceSchema:
    """Rewrite the display copies of intent/slot names (and categorical values).

    Identifiers are untouched; only the `display_*` fields used to build model
    input text change. Numeric categorical values are spelled out so the
    subword vocabulary sees words. Identity when `enabled` is false.
    """
    if not enabled:
        return schema
    intents = tuple(replace(i, display_name=split_words(i.name)) for i in schema.intents)
    slots = tuple(
        replace(
            s,
            display_name=split_words(s.name),
            display_values=tuple(number_to_words(v) for v in s.possible_values),
        )
        for s in schema.slots
    )
    return replace(schema, intents=intents, slots=slots)


def mark_seen_services(
    train_schemas: Iterable[ServiceSchema], eval_schemas: Iterable[ServiceSchema]
) -> ServiceRegistry:
    """Registry over the eval services: seen = appearing in the training schema set."""
    train_names = {s.service_name for s in train_schemas}
    eval_names = {s.service_name for s in eval_schemas}
    return ServiceRegistry(seen_services=frozenset(eval_names & train_names), all_services=frozenset(eval_names))


# ---------------------------------------------------------------------------
# dialogues

def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise ValidationError(f"{where}: {msg}")


def _frame_from_raw(
    raw_user_frame: dict,
    raw_system_frame: dict | None,
    system_utterance: str,
    user_utterance: str,
    where: str,
) -> FrameAnnotation:
    state = raw_user_frame.get("state", {})
    slot_values = {slot: [str(v) for v in vals] for slot, vals in state.get("slot_values", {}).items()}
    spans = []
    for role, raw_frame, utterance in (
        ("system", raw_system_frame, system_utterance),
        ("user", raw_user_frame, user_utterance),
    ):
        if raw_frame is None:
            continue
        for s in raw_frame.get("slots", []):
            start, end = int(s["start"]), int(s["exclusive_end"])
            _require(
                0 <= start < end <= len(utterance),
                where,
                f"span for slot {s['slot']!r} [{start},{end}) out of bounds "
                f"for {role} utterance of length {len(utterance)}",
            )
            spans.append(SpanLabel(slot=s["slot"], utterance_role=role, start_char=start, end_char=end))
    return FrameAnnotation(
        service=raw_user_frame["service"],
        active_intent=state.get("active_intent", NO_INTENT),
        requested_slots=frozenset(state.get("requested_slots", [])),
        state_slot_values=slot_values,
        turn_spans=tuple(spans),
    )


def _validate_frame(frame: FrameAnnotation, schemas_by_name: dict[str, ServiceSchema], where: str) -> None:
    _require(frame.service in schemas_by_name, where, f"unknown service {frame.service!r}")
    schema = schemas_by_name[frame.service]
    slot_defs = schema.slots_by_name
    intent_names = {i.name for i in schema.intents}
    _require(
        frame.active_intent == NO_INTENT or frame.active_intent in intent_names,
        where,
        f"unknown intent {frame.active_intent!r} for service {frame.service!r}",
    )
    for slot in frame.requested_slots:
        _require(slot in slot_defs, where, f"requested slot {slot!r} not in schema")
    for slot, values in frame.state_slot_values.items():
        _require(slot in slot_defs, where, f"state slot {slot!r} not in schema")
        sdef = slot_defs[slot]
        if sdef.is_categorical:
            for v in values:
                _require(
                    v == DONTCARE or v in sdef.possible_values,
                    where,
                    f"categorical slot {slot!r} has value {v!r} outside its possible values",
                )
    for span in frame.turn_spans:
        _require(span.slot in slot_defs, where, f"span slot {span.slot!r} not in schema")
        _require(
            not slot_defs[span.slot].is_categorical,
            where,
            f"span annotation on categorical slot {span.slot!r}",
        )


def _dialogue_from_raw(raw: dict, schemas_by_name: dict[str, ServiceSchema] | None) -> Dialogue:
    did = raw["dialogue_id"]
    turns = []
    system_utterance = ""
    system_frames: dict[str, dict] = {}
    user_index = 0
    for raw_turn in raw["turns"]:
        speaker = raw_turn.get("speaker", "").upper()
        if speaker == "SYSTEM":
            system_utterance = raw_turn.get("utterance", "")
            system_frames = {f["service"]: f for f in raw_turn.get("frames", [])}
            continue
        _require(speaker == "USER", f"dialogue {did}", f"unexpected speaker {speaker!r}")
        user_utterance = raw_turn.get("utterance", "")
        where = f"dialogue {did}, turn {user_index}"
        frames = []
        for raw_frame in raw_turn.get("frames", []):
            frame = _frame_from_raw(
                raw_frame,
                system_frames.get(raw_frame["service"]),
                system_utterance,
                user_utterance,
                where,
            )
            if schemas_by_name is not None:
                _validate_frame(frame, schemas_by_name, where)
            frames.append(frame)
        turns.append(
            DialogueTurn(
                dialogue_id=did,
                turn_index=user_index,
                system_utterance=system_utterance,
                user_utterance=user_utterance,
                frames=tuple(frames),
            )
        )
        user_index += 1
        system_utterance = ""
        system_frames = {}
    return Dialogue(dialogue_id=did, services=tuple(raw.get("services", [])), turns=tuple(turns))


def load_dialogues(
    path: str | Path, schemas: Iterable[ServiceSchema] | None = None
) -> list[Dialogue]:
    """Load SGD-format dialogue JSON from a file or a directory of dialogues_*.json.

    System/user raw turns are paired into one DialogueTurn per user turn; the
    first turn keeps an empty system utterance. When `schemas` is given, every
    frame is validated against it (unknown services, span bounds, categorical
    values).
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("dialogues_*.json"))
        if not files:
            raise ParseError(f"{path}: no dialogues_*.json files found")
    else:
        files = [path]
    schemas_by_name = {s.service_name: s for s in schemas} if schemas is not None else None
    dialogues = []
    for f in files:
        try:
            raw = json.loads(f.read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"{f}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
        if not isinstance(raw, list):
            raise ParseError(f"{f}: expected a JSON array of dialogues")
        for raw_dialogue in raw:
            dialogues.append(_dialogue_from_raw(raw_dialogue, schemas_by_name))
    return dialogues


def dialogue_to_dict(dialogue: Dialogue) -> dict:
    """Serialize back to the SGD raw layout consumed by load_dialogues."""
    raw_turns = []
    for turn in dialogue.turns:
        if turn.turn_index > 0 or turn.system_utterance:
            raw_turns.append(
                {
                    "speaker": "SYSTEM",
                    "utterance": turn.system_utterance,
                    "frames": [
                        {
                            "service": f.service,
                            "slots": [
                                {"slot": s.slot, "start": s.start_char, "exclusive_end": s.end_char}
                                for s in f.turn_spans
                                if s.utterance_role == "system"
                            ],
                        }
                        for f in turn.frames
                    ],
                }
            )
        raw_turns.append(
            {
                "speaker": "USER",
                "utterance": turn.user_utterance,
                "frames": [
                    {
                        "service": f.service,
                        "slots": [
                            {"slot": s.slot, "start": s.start_char, "exclusive_end": s.end_char}
                            for s in f.turn_spans
                            if s.utterance_role == "user"
                        ],
                        "state": {
                            "active_intent": f.active_intent,
                            "requested_slots": sorted(f.requested_slots),
                            "slot_values": {k: list(v) for k, v in sorted(f.state_slot_values.items())},
                        },
                    }
                    for f in turn.frames
                ],
            }
        )
    return {
        "dialogue_id": dialogue.dialogue_id,
        "services": list(dialogue.services),
        "turns": raw_turns,
    }


def save_dialogues(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    Path(path).write_text(json.dumps([dialogue_to_dict(d) for d in dialogues], indent=1))


def state_update(current: dict[str, list[str]], previous: dict[str, list[str]]) -> dict[str, list[str]]:
    """Slots whose value is introduced or changed by the current turn.

    A slot counts as unchanged when the previous turn's primary value is still
    among the acceptable values (the SGD baseline convention).
    """
    update = {}
    for slot, values in current.items():
        if slot in previous and previous[slot] and previous[slot][0] in values:
            continue
        update[slot] = list(values)
    return update


# ---------------------------------------------------------------------------
# internal normalized JSONL form (one turn per line)

def turn_to_json(turn: DialogueTurn) -> str:
    obj = {
        "dialogue_id": turn.dialogue_id,
        "turn_index": turn.turn_index,
        "system_utterance": turn.system_utterance,
        "user_utterance": turn.user_utterance,
        "frames": [
            {
                "service": f.service,
                "active_intent": f.active_intent,
                "requested_slots": sorted(f.requested_slots),
                "state_slot_values": {k: list(v) for k, v in sorted(f.state_slot_values.items())},
                "turn_spans": [
                    [s.slot, s.utterance_role, s.start_char, s.end_char] for s in f.turn_spans
                ],
            }
            for f in turn.frames
        ],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def turn_from_json(line: str) -> DialogueTurn:
    obj = json.loads(line)
    frames = tuple(
        FrameAnnotation(
            service=f["service"],
            active_intent=f["active_intent"],
            requested_slots=frozenset(f["requested_slots"]),
            state_slot_values={k: list(v) for k, v in f["state_slot_values"].items()},
            turn_spans=tuple(SpanLabel(*s) for s in f["turn_spans"]),
        )
        for f in obj["frames"]
    )
    return DialogueTurn(
        dialogue_id=obj["dialogue_id"],
        turn_index=obj["turn_index"],
        system_utterance=obj["system_utterance"],
        user_utterance=obj["user_utterance"],
        frames=frames,
    )
