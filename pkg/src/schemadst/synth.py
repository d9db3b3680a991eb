"""Seeded generator for a small schema-guided dialogue corpus.

Services are assembled from shared pools of intents, slot templates and value
vocabulary, so held-out services reuse surface words while being new
schema elements. Utterances are templated; every non-categorical assignment
is written into the text and annotated with its exact character span,
including values the system offers and the user accepts. Slot-status
positives are calibrated so that roughly 89% of status examples are
negatives at the default settings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    Dialogue,
    DialogueTurn,
    FrameAnnotation,
    IntentDef,
    ServiceRegistry,
    ServiceSchema,
    SlotDef,
    SpanLabel,
    mark_seen_services,
    save_dialogues,
    save_schemas,
)

SERVICE_NOUNS = (
    "ride", "hotel", "flight", "movie", "dinner", "concert",
    "rental", "appointment", "cruise", "tour", "spa", "lesson",
)
INTENT_VERBS = ("Find", "Book", "Reserve", "Schedule", "Check", "Plan")

CITIES = (
    "london", "paris", "tokyo", "madrid", "berlin", "oslo", "cairo",
    "sydney", "toronto", "lima", "new york", "san francisco",
)
NAMES = ("alice", "bob", "carlos", "diana", "emma", "frank", "grace", "henry")
TIMES = ("4 pm", "9 am", "noon", "half past six", "10:30", "quarter to five")
DATES = ("march 3rd", "next friday", "tomorrow", "the 12th", "april 1st", "monday")
VENUES = (
    "grand plaza", "blue lagoon", "city lights", "royal garden",
    "sunset point", "silver lake",
)

# (slot name, description, value pool) templates shared across services
NONCAT_SLOT_POOL = (
    ("destination_city", "city the user wants to go to", CITIES),
    ("origin_city", "city where the journey starts", CITIES),
    ("person_name", "name the booking is held under", NAMES),
    ("start_time", "time at which it begins", TIMES),
    ("booking_date", "date of the booking", DATES),
    ("venue_name", "name of the place", VENUES),
)
CAT_SLOT_POOL = (
    ("seating_class", "class of seat to reserve",
     ("economy", "business", "first", "premium")),
    ("party_size", "number of people in the party", ("one", "two", "three", "four")),
    ("room_type", "kind of room to book", ("single", "double", "suite", "studio")),
    ("price_range", "how expensive it should be",
     ("cheap", "moderate", "expensive", "luxury")),
    ("payment_method", "how the user wants to pay",
     ("cash", "credit card", "debit card", "voucher")),
    ("rating_level", "minimum rating to accept",
     ("bronze", "silver", "gold", "platinum")),
)

ACKS = ("sounds good", "ok great", "yes please", "that works for me")
SYSTEM_FILLER = "ok , anything else ?"


@dataclass
class SynthConfig:
    n_services: int = 12
    n_seen_services: int = 9
    n_intents: int = 4
    n_noncat_slots: int = 3
    n_cat_slots: int = 3
    train_dialogues: int = 200
    eval_dialogues: int = 60
    turns_per_dialogue: int = 4
    p_update: float = 0.75
    p_requested: float = 0.15
    p_intent_switch: float = 0.04
    p_dontcare: float = 0.15
    p_system_offer: float = 0.15
    seed: int = 7

    def __post_init__(self):
        if self.n_seen_services >= self.n_services:
            raise ValueError("need at least one held-out service")
        if self.n_services > len(SERVICE_NOUNS):
            raise ValueError(f"at most {len(SERVICE_NOUNS)} services supported")


@dataclass
class SynthCorpus:
    train_schemas: list[ServiceSchema]
    eval_schemas: list[ServiceSchema]
    train_dialogues: list[Dialogue]
    eval_dialogues: list[Dialogue]

    @property
    def registry(self) -> ServiceRegistry:
        return mark_seen_services(self.train_schemas, self.eval_schemas)


class _Utterance:
    """Text under construction with exact char spans for embedded values."""

    def __init__(self):
        self.text = ""
        self.spans: list[tuple[str, int, int]] = []

    def add(self, piece: str):
        if self.text and piece:
            self.text += " "
        self.text += piece

    def add_with_value(self, template: str, slot: str, value: str):
        before, after = template.split("{value}")
        self.add(before.rstrip())
        if self.text:
            self.text += " "
        start = len(self.text)
        self.text += value
        self.spans.append((slot, start, len(self.text)))
        if after.strip():
            self.text += " " + after.strip()


def _slot_words(name: str) -> str:
    return name.replace("_", " ")


def _article(noun: str) -> str:
    return "an" if noun[0] in "aeiou" else "a"


def _build_service(noun: str, index: int, rng) -> ServiceSchema:
    title = noun.capitalize()
    verbs = rng.permutation(len(INTENT_VERBS))
    intents = tuple(
        IntentDef(
            name=f"{INTENT_VERBS[v]}{title}",
            description=f"{INTENT_VERBS[v].lower()} {_article(noun)} {noun} for the user",
        )
        for v in verbs[:4]
    )
    noncat_ids = rng.permutation(len(NONCAT_SLOT_POOL))[:3]
    cat_ids = rng.permutation(len(CAT_SLOT_POOL))[:3]
    slots = tuple(
        SlotDef(
            name=NONCAT_SLOT_POOL[i][0],
            description=NONCAT_SLOT_POOL[i][1],
            is_categorical=False,
        )
        for i in sorted(noncat_ids)
    ) + tuple(
        SlotDef(
            name=CAT_SLOT_POOL[i][0],
            description=CAT_SLOT_POOL[i][1],
            is_categorical=True,
            possible_values=CAT_SLOT_POOL[i][2],
        )
        for i in sorted(cat_ids)
    )
    return ServiceSchema(
        service_name=f"{title}s_{index + 1}",
        description=f"service for arranging {_article(noun)} {noun}",
        intents=intents,
        slots=slots,
    )


def _noncat_value(slot_name: str, rng) -> str:
    for name, _desc, pool in NONCAT_SLOT_POOL:
        if name == slot_name:
            return pool[rng.integers(len(pool))]
    raise KeyError(slot_name)


def _cat_value(slot: SlotDef, rng) -> str:
    return slot.possible_values[rng.integers(len(slot.possible_values))]


def _generate_dialogue(
    dialogue_id: str, schema: ServiceSchema, config: SynthConfig, rng
) -> Dialogue:
    noun = schema.description.rsplit(" ", 1)[1]
    intent = schema.intents[0]
    state: dict[str, list[str]] = {}
    turns = []
    slot_list = list(schema.slots)
    # cumulative turn-type thresholds; remainder is a plain acknowledgement
    t_update = config.p_update
    t_requested = t_update + config.p_requested
    t_switch = t_requested + config.p_intent_switch

    for ti in range(config.turns_per_dialogue):
        sys_u = _Utterance()
        usr_u = _Utterance()
        spans: list[SpanLabel] = []
        requested: frozenset[str] = frozenset()

        if ti == 0:
            verb = intent.name[: -len(noun.capitalize())].lower()
            usr_u.add(f"hello , i need to {verb} {_article(noun)} {noun}")
            kind = "open"
        else:
            r = rng.random()
            unfilled = [s for s in slot_list if s.name not in state]
            if r < t_update and unfilled:
                kind = "update"
            elif r < t_requested:
                kind = "requested"
            elif r < t_switch:
                kind = "switch"
            else:
                kind = "ack"

        if kind == "update":
            slot = unfilled[int(rng.integers(len(unfilled)))]
            if rng.random() < config.p_dontcare:
                sys_u.add(SYSTEM_FILLER)
                usr_u.add(f"any {_slot_words(slot.name)} is fine")
                state[slot.name] = ["dontcare"]
            elif not slot.is_categorical and rng.random() < config.p_system_offer:
                value = _noncat_value(slot.name, rng)
                sys_u.add_with_value(
                    f"how about {{value}} for the {_slot_words(slot.name)} ?",
                    slot.name, value,
                )
                state[slot.name] = [value]
                spans.append(SpanLabel(slot.name, "system", *sys_u.spans[-1][1:]))
                usr_u.add(ACKS[int(rng.integers(len(ACKS)))])
            elif slot.is_categorical:
                value = _cat_value(slot, rng)
                sys_u.add(SYSTEM_FILLER)
                usr_u.add_with_value(
                    f"the {_slot_words(slot.name)} should be {{value}}",
                    slot.name, value,
                )
                state[slot.name] = [value]
                # categorical mentions carry no span annotation
                usr_u.spans.pop()
            else:
                value = _noncat_value(slot.name, rng)
                sys_u.add(SYSTEM_FILLER)
                usr_u.add_with_value(
                    f"i want the {_slot_words(slot.name)} to be {{value}}",
                    slot.name, value,
                )
                state[slot.name] = [value]
                spans.append(SpanLabel(slot.name, "user", *usr_u.spans[-1][1:]))
        elif kind == "requested":
            asked = slot_list[int(rng.integers(len(slot_list)))]
            sys_u.add(SYSTEM_FILLER)
            usr_u.add(f"what is the {_slot_words(asked.name)} ?")
            requested = frozenset([asked.name])
        elif kind == "switch":
            intent = schema.intents[int(rng.integers(1, len(schema.intents)))]
            verb = intent.name[: -len(noun.capitalize())].lower()
            sys_u.add(SYSTEM_FILLER)
            usr_u.add(f"actually i would rather {verb} {_article(noun)} {noun}")
        elif kind == "ack":
            sys_u.add(SYSTEM_FILLER)
            usr_u.add(ACKS[int(rng.integers(len(ACKS)))])

        frame = FrameAnnotation(
            service=schema.service_name,
            active_intent=intent.name,
            requested_slots=requested,
            state_slot_values={k: list(v) for k, v in state.items()},
            turn_spans=tuple(spans),
        )
        turns.append(
            DialogueTurn(
                dialogue_id=dialogue_id,
                turn_index=ti,
                system_utterance=sys_u.text,
                user_utterance=usr_u.text,
                frames=(frame,),
            )
        )
    return Dialogue(
        dialogue_id=dialogue_id,
        services=(schema.service_name,),
        turns=tuple(turns),
    )


def generate(config: SynthConfig) -> SynthCorpus:
    """Deterministic corpus for the given config; same seed, same bytes."""
    rng = np.random.default_rng(config.seed)
    services = [
        _build_service(SERVICE_NOUNS[i], i, rng) for i in range(config.n_services)
    ]
    seen = services[: config.n_seen_services]

    train_dialogues = []
    for d in range(config.train_dialogues):
        schema = seen[int(rng.integers(len(seen)))]
        train_dialogues.append(
            _generate_dialogue(f"train_{d:05d}", schema, config, rng)
        )
    eval_dialogues = []
    for d in range(config.eval_dialogues):
        schema = services[int(rng.integers(len(services)))]
        eval_dialogues.append(
            _generate_dialogue(f"eval_{d:05d}", schema, config, rng)
        )
    return SynthCorpus(
        train_schemas=seen,
        eval_schemas=services,
        train_dialogues=train_dialogues,
        eval_dialogues=eval_dialogues,
    )


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> dict[str, str]:
    """Write SGD-format train/ and eval/ trees; returns the file paths."""
    out = Path(out_dir)
    paths = {}
    for split, schemas, dialogues in (
        ("train", corpus.train_schemas, corpus.train_dialogues),
        ("eval", corpus.eval_schemas, corpus.eval_dialogues),
    ):
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        save_schemas(schemas, d / "schema.json")
        save_dialogues(dialogues, d / "dialogues_001.json")
        paths[f"{split}_schema"] = str(d / "schema.json")
        paths[f"{split}_dialogues"] = str(d / "dialogues_001.json")
    return paths
