import pytest

from schemadst.data import (
    DialogueTurn,
    FrameAnnotation,
    IntentDef,
    ServiceSchema,
    SlotDef,
    SpanLabel,
)
from schemadst.synth import SynthConfig, generate
from schemadst.tokenization import SubwordTokenizer


def schema_texts(schemas):
    texts = []
    for schema in schemas:
        texts.append(schema.description)
        for intent in schema.intents:
            texts.extend([intent.display_name, intent.description])
        for slot in schema.slots:
            texts.extend([slot.display_name, slot.description])
            texts.extend(slot.display_values)
    return texts


def corpus_tokenizer(schemas, dialogues):
    texts = schema_texts(schemas)
    for d in dialogues:
        for t in d.turns:
            texts.extend([t.system_utterance, t.user_utterance])
    return SubwordTokenizer.build_from_texts(texts)


def make_tiny_schema():
    # 2 intents, 3 slots (1 categorical with 4 values, 2 non-categorical):
    # exactly 14 examples per turn
    return ServiceSchema(
        service_name="rides_1",
        description="service for arranging a ride",
        intents=(
            IntentDef("FindRide", "find a ride"),
            IntentDef("BookRide", "book a ride"),
        ),
        slots=(
            SlotDef(
                "seating_class", "class of seat to reserve", True,
                ("economy", "business", "first", "premium"),
            ),
            SlotDef("destination_city", "city the user wants to go to", False),
            SlotDef("start_time", "time at which it begins", False),
        ),
    )


def make_tiny_turn():
    user = "i want the destination city to be paris and what is the start time ?"
    start = user.index("paris")
    frame = FrameAnnotation(
        service="rides_1",
        active_intent="FindRide",
        requested_slots=frozenset({"start_time"}),
        state_slot_values={"destination_city": ["paris"]},
        turn_spans=(SpanLabel("destination_city", "user", start, start + len("paris")),),
    )
    return DialogueTurn(
        dialogue_id="d0",
        turn_index=0,
        system_utterance="",
        user_utterance=user,
        frames=(frame,),
    )


def make_tiny_tokenizer(schema, turn):
    texts = schema_texts([schema])
    texts.extend([turn.system_utterance, turn.user_utterance])
    return SubwordTokenizer.build_from_texts(texts)


@pytest.fixture
def tiny_schema():
    return make_tiny_schema()


@pytest.fixture
def tiny_turn():
    return make_tiny_turn()


@pytest.fixture
def tiny_tokenizer(tiny_schema, tiny_turn):
    return make_tiny_tokenizer(tiny_schema, tiny_turn)


@pytest.fixture(scope="session")
def small_corpus():
    """Shared miniature corpus: 12 services (9 seen), 40 train / 20 eval dialogues."""
    return generate(SynthConfig(train_dialogues=40, eval_dialogues=20, seed=7))


@pytest.fixture(scope="session")
def small_tokenizer(small_corpus):
    return corpus_tokenizer(small_corpus.train_schemas, small_corpus.train_dialogues)
