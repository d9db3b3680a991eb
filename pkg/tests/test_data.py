import pytest

from schemadst.data import (
    Dialogue,
    DialogueTurn,
    FrameAnnotation,
    IntentDef,
    ServiceRegistry,
    ServiceSchema,
    SlotDef,
    SpanLabel,
    load_dialogues,
    load_schemas,
    mark_seen_services,
    normalize_schema_names,
    number_to_words,
    save_dialogues,
    save_schemas,
    split_words,
    state_update,
    turn_from_json,
    turn_to_json,
    validate_schema,
)
from schemadst.errors import ParseError, ValidationError


def test_schema_round_trip(tmp_path, tiny_schema):
    path = tmp_path / "schema.json"
    save_schemas([tiny_schema], path)
    loaded = load_schemas(path)
    assert loaded == [tiny_schema]


def test_schema_accessors(tiny_schema):
    assert [s.name for s in tiny_schema.categorical_slots] == ["seating_class"]
    assert [s.name for s in tiny_schema.noncategorical_slots] == [
        "destination_city", "start_time",
    ]
    assert tiny_schema.slots_by_name["start_time"].is_categorical is False


def test_load_schemas_rejects_bad_json(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_schemas(path)
    path.write_text('{"service_name": "x"}')  # object, not array
    with pytest.raises(ParseError):
        load_schemas(path)


def test_validate_schema_catches_inconsistencies():
    base = dict(service_name="s", description="d")
    with pytest.raises(ValidationError):
        validate_schema(ServiceSchema(
            intents=(IntentDef("A", "a"), IntentDef("A", "again")), slots=(), **base,
        ))
    with pytest.raises(ValidationError):
        # categorical slot without possible values
        validate_schema(ServiceSchema(
            intents=(), slots=(SlotDef("x", "xd", True, ()),), **base,
        ))
    with pytest.raises(ValidationError):
        # non-categorical slot with values
        validate_schema(ServiceSchema(
            intents=(), slots=(SlotDef("x", "xd", False, ("v",)),), **base,
        ))


def _one_turn_dialogue(tiny_turn):
    return Dialogue(dialogue_id="d0", services=("rides_1",), turns=(tiny_turn,))


def test_dialogue_round_trip(tmp_path, tiny_schema, tiny_turn):
    path = tmp_path / "dialogues_001.json"
    save_dialogues([_one_turn_dialogue(tiny_turn)], path)
    loaded = load_dialogues(path, [tiny_schema])
    assert loaded == [_one_turn_dialogue(tiny_turn)]


def test_load_dialogues_from_directory(tmp_path, tiny_schema, tiny_turn):
    save_dialogues([_one_turn_dialogue(tiny_turn)], tmp_path / "dialogues_001.json")
    save_dialogues([_one_turn_dialogue(tiny_turn)], tmp_path / "dialogues_002.json")
    assert len(load_dialogues(tmp_path, [tiny_schema])) == 2


def test_load_dialogues_empty_dir(tmp_path):
    with pytest.raises(ParseError):
        load_dialogues(tmp_path)


def test_frame_validation_rejects_unknown_intent(tmp_path, tiny_schema):
    bad_frame = FrameAnnotation(
        service="rides_1",
        active_intent="NoSuchIntent",
        state_slot_values={"destination_city": ["paris"]},
    )
    turn = DialogueTurn("d0", 0, "", "hello", (bad_frame,))
    save_dialogues([Dialogue("d0", ("rides_1",), (turn,))], tmp_path / "d.json")
    with pytest.raises(ValidationError):
        load_dialogues(tmp_path / "d.json", [tiny_schema])


def test_frame_validation_rejects_bad_categorical_value(tmp_path, tiny_schema):
    frame = FrameAnnotation(
        service="rides_1", state_slot_values={"seating_class": ["window"]},
    )
    turn = DialogueTurn("d0", 0, "", "hello", (frame,))
    save_dialogues([Dialogue("d0", ("rides_1",), (turn,))], tmp_path / "d.json")
    with pytest.raises(ValidationError):
        load_dialogues(tmp_path / "d.json", [tiny_schema])
    # dontcare is always allowed
    frame = FrameAnnotation(
        service="rides_1", state_slot_values={"seating_class": ["dontcare"]},
    )
    turn = DialogueTurn("d0", 0, "", "hello", (frame,))
    save_dialogues([Dialogue("d0", ("rides_1",), (turn,))], tmp_path / "d.json")
    assert len(load_dialogues(tmp_path / "d.json", [tiny_schema])) == 1


def test_span_bounds_checked(tmp_path, tiny_schema):
    frame = FrameAnnotation(
        service="rides_1",
        state_slot_values={"destination_city": ["paris"]},
        turn_spans=(SpanLabel("destination_city", "user", 0, 999),),
    )
    turn = DialogueTurn("d0", 0, "", "short", (frame,))
    save_dialogues([Dialogue("d0", ("rides_1",), (turn,))], tmp_path / "d.json")
    with pytest.raises(ValidationError):
        load_dialogues(tmp_path / "d.json", [tiny_schema])


def test_turn_jsonl_round_trip(tiny_turn):
    assert turn_from_json(turn_to_json(tiny_turn)) == tiny_turn


def test_state_update_delta_convention():
    # new slot
    assert state_update({"a": ["x"]}, {}) == {"a": ["x"]}
    # unchanged: previous primary value still acceptable
    assert state_update({"a": ["x", "y"]}, {"a": ["x"]}) == {}
    assert state_update({"a": ["y", "x"]}, {"a": ["x"]}) == {}
    # changed: previous primary no longer listed
    assert state_update({"a": ["y"]}, {"a": ["x"]}) == {"a": ["y"]}
    # only the primary (first) previous value counts
    assert state_update({"a": ["y"]}, {"a": ["x", "y"]}) == {"a": ["y"]}
    # removal is not an update event
    assert state_update({}, {"a": ["x"]}) == {}


def test_registry_buckets():
    reg = ServiceRegistry(seen_services=frozenset({"a"}), all_services=frozenset({"a", "b"}))
    assert reg.bucket("a") == "seen"
    assert reg.bucket("b") == "unseen"
    with pytest.raises(ValidationError):
        ServiceRegistry(seen_services=frozenset({"c"}), all_services=frozenset({"a"}))


def test_mark_seen_services(tiny_schema):
    other = ServiceSchema("new_1", "d", (), ())
    reg = mark_seen_services([tiny_schema], [tiny_schema, other])
    assert reg.bucket("rides_1") == "seen"
    assert reg.bucket("new_1") == "unseen"


def test_split_words():
    assert split_words("FindRide") == "find ride"
    assert split_words("destination_city") == "destination city"
    assert split_words("HTTPServer") == "http server"


def test_number_to_words():
    assert number_to_words("0") == "zero"
    assert number_to_words("2") == "two"
    assert number_to_words("15") == "fifteen"
    assert number_to_words("21") == "twenty one"
    assert number_to_words("40") == "forty"
    assert number_to_words("215") == "two hundred fifteen"
    assert number_to_words("cheap") == "cheap"
    assert number_to_words("4 pm") == "4 pm"  # not a bare integer


def test_normalize_schema_names(tiny_schema):
    plain = normalize_schema_names(tiny_schema, enabled=False)
    assert plain is tiny_schema

    schema = ServiceSchema(
        "svc", "d",
        intents=(IntentDef("BookRide", "x"),),
        slots=(SlotDef("party_size", "n", True, ("1", "2")),),
    )
    norm = normalize_schema_names(schema, enabled=True)
    assert norm.intents[0].display_name == "book ride"
    assert norm.intents[0].name == "BookRide"  # identifier untouched
    assert norm.slots[0].display_name == "party size"
    assert norm.slots[0].display_values == ("one", "two")
    assert norm.slots[0].possible_values == ("1", "2")
