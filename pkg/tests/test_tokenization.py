import pytest

from schemadst.tokenization import (
    CLS_TOKEN,
    PAD_TOKEN,
    SEP_TOKEN,
    SPECIAL_TOKENS,
    UNK_TOKEN,
    SubwordTokenizer,
    basic_tokenize,
)


def test_basic_tokenize_offsets():
    text = "hello , world!"
    toks = basic_tokenize(text)
    assert [t[0] for t in toks] == ["hello", ",", "world", "!"]
    for word, s, e in toks:
        assert text[s:e] == word


def test_special_token_ids_are_first():
    tok = SubwordTokenizer.build_from_texts(["a b c"])
    assert tok.vocab[:4] == list(SPECIAL_TOKENS)
    assert (tok.pad_id, tok.unk_id, tok.cls_id, tok.sep_id) == (0, 1, 2, 3)


def test_missing_special_token_rejected():
    with pytest.raises(ValueError):
        SubwordTokenizer(["just", "words"])
    with pytest.raises(ValueError):
        SubwordTokenizer(list(SPECIAL_TOKENS) + ["dup", "dup"])


def test_whole_words_stay_whole():
    tok = SubwordTokenizer.build_from_texts(["the destination city is paris"])
    tokens, offsets = tok.tokenize_with_offsets("destination city")
    assert tokens == ["destination", "city"]
    assert offsets == [(0, 11), (12, 16)]


def test_greedy_longest_match_with_continuations():
    # "paris" unseen as a word but coverable by char fallbacks
    tok = SubwordTokenizer.build_from_texts(["p a r i s"])
    tokens, offsets = tok.tokenize_with_offsets("paris")
    assert tokens == ["p", "##a", "##r", "##i", "##s"]
    assert offsets == [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]


def test_unmatchable_word_becomes_unk():
    tok = SubwordTokenizer.build_from_texts(["plain text"])
    tokens, offsets = tok.tokenize_with_offsets("plain znak")
    assert tokens == ["plain", UNK_TOKEN]
    assert offsets == [(0, 5), (6, 10)]  # UNK still covers the whole word


def test_lowercasing():
    tok = SubwordTokenizer.build_from_texts(["Paris"])
    tokens, _ = tok.tokenize_with_offsets("PARIS")
    assert tokens == ["paris"]


def test_encode_and_len():
    tok = SubwordTokenizer.build_from_texts(["a b"])
    assert tok.encode([CLS_TOKEN, "a", SEP_TOKEN]) == [tok.cls_id, tok.token_to_id["a"], tok.sep_id]
    assert tok.encode(["never-seen-token"]) == [tok.unk_id]
    assert len(tok) == len(tok.vocab)


def test_vocab_file_round_trip(tmp_path):
    tok = SubwordTokenizer.build_from_texts(["the quick brown fox", "the slow fox"])
    path = tmp_path / "vocab.txt"
    tok.save_vocab(path)
    tok2 = SubwordTokenizer.from_vocab_file(path)
    assert tok2.vocab == tok.vocab
    text = "the quick slow fox"
    assert tok2.tokenize_with_offsets(text) == tok.tokenize_with_offsets(text)


def test_build_determinism():
    texts = ["b a", "a c", "c c b"]
    v1 = SubwordTokenizer.build_from_texts(texts).vocab
    v2 = SubwordTokenizer.build_from_texts(texts).vocab
    assert v1 == v2
    # reserved ":" first, then frequency-then-lexicographic ordering
    assert v1[4] == ":"
    assert v1[5] == "c"


def test_query_delimiter_always_in_vocab():
    tok = SubwordTokenizer.build_from_texts(["no colon here"])
    tokens, _ = tok.tokenize_with_offsets("here : colon")
    assert tokens == ["here", ":", "colon"]


def test_offsets_cover_every_token():
    tok = SubwordTokenizer.build_from_texts(["one two 4 pm , ok ?"])
    text = "ok , one two at 4 pm ?"
    tokens, offsets = tok.tokenize_with_offsets(text)
    assert len(tokens) == len(offsets)
    for token, (s, e) in zip(tokens, offsets):
        if token == UNK_TOKEN:
            continue
        assert text[s:e].lower() == token.removeprefix("##")
