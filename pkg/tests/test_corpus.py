"""Tokenization, vocabulary ids, and deterministic splits."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conssent.corpus import (
    PAD_ID,
    PAD_TOKEN,
    UNK_ID,
    UNK_TOKEN,
    EmptyCorpus,
    EmptyText,
    TooSmall,
    build_vocab,
    load_vocab_file,
    prepare_corpus,
    save_vocab_file,
    split_corpus,
    tokenize,
)

CORPUS = [
    ["the", "cat", "sat"],
    ["the", "dog", "sat"],
    ["the", "cat", "ran"],
]


def test_tokenize_lowercases_and_splits():
    assert tokenize("The  Cat\tSAT .") == ["the", "cat", "sat", "."]


def test_tokenize_empty_raises():
    with pytest.raises(EmptyText):
        tokenize("   \t  ")


def test_specials_occupy_first_two_ids():
    vocab = build_vocab(CORPUS)
    assert vocab.id_to_token[UNK_ID] == UNK_TOKEN
    assert vocab.id_to_token[PAD_ID] == PAD_TOKEN
    assert vocab.token_to_id[UNK_TOKEN] == UNK_ID
    assert vocab.token_to_id[PAD_TOKEN] == PAD_ID


def test_ids_ordered_by_frequency_then_token():
    vocab = build_vocab(CORPUS)
    # the: 3, cat: 2, sat: 2, dog: 1, ran: 1
    assert vocab.id_to_token[2:] == ("the", "cat", "sat", "dog", "ran")
    assert vocab.size == 7


def test_min_freq_filters():
    vocab = build_vocab(CORPUS, min_freq=2)
    assert vocab.id_to_token[2:] == ("the", "cat", "sat")


def test_max_size_keeps_most_frequent():
    vocab = build_vocab(CORPUS, max_size=2)
    assert vocab.id_to_token[2:] == ("the", "cat")


def test_empty_corpus_raises():
    with pytest.raises(EmptyCorpus):
        build_vocab([])


def test_oov_encodes_to_unk():
    vocab = build_vocab(CORPUS)
    assert vocab.encode(["the", "zebra"]) == [vocab.token_to_id["the"], UNK_ID]


def test_decode_encode_identity_on_all_ids():
    vocab = build_vocab(CORPUS)
    ids = list(range(vocab.size))
    assert vocab.encode(vocab.decode(ids)) == ids


@given(
    st.lists(
        st.lists(st.text(alphabet="abcdef", min_size=1, max_size=4), min_size=1, max_size=6),
        min_size=1,
        max_size=10,
    )
)
def test_encode_decode_identity_on_known_tokens(sentences):
    vocab = build_vocab(sentences)
    for sent in sentences:
        assert vocab.decode(vocab.encode(sent)) == sent


def test_split_disjoint_ordered_and_complete():
    corpus = [[i] for i in range(100)]
    train, valid = split_corpus(corpus, 0.2, seed=3)
    assert len(valid) == 20 and len(train) == 80
    flat_train = [s[0] for s in train]
    flat_valid = [s[0] for s in valid]
    assert flat_train == sorted(flat_train)  # original order preserved
    assert flat_valid == sorted(flat_valid)
    assert sorted(flat_train + flat_valid) == list(range(100))


def test_split_deterministic_and_seed_sensitive():
    corpus = [[i] for i in range(60)]
    a = split_corpus(corpus, 0.25, seed=1)
    b = split_corpus(corpus, 0.25, seed=1)
    c = split_corpus(corpus, 0.25, seed=2)
    assert a == b
    assert a != c


def test_split_too_small():
    with pytest.raises(TooSmall):
        split_corpus([[1]], 0.1, seed=0)
    with pytest.raises(TooSmall):
        split_corpus([[1], [2]], 0.95, seed=0)


def test_split_bad_fraction():
    with pytest.raises(ValueError):
        split_corpus([[1], [2]], 0.0, seed=0)
    with pytest.raises(ValueError):
        split_corpus([[1], [2]], 1.0, seed=0)


def test_prepare_corpus_encodes_and_splits():
    sentences = [["a", "b"], ["b", "c"], ["c", "a"], ["a", "c"]]
    sc = prepare_corpus(sentences, valid_fraction=0.25, seed=0)
    assert len(sc.train) == 3 and len(sc.valid) == 1
    assert len(sc.all_ids) == 4
    for ids in sc.all_ids:
        assert all(i >= 2 for i in ids)  # everything in-vocab here


def test_vocab_file_round_trip(tmp_path):
    vocab = build_vocab(CORPUS)
    path = tmp_path / "vocab.txt"
    save_vocab_file(vocab, path)
    loaded = load_vocab_file(path)
    assert loaded.id_to_token == vocab.id_to_token
    assert loaded.token_to_id == vocab.token_to_id
    assert loaded.sha256() == vocab.sha256()


def test_vocab_hash_changes_with_content():
    a = build_vocab(CORPUS)
    b = build_vocab(CORPUS + [["owl"]])
    assert a.sha256() != b.sha256()
