import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from placededup.text import (
    EmbeddingTable,
    EmptyVocabularyError,
    NormalizerConfig,
    SgdConfig,
    build_vocab,
    char_ngrams,
    embed_text,
    fnv1a,
    load_table,
    normalize,
    ns_loss,
    sample_pairs,
    save_table,
    train_skipgram,
)
from placededup.vectors import FormatError

from oracles import central_diff, rel_err


def test_gazetteer_phrase_stripped():
    cfg = NormalizerConfig(gazetteer=frozenset({"new york"}))
    assert normalize("Time Square New York", cfg) == ["time", "square"]


def test_special_characters_become_spaces():
    assert normalize("Corner $ Deli") == ["corner", "deli"]
    assert normalize("Café☕Noir") == ["café", "noir"]


def test_empty_text():
    assert normalize("") == []


def test_gazetteer_strips_both_ends_repeatedly_but_never_to_nothing():
    cfg = NormalizerConfig(gazetteer=frozenset({"NYC", "new  york", "manhattan"}))
    assert normalize("Manhattan, Times Square NYC New York", cfg) == ["times", "square"]
    assert normalize("New York", cfg) == ["new", "york"]
    assert cfg.gazetteer == {"nyc", "new york", "manhattan"}


def test_lowercase_off_keeps_case():
    assert normalize("Blue Bottle", NormalizerConfig(lowercase=False)) == ["Blue", "Bottle"]


@pytest.mark.invariant
@given(st.text(max_size=40), st.sets(st.sampled_from(["new york", "la", "san jose", "x"]), max_size=3))
def test_normalize_is_idempotent(text, gaz):
    cfg = NormalizerConfig(gazetteer=frozenset(gaz))
    once = normalize(text, cfg)
    assert normalize(" ".join(once), cfg) == once


def test_vocab_examples():
    corpus = [["a", "b"], ["a"]]
    v = build_vocab(corpus, min_count=2)
    assert v.tokens == ["a"] and v.count("a") == 2
    assert set(build_vocab(corpus, min_count=1).tokens) == {"a", "b"}
    with pytest.raises(EmptyVocabularyError):
        build_vocab(corpus, min_count=3)
    with pytest.raises(EmptyVocabularyError):
        build_vocab([], min_count=1)


@pytest.mark.invariant
@given(st.lists(st.lists(st.sampled_from("abcdefg"), max_size=6), min_size=1, max_size=10), st.integers(1, 3))
def test_vocab_invariants(corpus, min_count):
    try:
        v = build_vocab(corpus, min_count)
    except EmptyVocabularyError:
        return
    flat = [t for doc in corpus for t in doc]
    assert sorted(v.index.values()) == list(range(len(v)))
    for t in v.tokens:
        assert v.count(t) == flat.count(t) >= min_count
    assert all(flat.count(t) < min_count for t in set(flat) - set(v.tokens))


def test_full_window_pairs():
    v = build_vocab([["a", "b", "c"]])
    a, b, c = (v.index[t] for t in "abc")
    assert sorted(sample_pairs(["a", "b", "c"], v)) == sorted([(a, b), (a, c), (b, a), (b, c), (c, a), (c, b)])
    assert sample_pairs(["a"], v) == []
    assert sample_pairs(["a", "a"], v) == [(a, a), (a, a)]
    assert sample_pairs(["a", "zzz"], v) == []


@pytest.mark.invariant
@given(st.lists(st.sampled_from("abcd"), max_size=8))
def test_full_window_pair_count(tokens):
    v = build_vocab([list("abcd")])
    n = len(tokens)
    assert len(sample_pairs(tokens, v)) == (n * (n - 1) if n >= 2 else 0)


def test_fnv1a_reference_values():
    # published FNV-1a 32-bit test vectors
    assert fnv1a(b"") == 0x811C9DC5
    assert fnv1a(b"a") == 0xE40C292C
    assert fnv1a(b"foobar") == 0xBF9CF968


def test_char_ngrams_are_framed():
    assert char_ngrams("ab", 3, 4) == ["<ab", "ab>", "<ab>"]


def test_ns_gradient_matches_finite_differences(rng):
    for _ in range(20):
        u, vp, vn = rng.normal(size=6), rng.normal(size=6), rng.normal(size=(4, 6))
        _, gu, gp, gn = ns_loss(u, vp, vn)
        for x, g in ((u, gu), (vp, gp), (vn, gn)):
            fd = central_diff(lambda: ns_loss(u, vp, vn)[0], x)
            assert rel_err(g, fd) <= 1e-4


def test_ns_loss_at_zero_scores():
    loss, *_ = ns_loss(np.zeros(3), np.ones(3), np.ones((2, 3)))
    assert loss == pytest.approx(3 * np.log(2))


def _corpus():
    rng = np.random.default_rng(0)
    shared = ["cafe", "bakery", "bistro", "grill"]
    corpus = []
    for _ in range(300):
        ctx = list(rng.choice(shared, size=2, replace=False))
        corpus.append([rng.choice(["plaza", "square"])] + ctx)
        corpus.append(["random"] + list(rng.choice(["tire", "auto", "garage"], size=2, replace=False)))
    return corpus


def test_training_shape_and_determinism():
    corpus = [["a", "b", "c"], ["c", "d", "e"], ["a", "e"]]
    vocab = build_vocab(corpus)
    tables = [train_skipgram(corpus, vocab, SgdConfig(seed=7), dim=8) for _ in range(2)]
    assert tables[0].vectors.shape == (5, 8)
    assert tables[0].vectors.tobytes() == tables[1].vectors.tobytes()
    assert tables[0].buckets is None


@pytest.mark.parametrize("subword", [False, True])
def test_shared_contexts_make_words_similar(subword):
    corpus = _corpus()
    vocab = build_vocab(corpus)
    table = train_skipgram(corpus, vocab, SgdConfig(epochs=10, seed=1), subword=subword, dim=16, n_buckets=2**12)

    def cos(a, b):
        x, y = table.token_vector(a), table.token_vector(b)
        return x @ y / np.linalg.norm(x) / np.linalg.norm(y)

    assert cos("plaza", "square") > cos("plaza", "random")


def test_loss_decreases_over_epochs():
    history = []
    corpus = _corpus()
    train_skipgram(corpus, build_vocab(corpus), SgdConfig(epochs=5, seed=3), dim=16, history=history)
    assert len(history) == 5 and history[-1] < history[0]


def test_subword_table_handles_oov():
    corpus = [["pizza", "place"], ["pizzeria", "place"]]
    table = train_skipgram(corpus, build_vocab(corpus), SgdConfig(seed=0), subword=True, dim=4, n_buckets=64)
    assert table.subword and table.buckets.shape == (64, 4)
    assert table.token_vector("pizzas") is not None
    assert embed_text(["pizzas"], table).empty is False


def _table(words, rng, dim=3, subword=False):
    buckets = rng.normal(size=(16, dim)) if subword else None
    return EmbeddingTable(list(words), rng.normal(size=(len(words), dim)), buckets)


def test_embed_text_examples(rng):
    t = EmbeddingTable(["x", "y"], np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]))
    assert np.array_equal(embed_text(["x", "y"], t).vector, [1.0, 2.0, 3.0])
    empty = embed_text([], t)
    assert empty.empty and np.array_equal(empty.vector, np.zeros(3))
    assert embed_text(["unknown"], t).empty


@pytest.mark.invariant
@given(st.permutations(["a", "b", "c", "a", "zz"]), st.floats(0.1, 10))
def test_embed_text_permutation_invariant_and_linear(tokens, lam):
    rng = np.random.default_rng(5)
    for subword in (False, True):
        t = _table("abc", rng, subword=subword)
        base = embed_text(["a", "b", "c", "a", "zz"], t).vector
        assert np.allclose(embed_text(tokens, t).vector, base, rtol=1e-12, atol=1e-12)
        scaled = EmbeddingTable(t.words, lam * t.vectors, None if t.buckets is None else lam * t.buckets)
        assert np.allclose(embed_text(tokens, scaled).vector, lam * base, rtol=1e-10, atol=1e-12)


def test_table_round_trip(tmp_path, rng):
    t = _table(["ab", "cd"], rng, subword=True)
    save_table(t, tmp_path / "t.txt")
    assert (tmp_path / "t.txt").read_text().splitlines()[0] == "2 3"
    back = load_table(tmp_path / "t.txt")
    assert back.words == t.words and back.context is None
    assert back.vectors.tobytes() == t.vectors.tobytes() and back.buckets.tobytes() == t.buckets.tobytes()


def test_pretrained_file_without_buckets(tmp_path):
    (tmp_path / "pre.txt").write_text("2 3\nhello 1 2 3\nworld 4 5 6\n")
    t = load_table(tmp_path / "pre.txt")
    assert not t.subword and np.array_equal(t.token_vector("world"), [4.0, 5.0, 6.0])


def test_short_row_is_format_error(tmp_path):
    (tmp_path / "bad.txt").write_text("2 3\nhello 1 2 3\nworld 4 5\n")
    with pytest.raises(FormatError):
        load_table(tmp_path / "bad.txt")
