import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from styletx import corpus
from styletx.corpus import (
    EOS,
    PAD,
    UNK,
    EmptyInputError,
    NgramLM,
    SpecError,
    SplitSpec,
    build_vocab,
    decode_to_text,
    encode,
    gen_synthetic,
    moore_lewis_scores,
    moore_lewis_select,
    synthetic_vocabulary,
    three_way_split,
)


# ---------------------------------------------------------------------------
# vocabulary


def test_build_vocab_frequency_order():
    vocab = build_vocab(["a b", "a"], min_count=1)
    assert vocab.lookup("a") == 4
    assert vocab.lookup("b") == 5


def test_build_vocab_min_count_threshold():
    vocab = build_vocab(["a b", "a"], min_count=2)
    assert vocab.lookup("a") == 4
    assert vocab.lookup("b") == UNK


def test_build_vocab_tie_is_lexicographic():
    vocab = build_vocab(["zebra apple", "zebra apple"])
    assert vocab.lookup("apple") < vocab.lookup("zebra")


def test_build_vocab_empty_corpus():
    with pytest.raises(EmptyInputError):
        build_vocab([])


def test_vocab_file_round_trip(tmp_path):
    vocab = build_vocab(["the food was great", "the soup was cold"])
    path = tmp_path / "vocab.txt"
    vocab.to_file(path)
    loaded = corpus.Vocab.from_file(path)
    assert loaded.id_to_token == vocab.id_to_token
    # line number = id - 4
    lines = path.read_text().splitlines()
    assert lines[vocab.lookup("food") - 4] == "food"


# ---------------------------------------------------------------------------
# encoding


def test_encode_simple_case():
    vocab = build_vocab(["good food"])
    seq = encode("good food", vocab, max_len=5)
    assert seq.ids.tolist() == [vocab.lookup("good"), vocab.lookup("food"), EOS, PAD, PAD]
    assert seq.true_len == 3


def test_encode_truncates_long_sentences():
    vocab = build_vocab(["w"])
    seq = encode(" ".join(["w"] * 25), vocab, max_len=20)
    assert seq.true_len == 20
    assert seq.ids[-1] == EOS
    assert (seq.ids[:19] == vocab.lookup("w")).all()


def test_encode_unknown_token_maps_to_unk():
    vocab = build_vocab(["known"])
    seq = encode("mystery", vocab, max_len=4)
    assert seq.ids[0] == UNK


def test_encode_empty_sentence():
    vocab = build_vocab(["x"])
    with pytest.raises(EmptyInputError):
        encode("   ", vocab, max_len=5)


def test_encode_max_len_validation():
    vocab = build_vocab(["x"])
    with pytest.raises(SpecError):
        encode("x", vocab, max_len=1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["spoon", "fork", "cup", "dish", "tray"]), min_size=1, max_size=8))
def test_encode_decode_round_trip(words):
    sentence = " ".join(words)
    vocab = build_vocab([" ".join(["spoon", "fork", "cup", "dish", "tray"])])
    seq = encode(sentence, vocab, max_len=10)
    assert decode_to_text(seq.ids, vocab) == sentence


# ---------------------------------------------------------------------------
# splitting


def test_split_degenerate_everything_in_part_one():
    parts = three_way_split([f"s{i}" for i in range(10)], SplitSpec(parts=(1.0, 0.0, 0.0)), seed=0)
    assert len(parts[0].all_sentences()) == 10
    assert len(parts[1].all_sentences()) == 0 and len(parts[2].all_sentences()) == 0


def test_split_exact_fraction_sizes():
    sentences = [f"s{i}" for i in range(100)]
    parts = three_way_split(sentences, SplitSpec(parts=(0.5, 0.25, 0.25)), seed=3)
    assert [len(p.all_sentences()) for p in parts] == [50, 25, 25]


def test_split_same_seed_identical():
    sentences = [f"s{i}" for i in range(57)]
    a = three_way_split(sentences, SplitSpec(), seed=11)
    b = three_way_split(sentences, SplitSpec(), seed=11)
    for pa, pb in zip(a, b):
        assert pa.train.sentences == pb.train.sentences
        assert pa.test.sentences == pb.test.sentences
        assert pa.val.sentences == pb.val.sentences


def test_split_fraction_validation():
    with pytest.raises(SpecError):
        SplitSpec(parts=(0.7, 0.3, 0.3))


def test_split_carries_labels():
    sentences = [f"s{i}" for i in range(30)]
    labels = [str(i % 2) for i in range(30)]
    parts = three_way_split(sentences, SplitSpec(), seed=5, labels=labels)
    for part in parts:
        for ds in (part.train, part.test, part.val):
            for s, l in zip(ds.sentences, ds.labels):
                assert l == str(int(s[1:]) % 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31), st.integers(min_value=3, max_value=200))
def test_split_parts_pairwise_disjoint(seed, n):
    sentences = [f"unique sentence {i}" for i in range(n)]
    parts = three_way_split(sentences, SplitSpec(), seed=seed)
    sets = [set(p.all_sentences()) for p in parts]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    assert sum(len(s) for s in sets) == len(set(sentences))


# ---------------------------------------------------------------------------
# cross-entropy-difference selection


def bigram_ce_oracle(sentence, train_sentences, alpha=0.1):
    # independent scalar computation of the add-alpha bigram cross-entropy
    vocab = set()
    for s in train_sentences:
        vocab.update(s.split())
    v = len(vocab) + 1
    unigrams, bigrams = {}, {}
    for s in train_sentences:
        toks = ["<s>"] + s.split()
        for i in range(1, len(toks)):
            bigrams[(toks[i - 1], toks[i])] = bigrams.get((toks[i - 1], toks[i]), 0) + 1
            unigrams[toks[i - 1]] = unigrams.get(toks[i - 1], 0) + 1
    toks = [t if t in vocab else "<unk>" for t in sentence.split()]
    toks = ["<s>"] + toks
    total = 0.0
    for i in range(1, len(toks)):
        num = bigrams.get((toks[i - 1], toks[i]), 0) + alpha
        den = unigrams.get(toks[i - 1], 0) + alpha * v
        total -= math.log(num / den)
    return total / (len(toks) - 1)


def test_ngram_ce_matches_hand_computed_bigram():
    train = ["the cat sat", "the dog sat", "a cat ran"]
    lm = NgramLM(order=2).fit(train)
    for sentence in ["the cat ran", "a dog sat", "unknown words here"]:
        expected = bigram_ce_oracle(sentence, train)
        assert lm.per_token_cross_entropy(sentence) == pytest.approx(expected, rel=1e-12)


def test_moore_lewis_ordering_matches_bigram_oracle():
    in_domain = ["the food was great", "the soup was great", "the bread was fine"]
    out_domain = ["stocks fell sharply today", "markets closed lower", "shares dropped again"]
    pool = ["the food was fine", "markets fell again", "the bread was great"]
    scores = moore_lewis_scores(pool, in_domain, out_domain, order=2)
    expected = [bigram_ce_oracle(s, in_domain) - bigram_ce_oracle(s, out_domain) for s in pool]
    assert scores == pytest.approx(expected, rel=1e-12)
    picked = moore_lewis_select(pool, in_domain, out_domain, keep_fraction=2 / 3, order=2)
    ranked = sorted(range(3), key=lambda i: expected[i])
    assert picked == [pool[i] for i in sorted(ranked[:2])]


def test_moore_lewis_verbatim_in_domain_ranks_first():
    in_domain = ["alpha beta gamma", "alpha gamma beta", "beta alpha gamma"]
    out_domain = ["delta epsilon zeta", "zeta delta epsilon", "epsilon zeta delta"]
    pool = ["delta epsilon zeta", "alpha beta gamma", "zeta epsilon delta"]
    scores = moore_lewis_scores(pool, in_domain, out_domain)
    assert int(np.argmin(scores)) == 1
    assert moore_lewis_select(pool, in_domain, out_domain, keep_fraction=1 / 3) == ["alpha beta gamma"]


def test_moore_lewis_keep_all_is_identity():
    pool = ["b b", "a a", "c c"]
    assert moore_lewis_select(pool, ["a a"], ["c c"], keep_fraction=1.0) == pool


def test_moore_lewis_equal_domains_scores_zero_stable_prefix():
    domain = ["one two three", "two three four", "three four five"]
    pool = ["one two", "four five", "two four"]
    scores = moore_lewis_scores(pool, domain, domain)
    assert all(abs(s) < 1e-12 for s in scores)
    assert moore_lewis_select(pool, domain, domain, keep_fraction=2 / 3) == pool[:2]


def test_moore_lewis_validation():
    with pytest.raises(SpecError):
        moore_lewis_select(["x"], ["x"], ["x"], keep_fraction=0.0)
    with pytest.raises(EmptyInputError):
        moore_lewis_select([], ["x"], ["x"], keep_fraction=0.5)


# ---------------------------------------------------------------------------
# synthetic corpora


def test_synthetic_vocabulary_is_small():
    assert len(synthetic_vocabulary()) + 4 <= 100


def test_synthetic_determinism():
    a = gen_synthetic(seed=9, n_source=50, n_target=40, mix=(0.3, 0.7, 0.0))
    b = gen_synthetic(seed=9, n_source=50, n_target=40, mix=(0.3, 0.7, 0.0))
    assert a.source == b.source and a.target == b.target and a.source_styles == b.source_styles


def test_synthetic_target_has_no_anti_style_collocations():
    data = gen_synthetic(seed=1, n_source=10, n_target=300, mix=(0.0, 1.0, 0.0))
    forbidden = set(corpus.STYLE_PAIRS["b"]) | set(corpus.STYLE_PAIRS["n"])
    for sentence in data.target:
        pairs = corpus.sentence_pairs(sentence)
        assert pairs, sentence  # every sentence carries at least one collocation
        assert not (set(pairs) & forbidden), sentence


def test_synthetic_lengths_in_range():
    data = gen_synthetic(seed=2, n_source=300, n_target=300, mix=(0.2, 0.5, 0.3))
    lengths = [len(s.split()) for s in data.source + data.target]
    assert min(lengths) >= 4 and max(lengths) <= 12
    assert max(lengths) == 12  # the grammar does reach its longest template


def test_synthetic_pure_anti_mix():
    data = gen_synthetic(seed=3, n_source=200, n_target=10, mix=(0.0, 1.0, 0.0))
    assert set(data.source_styles) == {"b"}


def test_synthetic_mixture_fractions_roughly_match():
    data = gen_synthetic(seed=4, n_source=3000, n_target=10, mix=(0.3, 0.7, 0.0))
    frac_a = data.source_styles.count("a") / 3000
    assert 0.25 < frac_a < 0.35
    assert data.source_styles.count("n") == 0


def test_synthetic_style_labels_match_collocation_usage():
    data = gen_synthetic(seed=5, n_source=400, n_target=0, mix=(0.3, 0.4, 0.3))
    for sentence, style in zip(data.source, data.source_styles):
        pairs = set(corpus.sentence_pairs(sentence))
        own = set(corpus.STYLE_PAIRS[style])
        others = set()
        for other in "abn".replace(style, ""):
            others |= set(corpus.STYLE_PAIRS[other])
        assert pairs and pairs <= own
        assert not (pairs & others)


def test_synthetic_styles_share_all_unigrams_within_domain():
    # no single token may betray the style: target-styled and anti-styled
    # source sentences use identical vocabularies
    data = gen_synthetic(seed=6, n_source=2000, n_target=10, mix=(0.5, 0.5, 0.0))
    a_tokens = set(t for s, y in zip(data.source, data.source_styles)
                   for t in s.split() if y == "a")
    b_tokens = set(t for s, y in zip(data.source, data.source_styles)
                   for t in s.split() if y == "b")
    assert a_tokens == b_tokens


def test_synthetic_domains_have_partial_noun_overlap():
    data = gen_synthetic(seed=7, n_source=800, n_target=800, mix=(0.0, 1.0, 0.0))
    source_tokens = set(t for s in data.source for t in s.split())
    target_tokens = set(t for s in data.target for t in s.split())
    assert set(corpus.NOUNS_SHARED) <= source_tokens & target_tokens
    assert set(corpus.NOUNS_SOURCE).isdisjoint(target_tokens)
    assert set(corpus.NOUNS_TARGET).isdisjoint(source_tokens)


def test_synthetic_mix_validation():
    with pytest.raises(SpecError):
        gen_synthetic(seed=0, n_source=5, n_target=5, mix=(0.5, 0.2, 0.1))


def test_line_io_round_trip(tmp_path):
    lines = ["the food was great", "sadly the soup was stale"]
    path = tmp_path / "c.txt"
    corpus.write_lines(path, lines)
    assert corpus.read_lines(path) == lines
