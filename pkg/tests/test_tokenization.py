import pytest

from polyasr.data import default_language_specs, generate_corpus
from polyasr.tokenization import (
    BLANK_ID,
    BLANK_TOKEN,
    UNK_ID,
    UNK_TOKEN,
    LanguageRegistry,
    OOVError,
    Strategy,
    TokenizationError,
    build_vocabulary,
    decode,
    encode,
    extract_char,
    load_vocabulary,
    save_vocabulary,
    tokens_per_second_stats,
    train_bpe,
)


@pytest.fixture(scope="module")
def small_manifest():
    # Downscaled registry: same shape as the shipped one, quick to build.
    specs = default_language_specs(feature_dim=8)
    counts = {"alpha": 24, "beta": 16, "gamma": 10, "sigma": 60}
    return generate_corpus(specs, counts, seed=7)


@pytest.fixture(scope="module")
def small_registry(small_manifest):
    return LanguageRegistry.from_corpora(small_manifest.transcripts_by_language(), threshold=40)


class TestExtractChar:
    def test_dedup_and_order(self):
        assert extract_char(["ab", "ba"]).tokens == ("a", "b")

    def test_empty(self):
        assert extract_char([""]).tokens == ()
        assert extract_char([]).tokens == ()

    def test_separator_is_a_token(self):
        assert " " in extract_char(["a b"]).tokens

    def test_large_alphabet_coverage(self):
        # Independent scan of the generated corpus must agree with extract_char.
        spec = next(s for s in default_language_specs(feature_dim=4) if s.language_id == "sigma")
        corpus = [u.transcript for u in generate_corpus([spec], {"sigma": 500}, seed=42).utterances]
        distinct = set()
        for text in corpus:
            distinct.update(text)
        vocab = extract_char(corpus)
        assert len(vocab) == len(distinct)
        assert len(vocab) == 601  # 600 symbols + separator at this seed
        assert len(distinct) > 512


class TestTrainBpe:
    def test_fixture_merges(self):
        sw = train_bpe(["aaab", "aaab"], size_cap=4)
        assert sw.base_chars.tokens == ("a", "b")
        assert sw.merges == (("a", "a"), ("aa", "a"))
        assert set(sw.tokens) == {"a", "b", "aa", "aaa"}

    def test_cap_equal_to_alphabet(self):
        sw = train_bpe(["abcabc"], size_cap=3)
        assert sw.merges == ()
        assert sw.tokens == ("a", "b", "c")

    def test_single_merge(self):
        sw = train_bpe(["xy"], size_cap=3)
        assert sw.merges == (("x", "y"),)
        assert set(sw.tokens) == {"x", "y", "xy"}

    def test_cap_below_alphabet(self):
        with pytest.raises(TokenizationError, match="cap below alphabet"):
            train_bpe(["abc"], size_cap=2)

    def test_merges_never_cross_separator(self):
        sw = train_bpe(["a b a b a b"], size_cap=10)
        assert all(" " not in left + right for left, right in sw.merges)

    def test_cap_respected_and_base_included(self, small_registry):
        corpus = small_registry.corpora["alpha"]
        sw = train_bpe(corpus, size_cap=64)
        assert len(sw.tokens) <= 64
        assert set(sw.base_chars.tokens) <= set(sw.tokens)

    def test_deterministic(self, small_registry):
        corpus = small_registry.corpora["beta"]
        assert train_bpe(corpus, 48) == train_bpe(corpus, 48)


class TestBuildVocabulary:
    def test_shared_char_union(self):
        registry = LanguageRegistry.from_corpora({"l1": ["abc"], "l2": ["bcd"]})
        vocab = build_vocabulary(registry, Strategy.SHARED_CHAR)
        assert vocab.shared.content_tokens == ("a", "b", "c", "d")
        assert vocab.shared.tokens[BLANK_ID] == BLANK_TOKEN
        assert vocab.shared.tokens[UNK_ID] == UNK_TOKEN

    def test_hybrid_partitions_by_threshold(self, small_registry):
        vocab = build_vocabulary(
            small_registry, Strategy.SHARED_CHAR_SUBWORD, threshold=40, subword_cap=48
        )
        kinds = dict(zip(vocab.shared.tokens, vocab.shared.kinds))
        # sigma (600 symbols) stays char; the small-alphabet languages go subword.
        assert vocab.encoder_for("sigma").mode == "char"
        for lang in ("alpha", "beta", "gamma"):
            assert vocab.encoder_for(lang).mode == "subword"
        sigma_chars = extract_char(small_registry.corpora["sigma"]).tokens
        non_sep = [c for c in sigma_chars if c != " "]
        assert all(kinds[c] == "char" for c in non_sep)
        # base letters of a subword language are present inside the inventory
        alpha_base = extract_char(small_registry.corpora["alpha"]).tokens
        assert set(alpha_base) <= set(vocab.shared.tokens)

    def test_threshold_rule_flips_with_threshold(self, small_registry):
        all_subword = build_vocabulary(
            small_registry, Strategy.SHARED_CHAR_SUBWORD, threshold=10**9, subword_cap=700
        )
        assert all(enc.mode == "subword" for enc in all_subword.encoders.values())
        all_char = build_vocabulary(small_registry, Strategy.SHARED_CHAR_SUBWORD, threshold=1)
        assert all(enc.mode == "char" for enc in all_char.encoders.values())

    def test_language_specific_each_with_blank(self, small_registry):
        vocab = build_vocabulary(small_registry, Strategy.LANGUAGE_SPECIFIC, threshold=40)
        assert set(vocab.per_language) == set(small_registry.languages)
        for table in vocab.per_language.values():
            assert table.tokens[BLANK_ID] == BLANK_TOKEN
            assert table.kinds.count("blank") == 1

    def test_union_idempotent(self, small_registry):
        a = build_vocabulary(small_registry, Strategy.SHARED_CHAR)
        b = build_vocabulary(small_registry, Strategy.SHARED_CHAR)
        assert a.shared.tokens == b.shared.tokens

    def test_union_monotone_in_languages(self, small_registry):
        partial = LanguageRegistry.from_corpora(
            {lang: small_registry.corpora[lang] for lang in small_registry.languages[:2]}
        )
        small = build_vocabulary(partial, Strategy.SHARED_CHAR)
        full = build_vocabulary(small_registry, Strategy.SHARED_CHAR)
        assert set(small.shared.tokens) <= set(full.shared.tokens)

    def test_bad_inputs(self, small_registry):
        with pytest.raises(TokenizationError):
            build_vocabulary(small_registry, "no-such-strategy")
        with pytest.raises(TokenizationError):
            build_vocabulary(small_registry, Strategy.SHARED_CHAR, threshold=0)
        with pytest.raises(TokenizationError):
            build_vocabulary(
                LanguageRegistry.from_corpora({"l1": []}), Strategy.SHARED_CHAR
            )


class TestEncodeDecode:
    def test_subword_replay(self):
        registry = LanguageRegistry.from_corpora({"l1": ["aaab", "aaab"]}, threshold=10)
        vocab = build_vocabulary(registry, Strategy.LANGUAGE_SPECIFIC, threshold=10, subword_cap=4)
        table = vocab.per_language["l1"]
        ids = encode("aaab", vocab, "l1")
        assert [table.tokens[i] for i in ids] == ["aaa", "b"]
        assert decode(ids, vocab, "l1") == "aaab"

    def test_empty_text(self, small_registry):
        vocab = build_vocabulary(small_registry, Strategy.SHARED_CHAR)
        assert encode("", vocab, "alpha") == []

    def test_strict_oov_names_symbol(self):
        registry = LanguageRegistry.from_corpora({"l1": ["ab"]})
        vocab = build_vocabulary(registry, Strategy.SHARED_CHAR)
        with pytest.raises(OOVError, match="'z'"):
            encode("abz", vocab, "l1")

    def test_lenient_maps_to_unk(self):
        registry = LanguageRegistry.from_corpora({"l1": ["ab"]})
        vocab = build_vocabulary(registry, Strategy.SHARED_CHAR)
        assert encode("abz", vocab, "l1", mode="lenient") == [
            encode("a", vocab, "l1")[0],
            encode("b", vocab, "l1")[0],
            UNK_ID,
        ]

    def test_blank_decodes_to_empty(self, small_registry):
        vocab = build_vocabulary(small_registry, Strategy.SHARED_CHAR)
        assert decode([BLANK_ID], vocab, "alpha") == ""

    def test_out_of_range_id(self, small_registry):
        vocab = build_vocabulary(small_registry, Strategy.SHARED_CHAR)
        with pytest.raises(TokenizationError):
            decode([10**6], vocab, "alpha")

    @pytest.mark.parametrize(
        "strategy",
        [Strategy.SHARED_CHAR, Strategy.SHARED_CHAR_SUBWORD, Strategy.LANGUAGE_SPECIFIC],
    )
    def test_roundtrip_all_transcripts(self, small_manifest, small_registry, strategy):
        vocab = build_vocabulary(small_registry, strategy, threshold=40, subword_cap=48)
        for utt in small_manifest.utterances:
            ids = encode(utt.transcript, vocab, utt.language_id)
            assert decode(ids, vocab, utt.language_id) == utt.transcript


class TestStats:
    def test_single_utterance_rate(self, small_manifest, small_registry):
        vocab = build_vocabulary(small_registry, Strategy.SHARED_CHAR)

        class FakeUtt:
            utterance_id = "u0"
            language_id = "alpha"
            transcript = "ab abc abab"  # 11 chars
            duration = 2.2

        class FakeManifest:
            utterances = [FakeUtt()]

        stats = tokens_per_second_stats(FakeManifest(), vocab)
        assert stats.per_language["alpha"] == pytest.approx(5.0)

    def test_two_language_summary(self, small_registry):
        vocab = build_vocabulary(small_registry, Strategy.SHARED_CHAR)

        def utt(lang, text, dur):
            return type(
                "U", (), {"utterance_id": "x", "language_id": lang, "transcript": text, "duration": dur}
            )()

        manifest = type("M", (), {"utterances": [utt("alpha", "abcd", 1.0), utt("beta", extract_char(small_registry.corpora["beta"]).tokens[0] * 6, 1.0)]})()
        stats = tokens_per_second_stats(manifest, vocab)
        assert stats.mean == pytest.approx(5.0)
        assert stats.std == pytest.approx(1.0)
        assert stats.max == pytest.approx(6.0)
        assert stats.min == pytest.approx(4.0)

    def test_zero_duration_rejected(self, small_registry):
        vocab = build_vocabulary(small_registry, Strategy.SHARED_CHAR)
        bad = type(
            "M",
            (),
            {
                "utterances": [
                    type(
                        "U",
                        (),
                        {"utterance_id": "u", "language_id": "alpha", "transcript": "ab", "duration": 0.0},
                    )()
                ]
            },
        )()
        with pytest.raises(TokenizationError):
            tokens_per_second_stats(bad, vocab)

    def test_rate_dominance_on_small_registry(self, small_manifest, small_registry):
        char_stats = tokens_per_second_stats(
            small_manifest, build_vocabulary(small_registry, Strategy.SHARED_CHAR)
        )
        hybrid_stats = tokens_per_second_stats(
            small_manifest,
            build_vocabulary(small_registry, Strategy.SHARED_CHAR_SUBWORD, threshold=40, subword_cap=48),
        )
        assert char_stats.std > hybrid_stats.std
        assert char_stats.mean > hybrid_stats.mean


class TestVocabularyFiles:
    @pytest.mark.parametrize(
        "strategy",
        [Strategy.SHARED_CHAR, Strategy.SHARED_CHAR_SUBWORD, Strategy.LANGUAGE_SPECIFIC],
    )
    def test_roundtrip_byte_exact(self, tmp_path, small_manifest, small_registry, strategy):
        vocab = build_vocabulary(small_registry, strategy, threshold=40, subword_cap=48)
        first = tmp_path / "v1"
        written = save_vocabulary(vocab, first)
        reloaded = load_vocabulary(first)
        second = tmp_path / "v2"
        save_vocabulary(reloaded, second)
        for path in written:
            assert (second / path.name).read_bytes() == path.read_bytes()
        # reloaded vocabulary encodes identically
        for utt in small_manifest.utterances[:20]:
            assert encode(utt.transcript, reloaded, utt.language_id) == encode(
                utt.transcript, vocab, utt.language_id
            )

    def test_escaping(self, tmp_path):
        registry = LanguageRegistry.from_corpora({"l1": ["a\tb c\nd"]})
        vocab = build_vocabulary(registry, Strategy.SHARED_CHAR)
        save_vocabulary(vocab, tmp_path)
        reloaded = load_vocabulary(tmp_path)
        assert reloaded.shared.tokens == vocab.shared.tokens
