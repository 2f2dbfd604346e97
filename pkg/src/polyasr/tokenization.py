"""Vocabulary construction and tokenization for multilingual corpora.

Three strategies are supported:

* ``shared-char``         one union inventory of every language's characters
* ``shared-char-subword`` characters for large-alphabet languages, capped BPE
                          subwords for the rest, unioned into one inventory
* ``lang-specific``       one blank-augmented inventory per language

Every inventory reserves id 0 for blank and id 1 for the unknown token.  A
single separator character delimits words; it is an ordinary token in both
char and subword modes and BPE merges never cross it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

BLANK_ID = 0
UNK_ID = 1
BLANK_TOKEN = "<blank>"
UNK_TOKEN = "<unk>"
DEFAULT_SEPARATOR = " "
DEFAULT_THRESHOLD = 512
DEFAULT_SUBWORD_CAP = 512


class TokenizationError(ValueError):
    pass


class OOVError(TokenizationError):
    """Raised in strict mode when text contains symbols outside the vocabulary."""

    def __init__(self, symbol: str, language_id: str):
        self.symbol = symbol
        self.language_id = language_id
        super().__init__(
            f"symbol {symbol!r} of language {language_id!r} is not in the vocabulary"
        )


class Strategy(enum.Enum):
    SHARED_CHAR = "shared-char"
    SHARED_CHAR_SUBWORD = "shared-char-subword"
    LANGUAGE_SPECIFIC = "lang-specific"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        for member in cls:
            if member.value == name:
                return member
        valid = ", ".join(m.value for m in cls)
        raise TokenizationError(f"unknown strategy {name!r} (expected one of: {valid})")


@dataclass(frozen=True)
class CharVocab:
    """Distinct characters of a corpus, first-occurrence ordered."""

    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SubwordVocab:
    """Base characters plus ordered merge products from frequency-greedy BPE."""

    base_chars: CharVocab
    merges: tuple[tuple[str, str], ...]
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)


def extract_char(corpus: Iterable[str]) -> CharVocab:
    """Every distinct character (separator included), first-occurrence ordered."""
    seen: dict[str, None] = {}
    for transcript in corpus:
        for ch in transcript:
            seen.setdefault(ch)
    return CharVocab(tokens=tuple(seen))


def _merge_pass(seq: list[str], left: str, right: str) -> list[str]:
    out: list[str] = []
    i, n = 0, len(seq)
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def train_bpe(
    corpus: Sequence[str], size_cap: int, separator: str = DEFAULT_SEPARATOR
) -> SubwordVocab:
    """Frequency-greedy BPE over word-internal adjacent pairs.

    The pair with the highest count wins each round; ties go to the pair whose
    first occurrence comes earliest in corpus scan order.  Merges never cross
    the word separator.
    """
    base = extract_char(corpus)
    if size_cap < len(base):
        raise TokenizationError(
            f"cap below alphabet: size_cap={size_cap} < {len(base)} base characters"
        )
    # Collapse to word types; the earliest corpus position of each type gives
    # the same tie-break ordering as scanning every word instance.
    word_counts: dict[tuple[str, ...], int] = {}
    word_first_pos: dict[tuple[str, ...], int] = {}
    position = 0
    for transcript in corpus:
        for word in transcript.split(separator):
            if not word:
                continue
            key = tuple(word)
            word_counts[key] = word_counts.get(key, 0) + 1
            word_first_pos.setdefault(key, position)
            position += 1

    words = {key: list(key) for key in word_counts}
    tokens = list(base.tokens)
    token_set = set(tokens)
    merges: list[tuple[str, str]] = []
    while len(tokens) < size_cap:
        counts: dict[tuple[str, str], int] = {}
        first_occ: dict[tuple[str, str], tuple[int, int]] = {}
        for key, seq in words.items():
            count = word_counts[key]
            pos = word_first_pos[key]
            for i in range(len(seq) - 1):
                pair = (seq[i], seq[i + 1])
                counts[pair] = counts.get(pair, 0) + count
                occ = (pos, i)
                if pair not in first_occ or occ < first_occ[pair]:
                    first_occ[pair] = occ
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], first_occ[p]))
        merges.append(best)
        product = best[0] + best[1]
        if product not in token_set:
            tokens.append(product)
            token_set.add(product)
        for key in words:
            words[key] = _merge_pass(words[key], *best)
    return SubwordVocab(base_chars=base, merges=tuple(merges), tokens=tuple(tokens))


@dataclass(frozen=True)
class LanguageRegistry:
    """Ordered languages with their corpora and alphabet-size classification."""

    languages: tuple[str, ...]
    corpora: Mapping[str, tuple[str, ...]]
    distinct_counts: Mapping[str, int]
    threshold: int = DEFAULT_THRESHOLD

    def __post_init__(self):
        if len(set(self.languages)) != len(self.languages):
            raise TokenizationError("language ids must be unique")

    @classmethod
    def from_corpora(
        cls, corpora: Mapping[str, Sequence[str]], threshold: int = DEFAULT_THRESHOLD
    ) -> "LanguageRegistry":
        languages = tuple(corpora)
        frozen = {lang: tuple(corpora[lang]) for lang in languages}
        counts = {lang: len(extract_char(frozen[lang])) for lang in languages}
        return cls(
            languages=languages, corpora=frozen, distinct_counts=counts, threshold=threshold
        )

    def large_alphabet(self, language_id: str, threshold: int | None = None) -> bool:
        threshold = self.threshold if threshold is None else threshold
        return self.distinct_counts[language_id] > threshold


class LanguageEncoder:
    """Per-language tokenizer: char passthrough or BPE merge replay."""

    def __init__(
        self,
        mode: str,
        merges: tuple[tuple[str, str], ...] = (),
        separator: str = DEFAULT_SEPARATOR,
    ):
        if mode not in ("char", "subword"):
            raise TokenizationError(f"unknown encoder mode {mode!r}")
        self.mode = mode
        self.merges = merges
        self.separator = separator
        self._cache: dict[str, tuple[str, ...]] = {}

    def tokenize(self, text: str) -> list[str]:
        if self.mode == "char":
            return list(text)
        out: list[str] = []
        sep = self.separator
        first = True
        for word in text.split(sep):
            if not first:
                out.append(sep)
            first = False
            if word:
                out.extend(self._tokenize_word(word))
        return out

    def _tokenize_word(self, word: str) -> tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is None:
            seq = list(word)
            for left, right in self.merges:
                seq = _merge_pass(seq, left, right)
            cached = tuple(seq)
            self._cache[word] = cached
        return cached


@dataclass(frozen=True)
class TokenTable:
    """One dense-id token inventory: blank, unk, then content tokens."""

    tokens: tuple[str, ...]
    kinds: tuple[str, ...]
    merges: tuple[tuple[str, str], ...] = ()
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.kinds):
            raise TokenizationError("tokens and kinds must pair up")
        if len(set(self.tokens)) != len(self.tokens):
            raise TokenizationError("duplicate token in inventory")
        if self.tokens[:2] != (BLANK_TOKEN, UNK_TOKEN) or self.kinds[:2] != ("blank", "unk"):
            raise TokenizationError("ids 0 and 1 are reserved for blank and unk")
        self._index.update({tok: i for i, tok in enumerate(self.tokens)})

    @classmethod
    def build(
        cls,
        content: Iterable[tuple[str, str]],
        merges: tuple[tuple[str, str], ...] = (),
    ) -> "TokenTable":
        """Assemble from (token, kind) pairs, deduplicating on first occurrence."""
        tokens = [BLANK_TOKEN, UNK_TOKEN]
        kinds = ["blank", "unk"]
        seen = {BLANK_TOKEN, UNK_TOKEN}
        for token, kind in content:
            if token in (BLANK_TOKEN, UNK_TOKEN):
                raise TokenizationError(f"content token collides with reserved {token!r}")
            if token not in seen:
                tokens.append(token)
                kinds.append(kind)
                seen.add(token)
        return cls(tokens=tuple(tokens), kinds=tuple(kinds), merges=merges)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content_tokens(self) -> tuple[str, ...]:
        return self.tokens[2:]

    def id_of(self, token: str) -> int | None:
        return self._index.get(token)


@dataclass(frozen=True)
class Vocabulary:
    """A built vocabulary: strategy, inventorie(s), per-language encoders."""

    strategy: Strategy
    shared: TokenTable | None
    per_language: Mapping[str, TokenTable]
    encoders: Mapping[str, LanguageEncoder]
    separator: str = DEFAULT_SEPARATOR

    def languages(self) -> tuple[str, ...]:
        return tuple(self.encoders)

    def table_for(self, language_id: str) -> TokenTable:
        if self.strategy is Strategy.LANGUAGE_SPECIFIC:
            table = self.per_language.get(language_id)
            if table is None:
                raise TokenizationError(f"no sub-vocabulary for language {language_id!r}")
            return table
        assert self.shared is not None
        return self.shared

    def encoder_for(self, language_id: str) -> LanguageEncoder:
        encoder = self.encoders.get(language_id)
        if encoder is None:
            raise TokenizationError(f"language {language_id!r} not in vocabulary")
        return encoder


def build_vocabulary(
    registry: LanguageRegistry,
    strategy: Strategy | str,
    threshold: int = DEFAULT_THRESHOLD,
    subword_cap: int = DEFAULT_SUBWORD_CAP,
    separator: str = DEFAULT_SEPARATOR,
) -> Vocabulary:
    """Build the vocabulary for `strategy` over every language in the registry.

    Languages whose distinct character count exceeds `threshold` are
    char-tokenized; the rest get BPE subwords capped at `subword_cap`.  Under
    ``shared-char`` everyone is char-tokenized.
    """
    if isinstance(strategy, str):
        strategy = Strategy.parse(strategy)
    if threshold <= 0:
        raise TokenizationError(f"threshold must be positive, got {threshold}")
    for lang in registry.languages:
        if not registry.corpora[lang]:
            raise TokenizationError(f"empty corpus for language {lang!r}")

    char_vocabs = {lang: extract_char(registry.corpora[lang]) for lang in registry.languages}
    encoders: dict[str, LanguageEncoder] = {}

    if strategy is Strategy.SHARED_CHAR:
        content = []
        for lang in registry.languages:
            content.extend((tok, "char") for tok in char_vocabs[lang].tokens)
            encoders[lang] = LanguageEncoder("char", separator=separator)
        shared = TokenTable.build(content)
        return Vocabulary(strategy, shared, {}, encoders, separator)

    subword_vocabs: dict[str, SubwordVocab] = {}
    for lang in registry.languages:
        if not registry.large_alphabet(lang, threshold):
            subword_vocabs[lang] = train_bpe(
                registry.corpora[lang], subword_cap, separator=separator
            )

    if strategy is Strategy.SHARED_CHAR_SUBWORD:
        content = []
        for lang in registry.languages:
            if lang in subword_vocabs:
                content.extend((tok, "subword") for tok in subword_vocabs[lang].tokens)
                encoders[lang] = LanguageEncoder(
                    "subword", subword_vocabs[lang].merges, separator
                )
            else:
                content.extend((tok, "char") for tok in char_vocabs[lang].tokens)
                encoders[lang] = LanguageEncoder("char", separator=separator)
        shared = TokenTable.build(content)
        return Vocabulary(strategy, shared, {}, encoders, separator)

    if strategy is Strategy.LANGUAGE_SPECIFIC:
        per_language: dict[str, TokenTable] = {}
        for lang in registry.languages:
            if lang in subword_vocabs:
                sw = subword_vocabs[lang]
                per_language[lang] = TokenTable.build(
                    ((tok, "subword") for tok in sw.tokens), merges=sw.merges
                )
                encoders[lang] = LanguageEncoder("subword", sw.merges, separator)
            else:
                per_language[lang] = TokenTable.build(
                    (tok, "char") for tok in char_vocabs[lang].tokens
                )
                encoders[lang] = LanguageEncoder("char", separator=separator)
        return Vocabulary(strategy, None, per_language, encoders, separator)

    raise TokenizationError(f"unknown strategy {strategy!r}")


def encode(
    text: str, vocab: Vocabulary, language_id: str, mode: str = "strict"
) -> list[int]:
    """Token ids for `text` under the given (sub-)vocabulary.

    Strict mode raises on out-of-vocabulary symbols; lenient mode maps them to
    the reserved unknown id.
    """
    if mode not in ("strict", "lenient"):
        raise TokenizationError(f"unknown OOV mode {mode!r}")
    table = vocab.table_for(language_id)
    encoder = vocab.encoder_for(language_id)
    ids: list[int] = []
    for token in encoder.tokenize(text):
        token_id = table.id_of(token)
        if token_id is None:
            if mode == "strict":
                raise OOVError(token, language_id)
            token_id = UNK_ID
        ids.append(token_id)
    return ids


def decode(ids: Sequence[int], vocab: Vocabulary, language_id: str) -> str:
    """Concatenated token strings; blank ids are dropped (non-emitting)."""
    table = vocab.table_for(language_id)
    parts: list[str] = []
    for token_id in ids:
        if not 0 <= token_id < len(table):
            raise TokenizationError(
                f"token id {token_id} out of range for vocabulary of size {len(table)}"
            )
        if token_id == BLANK_ID:
            continue
        parts.append(table.tokens[token_id])
    return "".join(parts)


@dataclass(frozen=True)
class StatsSummary:
    """Tokens-per-second statistics across per-language means."""

    mean: float
    std: float
    max: float
    min: float
    per_language: Mapping[str, float]
    strategy: str = ""


def tokens_per_second_stats(manifest, vocab: Vocabulary) -> StatsSummary:
    """Per-utterance rates averaged per language, then summarized across
    languages (population standard deviation)."""
    by_language: dict[str, list[float]] = {}
    for utt in manifest.utterances:
        if utt.duration <= 0:
            raise TokenizationError(f"utterance {utt.utterance_id} has non-positive duration")
        rate = len(encode(utt.transcript, vocab, utt.language_id)) / utt.duration
        by_language.setdefault(utt.language_id, []).append(rate)
    if not by_language:
        raise TokenizationError("empty manifest")
    means = {lang: sum(rates) / len(rates) for lang, rates in by_language.items()}
    values = list(means.values())
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return StatsSummary(
        mean=mean,
        std=var**0.5,
        max=max(values),
        min=min(values),
        per_language=means,
        strategy=vocab.strategy.value,
    )


# ---------------------------------------------------------------------------
# Vocabulary files
# ---------------------------------------------------------------------------
#
# One file per token inventory.  Each line is either a token record
# `<id>\t<token-escaped>\t<kind>` or a merge record `#merge\t<left>\t<right>`,
# with merges listed in replay order.  A meta.json in the same directory maps
# inventories to languages so a directory reloads into the same Vocabulary.

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}


def escape_token(token: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in token)


def unescape_token(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            mapped = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt)
            if mapped is None:
                raise TokenizationError(f"bad escape sequence \\{nxt} in vocabulary file")
            out.append(mapped)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def write_token_table(table: TokenTable, path: Path) -> None:
    lines = [
        f"{i}\t{escape_token(tok)}\t{kind}"
        for i, (tok, kind) in enumerate(zip(table.tokens, table.kinds))
    ]
    lines.extend(
        f"#merge\t{escape_token(left)}\t{escape_token(right)}" for left, right in table.merges
    )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_token_table(path: Path) -> TokenTable:
    tokens: list[str] = []
    kinds: list[str] = []
    merges: list[tuple[str, str]] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        fields = line.split("\t")
        if fields[0] == "#merge":
            if len(fields) != 3:
                raise TokenizationError(f"malformed merge line in {path}: {line!r}")
            merges.append((unescape_token(fields[1]), unescape_token(fields[2])))
            continue
        if len(fields) != 3:
            raise TokenizationError(f"malformed token line in {path}: {line!r}")
        idx, token, kind = int(fields[0]), unescape_token(fields[1]), fields[2]
        if idx != len(tokens):
            raise TokenizationError(f"non-dense token ids in {path}")
        tokens.append(token)
        kinds.append(kind)
    return TokenTable(tokens=tuple(tokens), kinds=tuple(kinds), merges=tuple(merges))


def save_vocabulary(vocab: Vocabulary, directory: Path) -> list[Path]:
    """Write the vocabulary's inventories plus a meta.json into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    meta: dict = {
        "strategy": vocab.strategy.value,
        "separator": vocab.separator,
        "languages": list(vocab.encoders),
        "encoders": {},
        "files": {},
    }
    if vocab.shared is not None:
        path = directory / "shared.vocab.tsv"
        write_token_table(vocab.shared, path)
        written.append(path)
        meta["files"]["shared"] = path.name
    for lang, table in vocab.per_language.items():
        path = directory / f"lang-{lang}.vocab.tsv"
        write_token_table(table, path)
        written.append(path)
        meta["files"][lang] = path.name
    for lang, encoder in vocab.encoders.items():
        entry: dict = {"mode": encoder.mode}
        if encoder.mode == "subword" and vocab.strategy is not Strategy.LANGUAGE_SPECIFIC:
            # Shared hybrid: per-language merge lists live in encoder files.
            path = directory / f"lang-{lang}.encoder.tsv"
            table = TokenTable.build(
                ((left + right, "subword") for left, right in encoder.merges),
                merges=encoder.merges,
            )
            write_token_table(table, path)
            written.append(path)
            entry["file"] = path.name
        meta["encoders"][lang] = entry
    meta_path = directory / "meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(meta_path)
    return written


def load_vocabulary(directory: Path) -> Vocabulary:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    strategy = Strategy.parse(meta["strategy"])
    separator = meta["separator"]
    shared = None
    per_language: dict[str, TokenTable] = {}
    if "shared" in meta["files"]:
        shared = read_token_table(directory / meta["files"]["shared"])
    if strategy is Strategy.LANGUAGE_SPECIFIC:
        for lang in meta["languages"]:
            per_language[lang] = read_token_table(directory / meta["files"][lang])
    encoders: dict[str, LanguageEncoder] = {}
    for lang in meta["languages"]:
        entry = meta["encoders"][lang]
        if entry["mode"] == "char":
            encoders[lang] = LanguageEncoder("char", separator=separator)
        elif strategy is Strategy.LANGUAGE_SPECIFIC:
            encoders[lang] = LanguageEncoder(
                "subword", per_language[lang].merges, separator
            )
        else:
            table = read_token_table(directory / entry["file"])
            encoders[lang] = LanguageEncoder("subword", table.merges, separator)
    return Vocabulary(strategy, shared, per_language, encoders, separator)
