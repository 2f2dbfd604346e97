"""Error-rate scoring with insertion/deletion/substitution decomposition and
the multi-system comparison harness.

Alignment uses unit-cost minimal edit distance with a fixed backtrace
preference (match > substitution > deletion > insertion) so breakdowns are
reproducible.  Rates are percentages of the reference length; the headline
rate is defined as the sum of the three component rates, which makes the
additivity identity exact rather than a rounding accident.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import model as model_lib
from . import tokenization as tok


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class AlignOp:
    kind: str  # "match" | "sub" | "del" | "ins"
    ref: str | None
    hyp: str | None


def align(ref: Sequence[str], hyp: Sequence[str]) -> list[AlignOp]:
    """Minimal-edit alignment; ties resolved match > sub > del > ins."""
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            same = ref[i - 1] == hyp[j - 1]
            dist[i, j] = min(
                dist[i - 1, j - 1] + (0 if same else 1),
                dist[i - 1, j] + 1,
                dist[i, j - 1] + 1,
            )
    ops: list[AlignOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i, j] == dist[i - 1, j - 1]:
            ops.append(AlignOp("match", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + 1:
            ops.append(AlignOp("sub", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            ops.append(AlignOp("del", ref[i - 1], None))
            i = i - 1
        else:
            ops.append(AlignOp("ins", None, hyp[j - 1]))
            j = j - 1
    ops.reverse()
    return ops


@dataclass(frozen=True)
class ErrorBreakdown:
    insertions: int
    deletions: int
    substitutions: int
    reference_length: int

    def __post_init__(self):
        if min(self.insertions, self.deletions, self.substitutions) < 0:
            raise ScoringError("error counts must be >= 0")
        if self.reference_length <= 0:
            raise ScoringError("reference length must be positive")

    @property
    def ins_rate(self) -> float:
        return self.insertions / self.reference_length * 100.0

    @property
    def del_rate(self) -> float:
        return self.deletions / self.reference_length * 100.0

    @property
    def sub_rate(self) -> float:
        return self.substitutions / self.reference_length * 100.0

    @property
    def wer_percent(self) -> float:
        # sum of the component rates, so additivity holds exactly
        return self.ins_rate + self.del_rate + self.sub_rate

    @staticmethod
    def combine(parts: Iterable["ErrorBreakdown"]) -> "ErrorBreakdown":
        parts = list(parts)
        return ErrorBreakdown(
            insertions=sum(p.insertions for p in parts),
            deletions=sum(p.deletions for p in parts),
            substitutions=sum(p.substitutions for p in parts),
            reference_length=sum(p.reference_length for p in parts),
        )


def tokenize_for_scoring(text: str, unit: str, separator: str = " ") -> list[str]:
    if unit == "word":
        return [w for w in text.split(separator) if w]
    if unit == "char":
        return list(text)  # separator counts as a token
    raise ScoringError(f"unknown scoring unit {unit!r}")


def word_error_rate(
    refs: Sequence[str], hyps: Sequence[str], unit: str = "word", separator: str = " "
) -> ErrorBreakdown:
    """Corpus-level breakdown; rates are counts over total reference tokens."""
    if len(refs) != len(hyps):
        raise ScoringError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    ins = dels = subs = ref_len = 0
    for ref_text, hyp_text in zip(refs, hyps):
        ref = tokenize_for_scoring(ref_text, unit, separator)
        hyp = tokenize_for_scoring(hyp_text, unit, separator)
        ref_len += len(ref)
        for op in align(ref, hyp):
            if op.kind == "ins":
                ins += 1
            elif op.kind == "del":
                dels += 1
            elif op.kind == "sub":
                subs += 1
    return ErrorBreakdown(ins, dels, subs, ref_len)


def relative_improvement(wer_a: float, wer_b: float) -> float:
    """Percent WER improvement of system a over baseline b."""
    if wer_b == 0:
        raise ScoringError("baseline WER must be nonzero")
    return (wer_b - wer_a) / wer_b * 100.0


# ---------------------------------------------------------------------------
# Comparison harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "beam"
    beam_width: int = 4
    max_symbols_per_frame: int = 10


@dataclass(frozen=True)
class SystemResult:
    name: str
    per_language: Mapping[str, ErrorBreakdown]
    pooled: ErrorBreakdown

    @property
    def macro_wer(self) -> float:
        return sum(b.wer_percent for b in self.per_language.values()) / len(self.per_language)

    @property
    def macro_del_rate(self) -> float:
        return sum(b.del_rate for b in self.per_language.values()) / len(self.per_language)

    @property
    def macro_ins_rate(self) -> float:
        return sum(b.ins_rate for b in self.per_language.values()) / len(self.per_language)

    @property
    def macro_sub_rate(self) -> float:
        return sum(b.sub_rate for b in self.per_language.values()) / len(self.per_language)


@dataclass(frozen=True)
class ExperimentReport:
    systems: Mapping[str, SystemResult]
    tokens_per_second: Mapping[str, tok.StatsSummary]
    # (system, baseline) -> percent improvement of system over baseline
    improvements: Mapping[tuple[str, str], float]


def decode_manifest(
    manifest,
    params: model_lib.ModelParams,
    vocab: tok.Vocabulary,
    decode_config: DecodeConfig = DecodeConfig(),
) -> dict[str, str]:
    """utterance_id -> hypothesis text."""
    if isinstance(params.config.head, model_lib.MultiHead):
        heads = set(params.config.head.vocab_sizes)
        for lang in manifest.languages():
            if lang not in heads:
                raise ScoringError(f"language {lang!r} missing from model heads")
    hyps: dict[str, str] = {}
    for utt in manifest.utterances:
        lang = utt.language_id
        ids = model_lib.decode_utterance(
            utt.features,
            params,
            lang if isinstance(params.config.head, model_lib.MultiHead) else None,
            mode=decode_config.mode,
            beam_width=decode_config.beam_width,
            max_symbols_per_frame=decode_config.max_symbols_per_frame,
        )
        hyps[utt.utterance_id] = tok.decode(ids, vocab, lang)
    return hyps


def score_hypotheses(
    manifest, hypotheses: Mapping[str, str], unit_by_language: Mapping[str, str],
    separator: str = " ",
) -> tuple[dict[str, ErrorBreakdown], ErrorBreakdown]:
    """Per-language breakdowns plus the pooled breakdown."""
    pairs: dict[str, tuple[list[str], list[str]]] = {}
    for utt in manifest.utterances:
        if utt.utterance_id not in hypotheses:
            raise ScoringError(f"no hypothesis for utterance {utt.utterance_id}")
        refs, hyps = pairs.setdefault(utt.language_id, ([], []))
        refs.append(utt.transcript)
        hyps.append(hypotheses[utt.utterance_id])
    per_language = {
        lang: word_error_rate(refs, hyps, unit_by_language.get(lang, "word"), separator)
        for lang, (refs, hyps) in pairs.items()
    }
    pooled = ErrorBreakdown.combine(per_language.values())
    return per_language, pooled


def units_from_registry(registry: tok.LanguageRegistry) -> dict[str, str]:
    """Character scoring for large-alphabet languages, word scoring otherwise."""
    return {
        lang: "char" if registry.large_alphabet(lang) else "word"
        for lang in registry.languages
    }


def compare_experiments(
    test_manifest,
    systems: Mapping[str, tuple[model_lib.ModelParams, tok.Vocabulary]],
    registry: tok.LanguageRegistry,
    decode_config: DecodeConfig = DecodeConfig(),
    stats_manifest=None,
) -> ExperimentReport:
    """Decode the test manifest with every system and assemble the report.

    Per-language units follow the registry's alphabet-size classification;
    tokens-per-second statistics are computed per system vocabulary over
    `stats_manifest` (the test manifest when omitted); relative improvements
    cover every ordered system pair using macro-averaged rates.
    """
    units = units_from_registry(registry)
    stats_manifest = stats_manifest if stats_manifest is not None else test_manifest
    results: dict[str, SystemResult] = {}
    stats: dict[str, tok.StatsSummary] = {}
    for name, (params, vocab) in systems.items():
        hyps = decode_manifest(test_manifest, params, vocab, decode_config)
        per_language, pooled = score_hypotheses(test_manifest, hyps, units)
        results[name] = SystemResult(name=name, per_language=per_language, pooled=pooled)
        stats[name] = tok.tokens_per_second_stats(stats_manifest, vocab)
    improvements = {
        (a, b): relative_improvement(results[a].macro_wer, results[b].macro_wer)
        for a in results
        for b in results
        if a != b and results[b].macro_wer > 0
    }
    return ExperimentReport(systems=results, tokens_per_second=stats, improvements=improvements)


def improvements_from_table(
    wers: Mapping[str, Mapping[str, float]]
) -> dict[str, dict[tuple[str, str], float]]:
    """All pairwise relative improvements from precomputed WER tables.

    `wers` maps condition -> {model: wer}; the result maps condition ->
    {(model, baseline): improvement percent}.
    """
    out: dict[str, dict[tuple[str, str], float]] = {}
    for condition, table in wers.items():
        out[condition] = {
            (a, b): relative_improvement(table[a], table[b])
            for a in table
            for b in table
            if a != b
        }
    return out
