"""End-to-end workflow: corpus generation, vocabulary building, training,
decoding, scoring, and the three-way topology comparison.

Every step is a pure function of the experiment config (plus explicit file
inputs), with all randomness derived from the config seed, so reruns produce
identical outputs.  The CLI is a thin wrapper over these functions.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from . import data as data_lib
from . import model as model_lib
from . import report as report_lib
from . import scoring as scoring_lib
from . import tokenization as tok
from .config import ExperimentConfig

# Seed-stream tags so the independent random streams never collide.
_STREAM_TRAIN_CORPUS = 0
_STREAM_TEST_CORPUS = 1
_STREAM_BATCH = 2
_STREAM_AUGMENT = 3


class ExperimentError(RuntimeError):
    pass


def corpus_dir(config: ExperimentConfig) -> Path:
    return config.output_dir / "corpus"


def vocab_dir(config: ExperimentConfig, strategy: tok.Strategy) -> Path:
    return config.output_dir / f"vocab-{strategy.value}"


def train_dir(config: ExperimentConfig, strategy: tok.Strategy) -> Path:
    return config.output_dir / f"train-{strategy.value}"


def gen_corpus(config: ExperimentConfig) -> tuple[Path, Path]:
    """Write train and test manifests plus feature files."""
    specs = config.specs()
    train = data_lib.generate_corpus(
        specs, config.train_counts(), seed=_derive_int_seed(config.seed, _STREAM_TRAIN_CORPUS)
    )
    test = data_lib.generate_corpus(
        specs, config.test_counts(), seed=_derive_int_seed(config.seed, _STREAM_TEST_CORPUS)
    )
    directory = corpus_dir(config)
    train_path = data_lib.save_manifest(train, directory, "train")
    test_path = data_lib.save_manifest(test, directory, "test")
    return train_path, test_path


def _derive_seed(seed: int, stream: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=[seed, stream, *extra])


def _derive_int_seed(seed: int, stream: int) -> int:
    return int(_derive_seed(seed, stream).generate_state(1)[0])


def load_split(config: ExperimentConfig, split: str) -> data_lib.CorpusManifest:
    path = corpus_dir(config) / f"{split}.jsonl"
    if not path.exists():
        raise ExperimentError(f"manifest {path} not found; run gen-corpus first")
    return data_lib.load_manifest(path)


def registry_from_manifest(
    config: ExperimentConfig, manifest: data_lib.CorpusManifest
) -> tok.LanguageRegistry:
    return tok.LanguageRegistry.from_corpora(
        manifest.transcripts_by_language(), threshold=config.vocabulary.threshold
    )


def build_vocab(config: ExperimentConfig, strategy: tok.Strategy) -> Path:
    """Build and persist the vocabulary for one strategy over the train split."""
    manifest = load_split(config, "train")
    registry = registry_from_manifest(config, manifest)
    vocab = tok.build_vocabulary(
        registry,
        strategy,
        threshold=config.vocabulary.threshold,
        subword_cap=config.vocabulary.subword_cap,
    )
    directory = vocab_dir(config, strategy)
    tok.save_vocabulary(vocab, directory)
    return directory


def load_vocab(config: ExperimentConfig, strategy: tok.Strategy) -> tok.Vocabulary:
    directory = vocab_dir(config, strategy)
    if not (directory / "meta.json").exists():
        build_vocab(config, strategy)
    return tok.load_vocabulary(directory)


def compute_stats(config: ExperimentConfig, strategies=None, split: str = "train") -> Path:
    """Tokens-per-second report (TSV + figure) for the requested strategies."""
    strategies = strategies or list(tok.Strategy)
    manifest = load_split(config, split)
    stats = {
        strategy.value: tok.tokens_per_second_stats(manifest, load_vocab(config, strategy))
        for strategy in strategies
    }
    directory = config.output_dir / "stats"
    report_lib.write_stats_report(stats, directory)
    return directory


def _model_config(config: ExperimentConfig, vocab: tok.Vocabulary) -> model_lib.ModelConfig:
    if vocab.strategy is tok.Strategy.LANGUAGE_SPECIFIC:
        head: model_lib.SharedHead | model_lib.MultiHead = model_lib.MultiHead(
            vocab_sizes={lang: len(table) for lang, table in vocab.per_language.items()}
        )
    else:
        head = model_lib.SharedHead(vocab_size=len(vocab.shared))
    return model_lib.ModelConfig(
        feature_dim=config.feature_dim,
        encoder=model_lib.EncoderConfig(
            subsample_factor=config.arch.subsample_factor,
            hidden_dim=config.arch.hidden_dim,
            num_layers=config.arch.encoder_layers,
        ),
        predictor=model_lib.PredictorConfig(
            d_emb=config.arch.d_emb, d_hid=config.arch.hidden_dim
        ),
        head=head,
        seed=config.seed,
    )


def _make_example(
    utt: data_lib.Utterance,
    vocab: tok.Vocabulary,
    multi_head: bool,
    features: np.ndarray,
) -> model_lib.TrainExample:
    ids = tok.encode(utt.transcript, vocab, utt.language_id)
    return model_lib.TrainExample(
        utterance_id=utt.utterance_id,
        features=features,
        target_ids=tuple(ids),
        language_id=utt.language_id if multi_head else None,
    )


def train(
    config: ExperimentConfig,
    strategy: tok.Strategy,
    resume: Path | None = None,
    stop_after: int | None = None,
) -> Path:
    """Train one model; write loss curve (TSV + figure) and a checkpoint.

    Batches for step i are derived from (seed, i) alone, so resuming from a
    checkpoint at step k replays exactly the batches an uninterrupted run
    would have seen.
    """
    manifest = load_split(config, "train")
    vocab = load_vocab(config, strategy)
    multi_head = vocab.strategy is tok.Strategy.LANGUAGE_SPECIFIC

    if resume is not None:
        params, opt_state, _meta = model_lib.load_checkpoint(resume)
    else:
        params = model_lib.init_params(_model_config(config, vocab))
        opt_state = model_lib.OptimizerState.fresh(params)

    sampler = data_lib.SamplerConfig.from_manifest(
        manifest, alpha=config.sampler_alpha, seed=config.seed
    )
    directory = train_dir(config, strategy)
    directory.mkdir(parents=True, exist_ok=True)

    total = config.train.total_steps
    last = total if stop_after is None else min(total, opt_state.step + stop_after)
    curve: list[tuple[int, float, float]] = []
    step = opt_state.step
    while step < last:
        step += 1
        batch_rng = np.random.default_rng(_derive_seed(config.seed, _STREAM_BATCH, step))
        utts = data_lib.sample_batch(manifest, sampler, config.train.batch_size, rng=batch_rng)
        batch = []
        for i, utt in enumerate(utts):
            features = utt.features
            if config.augment.enabled:
                features = data_lib.spec_augment(
                    features, config.augment.config,
                    seed=_derive_seed(config.seed, _STREAM_AUGMENT, step, i),
                )
            batch.append(_make_example(utt, vocab, multi_head, features))
        params, opt_state, nll = model_lib.train_step(batch, params, opt_state, config.train)
        curve.append((step, nll, model_lib.lr_schedule(step, config.train)))

    suffix = "" if last == total else f"-step{last}"
    checkpoint = directory / f"checkpoint{suffix}.npz"
    model_lib.save_checkpoint(
        checkpoint, params, opt_state, config.train, extra={"strategy": strategy.value}
    )
    report_lib.write_tsv(directory / f"loss_curve{suffix}.tsv", ["step", "loss", "lr"], curve)
    if curve:
        report_lib.loss_curve_figure(
            [c[0] for c in curve], [c[1] for c in curve], directory / f"loss_curve{suffix}.png"
        )
    return checkpoint


def decode(
    config: ExperimentConfig,
    strategy: tok.Strategy,
    checkpoint: Path,
    split: str = "test",
) -> Path:
    """Decode a split; write hypotheses as TSV (id, language, text-escaped)."""
    manifest = load_split(config, split)
    vocab = load_vocab(config, strategy)
    params, _, _ = model_lib.load_checkpoint(checkpoint)
    hyps = scoring_lib.decode_manifest(manifest, params, vocab, config.decode)
    directory = config.output_dir / f"decode-{strategy.value}"
    directory.mkdir(parents=True, exist_ok=True)
    out = directory / f"{split}.hyp.tsv"
    rows = [
        [utt.utterance_id, utt.language_id, tok.escape_token(hyps[utt.utterance_id])]
        for utt in manifest.utterances
    ]
    report_lib.write_tsv(out, ["utterance_id", "language_id", "hypothesis"], rows)
    return out


def read_hypotheses(path: Path) -> dict[str, str]:
    header, rows = report_lib.read_tsv(path)
    if header != ["utterance_id", "language_id", "hypothesis"]:
        raise ExperimentError(f"{path} is not a hypothesis file")
    return {row[0]: tok.unescape_token(row[2]) for row in rows}


def score(
    config: ExperimentConfig,
    hyp_path: Path,
    split: str = "test",
    out_dir: Path | None = None,
) -> tuple[dict, scoring_lib.ErrorBreakdown, Path]:
    """Score a hypothesis file against the split's references."""
    manifest = load_split(config, split)
    registry = registry_from_manifest(config, load_split(config, "train"))
    units = scoring_lib.units_from_registry(registry)
    hyps = read_hypotheses(hyp_path)
    per_language, pooled = scoring_lib.score_hypotheses(manifest, hyps, units)
    directory = out_dir or (config.output_dir / "score")
    directory.mkdir(parents=True, exist_ok=True)
    out = report_lib.write_breakdown_tsv(directory / "breakdown.tsv", per_language, pooled)
    return per_language, pooled, out


STRATEGY_SYSTEM_NAMES = {
    tok.Strategy.SHARED_CHAR: "shared-char",
    tok.Strategy.SHARED_CHAR_SUBWORD: "shared-char-subword",
    tok.Strategy.LANGUAGE_SPECIFIC: "lang-specific",
}


def compare(
    config: ExperimentConfig,
    checkpoints: Mapping[tok.Strategy, Path],
    split: str = "test",
) -> tuple[scoring_lib.ExperimentReport, Path]:
    """Decode every system on the same split and write the comparison bundle."""
    test_manifest = load_split(config, split)
    train_manifest = load_split(config, "train")
    registry = registry_from_manifest(config, train_manifest)
    systems = {}
    for strategy, path in checkpoints.items():
        params, _, _ = model_lib.load_checkpoint(path)
        systems[STRATEGY_SYSTEM_NAMES[strategy]] = (params, load_vocab(config, strategy))
    report = scoring_lib.compare_experiments(
        test_manifest, systems, registry, config.decode, stats_manifest=train_manifest
    )
    directory = config.output_dir / "compare"
    report_lib.write_comparison_report(report, directory)
    return report, directory


def compare_precomputed(table_path: Path, out_dir: Path) -> tuple[dict, Path]:
    """Pairwise relative improvements from an externally supplied WER table.

    The table is TSV with header `condition<TAB>model<TAB>wer_percent`.
    """
    header, rows = report_lib.read_tsv(table_path)
    if header != ["condition", "model", "wer_percent"]:
        raise ExperimentError(
            f"{table_path} must have header condition/model/wer_percent, got {header}"
        )
    wers: dict[str, dict[str, float]] = {}
    for condition, model_name, wer in rows:
        wers.setdefault(condition, {})[model_name] = float(wer)
    improvements = scoring_lib.improvements_from_table(wers)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_rows = []
    for condition, pairs in improvements.items():
        for (a, b), value in pairs.items():
            out_rows.append([condition, a, b, value])
    path = report_lib.write_tsv(
        out_dir / "improvements.tsv",
        ["condition", "system", "baseline", "relative_improvement_percent"],
        out_rows,
    )
    return improvements, path


def run_pipeline(config: ExperimentConfig) -> tuple[scoring_lib.ExperimentReport, Path]:
    """The shipped recipe: corpus, three vocabularies, three models, comparison."""
    gen_corpus(config)
    checkpoints = {}
    for strategy in tok.Strategy:
        build_vocab(config, strategy)
        checkpoints[strategy] = train(config, strategy)
    compute_stats(config)
    return compare(config, checkpoints)
