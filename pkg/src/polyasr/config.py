"""Declarative experiment configuration.

One YAML file describes an experiment end to end: the synthetic language
registry, vocabulary settings, model architecture, training recipe, sampling,
masking, and decoding.  CLI flags override file values, which override the
shipped defaults.  Unknown keys are rejected so typos fail fast.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .data import (
    DEFAULT_TEST_COUNTS,
    DEFAULT_TRAIN_COUNTS,
    AugmentConfig,
    SyntheticLanguageSpec,
    default_language_specs,
)
from .model import TrainConfig
from .scoring import DecodeConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LanguageEntry:
    spec: SyntheticLanguageSpec
    train_utterances: int
    test_utterances: int


@dataclass(frozen=True)
class VocabularyConfig:
    threshold: int = 512
    subword_cap: int = 512


@dataclass(frozen=True)
class ModelArchConfig:
    subsample_factor: int = 4
    hidden_dim: int = 32
    encoder_layers: int = 2
    d_emb: int = 32


@dataclass(frozen=True)
class AugmentSettings:
    enabled: bool = True
    config: AugmentConfig = AugmentConfig()


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: Path
    feature_dim: int
    languages: tuple[LanguageEntry, ...]
    vocabulary: VocabularyConfig
    arch: ModelArchConfig
    train: TrainConfig
    sampler_alpha: float
    augment: AugmentSettings
    decode: DecodeConfig

    def __post_init__(self):
        if not self.languages:
            raise ConfigError("at least one language is required")
        ids = [entry.spec.language_id for entry in self.languages]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate language ids in config")
        for entry in self.languages:
            if entry.train_utterances < 0 or entry.test_utterances < 0:
                raise ConfigError("utterance counts must be >= 0")

    def specs(self) -> list[SyntheticLanguageSpec]:
        return [entry.spec for entry in self.languages]

    def train_counts(self) -> dict[str, int]:
        return {e.spec.language_id: e.train_utterances for e in self.languages}

    def test_counts(self) -> dict[str, int]:
        return {e.spec.language_id: e.test_utterances for e in self.languages}


def _default_language_entries() -> list[dict]:
    entries = []
    for spec in default_language_specs():
        entry = dataclasses.asdict(spec)
        entry.pop("feature_dim")
        entry["words_per_utterance"] = list(entry["words_per_utterance"])
        entry["frames_per_token"] = list(entry["frames_per_token"])
        entry["train_utterances"] = DEFAULT_TRAIN_COUNTS[spec.language_id]
        entry["test_utterances"] = DEFAULT_TEST_COUNTS[spec.language_id]
        entries.append(entry)
    return entries


# The shipped recipe: the default registry from the data module, a small
# transducer, and a short schedule that finishes on a laptop CPU.
DEFAULTS: dict[str, Any] = {
    "seed": 1234,
    "output_dir": "runs/default",
    "feature_dim": 80,
    "languages": _default_language_entries(),
    "vocabulary": {"threshold": 512, "subword_cap": 512},
    "model": {
        "subsample_factor": 4,
        "hidden_dim": 32,
        "encoder_layers": 2,
        "d_emb": 32,
    },
    "train": {
        "peak_lr": 4e-3,
        "beta1": 0.9,
        "beta2": 0.98,
        "warmup_steps": 50,
        "total_steps": 600,
        "final_lr_fraction": 0.1,
        "batch_size": 8,
        "clip_norm": 5.0,
    },
    "sampler": {"alpha": 0.5},
    "augment": {
        "enabled": True,
        "freq_mask_width": 8,
        "freq_mask_count": 1,
        "time_mask_width": 4,
        "time_mask_count": 1,
        "apply_prob": 1.0,
        "time_warp": 80,
    },
    "decode": {"mode": "beam", "beam_width": 4, "max_symbols_per_frame": 10},
}


def _check_keys(section: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _merge(base: Mapping, override: Mapping) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _build_language(raw: Mapping, feature_dim: int) -> LanguageEntry:
    allowed = {
        "language_id", "alphabet_size", "alphabet_offset", "bigram_seed",
        "prototype_seed", "mean_word_length", "words_per_utterance",
        "frames_per_token", "noise_std", "bigram_concentration",
        "train_utterances", "test_utterances",
    }
    _check_keys(raw, allowed, f"language {raw.get('language_id', '?')!r}")
    try:
        spec = SyntheticLanguageSpec(
            language_id=raw["language_id"],
            alphabet_size=int(raw["alphabet_size"]),
            alphabet_offset=int(raw["alphabet_offset"]),
            bigram_seed=int(raw["bigram_seed"]),
            prototype_seed=int(raw["prototype_seed"]),
            mean_word_length=float(raw.get("mean_word_length", 4.0)),
            words_per_utterance=tuple(raw.get("words_per_utterance", (2, 5))),
            frames_per_token=tuple(raw.get("frames_per_token", (2, 4))),
            feature_dim=feature_dim,
            noise_std=float(raw.get("noise_std", 0.1)),
            bigram_concentration=float(raw.get("bigram_concentration", 2.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad language entry: {exc}") from exc
    return LanguageEntry(
        spec=spec,
        train_utterances=int(raw.get("train_utterances", 0)),
        test_utterances=int(raw.get("test_utterances", 0)),
    )


def build_config(data: Mapping) -> ExperimentConfig:
    _check_keys(
        data,
        {"seed", "output_dir", "feature_dim", "languages", "vocabulary", "model",
         "train", "sampler", "augment", "decode"},
        "experiment config",
    )
    feature_dim = int(data["feature_dim"])
    languages = tuple(_build_language(raw, feature_dim) for raw in data["languages"])

    vocab_raw = data.get("vocabulary", {})
    _check_keys(vocab_raw, {"threshold", "subword_cap"}, "vocabulary")
    vocabulary = VocabularyConfig(
        threshold=int(vocab_raw.get("threshold", 512)),
        subword_cap=int(vocab_raw.get("subword_cap", 512)),
    )

    model_raw = data.get("model", {})
    _check_keys(
        model_raw, {"subsample_factor", "hidden_dim", "encoder_layers", "d_emb"}, "model"
    )
    arch = ModelArchConfig(
        subsample_factor=int(model_raw.get("subsample_factor", 4)),
        hidden_dim=int(model_raw.get("hidden_dim", 32)),
        encoder_layers=int(model_raw.get("encoder_layers", 2)),
        d_emb=int(model_raw.get("d_emb", 32)),
    )

    train_raw = data.get("train", {})
    _check_keys(
        train_raw,
        {"peak_lr", "beta1", "beta2", "warmup_steps", "total_steps",
         "final_lr_fraction", "batch_size", "clip_norm"},
        "train",
    )
    try:
        train = TrainConfig(
            peak_lr=float(train_raw.get("peak_lr", 4e-4)),
            beta1=float(train_raw.get("beta1", 0.9)),
            beta2=float(train_raw.get("beta2", 0.98)),
            warmup_steps=int(train_raw.get("warmup_steps", 20_000)),
            total_steps=int(train_raw.get("total_steps", 700_000)),
            final_lr_fraction=float(train_raw.get("final_lr_fraction", 0.1)),
            batch_size=int(train_raw.get("batch_size", 8)),
            clip_norm=float(train_raw.get("clip_norm", 5.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc

    sampler_raw = data.get("sampler", {})
    _check_keys(sampler_raw, {"alpha"}, "sampler")
    sampler_alpha = float(sampler_raw.get("alpha", 0.5))

    augment_raw = dict(data.get("augment", {}))
    _check_keys(
        augment_raw,
        {"enabled", "freq_mask_width", "freq_mask_count", "time_mask_width",
         "time_mask_count", "apply_prob", "time_warp"},
        "augment",
    )
    enabled = bool(augment_raw.pop("enabled", True))
    try:
        augment = AugmentSettings(enabled=enabled, config=AugmentConfig(**augment_raw))
    except ValueError as exc:
        raise ConfigError(f"bad augment section: {exc}") from exc

    decode_raw = data.get("decode", {})
    _check_keys(decode_raw, {"mode", "beam_width", "max_symbols_per_frame"}, "decode")
    decode = DecodeConfig(
        mode=str(decode_raw.get("mode", "beam")),
        beam_width=int(decode_raw.get("beam_width", 4)),
        max_symbols_per_frame=int(decode_raw.get("max_symbols_per_frame", 10)),
    )
    if decode.mode not in ("beam", "greedy"):
        raise ConfigError(f"decode mode must be beam or greedy, got {decode.mode!r}")
    if decode.beam_width < 1 or decode.max_symbols_per_frame < 1:
        raise ConfigError("beam_width and max_symbols_per_frame must be >= 1")

    try:
        return ExperimentConfig(
            seed=int(data["seed"]),
            output_dir=Path(data["output_dir"]),
            feature_dim=feature_dim,
            languages=languages,
            vocabulary=vocabulary,
            arch=arch,
            train=train,
            sampler_alpha=sampler_alpha,
            augment=augment,
            decode=decode,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def default_config(**overrides) -> ExperimentConfig:
    """The shipped recipe, optionally with top-level section overrides."""
    return build_config(_merge(DEFAULTS, overrides))


def load_config(path: Path | str | None, overrides: Mapping | None = None) -> ExperimentConfig:
    """Read YAML (or fall back to defaults) and apply flag overrides on top."""
    data: Mapping = DEFAULTS
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"config file {path} must contain a mapping")
        data = _merge(DEFAULTS, loaded)
    if overrides:
        data = _merge(data, overrides)
    return build_config(data)


def dump_default_config() -> str:
    """The default configuration as a YAML document (a starting point to edit)."""
    return yaml.safe_dump(DEFAULTS, sort_keys=False)
