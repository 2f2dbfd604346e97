"""Deterministic synthetic multilingual corpora, language re-sampling, and
time/frequency feature masking.

Transcripts are drawn from per-language bigram character models; each
character emits a handful of frames equal to its prototype vector plus
Gaussian noise, so the acoustics carry exactly the information a toy
transducer needs.  Everything is a pure function of (inputs, seed).
"""

from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FRAME_SECONDS = 0.01  # 10 ms hop
MAX_UTTERANCE_SECONDS = 10.0
FEATURE_MAGIC = b"POLYFEAT"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticLanguageSpec:
    """Generative recipe for one synthetic language."""

    language_id: str
    alphabet_size: int
    alphabet_offset: int
    bigram_seed: int
    prototype_seed: int
    mean_word_length: float = 4.0
    words_per_utterance: tuple[int, int] = (2, 5)
    frames_per_token: tuple[int, int] = (2, 4)
    feature_dim: int = 80
    noise_std: float = 0.1
    # Higher values concentrate bigram transitions on few successors; lower
    # values flatten them (better symbol coverage for huge alphabets).
    bigram_concentration: float = 2.0

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise DataError("alphabet_size must be >= 2")
        if self.frames_per_token[0] < 1 or self.frames_per_token[0] > self.frames_per_token[1]:
            raise DataError("frames_per_token range must satisfy 1 <= min <= max")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")

    @property
    def alphabet(self) -> tuple[str, ...]:
        return tuple(chr(self.alphabet_offset + i) for i in range(self.alphabet_size))


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    language_id: str
    transcript: str
    features: np.ndarray  # (T0, feature_dim) float32
    feature_file: str = ""

    def __post_init__(self):
        if not self.transcript:
            raise DataError(f"utterance {self.utterance_id} has empty transcript")

    @property
    def frame_count(self) -> int:
        return self.features.shape[0]

    @property
    def duration(self) -> float:
        return self.frame_count * FRAME_SECONDS


@dataclass(frozen=True)
class CorpusManifest:
    utterances: tuple[Utterance, ...]

    def languages(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for utt in self.utterances:
            seen.setdefault(utt.language_id)
        return tuple(seen)

    def by_language(self) -> dict[str, list[Utterance]]:
        groups: dict[str, list[Utterance]] = {}
        for utt in self.utterances:
            groups.setdefault(utt.language_id, []).append(utt)
        return groups

    def transcripts_by_language(self) -> dict[str, list[str]]:
        return {
            lang: [u.transcript for u in utts] for lang, utts in self.by_language().items()
        }


@functools.lru_cache(maxsize=None)
def _bigram_tables(spec: SyntheticLanguageSpec):
    """Cumulative initial (uniform) and transition distributions."""
    rng = np.random.default_rng(spec.bigram_seed)
    a = spec.alphabet_size
    raw = np.exp(spec.bigram_concentration * rng.normal(size=(a, a)))
    trans = raw / raw.sum(axis=1, keepdims=True)
    # Blend in a uniform floor so every symbol stays reachable.
    trans = 0.5 * trans + 0.5 / a
    initial_cum = np.cumsum(np.full(a, 1.0 / a))
    return initial_cum, np.cumsum(trans, axis=1)


@functools.lru_cache(maxsize=None)
def _prototypes(spec: SyntheticLanguageSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.prototype_seed)
    return rng.normal(size=(spec.alphabet_size, spec.feature_dim))


def _draw(rng, cumulative: np.ndarray) -> int:
    return int(np.searchsorted(cumulative, rng.random(), side="right"))


def _sample_word(rng, spec: SyntheticLanguageSpec, initial_cum, trans_cum) -> str:
    length = int(rng.poisson(max(spec.mean_word_length - 1.0, 0.0))) + 1
    chars = [_draw(rng, initial_cum)]
    for _ in range(length - 1):
        chars.append(_draw(rng, trans_cum[chars[-1]]))
    return "".join(spec.alphabet[c] for c in chars)


def sample_transcript(rng, spec: SyntheticLanguageSpec, separator: str = " ") -> str:
    """One transcript from the language's bigram model, capped at 10 seconds
    of worst-case frames."""
    initial_cum, trans_cum = _bigram_tables(spec)
    lo, hi = spec.words_per_utterance
    n_words = int(rng.integers(lo, hi + 1))
    words = [_sample_word(rng, spec, initial_cum, trans_cum) for _ in range(n_words)]
    max_chars = int(MAX_UTTERANCE_SECONDS / FRAME_SECONDS) // spec.frames_per_token[1]
    while len(words) > 1 and len(separator.join(words)) > max_chars:
        words.pop()
    transcript = separator.join(words)
    return transcript[:max_chars] if len(transcript) > max_chars else transcript


def synthesize_features(transcript: str, spec: SyntheticLanguageSpec, seed) -> np.ndarray:
    """Per-character prototype frames plus Gaussian noise.

    Each character emits k frames with k uniform in the spec's
    frames_per_token range; the separator has its own prototype row appended
    after the alphabet.
    """
    protos = _prototypes(spec)
    sep_rng = np.random.default_rng(spec.prototype_seed + 1)
    sep_proto = sep_rng.normal(size=spec.feature_dim)
    rng = np.random.default_rng(seed)
    lo, hi = spec.frames_per_token
    blocks = []
    for ch in transcript:
        if ch == " ":
            proto = sep_proto
        else:
            idx = ord(ch) - spec.alphabet_offset
            if not 0 <= idx < spec.alphabet_size:
                raise DataError(f"character {ch!r} outside alphabet of {spec.language_id}")
            proto = protos[idx]
        k = int(rng.integers(lo, hi + 1))
        noise = rng.normal(size=(k, spec.feature_dim)) * spec.noise_std
        blocks.append(proto[None, :] + noise)
    if not blocks:
        raise DataError("cannot synthesize features for an empty transcript")
    return np.concatenate(blocks, axis=0).astype(np.float32)


def generate_corpus(
    specs: Sequence[SyntheticLanguageSpec],
    utterances_per_language: Mapping[str, int],
    seed: int,
) -> CorpusManifest:
    """Deterministic corpus; per-utterance seeds are derived from
    (seed, language index, utterance index) so order of generation is free."""
    utterances: list[Utterance] = []
    for lang_idx, spec in enumerate(specs):
        count = utterances_per_language.get(spec.language_id, 0)
        for i in range(count):
            root = np.random.SeedSequence(entropy=[seed, lang_idx, i])
            text_ss, feat_ss = root.spawn(2)
            transcript = sample_transcript(np.random.default_rng(text_ss), spec)
            features = synthesize_features(transcript, spec, feat_ss)
            utterances.append(
                Utterance(
                    utterance_id=f"{spec.language_id}-{i:05d}",
                    language_id=spec.language_id,
                    transcript=transcript,
                    features=features,
                )
            )
    return CorpusManifest(utterances=tuple(utterances))


# ---------------------------------------------------------------------------
# Language re-sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    """Per-language example counts with the re-sampling exponent."""

    counts: Mapping[str, int]
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.counts:
            raise DataError("sampler needs at least one language")
        for lang, n in self.counts.items():
            if n <= 0:
                raise DataError(f"count for language {lang!r} must be positive")

    @classmethod
    def from_manifest(cls, manifest: CorpusManifest, alpha: float = 0.5, seed: int = 0):
        counts = {lang: len(utts) for lang, utts in manifest.by_language().items()}
        return cls(counts=counts, alpha=alpha, seed=seed)


def language_distribution(config: SamplerConfig) -> dict[str, float]:
    """p_l proportional to (n_l / N) ** alpha, normalized."""
    total = sum(config.counts.values())
    weights = {lang: (n / total) ** config.alpha for lang, n in config.counts.items()}
    z = sum(weights.values())
    return {lang: w / z for lang, w in weights.items()}


def sample_batch(
    manifest: CorpusManifest,
    config: SamplerConfig,
    batch_size: int,
    rng: np.random.Generator | None = None,
) -> list[Utterance]:
    """Draw languages i.i.d. from the re-sampling distribution, then
    utterances uniformly within each chosen language."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dist = language_distribution(config)
    languages = list(dist)
    probs = np.array([dist[lang] for lang in languages])
    pools = manifest.by_language()
    batch = []
    for lang_idx in rng.choice(len(languages), size=batch_size, p=probs):
        pool = pools[languages[int(lang_idx)]]
        batch.append(pool[int(rng.integers(0, len(pool)))])
    return batch


# ---------------------------------------------------------------------------
# Feature masking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    freq_mask_width: int = 27
    freq_mask_count: int = 1
    time_mask_width: int = 100
    time_mask_count: int = 2
    apply_prob: float = 1.0
    time_warp: int = 80  # stored for config fidelity; warping is not applied

    def __post_init__(self):
        if min(self.freq_mask_width, self.freq_mask_count, self.time_mask_width,
               self.time_mask_count, self.time_warp) < 0:
            raise DataError("mask widths and counts must be >= 0")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise DataError("apply_prob must be in [0, 1]")


def spec_augment(features: np.ndarray, config: AugmentConfig, seed) -> np.ndarray:
    """Frequency and time masks filled with the utterance feature mean.

    Widths are drawn uniformly from [0, W] and clamped to the masked axis.
    Unmasked cells are returned bit-identical to the input.
    """
    out = np.array(features, copy=True)
    rng = np.random.default_rng(seed)
    if rng.random() >= config.apply_prob:
        return out
    n_frames, n_feats = out.shape
    fill = out.mean()
    for _ in range(config.freq_mask_count):
        width = min(int(rng.integers(0, config.freq_mask_width + 1)), n_feats)
        start = int(rng.integers(0, n_feats - width + 1))
        out[:, start : start + width] = fill
    for _ in range(config.time_mask_count):
        width = min(int(rng.integers(0, config.time_mask_width + 1)), n_frames)
        start = int(rng.integers(0, n_frames - width + 1))
        out[start : start + width, :] = fill
    return out


# ---------------------------------------------------------------------------
# Manifest and feature files
# ---------------------------------------------------------------------------
#
# Features: 16-byte header (8-byte magic, uint32 frame count, uint32 feature
# dim, both little-endian) followed by row-major little-endian float32.
# Manifest: one JSON record per line.


def write_features(features: np.ndarray, path: Path) -> None:
    n_frames, n_feats = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", n_frames, n_feats))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FEATURE_MAGIC:
            raise DataError(f"{path} is not a feature file (bad magic {magic!r})")
        n_frames, n_feats = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != n_frames * n_feats:
        raise DataError(f"{path}: truncated feature payload")
    return data.reshape(n_frames, n_feats).astype(np.float32)


def save_manifest(manifest: CorpusManifest, directory: Path, name: str) -> Path:
    directory = Path(directory)
    feat_dir = directory / f"{name}-features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = directory / f"{name}.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for utt in manifest.utterances:
            feature_file = f"{name}-features/{utt.utterance_id}.feat"
            write_features(utt.features, directory / feature_file)
            record = {
                "utterance_id": utt.utterance_id,
                "language_id": utt.language_id,
                "duration_s": round(utt.duration, 6),
                "transcript": utt.transcript,
                "feature_file": feature_file,
                "frame_count": utt.frame_count,
            }
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    return manifest_path


def load_manifest(manifest_path: Path) -> CorpusManifest:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    utterances = []
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        record = json.loads(line)
        features = read_features(base / record["feature_file"])
        if features.shape[0] != record["frame_count"]:
            raise DataError(f"{record['utterance_id']}: frame count mismatch")
        utterances.append(
            Utterance(
                utterance_id=record["utterance_id"],
                language_id=record["language_id"],
                transcript=record["transcript"],
                features=features,
                feature_file=record["feature_file"],
            )
        )
    return CorpusManifest(utterances=tuple(utterances))


# ---------------------------------------------------------------------------
# Shipped default registry: three latin-like languages plus one large-alphabet
# language, with skewed utterance counts.
# ---------------------------------------------------------------------------


def default_language_specs(feature_dim: int = 80) -> list[SyntheticLanguageSpec]:
    return [
        SyntheticLanguageSpec(
            language_id="alpha",
            alphabet_size=26,
            alphabet_offset=0x61,  # a..z
            bigram_seed=101,
            prototype_seed=201,
            mean_word_length=4.0,
            words_per_utterance=(2, 5),
            frames_per_token=(2, 3),
            feature_dim=feature_dim,
            noise_std=0.1,
            bigram_concentration=2.0,
        ),
        SyntheticLanguageSpec(
            language_id="beta",
            alphabet_size=22,
            alphabet_offset=0x430,  # Cyrillic lowercase block
            bigram_seed=102,
            prototype_seed=202,
            mean_word_length=5.0,
            words_per_utterance=(2, 5),
            frames_per_token=(2, 4),
            feature_dim=feature_dim,
            noise_std=0.1,
            bigram_concentration=2.0,
        ),
        SyntheticLanguageSpec(
            language_id="gamma",
            alphabet_size=28,
            alphabet_offset=0x3B1,  # Greek lowercase block
            bigram_seed=103,
            prototype_seed=203,
            mean_word_length=4.0,
            words_per_utterance=(2, 5),
            frames_per_token=(3, 4),
            feature_dim=feature_dim,
            noise_std=0.1,
            bigram_concentration=2.0,
        ),
        SyntheticLanguageSpec(
            language_id="sigma",
            alphabet_size=600,
            alphabet_offset=0x4E00,  # CJK ideograph block
            bigram_seed=104,
            prototype_seed=204,
            mean_word_length=3.0,
            words_per_utterance=(2, 5),
            frames_per_token=(5, 8),
            feature_dim=feature_dim,
            noise_std=0.1,
            bigram_concentration=0.5,
        ),
    ]


DEFAULT_TRAIN_COUNTS = {"alpha": 260, "beta": 120, "gamma": 50, "sigma": 500}
DEFAULT_TEST_COUNTS = {"alpha": 30, "beta": 25, "gamma": 20, "sigma": 40}
