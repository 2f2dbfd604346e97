"""Toy trainable encoder/predictor/joiner with shared or per-language heads.

The encoder stacks frames for subsampling and applies a small tanh
feed-forward stack; the predictor is an embedding plus a single
layer-normalized LSTM cell; the joiner sums the two representations,
applies tanh, and projects to the head vocabulary.  Heads are either one
shared embedding/output pair or one pair per language over blank-augmented
per-language vocabularies.

Everything runs in float64 numpy with hand-written backward passes, checked
against central finite differences in the test suite.  Training is
single-threaded and bit-reproducible: gradients accumulate in batch order and
the optimizer is plain Adam with bias correction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .transducer import JointLogGrid, beam_decode, greedy_decode, rnnt_grad

BLANK_ID = 0
LN_EPS = 1e-5
ADAM_EPS = 1e-8


class ModelError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, utterance_id: str):
        self.utterance_id = utterance_id
        super().__init__(f"non-finite loss on utterance {utterance_id!r}")


@dataclass(frozen=True)
class EncoderConfig:
    subsample_factor: int = 4
    hidden_dim: int = 32
    num_layers: int = 2


@dataclass(frozen=True)
class PredictorConfig:
    # Full-scale models use two 512-dim LSTM layers with dropout 0.3; the toy
    # predictor is one layer-normalized cell and dropout is omitted so runs
    # stay deterministic.
    d_emb: int = 32
    d_hid: int = 32


@dataclass(frozen=True)
class SharedHead:
    vocab_size: int


@dataclass(frozen=True)
class MultiHead:
    vocab_sizes: Mapping[str, int]

    def __post_init__(self):
        for lang in self.vocab_sizes:
            if "." in lang:
                raise ModelError(f"language id {lang!r} may not contain '.'")


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    encoder: EncoderConfig
    predictor: PredictorConfig
    head: SharedHead | MultiHead
    seed: int = 0

    def __post_init__(self):
        if self.encoder.subsample_factor < 1:
            raise ModelError("subsample_factor must be >= 1")
        if self.encoder.hidden_dim != self.predictor.d_hid:
            raise ModelError(
                "encoder hidden_dim must equal predictor d_hid (the joiner sums them)"
            )

    def head_languages(self) -> tuple[str, ...]:
        if isinstance(self.head, MultiHead):
            return tuple(self.head.vocab_sizes)
        return ()

    def vocab_size_for(self, language_id: str | None) -> int:
        if isinstance(self.head, SharedHead):
            return self.head.vocab_size
        if language_id not in self.head.vocab_sizes:
            raise ModelError(f"language {language_id!r} missing from model heads")
        return self.head.vocab_sizes[language_id]

    def to_dict(self) -> dict:
        head: dict
        if isinstance(self.head, SharedHead):
            head = {"type": "shared", "vocab_size": self.head.vocab_size}
        else:
            head = {"type": "multi", "vocab_sizes": dict(self.head.vocab_sizes)}
        return {
            "feature_dim": self.feature_dim,
            "encoder": vars(self.encoder).copy(),
            "predictor": vars(self.predictor).copy(),
            "head": head,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        head_data = data["head"]
        if head_data["type"] == "shared":
            head = SharedHead(vocab_size=head_data["vocab_size"])
        else:
            head = MultiHead(vocab_sizes=dict(head_data["vocab_sizes"]))
        return cls(
            feature_dim=data["feature_dim"],
            encoder=EncoderConfig(**data["encoder"]),
            predictor=PredictorConfig(**data["predictor"]),
            head=head,
            seed=data["seed"],
        )


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def head_names(self, language_id: str | None) -> tuple[str, str, str]:
        prefix = "head" if isinstance(self.config.head, SharedHead) else f"head.{language_id}"
        if isinstance(self.config.head, MultiHead) and language_id not in self.config.head.vocab_sizes:
            raise ModelError(f"language {language_id!r} missing from model heads")
        return f"{prefix}.emb", f"{prefix}.w", f"{prefix}.b"

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def _tensor_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], int | None]]:
    """(name, shape, fan_in) in construction order; fan_in None => zeros/ones init."""
    enc, pred = config.encoder, config.predictor
    H = enc.hidden_dim
    specs: list[tuple[str, tuple[int, ...], int | None]] = []
    in_dim = config.feature_dim * enc.subsample_factor
    for i in range(enc.num_layers):
        specs.append((f"enc.{i}.w", (in_dim, H), in_dim))
        specs.append((f"enc.{i}.b", (H,), None))
        in_dim = H
    specs.append(("pred.wx", (pred.d_emb, 4 * H), pred.d_emb))
    specs.append(("pred.wh", (H, 4 * H), H))
    specs.append(("pred.b", (4 * H,), None))
    specs.append(("pred.ln_g.gain", (4 * H,), None))
    specs.append(("pred.ln_g.bias", (4 * H,), None))
    specs.append(("pred.ln_c.gain", (H,), None))
    specs.append(("pred.ln_c.bias", (H,), None))
    heads: list[tuple[str, int]]
    if isinstance(config.head, SharedHead):
        heads = [("head", config.head.vocab_size)]
    else:
        heads = [(f"head.{lang}", v) for lang, v in config.head.vocab_sizes.items()]
    for prefix, vocab in heads:
        specs.append((f"{prefix}.emb", (vocab, pred.d_emb), pred.d_emb))
        specs.append((f"{prefix}.w", (H, vocab), H))
        specs.append((f"{prefix}.b", (vocab,), None))
    return specs


def init_params(config: ModelConfig) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases, unit gains."""
    rng = np.random.default_rng(config.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, fan_in in _tensor_specs(config):
        if fan_in is None:
            fill = 1.0 if name.endswith(".gain") else 0.0
            tensors[name] = np.full(shape, fill)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(config=config, tensors=tensors)


def is_trunk(name: str) -> bool:
    return name.startswith(("enc.", "pred."))


def parameter_count(params: ModelParams) -> int:
    return sum(t.size for t in params.tensors.values())


# ---------------------------------------------------------------------------
# Layer norm and LSTM cell
# ---------------------------------------------------------------------------


def _ln_forward(x, gain, bias):
    mu = x.mean()
    sigma = math.sqrt(x.var() + LN_EPS)
    xhat = (x - mu) / sigma
    return gain * xhat + bias, (xhat, sigma)


def _ln_backward(dy, gain, cache):
    xhat, sigma = cache
    dgain = dy * xhat
    dbias = dy
    dxhat = dy * gain
    dx = (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean()) / sigma
    return dx, dgain, dbias


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_step(x, h, c, p):
    z = x @ p["pred.wx"] + h @ p["pred.wh"] + p["pred.b"]
    zn, ln_g = _ln_forward(z, p["pred.ln_g.gain"], p["pred.ln_g.bias"])
    i, f, g, o = np.split(zn, 4)
    si, sf, so = _sigmoid(i), _sigmoid(f), _sigmoid(o)
    tg = np.tanh(g)
    c_new = sf * c + si * tg
    cn, ln_c = _ln_forward(c_new, p["pred.ln_c.gain"], p["pred.ln_c.bias"])
    tcn = np.tanh(cn)
    h_new = so * tcn
    cache = (x, h, c, ln_g, si, sf, so, tg, ln_c, tcn)
    return h_new, c_new, cache


def _lstm_step_backward(dh, dc, cache, p, grads):
    x, h, c, ln_g, si, sf, so, tg, ln_c, tcn = cache
    do = dh * tcn * so * (1 - so)
    dcn = dh * so * (1 - tcn**2)
    dc_from_ln, dgain_c, dbias_c = _ln_backward(dcn, p["pred.ln_c.gain"], ln_c)
    grads["pred.ln_c.gain"] += dgain_c
    grads["pred.ln_c.bias"] += dbias_c
    dc_total = dc + dc_from_ln
    df = dc_total * c * sf * (1 - sf)
    di = dc_total * tg * si * (1 - si)
    dg = dc_total * si * (1 - tg**2)
    dc_prev = dc_total * sf
    dzn = np.concatenate([di, df, dg, do])
    dz, dgain_g, dbias_g = _ln_backward(dzn, p["pred.ln_g.gain"], ln_g)
    grads["pred.ln_g.gain"] += dgain_g
    grads["pred.ln_g.bias"] += dbias_g
    grads["pred.wx"] += np.outer(x, dz)
    grads["pred.wh"] += np.outer(h, dz)
    grads["pred.b"] += dz
    dx = dz @ p["pred.wx"].T
    dh_prev = dz @ p["pred.wh"].T
    return dx, dh_prev, dc_prev


# ---------------------------------------------------------------------------
# Encoder / predictor / joiner
# ---------------------------------------------------------------------------


def _stack_frames(features: np.ndarray, factor: int) -> np.ndarray:
    t0, dim = features.shape
    frames = -(-t0 // factor)  # ceil
    padded = np.zeros((frames * factor, dim))
    padded[:t0] = features
    return padded.reshape(frames, factor * dim)


def _encoder_forward(features: np.ndarray, params: ModelParams):
    config = params.config
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != config.feature_dim:
        raise ModelError(
            f"expected features with dim {config.feature_dim}, got shape {features.shape}"
        )
    if features.shape[0] < config.encoder.subsample_factor:
        raise ModelError("need at least subsample_factor frames")
    x = _stack_frames(features, config.encoder.subsample_factor)
    caches = []
    for i in range(config.encoder.num_layers):
        z = x @ params.tensors[f"enc.{i}.w"] + params.tensors[f"enc.{i}.b"]
        y = np.tanh(z)
        caches.append((x, y))
        x = y
    return x, caches


def _encoder_backward(dout, caches, params: ModelParams, grads):
    d = dout
    for i in reversed(range(params.config.encoder.num_layers)):
        x, y = caches[i]
        dz = d * (1 - y**2)
        grads[f"enc.{i}.w"] += x.T @ dz
        grads[f"enc.{i}.b"] += dz.sum(axis=0)
        d = dz @ params.tensors[f"enc.{i}.w"].T


def encode(features: np.ndarray, params: ModelParams) -> np.ndarray:
    """Acoustic representation, one row per subsampled frame."""
    out, _ = _encoder_forward(features, params)
    return out


def _predictor_forward(prefix: Sequence[int], params: ModelParams, language_id: str | None):
    emb_name, _, _ = params.head_names(language_id)
    emb = params.tensors[emb_name]
    H = params.config.predictor.d_hid
    h = np.zeros(H)
    c = np.zeros(H)
    outs = [h]
    caches = []
    for token_id in prefix:
        if not 0 <= token_id < emb.shape[0]:
            raise ModelError(f"token id {token_id} out of range for head {language_id!r}")
        h, c, cache = _lstm_step(emb[token_id], h, c, params.tensors)
        outs.append(h)
        caches.append(cache)
    return np.stack(outs), caches


def predict(prefix: Sequence[int], params: ModelParams, language_id: str | None = None) -> np.ndarray:
    """Label-history representations: row u conditions on tokens < u."""
    outs, _ = _predictor_forward(prefix, params, language_id)
    return outs


def join(h_enc: np.ndarray, h_pred: np.ndarray, params: ModelParams,
         language_id: str | None = None) -> np.ndarray:
    """Logits for one (t, u) pair: W tanh(h_enc + h_pred) + b."""
    _, w_name, b_name = params.head_names(language_id)
    return np.tanh(h_enc + h_pred) @ params.tensors[w_name] + params.tensors[b_name]


def _joint_logits(enc, pred, params: ModelParams, language_id):
    _, w_name, b_name = params.head_names(language_id)
    q = np.tanh(enc[:, None, :] + pred[None, :, :])
    logits = q @ params.tensors[w_name] + params.tensors[b_name]
    return logits, q


def utterance_loss(
    features: np.ndarray,
    targets: Sequence[int],
    language_id: str | None,
    params: ModelParams,
    utterance_id: str = "",
) -> tuple[float, dict[str, np.ndarray]]:
    """NLL of one utterance and gradients w.r.t. every parameter it touches."""
    targets = list(targets)
    enc, enc_caches = _encoder_forward(features, params)
    pred, pred_caches = _predictor_forward(targets, params, language_id)
    logits, q = _joint_logits(enc, pred, params, language_id)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteLossError(utterance_id)
    result = rnnt_grad(JointLogGrid.from_logits(logits), targets, blank_id=BLANK_ID)
    if not np.isfinite(result.nll):
        raise NonFiniteLossError(utterance_id)
    gl = result.grad  # (T, U+1, V) w.r.t. pre-softmax logits

    emb_name, w_name, b_name = params.head_names(language_id)
    H = params.config.predictor.d_hid
    V = gl.shape[2]
    grads: dict[str, np.ndarray] = {
        name: np.zeros_like(params.tensors[name]) for name in params.tensors
        if is_trunk(name) or name in (emb_name, w_name, b_name)
    }
    grads[w_name] += q.reshape(-1, H).T @ gl.reshape(-1, V)
    grads[b_name] += gl.sum(axis=(0, 1))
    dq = gl @ params.tensors[w_name].T
    dsum = dq * (1 - q**2)
    _encoder_backward(dsum.sum(axis=1), enc_caches, params, grads)

    dpred = dsum.sum(axis=0)  # (U+1, H)
    dh = dpred[len(targets)].copy()
    dc = np.zeros(H)
    for u in reversed(range(len(targets))):
        dx, dh_prev, dc_prev = _lstm_step_backward(dh, dc, pred_caches[u], params.tensors, grads)
        grads[emb_name][targets[u]] += dx
        dh = dh_prev + dpred[u]
        dc = dc_prev
    return result.nll, grads


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.98
    warmup_steps: int = 20_000
    total_steps: int = 700_000
    final_lr_fraction: float = 0.1
    batch_size: int = 8
    clip_norm: float = 5.0

    def __post_init__(self):
        if not 0 < self.final_lr_fraction <= 1:
            raise ModelError("final_lr_fraction must be in (0, 1]")
        if self.warmup_steps >= self.total_steps:
            raise ModelError("warmup_steps must be < total_steps")


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup to the peak, then exponential decay that lands exactly on
    peak * final_lr_fraction at total_steps."""
    if step <= config.warmup_steps:
        if config.warmup_steps == 0:
            return config.peak_lr
        return config.peak_lr * step / config.warmup_steps
    progress = (step - config.warmup_steps) / (config.total_steps - config.warmup_steps)
    return config.peak_lr * config.final_lr_fraction**progress


@dataclass
class OptimizerState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def fresh(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            step=0,
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
        )


@dataclass(frozen=True)
class TrainExample:
    utterance_id: str
    features: np.ndarray
    target_ids: tuple[int, ...]
    language_id: str | None = None


def train_step(
    batch: Sequence[TrainExample],
    params: ModelParams,
    opt_state: OptimizerState,
    config: TrainConfig,
) -> tuple[ModelParams, OptimizerState, float]:
    """One Adam step on the batch-mean loss.

    Gradients accumulate in batch order (bit-reproducible); per-language head
    tensors that received no utterance this step are left untouched, moments
    included, so untrained heads stay bitwise identical.
    """
    if not batch:
        raise ModelError("batch must be non-empty")
    multi = isinstance(params.config.head, MultiHead)
    seen_languages = set()
    total: dict[str, np.ndarray] = {}
    loss_sum = 0.0
    for example in batch:
        nll, grads = utterance_loss(
            example.features, example.target_ids, example.language_id, params,
            utterance_id=example.utterance_id,
        )
        loss_sum += nll
        if multi:
            seen_languages.add(example.language_id)
        for name, grad in grads.items():
            if name in total:
                total[name] += grad
            else:
                total[name] = grad
    scale = 1.0 / len(batch)
    for name in total:
        total[name] *= scale
    mean_nll = loss_sum * scale

    norm_sq = sum(float((g * g).sum()) for g in total.values())
    norm = math.sqrt(norm_sq)
    if config.clip_norm > 0 and norm > config.clip_norm:
        clip_scale = config.clip_norm / norm
        for name in total:
            total[name] *= clip_scale

    def updatable(name: str) -> bool:
        if not multi or not name.startswith("head."):
            return True
        lang = name.split(".", 2)[1]
        return lang in seen_languages

    step = opt_state.step + 1
    lr = lr_schedule(step, config)
    bc1 = 1.0 - config.beta1**step
    bc2 = 1.0 - config.beta2**step
    new_tensors: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, tensor in params.tensors.items():
        if not updatable(name):
            new_tensors[name] = tensor
            new_m[name] = opt_state.m[name]
            new_v[name] = opt_state.v[name]
            continue
        grad = total.get(name)
        if grad is None:
            grad = np.zeros_like(tensor)
        m = config.beta1 * opt_state.m[name] + (1 - config.beta1) * grad
        v = config.beta2 * opt_state.v[name] + (1 - config.beta2) * grad * grad
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        new_tensors[name] = tensor - update
        new_m[name] = m
        new_v[name] = v
    new_params = ModelParams(config=params.config, tensors=new_tensors)
    new_state = OptimizerState(step=step, m=new_m, v=new_v)
    return new_params, new_state, mean_nll


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: Path,
    params: ModelParams,
    opt_state: OptimizerState,
    train_config: TrainConfig | None = None,
    extra: dict | None = None,
) -> None:
    """Self-describing .npz: config echo, step counter, tensors, Adam moments."""
    meta = {
        "model_config": params.config.to_dict(),
        "train_config": vars(train_config).copy() if train_config else None,
        "extra": extra or {},
    }
    arrays: dict[str, np.ndarray] = {
        "__meta__": np.array(json.dumps(meta, sort_keys=True)),
        "__step__": np.array(opt_state.step, dtype=np.int64),
    }
    for name, tensor in params.tensors.items():
        arrays[f"param/{name}"] = tensor
        arrays[f"adam_m/{name}"] = opt_state.m[name]
        arrays[f"adam_v/{name}"] = opt_state.v[name]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: Path) -> tuple[ModelParams, OptimizerState, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        step = int(data["__step__"])
        tensors = {}
        m = {}
        v = {}
        for key in data.files:
            if key.startswith("param/"):
                tensors[key[len("param/"):]] = data[key]
            elif key.startswith("adam_m/"):
                m[key[len("adam_m/"):]] = data[key]
            elif key.startswith("adam_v/"):
                v[key[len("adam_v/"):]] = data[key]
    config = ModelConfig.from_dict(meta["model_config"])
    params = ModelParams(config=config, tensors=tensors)
    opt_state = OptimizerState(step=step, m=m, v=v)
    return params, opt_state, meta


# ---------------------------------------------------------------------------
# Decoding adapters
# ---------------------------------------------------------------------------


class Predictor:
    """Stepping interface over the predictor network for the decoders."""

    def __init__(self, params: ModelParams, language_id: str | None = None):
        self.params = params
        emb_name, _, _ = params.head_names(language_id)
        self.emb = params.tensors[emb_name]
        self.hidden = params.config.predictor.d_hid

    def start(self):
        h = np.zeros(self.hidden)
        return h, (h, np.zeros(self.hidden))

    def step(self, state, token_id: int):
        h, c = state
        h_new, c_new, _ = _lstm_step(self.emb[token_id], h, c, self.params.tensors)
        return h_new, (h_new, c_new)


def make_joiner(params: ModelParams, language_id: str | None = None):
    _, w_name, b_name = params.head_names(language_id)
    w = params.tensors[w_name]
    b = params.tensors[b_name]

    def joiner(h_enc, h_pred):
        return np.tanh(h_enc + h_pred) @ w + b

    return joiner


def decode_utterance(
    features: np.ndarray,
    params: ModelParams,
    language_id: str | None = None,
    mode: str = "beam",
    beam_width: int = 4,
    max_symbols_per_frame: int = 10,
) -> list[int]:
    enc = encode(features, params)
    predictor = Predictor(params, language_id)
    joiner = make_joiner(params, language_id)
    if mode == "greedy":
        return greedy_decode(enc, predictor, joiner, BLANK_ID, max_symbols_per_frame)
    if mode == "beam":
        hyps = beam_decode(enc, predictor, joiner, BLANK_ID, beam_width, max_symbols_per_frame)
        return hyps[0][0] if hyps else []
    raise ModelError(f"unknown decode mode {mode!r}")
