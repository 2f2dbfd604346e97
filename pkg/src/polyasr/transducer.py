"""Log-space transducer loss with analytic gradients, plus greedy and beam decoding.

The loss sums, over every monotone alignment of T encoder frames and U output
tokens, the probability of emitting the target sequence interleaved with blank
symbols, ending with a mandatory blank on the last frame.  All lattice math is
done in natural-log double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

NEG_INF = -np.inf

# Tolerance for "each (t, u) slice is a normalized log distribution".
NORMALIZATION_TOL = 1e-6


def logsumexp2(a: float, b: float) -> float:
    """Stable log(exp(a) + exp(b)); handles -inf operands."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = a if a > b else b
    return m + np.log1p(np.exp(-abs(a - b)))


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(softmax(logits)) along `axis`, computed with max subtraction."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def workspace_cells(batch: int, frames: int, target_len: int, vocab_size: int) -> int:
    """Number of joint-grid cells a batched loss evaluation must hold.

    Memory grows as batch x frames x (target_len + 1) x vocab_size, which is why
    vocabulary size directly limits feasible batch sizes.
    """
    return batch * frames * (target_len + 1) * vocab_size


class JointLogGrid:
    """T x (U+1) x V grid of log-probabilities over the output vocabulary.

    Entry (t, u, k) is the log-probability of emitting symbol k after consuming
    t frames and emitting u target tokens.  Every (t, u) slice must be a
    normalized distribution.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError(f"expected (T, U+1, V) array, got shape {values.shape}")
        if values.size and np.isnan(values).any():
            raise ValueError("grid contains NaN log-probabilities")
        slice_totals = np.logaddexp.reduce(values, axis=-1)
        err = float(np.max(np.abs(slice_totals))) if slice_totals.size else 0.0
        if err > NORMALIZATION_TOL:
            raise ValueError(
                f"grid slices are not normalized log distributions (max |logsumexp| = {err:.3g})"
            )
        self.values = values

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "JointLogGrid":
        """Normalize raw logits along the vocabulary axis."""
        return cls(log_softmax(np.asarray(logits, dtype=np.float64), axis=-1))

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def target_len(self) -> int:
        return self.values.shape[1] - 1

    @property
    def vocab_size(self) -> int:
        return self.values.shape[2]


@dataclass
class AlignmentLattice:
    """Forward (alpha) and backward (beta) log-sums over the T x (U+1) lattice."""

    alpha: np.ndarray
    beta: np.ndarray
    total_log_prob: float

    def dump(self) -> str:
        """Line-delimited `t u alpha beta` debug dump."""
        lines = []
        T, U1 = self.alpha.shape
        for t in range(T):
            for u in range(U1):
                lines.append(f"{t} {u} {self.alpha[t, u]:.12g} {self.beta[t, u]:.12g}")
        return "\n".join(lines) + "\n"


@dataclass
class LossResult:
    """Negative log-likelihood and its gradient w.r.t. pre-softmax logits."""

    nll: float
    grad: np.ndarray


def _validate(grid: JointLogGrid, targets: Sequence[int], blank_id: int) -> np.ndarray:
    T, U1, V = grid.values.shape
    targets = np.asarray(targets, dtype=np.int64)
    if T < 1:
        raise ValueError("grid must have at least one frame (T >= 1)")
    if targets.size != U1 - 1:
        raise ValueError(f"targets length {targets.size} does not match grid U = {U1 - 1}")
    if targets.size and (np.any(targets == blank_id) or np.any(targets < 0) or np.any(targets >= V)):
        raise ValueError("targets must be valid non-blank ids within the vocabulary")
    if not 0 <= blank_id < V:
        raise ValueError(f"blank_id {blank_id} out of range for V = {V}")
    return targets


def rnnt_forward_backward(
    grid: JointLogGrid, targets: Sequence[int], blank_id: int = 0
) -> AlignmentLattice:
    """Run the alpha and beta recursions over the alignment lattice."""
    targets = _validate(grid, targets, blank_id)
    logp = grid.values
    T, U1, _ = logp.shape
    U = U1 - 1
    blank = logp[:, :, blank_id]  # (T, U+1)
    # label[t, u] = log-prob of emitting targets[u] at node (t, u), u < U
    label = logp[:, np.arange(U), targets] if U else np.zeros((T, 0))

    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + blank[t - 1, u] if t > 0 else NEG_INF
            b = alpha[t, u - 1] + label[t, u - 1] if u > 0 else NEG_INF
            alpha[t, u] = logsumexp2(a, b)

    beta = np.full((T, U1), NEG_INF)
    beta[T - 1, U] = blank[T - 1, U]
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            a = blank[t, u] + beta[t + 1, u] if t < T - 1 else NEG_INF
            b = label[t, u] + beta[t, u + 1] if u < U else NEG_INF
            beta[t, u] = logsumexp2(a, b)

    total = alpha[T - 1, U] + blank[T - 1, U]
    return AlignmentLattice(alpha=alpha, beta=beta, total_log_prob=float(total))


def rnnt_nll(grid: JointLogGrid, targets: Sequence[int], blank_id: int = 0) -> float:
    """Negative log-likelihood of the target sequence under the joint grid."""
    lattice = rnnt_forward_backward(grid, targets, blank_id)
    return -lattice.total_log_prob


def rnnt_grad(grid: JointLogGrid, targets: Sequence[int], blank_id: int = 0) -> LossResult:
    """NLL plus its gradient w.r.t. the pre-softmax logits of every grid cell.

    The gradient is assembled from transition occupancies (alpha * emission *
    beta of the destination node) composed with the softmax Jacobian, so each
    (t, u) slice sums to zero.
    """
    targets = _validate(grid, targets, blank_id)
    lattice = rnnt_forward_backward(grid, targets, blank_id)
    logp = grid.values
    T, U1, V = logp.shape
    U = U1 - 1
    log_z = lattice.total_log_prob
    alpha, beta = lattice.alpha, lattice.beta

    # d(nll)/d(log p): minus the posterior occupancy of each emission arc.
    dlogp = np.zeros((T, U1, V))
    blank = logp[:, :, blank_id]
    if T > 1:
        occ_blank = alpha[: T - 1, :] + blank[: T - 1, :] + beta[1:, :] - log_z
        dlogp[: T - 1, :, blank_id] = -np.exp(occ_blank)
    # Final mandatory blank at (T-1, U): occupancy is exactly 1.
    dlogp[T - 1, U, blank_id] = -1.0
    if U:
        occ_label = alpha[:, :U] + logp[:, np.arange(U), targets] + beta[:, 1:] - log_z
        dlogp[:, np.arange(U), targets] -= np.exp(occ_label)

    row_sum = dlogp.sum(axis=-1, keepdims=True)
    grad = dlogp - np.exp(logp) * row_sum
    return LossResult(nll=-log_z, grad=grad)


def rnnt_nll_batch(
    grids: Sequence[JointLogGrid], targets: Sequence[Sequence[int]], blank_id: int = 0
) -> list[float]:
    """Per-utterance losses in fixed batch order (bit-identical to sequential calls)."""
    if len(grids) != len(targets):
        raise ValueError("grids and targets must pair up")
    return [rnnt_nll(g, t, blank_id) for g, t in zip(grids, targets)]


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------
#
# The predictor is an object with
#     start() -> (h_pred, state)
#     step(state, token_id) -> (h_pred, state)
# and the joiner is a callable (h_enc, h_pred) -> logits over the vocabulary.


def greedy_decode(
    encoder_out: Sequence,
    predictor,
    joiner: Callable,
    blank_id: int = 0,
    max_symbols_per_frame: int = 10,
) -> list[int]:
    """Frame-synchronous argmax decoding.

    At each frame, non-blank argmax symbols are emitted (advancing the
    predictor) until blank wins or `max_symbols_per_frame` is reached, which
    bounds the output length and guarantees termination.
    """
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    h_pred, state = predictor.start()
    out: list[int] = []
    for h_enc in encoder_out:
        for _ in range(max_symbols_per_frame):
            logits = np.asarray(joiner(h_enc, h_pred))
            k = int(np.argmax(logits))
            if k == blank_id:
                break
            out.append(k)
            h_pred, state = predictor.step(state, k)
    return out


class _Hyp:
    __slots__ = ("score", "h_pred", "state", "pending")

    def __init__(self, score, h_pred=None, state=None, pending=None):
        self.score = score
        self.h_pred = h_pred
        self.state = state
        # (parent_state, last_token) when predictor output not realized yet
        self.pending = pending


def beam_decode(
    encoder_out: Sequence,
    predictor,
    joiner: Callable,
    blank_id: int = 0,
    beam_width: int = 4,
    max_symbols_per_frame: int = 10,
) -> list[tuple[list[int], float]]:
    """Label-synchronous beam search with merged identical label prefixes.

    Scores are the summed log-probabilities of every alignment explored for a
    prefix.  Ties are broken by lexicographic token order.  Expansions are
    capped per frame (beam_width * max_symbols_per_frame) so the search
    terminates even on joiners that never favor blank, and each expansion
    keeps only the top max(2 * beam_width, 8) label continuations (exhaustive
    whenever the vocabulary is that small).
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    h0, s0 = predictor.start()
    finished: dict[tuple[int, ...], _Hyp] = {(): _Hyp(0.0, h0, s0)}
    label_keep = max(2 * beam_width, 8)

    def realize(hyp: _Hyp) -> None:
        if hyp.pending is not None:
            parent_state, tok = hyp.pending
            hyp.h_pred, hyp.state = predictor.step(parent_state, tok)
            hyp.pending = None

    for h_enc in encoder_out:
        active = finished
        finished = {}
        expansions = 0
        cap = beam_width * max_symbols_per_frame
        while active and expansions < cap:
            if len(finished) >= beam_width:
                kth = sorted(h.score for h in finished.values())[-beam_width]
                if kth >= max(h.score for h in active.values()):
                    break
            # pop the most probable active prefix (lexicographic tie-break)
            y = min(active, key=lambda k: (-active[k].score, k))
            hyp = active.pop(y)
            realize(hyp)
            expansions += 1
            logp = log_softmax(np.asarray(joiner(h_enc, hyp.h_pred), dtype=np.float64))
            done_score = hyp.score + logp[blank_id]
            if y in finished:
                finished[y].score = logsumexp2(finished[y].score, done_score)
            else:
                finished[y] = _Hyp(done_score, hyp.h_pred, hyp.state)
            if logp.shape[0] - 1 <= label_keep:
                labels = range(logp.shape[0])
            else:
                labels = np.argpartition(-logp, label_keep)[: label_keep + 1]
            for k in labels:
                k = int(k)
                if k == blank_id:
                    continue
                ext = y + (k,)
                ext_score = hyp.score + logp[k]
                if ext in active:
                    active[ext].score = logsumexp2(active[ext].score, ext_score)
                else:
                    active[ext] = _Hyp(ext_score, pending=(hyp.state, k))
        ranked = sorted(finished.items(), key=lambda kv: (-kv[1].score, kv[0]))
        finished = dict(ranked[:beam_width])

    ranked = sorted(finished.items(), key=lambda kv: (-kv[1].score, kv[0]))
    return [(list(y), h.score) for y, h in ranked]
