"""Independent brute-force oracles used by unit and acceptance tests.

These deliberately avoid the library's dynamic-programming code paths: losses
are computed by enumerating alignments, gradients by central finite
differences, and alignment costs by exhaustive recursion.
"""

from itertools import permutations

import numpy as np

from polyasr.transducer import JointLogGrid, log_softmax, rnnt_nll


def enumerate_alignments_nll(log_probs: np.ndarray, targets, blank_id: int = 0) -> float:
    """Sum path probabilities over every monotone alignment, by enumeration.

    A path interleaves T-1 frame-advancing blanks with the U label emissions in
    any order, then takes the mandatory final blank on the last frame.
    """
    T, U1, _ = log_probs.shape
    U = U1 - 1
    moves = ("B",) * (T - 1) + ("L",) * U
    total = -np.inf
    for path in set(permutations(moves)):
        t = u = 0
        lp = 0.0
        for move in path:
            if move == "B":
                lp += log_probs[t, u, blank_id]
                t += 1
            else:
                lp += log_probs[t, u, targets[u]]
                u += 1
        lp += log_probs[T - 1, U, blank_id]
        total = np.logaddexp(total, lp)
    return -total


def random_grid(rng, T: int, U: int, V: int) -> JointLogGrid:
    """Normalized random joint grid."""
    return JointLogGrid.from_logits(rng.normal(size=(T, U + 1, V)))


def finite_difference_grad(logits: np.ndarray, targets, blank_id: int = 0, step: float = 1e-5):
    """Central finite differences of the NLL w.r.t. every pre-softmax logit."""
    grad = np.zeros_like(logits)
    it = np.nditer(logits, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        plus = logits.copy()
        plus[idx] += step
        minus = logits.copy()
        minus[idx] -= step
        nll_plus = rnnt_nll(JointLogGrid.from_logits(plus), targets, blank_id)
        nll_minus = rnnt_nll(JointLogGrid.from_logits(minus), targets, blank_id)
        grad[idx] = (nll_plus - nll_minus) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a - b| / max(|a|, |b|, floor)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def brute_force_edit_distance(ref, hyp) -> int:
    """Minimal unit-cost edit distance by exhaustive recursion (lengths <= ~6)."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    same = 0 if ref[0] == hyp[0] else 1
    return min(
        brute_force_edit_distance(ref[1:], hyp[1:]) + same,
        brute_force_edit_distance(ref[1:], hyp) + 1,
        brute_force_edit_distance(ref, hyp[1:]) + 1,
    )


class TablePredictor:
    """Predictor whose hidden output is simply the clamped prefix length."""

    def __init__(self, max_u: int):
        self.max_u = max_u

    def start(self):
        return 0, 0

    def step(self, state, token_id):
        u = min(state + 1, self.max_u)
        return u, u


class TableJoiner:
    """Joiner backed by a (T, U_max+1, V) logit table, clamping u."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)

    def __call__(self, h_enc, h_pred):
        return self.table[h_enc, min(h_pred, self.table.shape[1] - 1)]


def table_model_sequence_logprob(table_logp: np.ndarray, seq, blank_id: int = 0) -> float:
    """Exact log P(seq) for a table-driven model, via the library-independent
    alignment enumeration on a grid built by clamping the table's u axis."""
    T, Umax1, V = table_logp.shape
    U = len(seq)
    grid = np.empty((T, U + 1, V))
    for u in range(U + 1):
        grid[:, u, :] = table_logp[:, min(u, Umax1 - 1), :]
    return -enumerate_alignments_nll(grid, list(seq), blank_id)


def enumerate_best_sequence(table_logp: np.ndarray, blank_id: int = 0, max_len: int = 12):
    """Highest-probability label sequence of a table model, by enumeration.

    Enumerates sequences in order of length while tracking the total
    probability mass seen; stops once the best found provably beats everything
    unenumerated (remaining mass < best).  Returns (sequence, logprob).
    """
    V = table_logp.shape[2]
    labels = [k for k in range(V) if k != blank_id]
    best_seq, best_lp = None, -np.inf
    mass = 0.0
    for length in range(max_len + 1):
        for seq in _sequences(labels, length):
            lp = table_model_sequence_logprob(table_logp, seq, blank_id)
            mass += np.exp(lp)
            if lp > best_lp or (lp == best_lp and best_seq is not None and list(seq) < best_seq):
                best_seq, best_lp = list(seq), lp
        if best_lp > np.log(max(1.0 - mass, 0.0) + 1e-300):
            return best_seq, best_lp, True
    return best_seq, best_lp, False


def _sequences(labels, length):
    if length == 0:
        yield ()
        return
    for prefix in _sequences(labels, length - 1):
        for k in labels:
            yield prefix + (k,)
