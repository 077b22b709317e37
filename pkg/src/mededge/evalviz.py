"""Evaluation metrics, hidden-layer embeddings and exact t-SNE.

The t-SNE here is the exact O(n^2) algorithm: per-point Gaussian
bandwidths found by binary search so each conditional distribution has
entropy ln(perplexity), symmetrized joint P, Student-t (1 dof) Q, and
KL(P||Q) minimized by momentum gradient descent with early exaggeration.
Deliberately capped at small n; approximation schemes are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, UnsupportedModelError
from .network import NetworkGraph, forward

TSNE_MAX_POINTS = 5000
TSNE_EXAGGERATION = 12.0
TSNE_EXAGGERATION_ITERS = 250
TSNE_MOMENTUM_EARLY = 0.5
TSNE_MOMENTUM_LATE = 0.8
TSNE_ENTROPY_TOL = 1e-5


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _validate_distributions(predictions: np.ndarray) -> np.ndarray:
    p = np.asarray(predictions, dtype=np.float64)
    if p.ndim != 2:
        raise InputError("predictions must be a matrix (n x classes)")
    sums = p.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-4)
    if len(bad):
        raise InputError(
            f"row {bad[0]} does not sum to 1 (sum={sums[bad[0]]:.6f})"
        )
    if (p < 0).any():
        raise InputError("predictions contain negative probabilities")
    return p


def rank_matrix(predictions: np.ndarray) -> np.ndarray:
    """Class ids ordered by descending probability, ties by ascending id."""
    return np.argsort(-predictions, axis=1, kind="stable")


def topk_accuracy(predictions, labels, k: int) -> float:
    """Fraction of rows whose true label ranks within the top k."""
    p = _validate_distributions(predictions)
    labels = np.asarray(labels)
    if not 1 <= k <= p.shape[1]:
        raise InputError(f"k must be in [1, {p.shape[1]}]")
    order = rank_matrix(p)[:, :k]
    return float((order == labels[:, None]).any(axis=1).mean())


def mean_cross_entropy(predictions, labels) -> float:
    """Mean of per-sample -ln p_true, clamped at 1e-12."""
    p = _validate_distributions(predictions)
    labels = np.asarray(labels)
    picked = np.maximum(p[np.arange(len(labels)), labels], 1e-12)
    return float(np.mean(-np.log(picked)))


@dataclass
class EvalReport:
    top1: float
    top5: float
    mean_xent: float
    n: int
    confusion: np.ndarray  # (classes, classes), rows = true class

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "top5": self.top5,
            "mean_cross_entropy": self.mean_xent,
            "n": self.n,
        }


def evaluate(predictions, labels) -> EvalReport:
    p = _validate_distributions(predictions)
    labels = np.asarray(labels)
    n_classes = p.shape[1]
    top1 = topk_accuracy(p, labels, 1)
    top5 = topk_accuracy(p, labels, min(5, n_classes))
    xent = mean_cross_entropy(p, labels)
    confusion = np.zeros((n_classes, n_classes), np.int64)
    preds = rank_matrix(p)[:, 0]
    np.add.at(confusion, (labels, preds), 1)
    return EvalReport(top1, top5, xent, len(labels), confusion)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingSet:
    matrix: np.ndarray  # (n, hidden_width)
    labels: np.ndarray | None
    fingerprint: str


def extract_embeddings(handle, inputs, labels=None) -> EmbeddingSet:
    """Activations feeding the final dense layer (the last hidden layer).

    `handle` is an infer.ModelHandle or a bare NetworkGraph.
    """
    if isinstance(handle, NetworkGraph):
        graph, fingerprint = handle, "unpacked-graph"
    else:
        graph, fingerprint = handle.graph, handle.fingerprint
    dense_idxs = [i for i, l in enumerate(graph.layers) if l.kind == "dense"]
    if not dense_idxs:
        raise UnsupportedModelError("model has no dense layer to embed from")
    head = dense_idxs[-1]
    if head == 0:
        raise UnsupportedModelError(
            "model has no hidden layer: the final dense layer reads the raw input"
        )
    x = np.asarray(inputs)
    single = x.shape == tuple(graph.input_shape)
    _, trace = forward(graph, x)
    hidden = trace.outputs[head - 1]
    mat = hidden.reshape(hidden.shape[0], -1).astype(np.float32)
    if single:
        mat = mat[:1]
    return EmbeddingSet(
        matrix=mat,
        labels=None if labels is None else np.asarray(labels),
        fingerprint=fingerprint,
    )


def export_points_csv(matrix, labels, path) -> None:
    """One point per row, comma-separated coordinates, label last."""
    matrix = np.asarray(matrix)
    labels = np.asarray(labels)
    lines = [
        ",".join(repr(float(v)) for v in row) + f",{int(label)}"
        for row, label in zip(matrix, labels)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def import_points_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows, labels = [], []
    for ln in Path(path).read_text().splitlines():
        if not ln.strip():
            continue
        parts = ln.split(",")
        rows.append([float(v) for v in parts[:-1]])
        labels.append(int(float(parts[-1])))
    return np.array(rows, np.float64), np.array(labels, np.int64)


# ---------------------------------------------------------------------------
# exact t-SNE
# ---------------------------------------------------------------------------


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _entropy_and_probs(d_row: np.ndarray, beta: float, i: int):
    """Shannon entropy (nats) and conditional probs for one point."""
    logits = -beta * np.delete(d_row, i)  # self-affinity excluded
    shifted = logits - logits.max()
    e = np.exp(shifted)
    s = e.sum()
    # H = -sum p ln p, computed stably from the shifted logits
    h = float(np.log(s) - (e * shifted).sum() / s)
    return h, np.insert(e / s, i, 0.0)


def binary_search_bandwidths(
    dists: np.ndarray, perplexity: float, tol: float = TSNE_ENTROPY_TOL, max_iter: int = 100
):
    """Per-point precision beta so conditional entropy = ln(perplexity).

    Returns (P_conditional, betas, entropy_errors); points whose search
    did not converge within tol keep their best beta and show up with a
    large entropy error (callers flag them).
    """
    n = len(dists)
    target = float(np.log(perplexity))
    p_cond = np.zeros((n, n))
    betas = np.ones(n)
    errors = np.zeros(n)
    for i in range(n):
        beta, lo, hi = 1.0, 0.0, np.inf
        h, p = _entropy_and_probs(dists[i], beta, i)
        for _ in range(max_iter):
            if abs(h - target) <= tol:
                break
            if h > target:  # too wide: raise beta
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
            h, p = _entropy_and_probs(dists[i], beta, i)
        betas[i] = beta
        errors[i] = abs(h - target)
        p_cond[i] = p
    return p_cond, betas, errors


def joint_probabilities(p_cond: np.ndarray) -> np.ndarray:
    n = len(p_cond)
    p = (p_cond + p_cond.T) / (2.0 * n)
    return np.maximum(p, 1e-12)


def _student_t_q(y: np.ndarray):
    d = pairwise_sq_dists(y)
    w = 1.0 / (1.0 + d)
    np.fill_diagonal(w, 0.0)
    q = w / w.sum()
    return np.maximum(q, 1e-12), w


def kl_and_grad(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P||Q) and its gradient w.r.t. the embedding coordinates."""
    q, w = _student_t_q(y)
    mask = ~np.eye(len(p), dtype=bool)
    kl = float((p * (np.log(p) - np.log(q)))[mask].sum())
    pq_w = (p - q) * w
    grad = 4.0 * ((pq_w.sum(axis=1)[:, None] * y) - pq_w @ y)
    return kl, grad


@dataclass
class TsneResult:
    coords: np.ndarray
    kl_trace: list[float] = field(default_factory=list)
    betas: np.ndarray | None = None
    entropy_errors: np.ndarray | None = None
    flagged_points: list[int] = field(default_factory=list)


def tsne_embed(
    embeddings,
    out_dims: int = 2,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
) -> TsneResult:
    """Exact t-SNE projection to 2 or 3 dimensions, deterministic per seed."""
    x = np.asarray(embeddings, dtype=np.float64)
    n = len(x)
    if out_dims not in (2, 3):
        raise InputError("out_dims must be 2 or 3")
    if n < 4:
        raise InputError("need at least 4 points")
    if n > TSNE_MAX_POINTS:
        raise InputError(f"exact t-SNE capped at {TSNE_MAX_POINTS} points")
    max_perp = (n - 1) / 3.0
    if perplexity > max_perp:
        raise InputError(
            f"perplexity {perplexity} infeasible for {n} points; max {max_perp:.2f}"
        )
    if perplexity <= 1.0:
        raise InputError("perplexity must be > 1")

    dists = pairwise_sq_dists(x)
    p_cond, betas, errors = binary_search_bandwidths(dists, perplexity)
    flagged = [int(i) for i in np.flatnonzero(errors > TSNE_ENTROPY_TOL)]
    p = joint_probabilities(p_cond)

    rng = np.random.default_rng(abs(int(seed)))
    y = rng.normal(0.0, 1e-4, (n, out_dims))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace = []
    for it in range(iterations):
        exaggerate = it < TSNE_EXAGGERATION_ITERS
        # exaggerated P is deliberately left unnormalized: the point is to
        # boost attraction relative to repulsion
        p_eff = p * TSNE_EXAGGERATION if exaggerate else p
        _, grad = kl_and_grad(p_eff, y)
        momentum = TSNE_MOMENTUM_EARLY if exaggerate else TSNE_MOMENTUM_LATE
        # adaptive per-coordinate gains damp the oscillation that plain
        # momentum descent develops on strongly attracted pairs
        same_dir = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_dir, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        kl, _ = kl_and_grad(p, y)
        kl_trace.append(kl)
    return TsneResult(
        coords=y,
        kl_trace=kl_trace,
        betas=betas,
        entropy_errors=errors,
        flagged_points=flagged,
    )
