"""Metrics, embedding and t-SNE tests. t-SNE cluster quality is judged
by sklearn's silhouette score as an independent oracle."""

import math

import numpy as np
import pytest
from sklearn.metrics import silhouette_score

from mededge import evalviz as ev
from mededge import network as nw
from mededge.errors import InputError, UnsupportedModelError


# ---------------------------------------------------------------------------
# topk / cross entropy
# ---------------------------------------------------------------------------


def test_topk_perfect_one_hot_predictions():
    preds = np.eye(6)
    labels = np.arange(6)
    for k in (1, 2, 5, 6):
        assert ev.topk_accuracy(preds, labels, k) == 1.0


def test_topk_hand_ranked_rows():
    # truths rank 1st, 3rd and 6th in their rows -> top5 = 2/3
    def row(rank_of_true, true_id, c=8):
        probs = np.linspace(0.9, 0.1, c)
        probs /= probs.sum()
        order = [i for i in range(c) if i != true_id]
        out = np.zeros(c)
        ranked_ids = order[: rank_of_true - 1] + [true_id] + order[rank_of_true - 1 :]
        for rank, cid in enumerate(ranked_ids):
            out[cid] = probs[rank]
        return out

    preds = np.stack([row(1, 0), row(3, 1), row(6, 2)])
    labels = np.array([0, 1, 2])
    assert ev.topk_accuracy(preds, labels, 5) == pytest.approx(2 / 3)
    assert ev.topk_accuracy(preds, labels, 1) == pytest.approx(1 / 3)
    assert ev.topk_accuracy(preds, labels, 6) == pytest.approx(1.0)


def test_topk_monotone_in_k():
    rng = np.random.default_rng(0)
    preds = rng.random((50, 10))
    preds /= preds.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 10, 50)
    accs = [ev.topk_accuracy(preds, labels, k) for k in range(1, 11)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))
    assert accs[-1] == 1.0


def test_topk_rejects_non_distribution_rows():
    with pytest.raises(InputError, match="row 1"):
        ev.topk_accuracy(np.array([[0.5, 0.5], [0.9, 0.4]]), [0, 1], 1)


def test_topk_tie_break_matches_infer():
    from mededge.infer import rank_probabilities

    preds = np.array([[0.25, 0.25, 0.25, 0.25]])
    assert ev.rank_matrix(preds)[0].tolist() == [0, 1, 2, 3]
    assert [i for i, _ in rank_probabilities(preds[0], 4)] == [0, 1, 2, 3]


def test_mean_cross_entropy_closed_forms():
    preds = np.eye(4)
    assert ev.mean_cross_entropy(preds, np.arange(4)) == 0.0
    uniform = np.full((5, 26), 1.0 / 26)
    labels = np.arange(5)
    assert ev.mean_cross_entropy(uniform, labels) == pytest.approx(
        math.log(26), abs=1e-9
    )
    assert ev.mean_cross_entropy(uniform, labels) == pytest.approx(3.258, abs=1e-3)


def test_mean_cross_entropy_matches_per_sample_loss():
    from mededge.train import cross_entropy_loss

    rng = np.random.default_rng(1)
    preds = rng.random((10, 6))
    preds /= preds.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 6, 10)
    per_sample = []
    for i in range(10):
        onehot = np.zeros(6)
        onehot[labels[i]] = 1.0
        per_sample.append(cross_entropy_loss(preds[i], onehot))
    assert ev.mean_cross_entropy(preds, labels) == pytest.approx(
        np.mean(per_sample), abs=1e-9
    )


def test_evaluate_confusion_counts_sum_to_n():
    rng = np.random.default_rng(2)
    preds = rng.random((40, 7))
    preds /= preds.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 7, 40)
    report = ev.evaluate(preds, labels)
    assert report.confusion.sum() == report.n == 40
    assert report.top1 <= report.top5


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


def test_extract_embeddings_shape_and_identity(trained_desk_graph, desk_data):
    x = desk_data["xte"][:32]
    emb = ev.extract_embeddings(trained_desk_graph, x)
    assert emb.matrix.shape == (32, 64)  # desk hidden width
    dup = ev.extract_embeddings(trained_desk_graph, np.stack([x[0], x[0]]))
    np.testing.assert_array_equal(dup.matrix[0], dup.matrix[1])


def test_extract_embeddings_requires_hidden_layer():
    g = nw.build_mlp(4, 3, 0, 2, seed=0)  # dense straight to softmax
    with pytest.raises(UnsupportedModelError):
        ev.extract_embeddings(g, np.zeros((2, 4), np.float32))


def test_embeddings_cluster_by_class(trained_desk_graph, desk_world, desk_data):
    # within-class L2 distances should usually undercut the cross-class mean
    x, y = desk_data["xte"], desk_data["yte"]
    emb = ev.extract_embeddings(trained_desk_graph, x[:400]).matrix
    labels = y[:400]
    rng = np.random.default_rng(3)
    d_all = np.sqrt(((emb[:, None, :] - emb[None, :, :]) ** 2).sum(-1))
    cross_mean = d_all[labels[:, None] != labels[None, :]].mean()
    same_mask = (labels[:, None] == labels[None, :]) & ~np.eye(len(labels), dtype=bool)
    pairs = np.argwhere(same_mask)
    wins = sum(1 for a, b in pairs if d_all[a, b] < cross_mean)
    assert wins / len(pairs) >= 0.8


def test_export_import_points_roundtrip(tmp_path):
    pts = np.random.default_rng(0).normal(0, 1, (10, 3))
    labels = np.arange(10) % 3
    p = tmp_path / "pts.csv"
    ev.export_points_csv(pts, labels, p)
    back, lab = ev.import_points_csv(p)
    np.testing.assert_array_equal(back, pts)
    np.testing.assert_array_equal(lab, labels)
    # label is the last column of each row
    assert p.read_text().splitlines()[0].rsplit(",", 1)[1] == "0"


# ---------------------------------------------------------------------------
# t-SNE
# ---------------------------------------------------------------------------


def _two_clusters(n_per=20, sep=100.0, seed=0, dim=10):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 1.0, (n_per, dim))
    b = rng.normal(0, 1.0, (n_per, dim))
    b[:, 0] += sep
    labels = np.array([0] * n_per + [1] * n_per)
    return np.vstack([a, b]), labels


def test_tsne_entropy_calibration():
    x, _ = _two_clusters()
    res = ev.tsne_embed(x, perplexity=10, iterations=50, seed=1)
    assert res.entropy_errors.max() <= 1e-5
    assert res.flagged_points == []


def test_tsne_two_clusters_silhouette():
    x, labels = _two_clusters(sep=100.0)
    res = ev.tsne_embed(x, perplexity=10, iterations=500, seed=2)
    assert silhouette_score(res.coords, labels) > 0.5


def test_tsne_kl_non_increasing_tail():
    x, _ = _two_clusters(sep=30.0, seed=4)
    res = ev.tsne_embed(x, perplexity=8, iterations=400, seed=3)
    tail = res.kl_trace[-100:]
    assert all(b <= a + 1e-9 for a, b in zip(tail, tail[1:]))


def test_tsne_deterministic_per_seed():
    x, _ = _two_clusters(n_per=10)
    a = ev.tsne_embed(x, perplexity=5, iterations=120, seed=9)
    b = ev.tsne_embed(x, perplexity=5, iterations=120, seed=9)
    c = ev.tsne_embed(x, perplexity=5, iterations=120, seed=10)
    np.testing.assert_array_equal(a.coords, b.coords)
    assert (a.coords != c.coords).any()


def test_tsne_duplicate_points_land_close():
    x, _ = _two_clusters(n_per=10, sep=20.0, seed=5)
    x[3] = x[0]  # exact duplicate
    res = ev.tsne_embed(x, perplexity=5, iterations=1000, seed=6)
    d = np.sqrt(((res.coords[:, None] - res.coords[None, :]) ** 2).sum(-1))
    dup_dist = d[0, 3]
    others = d[np.triu_indices(len(x), k=1)]
    assert dup_dist <= np.percentile(others, 5)


def test_tsne_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.normal(0, 1, (6, 4))
    dists = ev.pairwise_sq_dists(x)
    p_cond, _, _ = ev.binary_search_bandwidths(dists, perplexity=1.5)
    p = ev.joint_probabilities(p_cond)
    y = rng.normal(0, 0.1, (6, 2))
    _, grad = ev.kl_and_grad(p, y)
    h = 1e-6
    for i in range(6):
        for j in range(2):
            y[i, j] += h
            up, _ = ev.kl_and_grad(p, y)
            y[i, j] -= 2 * h
            down, _ = ev.kl_and_grad(p, y)
            y[i, j] += h
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(grad[i, j]), 1e-6)
            assert abs(fd - grad[i, j]) / denom < 1e-3


def test_tsne_input_validation():
    x, _ = _two_clusters(n_per=10)
    with pytest.raises(InputError, match="max"):
        ev.tsne_embed(x, perplexity=10.0, iterations=10)  # > (n-1)/3
    with pytest.raises(InputError):
        ev.tsne_embed(x[:3], perplexity=2, iterations=10)
    with pytest.raises(InputError):
        ev.tsne_embed(x, out_dims=4, perplexity=5, iterations=10)


def test_tsne_three_dims_supported():
    x, labels = _two_clusters(n_per=12)
    res = ev.tsne_embed(x, out_dims=3, perplexity=6, iterations=1000, seed=0)
    assert res.coords.shape == (24, 3)
    assert silhouette_score(res.coords, labels) > 0.5
