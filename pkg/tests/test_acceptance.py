"""Acceptance suite: one test per criterion, each printing a PASS/FAIL
line with the measured values (run with -s to see them live).

Full-scale corpus results are not reproducible at desk scale; these
criteria are the property- and ratio-based substitutes, at the stated
tolerances.
"""

import gc
import math
import time

import numpy as np
import pytest
from sklearn.metrics import silhouette_score

from mededge import evalviz as ev
from mededge import infer as inf
from mededge import meddata as md
from mededge import modelpack as mp
from mededge import network as nw
from mededge import train as tr
from mededge.cli import pipeline_smoke


def criterion(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"[ACCEPTANCE {num:02d}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def _batched_probs(graph, x, batch=1024):
    outs = []
    for start in range(0, len(x), batch):
        probs, _ = nw.forward(graph, x[start : start + batch])
        outs.append(probs)
    return np.vstack(outs)


# -- 1 ----------------------------------------------------------------------


def test_criterion_01_quantization_size_ratio(big_bundles):
    started = time.perf_counter()
    f32, q8 = big_bundles["f32_layout"], big_bundles["q8_layout"]
    n_params = sum(int(np.prod(e.shape)) for e in f32.tensors)
    blob_ratio = q8.blob_size / f32.blob_size
    file_ratio = q8.file_size / f32.file_size
    elapsed = time.perf_counter() - started
    criterion(
        1,
        "quantization size ratio",
        n_params >= 1_000_000
        and 0.25 <= blob_ratio <= 0.27
        and file_ratio <= 0.30
        and elapsed < 60,
        f"params={n_params:,} blob_ratio={blob_ratio:.4f} "
        f"file_ratio={file_ratio:.4f} check_time={elapsed:.1f}s",
    )


# -- 2 ----------------------------------------------------------------------


def test_criterion_02_quantization_accuracy_parity(desk_world, desk_bundles):
    started = time.perf_counter()
    x, y = md.samples_to_arrays(md.sample_dataset(desk_world, 10_000, seed=44))
    f32 = inf.load_bundle(desk_bundles["f32"], cache_policy="none")
    q8 = inf.load_bundle(desk_bundles["q8"], cache_policy="per-layer")
    top5_f32 = ev.topk_accuracy(_batched_probs(f32.graph, x), y, 5)
    top5_q8 = ev.topk_accuracy(_batched_probs(q8.graph, x), y, 5)
    f32.close()
    q8.close()
    gap = abs(top5_f32 - top5_q8)
    elapsed = time.perf_counter() - started
    criterion(
        2,
        "quantization accuracy parity",
        gap <= 0.02,
        f"top5_f32={top5_f32:.4f} top5_q8={top5_q8:.4f} gap={gap:.4f} "
        f"eval_time={elapsed:.1f}s (training amortized in fixture)",
    )


# -- 3 ----------------------------------------------------------------------


def test_criterion_03_oracle_relative_accuracy(
    desk_world, desk_data, trained_desk_graph
):
    probs = _batched_probs(trained_desk_graph, desk_data["xte"])
    y = desk_data["yte"]
    top1 = ev.topk_accuracy(probs, y, 1)
    top5 = ev.topk_accuracy(probs, y, 5)
    post = md.bayes_posterior(desk_world, desk_data["xte"])
    oracle_top1 = ev.topk_accuracy(post, y, 1)
    oracle_top5 = ev.topk_accuracy(post, y, 5)
    criterion(
        3,
        "oracle-relative accuracy",
        top5 >= oracle_top5 - 0.05 and top1 >= oracle_top1 - 0.08,
        f"top1={top1:.4f} (oracle {oracle_top1:.4f}, gap {oracle_top1 - top1:.4f}) "
        f"top5={top5:.4f} (oracle {oracle_top5:.4f}, gap {oracle_top5 - top5:.4f})",
    )


# -- 4 ----------------------------------------------------------------------


def _loss_of(graph, x, labels, seed):
    probs, _ = nw.forward(graph, x, rng_seed=seed)
    p = probs if probs.ndim == 2 else probs[None]
    picked = np.maximum(p[np.arange(len(labels)), labels], 1e-300)
    return float(np.mean(-np.log(picked)))


def _fd_max_rel_err(graph, x, labels, seed, h=1e-4):
    _, trace = nw.forward(graph, x, rng_seed=seed)
    onehot = np.zeros((len(labels), graph.output_dim))
    onehot[np.arange(len(labels)), labels] = 1.0
    analytic = nw.backward(graph, trace, onehot)
    worst = 0.0
    for name, tensor in graph.params.items():
        if "running_" in name:
            continue
        flat = tensor.data.reshape(-1)
        g_an = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss_of(graph, x, labels, seed)
            flat[i] = orig - h
            down = _loss_of(graph, x, labels, seed)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(g_an[i]), 1e-6)
            worst = max(worst, abs(fd - g_an[i]) / denom)
    return worst


def _at_generic_point(graph, x, seed, margin):
    """True when no relu input sits within `margin` of its kink, where
    central differences legitimately disagree with backprop (the loss is
    not differentiable there)."""
    _, trace = nw.forward(graph, x, rng_seed=seed)
    for i, spec in enumerate(graph.layers):
        if spec.kind == "relu":
            pre = trace.outputs[i - 1] if i else trace.input
            if float(np.min(np.abs(pre))) < margin:
                return False
    return True


def test_criterion_04_gradient_correctness():
    started = time.perf_counter()
    rng = np.random.default_rng(42)
    h = 1e-4
    worst = 0.0
    for trial in range(100):
        for _ in range(20):  # resample nets that land on a relu kink
            if trial % 8 == 0:  # small residual CNNs among the MLPs
                g = nw.build_skin_cnn(
                    image_size=6,
                    in_channels=2,
                    n_classes=3,
                    width=2,
                    seed=int(rng.integers(1 << 30)),
                )
                x = rng.normal(0, 1, (1, 6, 6, 2))
            else:
                d_in = int(rng.integers(2, 7))
                width = int(rng.integers(2, 9))
                depth = int(rng.integers(0, 3))
                classes = int(rng.integers(2, 6))
                g = nw.build_mlp(d_in, width, depth, classes,
                                 seed=int(rng.integers(1 << 30)))
                x = rng.normal(0, 1, (1, d_in))
            g64 = nw.cast_params_f64(g)
            labels = rng.integers(0, g.output_dim, 1)
            seed = int(rng.integers(1 << 30))
            if _at_generic_point(g64, x, seed, margin=50 * h):
                break
        assert nw.count_parameters(g) <= 10_000
        worst = max(worst, _fd_max_rel_err(g64, x, labels, seed, h=h))
    elapsed = time.perf_counter() - started
    criterion(
        4,
        "gradient correctness",
        worst < 1e-3 and elapsed < 60,
        f"max_rel_err={worst:.2e} over 100 nets in {elapsed:.1f}s",
    )


# -- 5 ----------------------------------------------------------------------


def test_criterion_05_bundle_integrity_fuzz(desk_bundles, tmp_path):
    started = time.perf_counter()
    src = desk_bundles["q8"].read_bytes()
    layout, _ = mp.parse_layout(src, len(src))
    target_path = tmp_path / "fuzz.emed"

    target_path.write_bytes(src)
    assert mp.verify_bundle(target_path) == [], "false alarm on intact file"

    rng = np.random.default_rng(42)
    detected = 0
    for _ in range(1000):
        e = layout.tensors[int(rng.integers(len(layout.tensors)))]
        pos = layout.blob_start + e.offset + int(rng.integers(e.byte_len))
        bit = 1 << int(rng.integers(8))
        raw = bytearray(src)
        raw[pos] ^= bit
        target_path.write_bytes(bytes(raw))
        violations = mp.verify_bundle(target_path)
        if violations and any(v.tensor == e.name for v in violations):
            detected += 1
    target_path.write_bytes(src)
    clean = mp.verify_bundle(target_path) == []
    elapsed = time.perf_counter() - started
    criterion(
        5,
        "bundle integrity fuzz",
        detected == 1000 and clean and elapsed < 60,
        f"detected {detected}/1000 flips, intact re-verify clean={clean}, "
        f"{elapsed:.1f}s",
    )


# -- 6 ----------------------------------------------------------------------


def test_criterion_06_memory_mapping_contract(big_bundles):
    blob_size = big_bundles["f32_layout"].blob_size
    assert big_bundles["f32"].stat().st_size >= 20 * 1024 * 1024

    gc.collect()
    inf.private_memory_bytes()  # warm the probe itself
    before = inf.private_memory_bytes()
    handle = inf.load_bundle(big_bundles["f32"], cache_policy="none")
    delta = inf.private_memory_bytes() - before  # before any inference
    x = np.zeros(handle.graph.input_dim, np.float32)
    nw.forward(handle.graph, x)
    handle.close()

    mapped_times, eager_times = [], []
    for _ in range(3):
        t0 = time.perf_counter()
        h = inf.load_bundle(big_bundles["f32"], cache_policy="none")
        mapped_times.append(time.perf_counter() - t0)
        h.close()
        t0 = time.perf_counter()
        inf.load_bundle_eager(big_bundles["f32"])
        eager_times.append(time.perf_counter() - t0)
    mapped, eager = np.median(mapped_times), np.median(eager_times)

    criterion(
        6,
        "memory-mapping contract",
        delta < 0.10 * blob_size and mapped < eager,
        f"load_private_delta={delta / 1e6:.2f}MB (blob {blob_size / 1e6:.1f}MB, "
        f"limit {0.1 * blob_size / 1e6:.1f}MB); cold-start mapped "
        f"{mapped * 1e3:.0f}ms vs eager {eager * 1e3:.0f}ms",
    )


# -- 7 ----------------------------------------------------------------------


def test_criterion_07_schedule_exactness():
    cfg = tr.CNN_PRESET
    values = (tr.lr_at_epoch(cfg, 0), tr.lr_at_epoch(cfg, 2), tr.lr_at_epoch(cfg, 5))
    ok = values == (0.0007, 0.00049, 0.000343)
    criterion(
        7,
        "schedule exactness",
        ok,
        f"epochs 0/2/5 -> {values[0]!r}, {values[1]!r}, {values[2]!r} (f64 bit-exact)",
    )


# -- 8 ----------------------------------------------------------------------


def test_criterion_08_tsne_properties():
    started = time.perf_counter()
    rng = np.random.default_rng(42)
    a = rng.normal(0, 1.0, (100, 10))
    b = rng.normal(0, 1.0, (100, 10))
    b[:, 0] += 100.0  # inter-cluster distance ~100x intra
    x = np.vstack([a, b])
    labels = np.array([0] * 100 + [1] * 100)

    res1 = ev.tsne_embed(x, perplexity=30, iterations=1000, seed=42)
    res2 = ev.tsne_embed(x, perplexity=30, iterations=1000, seed=42)
    ent_err = float(res1.entropy_errors.max())
    sil = float(silhouette_score(res1.coords, labels))
    deterministic = np.array_equal(res1.coords, res2.coords)
    elapsed = time.perf_counter() - started
    criterion(
        8,
        "t-SNE properties",
        ent_err <= 1e-5 and sil > 0.5 and deterministic and elapsed < 120,
        f"entropy_err={ent_err:.2e} silhouette={sil:.3f} "
        f"deterministic={deterministic} n=200 in {elapsed:.1f}s",
    )


# -- 9 ----------------------------------------------------------------------


def test_criterion_09_metrics_identities():
    ce_ok = True
    details = []
    for c in (2, 26, 1537):
        uniform = np.full((4, c), 1.0 / c)
        labels = np.arange(4) % c
        got = ev.mean_cross_entropy(uniform, labels)
        ce_ok &= abs(got - math.log(c)) <= 1e-9
        details.append(f"C={c}: |ce-lnC|={abs(got - math.log(c)):.1e}")
    rng = np.random.default_rng(42)
    preds = rng.random((200, 30))
    preds /= preds.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 30, 200)
    accs = [ev.topk_accuracy(preds, labels, k) for k in range(1, 31)]
    monotone = all(x <= y for x, y in zip(accs, accs[1:]))
    criterion(
        9,
        "metrics identities",
        ce_ok and monotone,
        "; ".join(details) + f"; topk monotone={monotone}",
    )


# -- 10 ---------------------------------------------------------------------


def test_criterion_10_end_to_end_smoke(tmp_path):
    t0 = time.perf_counter()
    report1 = pipeline_smoke(42, tmp_path / "run1")
    t1 = time.perf_counter() - t0
    report2 = pipeline_smoke(42, tmp_path / "run2")
    stable = report1 == report2
    criterion(
        10,
        "end-to-end smoke",
        stable and t1 < 600,
        f"run_time={t1:.0f}s stable={stable} "
        f"top5_f32={report1['eval']['top5_f32']:.4f} "
        f"top5_q8={report1['eval']['top5_q8']:.4f} "
        f"parity_gap={report1['eval']['top5_parity_gap']:.4f}",
    )
