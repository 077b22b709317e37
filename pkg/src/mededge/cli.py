"""Single executable for the full pipeline: data generation, training,
freeze/prune/quantize/pack, verification, evaluation, embedding, t-SNE,
benchmarking, diagnosis and serving.

Exit codes: 0 success, 1 usage error, 2 data/input error, 3 integrity
error. `--format json` switches machine-readable output on.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import evalviz as ev
from . import infer as inf
from . import meddata as md
from . import modelpack as mp
from . import network as nw
from . import service as sv
from . import train as tr
from .errors import IntegrityError, MedEdgeError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTEGRITY = 3


def _emit(ctx, payload: dict, text_lines=None) -> None:
    if ctx.obj["format"] == "json":
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        for line in text_lines if text_lines is not None else [str(payload)]:
            click.echo(line)


@click.group()
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["text", "json"]),
    default="text",
    help="output format for results",
)
@click.pass_context
def cli(ctx, fmt):
    """mededge: offline diagnosis pipeline tools."""
    ctx.obj = {"format": fmt}


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------


@cli.command("gen-world")
@click.option("--symptoms", default=md.DESK_N_SYMPTOMS, show_default=True)
@click.option("--diseases", default=md.DESK_N_DISEASES, show_default=True)
@click.option("--train", "n_train", default=20_000, show_default=True)
@click.option("--test", "n_test", default=2_000, show_default=True)
@click.option("--noise", default=md.DEFAULT_NOISE_RATE, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def gen_world(ctx, symptoms, diseases, n_train, n_test, noise, seed, out):
    """Generate a synthetic world plus train/test record files."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    world = md.generate_world(symptoms, diseases, seed=seed, noise_rate=noise)
    world.to_file(out / "world.json")
    md.SymptomVocabulary.generate(symptoms).to_file(out / "vocab.txt")
    catalog = md.DiseaseCatalog.generate(diseases, seed=seed)
    catalog.to_files(out / "diseases.txt", out / "treatments.tsv")
    md.write_records(md.sample_dataset(world, n_train, seed=seed), out / "train.rec")
    md.write_records(
        md.sample_dataset(world, n_test, seed=seed + 1), out / "test.rec"
    )
    payload = {
        "out": str(out),
        "symptoms": symptoms,
        "diseases": diseases,
        "train_samples": n_train,
        "test_samples": n_test,
        "seed": seed,
    }
    _emit(ctx, payload, [f"world written to {out} ({symptoms} symptoms, "
                         f"{diseases} diseases, {n_train}/{n_test} samples)"])


@cli.command("gen-skin")
@click.option("--per-class", default=30, show_default=True)
@click.option("--test-per-class", default=6, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def gen_skin(ctx, per_class, test_per_class, seed, out):
    """Generate synthetic skin-texture record files (26 classes)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    md.write_records(md.gen_skin_dataset(per_class, seed=seed), out / "skin_train.rec")
    md.write_records(
        md.gen_skin_dataset(test_per_class, seed=seed + 7919), out / "skin_test.rec"
    )
    payload = {
        "out": str(out),
        "classes": md.SKIN_CLASSES,
        "train_samples": per_class * md.SKIN_CLASSES,
        "test_samples": test_per_class * md.SKIN_CLASSES,
        "seed": seed,
    }
    _emit(ctx, payload, [f"skin records written to {out}"])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _load_xy(path):
    samples = md.read_records(path)
    return md.samples_to_arrays(samples)


@cli.command("train-dnn")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--epochs", default=tr.DESK_DNN_PRESET.epochs, show_default=True)
@click.option("--batch-size", default=tr.DESK_DNN_PRESET.batch_size, show_default=True)
@click.option("--lr", default=tr.DESK_DNN_PRESET.lr0, show_default=True)
@click.option("--hidden-width", default=64, show_default=True)
@click.option("--hidden-layers", default=4, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.pass_context
def train_dnn(ctx, data, out, epochs, batch_size, lr, hidden_width, hidden_layers, seed):
    """Train the symptom classifier on a gen-world directory."""
    data = Path(data)
    x, y = _load_xy(data / "train.rec")
    vocab = md.SymptomVocabulary.from_file(data / "vocab.txt")
    catalog = md.DiseaseCatalog.from_files(data / "diseases.txt")
    graph = nw.build_mlp(len(vocab), hidden_width, hidden_layers, len(catalog), seed=seed)
    cfg = tr.TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        lr0=lr,
        lr_decay=tr.DESK_DNN_PRESET.lr_decay,
        epochs_per_decay=tr.DESK_DNN_PRESET.epochs_per_decay,
        seed=seed,
    )
    started = time.perf_counter()
    ckpt = tr.train_classifier(graph, (x, y), cfg)
    tr.save_checkpoint(ckpt, out)
    payload = {
        "checkpoint": str(out),
        "epochs": epochs,
        "final_loss": ckpt.history[-1]["loss"],
        "parameters": nw.count_parameters(graph),
        "seed": seed,
    }
    _emit(ctx, payload, [
        f"trained {payload['parameters']} parameters in "
        f"{time.perf_counter() - started:.1f}s, final loss "
        f"{payload['final_loss']:.4f} -> {out}"
    ])


@cli.command("train-cnn")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--epochs", default=tr.DESK_CNN_PRESET.epochs, show_default=True)
@click.option("--batch-size", default=tr.DESK_CNN_PRESET.batch_size, show_default=True)
@click.option("--lr", default=tr.DESK_CNN_PRESET.lr0, show_default=True)
@click.option("--width", default=8, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.pass_context
def train_cnn(ctx, data, out, epochs, batch_size, lr, width, seed):
    """Train the residual skin classifier on a gen-skin directory."""
    x, y = _load_xy(Path(data) / "skin_train.rec")
    graph = nw.build_skin_cnn(width=width, bn_decay=tr.DESK_CNN_BN_DECAY, seed=seed)
    cfg = tr.TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        lr0=lr,
        lr_decay=tr.DESK_CNN_PRESET.lr_decay,
        epochs_per_decay=tr.DESK_CNN_PRESET.epochs_per_decay,
        weight_decay=tr.DESK_CNN_PRESET.weight_decay,
        seed=seed,
    )
    started = time.perf_counter()
    ckpt = tr.train_classifier(graph, (x, y), cfg)
    tr.save_checkpoint(ckpt, out)
    payload = {
        "checkpoint": str(out),
        "epochs": epochs,
        "final_loss": ckpt.history[-1]["loss"],
        "parameters": nw.count_parameters(graph),
        "seed": seed,
    }
    _emit(ctx, payload, [
        f"trained CNN in {time.perf_counter() - started:.1f}s, final loss "
        f"{payload['final_loss']:.4f} -> {out}"
    ])


# ---------------------------------------------------------------------------
# packaging
# ---------------------------------------------------------------------------


@cli.command("freeze")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.pass_context
def freeze_cmd(ctx, checkpoint, out):
    """Freeze a checkpoint into an f32 inference bundle."""
    frozen = mp.freeze(checkpoint)
    layout = mp.pack_bundle(frozen, quantize=False, out_path=out)
    payload = {"out": str(out), "tensors": len(layout.tensors),
               "bytes": layout.file_size, "provenance": frozen.provenance[:16]}
    _emit(ctx, payload, [f"frozen -> {out} ({layout.file_size} bytes)"])


def _load_frozen(path) -> mp.FrozenGraph:
    layout, tensors = mp.read_container(path)
    if layout.training:
        raise IntegrityError(f"{path} is a checkpoint; run freeze first")
    graph = mp.graph_from_manifest(layout.manifest, tensors, mode=nw.INFERENCE)
    return mp.FrozenGraph(graph, provenance=mp.graph_digest(graph))


@cli.command("prune")
@click.argument("bundle", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.pass_context
def prune_cmd(ctx, bundle, out):
    """Drop dropout layers and fold batch norm (f32 bundles only)."""
    frozen = _load_frozen(bundle)
    if any(t.dtype == "q8" for t in frozen.graph.params.values()):
        raise IntegrityError("prune needs an f32 bundle; run it before quantize")
    before = len(frozen.graph.layers)
    pruned = mp.prune_for_inference(frozen)
    layout = mp.pack_bundle(pruned, quantize=False, out_path=out)
    payload = {"out": str(out), "layers_before": before,
               "layers_after": len(pruned.graph.layers), "bytes": layout.file_size}
    _emit(ctx, payload, [
        f"pruned {before} -> {payload['layers_after']} layers -> {out}"
    ])


@cli.command("quantize")
@click.argument("bundle", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.pass_context
def quantize_cmd(ctx, bundle, out):
    """Quantize an f32 bundle to 8-bit."""
    frozen = _load_frozen(bundle)
    if any(t.dtype == "q8" for t in frozen.graph.params.values()):
        raise IntegrityError(f"{bundle} is already quantized")
    f32_size = Path(bundle).stat().st_size
    layout = mp.pack_bundle(frozen, quantize=True, out_path=out)
    payload = {
        "out": str(out),
        "f32_bytes": f32_size,
        "q8_bytes": layout.file_size,
        "file_ratio": round(layout.file_size / f32_size, 4),
    }
    _emit(ctx, payload, [
        f"quantized {bundle} ({f32_size} B) -> {out} ({layout.file_size} B), "
        f"ratio {payload['file_ratio']:.3f}"
    ])


@cli.command("pack")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--quantize/--no-quantize", default=True, show_default=True)
@click.option("--prune/--no-prune", default=True, show_default=True)
@click.pass_context
def pack_cmd(ctx, checkpoint, out, quantize, prune):
    """Freeze, optionally prune, optionally quantize, in one step."""
    frozen = mp.freeze(checkpoint)
    if prune:
        frozen = mp.prune_for_inference(frozen)
    layout = mp.pack_bundle(frozen, quantize=quantize, out_path=out)
    payload = {"out": str(out), "bytes": layout.file_size,
               "quantized": quantize, "pruned": prune}
    _emit(ctx, payload, [f"packed -> {out} ({layout.file_size} bytes)"])


@cli.command("verify")
@click.argument("bundle", type=click.Path(dir_okay=False))
@click.pass_context
def verify_cmd(ctx, bundle):
    """Check bundle structure and per-tensor checksums."""
    violations = mp.verify_bundle(bundle)
    if violations:
        raise IntegrityError(
            f"{bundle}: {len(violations)} violation(s): "
            + "; ".join(str(v) for v in violations),
            violations,
        )
    _emit(ctx, {"bundle": str(bundle), "ok": True}, ["ok"])


# ---------------------------------------------------------------------------
# evaluation / embedding / bench
# ---------------------------------------------------------------------------


def _forward_in_batches(graph, x, batch=512):
    outs = []
    for start in range(0, len(x), batch):
        probs, _ = nw.forward(graph, x[start : start + batch])
        outs.append(probs)
    return np.vstack(outs)


@cli.command("eval")
@click.option("--bundle", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="record file with test samples")
@click.option("--world", "world_path", type=click.Path(exists=True, dir_okay=False),
              help="world.json for Bayes-oracle comparison")
@click.pass_context
def eval_cmd(ctx, bundle, data_path, world_path):
    """Top-1/top-5 accuracy and cross entropy on a record file."""
    handle = inf.load_bundle(bundle, cache_policy="per-layer")
    x, y = _load_xy(data_path)
    probs = _forward_in_batches(handle.graph, x.astype(np.float32))
    report = ev.evaluate(probs, y)
    payload = {"bundle": str(bundle), "n": report.n, **report.to_dict()}
    if world_path:
        world = md.SyntheticWorld.from_file(world_path)
        post = md.bayes_posterior(world, x)
        payload["oracle_top1"] = ev.topk_accuracy(post, y, 1)
        payload["oracle_top5"] = ev.topk_accuracy(post, y, min(5, post.shape[1]))
    handle.close()
    lines = [
        f"n={report.n} top1={report.top1:.4f} top5={report.top5:.4f} "
        f"xent={report.mean_xent:.4f}"
    ]
    if world_path:
        lines.append(
            f"oracle top1={payload['oracle_top1']:.4f} "
            f"top5={payload['oracle_top5']:.4f}"
        )
    _emit(ctx, payload, lines)


@cli.command("embed")
@click.option("--bundle", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--limit", default=1000, show_default=True)
@click.pass_context
def embed_cmd(ctx, bundle, data_path, out, limit):
    """Write last-hidden-layer embeddings to CSV (label last column)."""
    handle = inf.load_bundle(bundle, cache_policy="per-layer")
    x, y = _load_xy(data_path)
    x, y = x[:limit], y[:limit]
    emb = ev.extract_embeddings(handle, x.astype(np.float32), labels=y)
    ev.export_points_csv(emb.matrix, y, out)
    handle.close()
    payload = {"out": str(out), "points": len(y), "dims": emb.matrix.shape[1]}
    _emit(ctx, payload, [f"{len(y)} embeddings ({emb.matrix.shape[1]}-d) -> {out}"])


@cli.command("tsne")
@click.option("--in", "in_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="embedding CSV from `embed`")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--dims", default=2, type=click.IntRange(2, 3), show_default=True)
@click.option("--perplexity", default=30.0, show_default=True)
@click.option("--iterations", default=1000, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.pass_context
def tsne_cmd(ctx, in_path, out, dims, perplexity, iterations, seed):
    """Project an embedding CSV with exact t-SNE."""
    matrix, labels = ev.import_points_csv(in_path)
    result = ev.tsne_embed(
        matrix, out_dims=dims, perplexity=perplexity,
        iterations=iterations, seed=seed,
    )
    ev.export_points_csv(result.coords, labels, out)
    payload = {
        "out": str(out),
        "points": len(labels),
        "dims": dims,
        "final_kl": result.kl_trace[-1],
        "max_entropy_error": float(result.entropy_errors.max()),
        "flagged_points": result.flagged_points,
        "seed": seed,
    }
    _emit(ctx, payload, [
        f"{len(labels)} points -> {out}; final KL {result.kl_trace[-1]:.4f}, "
        f"entropy calibrated to {payload['max_entropy_error']:.2e}"
    ])


@cli.command("bench")
@click.option("--bundle", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--runs", default=20, show_default=True)
@click.option("--cache-policy", type=click.Choice(inf.CACHE_POLICIES),
              default="none", show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.pass_context
def bench_cmd(ctx, bundle, runs, cache_policy, seed):
    """Latency and load-residency statistics; compares mapped vs eager
    cold starts (the memory-mapping speedup is measured and reported,
    never asserted)."""
    handle = inf.load_bundle(bundle, cache_policy=cache_policy)
    rng = np.random.default_rng(seed)
    shape = tuple(handle.graph.input_shape)
    inputs = rng.random((8, *shape), dtype=np.float32)
    stats = inf.bench(handle, inputs, n_runs=runs)

    t0 = time.perf_counter()
    eager = inf.load_bundle_eager(bundle)
    eager_cold = time.perf_counter() - t0

    payload = {
        "bundle": str(bundle),
        "runs": stats.n_runs,
        "mean_ms": stats.mean_s * 1e3,
        "p50_ms": stats.p50_s * 1e3,
        "p95_ms": stats.p95_s * 1e3,
        "mapped_cold_start_ms": stats.cold_start_s * 1e3,
        "eager_cold_start_ms": eager_cold * 1e3,
        "load_resident_delta_bytes": stats.load_resident_delta_bytes,
        "cache_policy": cache_policy,
    }
    handle.close()
    _emit(ctx, payload, [
        f"warm: mean {payload['mean_ms']:.2f} ms, p50 {payload['p50_ms']:.2f} ms, "
        f"p95 {payload['p95_ms']:.2f} ms over {runs} runs",
        f"cold start: mapped {payload['mapped_cold_start_ms']:.1f} ms vs eager "
        f"{payload['eager_cold_start_ms']:.1f} ms",
        f"private memory delta during load: {stats.load_resident_delta_bytes} bytes",
    ])


# ---------------------------------------------------------------------------
# diagnose / serve
# ---------------------------------------------------------------------------


@cli.command("diagnose")
@click.option("--bundle", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--diseases", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--treatments", type=click.Path(exists=True, dir_okay=False))
@click.option("--symptoms", required=True, help="comma-separated symptom names")
@click.option("-k", default=5, show_default=True)
@click.pass_context
def diagnose_cmd(ctx, bundle, vocab, diseases, treatments, symptoms, k):
    """Top-k diagnoses with treatments for a symptom set."""
    handle = inf.load_bundle(bundle, cache_policy="per-layer")
    vocabulary = md.SymptomVocabulary.from_file(vocab)
    catalog = md.DiseaseCatalog.from_files(diseases, treatments)
    names = [s for s in (part.strip() for part in symptoms.split(",")) if s]
    report = inf.diagnose(handle, names, vocabulary, catalog, k=k)
    handle.close()
    payload = {
        "symptoms": report.symptoms,
        "model_fingerprint": report.model_fingerprint,
        "entries": [
            {
                "disease_id": e.disease_id,
                "name": e.name,
                "probability": f"{e.probability:.6f}",
                "treatment": e.treatment,
            }
            for e in report.entries
        ],
    }
    lines = [
        f"{i + 1}. {e.name} p={e.probability:.6f}"
        + (f" — {e.treatment}" if e.treatment else "")
        for i, e in enumerate(report.entries)
    ]
    _emit(ctx, payload, lines)


@cli.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help=f"service config JSON (or set {sv.CONFIG_ENV_VAR})")
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
def serve_cmd(config_path, host, port):
    """Run the HTTP service (symptom + skin endpoints, static UI)."""
    config = sv.ServiceConfig.from_file(sv.resolve_config_path(config_path))
    if host:
        config.host = host
    if port:
        config.port = port
    sv.run_service(config)


# ---------------------------------------------------------------------------
# smoke pipeline
# ---------------------------------------------------------------------------


def pipeline_smoke(seed: int, workdir, fast: bool = False) -> dict:
    """gen-world -> train -> freeze -> prune -> quantize -> pack -> eval
    -> diagnose, returning one metrics report (no wall-clock fields, so
    reports are identical across runs with the same seed)."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if fast:
        n_sym, n_dis, n_train, n_test = 20, 10, 2000, 400
        cfg = tr.TrainConfig(epochs=20, batch_size=128, lr0=0.002, seed=seed)
        hidden_width, hidden_layers = 32, 2
    else:
        n_sym, n_dis = md.DESK_N_SYMPTOMS, md.DESK_N_DISEASES
        n_train, n_test = 20_000, 2_000
        cfg = tr.TrainConfig(
            epochs=tr.DESK_DNN_PRESET.epochs,
            batch_size=tr.DESK_DNN_PRESET.batch_size,
            lr0=tr.DESK_DNN_PRESET.lr0,
            lr_decay=tr.DESK_DNN_PRESET.lr_decay,
            epochs_per_decay=tr.DESK_DNN_PRESET.epochs_per_decay,
            seed=seed,
        )
        hidden_width, hidden_layers = 64, 4

    world = md.generate_world(n_sym, n_dis, seed=seed)
    world.to_file(workdir / "world.json")
    vocab = md.SymptomVocabulary.generate(n_sym)
    vocab.to_file(workdir / "vocab.txt")
    catalog = md.DiseaseCatalog.generate(n_dis, seed=seed)
    catalog.to_files(workdir / "diseases.txt", workdir / "treatments.tsv")
    train_samples = md.sample_dataset(world, n_train, seed=seed)
    test_samples = md.sample_dataset(world, n_test, seed=seed + 1)
    md.write_records(train_samples, workdir / "train.rec")
    md.write_records(test_samples, workdir / "test.rec")

    graph = nw.build_mlp(n_sym, hidden_width, hidden_layers, n_dis, seed=seed)
    ckpt = tr.train_classifier(graph, md.samples_to_arrays(train_samples), cfg)
    ckpt_path = workdir / "dnn.ckpt.emed"
    tr.save_checkpoint(ckpt, ckpt_path)

    frozen = mp.prune_for_inference(mp.freeze(ckpt_path))
    f32_path = workdir / "dnn_f32.emed"
    q8_path = workdir / "dnn_q8.emed"
    f32_layout = mp.pack_bundle(frozen, quantize=False, out_path=f32_path)
    q8_layout = mp.pack_bundle(frozen, quantize=True, out_path=q8_path)
    verify_f32 = mp.verify_bundle(f32_path)
    verify_q8 = mp.verify_bundle(q8_path)
    if verify_f32 or verify_q8:
        raise IntegrityError("smoke: packed bundles failed verification",
                             verify_f32 + verify_q8)

    x_test, y_test = md.samples_to_arrays(test_samples)
    f32_handle = inf.load_bundle(f32_path, cache_policy="none")
    q8_handle = inf.load_bundle(q8_path, cache_policy="per-layer")
    probs_f32 = _forward_in_batches(f32_handle.graph, x_test)
    probs_q8 = _forward_in_batches(q8_handle.graph, x_test)
    report_f32 = ev.evaluate(probs_f32, y_test)
    report_q8 = ev.evaluate(probs_q8, y_test)
    post = md.bayes_posterior(world, x_test)
    oracle_top1 = ev.topk_accuracy(post, y_test, 1)
    oracle_top5 = ev.topk_accuracy(post, y_test, min(5, n_dis))

    strongest = np.argsort(-world.symptom_probs[0])[:2]
    sample_names = [vocab.names[s] for s in strongest]
    diag = inf.diagnose(q8_handle, sample_names, vocab, catalog, k=5)
    f32_handle.close()
    q8_handle.close()

    flops = mp.estimate_flops(frozen.graph)
    return {
        "seed": seed,
        "world": {
            "symptoms": n_sym,
            "diseases": n_dis,
            "train": n_train,
            "test": n_test,
        },
        "train": {
            "epochs": cfg.epochs,
            "final_loss": ckpt.history[-1]["loss"],
            "parameters": nw.count_parameters(graph),
        },
        "bundle": {
            "f32_bytes": f32_layout.file_size,
            "q8_bytes": q8_layout.file_size,
            "blob_ratio": q8_layout.blob_size / f32_layout.blob_size,
            "file_ratio": q8_layout.file_size / f32_layout.file_size,
            "verify": "ok",
        },
        "flops": {"total": flops.total},
        "eval": {
            "top1_f32": report_f32.top1,
            "top5_f32": report_f32.top5,
            "xent_f32": report_f32.mean_xent,
            "top1_q8": report_q8.top1,
            "top5_q8": report_q8.top5,
            "xent_q8": report_q8.mean_xent,
            "top5_parity_gap": abs(report_f32.top5 - report_q8.top5),
            "oracle_top1": oracle_top1,
            "oracle_top5": oracle_top5,
        },
        "diagnose_sample": {
            "symptoms": diag.symptoms,
            "top_disease_id": diag.entries[0].disease_id,
            "top_probability": f"{diag.entries[0].probability:.6f}",
        },
    }


@cli.command("pipeline-smoke")
@click.option("--seed", default=42, show_default=True)
@click.option("--out", default=None, type=click.Path(file_okay=False),
              help="working directory (default: temp)")
@click.option("--fast", is_flag=True, help="small sizes for quick checks")
def pipeline_smoke_cmd(seed, out, fast):
    """Run the whole pipeline end to end; emits one JSON report."""
    import tempfile

    workdir = out or tempfile.mkdtemp(prefix="mededge-smoke-")
    report = pipeline_smoke(seed, workdir, fast=fast)
    click.echo(json.dumps(report, sort_keys=True))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as err:
        return int(err.exit_code)
    except click.UsageError as err:
        click.echo(f"usage error: {err.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as err:
        err.show()
        return EXIT_USAGE
    except IntegrityError as err:
        click.echo(f"integrity error: {err}", err=True)
        return EXIT_INTEGRITY
    except MedEdgeError as err:
        click.echo(f"error: {err}", err=True)
        return EXIT_DATA
    except (FileNotFoundError, PermissionError) as err:
        click.echo(f"error: {err}", err=True)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
