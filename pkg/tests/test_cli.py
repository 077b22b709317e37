"""CLI tests: subcommand behavior, exit-code contract, JSON schema
stability, end-to-end smoke pipeline."""

import json
from pathlib import Path

import numpy as np
import pytest

from mededge import meddata as md
from mededge.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def small_pipeline(tmp_path_factory):
    """gen-world + train + freeze/prune/quantize artifacts, small sizes."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    code = main(
        [
            "gen-world", "--symptoms", "12", "--diseases", "6",
            "--train", "600", "--test", "200", "--seed", "5",
            "--out", str(data),
        ]
    )
    assert code == 0
    ckpt = root / "dnn.ckpt.emed"
    code = main(
        [
            "train-dnn", "--data", str(data), "--out", str(ckpt),
            "--epochs", "8", "--batch-size", "64", "--hidden-width", "16",
            "--hidden-layers", "2", "--seed", "5",
        ]
    )
    assert code == 0
    f32 = root / "dnn_f32.emed"
    pruned = root / "dnn_pruned.emed"
    q8 = root / "dnn_q8.emed"
    assert main(["freeze", str(ckpt), str(f32)]) == 0
    assert main(["prune", str(f32), str(pruned)]) == 0
    assert main(["quantize", str(pruned), str(q8)]) == 0
    return {"root": root, "data": data, "ckpt": ckpt, "f32": f32,
            "pruned": pruned, "q8": q8}


def test_verify_intact_bundle_ok(capsys, small_pipeline):
    code, out, _ = run(capsys, "verify", str(small_pipeline["q8"]))
    assert code == 0
    assert out.strip() == "ok"


def test_verify_corrupt_bundle_exit_3(capsys, small_pipeline, tmp_path):
    raw = bytearray(small_pipeline["q8"].read_bytes())
    raw[-10] ^= 0x08  # may land in a tensor payload or an alignment gap
    bad = tmp_path / "bad.emed"
    bad.write_bytes(bytes(raw))
    code, _, err = run(capsys, "verify", str(bad))
    assert code == 3
    assert "crc32" in err or "padding" in err


def test_unknown_flag_exit_1(capsys):
    code, _, err = run(capsys, "verify", "--frobnicate", "x.emed")
    assert code == 1


def test_unknown_subcommand_exit_1(capsys):
    code, _, _ = run(capsys, "transmogrify")
    assert code == 1


def test_prune_quantized_bundle_exit_3(capsys, small_pipeline, tmp_path):
    code, _, err = run(
        capsys, "prune", str(small_pipeline["q8"]), str(tmp_path / "x.emed")
    )
    assert code == 3
    assert "before quantize" in err


def test_quantize_reports_file_ratio(capsys, small_pipeline, tmp_path):
    code, out, _ = run(
        capsys, "--format", "json", "quantize",
        str(small_pipeline["pruned"]), str(tmp_path / "again_q8.emed"),
    )
    assert code == 0
    payload = json.loads(out)
    assert set(payload) == {"out", "f32_bytes", "q8_bytes", "file_ratio"}
    assert payload["file_ratio"] < 1.0


def test_diagnose_prints_topk_table(capsys, small_pipeline):
    data = small_pipeline["data"]
    vocab = md.SymptomVocabulary.from_file(data / "vocab.txt")
    code, out, _ = run(
        capsys, "diagnose",
        "--bundle", str(small_pipeline["q8"]),
        "--vocab", str(data / "vocab.txt"),
        "--diseases", str(data / "diseases.txt"),
        "--treatments", str(data / "treatments.tsv"),
        "--symptoms", f"{vocab.names[0]},{vocab.names[3]}",
    )
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith("1. ")
    probs = [float(ln.split("p=")[1].split()[0]) for ln in lines]
    assert all(a >= b for a, b in zip(probs, probs[1:]))


def test_diagnose_unknown_symptom_exit_2(capsys, small_pipeline):
    data = small_pipeline["data"]
    code, _, err = run(
        capsys, "diagnose",
        "--bundle", str(small_pipeline["q8"]),
        "--vocab", str(data / "vocab.txt"),
        "--diseases", str(data / "diseases.txt"),
        "--symptoms", "not_a_symptom",
    )
    assert code == 2
    assert "not_a_symptom" in err


def test_eval_json_schema_stable(capsys, small_pipeline):
    args = (
        "--format", "json", "eval",
        "--bundle", str(small_pipeline["q8"]),
        "--data", str(small_pipeline["data"] / "test.rec"),
        "--world", str(small_pipeline["data"] / "world.json"),
    )
    code1, out1, _ = run(capsys, *args)
    code2, out2, _ = run(capsys, *args)
    assert code1 == code2 == 0
    assert out1 == out2  # idempotent on read-only inputs
    payload = json.loads(out1)
    assert set(payload) == {
        "bundle", "n", "top1", "top5", "mean_cross_entropy",
        "oracle_top1", "oracle_top5",
    }
    assert payload["top1"] <= payload["top5"]


def test_embed_then_tsne(capsys, small_pipeline, tmp_path):
    emb_csv = tmp_path / "emb.csv"
    code, out, _ = run(
        capsys, "--format", "json", "embed",
        "--bundle", str(small_pipeline["f32"]),
        "--data", str(small_pipeline["data"] / "test.rec"),
        "--out", str(emb_csv), "--limit", "60",
    )
    assert code == 0
    assert json.loads(out)["dims"] == 16
    coords_csv = tmp_path / "coords.csv"
    code, out, _ = run(
        capsys, "--format", "json", "tsne",
        "--in", str(emb_csv), "--out", str(coords_csv),
        "--perplexity", "8", "--iterations", "300", "--seed", "1",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["max_entropy_error"] <= 1e-5
    rows = coords_csv.read_text().strip().splitlines()
    assert len(rows) == 60
    assert all(len(r.split(",")) == 3 for r in rows)  # x, y, label


def test_tsne_infeasible_perplexity_exit_2(capsys, small_pipeline, tmp_path):
    emb_csv = tmp_path / "emb.csv"
    run(
        capsys, "embed", "--bundle", str(small_pipeline["f32"]),
        "--data", str(small_pipeline["data"] / "test.rec"),
        "--out", str(emb_csv), "--limit", "30",
    )
    code, _, err = run(
        capsys, "tsne", "--in", str(emb_csv), "--out", str(tmp_path / "c.csv"),
        "--perplexity", "30",
    )
    assert code == 2
    assert "max" in err


def test_bench_reports_cold_start_comparison(capsys, small_pipeline):
    code, out, _ = run(
        capsys, "--format", "json", "bench",
        "--bundle", str(small_pipeline["q8"]), "--runs", "10",
    )
    assert code == 0
    payload = json.loads(out)
    for key in ("mean_ms", "p50_ms", "p95_ms", "mapped_cold_start_ms",
                "eager_cold_start_ms", "load_resident_delta_bytes"):
        assert key in payload
    assert payload["p50_ms"] <= payload["p95_ms"]


def test_gen_skin_writes_records(capsys, tmp_path):
    code, out, _ = run(
        capsys, "--format", "json", "gen-skin",
        "--per-class", "2", "--test-per-class", "1",
        "--seed", "3", "--out", str(tmp_path),
    )
    assert code == 0
    train = md.read_records(tmp_path / "skin_train.rec")
    assert len(train) == 2 * 26
    assert train[0].image.shape == (32, 32, 3)


def test_pipeline_smoke_fast_stable_across_runs(capsys, tmp_path):
    code1, out1, _ = run(
        capsys, "pipeline-smoke", "--fast", "--seed", "7",
        "--out", str(tmp_path / "run1"),
    )
    code2, out2, _ = run(
        capsys, "pipeline-smoke", "--fast", "--seed", "7",
        "--out", str(tmp_path / "run2"),
    )
    assert code1 == code2 == 0
    assert out1 == out2  # identical metrics, byte for byte
    report = json.loads(out1)
    assert report["bundle"]["verify"] == "ok"
    assert report["eval"]["top5_parity_gap"] <= 0.02
    assert 0.2 <= report["bundle"]["file_ratio"] <= 0.6  # tiny model: header overhead
    # partial artifacts are retained for inspection
    assert (tmp_path / "run1" / "dnn_q8.emed").exists()


def test_train_cnn_smoke(capsys, tmp_path):
    run(capsys, "gen-skin", "--per-class", "2", "--test-per-class", "1",
        "--seed", "1", "--out", str(tmp_path))
    code, out, _ = run(
        capsys, "--format", "json", "train-cnn",
        "--data", str(tmp_path), "--out", str(tmp_path / "cnn.ckpt.emed"),
        "--epochs", "1", "--batch-size", "32", "--width", "4", "--seed", "1",
    )
    assert code == 0
    assert json.loads(out)["epochs"] == 1
    assert (tmp_path / "cnn.ckpt.emed").exists()
