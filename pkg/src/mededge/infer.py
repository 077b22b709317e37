"""Constrained-memory inference over memory-mapped bundles.

A ModelHandle keeps the bundle file mapped read-only and exposes its
tensors as zero-copy views; quantized tensors are dequantized on the
fly (cache policy "none") or memoized per layer (policy "per-layer").
The weight blob therefore never lands in private memory wholesale — the
OS pages it in as shared, evictable file cache.
"""

from __future__ import annotations

import mmap
import time
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

import numpy as np

from . import meddata as md
from . import modelpack as mp
from .errors import InputError, IntegrityError
from .network import INFERENCE, NetworkGraph, forward
from .tensor import F32, Q8, Tensor

CACHE_POLICIES = ("none", "per-layer")


def private_memory_bytes() -> int:
    """Anonymous resident memory of this process, in bytes.

    File-backed pages of a read-only mapping are discardable page cache,
    not private copies, so they are deliberately excluded: this is the
    number the memory-mapping contract constrains. Falls back to USS if
    /proc accounting is unavailable.
    """
    try:
        with open("/proc/self/status") as f:
            for line in f:
                if line.startswith("RssAnon:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    try:  # older kernels: sum per-mapping anonymous pages
        total = 0
        with open("/proc/self/smaps") as f:
            for line in f:
                if line.startswith("Anonymous:"):
                    total += int(line.split()[1])
        return total * 1024
    except OSError:
        pass
    import psutil

    return int(psutil.Process().memory_full_info().uss)


@dataclass
class ModelHandle:
    """Immutable view over a verified bundle, ready for inference."""

    path: Path
    layout: mp.BundleLayout
    graph: NetworkGraph
    cache_policy: str
    fingerprint: str
    _mm: mmap.mmap | None = field(default=None, repr=False)
    _file: object = field(default=None, repr=False)

    @property
    def n_classes(self) -> int:
        return self.graph.output_dim

    def close(self) -> None:
        # drop the zero-copy views before closing the mapping; if a caller
        # still holds one, the mapping lives until those references die
        self.graph.params = {}
        if self._mm is not None:
            try:
                self._mm.close()
            except BufferError:
                pass
            self._mm = None
        if self._file is not None:
            self._file.close()
            self._file = None


def _fingerprint_of(buf, blob_start: int) -> str:
    return sha256(bytes(buf[:blob_start])).hexdigest()


def _tensor_view(mm, layout, entry, cache_policy) -> Tensor:
    start = layout.blob_start + entry.offset
    if entry.dtype == F32:
        arr = np.frombuffer(mm, dtype="<f4", count=entry.byte_len // 4, offset=start)
        return Tensor(arr.reshape(entry.shape), F32)
    arr = np.frombuffer(mm, dtype=np.uint8, count=entry.byte_len, offset=start)
    t = Tensor(arr.reshape(entry.shape), Q8, entry.scale, entry.zero_point)
    t.cache_dequant = cache_policy == "per-layer"
    return t


def load_bundle(path, cache_policy: str = "none") -> ModelHandle:
    """Verify, then map the bundle; refuses to load on any violation."""
    if cache_policy not in CACHE_POLICIES:
        raise InputError(f"cache_policy must be one of {CACHE_POLICIES}")
    path = Path(path)
    violations = mp.verify_bundle(path)
    if violations:
        raise IntegrityError(
            f"refusing to load {path}: " + "; ".join(str(v) for v in violations),
            violations,
        )
    f = open(path, "rb")
    mm = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
    layout, _ = mp.parse_layout(memoryview(mm), path.stat().st_size)
    if layout.training:
        mm.close()
        f.close()
        raise InputError(f"{path} is a training checkpoint; freeze it first")
    params = {
        e.name: _tensor_view(mm, layout, e, cache_policy) for e in layout.tensors
    }
    graph = mp.graph_from_manifest(layout.manifest, params, mode=INFERENCE)
    graph.validate()
    return ModelHandle(
        path=path,
        layout=layout,
        graph=graph,
        cache_policy=cache_policy,
        fingerprint=_fingerprint_of(mm, layout.blob_start),
        _mm=mm,
        _file=f,
    )


def load_bundle_eager(path) -> ModelHandle:
    """Comparison baseline: read the whole file, copy every tensor into
    private memory and dequantize everything up front."""
    path = Path(path)
    layout, tensors = mp.read_container(path)  # verifies + copies
    if layout.training:
        raise InputError(f"{path} is a training checkpoint; freeze it first")
    params = {
        name: (mp.dequantize_tensor(t) if t.dtype == Q8 else t)
        for name, t in tensors.items()
    }
    graph = mp.graph_from_manifest(layout.manifest, params, mode=INFERENCE)
    graph.validate()
    raw = path.read_bytes()
    return ModelHandle(
        path=path,
        layout=layout,
        graph=graph,
        cache_policy="eager",
        fingerprint=_fingerprint_of(raw, layout.blob_start),
    )


# ---------------------------------------------------------------------------
# diagnosis
# ---------------------------------------------------------------------------


@dataclass
class DiagnosisEntry:
    disease_id: int
    name: str
    probability: float
    treatment: str


@dataclass
class DiagnosisReport:
    entries: list[DiagnosisEntry]
    symptoms: list[str]
    model_fingerprint: str

    def to_dict(self) -> dict:
        return {
            "symptoms": self.symptoms,
            "model_fingerprint": self.model_fingerprint,
            "entries": [
                {
                    "disease_id": e.disease_id,
                    "name": e.name,
                    "probability": e.probability,
                    "treatment": e.treatment,
                }
                for e in self.entries
            ],
        }


def rank_probabilities(probs: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k (class_id, probability), ties broken by ascending id."""
    order = np.argsort(-probs, kind="stable")
    k = min(k, len(probs))
    return [(int(i), float(probs[i])) for i in order[:k]]


def diagnose(
    handle: ModelHandle,
    symptoms,
    vocab: md.SymptomVocabulary,
    catalog: md.DiseaseCatalog,
    k: int = 5,
    allow_empty: bool = False,
) -> DiagnosisReport:
    """Encode symptoms, run the mapped model, report ranked top-k.

    Probabilities are the raw softmax outputs of the truncated top-k,
    deliberately not renormalized.
    """
    names = sorted({str(s).strip().lower() for s in symptoms})
    if not names and not allow_empty:
        raise InputError(
            "no symptoms given; select at least one symptom "
            "(or pass allow_empty to get prior-like output)"
        )
    if k < 1:
        raise InputError("k must be >= 1")
    vec = md.encode_symptoms(names, vocab)
    if len(vec) != handle.graph.input_dim:
        raise InputError(
            f"vocabulary size {len(vec)} != model input {handle.graph.input_dim}"
        )
    probs, _ = forward(handle.graph, vec)
    ranked = rank_probabilities(probs, k)
    entries = [
        DiagnosisEntry(
            disease_id=i,
            name=catalog.names[i] if i < len(catalog) else f"class_{i}",
            probability=p,
            treatment=catalog.treatment(i),
        )
        for i, p in ranked
    ]
    return DiagnosisReport(entries, names, handle.fingerprint)


def classify_image(handle: ModelHandle, image) -> list[tuple[int, float]]:
    """Ranked class probabilities for an 8-bit RGB image."""
    image = np.asarray(image)
    want = tuple(handle.graph.input_shape)
    if image.shape != want:
        raise InputError(
            f"image shape {image.shape} does not match model input "
            f"{want[0]}x{want[1]}x{want[2]}"
        )
    if image.dtype != np.uint8:
        if np.issubdtype(image.dtype, np.integer) and 0 <= image.min() and image.max() <= 255:
            image = image.astype(np.uint8)
        else:
            raise InputError("image must be 8-bit (values 0-255)")
    x = image.astype(np.float32) / 255.0
    probs, _ = forward(handle.graph, x)
    return rank_probabilities(probs, len(probs))


# ---------------------------------------------------------------------------
# benchmarking
# ---------------------------------------------------------------------------


@dataclass
class LatencyStats:
    n_runs: int
    mean_s: float
    p50_s: float
    p95_s: float
    load_resident_delta_bytes: int
    cold_start_s: float


def bench(handle: ModelHandle, input_source, n_runs: int) -> LatencyStats:
    """Warm-run latency stats plus a separately measured cold start."""
    if n_runs < 10:
        raise InputError("n_runs must be >= 10")
    if callable(input_source):
        make_input = input_source
    else:
        batch = np.asarray(input_source)
        make_input = lambda i=iter(range(10**9)): batch[next(i) % len(batch)]

    for _ in range(3):
        forward(handle.graph, make_input())
    times = []
    for _ in range(n_runs):
        x = make_input()
        t0 = time.perf_counter()
        forward(handle.graph, x)
        times.append(time.perf_counter() - t0)
    times = np.array(times)

    before = private_memory_bytes()
    t0 = time.perf_counter()
    fresh = load_bundle(handle.path, handle.cache_policy)
    cold = time.perf_counter() - t0
    delta = private_memory_bytes() - before
    fresh.close()

    return LatencyStats(
        n_runs=n_runs,
        mean_s=float(times.mean()),
        p50_s=float(np.percentile(times, 50)),
        p95_s=float(np.percentile(times, 95)),
        load_resident_delta_bytes=int(delta),
        cold_start_s=cold,
    )
