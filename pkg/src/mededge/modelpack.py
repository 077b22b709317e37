"""Freeze, prune, quantize and pack models into memory-mappable bundles.

Bundle format (all integers little-endian):

    bytes 0-3   magic "EMED"
    u16         version (1)
    u16         flags (bit0 = training artifacts, bit1 = quantized)
    u64         manifest length
    ...         manifest: UTF-8 text, one layer per line, comma-separated
    u32         tensor count
    per tensor  u16 name length, name UTF-8, u8 dtype (0=f32, 1=q8),
                u8 rank, rank*u32 dims, f32 scale, i32 zero_point,
                u64 offset (from blob start), u64 byte length, u32 crc32
    ...         zero padding to the next 4096 boundary
    ...         weight blob (every tensor offset 64-byte aligned)
"""

from __future__ import annotations

import mmap
import struct
import zlib
from dataclasses import dataclass, field, replace
from hashlib import sha256
from pathlib import Path

import numpy as np

from .errors import IntegrityError, InputError, QuantizationError
from .network import INFERENCE, LayerSpec, NetworkGraph
from .tensor import DTYPE_CODES, DTYPE_FROM_CODE, F32, Q8, Tensor, round_half_away

MAGIC = b"EMED"
VERSION = 1
FLAG_TRAINING = 1 << 0
FLAG_QUANTIZED = 1 << 1
PAGE_SIZE = 4096
TENSOR_ALIGN = 64

_HEADER = struct.Struct("<4sHHQ")


# ---------------------------------------------------------------------------
# manifest <-> graph
# ---------------------------------------------------------------------------

_LAYER_FIELDS = {
    "dense": ("fan_in", "fan_out"),
    "conv2d": ("kernel", "stride", "channels", "padding"),
    "maxpool": ("kernel", "stride"),
    "dropout": ("drop_prob",),
    "batch_norm": ("bn_decay", "bn_epsilon"),
    "residual_add": ("from_layer",),
    "concat": ("from_layer",),
    "relu": (),
    "softmax": (),
}

_FLOAT_FIELDS = {"drop_prob", "bn_decay", "bn_epsilon"}
_STR_FIELDS = {"padding"}


def manifest_from_graph(graph: NetworkGraph) -> str:
    lines = ["input,shape=" + "x".join(str(d) for d in graph.input_shape)]
    for spec in graph.layers:
        parts = [spec.name, spec.kind]
        for f in _LAYER_FIELDS[spec.kind]:
            value = getattr(spec, f)
            if value is None:
                continue
            parts.append(f"{f}={value!r}" if isinstance(value, float) else f"{f}={value}")
        lines.append(",".join(parts))
    return "\n".join(lines) + "\n"


def graph_from_manifest(
    text: str, params: dict[str, Tensor], mode: str = INFERENCE
) -> NetworkGraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("input,shape="):
        raise IntegrityError("manifest missing input shape line")
    shape = tuple(int(d) for d in lines[0].split("=", 1)[1].split("x"))
    layers = []
    for ln in lines[1:]:
        parts = ln.split(",")
        name, kind = parts[0], parts[1]
        if kind not in _LAYER_FIELDS:
            raise IntegrityError(f"manifest has unknown layer kind {kind!r}")
        kwargs = {}
        for item in parts[2:]:
            key, _, raw = item.partition("=")
            if key in _FLOAT_FIELDS:
                kwargs[key] = float(raw)
            elif key in _STR_FIELDS:
                kwargs[key] = raw
            else:
                kwargs[key] = int(raw)
        layers.append(LayerSpec(kind, name, **kwargs))
    return NetworkGraph(layers, params, shape, mode=mode)


def graph_digest(graph: NetworkGraph) -> str:
    """Deterministic content hash over manifest and parameter bytes."""
    h = sha256(manifest_from_graph(graph).encode())
    for name in ordered_param_names(graph):
        t = graph.params[name]
        h.update(name.encode())
        h.update(t.dtype.encode())
        if t.dtype == Q8:
            h.update(struct.pack("<fi", t.scale, t.zero_point))
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def ordered_param_names(graph: NetworkGraph) -> list[str]:
    names = []
    for spec in graph.layers:
        names.extend(p for p in spec.param_names() if p in graph.params)
    names.extend(sorted(set(graph.params) - set(names)))
    return names


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


@dataclass
class TensorEntry:
    name: str
    dtype: str
    shape: tuple[int, ...]
    scale: float
    zero_point: int
    offset: int      # from blob start
    byte_len: int
    crc32: int


@dataclass
class BundleLayout:
    version: int
    flags: int
    manifest: str
    tensors: list[TensorEntry]
    blob_start: int
    file_size: int
    table_end: int = 0  # where header+manifest+table stop and padding begins

    @property
    def quantized(self) -> bool:
        return bool(self.flags & FLAG_QUANTIZED)

    @property
    def training(self) -> bool:
        return bool(self.flags & FLAG_TRAINING)

    @property
    def blob_size(self) -> int:
        return self.file_size - self.blob_start

    def entry(self, name: str) -> TensorEntry:
        for e in self.tensors:
            if e.name == name:
                return e
        raise KeyError(name)


@dataclass
class Violation:
    offset: int
    message: str
    tensor: str | None = None

    def __str__(self) -> str:
        where = f" [{self.tensor}]" if self.tensor else ""
        return f"offset {self.offset}: {self.message}{where}"


def _align(n: int, a: int) -> int:
    return (n + a - 1) // a * a


def _tensor_bytes(t: Tensor) -> bytes:
    if t.dtype == F32:
        return np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    return np.ascontiguousarray(t.data, dtype=np.uint8).tobytes()


def write_container(
    path, manifest: str, tensors: list[tuple[str, Tensor]], flags: int = 0
) -> BundleLayout:
    """Serialize tensors + manifest into the bundle format; deterministic."""
    manifest_bytes = manifest.encode()
    entries = []
    offset = 0
    payloads = []
    for name, t in tensors:
        t.validate()
        payload = _tensor_bytes(t)
        offset = _align(offset, TENSOR_ALIGN)
        entries.append(
            TensorEntry(
                name=name,
                dtype=t.dtype,
                shape=tuple(t.shape),
                scale=float(t.scale) if t.scale is not None else 1.0,
                zero_point=int(t.zero_point) if t.zero_point is not None else 0,
                offset=offset,
                byte_len=len(payload),
                crc32=zlib.crc32(payload) & 0xFFFFFFFF,
            )
        )
        payloads.append(payload)
        offset += len(payload)

    table = bytearray()
    table += struct.pack("<I", len(entries))
    for e in entries:
        name_b = e.name.encode()
        table += struct.pack("<H", len(name_b)) + name_b
        table += struct.pack("<BB", DTYPE_CODES[e.dtype], len(e.shape))
        table += struct.pack(f"<{len(e.shape)}I", *e.shape)
        table += struct.pack("<fi", e.scale, e.zero_point)
        table += struct.pack("<QQI", e.offset, e.byte_len, e.crc32)

    head = _HEADER.pack(MAGIC, VERSION, flags, len(manifest_bytes))
    pre_blob = len(head) + len(manifest_bytes) + len(table)
    blob_start = _align(pre_blob, PAGE_SIZE)

    with open(path, "wb") as f:
        f.write(head)
        f.write(manifest_bytes)
        f.write(table)
        f.write(b"\x00" * (blob_start - pre_blob))
        pos = 0
        for e, payload in zip(entries, payloads):
            f.write(b"\x00" * (e.offset - pos))
            f.write(payload)
            pos = e.offset + len(payload)
        file_size = blob_start + pos
    return BundleLayout(
        VERSION, flags, manifest, entries, blob_start, file_size, table_end=pre_blob
    )


def parse_layout(buf, file_size: int) -> tuple[BundleLayout | None, list[Violation]]:
    """Parse the header/manifest/table from a buffer, collecting violations.

    Returns (layout, violations); layout is None when the structure is too
    broken to locate the weight blob. Never raises on malformed input.
    """
    v: list[Violation] = []
    if file_size < _HEADER.size:
        return None, [Violation(0, f"file too short ({file_size} bytes) for header")]
    magic, version, flags, mlen = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        v.append(Violation(0, f"bad magic {magic!r}, expected {MAGIC!r}"))
        return None, v
    if version != VERSION:
        v.append(Violation(4, f"unsupported version {version}"))
        return None, v
    pos = _HEADER.size
    if pos + mlen > file_size:
        v.append(Violation(8, f"manifest length {mlen} exceeds file size"))
        return None, v
    try:
        manifest = bytes(buf[pos : pos + mlen]).decode()
    except UnicodeDecodeError:
        v.append(Violation(pos, "manifest is not valid UTF-8"))
        return None, v
    pos += mlen
    if pos + 4 > file_size:
        v.append(Violation(pos, "truncated before tensor count"))
        return None, v
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    entries = []
    for i in range(count):
        if pos + 2 > file_size:
            v.append(Violation(pos, f"truncated in tensor table at entry {i}"))
            return None, v
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        fixed = name_len + 1 + 1
        if pos + fixed > file_size:
            v.append(Violation(pos, f"truncated name/dtype at entry {i}"))
            return None, v
        name = bytes(buf[pos : pos + name_len]).decode(errors="replace")
        pos += name_len
        dtype_code, rank = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if dtype_code not in DTYPE_FROM_CODE:
            v.append(Violation(pos - 2, f"unknown dtype code {dtype_code}", name))
            return None, v
        if pos + 4 * rank + 8 + 20 > file_size:
            v.append(Violation(pos, f"truncated dims/fields at entry {i}", name))
            return None, v
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        scale, zero_point = struct.unpack_from("<fi", buf, pos)
        pos += 8
        offset, byte_len, crc = struct.unpack_from("<QQI", buf, pos)
        pos += 20
        entries.append(
            TensorEntry(name, DTYPE_FROM_CODE[dtype_code], tuple(dims), scale,
                        zero_point, offset, byte_len, crc)
        )
    blob_start = _align(pos, PAGE_SIZE)
    if blob_start % PAGE_SIZE:
        v.append(Violation(blob_start, "weight blob is not page aligned"))
    layout = BundleLayout(
        version, flags, manifest, entries, blob_start, file_size, table_end=pos
    )

    prev_end = 0
    for e in entries:
        abs_off = blob_start + e.offset
        if e.offset % TENSOR_ALIGN:
            v.append(Violation(abs_off, "tensor offset not 64-byte aligned", e.name))
        if e.offset < prev_end:
            v.append(
                Violation(abs_off, "tensor offsets not increasing/non-overlapping", e.name)
            )
        itemsize = 4 if e.dtype == F32 else 1
        want = int(np.prod(e.shape, dtype=np.int64)) * itemsize
        if e.byte_len != want:
            v.append(
                Violation(abs_off, f"byte length {e.byte_len} != shape implies {want}", e.name)
            )
        if abs_off + e.byte_len > file_size:
            v.append(Violation(abs_off, "tensor extends past end of file", e.name))
        prev_end = e.offset + e.byte_len
    return layout, v


def _padding_ranges(layout: BundleLayout):
    """Absolute byte ranges required to be zero: the page-alignment pad
    before the blob and the 64-byte alignment gaps between tensors."""
    yield (layout.table_end, layout.blob_start)
    pos = 0
    for e in sorted(layout.tensors, key=lambda e: e.offset):
        yield (layout.blob_start + pos, layout.blob_start + e.offset)
        pos = max(pos, e.offset + e.byte_len)


def verify_bundle(path) -> list[Violation]:
    """Structural + per-tensor crc32 verification; empty list means ok."""
    path = Path(path)
    if not path.exists():
        return [Violation(0, f"no such file: {path}")]
    size = path.stat().st_size
    if size == 0:
        return [Violation(0, "file is empty")]
    with open(path, "rb") as f, mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ) as mm:
        view = memoryview(mm)
        try:
            layout, violations = parse_layout(view, size)
            if layout is None:
                return violations
            for e in layout.tensors:
                abs_off = layout.blob_start + e.offset
                if abs_off + e.byte_len > size:
                    continue  # already reported
                crc = zlib.crc32(view[abs_off : abs_off + e.byte_len]) & 0xFFFFFFFF
                if crc != e.crc32:
                    violations.append(
                        Violation(
                            abs_off,
                            f"crc32 mismatch (stored {e.crc32:#010x}, computed {crc:#010x})",
                            e.name,
                        )
                    )
            # alignment padding carries no checksum, so it must stay zero
            # for corruption anywhere in the file to be detectable
            for start, end in _padding_ranges(layout):
                if end > size or start >= end:
                    continue
                chunk = bytes(view[start:end])
                if chunk.count(0) != len(chunk):
                    bad = start + next(i for i, b in enumerate(chunk) if b != 0)
                    violations.append(Violation(bad, "padding byte is not zero"))
            return violations
        finally:
            view.release()


def read_container(path) -> tuple[BundleLayout, dict[str, Tensor]]:
    """Eager read: verifies, then materializes every tensor as a copy."""
    violations = verify_bundle(path)
    if violations:
        raise IntegrityError(
            f"{path} failed verification: " + "; ".join(str(x) for x in violations),
            violations,
        )
    data = Path(path).read_bytes()
    layout, _ = parse_layout(data, len(data))
    tensors = {}
    for e in layout.tensors:
        start = layout.blob_start + e.offset
        raw = data[start : start + e.byte_len]
        if e.dtype == F32:
            arr = np.frombuffer(raw, dtype="<f4").reshape(e.shape).copy()
            tensors[e.name] = Tensor.f32(arr)
        else:
            arr = np.frombuffer(raw, dtype=np.uint8).reshape(e.shape).copy()
            tensors[e.name] = Tensor.q8(arr, e.scale, e.zero_point)
    return layout, tensors


# ---------------------------------------------------------------------------
# freeze / prune / quantize / pack
# ---------------------------------------------------------------------------


@dataclass
class FrozenGraph:
    """Inference-mode graph with constant parameters and provenance."""

    graph: NetworkGraph
    provenance: str


def freeze(source) -> FrozenGraph:
    """Checkpoint/graph/path -> inference graph with optimizer state dropped."""
    if isinstance(source, (str, Path)):
        layout, tensors = read_container(source)
        params = {k: t for k, t in tensors.items() if not k.startswith("opt/")}
        graph = graph_from_manifest(layout.manifest, params, mode=INFERENCE)
    elif isinstance(source, NetworkGraph):
        graph = source.copy()
    elif hasattr(source, "graph"):
        graph = source.graph.copy()
    else:
        raise InputError(f"cannot freeze {type(source).__name__}")
    graph.mode = INFERENCE
    graph.params = {
        k: t for k, t in graph.params.items() if not k.startswith("opt/")
    }
    graph.validate()
    return FrozenGraph(graph, provenance=graph_digest(graph))


def prune_for_inference(frozen: FrozenGraph) -> FrozenGraph:
    """Drop dropout layers and fold batch norm into preceding dense/conv."""
    graph = frozen.graph
    layers = graph.layers
    referenced = {
        spec.from_layer for spec in layers if spec.from_layer is not None
    }

    # decide per-layer fate: keep, drop (dropout), fold (batch_norm)
    fold_into: dict[int, int] = {}
    drop: set[int] = set()
    for i, spec in enumerate(layers):
        if spec.kind == "dropout":
            drop.add(i)
        elif spec.kind == "batch_norm" and i > 0:
            prev = layers[i - 1]
            # folding changes the producer's output, so its raw output
            # must not feed a skip connection
            if prev.kind in ("dense", "conv2d") and (i - 1) not in referenced:
                fold_into[i] = i - 1

    removed = drop | set(fold_into)
    alias: dict[int, int] = {-1: -1}
    for i in range(len(layers)):
        alias[i] = alias[i - 1] if i in removed else i
    new_index: dict[int, int] = {-1: -1}
    kept: list[int] = []
    for i in range(len(layers)):
        if i not in removed:
            new_index[i] = len(kept)
            kept.append(i)

    params = {k: t.copy() for k, t in graph.params.items()}
    for bn_idx, producer_idx in fold_into.items():
        bn = layers[bn_idx]
        producer = layers[producer_idx]
        gamma = params.pop(f"{bn.name}/weight").floats()
        beta = params.pop(f"{bn.name}/bias").floats()
        mean = params.pop(f"{bn.name}/running_mean").floats()
        var = params.pop(f"{bn.name}/running_var").floats()
        s = gamma / np.sqrt(var + bn.bn_epsilon)
        w = params[f"{producer.name}/weight"].floats()
        b = params[f"{producer.name}/bias"].floats()
        params[f"{producer.name}/weight"] = Tensor.f32(w * s)  # scales last axis
        params[f"{producer.name}/bias"] = Tensor.f32((b - mean) * s + beta)

    for i in drop:
        for pname in layers[i].param_names():
            params.pop(pname, None)

    new_layers = []
    for i in kept:
        spec = replace(layers[i])
        if spec.from_layer is not None:
            spec.from_layer = new_index[alias[spec.from_layer]]
        new_layers.append(spec)

    pruned = NetworkGraph(new_layers, params, tuple(graph.input_shape), INFERENCE)
    pruned.validate()
    return FrozenGraph(pruned, provenance=frozen.provenance)


def quantize_tensor(t: Tensor) -> Tensor:
    """Affine uint8 quantization: q = clamp(round(x/scale) + zp, 0, 255).

    The real range is extended to include zero so the error bound
    |x - dequant(q)| <= scale/2 holds for one-sided tensors too; an
    all-zero tensor gets the degenerate (scale=1, zero_point=0) pair.
    """
    if t.dtype == Q8:
        return t
    x = np.asarray(t.data, dtype=np.float64)
    bad = ~np.isfinite(x)
    if bad.any():
        idx = int(np.flatnonzero(bad.reshape(-1))[0])
        raise QuantizationError(f"non-finite element at flat index {idx}")
    rmin = min(0.0, float(x.min())) if x.size else 0.0
    rmax = max(0.0, float(x.max())) if x.size else 0.0
    scale = float(np.float32((rmax - rmin) / 255.0))  # stored as f32 on the wire
    if scale == 0.0:  # all-zero tensor, or a range below f32 resolution
        return Tensor.q8(np.zeros(t.shape, np.uint8), 1.0, 0)
    zero_point = int(np.clip(round_half_away(-rmin / scale), 0, 255))
    q = np.clip(round_half_away(x / scale) + zero_point, 0, 255).astype(np.uint8)
    return Tensor.q8(q, scale, zero_point)


def dequantize_tensor(q: Tensor) -> Tensor:
    if q.dtype != Q8:
        raise InputError("dequantize_tensor expects a q8 tensor")
    return Tensor.f32(q.floats())


def pack_bundle(frozen: FrozenGraph, quantize: bool, out_path) -> BundleLayout:
    """Write a frozen graph as a (optionally quantized) inference bundle."""
    graph = frozen.graph
    manifest = manifest_from_graph(graph)
    tensors = []
    for name in ordered_param_names(graph):
        t = graph.params[name]
        tensors.append((name, quantize_tensor(t) if quantize else t))
    flags = FLAG_QUANTIZED if quantize else 0
    return write_container(out_path, manifest, tensors, flags)


# ---------------------------------------------------------------------------
# FLOPs
# ---------------------------------------------------------------------------


@dataclass
class FlopsReport:
    per_layer: list[tuple[str, str, int]]
    total: int
    device_budget: float | None = None
    over_budget_factor: float | None = None


def estimate_flops(graph: NetworkGraph) -> FlopsReport:
    """Dense: (2*n_in + 1)*n_out. Conv: 2*k^2*cin*cout*Hout*Wout.
    Elementwise layers count 1 per output element."""
    per_layer = []
    cur = tuple(graph.input_shape)
    for spec, out_shape in zip(graph.layers, graph.layer_shapes()):
        n_out = int(np.prod(out_shape))
        if spec.kind == "dense":
            flops = (2 * spec.fan_in + 1) * spec.fan_out
        elif spec.kind == "conv2d":
            c_in = cur[2]
            flops = 2 * spec.kernel**2 * c_in * spec.channels * out_shape[0] * out_shape[1]
        elif spec.kind == "maxpool":
            flops = spec.kernel**2 * n_out
        elif spec.kind in ("relu", "softmax", "residual_add"):
            flops = n_out
        elif spec.kind == "batch_norm":
            flops = 2 * n_out
        else:  # concat, dropout (inference): data movement only
            flops = 0
        per_layer.append((spec.name, spec.kind, flops))
        cur = out_shape
    return FlopsReport(per_layer, sum(f for _, _, f in per_layer))


def budget_check(report: FlopsReport, device_flops: float) -> float:
    """Model FLOPs per inference vs device FLOP/s capability."""
    if device_flops <= 0:
        raise InputError("device_flops must be positive")
    factor = report.total / device_flops
    report.device_budget = device_flops
    report.over_budget_factor = factor
    return factor
