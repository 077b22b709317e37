"""Layer specs, graphs, and forward/backward passes.

Minimal from-scratch neural network math on numpy arrays: enough layer
kinds for a deep symptom classifier (dense / relu / dropout / softmax)
and a small residual image classifier (conv2d / maxpool / batch_norm /
concat / residual_add). Graphs are ordered layer lists; skip connections
(residual_add, concat) reference earlier layers by index, with -1
meaning the graph input.

Arrays keep their floating dtype end to end: production graphs run in
float32, test oracles may widen parameters to float64 and get float64
accumulation for free.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, GraphError, NumericError
from .tensor import Tensor

LAYER_KINDS = (
    "dense",
    "conv2d",
    "maxpool",
    "concat",
    "residual_add",
    "batch_norm",
    "dropout",
    "relu",
    "softmax",
)

TRAINING = "training"
INFERENCE = "inference"

DEFAULT_DROP_PROB = 0.15
DEFAULT_BN_DECAY = 0.9997
DEFAULT_BN_EPSILON = 0.001


@dataclass
class LayerSpec:
    """One layer of a NetworkGraph. Only the fields of its kind are set."""

    kind: str
    name: str
    fan_in: int | None = None        # dense
    fan_out: int | None = None       # dense
    kernel: int | None = None        # conv2d / maxpool
    stride: int | None = None        # conv2d / maxpool
    channels: int | None = None      # conv2d output channels
    padding: str = "same"            # conv2d: same | valid
    drop_prob: float = DEFAULT_DROP_PROB
    bn_decay: float = DEFAULT_BN_DECAY
    bn_epsilon: float = DEFAULT_BN_EPSILON
    from_layer: int | None = None    # residual_add / concat source (-1 = input)

    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d", "batch_norm")

    def param_names(self) -> list[str]:
        if self.kind in ("dense", "conv2d"):
            return [f"{self.name}/weight", f"{self.name}/bias"]
        if self.kind == "batch_norm":
            return [
                f"{self.name}/weight",
                f"{self.name}/bias",
                f"{self.name}/running_mean",
                f"{self.name}/running_var",
            ]
        return []


@dataclass
class NetworkGraph:
    """Ordered layers plus named parameter tensors."""

    layers: list[LayerSpec]
    params: dict[str, Tensor]
    input_shape: tuple[int, ...]
    mode: str = TRAINING

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.layer_shapes()[-1]))

    @property
    def compute_dtype(self):
        for t in self.params.values():
            if t.dtype == "f32" and t.data.dtype == np.float64:
                return np.float64
        return np.float32

    def param(self, name: str) -> np.ndarray:
        return self.params[name].floats()

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Per-layer output shapes (batch dim excluded); validates wiring."""
        return infer_shapes(self.layers, self.input_shape)

    def validate(self) -> None:
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise GraphError("layer names are not unique")
        if not self.layers or self.layers[-1].kind != "softmax":
            raise GraphError("graph must end with a softmax layer")
        if self.mode not in (TRAINING, INFERENCE):
            raise GraphError(f"unknown mode {self.mode!r}")
        shapes = self.layer_shapes()
        for spec, shape in zip(self.layers, shapes):
            for pname in spec.param_names():
                if pname not in self.params:
                    raise GraphError(f"missing parameter {pname!r}")
        seen = set()
        for key in self.params:
            if key in seen:
                raise GraphError(f"duplicate parameter {key!r}")
            seen.add(key)

    def copy(self) -> "NetworkGraph":
        return NetworkGraph(
            layers=[replace(l) for l in self.layers],
            params={k: t.copy() for k, t in self.params.items()},
            input_shape=tuple(self.input_shape),
            mode=self.mode,
        )


@dataclass
class ActivationTrace:
    """Per-layer outputs (plus backward caches) from one forward pass."""

    graph_key: int
    mode: str
    rng_seed: int
    input: np.ndarray
    outputs: list[np.ndarray]
    aux: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.outputs)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; rejects non-finite input."""
    logits = np.asarray(logits)
    if logits.size == 0:
        raise DimensionError("softmax needs at least one logit")
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax input contains NaN or Inf")
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def dense_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, layer: str = "dense"
) -> np.ndarray:
    """out[j] = bias[j] + sum_i x[i] * weight[i, j]; batch dim allowed."""
    x = np.asarray(x)
    single = x.ndim == 1
    xb = x[None, :] if single else x.reshape(x.shape[0], -1)
    if xb.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"{layer}: input has {xb.shape[1]} features, weight expects {weight.shape[0]}"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"{layer}: bias shape {bias.shape} != ({weight.shape[1]},)")
    out = xb @ weight + bias
    return out[0] if single else out


def _same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv2d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: str = "same",
    layer: str = "conv2d",
) -> np.ndarray:
    """2-D convolution, NHWC layout, weight (k, k, c_in, c_out)."""
    x = np.asarray(x)
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4:
        raise DimensionError(f"{layer}: expected NHWC input, got shape {x.shape}")
    k = weight.shape[0]
    if xb.shape[3] != weight.shape[2]:
        raise DimensionError(
            f"{layer}: input has {xb.shape[3]} channels, weight expects {weight.shape[2]}"
        )
    xp, (ho, wo) = _pad_for_conv(xb, k, stride, padding, layer)
    out = np.zeros((xb.shape[0], ho, wo, weight.shape[3]), dtype=xb.dtype)
    for di in range(k):
        for dj in range(k):
            xs = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :]
            out += xs @ weight[di, dj]
    out += bias
    return out[0] if single else out


def _pad_for_conv(xb, k, stride, padding, layer):
    h, w = xb.shape[1], xb.shape[2]
    if padding == "same":
        ho, pt, pb = _same_padding(h, k, stride)
        wo, pl, pr = _same_padding(w, k, stride)
        xp = np.pad(xb, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    elif padding == "valid":
        if h < k or w < k:
            raise DimensionError(f"{layer}: input {h}x{w} smaller than kernel {k}")
        ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
        xp = xb
    else:
        raise GraphError(f"{layer}: unknown padding {padding!r}")
    return xp, (ho, wo)


def _conv2d_backward(x, weight, grad_out, stride, padding, layer):
    xb = x
    k = weight.shape[0]
    xp, (ho, wo) = _pad_for_conv(xb, k, stride, padding, layer)
    d_xp = np.zeros_like(xp)
    d_w = np.zeros_like(weight)
    for di in range(k):
        for dj in range(k):
            xs = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :]
            d_w[di, dj] = np.einsum("bhwc,bhwo->co", xs, grad_out)
            d_xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride, :] += (
                grad_out @ weight[di, dj].T
            )
    d_b = grad_out.sum(axis=(0, 1, 2))
    if padding == "same":
        h, w = xb.shape[1], xb.shape[2]
        _, pt, _ = _same_padding(h, k, stride)
        _, pl, _ = _same_padding(w, k, stride)
        d_x = d_xp[:, pt : pt + h, pl : pl + w, :]
    else:
        d_x = d_xp
    return d_x, d_w, d_b


def maxpool_forward(x: np.ndarray, kernel: int, stride: int | None = None):
    """Max pooling (valid), NHWC. Returns (out, flat argmax per window)."""
    stride = stride or kernel
    b, h, w, c = x.shape
    ho, wo = (h - kernel) // stride + 1, (w - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"maxpool: input {h}x{w} smaller than kernel {kernel}")
    win = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (b, ho, wo, c, k, k)
    flat = win.reshape(b, ho, wo, c, kernel * kernel)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(x_shape, idx, grad_out, kernel, stride):
    b, h, w, c = x_shape
    _, ho, wo, _ = grad_out.shape
    d_x = np.zeros(x_shape, dtype=grad_out.dtype)
    bi, hi, wi, ci = np.indices((b, ho, wo, c), sparse=False)
    rows = hi * stride + idx // kernel
    cols = wi * stride + idx % kernel
    np.add.at(d_x, (bi, rows, cols, ci), grad_out)
    return d_x


def batch_norm_train(x, gamma, beta, epsilon):
    """Normalize over all axes but the last; returns (out, cache)."""
    axes = tuple(range(x.ndim - 1))
    mu = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + beta
    m = x.size // x.shape[-1]
    return out, (xhat, inv_std, m, mu, var)


def batch_norm_infer(x, gamma, beta, running_mean, running_var, epsilon):
    inv_std = 1.0 / np.sqrt(running_var + epsilon)
    return gamma * (x - running_mean) * inv_std + beta


def _batch_norm_backward_train(grad_out, gamma, cache):
    xhat, inv_std, m, _, _ = cache
    axes = tuple(range(grad_out.ndim - 1))
    d_beta = grad_out.sum(axis=axes)
    d_gamma = (grad_out * xhat).sum(axis=axes)
    d_xhat = grad_out * gamma
    d_x = (
        inv_std
        / m
        * (m * d_xhat - d_xhat.sum(axis=axes) - xhat * (d_xhat * xhat).sum(axis=axes))
    )
    return d_x, d_gamma, d_beta


# ---------------------------------------------------------------------------
# shape inference
# ---------------------------------------------------------------------------


def infer_shapes(
    layers: list[LayerSpec], input_shape: tuple[int, ...]
) -> list[tuple[int, ...]]:
    """Propagate the (batchless) activation shape through every layer."""

    def src_shape(i: int, ref: int) -> tuple[int, ...]:
        if ref is None:
            raise GraphError(f"{layers[i].name}: missing from_layer reference")
        if ref == -1:
            return tuple(input_shape)
        if not 0 <= ref < i:
            raise GraphError(f"{layers[i].name}: from_layer {ref} out of range")
        return shapes[ref]

    shapes: list[tuple[int, ...]] = []
    cur = tuple(input_shape)
    for i, spec in enumerate(layers):
        if spec.kind == "dense":
            flat = int(np.prod(cur))
            if flat != spec.fan_in:
                raise DimensionError(
                    f"{spec.name}: fan_in {spec.fan_in} != incoming size {flat}"
                )
            cur = (spec.fan_out,)
        elif spec.kind == "conv2d":
            if len(cur) != 3:
                raise DimensionError(f"{spec.name}: conv2d needs HWC input, got {cur}")
            s = spec.stride or 1
            if spec.padding == "same":
                ho = -(-cur[0] // s)
                wo = -(-cur[1] // s)
            else:
                ho = (cur[0] - spec.kernel) // s + 1
                wo = (cur[1] - spec.kernel) // s + 1
            if ho < 1 or wo < 1:
                raise DimensionError(f"{spec.name}: output collapsed to {ho}x{wo}")
            cur = (ho, wo, spec.channels)
        elif spec.kind == "maxpool":
            if len(cur) != 3:
                raise DimensionError(f"{spec.name}: maxpool needs HWC input, got {cur}")
            s = spec.stride or spec.kernel
            ho = (cur[0] - spec.kernel) // s + 1
            wo = (cur[1] - spec.kernel) // s + 1
            if ho < 1 or wo < 1:
                raise DimensionError(f"{spec.name}: output collapsed to {ho}x{wo}")
            cur = (ho, wo, cur[2])
        elif spec.kind == "residual_add":
            other = src_shape(i, spec.from_layer)
            if other != cur:
                raise DimensionError(
                    f"{spec.name}: residual shapes differ {cur} vs {other}"
                )
        elif spec.kind == "concat":
            other = src_shape(i, spec.from_layer)
            if cur[:-1] != other[:-1]:
                raise DimensionError(
                    f"{spec.name}: concat shapes differ {cur} vs {other}"
                )
            cur = cur[:-1] + (cur[-1] + other[-1],)
        elif spec.kind in ("batch_norm", "dropout", "relu", "softmax"):
            pass
        else:
            raise GraphError(f"{spec.name}: unknown layer kind {spec.kind!r}")
        shapes.append(cur)
    return shapes


# ---------------------------------------------------------------------------
# graph execution
# ---------------------------------------------------------------------------


def forward(
    graph: NetworkGraph, x, rng_seed: int = 0
) -> tuple[np.ndarray, ActivationTrace]:
    """Run the graph; returns (softmax output, per-layer trace).

    Accepts a single sample shaped like graph.input_shape or a batch with
    a leading batch dimension. Training mode draws dropout masks from
    rng_seed; inference mode treats dropout as identity.
    """
    dtype = graph.compute_dtype
    x = np.asarray(x, dtype=dtype)
    in_shape = tuple(graph.input_shape)
    single = x.shape == in_shape
    xb = x[None] if single else x
    if xb.shape[1:] != in_shape:
        raise GraphError(
            f"input shape {x.shape} does not match graph input {in_shape}"
        )
    if graph.mode not in (TRAINING, INFERENCE):
        raise GraphError(f"unknown mode {graph.mode!r}")

    outputs: list[np.ndarray] = []
    aux: list[dict] = []
    cur = xb

    def src(i: int, ref: int) -> np.ndarray:
        return xb if ref == -1 else outputs[ref]

    for i, spec in enumerate(graph.layers):
        a: dict = {}
        if spec.kind == "dense":
            cur = dense_forward(
                cur,
                graph.param(f"{spec.name}/weight"),
                graph.param(f"{spec.name}/bias"),
                layer=spec.name,
            )
        elif spec.kind == "conv2d":
            cur = conv2d_forward(
                cur,
                graph.param(f"{spec.name}/weight"),
                graph.param(f"{spec.name}/bias"),
                stride=spec.stride or 1,
                padding=spec.padding,
                layer=spec.name,
            )
        elif spec.kind == "maxpool":
            cur, idx = maxpool_forward(cur, spec.kernel, spec.stride or spec.kernel)
            a["argmax"] = idx
        elif spec.kind == "relu":
            cur = relu(cur)
        elif spec.kind == "softmax":
            flat = cur.reshape(cur.shape[0], -1)
            cur = softmax(flat)
        elif spec.kind == "dropout":
            if graph.mode == TRAINING:
                rng = np.random.default_rng((abs(int(rng_seed)), i))
                keep = rng.random(cur.shape) >= spec.drop_prob
                scale = 1.0 / (1.0 - spec.drop_prob)
                cur = cur * keep * np.asarray(scale, dtype=cur.dtype)
                a["keep"] = keep
            # inference: identity
        elif spec.kind == "batch_norm":
            gamma = graph.param(f"{spec.name}/weight")
            beta = graph.param(f"{spec.name}/bias")
            if graph.mode == TRAINING:
                cur, cache = batch_norm_train(cur, gamma, beta, spec.bn_epsilon)
                a["bn"] = cache
                rm = graph.params[f"{spec.name}/running_mean"].data
                rv = graph.params[f"{spec.name}/running_var"].data
                _, _, _, mu, var = cache
                d = spec.bn_decay
                rm *= d
                rm += (1 - d) * mu.astype(rm.dtype)
                rv *= d
                rv += (1 - d) * var.astype(rv.dtype)
            else:
                cur = batch_norm_infer(
                    cur,
                    gamma,
                    beta,
                    graph.param(f"{spec.name}/running_mean"),
                    graph.param(f"{spec.name}/running_var"),
                    spec.bn_epsilon,
                )
        elif spec.kind == "residual_add":
            other = src(i, spec.from_layer)
            if other.shape != cur.shape:
                raise DimensionError(
                    f"{spec.name}: residual shapes differ {cur.shape} vs {other.shape}"
                )
            cur = cur + other
        elif spec.kind == "concat":
            other = src(i, spec.from_layer)
            a["split"] = cur.shape[-1]
            cur = np.concatenate([cur, other], axis=-1)
        else:
            raise GraphError(f"{spec.name}: unknown layer kind {spec.kind!r}")
        outputs.append(cur)
        aux.append(a)

    if graph.layers[-1].kind != "softmax":
        raise GraphError("graph must end with a softmax layer")
    trace = ActivationTrace(
        graph_key=id(graph),
        mode=graph.mode,
        rng_seed=rng_seed,
        input=xb,
        outputs=outputs,
        aux=aux,
    )
    probs = outputs[-1]
    return (probs[0] if single else probs), trace


def backward(
    graph: NetworkGraph, trace: ActivationTrace, target
) -> dict[str, np.ndarray]:
    """Gradients of mean cross-entropy loss w.r.t. every parameter.

    `target` is a one-hot vector (or batch of one-hot rows) matching the
    softmax output. The trace must come from forward() on this graph.
    """
    if trace.graph_key != id(graph) or len(trace) != len(graph.layers):
        raise GraphError("stale trace: not produced by forward() on this graph")
    if trace.mode != graph.mode:
        raise GraphError(f"stale trace: mode changed ({trace.mode} -> {graph.mode})")

    probs = trace.outputs[-1]
    target = np.asarray(target, dtype=probs.dtype)
    tb = target[None] if target.ndim == 1 else target
    if tb.shape != probs.shape:
        raise GraphError(f"target shape {target.shape} does not match output")
    ones = np.isclose(tb, 1.0)
    if not np.all((ones.sum(axis=1) == 1) & np.all((tb == 0) | ones, axis=1)):
        raise GraphError("target rows must be one-hot")

    n_layers = len(graph.layers)
    if n_layers < 2:
        raise GraphError("graph needs at least one layer before the softmax")
    batch = probs.shape[0]
    grads: dict[str, np.ndarray] = {}
    gout: list[np.ndarray | None] = [None] * n_layers

    # cross-entropy through final softmax: d loss / d logits
    gout[n_layers - 2] = (probs - tb) / batch

    def layer_input(i: int) -> np.ndarray:
        return trace.outputs[i - 1] if i > 0 else trace.input

    def acc(idx: int, g: np.ndarray) -> None:
        if idx < 0:
            return  # gradient w.r.t. graph input: not needed
        gout[idx] = g if gout[idx] is None else gout[idx] + g

    for i in range(n_layers - 2, -1, -1):
        g = gout[i]
        if g is None:
            continue
        spec = graph.layers[i]
        x_in = layer_input(i)
        if spec.kind == "dense":
            w = graph.param(f"{spec.name}/weight")
            xf = x_in.reshape(x_in.shape[0], -1)
            grads[f"{spec.name}/weight"] = xf.T @ g
            grads[f"{spec.name}/bias"] = g.sum(axis=0)
            acc(i - 1, (g @ w.T).reshape(x_in.shape))
        elif spec.kind == "conv2d":
            w = graph.param(f"{spec.name}/weight")
            d_x, d_w, d_b = _conv2d_backward(
                x_in, w, g, spec.stride or 1, spec.padding, spec.name
            )
            grads[f"{spec.name}/weight"] = d_w
            grads[f"{spec.name}/bias"] = d_b
            acc(i - 1, d_x)
        elif spec.kind == "maxpool":
            acc(
                i - 1,
                _maxpool_backward(
                    x_in.shape,
                    trace.aux[i]["argmax"],
                    g,
                    spec.kernel,
                    spec.stride or spec.kernel,
                ),
            )
        elif spec.kind == "relu":
            acc(i - 1, g * (trace.outputs[i] > 0))
        elif spec.kind == "dropout":
            if "keep" in trace.aux[i]:
                keep = trace.aux[i]["keep"]
                scale = 1.0 / (1.0 - spec.drop_prob)
                acc(i - 1, g * keep * np.asarray(scale, dtype=g.dtype))
            else:
                acc(i - 1, g)
        elif spec.kind == "batch_norm":
            gamma = graph.param(f"{spec.name}/weight")
            if "bn" in trace.aux[i]:
                d_x, d_gamma, d_beta = _batch_norm_backward_train(
                    g, gamma, trace.aux[i]["bn"]
                )
            else:
                rv = graph.param(f"{spec.name}/running_var")
                rm = graph.param(f"{spec.name}/running_mean")
                inv_std = 1.0 / np.sqrt(rv + spec.bn_epsilon)
                axes = tuple(range(g.ndim - 1))
                d_beta = g.sum(axis=axes)
                d_gamma = (g * (x_in - rm) * inv_std).sum(axis=axes)
                d_x = g * gamma * inv_std
            grads[f"{spec.name}/weight"] = d_gamma
            grads[f"{spec.name}/bias"] = d_beta
            acc(i - 1, d_x)
        elif spec.kind == "residual_add":
            acc(i - 1, g)
            acc(spec.from_layer, g)
        elif spec.kind == "concat":
            split = trace.aux[i]["split"]
            acc(i - 1, g[..., :split])
            acc(spec.from_layer, g[..., split:])
        elif spec.kind == "softmax":
            raise GraphError(f"{spec.name}: softmax only supported as final layer")
    return grads


def count_parameters(graph: NetworkGraph) -> int:
    """Total element count across all parameter tensors."""
    return sum(t.numel for t in graph.params.values())


# ---------------------------------------------------------------------------
# residual block as a standalone op
# ---------------------------------------------------------------------------


def residual_block_forward(
    x: np.ndarray, block_params: dict[str, np.ndarray], epsilon: float = DEFAULT_BN_EPSILON
) -> np.ndarray:
    """relu(x + F(x)) with F = conv -> batch_norm (frozen) -> relu -> conv.

    The direct path makes the block an identity mapping when every
    F-parameter is zero (then output == relu(x) elementwise). F must
    preserve the shape of x ('same' padding, stride 1).
    """
    x = np.asarray(x)
    single = x.ndim == 3
    xb = x[None] if single else x
    f = conv2d_forward(
        xb, block_params["conv1/weight"], block_params["conv1/bias"], layer="conv1"
    )
    f = batch_norm_infer(
        f,
        block_params["bn/weight"],
        block_params["bn/bias"],
        block_params["bn/running_mean"],
        block_params["bn/running_var"],
        epsilon,
    )
    f = relu(f)
    f = conv2d_forward(
        f, block_params["conv2/weight"], block_params["conv2/bias"], layer="conv2"
    )
    if f.shape != xb.shape:
        raise DimensionError(
            f"residual F changed shape {xb.shape} -> {f.shape}; must preserve it"
        )
    out = relu(xb + f)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def init_params(graph: NetworkGraph, seed: int = 0) -> None:
    """He-style uniform init scaled by fan-in; biases zero, bn identity."""
    rng = np.random.default_rng(abs(int(seed)))
    shapes = graph.layer_shapes()
    cur = tuple(graph.input_shape)
    for spec, out_shape in zip(graph.layers, shapes):
        if spec.kind == "dense":
            limit = np.sqrt(6.0 / spec.fan_in)
            w = rng.uniform(-limit, limit, size=(spec.fan_in, spec.fan_out))
            graph.params[f"{spec.name}/weight"] = Tensor.f32(w)
            graph.params[f"{spec.name}/bias"] = Tensor.f32(np.zeros(spec.fan_out))
        elif spec.kind == "conv2d":
            c_in = cur[2]
            fan_in = spec.kernel * spec.kernel * c_in
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(
                -limit, limit, size=(spec.kernel, spec.kernel, c_in, spec.channels)
            )
            graph.params[f"{spec.name}/weight"] = Tensor.f32(w)
            graph.params[f"{spec.name}/bias"] = Tensor.f32(np.zeros(spec.channels))
        elif spec.kind == "batch_norm":
            c = cur[-1]
            graph.params[f"{spec.name}/weight"] = Tensor.f32(np.ones(c))
            graph.params[f"{spec.name}/bias"] = Tensor.f32(np.zeros(c))
            graph.params[f"{spec.name}/running_mean"] = Tensor.f32(np.zeros(c))
            graph.params[f"{spec.name}/running_var"] = Tensor.f32(np.ones(c))
        cur = out_shape


def build_mlp(
    input_dim: int,
    hidden_width: int,
    n_hidden: int,
    output_dim: int,
    drop_prob: float = DEFAULT_DROP_PROB,
    seed: int = 0,
) -> NetworkGraph:
    """Deep symptom classifier: dense/relu stack with dropout after every
    other hidden layer (odd 1-based indices), softmax head."""
    layers: list[LayerSpec] = []
    fan_in = input_dim
    for h in range(n_hidden):
        layers.append(
            LayerSpec("dense", f"dense{h}", fan_in=fan_in, fan_out=hidden_width)
        )
        layers.append(LayerSpec("relu", f"relu{h}"))
        if (h + 1) % 2 == 1:
            layers.append(LayerSpec("dropout", f"drop{h}", drop_prob=drop_prob))
        fan_in = hidden_width
    layers.append(LayerSpec("dense", "head", fan_in=fan_in, fan_out=output_dim))
    layers.append(LayerSpec("softmax", "probs"))
    graph = NetworkGraph(layers, {}, (input_dim,), mode=TRAINING)
    init_params(graph, seed)
    graph.validate()
    return graph


def full_scale_dnn(seed: int = 0) -> NetworkGraph:
    """Full-scale preset: 237 symptoms -> 16 uniform hidden layers of 820
    -> 1537 diagnoses (11,555,337 parameters)."""
    return build_mlp(237, 820, 16, 1537, seed=seed)


def desk_scale_dnn(seed: int = 0) -> NetworkGraph:
    """Desk preset: 50 symptoms -> 4 hidden layers of 64 -> 100 diseases."""
    return build_mlp(50, 64, 4, 100, seed=seed)


def build_skin_cnn(
    image_size: int = 32,
    in_channels: int = 3,
    n_classes: int = 26,
    width: int = 8,
    drop_prob: float = DEFAULT_DROP_PROB,
    bn_decay: float = DEFAULT_BN_DECAY,
    seed: int = 0,
) -> NetworkGraph:
    """Toy residual image classifier: conv stem, one residual block, a
    concat branch, pooling, dropout and a dense softmax head.

    bn_decay defaults to 0.9997, which assumes very long runs;
    desk-scale training passes a faster decay so running statistics
    converge within a few hundred optimizer steps.
    """
    w = width
    layers = [
        LayerSpec("conv2d", "stem", kernel=3, stride=1, channels=w),          # 0
        LayerSpec("batch_norm", "stem_bn", bn_decay=bn_decay),                # 1
        LayerSpec("relu", "stem_relu"),                                       # 2
        LayerSpec("conv2d", "res_conv1", kernel=3, stride=1, channels=w),     # 3
        LayerSpec("batch_norm", "res_bn", bn_decay=bn_decay),                 # 4
        LayerSpec("relu", "res_relu"),                                        # 5
        LayerSpec("conv2d", "res_conv2", kernel=3, stride=1, channels=w),     # 6
        LayerSpec("residual_add", "res_add", from_layer=2),                   # 7
        LayerSpec("relu", "res_out"),                                         # 8
        LayerSpec("maxpool", "pool1", kernel=2, stride=2),                    # 9
        LayerSpec("conv2d", "branch", kernel=3, stride=1, channels=w),        # 10
        LayerSpec("relu", "branch_relu"),                                     # 11
        LayerSpec("concat", "inception_cat", from_layer=9),                   # 12
        LayerSpec("maxpool", "pool2", kernel=2, stride=2),                    # 13
        LayerSpec("dropout", "head_drop", drop_prob=drop_prob),               # 14
    ]
    pooled = image_size // 4
    fan_in = pooled * pooled * (2 * w)
    layers.append(LayerSpec("dense", "head", fan_in=fan_in, fan_out=n_classes))
    layers.append(LayerSpec("softmax", "probs"))
    graph = NetworkGraph(layers, {}, (image_size, image_size, in_channels), TRAINING)
    init_params(graph, seed)
    graph.validate()
    return graph


def cast_params_f64(graph: NetworkGraph) -> NetworkGraph:
    """Widened copy whose forward/backward run in float64 (oracle use)."""
    g = graph.copy()
    for name, t in g.params.items():
        g.params[name] = Tensor(t.floats().astype(np.float64), "f32")
    return g
