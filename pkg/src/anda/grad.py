"""Dense tensors and reverse-mode differentiation over a fixed op set.

Supports exactly the graphs the desk-scale classifiers and the
translation-augmented attack objective need: matmul, 2-D convolution
(same padding, odd kernels), bias add, relu, average pooling, flatten,
and whole-pixel translation. All arithmetic is double precision, and
forward plus gradient evaluation are bit-deterministic for fixed inputs
and weights. The op inventory is closed; this is not a general autodiff.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .augment import pixel_shift, shift_pixels
from .errors import ConfigError, ModelError

_MAX_RANK = 4


def as_array(value):
    """Coerce to a float64 ndarray (accepts Tensor, ndarray, or nested lists)."""
    if isinstance(value, Tensor):
        return value.array
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """Immutable dense value: finite float64 data with rank at most 4."""

    __slots__ = ("array",)

    def __init__(self, data, shape=None):
        arr = data.array if isinstance(data, Tensor) else np.asarray(data, dtype=np.float64)
        if shape is not None:
            try:
                arr = arr.reshape(tuple(shape))
            except ValueError as exc:
                raise ModelError(f"cannot shape {arr.size} values as {tuple(shape)}") from exc
        if arr.ndim > _MAX_RANK:
            raise ModelError(f"tensor rank {arr.ndim} exceeds the supported maximum {_MAX_RANK}")
        if not np.all(np.isfinite(arr)):
            raise ModelError("tensor contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "array", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def shape(self):
        return self.array.shape

    @property
    def data(self):
        """Flat view of the underlying values."""
        return self.array.reshape(-1)

    def __repr__(self):
        return f"Tensor(shape={self.array.shape})"


class _Node:
    __slots__ = ("op", "inputs", "value", "meta")

    def __init__(self, op, inputs=(), value=None, meta=None):
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self.meta = meta if meta is not None else {}


class Graph:
    """Topologically ordered op DAG with embedded weights.

    Nodes are appended through the add_* methods, which validate shapes
    at construction time; the node added last is the graph output.
    Instances are never mutated afterwards (training builds a fresh graph
    per weight update), so concurrent evaluation is safe.
    """

    def __init__(self, input_shape):
        shape = tuple(int(s) for s in input_shape)
        if not shape or len(shape) >= _MAX_RANK or any(s < 1 for s in shape):
            raise ModelError(f"bad graph input shape {shape}")
        self._nodes = []
        self._shapes = []
        self.parameters = []
        self.input_index = self._append(_Node("input"), shape)

    def __len__(self):
        return len(self._nodes)

    @property
    def input_shape(self):
        return self._shapes[self.input_index]

    @property
    def output_index(self):
        return len(self._nodes) - 1

    @property
    def output_shape(self):
        return self._shapes[self.output_index]

    def node_shape(self, index):
        return self._shapes[index]

    def _append(self, node, shape):
        self._nodes.append(node)
        self._shapes.append(tuple(int(s) for s in shape))
        return len(self._nodes) - 1

    def _shape_of(self, index):
        if not 0 <= index < len(self._nodes):
            raise ModelError(f"node index {index} out of range")
        return self._shapes[index]

    def add_weight(self, value, name=None):
        arr = np.ascontiguousarray(as_array(value))
        if arr.ndim > _MAX_RANK:
            raise ModelError(f"weight rank {arr.ndim} exceeds the supported maximum {_MAX_RANK}")
        if not np.all(np.isfinite(arr)):
            raise ModelError(f"weight {name or '<unnamed>'} contains non-finite values")
        index = self._append(_Node("weight", value=arr, meta={"name": name}), arr.shape)
        self.parameters.append(index)
        return index

    def add_matmul(self, src, weight):
        xs, ws = self._shape_of(src), self._shape_of(weight)
        index = len(self._nodes)
        if len(xs) != 1 or len(ws) != 2 or ws[1] != xs[0]:
            raise ModelError(f"node {index} (matmul): cannot multiply input {xs} by weight {ws}")
        return self._append(_Node("matmul", (src, weight)), (ws[0],))

    def add_bias(self, src, bias):
        xs, bs = self._shape_of(src), self._shape_of(bias)
        index = len(self._nodes)
        if len(bs) != 1 or len(xs) not in (1, 3) or bs[0] != xs[0]:
            raise ModelError(f"node {index} (bias): bias {bs} does not fit input {xs}")
        return self._append(_Node("bias", (src, bias)), xs)

    def add_relu(self, src):
        return self._append(_Node("relu", (src,)), self._shape_of(src))

    def add_conv2d(self, src, weight):
        xs, ws = self._shape_of(src), self._shape_of(weight)
        index = len(self._nodes)
        ok = len(xs) == 3 and len(ws) == 4 and ws[1] == xs[0] and ws[2] % 2 == 1 and ws[3] % 2 == 1
        if not ok:
            raise ModelError(
                f"node {index} (conv2d): kernel {ws} does not fit input {xs}"
                " (need matching channels and odd kernel sides)"
            )
        return self._append(_Node("conv2d", (src, weight)), (ws[0], xs[1], xs[2]))

    def add_avgpool(self, src, pool=2):
        xs = self._shape_of(src)
        index = len(self._nodes)
        pool = int(pool)
        if len(xs) != 3 or pool < 1 or xs[1] % pool or xs[2] % pool:
            raise ModelError(f"node {index} (avgpool): input {xs} not divisible by pool {pool}")
        return self._append(
            _Node("avgpool", (src,), meta={"pool": pool}), (xs[0], xs[1] // pool, xs[2] // pool)
        )

    def add_flatten(self, src):
        xs = self._shape_of(src)
        return self._append(_Node("flatten", (src,)), (int(np.prod(xs)),))

    def add_translate(self, src, tx, ty):
        xs = self._shape_of(src)
        index = len(self._nodes)
        if len(xs) != 3:
            raise ModelError(f"node {index} (translate): needs a (channels, height, width) input, got {xs}")
        dy, dx = pixel_shift(xs, tx, ty)
        meta = {"tx": float(tx), "ty": float(ty), "dy": dy, "dx": dx}
        return self._append(_Node("translate", (src,), meta=meta), xs)


def _forward_batch(graph, xs):
    values = [None] * len(graph)
    for index, node in enumerate(graph._nodes):
        op = node.op
        if op == "input":
            values[index] = xs
        elif op == "weight":
            values[index] = node.value
        elif op == "matmul":
            x, w = values[node.inputs[0]], values[node.inputs[1]]
            values[index] = x @ w.T
        elif op == "bias":
            x, b = values[node.inputs[0]], values[node.inputs[1]]
            values[index] = x + (b if x.ndim == 2 else b[:, None, None])
        elif op == "relu":
            values[index] = np.maximum(values[node.inputs[0]], 0.0)
        elif op == "conv2d":
            values[index] = _conv_forward(values[node.inputs[0]], values[node.inputs[1]])
        elif op == "avgpool":
            p = node.meta["pool"]
            x = values[node.inputs[0]]
            b, c, h, w = x.shape
            values[index] = x.reshape(b, c, h // p, p, w // p, p).mean(axis=(3, 5))
        elif op == "flatten":
            x = values[node.inputs[0]]
            values[index] = x.reshape(x.shape[0], -1)
        else:  # translate
            values[index] = shift_pixels(values[node.inputs[0]], node.meta["dy"], node.meta["dx"])
    return values


def _output_logits(graph, values, batch):
    out = values[graph.output_index]
    if out.ndim == len(graph.output_shape):
        # output does not depend on the input; broadcast the constant
        out = np.broadcast_to(out, (batch,) + out.shape)
    return out


def _accumulate(grads, index, value):
    grads[index] = value if grads[index] is None else grads[index] + value


def _backward_batch(graph, values, seed):
    grads = [None] * len(graph)
    grads[graph.output_index] = seed
    for index in range(len(graph) - 1, -1, -1):
        g = grads[index]
        node = graph._nodes[index]
        if g is None or node.op in ("input", "weight"):
            continue
        op = node.op
        if op == "matmul":
            xi, wi = node.inputs
            _accumulate(grads, xi, g @ values[wi])
            _accumulate(grads, wi, g.T @ values[xi])
        elif op == "bias":
            xi, bi = node.inputs
            _accumulate(grads, xi, g)
            _accumulate(grads, bi, g.sum(axis=(0,) if g.ndim == 2 else (0, 2, 3)))
        elif op == "relu":
            xi = node.inputs[0]
            _accumulate(grads, xi, g * (values[xi] > 0.0))
        elif op == "conv2d":
            xi, wi = node.inputs
            dx, dw = _conv_backward(values[xi], values[wi], g)
            _accumulate(grads, xi, dx)
            _accumulate(grads, wi, dw)
        elif op == "avgpool":
            p = node.meta["pool"]
            spread = np.repeat(np.repeat(g / (p * p), p, axis=2), p, axis=3)
            _accumulate(grads, node.inputs[0], spread)
        elif op == "flatten":
            xi = node.inputs[0]
            _accumulate(grads, xi, g.reshape(values[xi].shape))
        else:  # translate: the adjoint is the inverse pixel shift
            _accumulate(grads, node.inputs[0], shift_pixels(g, -node.meta["dy"], -node.meta["dx"]))
    return grads


def _im2col(x, kh, kw):
    # (b, c, h, w) -> (b*h*w, c*kh*kw) patch matrix for same (odd) padding
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    b, c, h, w = x.shape
    patches = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return patches.reshape(b * h * w, c * kh * kw)


def _conv_forward(x, w):
    b, _, h, width = x.shape
    f, _, kh, kw = w.shape
    cols = _im2col(x, kh, kw)
    out = cols @ w.reshape(f, -1).T
    return np.ascontiguousarray(out.reshape(b, h, width, f).transpose(0, 3, 1, 2))


def _conv_backward(x, w, g):
    b, c, h, width = x.shape
    f, _, kh, kw = w.shape
    cols = _im2col(x, kh, kw)
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * h * width, f)
    dw = (gmat.T @ cols).reshape(f, c, kh, kw)
    # input gradient: same-padded correlation of g with the flipped,
    # channel-swapped kernel
    flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = _conv_forward(g, flipped)
    return dx, dw


def _as_batch(graph, x):
    arr = as_array(x)
    if arr.shape != graph.input_shape:
        raise ModelError(
            f"node {graph.input_index} (input): expected shape {graph.input_shape}, got {arr.shape}"
        )
    return arr[None]


def forward(graph, x):
    """Run the graph on one input and return its output as a Tensor."""
    values = _forward_batch(graph, _as_batch(graph, x))
    return Tensor(_output_logits(graph, values, 1)[0])


def forward_batch(graph, xs):
    """Run the graph on a stack of inputs (leading batch axis)."""
    xs = as_array(xs)
    if xs.shape[1:] != graph.input_shape:
        raise ModelError(
            f"node {graph.input_index} (input): expected batch of {graph.input_shape}, got {xs.shape}"
        )
    values = _forward_batch(graph, xs)
    return _output_logits(graph, values, xs.shape[0])


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label):
    """Negative log softmax probability of the labeled class."""
    v = as_array(logits).reshape(-1)
    label = int(label)
    if not 0 <= label < v.size:
        raise ModelError(f"label {label} out of range for {v.size} classes")
    return float(-_log_softmax(v[None, :])[0, label])


def _softmax_seed(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(logits.shape[0]), labels] -= 1.0
    return p


def _check_labels(graph, labels, batch):
    if len(graph.output_shape) != 1:
        raise ModelError("graph output must be a logit vector")
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (batch,)).copy()
    k = graph.output_shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ModelError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels


def batch_input_gradients(graph, xs, labels):
    """Per-sample gradient of each sample's own cross-entropy at its input."""
    xs = as_array(xs)
    if xs.shape[1:] != graph.input_shape:
        raise ModelError(
            f"node {graph.input_index} (input): expected batch of {graph.input_shape}, got {xs.shape}"
        )
    labels = _check_labels(graph, labels, xs.shape[0])
    values = _forward_batch(graph, xs)
    logits = _output_logits(graph, values, xs.shape[0])
    seed = _softmax_seed(logits, labels)
    grads = _backward_batch(graph, values, seed)
    gi = grads[graph.input_index]
    return np.zeros_like(xs) if gi is None else gi


def input_gradient(graph, x, label):
    """Gradient of cross_entropy(forward(graph, x), label) with respect to x."""
    g = batch_input_gradients(graph, as_array(x)[None], [int(label)])
    return Tensor(g[0])


def parameter_gradients(graph, xs, labels, label_smoothing=0.0):
    """Mean cross-entropy over a batch and its gradient for every weight node.

    Returns (loss, grads) with grads aligned to graph.parameters order.
    label_smoothing in [0, 1) mixes the one-hot target with the uniform
    distribution, which caps how confident a fitted model can become.
    """
    xs = as_array(xs)
    labels = _check_labels(graph, labels, xs.shape[0])
    if not 0.0 <= label_smoothing < 1.0:
        raise ModelError(f"label_smoothing must lie in [0, 1), got {label_smoothing}")
    values = _forward_batch(graph, xs)
    logits = _output_logits(graph, values, xs.shape[0])
    b, k = logits.shape
    log_q = _log_softmax(logits)
    target = np.full((b, k), label_smoothing / k)
    target[np.arange(b), labels] += 1.0 - label_smoothing
    loss = float(-(target * log_q).sum(axis=1).mean())
    seed = (np.exp(log_q) - target) / b
    grads = _backward_batch(graph, values, seed)
    collected = []
    for index in graph.parameters:
        g = grads[index]
        collected.append(np.zeros_like(graph._nodes[index].value) if g is None else g)
    return loss, collected


def central_difference(f, x, h):
    """Coordinate-wise central difference (f(x+h e) - f(x-h e)) / (2 h).

    f takes an array shaped like x and returns a scalar.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        fp = f(x)
        flat[i] = original - h
        fm = f(x)
        flat[i] = original
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def finite_difference_gradient(graph, x, label, h):
    """Finite-difference oracle for input_gradient."""
    if h <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    arr = as_array(x)
    label = int(label)

    def loss_at(v):
        return cross_entropy(forward(graph, v), label)

    return Tensor(central_difference(loss_at, arr, h))
