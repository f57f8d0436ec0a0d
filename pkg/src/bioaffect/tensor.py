"""Reverse-mode differentiation engine for the fixed network zoo.

Dense float64 arrays with a tape of closures: every operation returns a
fresh node that references its inputs and knows how to route the output
gradient back to them. A graph is built per forward pass and released
afterwards; parameter leaves accumulate gradients across backward calls
until explicitly zeroed, which is how minibatches are averaged.

Convolutions use cross-correlation semantics (no kernel flip). The
vectorized implementations here are checked against direct-loop
references in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, CorruptionError, GraphError, ShapeError

__all__ = [
    "Tensor",
    "PoolIndices",
    "as_tensor",
    "conv1d_valid",
    "conv1d_full",
    "conv2d_valid",
    "maxpool1d",
    "maxpool2d",
    "unpool1d",
    "linear",
    "add_channel_bias",
    "relu",
    "concat",
    "flatten",
    "reshape",
    "mse_loss",
]


class Tensor:
    """One node of a single-use computation graph.

    `data` is float64 and C-contiguous (row-major). Leaves created with
    `requires_grad=True` keep a grad buffer that accumulates across
    backward passes; interior nodes get a scratch grad only while a
    backward pass runs over them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backprop = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Propagate d(self)/d(everything) through the recorded graph.

        Only defined for scalar outputs. Gradients are accumulated into
        every node reachable from here, so leaf grads add up across
        calls until zeroed.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {tuple(self.data.shape)}"
            )
        order = _toposort(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backprop is not None:
                node._backprop()

    # Scalar arithmetic, used to combine loss terms.

    def __add__(self, other):
        other = as_tensor(other)
        if self.data.shape != other.data.shape:
            raise ShapeError(
                f"add: shapes {self.data.shape} and {other.data.shape} differ"
            )
        out = _node(self.data + other.data, (self, other))

        def backprop():
            _accumulate(self, out.grad)
            _accumulate(other, out.grad)

        out._backprop = backprop
        return out

    def __mul__(self, scalar):
        c = float(scalar)
        out = _node(self.data * c, (self,))

        def backprop():
            _accumulate(self, c * out.grad)

        out._backprop = backprop
        return out

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    out._parents = parents
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _toposort(root: Tensor) -> list:
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


@dataclass(frozen=True)
class PoolIndices:
    """Per-output-element source position along the pooled length axis."""

    indices: np.ndarray  # int64, same shape as the pooled output
    src_len: int

    def __post_init__(self):
        idx = self.indices
        if idx.size and (idx.min() < 0 or idx.max() >= self.src_len):
            raise CorruptionError(
                f"pool indices out of bounds for source length {self.src_len}"
            )


# --- convolutions ---------------------------------------------------------


# Work threshold above which stride-1 1D convolutions go through the FFT
# path; below it the per-tap matmul loop has less overhead.
_FFT_WORK_THRESHOLD = 50_000


def _conv_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over i of convfull(a[i], b[j, i]) -> (J, La + Lb - 1)."""
    n = a.shape[1] + b.shape[2] - 1
    a_f = np.fft.rfft(a, n)
    b_f = np.fft.rfft(b, n)
    return np.fft.irfft(np.einsum("jif,if->jf", b_f, a_f), n)


def _conv_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """convfull(a[i], b[j]) for every pair -> (I, J, La + Lb - 1)."""
    n = a.shape[1] + b.shape[1] - 1
    a_f = np.fft.rfft(a, n)
    b_f = np.fft.rfft(b, n)
    return np.fft.irfft(a_f[:, None, :] * b_f[None, :, :], n)


def _check_conv1d_args(x: Tensor, kernels: Tensor, stride: int) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"conv1d: input must be (channels, length), got {x.data.shape}")
    if kernels.data.ndim != 3:
        raise ShapeError(
            f"conv1d: kernels must be (out, in, width), got {kernels.data.shape}"
        )
    if kernels.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"conv1d: kernel in-channels (axis 1) = {kernels.data.shape[1]} "
            f"!= input channels (axis 0) = {x.data.shape[0]}"
        )
    if stride < 1:
        raise ShapeError(f"conv1d: stride must be >= 1, got {stride}")


def conv1d_valid(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation: (C_in, L) x (C_out, C_in, K) -> (C_out, L').

    L' = floor((L - K) / stride) + 1. Differentiable with respect to both
    the input and the kernels. Computed as one matmul per kernel tap over
    a strided input slice, which avoids materializing the window tensor.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    _check_conv1d_args(x, kernels, stride)
    w = kernels.data
    xd = x.data
    k_width = w.shape[2]
    length = xd.shape[1]
    if length < k_width:
        raise ShapeError(
            f"conv1d_valid: input length (axis 1) = {length} < kernel width {k_width}"
        )
    n_out = (length - k_width) // stride + 1
    span = (n_out - 1) * stride + 1
    use_fft = stride == 1 and xd.shape[0] * k_width * n_out > _FFT_WORK_THRESHOLD
    if use_fft:
        out_data = _conv_sum(xd, w[:, :, ::-1])[:, k_width - 1 : k_width - 1 + n_out]
    else:
        out_data = np.zeros((w.shape[0], n_out))
        for k in range(k_width):
            out_data += w[:, :, k] @ xd[:, k : k + span : stride]
    out = _node(out_data, (x, kernels))

    def backprop():
        g = out.grad
        if use_fft:
            gx = _conv_sum(g, w.transpose(1, 0, 2))
            gw = _conv_pairs(g[:, ::-1], xd)[:, :, n_out - 1 : n_out - 1 + k_width]
        else:
            gw = np.empty_like(w)
            gx = np.zeros_like(xd)
            for k in range(k_width):
                sl = xd[:, k : k + span : stride]
                gw[:, :, k] = g @ sl.T
                gx[:, k : k + span : stride] += w[:, :, k].T @ g
        _accumulate(kernels, gw)
        _accumulate(x, gx)

    out._backprop = backprop
    return out


def conv1d_full(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Full (transposed) cross-correlation: output length L + K - 1.

    out[o, t] = sum over c, k of x[c, t - k] * kernels[o, c, k]. Only
    stride 1 is supported; this is the adjoint of `conv1d_valid` at
    stride 1 with the kernel in/out axes swapped.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if stride != 1:
        raise ConfigError(f"conv1d_full supports stride 1 only, got {stride}")
    _check_conv1d_args(x, kernels, stride)
    w = kernels.data
    xd = x.data
    k_width = w.shape[2]
    length = xd.shape[1]
    use_fft = xd.shape[0] * k_width * length > _FFT_WORK_THRESHOLD
    if use_fft:
        out_data = _conv_sum(xd, w)
    else:
        out_data = np.zeros((w.shape[0], length + k_width - 1))
        for k in range(k_width):
            out_data[:, k : k + length] += w[:, :, k] @ xd
    out = _node(out_data, (x, kernels))

    def backprop():
        g = out.grad
        if use_fft:
            gx = _conv_sum(g, w[:, :, ::-1].transpose(1, 0, 2))[
                :, k_width - 1 : k_width - 1 + length
            ]
            gw = _conv_pairs(xd[:, ::-1], g).transpose(1, 0, 2)[
                :, :, length - 1 : length - 1 + k_width
            ]
        else:
            gw = np.empty_like(w)
            gx = np.zeros_like(xd)
            for k in range(k_width):
                g_k = g[:, k : k + length]
                gw[:, :, k] = g_k @ xd.T
                gx += w[:, :, k].T @ g_k
        _accumulate(kernels, gw)
        _accumulate(x, gx)

    out._backprop = backprop
    return out


def conv2d_valid(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid 2D cross-correlation: (C_in, H, W) x (C_out, C_in, KH, KW)."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d: input must be (channels, H, W), got {x.data.shape}")
    if kernels.data.ndim != 4:
        raise ShapeError(
            f"conv2d: kernels must be (out, in, KH, KW), got {kernels.data.shape}"
        )
    if kernels.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"conv2d: kernel in-channels (axis 1) = {kernels.data.shape[1]} "
            f"!= input channels (axis 0) = {x.data.shape[0]}"
        )
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    w = kernels.data
    xd = x.data
    kh, kw = w.shape[2], w.shape[3]
    h, wid = xd.shape[1], xd.shape[2]
    if h < kh or wid < kw:
        raise ShapeError(
            f"conv2d_valid: input {h}x{wid} smaller than kernel {kh}x{kw} (axes 1, 2)"
        )
    nh = (h - kh) // stride + 1
    nw = (wid - kw) // stride + 1
    span_h = (nh - 1) * stride + 1
    span_w = (nw - 1) * stride + 1
    c_out, c_in = w.shape[0], w.shape[1]
    out_flat = np.zeros((c_out, nh * nw))
    for a in range(kh):
        for b in range(kw):
            sl = xd[:, a : a + span_h : stride, b : b + span_w : stride]
            out_flat += w[:, :, a, b] @ sl.reshape(c_in, -1)
    out = _node(out_flat.reshape(c_out, nh, nw), (x, kernels))

    def backprop():
        g2 = out.grad.reshape(c_out, -1)
        gw = np.empty_like(w)
        gx = np.zeros_like(xd)
        for a in range(kh):
            for b in range(kw):
                sl = xd[:, a : a + span_h : stride, b : b + span_w : stride]
                gw[:, :, a, b] = g2 @ sl.reshape(c_in, -1).T
                gx[:, a : a + span_h : stride, b : b + span_w : stride] += (
                    w[:, :, a, b].T @ g2
                ).reshape(c_in, nh, nw)
        _accumulate(kernels, gw)
        _accumulate(x, gx)

    out._backprop = backprop
    return out


# --- pooling ---------------------------------------------------------------


def maxpool1d(x: Tensor, window: int, stride: int) -> tuple:
    """Windowed maximum along the length axis; ties go to the lowest index.

    Returns the pooled tensor and the argmax positions needed to undo the
    pooling with `unpool1d`.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"maxpool1d: input must be (channels, length), got {x.data.shape}")
    length = x.data.shape[1]
    if length < window:
        raise ShapeError(
            f"maxpool1d: input length (axis 1) = {length} < window {window}"
        )
    windows = sliding_window_view(x.data, window, axis=1)[:, ::stride, :]
    arg = windows.argmax(axis=2)
    src = arg + stride * np.arange(windows.shape[1], dtype=np.int64)[None, :]
    out_data = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]
    indices = PoolIndices(indices=src, src_len=length)
    out = _node(np.ascontiguousarray(out_data), (x,))
    rows = np.arange(x.data.shape[0])[:, None]

    def backprop():
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, src), out.grad)
        _accumulate(x, gx)

    out._backprop = backprop
    return out, indices


def maxpool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """2D windowed maximum over (H, W); no unpooling counterpart."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2d: input must be (channels, H, W), got {x.data.shape}")
    h, w = x.data.shape[1], x.data.shape[2]
    if h < window or w < window:
        raise ShapeError(f"maxpool2d: input {h}x{w} smaller than window {window}")
    windows = sliding_window_view(x.data, (window, window), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    c, nh, nw = windows.shape[:3]
    flat = windows.reshape(c, nh, nw, window * window)
    arg = flat.argmax(axis=3)
    out_data = np.take_along_axis(flat, arg[:, :, :, None], axis=3)[:, :, :, 0]
    dy, dx = np.divmod(arg, window)
    ys = dy + stride * np.arange(nh, dtype=np.int64)[None, :, None]
    xs = dx + stride * np.arange(nw, dtype=np.int64)[None, None, :]
    out = _node(np.ascontiguousarray(out_data), (x,))
    rows = np.arange(c)[:, None, None]

    def backprop():
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, ys, xs), out.grad)
        _accumulate(x, gx)

    out._backprop = backprop
    return out


def unpool1d(x: Tensor, indices: PoolIndices, target_len: int) -> Tensor:
    """Scatter pooled values back to their recorded argmax positions.

    Positions not covered by any index stay zero. Duplicate indices (only
    possible with overlapping windows) accumulate, so the scatter always
    conserves the input sum.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"unpool1d: input must be (channels, length), got {x.data.shape}")
    if indices.indices.shape != x.data.shape:
        raise GraphError(
            f"unpool1d: stale indices, shape {indices.indices.shape} does not "
            f"match input {x.data.shape}"
        )
    if indices.indices.size and indices.indices.max() >= target_len:
        raise CorruptionError(
            f"unpool1d: recorded index {int(indices.indices.max())} >= target "
            f"length {target_len}"
        )
    src = indices.indices
    rows = np.arange(x.data.shape[0])[:, None]
    out_data = np.zeros((x.data.shape[0], target_len))
    np.add.at(out_data, (rows, src), x.data)
    out = _node(out_data, (x,))

    def backprop():
        _accumulate(x, out.grad[rows, src])

    out._backprop = backprop
    return out


# --- dense / pointwise -----------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: (N,) x (M, N) + (M,) -> (M,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 1 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError(
            f"linear: expected vector/matrix/vector, got {x.data.shape}, "
            f"{weight.data.shape}, {bias.data.shape}"
        )
    if weight.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"linear: weight columns (axis 1) = {weight.data.shape[1]} "
            f"!= input length = {x.data.shape[0]}"
        )
    if weight.data.shape[0] != bias.data.shape[0]:
        raise ShapeError(
            f"linear: weight rows (axis 0) = {weight.data.shape[0]} "
            f"!= bias length = {bias.data.shape[0]}"
        )
    out = _node(weight.data @ x.data + bias.data, (x, weight, bias))

    def backprop():
        g = out.grad
        _accumulate(x, weight.data.T @ g)
        _accumulate(weight, np.outer(g, x.data))
        _accumulate(bias, g)

    out._backprop = backprop
    return out


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add one bias per leading-axis channel, broadcast over trailing axes."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.data.ndim != 1 or bias.data.shape[0] != x.data.shape[0]:
        raise ShapeError(
            f"add_channel_bias: bias length {bias.data.shape} != channels "
            f"(axis 0) = {x.data.shape[0]}"
        )
    shaped = bias.data.reshape((-1,) + (1,) * (x.data.ndim - 1))
    out = _node(x.data + shaped, (x, bias))

    def backprop():
        _accumulate(x, out.grad)
        trailing = tuple(range(1, x.data.ndim))
        _accumulate(bias, out.grad.sum(axis=trailing) if trailing else out.grad)

    out._backprop = backprop
    return out


def relu(x: Tensor) -> Tensor:
    """Clamp negatives to zero; subgradient at exactly 0 is 0."""
    x = as_tensor(x)
    mask = x.data > 0
    out = _node(np.where(mask, x.data, 0.0), (x,))

    def backprop():
        _accumulate(x, out.grad * mask)

    out._backprop = backprop
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    out = _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backprop():
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(start, stop)
            _accumulate(p, out.grad[tuple(sl)])

    out._backprop = backprop
    return out


def flatten(x: Tensor) -> Tensor:
    """Row-major flatten to a vector."""
    x = as_tensor(x)
    out = _node(x.data.reshape(-1).copy(), (x,))

    def backprop():
        _accumulate(x, out.grad.reshape(x.data.shape))

    out._backprop = backprop
    return out


def reshape(x: Tensor, shape) -> Tensor:
    """Row-major reshape; element count must be preserved."""
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.data.shape} as {shape}")
    out = _node(x.data.reshape(shape).copy(), (x,))

    def backprop():
        _accumulate(x, out.grad.reshape(x.data.shape))

    out._backprop = backprop
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of elementwise squared differences; scalar output."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss: shapes {pred.data.shape} and {target.data.shape} differ"
        )
    diff = pred.data - target.data
    out = _node(np.array(np.mean(diff * diff)), (pred, target))
    scale = 2.0 / diff.size

    def backprop():
        g = out.grad * scale * diff
        _accumulate(pred, g)
        _accumulate(target, -g)

    out._backprop = backprop
    return out
