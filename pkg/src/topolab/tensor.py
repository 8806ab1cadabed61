"""Dense float64 tensors with reverse-mode automatic differentiation.

Just enough engine for the two reference CNNs and the spatial losses:
every op records an entry on a global tape as it executes, so the tape is
topologically ordered by construction. ``backward`` sweeps the tape in
reverse from a scalar loss and accumulates dLoss/dNode into ``.grad`` of
every reachable tensor that requires gradients.

Convolution is cross-correlation (no kernel flip), the usual deep-learning
convention. All kernels are pure given their inputs and use fixed reduction
orders, so forward values and gradients are bitwise reproducible in
single-threaded mode.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class Tensor:
    """n-dimensional float64 value with a same-shape gradient slot.

    The gradient array is materialized lazily: it reads as zeros until a
    backward pass deposits into it, and ``zero_grad`` simply drops it.
    """

    __slots__ = ("data", "_grad", "requires_grad", "op_tag")

    def __init__(self, data, requires_grad: bool = False, op_tag: str = "leaf"):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self._grad = None
        self.requires_grad = requires_grad
        self.op_tag = op_tag

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op_tag}, requires_grad={self.requires_grad})"


class TapeEntry:
    __slots__ = ("out", "parents", "backward_fn", "tag")

    def __init__(self, out, parents, backward_fn, tag):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.tag = tag


class Tape:
    """Ordered record of executed ops; topological by construction."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_tape = Tape()
_grad_enabled = True
_allocator_tuned = False


def tune_allocator() -> None:
    """Keep large buffers in glibc free lists instead of mmap.

    The tape holds every intermediate alive until the step ends, so each
    step would otherwise allocate its big arrays as fresh mmaps and pay a
    page-fault per touched page. Raising the mmap/trim thresholds lets
    malloc recycle the buffers; observed ~40% step-time reduction. No-op
    on non-glibc platforms.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except Exception:
        pass


def tape() -> Tape:
    return _tape


def clear_tape() -> None:
    _tape.clear()


@contextmanager
def no_grad():
    """Disable tape recording (eval-mode forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def make_op(
    out_data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    tag: str,
) -> Tensor:
    """Wrap an op result, recording it on the tape when grads are live.

    ``backward_fn`` maps the output gradient to one gradient array per
    parent (None for parents that need none). Returned arrays must be
    freshly allocated, never views of the incoming gradient. Modules with
    fused losses (the spatial penalties) register through here.
    """
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs, op_tag=tag)
    if needs:
        _tape.record(TapeEntry(out, tuple(parents), backward_fn, tag))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dNode into .grad of every reachable tensor.

    The loss must be scalar. Repeated calls without a grad reset add up.
    Each tape entry is applied at most once per call.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    nodes: dict[int, Tensor] = {id(loss): loss}
    for entry in reversed(_tape.entries):
        g = flow.get(id(entry.out))
        if g is None:
            continue
        partials = entry.backward_fn(g)
        for parent, pg in zip(entry.parents, partials):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in flow:
                flow[pid] = flow[pid] + pg
            else:
                flow[pid] = pg
                nodes[pid] = parent
    for pid, g in flow.items():
        node = nodes[pid]
        if node.requires_grad:
            node._grad = g if node._grad is None else node._grad + g


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return make_op(a.data + b.data, (a, b), lambda g: (g.copy(), g.copy()), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op(c * x.data, (x,), lambda g: (c * g,), "scale")


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return make_op(
        np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return make_op(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),), "relu")


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose2d expects a matrix, got shape {x.shape}")
    return make_op(x.data.T.copy(), (x,), lambda g: (g.T.copy(),), "transpose2d")


# ---------------------------------------------------------------------------
# network layers
# ---------------------------------------------------------------------------


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    channels_last: bool = False,
    activation: Optional[str] = None,
) -> Tensor:
    """3x3 cross-correlation with same-padding 1, stride 1.

    x: (N, C, H, W), kernel: (F, C, 3, 3), bias: (F,) -> (N, F, H, W).
    With ``channels_last`` the activation layout is (N, H, W, C) in and
    (N, H, W, F) out, which keeps the im2col gather and scatter on
    contiguous channel runs. ``activation="relu"`` clamps in place on the
    GEMM output, sparing a full extra memory pass per layer.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input/kernel, got {x.shape} and {kernel.shape}")
    if activation not in (None, "relu"):
        raise ValueError(f"unsupported fused activation {activation!r}")
    if channels_last:
        n, h, w, c = x.shape
    else:
        n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d kernel must be 3x3, got {kh}x{kw}")
    if ck != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    if bias.shape != (f,):
        raise ShapeError(f"conv2d bias must have shape ({f},), got {bias.shape}")

    xp = np.zeros((n, h + 2, w + 2, c), dtype=np.float64)
    xp[:, 1 : 1 + h, 1 : 1 + w, :] = x.data if channels_last else x.data.transpose(0, 2, 3, 1)
    # (N, H, W, C, 3, 3) windows, reordered so each im2col row is
    # (ku, kv, C) with the channel run contiguous
    windows = sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, 9 * c)
    wmat = kernel.data.transpose(2, 3, 1, 0).reshape(9 * c, f)
    out_mat = cols @ wmat
    out_mat += bias.data[None, :]
    if activation == "relu":
        np.maximum(out_mat, 0.0, out=out_mat)
    out = out_mat.reshape(n, h, w, f)
    if not channels_last:
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    input_needs_grad = x.requires_grad

    def backward_fn(g):
        gmat = (g if channels_last else g.transpose(0, 2, 3, 1)).reshape(n * h * w, f)
        if activation == "relu":
            gmat = gmat * (out_mat > 0)
        gw = (cols.T @ gmat).reshape(3, 3, c, f).transpose(3, 2, 0, 1).copy()
        gb = gmat.sum(axis=0)
        if not input_needs_grad:
            return None, gw, gb  # first-layer case: images carry no gradient
        gcols = (gmat @ wmat.T).reshape(n, h, w, 3, 3, c)
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gxp[:, i : i + h, j : j + w, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, 1 : 1 + h, 1 : 1 + w, :]
        gx = np.ascontiguousarray(gx if channels_last else gx.transpose(0, 3, 1, 2))
        return gx, gw, gb

    return make_op(out, (x, kernel, bias), backward_fn, "conv2d")


def maxpool2x2(x: Tensor, channels_last: bool = False) -> Tensor:
    """2x2 max pooling, stride 2. Ties go to the first element in row-major
    window order, so gradients are deterministic."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2x2 expects 4-d input, got {x.shape}")
    if channels_last:
        n, h, w, c = x.shape
    else:
        n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2x2 needs spatial extent >= 2, got {h}x{w}")
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 requires even spatial extents, got {h}x{w}")
    hh, wh = h // 2, w // 2

    if channels_last:
        v = x.data.reshape(n, hh, 2, wh, 2, c)
        quads = (v[:, :, 0, :, 0, :], v[:, :, 0, :, 1, :],
                 v[:, :, 1, :, 0, :], v[:, :, 1, :, 1, :])
    else:
        v = x.data.reshape(n, c, hh, 2, wh, 2)
        quads = (v[:, :, :, 0, :, 0], v[:, :, :, 0, :, 1],
                 v[:, :, :, 1, :, 0], v[:, :, :, 1, :, 1])
    a, b, cc, d = quads
    # window elements in row-major order; >= comparisons keep the first
    # maximal element so tie-broken gradients stay deterministic
    ab = a >= b
    m1 = np.where(ab, a, b)
    cd = cc >= d
    m2 = np.where(cd, cc, d)
    top = m1 >= m2
    out = np.where(top, m1, m2)

    def backward_fn(g):
        if channels_last:
            gx = np.zeros((n, h, w, c), dtype=np.float64)
            gv = gx.reshape(n, hh, 2, wh, 2, c)
            slots = (gv[:, :, 0, :, 0, :], gv[:, :, 0, :, 1, :],
                     gv[:, :, 1, :, 0, :], gv[:, :, 1, :, 1, :])
        else:
            gx = np.zeros((n, c, h, w), dtype=np.float64)
            gv = gx.reshape(n, c, hh, 2, wh, 2)
            slots = (gv[:, :, :, 0, :, 0], gv[:, :, :, 0, :, 1],
                     gv[:, :, :, 1, :, 0], gv[:, :, :, 1, :, 1])
        g1 = g * top
        g2 = g - g1
        slots[0][...] = g1 * ab
        slots[1][...] = g1 * ~ab
        slots[2][...] = g2 * cd
        slots[3][...] = g2 * ~cd
        return (gx,)

    return make_op(out, (x,), backward_fn, "maxpool2x2")


def global_avg_pool(x: Tensor, channels_last: bool = False) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean per feature map."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-d input, got {x.shape}")
    if channels_last:
        n, h, w, c = x.shape

        def backward_fn(g):
            return (np.broadcast_to(g[:, None, None, :] / (h * w), (n, h, w, c)).copy(),)

        return make_op(x.data.mean(axis=(1, 2)), (x,), backward_fn, "global_avg_pool")

    n, c, h, w = x.shape

    def backward_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return make_op(x.data.mean(axis=(2, 3)), (x,), backward_fn, "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x: (N, D) @ weight: (D, K) + bias: (K,) -> (N, K)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"linear expects matrices, got {x.shape} and {weight.shape}")
    n, d = x.shape
    dw, k = weight.shape
    if d != dw:
        raise ShapeError(f"linear dimension mismatch: input {d} vs weight {dw}")
    if bias.shape != (k,):
        raise ShapeError(f"linear bias must have shape ({k},), got {bias.shape}")
    xd, wd = x.data, weight.data

    def backward_fn(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return make_op(xd @ wd + bias.data, (x, weight, bias), backward_fn, "linear")


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train_mode: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    channels_last: bool = False,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics and updates the running
    buffers in place (biased variance throughout); eval mode uses the
    running statistics and contributes no statistics gradients.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects 4-d input, got {x.shape}")
    if channels_last:
        n, h, w, c = x.shape
        axes = (0, 1, 2)
        expand = (None, None, None, slice(None))
    else:
        n, c, h, w = x.shape
        axes = (0, 2, 3)
        expand = (None, slice(None), None, None)
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d affine params must have shape ({c},)")

    if train_mode:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[expand]) * invstd[expand]
    out = gamma.data[expand] * xhat + beta.data[expand]
    m = n * h * w

    def backward_fn(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        if train_mode:
            gx = (
                gamma.data[expand] * invstd[expand] / m
                * (m * g - xhat * ggamma[expand] - gbeta[expand])
            )
        else:
            gx = g * gamma.data[expand] * invstd[expand]
        return gx, ggamma, gbeta

    return make_op(out, (x, gamma, beta), backward_fn, "batchnorm2d")


def dropout(x: Tensor, rate: float, train_mode: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: train mode scales survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return make_op(x.data.copy(), (x,), lambda g: (g,), "dropout")
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    return make_op(x.data * factor, (x,), lambda g: (g * factor,), "dropout")


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logit_target)."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, K) logits, got {logits.shape}")
    n, k = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ShapeError(f"targets must have shape ({n},), got {targets.shape}")
    if targets.min() < 0 or targets.max() >= k:
        raise ValueError(f"target index out of range [0, {k})")
    targets = targets.astype(np.intp)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), targets].mean()

    def backward_fn(g):
        grad = np.exp(logp)
        grad[np.arange(n), targets] -= 1.0
        return (grad * (float(np.reshape(g, -1)[0]) / n),)

    return make_op(np.asarray(loss), (logits,), backward_fn, "softmax_cross_entropy")
