"""Dense real tensors with reverse-mode automatic differentiation.

The operation set is the minimal closure needed by small convolutional
classifiers and input-gradient attacks: elementwise arithmetic, dense and
convolutional layers, pooling, log-softmax, and the two classification
losses. Data lives in row-major numpy buffers, images in (N, C, H, W)
order so the spectral code can walk channels contiguously.

float32 is the working precision for training. Build tensors from float64
arrays when running bit-tight gradient checks; every op preserves the wider
dtype. No op mutates a graph-recorded tensor in place; parameter updates
happen between steps, after the step's graph has been discarded.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus an optional closure-based backward graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        # One cheap reduction screens for nan/inf; only a non-finite sum
        # (which true overflow of finite values can also produce) pays for
        # the elementwise check.
        with np.errstate(over="ignore", invalid="ignore"):
            probe = arr.sum()
        if not np.isfinite(probe) and not np.isfinite(arr).all():
            raise ValueError("tensor data must be finite (got nan/inf)")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._grad_fn = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        """Same buffer, cut from the graph."""
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def backward(self):
        """Backpropagate from a scalar. Each graph node is visited once."""
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._grad_fn is not None:
                node._grad_fn(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if isinstance(like, Tensor) else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, grad_fn):
    # Op results skip the constructor's finite screen: non-finite values can
    # only enter a graph through overflow of finite inputs, they propagate
    # through every op here (including max/clip), and the training loop
    # checks the scalar loss and the updated parameters explicitly. Leaf
    # tensors made by callers still go through the screened constructor.
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._grad_fn = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _accum(t, g):
    # Rebinding (never +=) keeps shared grad buffers safe to alias.
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


def gradients(loss, wrt):
    """Backward from `loss`, return grads for `wrt` (zeros if unreached)."""
    loss.backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in wrt]


# -- elementwise and linear ops ------------------------------------------


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(
            f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None

    def grad_fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), grad_fn)


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(
            f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None

    def grad_fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), grad_fn)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def grad_fn(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _node(data, (a, b), grad_fn)


def relu(x):
    x = _as_tensor(x)
    data = np.maximum(x.data, 0)

    def grad_fn(g):
        _accum(x, g * (x.data > 0))

    return _node(data, (x,), grad_fn)


def reshape(x, shape):
    x = _as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(
            f"reshape: cannot view {x.data.shape} as {shape}"
        ) from None

    def grad_fn(g):
        _accum(x, g.reshape(x.data.shape))

    return _node(data, (x,), grad_fn)


def flatten(x):
    """Collapse all but the leading (batch) axis."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"flatten expects a batch dimension, got {x.data.shape}")
    return reshape(x, (x.data.shape[0], -1))


def tensor_sum(x):
    x = _as_tensor(x)
    data = np.asarray(x.data.sum())

    def grad_fn(g):
        _accum(x, np.full_like(x.data, g))

    return _node(data, (x,), grad_fn)


def tensor_mean(x):
    x = _as_tensor(x)
    data = np.asarray(x.data.mean())
    n = x.data.size

    def grad_fn(g):
        _accum(x, np.full_like(x.data, g / n))

    return _node(data, (x,), grad_fn)


# -- structured layers ---------------------------------------------------


def _im2col(xp, kh, kw, stride, oh, ow):
    """Window matrix (N*oh*ow, C*kh*kw) of a padded (N,C,H,W) array."""
    n = xp.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, oh, ow, kh, kw)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, -1)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation of (N,C,H,W) with (F,C,kh,kw), GEMM-backed."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if bias is not None:
        bias = _as_tensor(bias)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects (N,C,H,W) and (F,C,kh,kw), got {x.data.shape} "
            f"and {weight.data.shape}"
        )
    n, c, h, w = x.data.shape
    f, cw, kh, kw = weight.data.shape
    if c != cw:
        raise ShapeError(
            f"conv2d: input has {c} channels but kernel expects {cw}"
        )
    if bias is not None and bias.data.shape != (f,):
        raise ShapeError(
            f"conv2d: bias shape {bias.data.shape} does not match {f} filters"
        )
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    if padding:
        xp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    wmat = weight.data.reshape(f, c * kh * kw).T
    out = cols @ wmat
    out = np.ascontiguousarray(
        out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    )
    if bias is not None:
        out += bias.data.reshape(1, f, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)
    # The window matrix is only needed again for the weight gradient; while
    # parameters are frozen (attack inner loops) dropping it here keeps the
    # per-forward footprint down.
    saved_cols = cols if weight.requires_grad else None
    del cols

    def grad_fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        if weight.requires_grad:
            c_ = saved_cols
            if c_ is None:
                c_ = _im2col(xp, kh, kw, stride, oh, ow)
            _accum(weight, (gmat.T @ c_).reshape(f, c, kh, kw))
        if bias is not None and bias.requires_grad:
            _accum(bias, gmat.sum(axis=0))
        if x.requires_grad:
            # Scatter per-window gradients back through the im2col map:
            # one contiguous (kh,kw)-leading rearrangement, then kh*kw
            # strided block adds.
            gcols = gmat @ wmat.T
            gwin = np.ascontiguousarray(
                gcols.reshape(n, oh, ow, c, kh, kw).transpose(4, 5, 0, 3, 1, 2)
            )
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :,
                        :,
                        i : i + stride * (oh - 1) + 1 : stride,
                        j : j + stride * (ow - 1) + 1 : stride,
                    ] += gwin[i, j]
            if padding:
                gx = gxp[:, :, padding : padding + h, padding : padding + w]
            else:
                gx = gxp
            _accum(x, gx)

    return _node(out, parents, grad_fn)


def avgpool2d(x, k):
    """Non-overlapping k x k mean pooling; spatial dims must divide by k."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"avgpool2d expects (N,C,H,W), got {x.data.shape}")
    n, c, h, w = x.data.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(
            f"avgpool2d: window {k} does not tile spatial dims {h}x{w}"
        )
    if k == 2:
        # four strided adds beat the generic reduction machinery
        q = x.data
        data = (
            q[:, :, 0::2, 0::2] + q[:, :, 0::2, 1::2]
            + q[:, :, 1::2, 0::2] + q[:, :, 1::2, 1::2]
        ) * 0.25
    else:
        # two single-axis sums beat one strided multi-axis mean
        r = x.data.reshape(n, c, h // k, k, w // k, k)
        data = r.sum(axis=5).sum(axis=3) * (1.0 / (k * k))

    def grad_fn(g):
        gq = g * (1.0 / (k * k))
        gx = np.empty((n, c, h, w), dtype=gq.dtype)
        for di in range(k):
            for dj in range(k):
                gx[:, :, di::k, dj::k] = gq
        _accum(x, gx)

    return _node(data, (x,), grad_fn)


# -- classification heads ------------------------------------------------


def _log_softmax_data(z, axis):
    # max subtraction keeps exp() in range for any logit magnitude
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def log_softmax(x, axis=-1):
    x = _as_tensor(x)
    data = _log_softmax_data(x.data, axis)

    def grad_fn(g):
        p = np.exp(data)
        _accum(x, g - p * g.sum(axis=axis, keepdims=True))

    return _node(data, (x,), grad_fn)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under the logits."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(
            f"cross_entropy expects (B,K) logits, got {logits.data.shape}"
        )
    b, k = logits.data.shape
    if labels.shape != (b,):
        raise ShapeError(
            f"cross_entropy: {b} logit rows but labels shape {labels.shape}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise TypeError("cross_entropy labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(
            f"cross_entropy: label out of range [0, {k}): "
            f"min={labels.min()}, max={labels.max()}"
        )
    ls = _log_softmax_data(logits.data, -1)
    rows = np.arange(b)
    data = np.asarray(-ls[rows, labels].mean())

    def grad_fn(g):
        p = np.exp(ls)
        p[rows, labels] -= 1
        _accum(logits, (g / b) * p)

    return _node(data, (logits,), grad_fn)


def kl_divergence(p_logits, q_logits):
    """Mean KL(softmax(p) || softmax(q)) over rows, differentiable in both."""
    p_logits, q_logits = _as_tensor(p_logits), _as_tensor(q_logits)
    if p_logits.data.shape != q_logits.data.shape or p_logits.data.ndim != 2:
        raise ShapeError(
            f"kl_divergence expects matching (B,K) logits, got "
            f"{p_logits.data.shape} and {q_logits.data.shape}"
        )
    b = p_logits.data.shape[0]
    lp = _log_softmax_data(p_logits.data, -1)
    lq = _log_softmax_data(q_logits.data, -1)
    sp = np.exp(lp)
    rows = (sp * (lp - lq)).sum(axis=-1)
    data = np.asarray(rows.mean())

    def grad_fn(g):
        if q_logits.requires_grad:
            _accum(q_logits, (g / b) * (np.exp(lq) - sp))
        if p_logits.requires_grad:
            _accum(p_logits, (g / b) * sp * ((lp - lq) - rows[:, None]))

    return _node(data, (p_logits, q_logits), grad_fn)
