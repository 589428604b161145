"""Convolution, pooling, softmax and the smoothed cross-entropy loss."""

import math

import numpy as np

from .tensor import ShapeError, as_tensor, make_node


def same_padding(size, k, stride):
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _batched(x):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected H×W×C or N×H×W×C input, got {x.shape}")


def conv2d(x, kernel, stride=1, padding="same", bias=None):
    """2-D cross-correlation over HWC images (optionally batched on axis 0).

    ``kernel`` is kh×kw×Cin×Cout; no kernel flip. ``bias`` (Cout,) is optional.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (kernel.shape[-1],):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match Cout {kernel.shape[-1]}")
    xd, squeeze = _batched(x)
    kd = kernel.data
    if kd.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be kh×kw×Cin×Cout, got {kd.shape}")
    kh, kw, cin, cout = kd.shape
    n, h, w, c = xd.shape
    if c != cin:
        raise ShapeError(f"conv2d: input channels {c} != kernel Cin {cin} ({x.shape} vs {kd.shape})")
    if stride < 1:
        raise ValueError("conv2d: stride must be positive")
    if padding == "same":
        oh, pt, pb = same_padding(h, kh, stride)
        ow, pl, pr = same_padding(w, kw, stride)
    elif padding == "valid":
        if kh > h or kw > w:
            raise ShapeError(f"conv2d: kernel {kd.shape[:2]} larger than input {(h, w)} in valid mode")
        oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    if pt or pb or pl or pr:
        xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    else:
        xp = xd
    hs, ws = (oh - 1) * stride + 1, (ow - 1) * stride + 1

    cols = np.empty((n, oh, ow, kh, kw, cin), dtype=np.result_type(xd, kd))
    for a in range(kh):
        for b in range(kw):
            cols[:, :, :, a, b, :] = xp[:, a:a + hs:stride, b:b + ws:stride, :]
    cols2 = cols.reshape(n * oh * ow, kh * kw * cin)
    out = cols2 @ kd.reshape(kh * kw * cin, cout)
    if bias is not None:
        out += bias.data
    out = out.reshape(n, oh, ow, cout)

    def back(g):
        g4 = g[None] if squeeze else g
        g2 = g4.reshape(-1, cout)
        gk = (cols2.T @ g2).reshape(kd.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ kd.reshape(-1, cout).T).reshape(n, oh, ow, kh, kw, cin)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for a in range(kh):
                for b in range(kw):
                    gxp[:, a:a + hs:stride, b:b + ws:stride, :] += dcols[:, :, :, a, b, :]
            gx = gxp[:, pt:pt + h, pl:pl + w, :]
            if squeeze:
                gx = gx[0]
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_node(out[0] if squeeze else out, parents, back, "conv2d")


def maxpool2d(x, window, stride):
    """Per-channel max over window×window patches (valid placement).

    Ties go to the first element in row-major scan order, which is also the
    only element that receives gradient.
    """
    x = as_tensor(x)
    xd, squeeze = _batched(x)
    n, h, w, c = xd.shape
    if window > h or window > w:
        raise ShapeError(f"maxpool2d: window {window} exceeds spatial extent {(h, w)}")
    oh, ow = (h - window) // stride + 1, (w - window) // stride + 1
    if window == stride:
        # non-overlapping: gather each window onto a trailing axis, scanned row-major
        crop = xd[:, :oh * window, :ow * window, :]
        win = crop.reshape(n, oh, window, ow, window, c).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(n, oh, ow, c, window * window)
        arg = win.argmax(axis=-1)
        best = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

        def back(g):
            g4 = g[None] if squeeze else g
            gw = np.zeros((n, oh, ow, c, window * window), dtype=g.dtype)
            np.put_along_axis(gw, arg[..., None], g4[..., None], axis=-1)
            gw = gw.reshape(n, oh, ow, c, window, window).transpose(0, 1, 4, 2, 5, 3)
            gx = np.zeros(xd.shape, dtype=g.dtype)
            gx[:, :oh * window, :ow * window, :] = gw.reshape(n, oh * window, ow * window, c)
            return (gx[0] if squeeze else gx,)

        return make_node(best[0] if squeeze else best, (x,), back, "maxpool2d", branch=arg)

    hs, ws = (oh - 1) * stride + 1, (ow - 1) * stride + 1
    best = None
    arg = np.zeros((n, oh, ow, c), dtype=np.int64)
    for a in range(window):
        for b in range(window):
            patch = xd[:, a:a + hs:stride, b:b + ws:stride, :]
            if best is None:
                best = patch.copy()
                continue
            better = patch > best
            best = np.where(better, patch, best)
            arg = np.where(better, a * window + b, arg)

    def back(g):
        g4 = g[None] if squeeze else g
        gx = np.zeros(xd.shape, dtype=g.dtype)
        for a in range(window):
            for b in range(window):
                hit = arg == a * window + b
                gx[:, a:a + hs:stride, b:b + ws:stride, :] += g4 * hit
        return (gx[0] if squeeze else gx,)

    return make_node(best[0] if squeeze else best, (x,), back, "maxpool2d", branch=arg)


def _axes(axes, ndim):
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(sorted({a % ndim for a in axes}))
    if not axes:
        raise ValueError("softmax: axis set must be non-empty")
    return axes


def softmax(a, over=-1):
    """Exp-normalize jointly over the axes in ``over`` (max-subtracted)."""
    a = as_tensor(a)
    axes = _axes(over, a.ndim)
    z = a.data - a.data.max(axis=axes, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axes, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axes, keepdims=True)),)

    return make_node(y, (a,), back, "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def back(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return make_node(y, (a,), back, "log_softmax")


def smoothed_cross_entropy(logits, target, smoothing=1.0):
    """Cross-entropy against ``smoothing·onehot(target) + (1−smoothing)/V``.

    ``logits`` is (..., V); ``target`` is an int or int array of shape (...).
    Returns per-position losses with shape (...).
    """
    logits = as_tensor(logits)
    if not 0.0 < smoothing <= 1.0:
        raise ValueError(f"smoothing must be in (0, 1], got {smoothing}")
    v = logits.shape[-1]
    target = np.asarray(target)
    if target.shape != logits.shape[:-1]:
        raise ShapeError(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= v):
        raise IndexError(f"target index out of range for {v} classes")
    x = logits.data
    z = x - x.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    q = np.full(x.shape, (1.0 - smoothing) / v, dtype=x.dtype)
    np.put_along_axis(q, target[..., None], smoothing + (1.0 - smoothing) / v, axis=-1)
    loss = -(q * logp).sum(axis=-1)

    def back(g):
        return ((np.exp(logp) - q) * np.asarray(g)[..., None],)

    return make_node(loss, (logits,), back, "smoothed_cross_entropy")
