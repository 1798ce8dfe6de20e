"""CNN layer math: forward passes, exact analytic backward passes.

Everything is float32 on NHWC numpy arrays.  Convolution is implemented as
correlation (per channel, summed over input channels, plus a per-filter bias)
via im2col and one GEMM per layer.  Scratch buffers are reused across batches
because this workload is memory-bandwidth-bound, and large fresh allocations
cost a page-zeroing pass.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


class StateError(RuntimeError):
    """Backward invoked without a cached forward pass."""


PROB_FLOOR = 1e-12

_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))  # 2x2 window, row-major


class Scratch(dict):
    """Shape-keyed reusable buffers.

    zero="alloc" zeroes only freshly allocated buffers (for the conv padding
    buffer, whose border is never rewritten), "always" zeroes on every reuse
    (for += accumulators), "never" hands back raw storage."""

    def buf(self, tag: str, shape: tuple, dtype=np.float32, zero: str = "never") -> np.ndarray:
        key = (tag, shape, np.dtype(dtype).str)
        arr = self.get(key)
        if arr is None:
            arr = np.zeros(shape, dtype) if zero != "never" else np.empty(shape, dtype)
            self[key] = arr
        elif zero == "always":
            arr.fill(0)
        return arr


def _kernel_matrix(kernels: np.ndarray) -> np.ndarray:
    # (F,3,3,C) -> (9C, F), rows ordered (di, dj, c) to match im2col columns
    f, kh, kw, c = kernels.shape
    return np.ascontiguousarray(kernels.transpose(1, 2, 3, 0).reshape(kh * kw * c, f))


def _pad_same(x: np.ndarray, scratch: Scratch, tag: str) -> np.ndarray:
    n, h, w, c = x.shape
    xp = scratch.buf(f"{tag}.pad", (n, h + 2, w + 2, c), zero="alloc")
    # borders stay zero across reuses; only the interior is rewritten
    xp[:, 1 : h + 1, 1 : w + 1, :] = x
    return xp


def _im2col(xp: np.ndarray, out_h: int, out_w: int, scratch: Scratch, tag: str) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = scratch.buf(f"{tag}.cols", (n, out_h, out_w, 9 * c))
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, k * c : (k + 1) * c] = xp[:, di : di + out_h, dj : dj + out_w, :]
            k += 1
    return cols


def conv_forward(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray,
    padding: str = "same",
    scratch: Scratch | None = None,
    tag: str = "conv",
) -> tuple[np.ndarray, np.ndarray]:
    """Batched conv: x (N,H,W,C), kernels (F,3,3,C), bias (F,).

    Returns (out (N,H',W',F), cols); cols is needed for the backward pass."""
    if x.ndim != 4 or kernels.ndim != 4 or kernels.shape[1:3] != (3, 3):
        raise ShapeMismatch(f"bad conv shapes x{x.shape} k{kernels.shape}")
    if x.shape[3] != kernels.shape[3]:
        raise ShapeMismatch(f"input channels {x.shape[3]} != kernel channels {kernels.shape[3]}")
    if bias.shape != (kernels.shape[0],):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({kernels.shape[0]},)")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    scratch = scratch if scratch is not None else Scratch()
    n, h, w, c = x.shape
    f = kernels.shape[0]
    if padding == "same":
        xp = _pad_same(x, scratch, tag)
        out_h, out_w = h, w
    else:
        if h < 3 or w < 3:
            raise ShapeMismatch(f"valid conv needs H,W >= 3, got {h}x{w}")
        xp = x
        out_h, out_w = h - 2, w - 2
    cols = _im2col(xp, out_h, out_w, scratch, tag)
    wmat = _kernel_matrix(kernels)
    out = scratch.buf(f"{tag}.out", (n, out_h, out_w, f))
    np.matmul(cols.reshape(-1, 9 * c), wmat, out=out.reshape(-1, f))
    out += bias
    return out, cols


def conv_backward(
    dout: np.ndarray,
    cols: np.ndarray,
    kernels: np.ndarray,
    x_shape: tuple,
    padding: str,
    need_dx: bool,
    scratch: Scratch | None = None,
    tag: str = "conv",
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients for conv_forward: returns (dx or None, dkernels, dbias)."""
    scratch = scratch if scratch is not None else Scratch()
    n, h, w, c = x_shape
    f = kernels.shape[0]
    out_h, out_w = dout.shape[1], dout.shape[2]
    dflat = dout.reshape(-1, f)
    dbias = dflat.sum(axis=0)
    dwmat = cols.reshape(-1, 9 * c).T @ dflat  # (9C, F)
    dkernels = np.ascontiguousarray(dwmat.reshape(3, 3, c, f).transpose(3, 0, 1, 2))
    if not need_dx:
        return None, dkernels, dbias
    wmat = _kernel_matrix(kernels)
    dcols = scratch.buf(f"{tag}.dcols", (n, out_h, out_w, 9 * c))
    np.matmul(dflat, wmat.T, out=dcols.reshape(-1, 9 * c))
    if padding == "same":
        dxp = scratch.buf(f"{tag}.dpad", (n, h + 2, w + 2, c), zero="always")
    else:
        dxp = scratch.buf(f"{tag}.dpad", (n, h, w, c), zero="always")
    k = 0
    for di in range(3):
        for dj in range(3):
            dxp[:, di : di + out_h, dj : dj + out_w, :] += dcols[:, :, :, k * c : (k + 1) * c]
            k += 1
    dx = dxp[:, 1 : h + 1, 1 : w + 1, :] if padding == "same" else dxp
    return dx, dkernels, dbias


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping 2x2 max pool, floor semantics; x is (N,H,W,C).

    Returns (out (N,H//2,W//2,C), idx uint8) where idx is the argmax position
    within each window in row-major order, first occurrence on ties."""
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ShapeMismatch(f"pooling needs H,W >= 2, got {h}x{w}")
    a = x[:, 0 : h - 1 : 2, 0 : w - 1 : 2, :]
    b = x[:, 0 : h - 1 : 2, 1 : w : 2, :]
    cq = x[:, 1 : h : 2, 0 : w - 1 : 2, :]
    d = x[:, 1 : h : 2, 1 : w : 2, :]
    ab = np.maximum(a, b)
    cd = np.maximum(cq, d)
    out = np.maximum(ab, cd)
    idx = np.where(
        ab >= cd,
        np.where(a >= b, np.uint8(0), np.uint8(1)),
        np.where(cq >= d, np.uint8(2), np.uint8(3)),
    )
    return out, idx


def maxpool_backward(
    dout: np.ndarray,
    idx: np.ndarray,
    x_shape: tuple,
    scratch: Scratch | None = None,
    tag: str = "pool",
) -> np.ndarray:
    scratch = scratch if scratch is not None else Scratch()
    n, h, w, c = x_shape
    odd = (h % 2 != 0) or (w % 2 != 0)
    dx = scratch.buf(f"{tag}.dx", (n, h, w, c), zero="always" if odd else "never")
    for k, (r, s) in enumerate(_OFFSETS):
        view = dx[:, r : h - 1 + r : 2, s : w - 1 + s : 2, :]
        np.multiply(dout, idx == k, out=view)
    return dx


def relu(t: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(t, 0)


def softmax_batch(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_batch(probs: np.ndarray, target_idx: np.ndarray) -> float:
    """Mean -log p[target] with a 1e-12 probability floor."""
    picked = probs[np.arange(len(target_idx)), target_idx]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean(dtype=np.float64))


# ---------------------------------------------------------------------------
# Single-sample operation forms
# ---------------------------------------------------------------------------

def conv2d_forward(
    x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, padding: str = "same"
) -> np.ndarray:
    """Single-image convolution: x (H,W,Cin) -> (H',W',F)."""
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (H,W,C) input, got {x.shape}")
    out, _ = conv_forward(x[None].astype(np.float32, copy=False), kernels, bias, padding)
    return out[0].copy()


def maxpool2d(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-image 2x2 max pool: (H,W,C) -> ((H//2,W//2,C), argmax idx)."""
    if t.ndim != 3:
        raise ShapeMismatch(f"expected (H,W,C) input, got {t.shape}")
    out, idx = maxpool_forward(t[None])
    return out[0].copy(), idx[0].copy()


def fully_connected(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """w @ x + b for x (N,), w (M,N), b (M,)."""
    if x.ndim != 1 or w.ndim != 2 or b.ndim != 1:
        raise ShapeMismatch(f"bad dense ranks x{x.shape} w{w.shape} b{b.shape}")
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"inconsistent dense shapes x{x.shape} w{w.shape} b{b.shape}")
    return w @ x + b


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable exp-normalization; output sums to 1, entries in (0,1)."""
    return softmax_batch(np.asarray(logits, dtype=np.float32))


def cross_entropy(probs: np.ndarray, one_hot_target: np.ndarray) -> float:
    """-log(probs[target]); for batched inputs the mean over rows."""
    p = np.asarray(probs)
    t = np.asarray(one_hot_target)
    if p.shape != t.shape:
        raise ShapeMismatch(f"probs {p.shape} vs target {t.shape}")
    if p.ndim == 1:
        p, t = p[None], t[None]
    return cross_entropy_batch(p, t.argmax(axis=-1))
