"""Differentiable layers: conv2d, max-pool, ReLU, linear, masked GAP,
block softmax cross-entropy, and MSE."""

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, ValidationError
from .autograd import Tensor


@dataclass(frozen=True)
class BlockLayout:
    """Contiguous, non-overlapping index ranges over the output layer,
    one block per language."""

    blocks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple((int(b), int(e)) for b, e in self.blocks))
        if not self.blocks:
            raise ValidationError("layout needs at least one block")
        cursor = 0
        for begin, end in self.blocks:
            if begin != cursor or end <= begin:
                raise ValidationError(
                    f"blocks must be contiguous and non-empty, got {self.blocks}"
                )
            cursor = end

    @classmethod
    def single(cls, n: int) -> "BlockLayout":
        return cls(blocks=((0, n),))

    @property
    def total(self) -> int:
        return self.blocks[-1][1]

    def block_of(self, index: int) -> int:
        for lang, (begin, end) in enumerate(self.blocks):
            if begin <= index < end:
                return lang
        raise ValidationError(f"index {index} outside layout [0, {self.total})")


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _im2col(xp: np.ndarray, kf, kt, sf, st, of, ot) -> np.ndarray:
    b, c, _, _ = xp.shape
    patches = np.empty((b, c, kf, kt, of, ot), dtype=xp.dtype)
    for i in range(kf):
        for j in range(kt):
            patches[:, :, i, j] = xp[:, :, i : i + sf * of : sf, j : j + st * ot : st]
    return patches.reshape(b, c * kf * kt, of * ot)


def conv2d(x: Tensor, w: Tensor, stride=(1, 1), pad=(0, 0)) -> Tensor:
    """2-D cross-correlation of x[B,C,F,T] with w[O,C,kF,kT]; no bias."""
    sf, st = _pair(stride)
    pf, pt = _pair(pad)
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeError(f"conv2d wants 4-D input and weight, got {x.shape} and {w.shape}")
    b, c, f, t = x.shape
    o, cw, kf, kt = w.shape
    if cw != c:
        raise ShapeError(f"conv2d channels mismatch: input {x.shape} vs weight {w.shape}")
    if f + 2 * pf < kf or t + 2 * pt < kt:
        raise ShapeError(f"conv2d kernel {w.shape} larger than padded input {x.shape}")
    of = (f + 2 * pf - kf) // sf + 1
    ot = (t + 2 * pt - kt) // st + 1
    xp = np.pad(x.value, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    cols = _im2col(xp, kf, kt, sf, st, of, ot)
    w2 = w.value.reshape(o, c * kf * kt)
    out_val = np.matmul(w2, cols).reshape(b, o, of, ot)
    out = Tensor(out_val, (x, w))

    def backward(g):
        g2 = g.reshape(b, o, of * ot)
        w._accumulate(np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape))
        dcols = np.matmul(w2.T, g2)
        dpatches = dcols.reshape(b, c, kf, kt, of, ot)
        dxp = np.zeros_like(xp)
        for i in range(kf):
            for j in range(kt):
                dxp[:, :, i : i + sf * of : sf, j : j + st * ot : st] += dpatches[:, :, i, j]
        x._accumulate(dxp[:, :, pf : pf + f, pt : pt + t])

    out._backward = backward
    return out


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2, ceil mode (partial edge windows allowed)."""
    b, c, f, t = x.shape
    of, ot = (f + 1) // 2, (t + 1) // 2
    pad_f, pad_t = 2 * of - f, 2 * ot - t
    xp = np.pad(x.value, ((0, 0), (0, 0), (0, pad_f), (0, pad_t)), constant_values=-np.inf)
    windows = (
        xp.reshape(b, c, of, 2, ot, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, of, ot, 4)
    )
    arg = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0], (x,))

    def backward(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dxp = (
            dwin.reshape(b, c, of, ot, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, 2 * of, 2 * ot)
        )
        x._accumulate(dxp[:, :, :f, :t])

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    out = Tensor(np.where(mask, x.value, 0.0), (x,))

    def backward(g):
        x._accumulate(g * mask)

    out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """x[B,D] @ w[D,N] + bias[N]."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear shapes incompatible: {x.shape} @ {w.shape}")
    if bias.shape != (w.shape[1],):
        raise ShapeError(f"linear bias shape {bias.shape} vs weight {w.shape}")
    out = Tensor(x.value @ w.value + bias.value, (x, w, bias))

    def backward(g):
        x._accumulate(g @ w.value.T)
        w._accumulate(x.value.T @ g)
        bias._accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def gap_masked(x: Tensor, valid_t) -> Tensor:
    """Mean of x[B,C,F,T] over frequency and the first valid_t[b] time steps."""
    b, c, f, t = x.shape
    valid = np.asarray(valid_t, dtype=np.int64)
    if valid.shape != (b,):
        raise ShapeError(f"valid_t shape {valid.shape}, expected ({b},)")
    if (valid < 1).any() or (valid > t).any():
        raise ValidationError(f"valid_t entries must lie in [1, {t}], got {valid.tolist()}")
    mask = (np.arange(t)[None, :] < valid[:, None]).astype(x.value.dtype)
    denom = (f * valid).astype(x.value.dtype)
    out_val = np.einsum("bcft,bt->bc", x.value, mask) / denom[:, None]
    out = Tensor(out_val, (x,))

    def backward(g):
        per_cell = (g / denom[:, None])[:, :, None, None] * mask[:, None, None, :]
        x._accumulate(np.broadcast_to(per_cell, x.value.shape))

    out._backward = backward
    return out


def block_softmax(activations: np.ndarray, layout: BlockLayout, lang) -> np.ndarray:
    """Softmax over each item's active language block; zero elsewhere.

    Plain array function (the differentiable path is the fused
    block_cross_entropy)."""
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != layout.total:
        raise ShapeError(f"activations shape {a.shape} vs layout total {layout.total}")
    lang = np.asarray(lang, dtype=np.int64)
    out = np.zeros_like(a)
    for b in range(a.shape[0]):
        begin, end = layout.blocks[lang[b]]
        z = a[b, begin:end]
        e = np.exp(z - z.max())
        out[b, begin:end] = e / e.sum()
    return out


def block_cross_entropy(logits: Tensor, layout: BlockLayout, lang, targets) -> Tensor:
    """Mean cross-entropy of each item's target under its active block's
    softmax, computed in fused log-sum-exp form."""
    b, n = logits.shape
    if n != layout.total:
        raise ShapeError(f"logits width {n} vs layout total {layout.total}")
    lang = np.asarray(lang, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    losses = np.empty(b, dtype=logits.value.dtype)
    dlogits = np.zeros_like(logits.value)
    for i in range(b):
        begin, end = layout.blocks[lang[i]]
        if not begin <= targets[i] < end:
            raise ValidationError(
                f"target {targets[i]} outside language {lang[i]} block [{begin}, {end})"
            )
        z = logits.value[i, begin:end]
        m = z.max()
        e = np.exp(z - m)
        s = e.sum()
        losses[i] = m + np.log(s) - logits.value[i, targets[i]]
        dlogits[i, begin:end] = e / s
        dlogits[i, targets[i]] -= 1.0
    out = Tensor(losses.mean(), (logits,))

    def backward(g):
        logits._accumulate(dlogits * (g / b))

    out._backward = backward
    return out


def mse(e1: Tensor, e2: Tensor) -> Tensor:
    """Mean squared difference over all coordinates (per-pair mean of
    (1/d)*||e1-e2||^2 when inputs are batched)."""
    if e1.shape != e2.shape:
        raise ShapeError(f"mse shapes differ: {e1.shape} vs {e2.shape}")
    diff = e1.value - e2.value
    n = diff.size
    out = Tensor(np.mean(diff * diff), (e1, e2))

    def backward(g):
        d = diff * (2.0 * g / n)
        e1._accumulate(d)
        e2._accumulate(-d)

    out._backward = backward
    return out
