"""Dual text/image cross-attention and mask-encoded cross-attention.

Queries come from latent features ``x`` (m x D_model); keys and values come
from text and image prompt tokens (n x D_ctx). The image projections start
as copies of the text projections, and the text projections are frozen.

Two public forward ops share one kernel, :func:`gated_cross_attention`,
which multiplies the queries by a per-position gate before each branch:

* dual attention: both gates are 1 and the image branch is scaled by
  ``lam``;
* masked attention: the text gate is ``1 - MA`` and the image gate ``MA``.

A zero gate makes the logits zero, so that branch returns the plain mean of
its value rows at that position.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ValidationError
from .mask_ops import check_binary

WEIGHT_NAMES = ("w_q", "w_kt", "w_vt", "w_ki", "w_vi")
TEXT_WEIGHTS = ("w_kt", "w_vt")


@dataclass
class AdapterWeights:
    w_q: np.ndarray  # (D_model, d_k)
    w_kt: np.ndarray  # (D_ctx, d_k)
    w_vt: np.ndarray
    w_ki: np.ndarray
    w_vi: np.ndarray
    lam: float = 1.0
    heads: int = 1
    text_frozen: bool = False

    @classmethod
    def init(cls, d_model, d_ctx, d_k, rng, heads=1, lam=1.0, dtype=np.float64):
        def draw(fan_in):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, d_k)).astype(dtype)

        w = cls(draw(d_model), draw(d_ctx), draw(d_ctx), draw(d_ctx), draw(d_ctx), lam=lam, heads=heads)
        w.validate()
        return w

    @property
    def d_k(self):
        return self.w_q.shape[1]

    def arrays(self):
        return {name: getattr(self, name) for name in WEIGHT_NAMES}

    def frozen_names(self):
        return set(TEXT_WEIGHTS) if self.text_frozen else set()

    def validate(self):
        d_k = self.w_q.shape[1]
        ctx = self.w_kt.shape[0]
        for name in WEIGHT_NAMES[1:]:
            arr = getattr(self, name)
            if arr.shape != (ctx, d_k):
                raise ValidationError(f"{name} has shape {arr.shape}, expected ({ctx}, {d_k})")
        for name, arr in self.arrays().items():
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} contains non-finite values")
        if self.heads < 1 or d_k % self.heads:
            raise ConfigurationError(f"key width {d_k} is not divisible into {self.heads} heads")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")


def init_image_weights_from_text(w: AdapterWeights) -> AdapterWeights:
    """Copy the text key/value projections into the image ones and freeze the text side."""
    return replace(w, w_ki=w.w_kt.copy(), w_vi=w.w_vt.copy(), text_frozen=True)


def softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _split_heads(x, heads):
    *lead, n, d = x.shape
    return np.moveaxis(x.reshape(*lead, n, heads, d // heads), -2, -3)


def _merge_heads(x):
    x = np.moveaxis(x, -3, -2)
    *lead, n, h, dh = x.shape
    return x.reshape(*lead, n, h * dh)


def attend(q, k, v, heads=1):
    """Scaled dot-product attention, softmax over key tokens, scale 1/sqrt(head dim).

    Returns ``(out, cache)``.
    """
    qh, kh, vh = (_split_heads(a, heads) for a in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    probs = softmax((qh @ np.swapaxes(kh, -1, -2)) * scale)
    return _merge_heads(probs @ vh), (qh, kh, vh, probs, scale, heads)


def attend_backward(cache, d_out):
    qh, kh, vh, probs, scale, heads = cache
    doh = _split_heads(d_out, heads)
    d_probs = doh @ np.swapaxes(vh, -1, -2)
    d_v = np.swapaxes(probs, -1, -2) @ doh
    d_logits = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True)) * scale
    d_q = d_logits @ kh
    d_k = np.swapaxes(d_logits, -1, -2) @ qh
    return _merge_heads(d_q), _merge_heads(d_k), _merge_heads(d_v)


def _sum_to(grad, shape):
    """Reduce a broadcast weight gradient back to the weight's own shape."""
    return grad.reshape(-1, *shape).sum(axis=0)


def gated_cross_attention(x, text, image, w: AdapterWeights, text_gate, image_gate, image_weight):
    """Forward kernel shared by the dual and masked attention ops.

    ``x`` is (..., m, D_model); ``text``/``image`` are (..., n, D_ctx); the
    gates are (..., m) and ``image_weight`` is a scalar or (...,) array.
    Returns ``(out, cache)`` with ``out`` of shape (..., m, d_k).
    """
    q = x @ w.w_q
    tg = np.asarray(text_gate, dtype=x.dtype)[..., None]
    ig = np.asarray(image_gate, dtype=x.dtype)[..., None]
    iw = np.asarray(image_weight, dtype=x.dtype)[..., None, None]
    kt, vt = text @ w.w_kt, text @ w.w_vt
    ki, vi = image @ w.w_ki, image @ w.w_vi
    out_t, cache_t = attend(tg * q, kt, vt, w.heads)
    out_i, cache_i = attend(ig * q, ki, vi, w.heads)
    out = out_t + iw * out_i
    return out, (x, text, image, w, q, tg, ig, iw, out_i, cache_t, cache_i)


def gated_cross_attention_backward(cache, d_out):
    """Gradients w.r.t. ``x``, ``text``, ``image`` and every adapter weight.

    Returns ``(d_x, d_text, d_image, d_weights)`` where ``d_weights`` maps
    weight names to arrays. Gradients for frozen weights are still computed;
    the optimizer decides whether to apply them.
    """
    x, text, image, w, q, tg, ig, iw, out_i, cache_t, cache_i = cache
    dqt, dkt, dvt = attend_backward(cache_t, d_out)
    dqi, dki, dvi = attend_backward(cache_i, iw * d_out)
    dq = tg * dqt + ig * dqi
    grads = {
        "w_q": _sum_to(np.swapaxes(x, -1, -2) @ dq, w.w_q.shape),
        "w_kt": _sum_to(np.swapaxes(text, -1, -2) @ dkt, w.w_kt.shape),
        "w_vt": _sum_to(np.swapaxes(text, -1, -2) @ dvt, w.w_vt.shape),
        "w_ki": _sum_to(np.swapaxes(image, -1, -2) @ dki, w.w_ki.shape),
        "w_vi": _sum_to(np.swapaxes(image, -1, -2) @ dvi, w.w_vi.shape),
    }
    d_x = dq @ w.w_q.T
    d_text = dkt @ w.w_kt.T + dvt @ w.w_vt.T
    d_image = dki @ w.w_ki.T + dvi @ w.w_vi.T
    return d_x, d_text, d_image, grads


def _check_inputs(x, text, image, w):
    w.validate()
    for name, arr in (("queries", x), ("text", text), ("image", image)):
        if arr.ndim != 2:
            raise ValidationError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError(f"{name} contains non-finite values")
    if x.shape[1] != w.w_q.shape[0]:
        raise ValidationError(f"queries have width {x.shape[1]}, w_q expects {w.w_q.shape[0]}")
    for name, arr in (("text", text), ("image", image)):
        if arr.shape[0] < 1 or arr.shape[1] != w.w_kt.shape[0]:
            raise ValidationError(f"{name} tokens {arr.shape} incompatible with D_ctx {w.w_kt.shape[0]}")


def cross_attention(x, tokens, w_q, w_k, w_v, heads=1):
    """Plain single-prompt cross-attention ``softmax(xWq (cWk)^T / sqrt(d)) cWv``."""
    out, _ = attend(x @ w_q, tokens @ w_k, tokens @ w_v, heads)
    return out


def dual_cross_attention(queries, text, image, w: AdapterWeights, lam=None) -> np.ndarray:
    """Text attention plus ``lam`` times image attention over the same queries."""
    x, text, image = (np.asarray(a, dtype=np.float64) for a in (queries, text, image))
    lam = w.lam if lam is None else lam
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    _check_inputs(x, text, image, w)
    ones = np.ones(x.shape[0])
    out, _ = gated_cross_attention(x, text, image, w, ones, ones, lam)
    return out


def _flatten_queries(queries, latent_mask):
    queries = np.asarray(queries, dtype=np.float64)
    ma = check_binary(latent_mask, "latent mask")
    if queries.ndim == 3:
        if queries.shape[:2] != ma.shape:
            raise ValidationError(f"query grid {queries.shape[:2]} != latent mask {ma.shape}")
        queries = queries.reshape(-1, queries.shape[2])
    elif queries.ndim != 2 or queries.shape[0] != ma.size:
        raise ValidationError(f"{np.shape(queries)[0]} queries cannot pair with a {ma.shape} latent mask")
    return queries, ma.reshape(-1).astype(np.float64)


def masked_cross_attention(queries, latent_mask, text, image, w: AdapterWeights) -> np.ndarray:
    """Region-split attention: ``(1 - MA) * Q`` attends text, ``MA * Q`` attends image.

    ``queries`` is either an (h', w', D_model) grid or an (h'*w', D_model)
    matrix in row-major grid order. The two branch outputs are summed at
    every position.
    """
    x, ma = _flatten_queries(queries, latent_mask)
    text, image = (np.asarray(a, dtype=np.float64) for a in (text, image))
    _check_inputs(x, text, image, w)
    out, _ = gated_cross_attention(x, text, image, w, 1.0 - ma, ma, 1.0)
    return out
