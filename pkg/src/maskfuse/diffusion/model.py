"""Toy noise-prediction network with mask-encoded cross-attention blocks.

Layout, for a latent grid of m = h' x w' cells::

    image tokens = [compress](project_with_bits(ref_patches, keep_bits))  (or learned null tokens)
    h = x W_in + b_in + silu(sinusoid(t) W_t + b_t)
    repeat n_blocks:
        h = h + conv3x3(silu(h + temb W_tb))
        h = h + (gated_cross_attention(h, text, image tokens) W_o) * (1 + temb W_gain)
    eps = h W_out + b_out

All gradients are written by hand; :meth:`Denoiser.backward` mirrors
:meth:`Denoiser.forward` step by step.
"""

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigurationError
from ..patch_encoder import (
    compress_tokens,
    compress_tokens_backward,
    project_with_bits,
    project_with_bits_backward,
)
from ..prompt_adapter import (
    TEXT_WEIGHTS,
    WEIGHT_NAMES,
    AdapterWeights,
    gated_cross_attention,
    gated_cross_attention_backward,
    init_image_weights_from_text,
)
from .autoencoder import ToyAutoencoder


@dataclass
class ModelConfig:
    image_size: int = 16
    channels: int = 3
    patch_size: int = 4
    proj_size: int = 64
    latent_factor: int = 2
    width: int = 64
    key_dim: int = 64
    heads: int = 1
    n_blocks: int = 2
    lam: float = 1.0
    n_text_tokens: int = 4
    compress: bool = False
    compressed_tokens: int = 0  # 0 -> N // 4
    compress_normalize: bool = False
    freeze_text: bool = True

    def validate(self):
        s, p, f = self.image_size, self.patch_size, self.latent_factor
        if s % p:
            raise ConfigurationError(f"image size {s} is not divisible by patch size {p}")
        if f < 1 or f & (f - 1) or s % f:
            raise ConfigurationError(f"latent factor {f} must be a power of two dividing image size {s}")
        if self.key_dim % self.heads:
            raise ConfigurationError(f"key_dim {self.key_dim} is not divisible into {self.heads} heads")
        for name in ("proj_size", "width", "key_dim", "n_blocks", "n_text_tokens", "channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.compress and not 1 <= self.n_compressed < self.n_patches:
            raise ConfigurationError(
                f"compressed token count {self.n_compressed} must lie in [1, {self.n_patches})"
            )
        return self

    @property
    def n_patches(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self):
        return self.patch_size ** 2 * self.channels

    @property
    def n_compressed(self):
        return self.compressed_tokens or self.n_patches // 4

    @property
    def n_image_tokens(self):
        return self.n_compressed if self.compress else self.n_patches

    @property
    def latent_grid(self):
        g = self.image_size // self.latent_factor
        return g, g

    def to_dict(self):
        return asdict(self)


def silu(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x))  # logistic without exp overflow
    return x * s, s


def silu_backward(x, s, d_out):
    return d_out * s * (1.0 + x * (1.0 - s))


def timestep_embedding(t, dim, dtype=np.float64):
    """Sinusoidal embedding: first half sin, second half cos, geometric frequencies."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb.astype(dtype)


_OFFSETS = [(dy, dx) for dy in range(3) for dx in range(3)]


def conv3x3(x, kernel, bias):
    """Same-padded 3x3 conv on (B, H, W, Cin) with kernel (9 * Cin, Cout)."""
    b, h, w, _ = x.shape
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([pad[:, dy:dy + h, dx:dx + w, :] for dy, dx in _OFFSETS], axis=-1)
    return cols @ kernel + bias, cols


def conv3x3_backward(cols, kernel, d_out):
    b, h, w, cout = d_out.shape
    cin = kernel.shape[0] // 9
    d_kernel = cols.reshape(-1, cols.shape[-1]).T @ d_out.reshape(-1, cout)
    d_bias = d_out.reshape(-1, cout).sum(axis=0)
    d_cols = d_out @ kernel.T
    d_pad = np.zeros((b, h + 2, w + 2, cin), dtype=d_out.dtype)
    for k, (dy, dx) in enumerate(_OFFSETS):
        d_pad[:, dy:dy + h, dx:dx + w, :] += d_cols[..., k * cin:(k + 1) * cin]
    return d_pad[:, 1:-1, 1:-1, :], d_kernel, d_bias


def _section(name):
    if name.startswith("cond."):
        return "conditioning"
    if ".attn." in name and not name.endswith(".w_o"):
        return "adapter"
    return "model"


class Denoiser:
    """Noise predictor ``eps_theta(x_t, c, t)`` over toy-autoencoder latents."""

    def __init__(self, config: ModelConfig, seed=0, dtype=np.float32):
        self.config = config.validate()
        self.dtype = np.dtype(dtype)
        self.autoencoder = ToyAutoencoder(config.latent_factor, config.channels)
        self.params = self._init_params(np.random.default_rng(seed))
        self.frozen = set()
        if config.freeze_text:
            for i in range(config.n_blocks):
                self.frozen.update(f"block{i}.attn.{n}" for n in TEXT_WEIGHTS)

    # -- parameters -----------------------------------------------------

    def _init_params(self, rng):
        c = self.config
        cl = self.autoencoder.latent_channels
        wd, dk, ctx = c.width, c.key_dim, c.proj_size

        def normal(shape, std):
            return rng.normal(0.0, std, size=shape)

        p = {
            "cond.proj_w": normal((c.patch_dim, ctx), 1.0 / np.sqrt(c.patch_dim)),
            "cond.proj_b": np.zeros(ctx),
            "cond.null_image": normal((c.n_image_tokens, ctx), 1.0),
        }
        if c.compress:
            # Q Z^T Z grows like N * |Z|^2; start Q small enough that outputs are O(1)
            scale = 1.0 if c.compress_normalize else 1.0 / c.n_patches
            p["cond.compress_q"] = normal((c.n_compressed, ctx), scale / np.sqrt(ctx))
        p.update({
            "time.w": normal((wd, wd), 1.0 / np.sqrt(wd)),
            "time.b": np.zeros(wd),
            "in.w": normal((cl, wd), 1.0 / np.sqrt(cl)),
            "in.b": np.zeros(wd),
        })
        for i in range(c.n_blocks):
            p[f"block{i}.time.w"] = normal((wd, wd), 1.0 / np.sqrt(wd))
            p[f"block{i}.gain.w"] = np.zeros((wd, wd))
            p[f"block{i}.conv.w"] = normal((9 * wd, wd), 0.5 / np.sqrt(9 * wd))
            p[f"block{i}.conv.b"] = np.zeros(wd)
            adapter = init_image_weights_from_text(
                AdapterWeights.init(wd, ctx, dk, rng, heads=c.heads, lam=c.lam)
            )
            for name, arr in adapter.arrays().items():
                p[f"block{i}.attn.{name}"] = arr
            p[f"block{i}.attn.w_o"] = normal((dk, wd), 0.5 / np.sqrt(dk))
        p["out.w"] = normal((wd, cl), 0.1 / np.sqrt(wd))
        p["out.b"] = np.zeros(cl)
        return {k: np.ascontiguousarray(v, dtype=self.dtype) for k, v in p.items()}

    def sections(self):
        return {name: _section(name) for name in self.params}

    def adapter(self, block) -> AdapterWeights:
        """AdapterWeights view sharing storage with ``params``."""
        pre = f"block{block}.attn."
        return AdapterWeights(
            *(self.params[pre + n] for n in WEIGHT_NAMES),
            lam=self.config.lam,
            heads=self.config.heads,
            text_frozen=self.config.freeze_text,
        )

    def astype(self, dtype):
        other = Denoiser.__new__(Denoiser)
        other.config = self.config
        other.dtype = np.dtype(dtype)
        other.autoencoder = self.autoencoder
        other.params = {k: v.astype(dtype) for k, v in self.params.items()}
        other.frozen = set(self.frozen)
        return other

    # -- forward / backward --------------------------------------------

    def image_tokens(self, cond):
        p, c = self.params, self.config
        patches = cond.ref_patches.astype(self.dtype, copy=False)
        z, proj_cache = project_with_bits(patches, cond.keep_bits, p["cond.proj_w"], p["cond.proj_b"])
        zc = z
        if c.compress:
            zc = compress_tokens(z, p["cond.compress_q"], c.compress_normalize)
        null = np.asarray(cond.image_null, dtype=bool)
        tokens = np.where(null[:, None, None], p["cond.null_image"][None], zc)
        return tokens, (patches, proj_cache, z, null)

    def _image_tokens_backward(self, cache, d_tokens, grads):
        c, p = self.config, self.params
        patches, proj_cache, z, null = cache
        grads["cond.null_image"] = d_tokens[null].sum(axis=0)
        d_zc = np.where(null[:, None, None], 0.0, d_tokens).astype(self.dtype)
        d_z = d_zc
        if c.compress:
            d_z, grads["cond.compress_q"] = compress_tokens_backward(
                z, p["cond.compress_q"], d_zc, c.compress_normalize
            )
        _, grads["cond.proj_w"], grads["cond.proj_b"] = project_with_bits_backward(proj_cache, d_z)

    def _gates(self, cond):
        masked = np.asarray(cond.masked, dtype=bool)[:, None]
        ma = np.asarray(cond.latent_mask, dtype=self.dtype)
        text_gate = np.where(masked, 1.0 - ma, 1.0).astype(self.dtype)
        image_gate = np.where(masked, ma, 1.0).astype(self.dtype)
        image_weight = np.where(masked[:, 0], 1.0, self.config.lam).astype(self.dtype)
        return text_gate, image_gate, image_weight

    def forward(self, x_t, t, cond, keep_cache=False):
        p, c = self.params, self.config
        x_t = np.asarray(x_t, dtype=self.dtype)
        b, gh, gw, cl = x_t.shape
        cond.validate(gh * gw)
        m = gh * gw
        text = cond.text.astype(self.dtype, copy=False)
        img, img_cache = self.image_tokens(cond)
        tg, ig, iw = self._gates(cond)

        temb_in = timestep_embedding(t, c.width, self.dtype)
        if temb_in.shape[0] == 1 and b > 1:
            temb_in = np.repeat(temb_in, b, axis=0)
        temb_pre = temb_in @ p["time.w"] + p["time.b"]
        temb, temb_s = silu(temb_pre)
        x = x_t.reshape(b, m, cl)
        h = x @ p["in.w"] + p["in.b"] + temb[:, None, :]
        caches = []
        for i in range(c.n_blocks):
            pre = f"block{i}."
            hb = h + (temb @ p[pre + "time.w"])[:, None, :]
            a, a_s = silu(hb)
            conv, cols = conv3x3(a.reshape(b, gh, gw, -1), p[pre + "conv.w"], p[pre + "conv.b"])
            h1 = h + conv.reshape(b, m, -1)
            att, att_cache = gated_cross_attention(h1, text, img, self.adapter(i), tg, ig, iw)
            u = att @ p[pre + "attn.w_o"]
            gain = 1.0 + temb @ p[pre + "gain.w"]
            caches.append((hb, a_s, cols, att, att_cache, u, gain))
            h = h1 + u * gain[:, None, :]
        eps = (h @ p["out.w"] + p["out.b"]).reshape(b, gh, gw, cl)
        if not keep_cache:
            return eps
        return eps, (x, temb_in, temb_pre, temb_s, caches, h, img_cache, (b, gh, gw, cl))

    def __call__(self, x_t, t, cond):
        return self.forward(x_t, t, cond)

    def backward(self, cache, d_eps):
        """Gradients of ``sum(d_eps * eps)`` for every parameter (frozen ones included)."""
        p, c = self.params, self.config
        x, temb_in, temb_pre, temb_s, caches, h_last, img_cache, (b, gh, gw, cl) = cache
        m = gh * gw
        grads = {}
        d_eps = np.asarray(d_eps, dtype=self.dtype).reshape(b, m, cl)
        grads["out.w"] = h_last.reshape(-1, c.width).T @ d_eps.reshape(-1, cl)
        grads["out.b"] = d_eps.reshape(-1, cl).sum(axis=0)
        dh = d_eps @ p["out.w"].T
        d_img = None
        temb = temb_pre * temb_s
        d_temb = np.zeros_like(temb)
        for i in reversed(range(c.n_blocks)):
            pre = f"block{i}."
            hb, a_s, cols, att, att_cache, u, gain = caches[i]
            d_gain = (dh * u).sum(axis=1)
            grads[pre + "gain.w"] = temb.T @ d_gain
            d_temb += d_gain @ p[pre + "gain.w"].T
            du = dh * gain[:, None, :]
            grads[pre + "attn.w_o"] = att.reshape(-1, att.shape[-1]).T @ du.reshape(-1, c.width)
            d_att = du @ p[pre + "attn.w_o"].T
            d_h1_att, _, d_img_i, d_w = gated_cross_attention_backward(att_cache, d_att)
            for name, g in d_w.items():
                grads[pre + "attn." + name] = g
            d_img = d_img_i if d_img is None else d_img + d_img_i
            d_h1 = dh + d_h1_att
            d_a, grads[pre + "conv.w"], grads[pre + "conv.b"] = conv3x3_backward(
                cols, p[pre + "conv.w"], d_h1.reshape(b, gh, gw, c.width)
            )
            d_hb = silu_backward(hb, a_s, d_a.reshape(b, m, c.width))
            d_tb = d_hb.sum(axis=1)
            grads[pre + "time.w"] = temb.T @ d_tb
            d_temb += d_tb @ p[pre + "time.w"].T
            dh = d_h1 + d_hb
        grads["in.w"] = x.reshape(-1, cl).T @ dh.reshape(-1, c.width)
        grads["in.b"] = dh.reshape(-1, c.width).sum(axis=0)
        d_temb += dh.sum(axis=1)
        d_temb_pre = silu_backward(temb_pre, temb_s, d_temb)
        grads["time.w"] = temb_in.T @ d_temb_pre
        grads["time.b"] = d_temb_pre.sum(axis=0)
        self._image_tokens_backward(img_cache, d_img, grads)
        return {k: np.asarray(v, dtype=self.dtype) for k, v in grads.items()}
