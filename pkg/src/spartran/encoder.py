"""Single-link channel encoder.

A measurement is cut into non-overlapping windows of three time steps; each
step contributes (real, imaginary, magnitude), giving 9-dimensional tokens.
Tokens are linearly projected to the latent width, offset by learned per-slot
positional embeddings, passed through pre-norm transformer blocks with pad
masking, and mean-pooled over the unmasked tokens into one latent vector z.

The latent width never depends on the number of taps or antennas, so the
same encoder serves every link of any system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channels import ChannelSample

TOKEN_WINDOW = 3
FEATURES_PER_STEP = 3
ATTN_MASK_BIAS = -1e30


@dataclass(frozen=True)
class EncoderConfig:
    n_latent: int = 512
    n_heads: int = 8
    n_blocks: int = 1
    n_hidden: int = 1024
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.n_latent % self.n_heads != 0:
            raise ValueError(
                f"n_latent {self.n_latent} not divisible by n_heads {self.n_heads}"
            )
        if min(self.n_latent, self.n_heads, self.n_blocks, self.n_hidden) < 1:
            raise ValueError("encoder dimensions must be >= 1")

    @property
    def token_dim(self) -> int:
        return TOKEN_WINDOW * FEATURES_PER_STEP


@dataclass
class TokenSequence:
    """T x 9 token matrix plus a mask flagging tokens that contain padding."""

    tokens: np.ndarray
    pad_mask: np.ndarray

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]


def num_tokens_for(num_taps: int) -> int:
    return math.ceil(num_taps / TOKEN_WINDOW)


def tokenize(sample: ChannelSample) -> TokenSequence:
    """Pack a link measurement into ceil(M/3) tokens of 9 features.

    Each step contributes [re, im, magnitude]; steps beyond M are zero and
    any token containing such padding is flagged in ``pad_mask``.
    """
    m = sample.num_taps
    t = num_tokens_for(m)
    steps = np.zeros((t * TOKEN_WINDOW, FEATURES_PER_STEP))
    steps[:m, 0] = sample.re
    steps[:m, 1] = sample.im
    steps[:m, 2] = sample.magnitude
    pad_mask = np.zeros(t, dtype=bool)
    if m % TOKEN_WINDOW != 0:
        pad_mask[-1] = True
    return TokenSequence(tokens=steps.reshape(t, -1), pad_mask=pad_mask)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder_params(
    cfg: EncoderConfig, num_tokens: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Xavier-uniform projections, zero biases, unit layer-norm gains, and
    small-normal positional embeddings, all drawn from ``rng``."""
    d, h = cfg.n_latent, cfg.n_hidden
    params: dict[str, np.ndarray] = {
        "enc.proj_w": _xavier(rng, cfg.token_dim, d),
        "enc.proj_b": np.zeros(d),
        "enc.pos": rng.normal(0.0, 0.02, size=(num_tokens, d)),
    }
    for b in range(cfg.n_blocks):
        p = f"enc.blk{b}."
        params[p + "ln1_g"] = np.ones(d)
        params[p + "ln1_b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[p + "attn_" + name] = _xavier(rng, d, d)
            params[p + "attn_b" + name[1]] = np.zeros(d)
        params[p + "ln2_g"] = np.ones(d)
        params[p + "ln2_b"] = np.zeros(d)
        params[p + "ff_w1"] = _xavier(rng, d, h)
        params[p + "ff_b1"] = np.zeros(h)
        params[p + "ff_w2"] = _xavier(rng, h, d)
        params[p + "ff_b2"] = np.zeros(d)
    return params


def _attention(x: Tensor, params: Mapping[str, Tensor], prefix: str, cfg: EncoderConfig, mask_bias: np.ndarray) -> Tensor:
    d = cfg.n_latent
    dh = d // cfg.n_heads
    scale = 1.0 / math.sqrt(dh)
    q = ad.matmul(x, params[prefix + "attn_wq"]) + params[prefix + "attn_bq"]
    k = ad.matmul(x, params[prefix + "attn_wk"]) + params[prefix + "attn_bk"]
    v = ad.matmul(x, params[prefix + "attn_wv"]) + params[prefix + "attn_bv"]
    heads = []
    for h in range(cfg.n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), scale) + Tensor(mask_bias)
        heads.append(ad.matmul(ad.softmax(scores), vh))
    joined = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
    return ad.matmul(joined, params[prefix + "attn_wo"]) + params[prefix + "attn_bo"]


def encode(params: Mapping[str, Tensor], tokens: TokenSequence, cfg: EncoderConfig) -> Tensor:
    """Run the encoder and return the pooled latent vector z (n_latent,).

    Pad-masked tokens receive an additive bias of -1e30 on their attention
    logits (their weights underflow to exactly zero) and weight zero in the
    mean pool, so padded content cannot influence z.
    """
    t = tokens.num_tokens
    x = ad.matmul(Tensor(tokens.tokens), params["enc.proj_w"]) + params["enc.proj_b"]
    x = x + params["enc.pos"]

    mask_bias = np.zeros((t, t))
    mask_bias[:, tokens.pad_mask] = ATTN_MASK_BIAS

    for b in range(cfg.n_blocks):
        p = f"enc.blk{b}."
        normed = ad.layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        x = x + _attention(normed, params, p, cfg, mask_bias)
        normed = ad.layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"])
        hidden = ad.leaky_relu(
            ad.matmul(normed, params[p + "ff_w1"]) + params[p + "ff_b1"], cfg.leaky_slope
        )
        x = x + (ad.matmul(hidden, params[p + "ff_w2"]) + params[p + "ff_b2"])

    live = ~tokens.pad_mask
    count = int(live.sum())
    if count > 0:
        weights = live.astype(np.float64) / count
    else:
        weights = np.full(t, 1.0 / t)  # fully padded input: pool everything
    return ad.matmul(Tensor(weights), x)
