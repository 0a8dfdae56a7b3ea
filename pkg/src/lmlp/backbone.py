"""U-shaped token backbone: patch embedding, [time | text | image] token
assembly, a stack of blocks whose encoder/decoder halves are tied by additive
long skip connections, and a linear head mapping image tokens back to pixels.

The network predicts the noise component of its input, so input and output
share the B x C x H x W layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import LayerNorm, LinearLayer, make_block, preset_config, trunc_normal
from .tensor import Tensor

SKIP_MODES = ("none", "first_stage", "second_stage")
HEAD_KINDS = ("linear", "conv3x3_postprocess")


class ConfigError(ValueError):
    """Inconsistent backbone configuration."""


# ---------------------------------------------------------------------------
# patch rearrangement
# ---------------------------------------------------------------------------

def patchify(img: Tensor, patch: int) -> Tensor:
    """B x C x H x W -> B x (H/p)(W/p) x p*p*C, patches in row-major order."""
    if img.ndim != 4:
        raise T.ShapeError(f"expected an image batch of rank 4, got {img.shape}")
    batch, channels, height, width = img.shape
    if patch < 1 or height % patch or width % patch:
        raise T.ShapeError(f"extents {height}x{width} not divisible by patch {patch}")
    rows, cols = height // patch, width // patch
    x = T.reshape(img, (batch, channels, rows, patch, cols, patch))
    x = T.permute(x, (0, 2, 4, 1, 3, 5))
    return T.reshape(x, (batch, rows * cols, channels * patch * patch))


def unpatchify(tokens: Tensor, side: int, channels: int, patch: int) -> Tensor:
    """Inverse of patchify for square images."""
    if tokens.ndim != 3:
        raise T.ShapeError(f"expected tokens of rank 3, got {tokens.shape}")
    rows = side // patch
    batch = tokens.shape[0]
    if tokens.shape[1] != rows * rows or tokens.shape[2] != channels * patch * patch:
        raise T.ShapeError(f"token shape {tokens.shape} does not fit side {side}, "
                           f"channels {channels}, patch {patch}")
    x = T.reshape(tokens, (batch, rows, rows, channels, patch, patch))
    x = T.permute(x, (0, 3, 1, 4, 2, 5))
    return T.reshape(x, (batch, channels, side, side))


def sinusoidal_encoding(t: np.ndarray, dim: int) -> np.ndarray:
    """(B,) integer steps -> (B, dim): sin at geometric frequencies, then cos."""
    if dim % 2:
        raise T.ShapeError("sinusoidal encoding needs an even dimension")
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


# ---------------------------------------------------------------------------
# configuration and token bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackboneConfig:
    image_side: int = 8
    in_channels: int = 1
    patch: int = 2
    embed_dim: int = 64
    depth: int = 4
    text_tokens: int = 4
    vocab_size: int = 16          # rows of the text embedding table, id 0 = null
    preset: str = "F2"
    mlp_scale: float = 4.0
    skip_mode: str = "second_stage"
    head_kind: str = "linear"
    num_timesteps: int = 1000

    @property
    def image_tokens(self) -> int:
        return (self.image_side // self.patch) ** 2

    @property
    def seq_len(self) -> int:
        return self.image_tokens + self.text_tokens + 1

    def validate(self) -> None:
        if self.patch < 1 or self.image_side % self.patch:
            raise ConfigError(f"image_side {self.image_side} not divisible by patch {self.patch}")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ConfigError("embed_dim must be even (sinusoidal time encoding)")
        if self.depth < 1:
            raise ConfigError("depth must be at least 1")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"unknown skip_mode {self.skip_mode!r}")
        if self.skip_mode != "none" and self.depth < 2:
            raise ConfigError("skip connections need depth >= 2")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"unknown head_kind {self.head_kind!r}")
        if self.text_tokens < 0 or self.in_channels < 1 or self.vocab_size < 1:
            raise ConfigError("text_tokens, in_channels and vocab_size must be positive")
        if self.num_timesteps < 1:
            raise ConfigError("num_timesteps must be positive")


@dataclass
class TokenSequence:
    """B x L x D tokens plus the index ranges of the three modalities."""

    tensor: Tensor
    text_tokens: int

    @property
    def time_range(self) -> tuple[int, int]:
        return (0, 1)

    @property
    def text_range(self) -> tuple[int, int]:
        return (1, 1 + self.text_tokens)

    @property
    def image_range(self) -> tuple[int, int]:
        return (1 + self.text_tokens, self.tensor.shape[1])


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class UlMlpModel:
    """Token backbone with floor(depth/2) encoder/decoder skip pairs."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator, dtype=np.float64):
        config.validate()
        self.config = config
        self.dtype = dtype
        patch_in = config.patch * config.patch * config.in_channels
        dim = config.embed_dim
        self.patch_embed = LinearLayer(patch_in, dim, rng, dtype)
        self.time_embed = LinearLayer(dim, dim, rng, dtype)
        self.text_embed = Tensor(trunc_normal(rng, (config.vocab_size, dim)).astype(dtype),
                                 requires_grad=True)
        block_cfg = preset_config(config.preset, config.seq_len, dim, config.mlp_scale)
        self.blocks = [make_block(block_cfg, rng, dtype) for _ in range(config.depth)]
        self.final_norm = LayerNorm(dim, dtype)
        self.head = LinearLayer(dim, patch_in, rng, dtype)
        if config.head_kind == "conv3x3_postprocess":
            c = config.in_channels
            self.head_conv_weight = Tensor(trunc_normal(rng, (c, 9 * c)).astype(dtype),
                                           requires_grad=True)
            self.head_conv_bias = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        else:
            self.head_conv_weight = None
            self.head_conv_bias = None

    # -- embedding ----------------------------------------------------------
    def _check_timesteps(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t))
        if not np.issubdtype(t.dtype, np.integer):
            raise T.UsageError("timesteps must be integers")
        if t.size and (t.min() < 0 or t.max() >= self.config.num_timesteps):
            raise T.UsageError(
                f"timestep out of range [0, {self.config.num_timesteps})"
            )
        return t

    def embed_timestep(self, t) -> Tensor:
        """(B,) steps -> (B, 1, D) time tokens."""
        t = self._check_timesteps(t)
        enc = sinusoidal_encoding(t, self.config.embed_dim).astype(self.dtype)
        out = self.time_embed(Tensor(enc))
        return T.reshape(out, (t.size, 1, self.config.embed_dim))

    def embed_text(self, text_ids: np.ndarray) -> Tensor:
        text_ids = np.asarray(text_ids)
        if text_ids.ndim != 2 or text_ids.shape[1] != self.config.text_tokens:
            raise T.ShapeError(
                f"text ids must be (B, {self.config.text_tokens}), got {text_ids.shape}"
            )
        return T.gather_rows(self.text_embed, text_ids)

    def assemble_tokens(self, img_tokens: Tensor, text_ids: np.ndarray, t) -> TokenSequence:
        """Concatenate [time | text | image] embeddings into one sequence."""
        time_tok = self.embed_timestep(t)
        text_tok = self.embed_text(text_ids)
        joined = T.concat([time_tok, text_tok, img_tokens], axis=1)
        return TokenSequence(joined, self.config.text_tokens)

    # -- forward ------------------------------------------------------------
    def run_blocks(self, x: Tensor) -> Tensor:
        depth = self.config.depth
        mode = self.config.skip_mode
        half = depth // 2
        stored: dict[int, Tensor] = {}
        for index, block in enumerate(self.blocks):
            skip = None
            source = depth - 1 - index
            if mode != "none" and source < half and index >= depth - half:
                skip = stored.pop(source)
            x = block.forward(x, skip=skip, skip_stage=mode)
            if mode != "none" and index < half:
                stored[index] = x
        return x

    def output_head(self, tokens: TokenSequence) -> Tensor:
        """Project image-range tokens back to B x C x H x W."""
        cfg = self.config
        start, stop = tokens.image_range
        img = T.narrow(tokens.tensor, 1, start, stop - start)
        pixels = self.head(img)
        out = unpatchify(pixels, cfg.image_side, cfg.in_channels, cfg.patch)
        if self.head_conv_weight is not None:
            out = self._conv3x3(out)
        return out

    def _conv3x3(self, img: Tensor) -> Tensor:
        side = self.config.image_side
        padded = T.permute(T.pad2d(img, 1), (0, 2, 3, 1))  # B, H+2, W+2, C
        windows = [
            T.narrow(T.narrow(padded, 1, di, side), 2, dj, side)
            for di in range(3)
            for dj in range(3)
        ]
        stacked = T.concat(windows, axis=-1)  # B, H, W, 9C
        mixed = T.matmul(stacked, T.permute_last_two(self.head_conv_weight))
        mixed = mixed + self.head_conv_bias
        return T.permute(mixed, (0, 3, 1, 2))

    def forward(self, x_t: Tensor, text_ids: np.ndarray, t) -> Tensor:
        """Predict the noise component of ``x_t`` given text ids and timesteps."""
        cfg = self.config
        if x_t.ndim != 4 or x_t.shape[1:] != (cfg.in_channels, cfg.image_side, cfg.image_side):
            raise T.ShapeError(
                f"expected input of shape (B, {cfg.in_channels}, {cfg.image_side}, "
                f"{cfg.image_side}), got {x_t.shape}"
            )
        img_tokens = self.patch_embed(patchify(x_t, cfg.patch))
        t = np.atleast_1d(np.asarray(t))
        if t.size == 1 and x_t.shape[0] > 1:
            t = np.full(x_t.shape[0], t[0])
        seq = self.assemble_tokens(img_tokens, text_ids, t)
        mixed = self.run_blocks(seq.tensor)
        normed = self.final_norm(mixed)
        return self.output_head(TokenSequence(normed, cfg.text_tokens))

    __call__ = forward

    # -- parameters ---------------------------------------------------------
    def named_parameters(self):
        yield from self.patch_embed.named_parameters("patch_embed.")
        yield from self.time_embed.named_parameters("time_embed.")
        yield "text_embed.table", self.text_embed
        for index, block in enumerate(self.blocks):
            yield from block.named_parameters(f"blocks.{index}.")
        yield from self.final_norm.named_parameters("final_norm.")
        yield from self.head.named_parameters("head.")
        if self.head_conv_weight is not None:
            yield "head_conv.weight", self.head_conv_weight
            yield "head_conv.bias", self.head_conv_bias

    def parameters(self):
        for _, p in self.named_parameters():
            yield p


def build_model(config: BackboneConfig, seed: int, dtype=np.float64) -> UlMlpModel:
    """Deterministic model construction: same seed, bitwise-identical weights."""
    return UlMlpModel(config, np.random.default_rng(seed), dtype)


__all__ = [
    "BackboneConfig",
    "ConfigError",
    "HEAD_KINDS",
    "SKIP_MODES",
    "TokenSequence",
    "UlMlpModel",
    "build_model",
    "patchify",
    "sinusoidal_encoding",
    "unpatchify",
]
