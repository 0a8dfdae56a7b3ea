"""Sequence-to-sequence blocks over B x L x D token tensors.

The two-branch lateralized block normalizes and transforms the token axis
(left branch, after permuting the trailing extents) and the channel axis
(right branch) in parallel, merges the branches, projects, and optionally
runs a joint channel MLP. Named presets cover the full design-variant grid
plus token-mixing, gated-MLP and self-attention baselines behind the same
interface, so backbones can swap block families with one config key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class UnsupportedBlockError(ValueError):
    """Requested design-axis combination is not part of the supported grid."""


INIT_STD = 0.02
INIT_CLIP = 2.0  # in units of sigma


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std^2) resampled until every draw lies within +-2 sigma."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > INIT_CLIP
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > INIT_CLIP
    return std * out


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class LinearLayer:
    """y = x @ W^T + b over the trailing extent; leading extents pass through."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64, zero_weight: bool = False):
        weight = np.zeros((out_dim, in_dim)) if zero_weight else trunc_normal(rng, (out_dim, in_dim))
        self.weight = Tensor(weight.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, T.permute_last_two(self.weight)) + self.bias

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias


class LayerNorm:
    def __init__(self, extent: int, dtype=np.float64, eps: float = 1e-6):
        self.extent = extent
        self.eps = eps
        self.gain = Tensor(np.ones(extent, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(extent, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.extent, self.gain, self.bias, eps=self.eps)

    def named_parameters(self, prefix: str = ""):
        yield prefix + "gain", self.gain
        yield prefix + "bias", self.bias


class MlpLayer:
    """Two-layer MLP with a GELU between; output extent equals input extent."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator,
                 dtype=np.float64, zero_out: bool = False):
        self.fc1 = LinearLayer(dim, hidden, rng, dtype)
        self.fc2 = LinearLayer(hidden, dim, rng, dtype, zero_weight=zero_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))

    def named_parameters(self, prefix: str = ""):
        yield from self.fc1.named_parameters(prefix + "fc1.")
        yield from self.fc2.named_parameters(prefix + "fc2.")


def mlp_hidden(dim: int, scale: float) -> int:
    """Hidden width for a given capacity scale factor (at least 1)."""
    return max(1, round(scale * dim))


class BranchNet:
    """Square map over the trailing extent: Linear, optionally followed by GELU."""

    def __init__(self, extent: int, with_gelu: bool, rng: np.random.Generator,
                 dtype=np.float64):
        self.linear = LinearLayer(extent, extent, rng, dtype)
        self.with_gelu = with_gelu

    def __call__(self, x: Tensor) -> Tensor:
        out = self.linear(x)
        return T.gelu(out) if self.with_gelu else out

    def named_parameters(self, prefix: str = ""):
        yield from self.linear.named_parameters(prefix)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

KINDS = ("lmlp", "transformer", "mixer", "gmlp")
FIRST_STAGES = ("linear", "one_layer_mlp")
MERGE_OPS = ("sum", "product", "glu")


@dataclass(frozen=True)
class BlockConfig:
    seq_len: int
    embed_dim: int
    kind: str = "lmlp"
    first_stage: str = "linear"
    left_activation: str = "none"     # gelu applies to the permuted branch only
    merge_op: str = "sum"
    merge_projection: str = "linear"
    second_stage: str = "mlp"
    mlp_scale: float = 4.0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise UnsupportedBlockError(f"unknown block kind {self.kind!r}")
        if self.seq_len < 1 or self.embed_dim < 1:
            raise T.ShapeError("seq_len and embed_dim must be positive")
        if self.kind == "lmlp":
            if self.first_stage not in FIRST_STAGES:
                raise UnsupportedBlockError(f"unknown first stage {self.first_stage!r}")
            if self.merge_op not in MERGE_OPS:
                raise UnsupportedBlockError(f"unknown merge op {self.merge_op!r}")
            if self.merge_op == "glu" and self.merge_projection == "none":
                raise UnsupportedBlockError("glu merge requires the merge projection")
            if self.merge_projection not in ("linear", "none"):
                raise UnsupportedBlockError(f"unknown merge projection {self.merge_projection!r}")
            if self.second_stage not in ("none", "mlp"):
                raise UnsupportedBlockError(f"unknown second stage {self.second_stage!r}")
            if self.left_activation not in ("none", "gelu"):
                raise UnsupportedBlockError(f"unknown left activation {self.left_activation!r}")
        if self.mlp_scale <= 0:
            raise UnsupportedBlockError("mlp_scale must be positive")


_LMLP_AXES = {
    # (first_stage, left_activation, merge_op, merge_projection, second_stage)
    "A1": ("one_layer_mlp", "none", "sum", "linear", "none"),
    "B1": ("one_layer_mlp", "none", "product", "linear", "none"),
    "B2": ("one_layer_mlp", "none", "glu", "linear", "none"),
    "B3": ("one_layer_mlp", "none", "sum", "none", "none"),
    "C1": ("one_layer_mlp", "none", "sum", "linear", "mlp"),
    "D1": ("linear", "none", "product", "linear", "mlp"),
    "D2": ("linear", "none", "sum", "linear", "mlp"),
    "E1": ("linear", "gelu", "product", "linear", "mlp"),
    "E2": ("linear", "gelu", "sum", "linear", "mlp"),
    # Skip placement is a backbone concern; at block level these equal D2.
    "F1": ("linear", "none", "sum", "linear", "mlp"),
    "F2": ("linear", "none", "sum", "linear", "mlp"),
    "F2-DEEP": ("linear", "none", "sum", "linear", "mlp"),
}
_BASELINES = {"A2": "mixer", "A3": "gmlp", "TRANSFORMER": "transformer"}

PRESET_NAMES = tuple(_LMLP_AXES) + tuple(_BASELINES)


def preset_config(name: str, seq_len: int, embed_dim: int, mlp_scale: float = 4.0) -> BlockConfig:
    """BlockConfig for a named design-grid preset (topology only; sizes are args)."""
    key = name.strip().upper().replace("_", "-")
    if key in _BASELINES:
        return BlockConfig(seq_len=seq_len, embed_dim=embed_dim, kind=_BASELINES[key],
                           mlp_scale=mlp_scale)
    if key not in _LMLP_AXES:
        raise UnsupportedBlockError(f"unknown preset {name!r}")
    first, act, merge, proj, second = _LMLP_AXES[key]
    return BlockConfig(seq_len=seq_len, embed_dim=embed_dim, kind="lmlp",
                       first_stage=first, left_activation=act, merge_op=merge,
                       merge_projection=proj, second_stage=second, mlp_scale=mlp_scale)


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

def _check_tokens(x: Tensor, cfg: BlockConfig) -> None:
    if x.ndim != 3 or x.shape[1] != cfg.seq_len or x.shape[2] != cfg.embed_dim:
        raise T.ShapeError(
            f"expected tokens of shape (B, {cfg.seq_len}, {cfg.embed_dim}), got {x.shape}"
        )


class LmlpBlock:
    """Two-branch block: permute, normalize per branch, square-map each branch,
    merge, project, residual, then an optional joint channel MLP."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dtype=np.float64):
        cfg.validate()
        seq, dim = cfg.seq_len, cfg.embed_dim
        gelu_everywhere = cfg.first_stage == "one_layer_mlp"
        self.cfg = cfg
        self.norm_r = LayerNorm(dim, dtype)
        self.norm_l = LayerNorm(seq, dtype)
        self.fnn_r = BranchNet(dim, gelu_everywhere, rng, dtype)
        self.fnn_l = BranchNet(seq, gelu_everywhere or cfg.left_activation == "gelu",
                               rng, dtype)
        if cfg.merge_projection == "linear":
            # Zero weight so a fresh block is the identity map.
            self.merge_proj = LinearLayer(dim, dim, rng, dtype, zero_weight=True)
        else:
            self.merge_proj = None
        if cfg.second_stage == "mlp":
            self.norm_2 = LayerNorm(dim, dtype)
            self.fnn_c = MlpLayer(dim, mlp_hidden(dim, cfg.mlp_scale), rng, dtype,
                                  zero_out=True)
        else:
            self.norm_2 = None
            self.fnn_c = None

    def forward(self, x: Tensor, skip: Tensor | None = None,
                skip_stage: str = "none") -> Tensor:
        _check_tokens(x, self.cfg)
        if skip is not None and skip_stage == "first_stage":
            x = x + skip
        permuted = T.permute_last_two(x)
        r = self.fnn_r(self.norm_r(x))
        left = T.permute_last_two(self.fnn_l(self.norm_l(permuted)))
        if self.cfg.merge_op == "sum":
            merged = left + r
        elif self.cfg.merge_op == "product":
            merged = left * r
        else:  # glu
            merged = left * T.sigmoid(r)
        z = self.merge_proj(merged) if self.merge_proj is not None else merged
        h = x + z
        if skip is not None and skip_stage == "second_stage":
            h = h + skip
        if self.fnn_c is not None:
            return h + self.fnn_c(self.norm_2(h))
        return h

    __call__ = forward

    def named_parameters(self, prefix: str = ""):
        yield from self.norm_r.named_parameters(prefix + "norm_r.")
        yield from self.norm_l.named_parameters(prefix + "norm_l.")
        yield from self.fnn_r.named_parameters(prefix + "fnn_r.")
        yield from self.fnn_l.named_parameters(prefix + "fnn_l.")
        if self.merge_proj is not None:
            yield from self.merge_proj.named_parameters(prefix + "merge_proj.")
        if self.fnn_c is not None:
            yield from self.norm_2.named_parameters(prefix + "norm_2.")
            yield from self.fnn_c.named_parameters(prefix + "fnn_c.")


class TransformerBlock:
    """Pre-norm multi-head self-attention plus pre-norm MLP, standard residuals."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dtype=np.float64):
        cfg.validate()
        dim = cfg.embed_dim
        self.cfg = cfg
        self.heads = max(1, dim // 64)
        if dim % self.heads:
            raise UnsupportedBlockError(f"embed_dim {dim} not divisible into {self.heads} heads")
        self.norm_1 = LayerNorm(dim, dtype)
        self.w_q = LinearLayer(dim, dim, rng, dtype)
        self.w_k = LinearLayer(dim, dim, rng, dtype)
        self.w_v = LinearLayer(dim, dim, rng, dtype)
        self.w_o = LinearLayer(dim, dim, rng, dtype)
        self.norm_2 = LayerNorm(dim, dtype)
        self.mlp = MlpLayer(dim, mlp_hidden(dim, cfg.mlp_scale), rng, dtype)

    def _attention(self, normed: Tensor) -> tuple[Tensor, Tensor]:
        batch, seq, dim = normed.shape
        head_dim = dim // self.heads
        def split(t):
            return T.permute(T.reshape(t, (batch, seq, self.heads, head_dim)), (0, 2, 1, 3))
        q = split(self.w_q(normed))
        k = split(self.w_k(normed))
        v = split(self.w_v(normed))
        logits = T.matmul(q, T.permute_last_two(k)) * (1.0 / math.sqrt(head_dim))
        weights = T.softmax_last(logits)
        mixed = T.matmul(weights, v)
        joined = T.reshape(T.permute(mixed, (0, 2, 1, 3)), (batch, seq, dim))
        return self.w_o(joined), weights

    def attention_weights(self, x: Tensor) -> Tensor:
        """Softmax attention matrix (B, heads, L, L) for inspection."""
        _check_tokens(x, self.cfg)
        _, weights = self._attention(self.norm_1(x))
        return weights

    def forward(self, x: Tensor, skip: Tensor | None = None,
                skip_stage: str = "none") -> Tensor:
        _check_tokens(x, self.cfg)
        if skip is not None and skip_stage == "first_stage":
            x = x + skip
        attended, _ = self._attention(self.norm_1(x))
        h = x + attended
        if skip is not None and skip_stage == "second_stage":
            h = h + skip
        return h + self.mlp(self.norm_2(h))

    __call__ = forward

    def named_parameters(self, prefix: str = ""):
        yield from self.norm_1.named_parameters(prefix + "norm_1.")
        for tag, layer in (("q", self.w_q), ("k", self.w_k), ("v", self.w_v), ("o", self.w_o)):
            yield from layer.named_parameters(prefix + f"w_{tag}.")
        yield from self.norm_2.named_parameters(prefix + "norm_2.")
        yield from self.mlp.named_parameters(prefix + "mlp.")


class MixerBlock:
    """Pre-norm token-mixing MLP over L, then pre-norm channel-mixing MLP over D."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dtype=np.float64):
        cfg.validate()
        seq, dim = cfg.seq_len, cfg.embed_dim
        self.cfg = cfg
        self.norm_1 = LayerNorm(dim, dtype)
        self.token_mlp = MlpLayer(seq, seq, rng, dtype)
        self.norm_2 = LayerNorm(dim, dtype)
        self.channel_mlp = MlpLayer(dim, mlp_hidden(dim, cfg.mlp_scale), rng, dtype)

    def forward(self, x: Tensor, skip: Tensor | None = None,
                skip_stage: str = "none") -> Tensor:
        _check_tokens(x, self.cfg)
        if skip is not None and skip_stage == "first_stage":
            x = x + skip
        mixed = T.permute_last_two(self.token_mlp(T.permute_last_two(self.norm_1(x))))
        h = x + mixed
        if skip is not None and skip_stage == "second_stage":
            h = h + skip
        return h + self.channel_mlp(self.norm_2(h))

    __call__ = forward

    def named_parameters(self, prefix: str = ""):
        yield from self.norm_1.named_parameters(prefix + "norm_1.")
        yield from self.token_mlp.named_parameters(prefix + "token_mlp.")
        yield from self.norm_2.named_parameters(prefix + "norm_2.")
        yield from self.channel_mlp.named_parameters(prefix + "channel_mlp.")


class GmlpBlock:
    """Pre-norm channel expansion with a spatial gating unit over the token axis.

    One half of the expanded channels gates the other half after the latter is
    normalized and mixed by a linear map over L; single residual around the block.
    """

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, dtype=np.float64):
        cfg.validate()
        seq, dim = cfg.seq_len, cfg.embed_dim
        hidden = mlp_hidden(dim, cfg.mlp_scale)
        self.cfg = cfg
        self.hidden = hidden
        self.norm_in = LayerNorm(dim, dtype)
        self.proj_in = LinearLayer(dim, 2 * hidden, rng, dtype)
        self.norm_gate = LayerNorm(hidden, dtype)
        self.spatial = LinearLayer(seq, seq, rng, dtype)
        self.proj_out = LinearLayer(hidden, dim, rng, dtype)

    def forward(self, x: Tensor, skip: Tensor | None = None,
                skip_stage: str = "none") -> Tensor:
        _check_tokens(x, self.cfg)
        if skip is not None and skip_stage == "first_stage":
            x = x + skip
        expanded = T.gelu(self.proj_in(self.norm_in(x)))
        u = T.narrow(expanded, -1, 0, self.hidden)
        v = self.norm_gate(T.narrow(expanded, -1, self.hidden, self.hidden))
        v = T.permute_last_two(self.spatial(T.permute_last_two(v)))
        out = x + self.proj_out(u * v)
        if skip is not None and skip_stage == "second_stage":
            out = out + skip
        return out

    __call__ = forward

    def named_parameters(self, prefix: str = ""):
        yield from self.norm_in.named_parameters(prefix + "norm_in.")
        yield from self.proj_in.named_parameters(prefix + "proj_in.")
        yield from self.norm_gate.named_parameters(prefix + "norm_gate.")
        yield from self.spatial.named_parameters(prefix + "spatial.")
        yield from self.proj_out.named_parameters(prefix + "proj_out.")


Block = LmlpBlock | TransformerBlock | MixerBlock | GmlpBlock

_BLOCK_CLASSES = {
    "lmlp": LmlpBlock,
    "transformer": TransformerBlock,
    "mixer": MixerBlock,
    "gmlp": GmlpBlock,
}


def make_block(cfg: BlockConfig, rng: np.random.Generator, dtype=np.float64) -> Block:
    cfg.validate()
    return _BLOCK_CLASSES[cfg.kind](cfg, rng, dtype)


def build_block(cfg: BlockConfig | str, rng_seed: int, *, seq_len: int | None = None,
                embed_dim: int | None = None, mlp_scale: float = 4.0,
                dtype=np.float64) -> Block:
    """Construct a block from a config or preset name; deterministic per seed."""
    if isinstance(cfg, str):
        if seq_len is None or embed_dim is None:
            raise T.UsageError("preset construction needs seq_len and embed_dim")
        cfg = preset_config(cfg, seq_len, embed_dim, mlp_scale)
    return make_block(cfg, np.random.default_rng(rng_seed), dtype)


def parameter_count(block) -> int:
    """Every trainable scalar in the block (weights, biases, norm affines)."""
    return sum(p.size for _, p in block.named_parameters())


def zero_parameters(block) -> None:
    for _, p in block.named_parameters():
        p.data[...] = 0.0


__all__ = [
    "Block",
    "BlockConfig",
    "BranchNet",
    "GmlpBlock",
    "LayerNorm",
    "LinearLayer",
    "LmlpBlock",
    "MixerBlock",
    "MlpLayer",
    "PRESET_NAMES",
    "TransformerBlock",
    "UnsupportedBlockError",
    "build_block",
    "make_block",
    "mlp_hidden",
    "parameter_count",
    "preset_config",
    "trunc_normal",
    "zero_parameters",
]
