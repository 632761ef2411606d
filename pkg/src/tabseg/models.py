"""Unet, Unet-SE, ResUnet and TABS built from :mod:`tabseg.tensor` ops.

All four variants share one backbone: five encoder levels with channel
schedule ``[f/16, f/8, f/4, f/2, f]``, a stride-2 convolution between levels,
and a decoder that mirrors it with transposed convolutions and concatenated
skips.  TABS adds a Transformer at the bottleneck: voxels become tokens via a
1x1x1 projection plus learned positional embeddings, pass through a post-norm
encoder stack, and are folded back into a volume by a 3x3x3 convolution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor

VARIANTS = ("unet", "unet_se", "resunet", "tabs")
TISSUES = ("GM", "WM", "CSF")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "tabs"
    input_size: int = 32
    in_channels: int = 1
    out_channels: int = 3
    features: int = 64  # 4 channels at full resolution; 16 or 32 starve the 3-class head
    depth: int = 5
    token_dim: int = 32
    transformer_layers: int = 2
    transformer_heads: int = 4
    ffn_dim: int = 0  # 0 means 4 * token_dim
    groupnorm_groups: int = 4
    se_reduction: int = 4
    seed: int = 0

    @property
    def downsamples(self) -> int:
        return self.depth - 1

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.token_dim

    @property
    def bottleneck_edge(self) -> int:
        return self.input_size // 2 ** self.downsamples

    @property
    def num_tokens(self) -> int:
        return self.bottleneck_edge ** 3

    @property
    def channels(self) -> list[int]:
        return [self.features // 2 ** (self.depth - 1 - i) for i in range(self.depth)]

    def validate(self) -> "ModelConfig":
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.depth != 5:
            raise ConfigurationError(f"depth must be 5, got {self.depth}")
        if self.in_channels != 1 or self.out_channels != 3:
            raise ConfigurationError("in_channels must be 1 and out_channels 3")
        step = 2 ** self.downsamples
        if self.input_size < step or self.input_size % step:
            raise ConfigurationError(
                f"input_size {self.input_size} not divisible by {step} (4 downsamples)"
            )
        if self.features < step or self.features % step:
            raise ConfigurationError(f"features {self.features} not divisible by {step}")
        if self.groupnorm_groups < 1 or self.features % self.groupnorm_groups:
            raise ConfigurationError(
                f"features {self.features} not divisible by groupnorm_groups {self.groupnorm_groups}"
            )
        if self.se_reduction < 1:
            raise ConfigurationError("se_reduction must be >= 1")
        if self.variant == "tabs":
            if self.token_dim < 1 or self.transformer_heads < 1 or self.transformer_layers < 1:
                raise ConfigurationError("token_dim, transformer_heads and transformer_layers must be >= 1")
            if self.token_dim % self.transformer_heads:
                raise ConfigurationError(
                    f"token_dim {self.token_dim} not divisible by heads {self.transformer_heads}"
                )
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        kw = {k: (str(v) if k == "variant" else int(v)) for k, v in d.items()}
        return cls(**kw)


def desk_config(variant: str = "tabs", **overrides) -> ModelConfig:
    return replace(ModelConfig(variant=variant), **overrides).validate()


def paper_config(variant: str = "tabs", **overrides) -> ModelConfig:
    base = ModelConfig(variant=variant, input_size=192, features=128, token_dim=512,
                       transformer_layers=4, transformer_heads=8, groupnorm_groups=8,
                       se_reduction=16)
    return replace(base, **overrides).validate()


# -- parameter containers --------------------------------------------------------

class Module:
    """Ordered, named parameter tree."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for name, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out


class Init:
    """Seeded parameter initializer: He-uniform weights, zero biases."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def he_uniform(self, shape, fan_in: int) -> np.ndarray:
        bound = math.sqrt(6.0 / fan_in)
        return self.rng.uniform(-bound, bound, size=shape).astype(T.default_dtype())

    def lecun_uniform(self, shape, fan_in: int) -> np.ndarray:
        bound = math.sqrt(3.0 / fan_in)
        return self.rng.uniform(-bound, bound, size=shape).astype(T.default_dtype())

    def normal(self, shape, std: float) -> np.ndarray:
        return (self.rng.standard_normal(shape) * std).astype(T.default_dtype())

    @staticmethod
    def zeros(shape) -> np.ndarray:
        return np.zeros(shape, dtype=T.default_dtype())

    @staticmethod
    def ones(shape) -> np.ndarray:
        return np.ones(shape, dtype=T.default_dtype())


def _groups_for(channels: int, groups: int) -> int:
    return math.gcd(channels, groups)


class Conv(Module):
    def __init__(self, init: Init, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        super().__init__()
        self.stride, self.padding = stride, k // 2
        self.weight = self.add_param("weight", init.he_uniform((c_out, c_in, k, k, k), c_in * k ** 3))
        self.bias = self.add_param("bias", init.zeros((c_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class UpConv(Module):
    def __init__(self, init: Init, c_in: int, c_out: int):
        super().__init__()
        self.weight = self.add_param("weight", init.he_uniform((c_in, c_out, 2, 2, 2), c_in * 8))
        self.bias = self.add_param("bias", init.zeros((c_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose3d(x, self.weight, self.bias, stride=2)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.groups = _groups_for(channels, groups)
        self.gamma = self.add_param("gamma", Init.ones((channels,)))
        self.beta = self.add_param("beta", Init.zeros((channels,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.groups, self.gamma, self.beta)


class Linear(Module):
    def __init__(self, init: Init, d_in: int, d_out: int):
        super().__init__()
        self.weight = self.add_param("weight", init.he_uniform((d_in, d_out), d_in))
        self.bias = self.add_param("bias", init.zeros((d_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        super().__init__()
        self.gamma = self.add_param("gamma", Init.ones((d,)))
        self.beta = self.add_param("beta", Init.zeros((d,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class ConvNormAct(Module):
    def __init__(self, init: Init, c_in: int, c_out: int, groups: int, stride: int = 1):
        super().__init__()
        self.conv = self.add_child("conv", Conv(init, c_in, c_out, 3, stride))
        self.norm = self.add_child("norm", GroupNorm(c_out, groups))

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(self.norm(self.conv(x)))


class DoubleConv(Module):
    """Plain Unet block: two conv+norm+relu stages."""

    def __init__(self, init: Init, c_in: int, c_out: int, groups: int):
        super().__init__()
        self.conv1 = self.add_child("conv1", Conv(init, c_in, c_out))
        self.norm1 = self.add_child("norm1", GroupNorm(c_out, groups))
        self.conv2 = self.add_child("conv2", Conv(init, c_out, c_out))
        self.norm2 = self.add_child("norm2", GroupNorm(c_out, groups))

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.norm1(self.conv1(x)))
        return T.relu(self.norm2(self.conv2(h)))


class ResBlock(Module):
    """Residual block; a 1x1x1 projection shortcut when channels change."""

    def __init__(self, init: Init, c_in: int, c_out: int, groups: int):
        super().__init__()
        self.conv1 = self.add_child("conv1", Conv(init, c_in, c_out))
        self.norm1 = self.add_child("norm1", GroupNorm(c_out, groups))
        self.conv2 = self.add_child("conv2", Conv(init, c_out, c_out))
        self.norm2 = self.add_child("norm2", GroupNorm(c_out, groups))
        self.proj = self.add_child("proj", Conv(init, c_in, c_out, 1)) if c_in != c_out else None

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        shortcut = self.proj(x) if self.proj is not None else x
        return T.relu(T.add(h, shortcut))


# -- squeeze-excitation -----------------------------------------------------------

def se_block(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Rescale each channel by a gate computed from its global average."""
    xb = x if x.ndim == 5 else x.reshape((1,) + x.shape)
    B, C = xb.shape[:2]
    pooled = T.mean(xb, axis=(2, 3, 4))                      # [B, C]
    hidden = T.relu(T.linear(pooled, w1, b1))
    gate = T.sigmoid(T.linear(hidden, w2, b2))               # [B, C]
    out = T.mul(xb, gate.reshape(B, C, 1, 1, 1))
    return out if x.ndim == 5 else out.reshape(x.shape)


class SEBlock(Module):
    def __init__(self, init: Init, channels: int, reduction: int):
        super().__init__()
        if channels < reduction:
            raise ConfigurationError(
                f"se_block: channels {channels} smaller than reduction {reduction}"
            )
        hidden = channels // reduction
        self.fc1 = self.add_child("fc1", Linear(init, channels, hidden))
        self.fc2 = self.add_child("fc2", Linear(init, hidden, channels))
        # the pooled input is non-negative (post-ReLU), so a zero-mean draw leaves
        # about half of the hidden units dead from the start; keep them alive
        np.abs(self.fc1.weight.data, out=self.fc1.weight.data)

    def __call__(self, x: Tensor) -> Tensor:
        return se_block(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


# -- transformer bottleneck ---------------------------------------------------------

def tokenize(features: Tensor, proj_weight: Tensor, proj_bias: Tensor | None,
             positional_embedding: Tensor) -> Tensor:
    """Project every bottleneck voxel to a token and add its positional embedding.

    ``features`` is ``[f,s,s,s]`` or ``[B,f,s,s,s]``; tokens come out in
    row-major voxel order as ``[n,d]`` (or ``[B,n,d]``).
    """
    xb = features if features.ndim == 5 else features.reshape((1,) + features.shape)
    B, _, s1, s2, s3 = xb.shape
    n = s1 * s2 * s3
    if positional_embedding.shape[0] != n:
        raise ConfigurationError(
            f"tokenize: {n} voxels but positional embedding has {positional_embedding.shape[0]} rows"
        )
    projected = T.conv3d(xb, proj_weight, proj_bias)          # [B, d, s, s, s]
    d = projected.shape[1]
    tokens = projected.reshape(B, d, n).transpose(0, 2, 1)    # [B, n, d]
    tokens = T.add(tokens, positional_embedding)
    return tokens if features.ndim == 5 else tokens.reshape(n, d)


def detokenize(tokens: Tensor, edge: int, conv_weight: Tensor, conv_bias: Tensor | None) -> Tensor:
    """Fold ``[n,d]`` tokens back to a ``d``-channel cube and convolve to ``f`` channels."""
    tb = tokens if tokens.ndim == 3 else tokens.reshape((1,) + tokens.shape)
    B, n, d = tb.shape
    if n != edge ** 3:
        raise ConfigurationError(f"detokenize: {n} tokens cannot fill a {edge}^3 volume")
    vol = tb.transpose(0, 2, 1).reshape(B, d, edge, edge, edge)
    out = T.conv3d(vol, conv_weight, conv_bias, stride=1, padding=conv_weight.shape[-1] // 2)
    return out if tokens.ndim == 3 else out.reshape(out.shape[1:])


def multi_head_attention(x: Tensor, wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
                         wv: Tensor, bv: Tensor, wo: Tensor, bo: Tensor, heads: int,
                         return_weights: bool = False):
    """Scaled dot-product self-attention over ``[B, n, d]`` tokens."""
    B, n, d = x.shape
    if d % heads:
        raise ConfigurationError(f"attention: token dim {d} not divisible by heads {heads}")
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(B, n, heads, dh).transpose(0, 2, 1, 3)  # [B, h, n, dh]

    q = split(T.linear(x, wq, bq))
    k = split(T.linear(x, wk, bk))
    v = split(T.linear(x, wv, bv))
    scores = T.mul(T.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / math.sqrt(dh))
    weights = T.softmax(scores, axis=-1)                          # [B, h, n, n]
    ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, n, d)
    out = T.linear(ctx, wo, bo)
    return (out, weights) if return_weights else out


class TransformerLayer(Module):
    """Post-norm encoder layer: attention and FFN, each with residual then layer norm."""

    def __init__(self, init: Init, d: int, heads: int, ffn: int):
        super().__init__()
        self.heads = heads
        self.q = self.add_child("q", Linear(init, d, d))
        self.k = self.add_child("k", Linear(init, d, d))
        self.v = self.add_child("v", Linear(init, d, d))
        self.o = self.add_child("o", Linear(init, d, d))
        self.norm1 = self.add_child("norm1", LayerNorm(d))
        self.ff1 = self.add_child("ff1", Linear(init, d, ffn))
        self.ff2 = self.add_child("ff2", Linear(init, ffn, d))
        self.norm2 = self.add_child("norm2", LayerNorm(d))

    def attention(self, x: Tensor, return_weights: bool = False):
        return multi_head_attention(
            x, self.q.weight, self.q.bias, self.k.weight, self.k.bias,
            self.v.weight, self.v.bias, self.o.weight, self.o.bias,
            self.heads, return_weights,
        )

    def __call__(self, x: Tensor) -> Tensor:
        x = self.norm1(T.add(x, self.attention(x)))
        return self.norm2(T.add(x, self.ff2(T.relu(self.ff1(x)))))


class TransformerEncoder(Module):
    def __init__(self, init: Init, d: int, layers: int, heads: int, ffn: int):
        super().__init__()
        self.layers = [self.add_child(f"layer{i}", TransformerLayer(init, d, heads, ffn))
                       for i in range(layers)]

    def __call__(self, tokens: Tensor) -> Tensor:
        squeeze = tokens.ndim == 2
        x = tokens.reshape((1,) + tokens.shape) if squeeze else tokens
        for layer in self.layers:
            x = layer(x)
        return x.reshape(x.shape[1:]) if squeeze else x


def transformer_encoder(tokens: Tensor, encoder: TransformerEncoder) -> Tensor:
    return encoder(tokens)


class TransformerBottleneck(Module):
    def __init__(self, init: Init, cfg: ModelConfig):
        super().__init__()
        f, d, s = cfg.features, cfg.token_dim, cfg.bottleneck_edge
        self.edge = s
        self.proj = self.add_child("proj", Conv(init, f, d, 1))
        self.pos = self.add_param("pos_embedding", init.normal((s ** 3, d), 0.02))
        self.encoder = self.add_child(
            "encoder", TransformerEncoder(init, d, cfg.transformer_layers, cfg.transformer_heads, cfg.ffn)
        )
        self.fold = self.add_child("fold", Conv(init, d, f, 3))

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        tokens = tokenize(x, self.proj.weight, self.proj.bias, self.pos)
        _record(trace, "tokens", tokens.shape[1:])
        out = self.encoder(tokens)
        _record(trace, "transformer_out", out.shape[1:])
        vol = detokenize(out, self.edge, self.fold.weight, self.fold.bias)
        _record(trace, "detokenized", vol.shape[1:])
        return vol


def _record(trace: list | None, name: str, shape) -> None:
    if trace is not None:
        trace.append((name, tuple(int(e) for e in shape)))


# -- full network -------------------------------------------------------------------

class SegmentationNet(Module):
    """Shared encoder/decoder backbone; the variant picks blocks and extras."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.config = cfg
        init = Init(cfg.seed)
        g = cfg.groupnorm_groups
        block = ResBlock if cfg.variant in ("resunet", "tabs") else DoubleConv
        ch = cfg.channels
        self.bypass_transformer = False

        self.enc = []
        self.se = []
        self.down = []
        for i, c in enumerate(ch):
            c_in = cfg.in_channels if i == 0 else c
            self.enc.append(self.add_child(f"enc{i + 1}", block(init, c_in, c, g)))
            if i < cfg.downsamples:
                if cfg.variant == "unet_se":
                    r = min(cfg.se_reduction, c)
                    self.se.append(self.add_child(f"se{i + 1}", SEBlock(init, c, r)))
                self.down.append(self.add_child(f"down{i + 1}", ConvNormAct(init, c, ch[i + 1], g, stride=2)))

        self.bottleneck = (self.add_child("bottleneck", TransformerBottleneck(init, cfg))
                           if cfg.variant == "tabs" else None)

        self.up = []
        self.dec = []
        for i in reversed(range(cfg.downsamples)):
            self.up.append(self.add_child(f"up{i + 1}", UpConv(init, ch[i + 1], ch[i])))
            self.dec.append(self.add_child(f"dec{i + 1}", block(init, 2 * ch[i], ch[i], g)))
        self.head = self.add_child("head", Conv(init, ch[0], cfg.out_channels, 1))
        # the head feeds softmax, not ReLU: unit-variance (LeCun) scaling keeps
        # untrained logits away from float32 saturation
        self.head.weight.data[...] = init.lecun_uniform(self.head.weight.shape, ch[0])

    def parameters(self) -> dict[str, Tensor]:
        return self.named_parameters()

    def __call__(self, x: Tensor, trace: list | None = None) -> Tensor:
        return self.forward(x, trace)

    def forward(self, x: Tensor, trace: list | None = None) -> Tensor:
        """Map ``[1,N,N,N]`` (or ``[B,1,N,N,N]``) intensities to ``[3,N,N,N]`` probabilities."""
        cfg = self.config
        squeeze = x.ndim == 4
        xb = x.reshape((1,) + x.shape) if squeeze else x
        expected = (cfg.in_channels,) + (cfg.input_size,) * 3
        if xb.ndim != 5 or xb.shape[1:] != expected:
            raise ConfigurationError(f"forward: expected input {expected}, got {x.shape}")
        _record(trace, "input", xb.shape[1:])

        skips = []
        h = xb
        for i, enc in enumerate(self.enc):
            h = enc(h)
            if i < cfg.downsamples:
                if self.se:
                    h = self.se[i](h)
                _record(trace, f"encoder_level{i + 1}", h.shape[1:])
                skips.append(h)
                h = self.down[i](h)
            else:
                _record(trace, f"encoder_level{i + 1}", h.shape[1:])
        _record(trace, "encoder_out", h.shape[1:])

        if self.bottleneck is not None and not self.bypass_transformer:
            h = self.bottleneck(h, trace)

        for j, (up, dec) in enumerate(zip(self.up, self.dec)):
            level = cfg.downsamples - 1 - j
            h = dec(T.concat_channels(skips[level], up(h)))
            _record(trace, f"decoder_level{level + 1}", h.shape[1:])
        logits = self.head(h)
        _record(trace, "decoder_out", logits.shape[1:])
        probs = T.softmax(logits, axis=1)
        return probs.reshape(probs.shape[1:]) if squeeze else probs


def build_model(config: ModelConfig) -> SegmentationNet:
    return SegmentationNet(config.validate())


def forward(model: SegmentationNet, volume: Tensor) -> Tensor:
    return model.forward(volume)


def count_parameters(config: ModelConfig) -> int:
    return sum(p.size for p in build_model(config).parameters().values())


def infer_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Shape chain of the forward pass computed from the config alone."""
    cfg = config.validate()
    N, ch = cfg.input_size, cfg.channels
    chain = [("input", (cfg.in_channels, N, N, N))]
    for i, c in enumerate(ch):
        e = N // 2 ** i
        chain.append((f"encoder_level{i + 1}", (c, e, e, e)))
    s = cfg.bottleneck_edge
    chain.append(("encoder_out", (ch[-1], s, s, s)))
    if cfg.variant == "tabs":
        chain.append(("tokens", (cfg.num_tokens, cfg.token_dim)))
        chain.append(("transformer_out", (cfg.num_tokens, cfg.token_dim)))
        chain.append(("detokenized", (cfg.features, s, s, s)))
    for i in reversed(range(cfg.downsamples)):
        e = N // 2 ** i
        chain.append((f"decoder_level{i + 1}", (ch[i], e, e, e)))
    chain.append(("decoder_out", (cfg.out_channels, N, N, N)))
    return chain


def format_shape(shape) -> str:
    return "×".join(str(e) for e in shape)
