"""Image and text towers.

The image tower is a pre-LN vision transformer with three variants:

* ``vanilla`` -- one class token, one embedding.
* ``cls`` -- ``H`` class tokens attending over a shared patch sequence; row
  ``h`` of the output comes from class token ``h``.
* ``mlp`` -- one class token; in the last ``mlp_expanded_blocks`` blocks the
  down-projection of the feed-forward layer is replicated ``H`` times and the
  token sequence forks into ``H`` streams, stream ``h`` using replica ``h``.

The text tower is a causal transformer pooled at the final (terminal) token.
All towers share one projection head per modality and emit unit-norm rows.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import zlib
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import SequenceTooLong, ShapeMismatch, TokenOutOfRange

PAD_ID = 0
EOT_ID = 1
UNK_ID = 2
MASK_NEG = -1e30
INIT_STD = 0.02


class Variant(str, enum.Enum):
    VANILLA = "vanilla"
    CLS = "cls"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch_size: int = 4
    width: int = 64
    depth: int = 4
    heads: int = 4
    embed_dim: int = 64
    branch_count: int = 1
    variant: Variant = Variant.VANILLA
    vocab_size: int = 256
    max_text_tokens: int = 77
    mlp_expanded_blocks: int = 3
    ffn_dim: int | None = None
    text_depth: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.width)
        if self.text_depth is None:
            object.__setattr__(self, "text_depth", self.depth)
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if self.branch_count < 1:
            raise ValueError("branch_count must be >= 1")
        if self.variant is Variant.VANILLA and self.branch_count != 1:
            raise ValueError("vanilla variant requires branch_count == 1")
        if self.depth < 1 or self.text_depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid**2

    @property
    def num_class_tokens(self) -> int:
        return self.branch_count if self.variant is Variant.CLS else 1

    @property
    def expanded_blocks(self) -> int:
        if self.variant is not Variant.MLP:
            return 0
        return min(self.mlp_expanded_blocks, self.depth)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ------------------------------------------------------------ parameters ----


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def _trunc_normal(rng, shape, std=INIT_STD):
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def parameter_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Ordered mapping from parameter name to shape."""
    w, f, d = config.width, config.ffn_dim, config.embed_dim
    H = config.branch_count
    shapes: dict[str, tuple] = {}
    p = config.patch_size
    shapes["image.patch.weight"] = (3 * p * p, w)
    shapes["image.patch.bias"] = (w,)
    shapes["image.cls"] = (config.num_class_tokens, w)
    shapes["image.pos_cls"] = (1, w)
    shapes["image.pos_patch"] = (config.num_patches, w)
    first_expanded = config.depth - config.expanded_blocks
    for i in range(config.depth):
        branched = H if i >= first_expanded and config.variant is Variant.MLP else None
        _block_shapes(shapes, f"image.blocks.{i}", w, f, branched)
    shapes["image.ln_post.weight"] = (w,)
    shapes["image.ln_post.bias"] = (w,)
    shapes["image.proj"] = (w, d)
    shapes["text.token"] = (config.vocab_size, w)
    shapes["text.pos"] = (config.max_text_tokens, w)
    for i in range(config.text_depth):
        _block_shapes(shapes, f"text.blocks.{i}", w, f, None)
    shapes["text.ln_final.weight"] = (w,)
    shapes["text.ln_final.bias"] = (w,)
    shapes["text.proj"] = (w, d)
    shapes["logit_scale"] = ()
    return shapes


def _block_shapes(shapes, prefix, w, f, branches):
    shapes[f"{prefix}.ln1.weight"] = (w,)
    shapes[f"{prefix}.ln1.bias"] = (w,)
    shapes[f"{prefix}.attn.qkv.weight"] = (w, 3 * w)
    shapes[f"{prefix}.attn.qkv.bias"] = (3 * w,)
    shapes[f"{prefix}.attn.out.weight"] = (w, w)
    shapes[f"{prefix}.attn.out.bias"] = (w,)
    shapes[f"{prefix}.ln2.weight"] = (w,)
    shapes[f"{prefix}.ln2.bias"] = (w,)
    shapes[f"{prefix}.mlp.fc1.weight"] = (w, f)
    shapes[f"{prefix}.mlp.fc1.bias"] = (f,)
    if branches is None:
        shapes[f"{prefix}.mlp.fc2.weight"] = (f, w)
        shapes[f"{prefix}.mlp.fc2.bias"] = (w,)
    else:
        shapes[f"{prefix}.mlp.fc2.weight"] = (branches, f, w)
        shapes[f"{prefix}.mlp.fc2.bias"] = (branches, w)


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Parameter]:
    """Seeded initialization; each parameter draws from its own named stream."""
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name == "logit_scale":
            value = np.array(math.log(1.0 / 0.07))
        elif name.endswith(".bias"):
            value = np.zeros(shape)
        elif ".ln" in name and name.endswith(".weight"):
            value = np.ones(shape)
        else:
            value = _trunc_normal(_stream(seed, name), shape)
        params[name] = Parameter(value, name)
    return params


def count_parameters(config: ModelConfig) -> dict:
    """Parameter totals and the closed-form multi-branch overhead.

    ``base`` is the vanilla model with identical dimensions; the overhead is
    ``(H-1)*width`` for the class-token variant and
    ``(H-1)*E*(ffn_dim*width + width)`` for the MLP variant with ``E``
    expanded blocks.
    """
    H, w = config.branch_count, config.width
    base_cfg = dataclasses.replace(config, variant=Variant.VANILLA, branch_count=1)
    base = sum(int(np.prod(s)) for s in parameter_shapes(base_cfg).values())
    if config.variant is Variant.CLS:
        overhead = (H - 1) * w
    elif config.variant is Variant.MLP:
        overhead = (H - 1) * config.expanded_blocks * (config.ffn_dim * w + w)
    else:
        overhead = 0
    return {
        "total": base + overhead,
        "base": base,
        "branch_overhead": overhead,
        "overhead_fraction": overhead / base,
    }


# --------------------------------------------------------------- forward ----


def _p(params, name):
    t = params[name]
    return t if isinstance(t, Tensor) else Tensor(t)


def _attention_block(x, params, prefix, heads, mask):
    """Self-attention sub-layer on x [B, N, w]; returns (residual output, probs)."""
    B, N, w = x.shape
    hd = w // heads
    h = ag.layer_norm(x, _p(params, f"{prefix}.ln1.weight"), _p(params, f"{prefix}.ln1.bias"))
    qkv = ag.linear(h, _p(params, f"{prefix}.attn.qkv.weight"), _p(params, f"{prefix}.attn.qkv.bias"))
    qkv = ag.transpose(ag.reshape(qkv, (B, N, 3, heads, hd)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    out, probs = ag.attention(q, k, v, mask)
    out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (B, N, w))
    out = ag.linear(out, _p(params, f"{prefix}.attn.out.weight"), _p(params, f"{prefix}.attn.out.bias"))
    return ag.add(x, out), probs


def _block(x, params, prefix, heads, mask=None):
    x, probs = _attention_block(x, params, prefix, heads, mask)
    h = ag.layer_norm(x, _p(params, f"{prefix}.ln2.weight"), _p(params, f"{prefix}.ln2.bias"))
    h = ag.gelu(ag.linear(h, _p(params, f"{prefix}.mlp.fc1.weight"), _p(params, f"{prefix}.mlp.fc1.bias")))
    h = ag.linear(h, _p(params, f"{prefix}.mlp.fc2.weight"), _p(params, f"{prefix}.mlp.fc2.bias"))
    return ag.add(x, h), probs


def _branched_block(x, params, prefix, heads, n_branch):
    """Block on x [B*H, N, w] where stream b*H + h uses down-projection replica h."""
    BH, N, w = x.shape
    B = BH // n_branch
    x, probs = _attention_block(x, params, prefix, heads, None)
    h = ag.layer_norm(x, _p(params, f"{prefix}.ln2.weight"), _p(params, f"{prefix}.ln2.bias"))
    h = ag.gelu(ag.linear(h, _p(params, f"{prefix}.mlp.fc1.weight"), _p(params, f"{prefix}.mlp.fc1.bias")))
    h = ag.reshape(h, (B, n_branch, N, h.shape[-1]))
    h = ag.matmul(h, _p(params, f"{prefix}.mlp.fc2.weight"))
    bias = _p(params, f"{prefix}.mlp.fc2.bias")
    h = ag.add(h, ag.reshape(bias, (n_branch, 1, w)))
    return ag.add(x, ag.reshape(h, (BH, N, w))), probs


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """[B, 3, S, S] -> [B, P, 3*patch*patch], patches in row-major grid order."""
    B, C, S, _ = images.shape
    g = S // patch
    x = images.reshape(B, C, g, patch, g, patch)
    return x.transpose(0, 2, 4, 1, 3, 5).reshape(B, g * g, C * patch * patch)


def _check_images(images, config):
    images = np.asarray(images, dtype=np.float64)
    S = config.image_size
    if images.ndim != 4 or images.shape[1:] != (3, S, S):
        raise ShapeMismatch(f"expected [B, 3, {S}, {S}], got {images.shape}")
    return images


def encode_images(images, config: ModelConfig, params, return_attention=False):
    """Batched image tower: [B, 3, S, S] -> Tensor [B, H, d] of unit rows.

    With ``return_attention`` also returns the final block's attention
    probabilities, shaped [B, H_streams, heads, N, N] (``H_streams`` is 1
    except for the MLP variant).
    """
    images = _check_images(images, config)
    B = images.shape[0]
    w, H = config.width, config.branch_count
    n_cls = config.num_class_tokens
    x = ag.linear(patchify(images, config.patch_size), _p(params, "image.patch.weight"), _p(params, "image.patch.bias"))
    x = ag.add(x, _p(params, "image.pos_patch"))
    cls = ag.add(_p(params, "image.cls"), _p(params, "image.pos_cls"))
    cls = ag.broadcast_to(cls, (B, n_cls, w))
    x = ag.concat([cls, x], axis=1)
    N = x.shape[1]
    first_expanded = config.depth - config.expanded_blocks
    streams = 1
    probs = None
    for i in range(config.depth):
        prefix = f"image.blocks.{i}"
        if config.variant is Variant.MLP and i >= first_expanded:
            if streams == 1:
                x = ag.reshape(ag.broadcast_to(ag.reshape(x, (B, 1, N, w)), (B, H, N, w)), (B * H, N, w))
                streams = H
            x, probs = _branched_block(x, params, prefix, config.heads, H)
        else:
            x, probs = _block(x, params, prefix, config.heads)
    if streams > 1:
        pooled = ag.reshape(x[:, 0], (B, H, w))
    else:
        pooled = x[:, :n_cls]
    pooled = ag.layer_norm(pooled, _p(params, "image.ln_post.weight"), _p(params, "image.ln_post.bias"))
    out = ag.l2_normalize(ag.linear(pooled, _p(params, "image.proj")))
    if return_attention:
        p = probs.data.reshape((B, streams) + probs.shape[1:])
        return out, p
    return out


def _causal_mask(n):
    return np.triu(np.full((n, n), MASK_NEG), k=1)


def check_tokens(tokens, config: ModelConfig) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape[-1] > config.max_text_tokens:
        raise SequenceTooLong(f"{tokens.shape[-1]} tokens > {config.max_text_tokens}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise TokenOutOfRange(f"token ids must lie in [0, {config.vocab_size})")
    return tokens


def encode_texts(tokens, config: ModelConfig, params):
    """Batched text tower: int [B, L] (right-padded with PAD_ID) -> Tensor [B, d].

    Each row is pooled at its last non-pad position.
    """
    tokens = check_tokens(tokens, config)
    if tokens.ndim != 2:
        raise ShapeMismatch(f"expected [B, L] token ids, got {tokens.shape}")
    B, L = tokens.shape
    last = np.maximum((tokens != PAD_ID).sum(axis=1) - 1, 0)
    x = ag.embedding(_p(params, "text.token"), tokens)
    x = ag.add(x, _p(params, "text.pos")[:L])
    mask = _causal_mask(L)
    for i in range(config.text_depth):
        x, _ = _block(x, params, f"text.blocks.{i}", config.heads, mask)
    x = ag.layer_norm(x, _p(params, "text.ln_final.weight"), _p(params, "text.ln_final.bias"))
    pooled = x[np.arange(B), last]
    return ag.l2_normalize(ag.linear(pooled, _p(params, "text.proj")))


def pad_tokens(seqs, length=None) -> np.ndarray:
    """Right-pad integer sequences with PAD_ID into a [B, L] array."""
    length = length or max(len(s) for s in seqs)
    out = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


# ---------------------------------------------------- single-item wrappers ----


def encode_text(tokens, config: ModelConfig, params) -> np.ndarray:
    with ag.no_grad():
        return encode_texts(np.asarray(tokens)[None, :], config, params).data[0]


def _single_image(image, config, params):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeMismatch(f"expected [3, S, S], got {image.shape}")
    with ag.no_grad():
        return encode_images(image[None], config, params).data[0]


def encode_image_vanilla(image, config: ModelConfig, params) -> np.ndarray:
    if config.variant is not Variant.VANILLA:
        raise ShapeMismatch("encode_image_vanilla needs the vanilla variant")
    return _single_image(image, config, params)[0]


def encode_image_cls(image, config: ModelConfig, params) -> np.ndarray:
    if config.variant is not Variant.CLS:
        raise ShapeMismatch("encode_image_cls needs the cls variant")
    return _single_image(image, config, params)


def encode_image_mlp(image, config: ModelConfig, params) -> np.ndarray:
    if config.variant is not Variant.MLP:
        raise ShapeMismatch("encode_image_mlp needs the mlp variant")
    return _single_image(image, config, params)


@dataclass
class EmbeddingSet:
    image_embeddings: np.ndarray  # [H, d]
    text_embeddings: np.ndarray  # [M, d]

    def __post_init__(self):
        for rows in (self.image_embeddings, self.text_embeddings):
            norms = np.linalg.norm(rows, axis=-1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ValueError("embedding rows must be unit norm")


class Temperature:
    """Learnable inverse temperature stored as ``log_scale``; tau = exp(-log_scale)."""

    def __init__(self, log_scale: Parameter, clamp_max: float = 100.0):
        self.log_scale = log_scale
        self.clamp_max = clamp_max

    @property
    def tau(self) -> float:
        return float(np.exp(-self.log_scale.data).item())

    def as_tensor(self):
        """tau as a differentiable scalar."""
        return ag.exp(ag.mul(self.log_scale, -1.0))

    def clamp(self) -> None:
        np.minimum(self.log_scale.data, math.log(self.clamp_max), out=self.log_scale.data)
