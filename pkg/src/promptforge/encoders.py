"""Frozen random dual encoders standing in for a pretrained vision-language backbone.

Both towers are small transformer stacks over a shared embedding width d:
the image tower eats 8x8 patches of a 32x32 RGB image (16 patches by
default), the text tower eats sequences of prompt token embeddings.  All
weights are generated from a seed and never receive gradients; text inputs
stay differentiable so prompt vectors can train through the text tower.

Token space and feature space share the dimension d, so text-image
attention needs no cross-modal projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Sequence

import numpy as np

from .seeding import hash64, keyed_normal
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_rows,
    matmul,
    mean_rows,
    normalize_rows,
    reshape,
    scale,
    softmax_rows,
    tanh,
    transpose,
)

__all__ = [
    "PROMPT_TEMPLATE",
    "VOCAB_SIZE",
    "TokenSequence",
    "EncoderWeights",
    "ImageFeatures",
    "TextEmbedding",
    "tokenize",
    "template_token_ids",
    "token_embedding_rows",
    "class_token_vector",
    "handcrafted_context",
    "encode_image",
    "encode_text",
]

PROMPT_TEMPLATE = ("a", "photo", "of", "a")
VOCAB_SIZE = 4096


@dataclass(frozen=True)
class TokenSequence:
    """Vocabulary ids for one class name (or an expanded prompt template)."""

    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def tokenize(class_name: str, vocab_size: int = VOCAB_SIZE) -> TokenSequence:
    """Hash the lowercase words of a class name into stable vocabulary ids."""
    words = class_name.lower().split()
    if not words:
        raise ValueError("class name must contain at least one word")
    return TokenSequence(tuple(hash64(w) % vocab_size for w in words))


def template_token_ids(class_name: str, vocab_size: int = VOCAB_SIZE) -> TokenSequence:
    """Token ids of the hand-written prompt 'a photo of a <class name>'."""
    return tokenize(" ".join(PROMPT_TEMPLATE) + " " + class_name, vocab_size)


class EncoderWeights:
    """All projection and block parameters of both towers, frozen.

    Every array is drawn from a counter-based stream keyed by (seed, name),
    so regeneration is order-independent and two instances built from the
    same seed are bitwise identical.  ``requires_grad`` is False on every
    parameter; nothing here ever trains.
    """

    def __init__(self, seed: int, *, dim: int = 64, heads: int = 4, blocks: int = 2,
                 patch_size: int = 8, vocab_size: int = VOCAB_SIZE,
                 hidden_ratio: int = 2, max_patches: int = 256, max_tokens: int = 16):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} must be divisible by heads {heads}")
        self.seed = int(seed)
        self.dim = dim
        self.heads = heads
        self.blocks = blocks
        self.patch_size = patch_size
        self.vocab_size = vocab_size
        self.hidden_ratio = hidden_ratio
        self.max_patches = max_patches
        self.max_tokens = max_tokens
        self.params: dict[str, Tensor] = {
            name: Tensor(keyed_normal(self.seed, name, shape))
            for name, shape in self._shapes().items()
        }

    def _shapes(self) -> dict[str, tuple[int, ...]]:
        d = self.dim
        head_dim = d // self.heads
        hidden = self.hidden_ratio * d
        shapes: dict[str, tuple[int, ...]] = {
            "token_embedding": (self.vocab_size, d),
            "img.patch_proj": (self.patch_size * self.patch_size * 3, d),
            "img.pos": (self.max_patches, d),
            "txt.pos": (self.max_tokens, d),
        }
        for tower in ("img", "txt"):
            for b in range(self.blocks):
                prefix = f"{tower}.block{b}"
                for h in range(self.heads):
                    shapes[f"{prefix}.h{h}.wq"] = (d, head_dim)
                    shapes[f"{prefix}.h{h}.wk"] = (d, head_dim)
                    shapes[f"{prefix}.h{h}.wv"] = (d, head_dim)
                    shapes[f"{prefix}.h{h}.wo"] = (head_dim, d)
                shapes[f"{prefix}.mlp.w1"] = (d, hidden)
                shapes[f"{prefix}.mlp.b1"] = (1, hidden)
                shapes[f"{prefix}.mlp.w2"] = (hidden, d)
                shapes[f"{prefix}.mlp.b2"] = (1, d)
        return shapes

    def checksum(self) -> str:
        """Digest over every parameter; constant for the lifetime of a run."""
        import hashlib

        h = hashlib.blake2b(digest_size=16)
        for name in sorted(self.params):
            h.update(name.encode("utf-8"))
            h.update(self.params[name].data.astype("<f8").tobytes())
        return h.hexdigest()

    def with_zero_biases(self) -> "EncoderWeights":
        """Copy with additive terms (MLP biases, positional rows) zeroed."""
        clone = EncoderWeights(
            self.seed, dim=self.dim, heads=self.heads, blocks=self.blocks,
            patch_size=self.patch_size, vocab_size=self.vocab_size,
            hidden_ratio=self.hidden_ratio, max_patches=self.max_patches,
            max_tokens=self.max_tokens,
        )
        for name in clone.params:
            if name.endswith(".b1") or name.endswith(".b2") or name in ("img.pos", "txt.pos"):
                clone.params[name] = Tensor(np.zeros_like(clone.params[name].data))
        return clone

    def dump(self, path) -> None:
        """Binary inspection dump: per-parameter shape header + f64 LE data."""
        with open(path, "wb") as f:
            f.write(b"promptforge-weights 1\n")
            for name in sorted(self.params):
                arr = self.params[name].data
                header = f"{name} {arr.ndim} " + " ".join(str(s) for s in arr.shape)
                f.write(header.encode("utf-8") + b"\n")
                f.write(arr.astype("<f8").tobytes())


@dataclass
class ImageFeatures:
    """Per-patch features plus their mean-pooled summary for one image."""

    patches: Tensor          # (N, d)
    pooled: Tensor           # (d,), mean of the patch rows
    grid: tuple[int, int]    # patch grid (rows, cols), N == rows * cols

    @classmethod
    def from_patches(cls, patches, grid: tuple[int, int] | None = None) -> "ImageFeatures":
        tensor = patches if isinstance(patches, Tensor) else Tensor(patches)
        n, d = tensor.shape
        pooled = reshape(mean_rows(tensor), (d,))
        return cls(patches=tensor, pooled=pooled, grid=grid or (1, n))


@dataclass
class TextEmbedding:
    """One embedding row per class, in class-index order."""

    per_class: Tensor        # (M, d)

    @property
    def num_classes(self) -> int:
        return self.per_class.shape[0]


# Attention temperature for the scaled cosine attention inside each block.
# Cosine scores keep the towers content-sensitive regardless of activation
# magnitude, which is what lets shared context edits produce class-dependent
# embedding changes.
ATTN_GAIN = 16.0


def _rms_rows(x: Tensor, dim: int) -> Tensor:
    # Parameter-free pre-norm: unit per-coordinate RMS, like LayerNorm
    # without affine terms.  Without it the 0.02-scale projections contract
    # every signal ~6x per layer and the towers degenerate to near-linear maps.
    return scale(normalize_rows(x), sqrt(dim))


def _block(w: EncoderWeights, prefix: str, x: Tensor) -> Tensor:
    xa = _rms_rows(x, w.dim)
    mixed = None
    for h in range(w.heads):
        q = normalize_rows(matmul(xa, w.params[f"{prefix}.h{h}.wq"]))
        k = normalize_rows(matmul(xa, w.params[f"{prefix}.h{h}.wk"]))
        v = matmul(xa, w.params[f"{prefix}.h{h}.wv"])
        attn = softmax_rows(scale(matmul(q, transpose(k)), ATTN_GAIN))
        out = matmul(matmul(attn, v), w.params[f"{prefix}.h{h}.wo"])
        mixed = out if mixed is None else add(mixed, out)
    x = add(x, mixed)
    xm = _rms_rows(x, w.dim)
    hidden = tanh(add(matmul(xm, w.params[f"{prefix}.mlp.w1"]), w.params[f"{prefix}.mlp.b1"]))
    mlp_out = add(matmul(hidden, w.params[f"{prefix}.mlp.w2"]), w.params[f"{prefix}.mlp.b2"])
    return add(x, mlp_out)


# Final tower outputs are normalized to fixed row norms.  These magnitudes
# are what the projection-free cross-modal attention products see, so they
# must sit where the score spreads are neither uniform nor saturated and
# where the cross-modal residuals stay comparable to what they are added to.
IMAGE_SCALE = 0.5
TEXT_SCALE = 2.0


def _tower(w: EncoderWeights, tower: str, x: Tensor) -> Tensor:
    for b in range(w.blocks):
        x = _block(w, f"{tower}.block{b}", x)
    return scale(normalize_rows(x), IMAGE_SCALE if tower == "img" else TEXT_SCALE)


def encode_image(image, w: EncoderWeights) -> ImageFeatures:
    """Encode an HxWx3 image into per-patch features and a pooled feature.

    uint8 input is scaled to [0, 1]; float input is used as-is.  Flattened
    patch pixel vectors are L2-normalized before projection, and the
    projection output is scaled by sqrt(dim) so patch rows and token
    embeddings live at a comparable magnitude.  The result is a pure
    function of (image, w.seed): gradients never reach the frozen weights
    and the image itself is data, so the outputs are constants.
    """
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"encode_image needs an HxWx3 array, got shape {arr.shape}")
    values = arr.astype(np.float64)
    if arr.dtype == np.uint8:
        values = values / 255.0
    values = values - 0.5  # center so noise patches have near-zero mean direction
    h, wid, _ = values.shape
    p = w.patch_size
    if h % p != 0 or wid % p != 0:
        raise ShapeError(f"image size {h}x{wid} is not divisible by patch size {p}")
    rows, cols = h // p, wid // p
    n = rows * cols
    if n > w.max_patches:
        raise ShapeError(f"{n} patches exceeds the maximum of {w.max_patches}")
    flat = (
        values.reshape(rows, p, cols, p, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(n, p * p * 3)
    )
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    flat = flat / np.maximum(norms, 1e-12)
    x = add(scale(matmul(Tensor(flat), w.params["img.patch_proj"]), sqrt(w.dim)),
            Tensor(w.params["img.pos"].data[:n]))
    patches = _tower(w, "img", x)
    pooled = reshape(mean_rows(patches), (w.dim,))
    return ImageFeatures(patches=patches, pooled=pooled, grid=(rows, cols))


def encode_text(sequences: Sequence[Tensor], w: EncoderWeights) -> TextEmbedding:
    """Encode equal-length prompt token sequences into per-class embeddings.

    Each (L, d) sequence passes through the text tower; the class embedding
    is the mean of its final token states.  The output is differentiable
    with respect to the input embeddings, which is what trains prompts.
    """
    sequences = list(sequences)
    if not sequences:
        raise ShapeError("encode_text needs at least one sequence")
    lengths = {s.shape for s in sequences}
    if len(lengths) != 1:
        raise ShapeError(f"ragged prompt sequences: shapes {sorted(lengths)}")
    length, d = sequences[0].shape
    if d != w.dim:
        raise ShapeError(f"sequence width {d} does not match encoder dim {w.dim}")
    if length > w.max_tokens:
        raise ShapeError(f"sequence length {length} exceeds the maximum of {w.max_tokens}")
    pos = Tensor(w.params["txt.pos"].data[:length])
    rows = [mean_rows(_tower(w, "txt", add(seq, pos))) for seq in sequences]
    return TextEmbedding(per_class=concat_rows(rows))


def token_embedding_rows(w: EncoderWeights, tokens: TokenSequence) -> np.ndarray:
    """Embedding-table rows for a token sequence, scaled by sqrt(dim).

    The scaling (standard transformer practice) puts token rows at the same
    magnitude as projected patch rows, which keeps the projection-free
    text-image dot-product attention meaningfully non-uniform.
    """
    return w.params["token_embedding"].data[list(tokens.ids)] * sqrt(w.dim)


def class_token_vector(w: EncoderWeights, class_name: str) -> np.ndarray:
    """The class word embedding: mean over the name's word embeddings, shape (d,)."""
    return token_embedding_rows(w, tokenize(class_name, w.vocab_size)).mean(axis=0)


def handcrafted_context(w: EncoderWeights) -> Tensor:
    """Frozen context rows spelling the hand-written template words."""
    return Tensor(token_embedding_rows(w, tokenize(" ".join(PROMPT_TEMPLATE), w.vocab_size)))
