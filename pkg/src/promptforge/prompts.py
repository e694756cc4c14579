"""Prompt construction and feature tuning for every supported method.

The supported mechanisms, selected through :class:`MethodSpec`:

- hand-written template prompts (zero-shot baseline),
- CoOp: shared learnable context vectors,
- CoCoOp: CoOp plus one image-conditional residual shared by all classes,
- MLP-PL / MLP-FT: Linear-ReLU-Linear residual generators applied to the
  text and image branches respectively,
- CTP: class-aware prompts, where each class's pooled prompt query attends
  over image patches and the attended patch mix is added to that class's
  context tokens,
- TFT: patch features attend over the (augmented) class embeddings and the
  attended text mix is added back onto the patches.

When an image-side mechanism is active, classification blends the plain
similarity cos(f, g_i) with the augmented similarity cos(f_a, g_a_i) under
a weight lambda before the temperature softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .encoders import (
    EncoderWeights,
    ImageFeatures,
    TextEmbedding,
    class_token_vector,
    encode_text,
)
from .seeding import keyed_normal
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_rows,
    cosine,
    matmul,
    mean_rows,
    pack,
    relu,
    reshape,
    row,
    scale,
    softmax_rows,
    transpose,
)

__all__ = [
    "PromptMode",
    "ImageMode",
    "MethodSpec",
    "PromptSet",
    "MetaNet",
    "AttentionRecord",
    "ForwardResult",
    "METHOD_NAMES",
    "method_spec",
    "clip_probability",
    "build_coop_prompts",
    "build_cocoop_prompts",
    "ctp_attention",
    "build_ctp_prompts",
    "tft_augment",
    "blended_probability",
    "mlp_pl_prompts",
    "mlp_ft_features",
    "method_forward",
]


class PromptMode(Enum):
    HANDCRAFTED = "handcrafted"
    COOP = "coop"
    COCOOP = "cocoop"
    MLP_PL = "mlp_pl"
    CTP = "ctp"


class ImageMode(Enum):
    NONE = "none"
    MLP_FT = "mlp_ft"
    TFT = "tft"


@dataclass(frozen=True)
class MethodSpec:
    """Which prompt mechanism and image-feature mechanism are active."""

    prompt_mode: PromptMode
    image_mode: ImageMode
    lam: float = 0.2
    tau: float = 0.01

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"blend weight must lie in [0, 1], got {self.lam}")
        if self.prompt_mode is PromptMode.HANDCRAFTED and self.image_mode is not ImageMode.NONE:
            raise ValueError("hand-written prompts cannot combine with image-side tuning")


_METHOD_MODES: dict[str, tuple[PromptMode, ImageMode]] = {
    "clip": (PromptMode.HANDCRAFTED, ImageMode.NONE),
    "coop": (PromptMode.COOP, ImageMode.NONE),
    "cocoop": (PromptMode.COCOOP, ImageMode.NONE),
    "mlp_pl": (PromptMode.MLP_PL, ImageMode.NONE),
    "mlp_ft": (PromptMode.COOP, ImageMode.MLP_FT),
    "mlp": (PromptMode.MLP_PL, ImageMode.MLP_FT),
    "ctp": (PromptMode.CTP, ImageMode.NONE),
    "tft": (PromptMode.COOP, ImageMode.TFT),
    "full": (PromptMode.CTP, ImageMode.TFT),
}

METHOD_NAMES: tuple[str, ...] = tuple(_METHOD_MODES)


def method_spec(name: str, lam: float = 0.2, tau: float = 0.01) -> MethodSpec:
    """Look up a method by its short name (see METHOD_NAMES)."""
    if name not in _METHOD_MODES:
        raise ValueError(f"unknown method {name!r}; expected one of {', '.join(METHOD_NAMES)}")
    prompt_mode, image_mode = _METHOD_MODES[name]
    return MethodSpec(prompt_mode=prompt_mode, image_mode=image_mode, lam=lam, tau=tau)


@dataclass
class PromptSet:
    """Learnable shared context vectors plus frozen per-class word embeddings."""

    context: Tensor               # (k, d); the trainable prompt parameters
    class_tokens: Tensor          # (M, d); frozen class word embeddings
    class_names: tuple[str, ...]

    def __post_init__(self):
        if self.context.data.ndim != 2 or self.class_tokens.data.ndim != 2:
            raise ShapeError("context and class tokens must be 2-d")
        if self.context.shape[1] != self.class_tokens.shape[1]:
            raise ShapeError(
                f"context width {self.context.shape[1]} != class token width "
                f"{self.class_tokens.shape[1]}"
            )
        if self.class_tokens.shape[0] != len(self.class_names):
            raise ShapeError("one class token row per class name required")

    @property
    def num_classes(self) -> int:
        return self.class_tokens.shape[0]

    @property
    def context_length(self) -> int:
        return self.context.shape[0]

    def pooled_query(self) -> Tensor:
        """Per-class mean of the k+1 prompt token embeddings, shape (M, d).

        Recomputed from the live context tensor on every call, so it is
        never stale with respect to training updates.
        """
        rows = [
            mean_rows(concat_rows([self.context, row(self.class_tokens, i)]))
            for i in range(self.num_classes)
        ]
        return concat_rows(rows)

    @classmethod
    def for_classes(cls, weights: EncoderWeights, class_names: Sequence[str],
                    context: Tensor) -> "PromptSet":
        if context.shape[1] != weights.dim:
            raise ShapeError(f"context width {context.shape[1]} != encoder dim {weights.dim}")
        tokens = np.stack([class_token_vector(weights, name) for name in class_names])
        return cls(context=context, class_tokens=Tensor(tokens),
                   class_names=tuple(class_names))


class MetaNet:
    """Two affine maps with a rectifier between (Linear-ReLU-Linear).

    Input and output widths equal the shared feature dimension d; the
    hidden width is d/16, floored at 4.  Used as the residual generator for
    the image-conditional prompt baselines and the MLP feature-tuning
    ablations.
    """

    def __init__(self, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @staticmethod
    def hidden_width(dim: int) -> int:
        return max(4, dim // 16)

    @classmethod
    def seeded(cls, seed: int, tag: str, dim: int) -> "MetaNet":
        hidden = cls.hidden_width(dim)
        return cls(
            Tensor(keyed_normal(seed, f"{tag}.w1", (dim, hidden)), requires_grad=True),
            Tensor(keyed_normal(seed, f"{tag}.b1", (1, hidden)), requires_grad=True),
            Tensor(keyed_normal(seed, f"{tag}.w2", (hidden, dim)), requires_grad=True),
            Tensor(keyed_normal(seed, f"{tag}.b2", (1, dim)), requires_grad=True),
        )

    @classmethod
    def zeros(cls, dim: int) -> "MetaNet":
        hidden = cls.hidden_width(dim)
        return cls(
            Tensor(np.zeros((dim, hidden)), requires_grad=True),
            Tensor(np.zeros((1, hidden)), requires_grad=True),
            Tensor(np.zeros((hidden, dim)), requires_grad=True),
            Tensor(np.zeros((1, dim)), requires_grad=True),
        )

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(relu(add(matmul(x, self.w1), self.b1)), self.w2), self.b2)


@dataclass
class AttentionRecord:
    """Normalized attention weights captured during one image's forward pass.

    ``text_to_patch`` holds the row-softmaxed (M, N) weights of the prompt
    queries over patches; ``patch_to_text`` the row-softmaxed (N, M) weights
    of the patches over class embeddings.  Raw scores can be negative, so
    the normalized weights are what heatmap export consumes.
    """

    class_names: tuple[str, ...]
    grid: tuple[int, int]
    text_to_patch: np.ndarray | None = None
    patch_to_text: np.ndarray | None = None


@dataclass
class ForwardResult:
    probs: Tensor                    # (M,) class probabilities
    text_embedding: TextEmbedding    # the per-class embeddings used by the head
    attention: AttentionRecord | None = None


def _softmax_np(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_vector(logits: Tensor) -> Tensor:
    return reshape(softmax_rows(reshape(logits, (1, logits.shape[0]))), logits.shape)


def clip_probability(img: ImageFeatures, text: TextEmbedding, tau: float) -> Tensor:
    """Temperature softmax over cosine similarities of pooled image vs classes."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    m = text.num_classes
    sims = [cosine(img.pooled, row(text.per_class, i)) for i in range(m)]
    return _softmax_vector(scale(pack(sims), 1.0 / tau))


def build_coop_prompts(prompts: PromptSet) -> list[Tensor]:
    """Class i's sequence: shared context rows then its class token; length k+1."""
    return [
        concat_rows([prompts.context, row(prompts.class_tokens, i)])
        for i in range(prompts.num_classes)
    ]


def build_cocoop_prompts(prompts: PromptSet, img: ImageFeatures, net: MetaNet) -> list[Tensor]:
    """CoOp prompts with one image-conditional residual added to every
    context token of every class.  The residual is identical across classes
    by construction; only the class token differs between sequences."""
    d = img.pooled.shape[0]
    residual = net(reshape(img.pooled, (1, d)))
    shifted = add(prompts.context, residual)
    return [
        concat_rows([shifted, row(prompts.class_tokens, i)])
        for i in range(prompts.num_classes)
    ]


def ctp_attention(prompts: PromptSet, img: ImageFeatures) -> tuple[Tensor, Tensor]:
    """Prompt-query attention over patches.

    Returns the raw (M, N) score matrix (scores[i][j] is the dot product of
    class i's pooled prompt query with patch j) and the (M, d) attended
    patch mixes, each row a convex combination of patch rows.
    """
    query = prompts.pooled_query()
    scores = matmul(query, transpose(img.patches))
    regions = matmul(softmax_rows(scores), img.patches)
    return scores, regions


def build_ctp_prompts(prompts: PromptSet, img: ImageFeatures) -> tuple[list[Tensor], AttentionRecord]:
    """Class-aware prompts: class i's attended patch mix is added to each of
    class i's context tokens (class tokens stay untouched).  Unlike the
    image-conditional baseline, the residual differs per class."""
    scores, regions = ctp_attention(prompts, img)
    sequences = []
    for i in range(prompts.num_classes):
        shifted = add(prompts.context, row(regions, i))
        sequences.append(concat_rows([shifted, row(prompts.class_tokens, i)]))
    record = AttentionRecord(
        class_names=prompts.class_names,
        grid=img.grid,
        text_to_patch=_softmax_np(scores.data),
    )
    return sequences, record


def tft_augment(img: ImageFeatures, augmented_text: TextEmbedding) -> tuple[Tensor, Tensor]:
    """Patch attention over class embeddings with a residual connection.

    Returns the augmented (N, d) patch features
    ``softmax(patches @ text.T) @ text + patches`` and the raw (N, M) score
    matrix.
    """
    scores = matmul(img.patches, transpose(augmented_text.per_class))
    mixed = matmul(softmax_rows(scores), augmented_text.per_class)
    return add(mixed, img.patches), scores


def blended_probability(img: ImageFeatures, base_text: TextEmbedding,
                        augmented_pooled: Tensor, augmented_text: TextEmbedding,
                        spec: MethodSpec) -> Tensor:
    """Softmax over (cos(f, g_i) + lam * cos(f_a, g_a_i)) / tau."""
    if spec.tau <= 0:
        raise ValueError(f"temperature must be positive, got {spec.tau}")
    if spec.lam < 0:
        raise ValueError(f"blend weight must be non-negative, got {spec.lam}")
    m = base_text.num_classes
    if augmented_text.num_classes != m:
        raise ShapeError("base and augmented embeddings must cover the same classes")
    logits = []
    for i in range(m):
        base_sim = cosine(img.pooled, row(base_text.per_class, i))
        aug_sim = cosine(augmented_pooled, row(augmented_text.per_class, i))
        logits.append(add(base_sim, scale(aug_sim, spec.lam)))
    return _softmax_vector(scale(pack(logits), 1.0 / spec.tau))


def mlp_pl_prompts(prompts: PromptSet, img: ImageFeatures, net: MetaNet) -> list[Tensor]:
    """Prompt-side MLP ablation: the pooled image feature runs through the
    Linear-ReLU-Linear block and the result is added to all context tokens
    of every class, exactly where the class-aware residual would go.  The
    residual is class-independent."""
    return build_cocoop_prompts(prompts, img, net)


def mlp_ft_features(img: ImageFeatures, text: TextEmbedding, net: MetaNet) -> Tensor:
    """Image-side MLP ablation: the mean class embedding runs through the
    Linear-ReLU-Linear block and the result is added to every patch row."""
    pooled_text = mean_rows(text.per_class)
    residual = net(pooled_text)
    return add(img.patches, residual)


def _require_net(net: MetaNet | None, role: str) -> MetaNet:
    if net is None:
        raise ValueError(f"this method needs a {role} residual network")
    return net


def method_forward(spec: MethodSpec, weights: EncoderWeights, prompts: PromptSet,
                   img: ImageFeatures, prompt_net: MetaNet | None = None,
                   image_net: MetaNet | None = None) -> ForwardResult:
    """Run one image through the configured method and return probabilities.

    Pure given (weights, prompts, nets, image); safe to call concurrently.
    """
    mode, image_mode = spec.prompt_mode, spec.image_mode

    if mode in (PromptMode.HANDCRAFTED, PromptMode.COOP, PromptMode.CTP):
        base_sequences = build_coop_prompts(prompts)
    elif mode is PromptMode.COCOOP:
        base_sequences = build_cocoop_prompts(prompts, img, _require_net(prompt_net, "prompt"))
    elif mode is PromptMode.MLP_PL:
        base_sequences = mlp_pl_prompts(prompts, img, _require_net(prompt_net, "prompt"))
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unhandled prompt mode {mode}")

    record: AttentionRecord | None = None
    if mode is PromptMode.CTP:
        aug_sequences, record = build_ctp_prompts(prompts, img)
        aug_text = encode_text(aug_sequences, weights)
        if image_mode is ImageMode.NONE:
            return ForwardResult(clip_probability(img, aug_text, spec.tau), aug_text, record)
        base_text = encode_text(base_sequences, weights)
    else:
        base_text = encode_text(base_sequences, weights)
        aug_text = base_text

    if image_mode is ImageMode.NONE:
        return ForwardResult(clip_probability(img, base_text, spec.tau), base_text, record)

    if image_mode is ImageMode.TFT:
        augmented, scores = tft_augment(img, aug_text)
        if record is None:
            record = AttentionRecord(class_names=prompts.class_names, grid=img.grid)
        record.patch_to_text = _softmax_np(scores.data)
    else:  # MLP_FT
        augmented = mlp_ft_features(img, aug_text, _require_net(image_net, "image"))

    d = img.patches.shape[1]
    augmented_pooled = reshape(mean_rows(augmented), (d,))
    probs = blended_probability(img, base_text, augmented_pooled, aug_text, spec)
    return ForwardResult(probs, aug_text, record)
