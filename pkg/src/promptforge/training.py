"""Few-shot training loop over base classes.

Cross-entropy on the configured method's class probabilities, plain SGD
with a cosine-decayed learning rate, deterministic seeded sampling.  Only
prompt context vectors and residual networks train; encoder weights stay
bitwise constant across a run.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import ceil, cos, pi
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .encoders import EncoderWeights, ImageFeatures, encode_image, handcrafted_context
from .prompts import (
    METHOD_NAMES,
    ImageMode,
    MetaNet,
    MethodSpec,
    PromptMode,
    PromptSet,
    method_forward,
    method_spec,
)
from .seeding import keyed_generator, keyed_normal
from .tensor import ShapeError, Tensor, add, backward, log, pick, scale

__all__ = [
    "CONTEXT_TOKENS",
    "BATCH_SIZE",
    "TrainConfig",
    "SplitSpec",
    "FewShotSample",
    "sample_few_shot",
    "contrastive_loss",
    "lr_at",
    "train",
    "TrainedState",
]

CONTEXT_TOKENS = 4
BATCH_SIZE = 8

_CHECKPOINT_MAGIC = "promptforge-checkpoint 1"


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; the config-file key for ``lam`` is ``lambda``."""

    epochs: int = 10
    base_lr: float = 0.002
    lam: float = 0.2
    tau: float = 0.01
    shots: int = 16
    seed: int = 0
    method: str = "full"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.shots < 1:
            raise ValueError(f"shots must be positive, got {self.shots}")
        if self.method not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.method!r}")
        method_spec(self.method, self.lam, self.tau)  # validates lam and tau

    def spec(self) -> MethodSpec:
        return method_spec(self.method, self.lam, self.tau)


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint base/new halves of a dataset's class ids."""

    base_classes: tuple[int, ...]
    new_classes: tuple[int, ...]

    def __post_init__(self):
        base, new = set(self.base_classes), set(self.new_classes)
        if base & new:
            raise ValueError(f"base and new classes overlap: {sorted(base & new)}")
        total = len(self.base_classes) + len(self.new_classes)
        if base | new != set(range(total)):
            raise ValueError("base and new classes must jointly cover 0..n-1")
        if abs(len(base) - len(new)) > 1:
            raise ValueError("base and new class counts may differ by at most 1")

    @classmethod
    def halves(cls, num_classes: int) -> "SplitSpec":
        cut = ceil(num_classes / 2)
        return cls(tuple(range(cut)), tuple(range(cut, num_classes)))


@dataclass(frozen=True)
class FewShotSample:
    """Exactly ``shots`` dataset indices per base class, drawn without replacement."""

    per_class: dict[int, tuple[int, ...]]

    def items(self) -> list[tuple[int, int]]:
        """Flat (dataset index, class id) pairs in class order."""
        return [(idx, c) for c, indices in self.per_class.items() for idx in indices]


def sample_few_shot(ds: Dataset, split: SplitSpec, shots: int, seed: int) -> FewShotSample:
    rng = keyed_generator(seed, "fewshot")
    per_class: dict[int, tuple[int, ...]] = {}
    for c in split.base_classes:
        indices = ds.class_indices(c)
        if len(indices) < shots:
            raise ValueError(
                f"class {ds.class_names[c]!r} has {len(indices)} samples but {shots} shots requested"
            )
        chosen = rng.choice(len(indices), size=shots, replace=False)
        per_class[c] = tuple(indices[j] for j in chosen)
    return FewShotSample(per_class=per_class)


def contrastive_loss(probs: Tensor, label: int) -> Tensor:
    """Cross-entropy -log p[label] with the library's log floor."""
    if probs.data.ndim != 1:
        raise ShapeError(f"probabilities must be 1-d, got shape {probs.shape}")
    if not 0 <= label < probs.shape[0]:
        raise IndexError(f"label {label} out of range for {probs.shape[0]} classes")
    return scale(log(pick(probs, int(label))), -1.0)


def lr_at(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine-decayed learning rate: base * 0.5 * (1 + cos(pi * step / total))."""
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    return base_lr * 0.5 * (1.0 + cos(pi * step / total_steps))


def _feature_lookup(ds: Dataset, weights: EncoderWeights, features):
    if features is not None:
        return lambda idx: features[idx]
    cache: dict[int, ImageFeatures] = {}

    def lookup(idx: int) -> ImageFeatures:
        if idx not in cache:
            cache[idx] = encode_image(ds.images[idx], weights)
        return cache[idx]

    return lookup


def train(ds: Dataset, split: SplitSpec, cfg: TrainConfig,
          weights: EncoderWeights | None = None,
          features: Mapping[int, ImageFeatures] | Sequence[ImageFeatures] | None = None,
          ) -> "TrainedState":
    """Train the configured method on the base classes of ``ds``.

    Deterministic given (ds, split, cfg): sampling, initialization and the
    update order all derive from cfg.seed.  ``weights``/``features`` may be
    supplied to share frozen encoder work across runs; they never change.
    """
    spec = cfg.spec()
    w = weights if weights is not None else EncoderWeights(cfg.seed)
    sample = sample_few_shot(ds, split, cfg.shots, cfg.seed)
    base_names = [ds.class_names[c] for c in split.base_classes]

    if spec.prompt_mode is PromptMode.HANDCRAFTED:
        context = handcrafted_context(w)
    else:
        context = Tensor(
            keyed_normal(cfg.seed, "train.context", (CONTEXT_TOKENS, w.dim)),
            requires_grad=True,
        )
    prompt_net = (
        MetaNet.seeded(cfg.seed, "train.prompt_net", w.dim)
        if spec.prompt_mode in (PromptMode.COCOOP, PromptMode.MLP_PL)
        else None
    )
    image_net = (
        MetaNet.seeded(cfg.seed, "train.image_net", w.dim)
        if spec.image_mode is ImageMode.MLP_FT
        else None
    )
    prompts = PromptSet.for_classes(w, base_names, context)

    params: list[Tensor] = [context] if context.requires_grad else []
    if prompt_net is not None:
        params += prompt_net.parameters()
    if image_net is not None:
        params += image_net.parameters()

    label_of = {c: i for i, c in enumerate(split.base_classes)}
    items = [(idx, label_of[c]) for idx, c in sample.items()]
    lookup = _feature_lookup(ds, w, features)

    steps_per_epoch = ceil(len(items) / BATCH_SIZE)
    total_steps = cfg.epochs * steps_per_epoch
    order_rng = keyed_generator(cfg.seed, "batch-order")
    history: list[float] = []
    step = 0
    for _ in range(cfg.epochs):
        perm = order_rng.permutation(len(items))
        epoch_losses: list[float] = []
        for start in range(0, len(items), BATCH_SIZE):
            batch = [items[j] for j in perm[start:start + BATCH_SIZE]]
            for p in params:
                p.zero_grad()
            sample_losses = []
            for idx, y in batch:
                result = method_forward(spec, w, prompts, lookup(idx), prompt_net, image_net)
                sample_losses.append(contrastive_loss(result.probs, y))
            total = sample_losses[0]
            for extra in sample_losses[1:]:
                total = add(total, extra)
            batch_loss = scale(total, 1.0 / len(batch))
            backward(batch_loss)
            lr = lr_at(step, total_steps, cfg.base_lr)
            for p in params:
                p.data -= lr * p.grad
            step += 1
            epoch_losses.append(batch_loss.item())
        history.append(float(np.mean(epoch_losses)))

    return TrainedState(
        config=cfg,
        weights=w,
        context=context,
        prompt_net=prompt_net,
        image_net=image_net,
        base_class_names=tuple(base_names),
        loss_history=tuple(history),
    )


@dataclass
class TrainedState:
    """Learned parameters plus everything needed to rebuild the method."""

    config: TrainConfig
    weights: EncoderWeights
    context: Tensor
    prompt_net: MetaNet | None = None
    image_net: MetaNet | None = None
    base_class_names: tuple[str, ...] | None = None
    loss_history: tuple[float, ...] = field(default_factory=tuple)

    def spec(self) -> MethodSpec:
        return self.config.spec()

    def learnable_parameters(self) -> list[Tensor]:
        params = [self.context] if self.context.requires_grad else []
        if self.prompt_net is not None:
            params += self.prompt_net.parameters()
        if self.image_net is not None:
            params += self.image_net.parameters()
        return params

    def _named_arrays(self) -> list[tuple[str, np.ndarray]]:
        named = [("context", self.context.data)]
        for label, net in (("prompt_net", self.prompt_net), ("image_net", self.image_net)):
            if net is not None:
                named += [
                    (f"{label}.w1", net.w1.data),
                    (f"{label}.b1", net.b1.data),
                    (f"{label}.w2", net.w2.data),
                    (f"{label}.b2", net.b2.data),
                ]
        return named

    def save(self, path) -> None:
        """Write a checkpoint: textual config header, then shape-prefixed
        little-endian float64 dumps of the learnable parameters."""
        cfg, w = self.config, self.weights
        named = self._named_arrays()
        header_lines = [
            _CHECKPOINT_MAGIC,
            f"method={cfg.method}",
            f"epochs={cfg.epochs}",
            f"base_lr={cfg.base_lr!r}",
            f"lambda={cfg.lam!r}",
            f"tau={cfg.tau!r}",
            f"shots={cfg.shots}",
            f"seed={cfg.seed}",
            f"encoder_dim={w.dim}",
            f"encoder_heads={w.heads}",
            f"encoder_blocks={w.blocks}",
            f"encoder_patch={w.patch_size}",
            f"encoder_vocab={w.vocab_size}",
            "params=" + ",".join(name for name, _ in named),
            "end",
        ]
        with open(path, "wb") as f:
            f.write(("\n".join(header_lines) + "\n").encode("utf-8"))
            for _, arr in named:
                f.write(struct.pack("<q", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
                f.write(arr.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TrainedState":
        with open(path, "rb") as f:
            data = f.read()
        end_marker = b"\nend\n"
        cut = data.find(end_marker)
        if cut < 0 or not data.startswith(_CHECKPOINT_MAGIC.encode("utf-8")):
            raise ValueError(f"{path}: not a promptforge checkpoint")
        header = data[:cut].decode("utf-8").splitlines()[1:]
        fields = dict(line.split("=", 1) for line in header)
        cfg = TrainConfig(
            epochs=int(fields["epochs"]),
            base_lr=float(fields["base_lr"]),
            lam=float(fields["lambda"]),
            tau=float(fields["tau"]),
            shots=int(fields["shots"]),
            seed=int(fields["seed"]),
            method=fields["method"],
        )
        weights = EncoderWeights(
            int(fields["seed"]),
            dim=int(fields["encoder_dim"]),
            heads=int(fields["encoder_heads"]),
            blocks=int(fields["encoder_blocks"]),
            patch_size=int(fields["encoder_patch"]),
            vocab_size=int(fields["encoder_vocab"]),
        )
        offset = cut + len(end_marker)
        arrays: dict[str, np.ndarray] = {}
        for name in fields["params"].split(","):
            (ndim,) = struct.unpack_from("<q", data, offset)
            offset += 8
            shape = struct.unpack_from(f"<{ndim}q", data, offset)
            offset += 8 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            arrays[name] = np.frombuffer(data, "<f8", count, offset).reshape(shape).copy()
            offset += 8 * count
        spec = cfg.spec()
        trainable = spec.prompt_mode is not PromptMode.HANDCRAFTED
        context = Tensor(arrays["context"], requires_grad=trainable)

        def rebuild(label: str) -> MetaNet | None:
            if f"{label}.w1" not in arrays:
                return None
            return MetaNet(*(Tensor(arrays[f"{label}.{part}"], requires_grad=True)
                             for part in ("w1", "b1", "w2", "b2")))

        return cls(
            config=cfg,
            weights=weights,
            context=context,
            prompt_net=rebuild("prompt_net"),
            image_net=rebuild("image_net"),
        )
