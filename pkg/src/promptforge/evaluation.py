"""Base-to-new evaluation, harmonic mean, prompt discrimination, heatmap export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .encoders import ImageFeatures, encode_image
from .prompts import AttentionRecord, PromptSet, method_forward
from .training import SplitSpec, TrainedState

__all__ = [
    "EvalReport",
    "harmonic_mean",
    "evaluate",
    "evaluate_report",
    "discrimination_distance",
    "export_heatmap",
]


def harmonic_mean(base: float, new: float) -> float:
    """2ab / (a + b) on percentages; 0 when both are 0."""
    total = base + new
    if total == 0:
        return 0.0
    return 2.0 * base * new / total


def _feature(ds: Dataset, state: TrainedState, features, idx: int,
             cache: dict) -> ImageFeatures:
    if features is not None:
        return features[idx]
    if idx not in cache:
        cache[idx] = encode_image(ds.images[idx], state.weights)
    return cache[idx]


def _head_accuracy(state: TrainedState, ds: Dataset, class_ids: Sequence[int],
                   features) -> tuple[float, dict[str, float]]:
    """Top-1 accuracy with the softmax restricted to ``class_ids``."""
    for c in class_ids:
        if not 0 <= c < len(ds.class_names):
            raise ValueError(
                f"split references class id {c} outside dataset with {len(ds.class_names)} classes"
            )
    names = [ds.class_names[c] for c in class_ids]
    prompts = PromptSet.for_classes(state.weights, names, state.context)
    spec = state.spec()
    position = {c: i for i, c in enumerate(class_ids)}
    correct = {c: 0 for c in class_ids}
    total = {c: 0 for c in class_ids}
    cache: dict[int, ImageFeatures] = {}
    for idx, label in enumerate(ds.labels):
        if label not in position:
            continue
        img = _feature(ds, state, features, idx, cache)
        result = method_forward(spec, state.weights, prompts, img,
                                state.prompt_net, state.image_net)
        prediction = int(np.argmax(result.probs.data))  # ties break to lowest index
        total[label] += 1
        if prediction == position[label]:
            correct[label] += 1
    seen = sum(total.values())
    accuracy = 100.0 * sum(correct.values()) / seen if seen else 0.0
    per_class = {
        ds.class_names[c]: (100.0 * correct[c] / total[c] if total[c] else 0.0)
        for c in class_ids
    }
    return accuracy, per_class


def evaluate(state: TrainedState, ds: Dataset, split: SplitSpec, which: str,
             features: Mapping[int, ImageFeatures] | Sequence[ImageFeatures] | None = None,
             ) -> float:
    """Top-1 accuracy (%) on the base or new half of the split.

    New-class evaluation builds prompts for class names never seen in
    training and restricts the softmax to the new classes.
    """
    if which == "base":
        class_ids = split.base_classes
    elif which == "new":
        class_ids = split.new_classes
    else:
        raise ValueError(f"which must be 'base' or 'new', got {which!r}")
    accuracy, _ = _head_accuracy(state, ds, class_ids, features)
    return accuracy


def discrimination_distance(state: TrainedState, ds: Dataset,
                            features=None) -> float:
    """Mean cosine distance between each image's true-class prompt embedding
    and the other classes' embeddings, averaged over the dataset.

    Uses the method's final per-class text embeddings for each image, so
    image-conditional methods are measured on their conditioned prompts.
    """
    if len(ds) == 0 or len(ds.class_names) < 2:
        return 0.0
    prompts = PromptSet.for_classes(state.weights, ds.class_names, state.context)
    spec = state.spec()
    cache: dict[int, ImageFeatures] = {}
    distances = []
    for idx, label in enumerate(ds.labels):
        img = _feature(ds, state, features, idx, cache)
        result = method_forward(spec, state.weights, prompts, img,
                                state.prompt_net, state.image_net)
        embeddings = result.text_embedding.per_class.data
        positive = embeddings[label]
        norm_pos = max(float(np.linalg.norm(positive)), 1e-12)
        values = []
        for j in range(embeddings.shape[0]):
            if j == label:
                continue
            norm_j = max(float(np.linalg.norm(embeddings[j])), 1e-12)
            values.append(1.0 - float(positive @ embeddings[j]) / (norm_pos * norm_j))
        distances.append(float(np.mean(values)) if values else 0.0)
    return float(np.mean(distances))


@dataclass(frozen=True)
class EvalReport:
    base_acc: float
    new_acc: float
    hos: float
    per_class_acc: dict[str, float]
    discrimination: float


def evaluate_report(state: TrainedState, ds: Dataset, split: SplitSpec,
                    features=None) -> EvalReport:
    base_acc, base_per_class = _head_accuracy(state, ds, split.base_classes, features)
    new_acc, new_per_class = _head_accuracy(state, ds, split.new_classes, features)
    return EvalReport(
        base_acc=base_acc,
        new_acc=new_acc,
        hos=harmonic_mean(base_acc, new_acc),
        per_class_acc={**base_per_class, **new_per_class},
        discrimination=discrimination_distance(state, ds, features),
    )


def export_heatmap(record: AttentionRecord | None, image_id, class_id: int, path) -> Path:
    """Write one class's patch-attention row as a P2 graymap plus a CSV twin.

    The row is reshaped to the patch grid and max-normalized to [0, 1]; the
    graymap quantizes to 0..255 while the CSV keeps full precision at
    ``<path>.csv``.
    """
    if record is None or record.text_to_patch is None:
        raise ValueError("no text-side attention was captured for this method")
    if not 0 <= class_id < len(record.class_names):
        raise IndexError(f"class {class_id} out of range for {len(record.class_names)} classes")
    rows, cols = record.grid
    grid = np.asarray(record.text_to_patch, dtype=np.float64)[class_id].reshape(rows, cols)
    peak = grid.max()
    normalized = grid / peak if peak > 0 else np.zeros_like(grid)
    path = Path(path)
    with open(path, "w", encoding="ascii") as f:
        f.write("P2\n")
        f.write(f"# image {image_id} class {record.class_names[class_id]}\n")
        f.write(f"{cols} {rows}\n255\n")
        for r in normalized:
            f.write(" ".join(str(int(round(v * 255))) for v in r) + "\n")
    csv_path = Path(str(path) + ".csv")
    with open(csv_path, "w", encoding="ascii") as f:
        for r in normalized:
            f.write(",".join(format(v, ".17g") for v in r) + "\n")
    return path
