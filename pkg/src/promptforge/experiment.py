"""Experiment orchestration: config files, method sweeps, report emission.

Config files are flat ``key=value`` text; the recognized keys are exactly
the :class:`ExperimentConfig` fields (with ``lambda`` spelled as in the
file format for the blend weight).  Reports are a per-seed CSV plus a
seed-averaged Markdown table, both reproducible bitwise from
(config, seeds).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .data import Dataset, generate_synthetic, load_directory
from .encoders import EncoderWeights, encode_image
from .evaluation import EvalReport, evaluate_report
from .prompts import METHOD_NAMES
from .training import SplitSpec, TrainConfig, train

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "format_config",
    "read_report_config",
    "run_experiment",
]


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"          # "synthetic" or a directory path
    classes: int = 8
    per_class: int = 64
    data_seed: int = 0
    methods: tuple[str, ...] = ("coop", "cocoop", "mlp", "full")
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 10
    base_lr: float = 0.002
    lam: float = 0.2
    tau: float = 0.01
    shots: int = 16
    out_dir: str = "promptforge-report"

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for name in self.methods:
            if name not in METHOD_NAMES:
                raise ValueError(f"unknown method {name!r}; expected one of {', '.join(METHOD_NAMES)}")


def _parse_methods(value: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _parse_seeds(value: str) -> tuple[int, ...]:
    return tuple(int(part) for part in value.split(",") if part.strip())


_PARSERS = {
    "dataset": str,
    "classes": int,
    "per_class": int,
    "data_seed": int,
    "methods": _parse_methods,
    "seeds": _parse_seeds,
    "epochs": int,
    "base_lr": float,
    "lam": float,
    "tau": float,
    "shots": int,
    "out_dir": str,
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat key=value text; unknown keys are an error."""
    values: dict[str, object] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "lambda":
            key = "lam"
        if key not in _PARSERS:
            raise ValueError(f"line {line_no}: unknown config key {key!r}")
        values[key] = _PARSERS[key](value)
    return ExperimentConfig(**values)


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical key=value text that re-parses to an equal config."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        key = "lambda" if f.name == "lam" else f.name
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def read_report_config(markdown: str) -> ExperimentConfig:
    """Recover the config echoed inside a summary's fenced block."""
    inside = False
    lines = []
    for line in markdown.splitlines():
        if line.strip() == "```":
            if inside:
                break
            inside = True
            continue
        if inside:
            lines.append(line)
    if not lines:
        raise ValueError("no fenced config block found in report")
    return parse_config("\n".join(lines))


def _load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "synthetic":
        return generate_synthetic(cfg.classes, cfg.per_class, cfg.data_seed)
    return load_directory(cfg.dataset)


def _write_csv(path: Path, rows: list[tuple[str, int, EvalReport]]) -> None:
    lines = ["method,seed,base,new,hos,discrimination"]
    for method, seed, rep in rows:
        lines.append(
            f"{method},{seed},{rep.base_acc:.4f},{rep.new_acc:.4f},"
            f"{rep.hos:.4f},{rep.discrimination:.6f}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _write_summary(path: Path, cfg: ExperimentConfig,
                   rows: list[tuple[str, int, EvalReport]]) -> None:
    out = ["# Benchmark summary", "", "Configuration:", "", "```",
           format_config(cfg).rstrip("\n"), "```", ""]
    out.append("| Method | Base | New | Hos | Discrimination |")
    out.append("|---|---:|---:|---:|---:|")
    for method in cfg.methods:
        cells = [rep for m, _, rep in rows if m == method]
        n = len(cells)
        base = sum(r.base_acc for r in cells) / n
        new = sum(r.new_acc for r in cells) / n
        hos = sum(r.hos for r in cells) / n
        disc = sum(r.discrimination for r in cells) / n
        out.append(f"| {method} | {base:.2f} | {new:.2f} | {hos:.2f} | {disc:.4f} |")
    out.append("")
    path.write_text("\n".join(out), encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Train every method x seed cell on base classes, evaluate base and new,
    and write ``results.csv``, ``summary.md`` and per-cell checkpoints.

    Returns the output directory.  Deterministic: identical (config, seeds)
    produce bitwise-identical reports and checkpoints.
    """
    out = Path(out_dir) if out_dir is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_dataset(cfg)
    split = SplitSpec.halves(len(ds.class_names))
    # Frozen encoders and image features depend only on the seed; share them
    # across methods.
    encoder_cache: dict[int, tuple[EncoderWeights, list]] = {}
    rows: list[tuple[str, int, EvalReport]] = []
    for method in cfg.methods:
        for seed in cfg.seeds:
            if seed not in encoder_cache:
                weights = EncoderWeights(seed)
                encoder_cache[seed] = (
                    weights,
                    [encode_image(img, weights) for img in ds.images],
                )
            weights, features = encoder_cache[seed]
            train_cfg = TrainConfig(
                epochs=cfg.epochs, base_lr=cfg.base_lr, lam=cfg.lam, tau=cfg.tau,
                shots=cfg.shots, seed=seed, method=method,
            )
            state = train(ds, split, train_cfg, weights=weights, features=features)
            state.save(out / f"{method}_seed{seed}.ckpt")
            rows.append((method, seed, evaluate_report(state, ds, split, features=features)))
    _write_csv(out / "results.csv", rows)
    _write_summary(out / "summary.md", cfg, rows)
    return out
