"""Accuracy versus computation-cost evaluation.

Cost is counted in encoder passes: an input that exits after ``k`` of
``M`` passes costs ``k / M``.  The classifier head is ignored, it is a few
thousand multiply-accumulates against millions per pass
(see :func:`earlyexit.model.flops_estimate`).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import EncodedDataset, atomic_write_text
from .errors import ConfigError, InputError
from .exit_policy import ExitConfig, run_policy
from .model import SharedEncoderClassifier, forward_adaptive, forward_full

DEFAULT_DELTAS = tuple(round(0.1 * i, 1) for i in range(11))


def stages_label(cfg: ExitConfig) -> str:
    return {
        (True, True): "s1s2",
        (True, False): "s1",
        (False, True): "s2",
        (False, False): "none",
    }[(cfg.stage1_enabled, cfg.stage2_enabled)]


def criterion_label(cfg: ExitConfig) -> str:
    return cfg.criterion.value if cfg.stage2_enabled else "none"


@dataclass
class CurvePoint:
    delta: float
    accuracy: float
    mean_cost_ratio: float
    exit_histogram: list  # counts for layers 1..M
    criterion: str = "none"
    stages: str = "s1s2"

    @property
    def depth(self) -> int:
        return len(self.exit_histogram)

    @property
    def mean_exit_layer(self) -> float:
        return self.mean_cost_ratio * self.depth


@dataclass(frozen=True)
class SweepConfig:
    deltas: tuple = DEFAULT_DELTAS
    exit_template: ExitConfig = field(default_factory=ExitConfig)

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        if not deltas:
            raise ConfigError("delta grid is empty")
        if list(deltas) != sorted(deltas):
            raise ConfigError("delta grid must be sorted ascending")
        if deltas[0] < 0 or deltas[-1] > 1:
            raise ConfigError("delta grid values must lie in [0, 1]")
        object.__setattr__(self, "deltas", deltas)


def _check_classes(params: SharedEncoderClassifier, dataset: EncodedDataset) -> None:
    if dataset.num_classes != params.cfg.num_classes:
        raise ConfigError(
            f"dataset has {dataset.num_classes} classes, model has {params.cfg.num_classes}"
        )
    if len(dataset) == 0:
        raise InputError("evaluation set is empty")


def _summarize(labels, layers, gold, depth, exit_cfg) -> CurvePoint:
    labels, layers = np.asarray(labels), np.asarray(layers)
    hist = np.bincount(layers - 1, minlength=depth)
    return CurvePoint(
        delta=exit_cfg.delta,
        accuracy=float(np.mean(labels == gold)),
        mean_cost_ratio=float(np.sum(np.arange(1, depth + 1) * hist) / (depth * len(layers))),
        exit_histogram=hist.tolist(),
        criterion=criterion_label(exit_cfg),
        stages=stages_label(exit_cfg),
    )


def evaluate(params: SharedEncoderClassifier, dataset: EncodedDataset, exit_cfg: ExitConfig) -> CurvePoint:
    """Run every example through the adaptive model, one at a time."""
    _check_classes(params, dataset)
    labels, layers = [], []
    for ids in dataset.ids:
        label, decision, _ = forward_adaptive(ids, params, exit_cfg)
        labels.append(label)
        layers.append(decision.layer)
    return _summarize(labels, layers, dataset.labels, params.cfg.depth, exit_cfg)


def full_traces(params: SharedEncoderClassifier, dataset: EncodedDataset) -> list:
    return [forward_full(ids, params).dists for ids in dataset.ids]


def sweep(params: SharedEncoderClassifier, dataset: EncodedDataset, cfg: SweepConfig, traces=None) -> list:
    """One curve point per delta.

    Each input is run through the full model once and its per-layer
    distributions are replayed through the policy for every delta.  Since
    a pass never depends on later ones, this equals calling
    :func:`evaluate` per delta.
    """
    _check_classes(params, dataset)
    if traces is None:
        traces = full_traces(params, dataset)
    points = []
    for delta in cfg.deltas:
        exit_cfg = replace(cfg.exit_template, delta=delta)
        decisions = [run_policy(dists, exit_cfg) for dists in traces]
        labels = [dists[d.layer - 1].label for dists, d in zip(traces, decisions)]
        layers = [d.layer for d in decisions]
        points.append(_summarize(labels, layers, dataset.labels, params.cfg.depth, exit_cfg))
    return points


@dataclass
class BaselinePoint:
    depth: int
    accuracy: float
    cost_ratio: float


def truncated_baseline(params: SharedEncoderClassifier, dataset: EncodedDataset, depths: Sequence[int]) -> list:
    """Fixed-depth models sharing the trained weights, no exit criteria."""
    m = params.cfg.depth
    for d in depths:
        if not 1 <= d <= m:
            raise ConfigError(f"depth {d} outside [1, {m}]")
    out = []
    for d in depths:
        point = evaluate(params, dataset, ExitConfig.disabled(max_depth=d))
        out.append(BaselinePoint(d, point.accuracy, d / m))
    return out


CURVES_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "required": ["delta", "accuracy", "cost_ratio", "exit_histogram", "criterion", "stages"],
        "additionalProperties": False,
        "properties": {
            "delta": {"type": "number", "minimum": 0, "maximum": 1},
            "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
            "cost_ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "exit_histogram": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "criterion": {"enum": ["monotone", "max-range", "stable-label", "none"]},
            "stages": {"enum": ["s1s2", "s1", "s2", "none"]},
        },
    },
}


def _point_to_json(p: CurvePoint) -> dict:
    return {
        "delta": p.delta,
        "accuracy": p.accuracy,
        "cost_ratio": p.mean_cost_ratio,
        "exit_histogram": list(p.exit_histogram),
        "criterion": p.criterion,
        "stages": p.stages,
    }


def curves_to_csv(points: Sequence[CurvePoint]) -> str:
    depth = points[0].depth
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["delta", "accuracy", "cost_ratio"] + [f"layer_{i}" for i in range(1, depth + 1)])
    for p in points:
        writer.writerow([repr(p.delta), repr(p.accuracy), repr(p.mean_cost_ratio), *p.exit_histogram])
    return buf.getvalue()


def export_curves(points: Sequence[CurvePoint], path, format: Optional[str] = None) -> None:
    """Write points as CSV or JSON (inferred from the suffix by default)."""
    if not points:
        raise InputError("no curve points to export")
    path = Path(path)
    format = format or path.suffix.lstrip(".").lower()
    if format == "csv":
        text = curves_to_csv(points)
    elif format == "json":
        text = json.dumps([_point_to_json(p) for p in points], indent=2) + "\n"
    else:
        raise ConfigError(f"unknown curve format {format!r}")
    atomic_write_text(path, text)


def read_curves(path, format: Optional[str] = None) -> list:
    path = Path(path)
    format = format or path.suffix.lstrip(".").lower()
    if format == "json":
        with open(path, encoding="utf-8") as f:
            return [
                CurvePoint(
                    d["delta"], d["accuracy"], d["cost_ratio"], d["exit_histogram"], d["criterion"], d["stages"]
                )
                for d in json.load(f)
            ]
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    return [
        CurvePoint(float(r[0]), float(r[1]), float(r[2]), [int(c) for c in r[3:]])
        for r in rows[1:]
    ]


def format_table(points: Sequence[CurvePoint]) -> str:
    lines = []
    if points:
        lines.append(f"criterion={points[0].criterion} stages={points[0].stages}")
    lines.append(f"{'delta':>6} {'accuracy':>9} {'cost':>7}")
    lines += [f"{p.delta:>6.2f} {p.accuracy:>9.4f} {p.mean_cost_ratio:>7.4f}" for p in points]
    return "\n".join(lines)
