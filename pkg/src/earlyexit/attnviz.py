"""Cumulative [cls] attention per layer, for inspecting exit decisions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import atomic_write_text
from .errors import InputError
from .exit_policy import ExitDecision, ExitReason
from .model import LayerTrace

PROFILE_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["tokens", "layers", "exit"],
    "additionalProperties": False,
    "properties": {
        "tokens": {"type": "array", "items": {"type": "string"}},
        "layers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["index", "scores", "predicted_label"],
                "additionalProperties": False,
                "properties": {
                    "index": {"type": "integer", "minimum": 1},
                    "scores": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    "predicted_label": {"type": "integer", "minimum": 0},
                },
            },
        },
        "exit": {
            "type": "object",
            "required": ["layer", "reason"],
            "additionalProperties": False,
            "properties": {
                "layer": {"type": "integer", "minimum": 1},
                "reason": {"enum": [r.value for r in ExitReason]},
            },
        },
    },
}


@dataclass
class AttentionProfile:
    tokens: list
    cumulative: list  # one vector per layer 1..k
    predicted_labels: list
    exit_layer: int
    exit_reason: ExitReason

    def __len__(self) -> int:
        return len(self.cumulative)


def cls_rows(trace: LayerTrace) -> np.ndarray:
    """Head-averaged attention of the [cls] query, shape (layers, seq)."""
    return np.stack([attn[:, 0, :].mean(axis=0) for attn in trace.attentions])


def cumulative_attention(
    trace: LayerTrace,
    tokens: Optional[Sequence[str]] = None,
    decision: Optional[ExitDecision] = None,
) -> AttentionProfile:
    """Running mean over layers of the head-averaged [cls] attention rows."""
    if not trace.attentions:
        raise InputError("trace holds no attention tensors")
    rows = cls_rows(trace)
    cum = np.cumsum(rows, axis=0) / np.arange(1, len(rows) + 1)[:, None]
    if tokens is None:
        tokens = [str(int(i)) for i in trace.token_ids]
    if decision is None:
        layer, reason = len(rows), ExitReason.EXHAUSTED
    else:
        layer, reason = decision.layer, decision.reason
    return AttentionProfile(list(tokens), list(cum), trace.labels, layer, reason)


def profile_to_json(profile: AttentionProfile) -> dict:
    return {
        "tokens": list(profile.tokens),
        "layers": [
            {"index": i, "scores": [float(s) for s in scores], "predicted_label": int(label)}
            for i, (scores, label) in enumerate(zip(profile.cumulative, profile.predicted_labels), start=1)
        ],
        "exit": {"layer": int(profile.exit_layer), "reason": profile.exit_reason.value},
    }


def export_profile(profile: AttentionProfile, path) -> None:
    atomic_write_text(path, json.dumps(profile_to_json(profile), indent=2) + "\n")


def load_profile(path) -> AttentionProfile:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return AttentionProfile(
        doc["tokens"],
        [np.array(layer["scores"]) for layer in doc["layers"]],
        [layer["predicted_label"] for layer in doc["layers"]],
        doc["exit"]["layer"],
        ExitReason(doc["exit"]["reason"]),
    )


def render_svg(profile: AttentionProfile, path, label_names: Optional[Sequence[str]] = None) -> None:
    """One bar chart per layer of the cumulative [cls] attention."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    k = len(profile)
    fig, axes = plt.subplots(k, 1, figsize=(max(4, 0.45 * len(profile.tokens)), 1.6 * k), squeeze=False)
    x = np.arange(len(profile.tokens))
    for i, ax in enumerate(axes[:, 0]):
        label = profile.predicted_labels[i]
        name = label_names[label] if label_names else str(label)
        ax.bar(x, profile.cumulative[i], color="tab:red" if i + 1 == profile.exit_layer else "tab:blue")
        ax.set_ylabel(f"layer {i + 1}\n{name}", fontsize=8)
        ax.set_xticks(x)
        ax.set_xticklabels(profile.tokens if i == k - 1 else [], rotation=60, fontsize=7)
    fig.suptitle(f"exit at layer {profile.exit_layer} ({profile.exit_reason.value})", fontsize=9)
    fig.tight_layout()
    tmp = Path(path).with_suffix(".tmp.svg")
    fig.savefig(tmp, format="svg")
    plt.close(fig)
    tmp.replace(path)
