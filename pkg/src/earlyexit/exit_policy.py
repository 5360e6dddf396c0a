"""Two-stage early-exit decision engine.

Stage 1 compares the normalized entropy ("puzzlement") of the newest
classifier distribution against a threshold ``delta``.  Stage 2 is only
consulted when stage 1 does not fire; it inspects a rolling window of the
last ``window_size`` distributions with one of three trend criteria.

The engine knows nothing about the model that produces the distributions.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError, UsageError

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ProbDist:
    """Classifier output at one layer (1-based ``layer``)."""

    probs: np.ndarray
    layer: int
    logits: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 2:
            raise InputError("a distribution needs at least two classes")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
            raise InputError("probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise InputError(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def num_classes(self) -> int:
        return self.probs.size

    @property
    def label(self) -> int:
        # np.argmax returns the first maximum: lowest index wins ties
        return int(np.argmax(self.probs))

    @property
    def max_prob(self) -> float:
        return float(self.probs.max())


class Criterion(enum.Enum):
    MONOTONE_PROB = "monotone"
    MAX_RANGE = "max-range"
    STABLE_LABEL = "stable-label"


class ExitReason(enum.Enum):
    STAGE1 = "stage1"
    STAGE2_CRITERION1 = "stage2-monotone"
    STAGE2_CRITERION2 = "stage2-max-range"
    STAGE2_CRITERION3 = "stage2-stable-label"
    EXHAUSTED = "exhausted"


_STAGE2_REASON = {
    Criterion.MONOTONE_PROB: ExitReason.STAGE2_CRITERION1,
    Criterion.MAX_RANGE: ExitReason.STAGE2_CRITERION2,
    Criterion.STABLE_LABEL: ExitReason.STAGE2_CRITERION3,
}


@dataclass(frozen=True)
class ExitConfig:
    """Exit-policy settings.

    ``max_depth`` caps the number of encoder passes; reaching it without a
    firing criterion is reported as exhaustion.  With both stages disabled
    it turns the adaptive model into a plain truncated one.
    """

    delta: float = 0.5
    window_size: int = 8
    criterion: Criterion = Criterion.MONOTONE_PROB
    range_epsilon: float = 0.05
    stage1_enabled: bool = True
    stage2_enabled: bool = True
    max_depth: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.criterion, str):
            object.__setattr__(self, "criterion", Criterion(self.criterion))
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"delta must be in [0, 1], got {self.delta}")
        if self.window_size < 1:
            raise ConfigError("window_size must be positive")
        if self.stage2_enabled and self.window_size < 2:
            raise ConfigError("window_size must be >= 2 when stage 2 is enabled")
        if not self.range_epsilon > 0:
            raise ConfigError("range_epsilon must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth must be positive")

    @classmethod
    def disabled(cls, **kwargs) -> "ExitConfig":
        return cls(stage1_enabled=False, stage2_enabled=False, **kwargs)


@dataclass(frozen=True)
class ExitDecision:
    fired: bool
    layer: int
    reason: ExitReason

    def __post_init__(self):
        if self.fired == (self.reason is ExitReason.EXHAUSTED):
            raise ValueError("only a non-fired decision may carry EXHAUSTED")


def puzzlement(p, base: Optional[float] = None) -> float:
    """Normalized entropy of a distribution, in [0, 1].

    Zero entries contribute nothing (0 log 0 = 0).  The value does not depend
    on the logarithm base; ``base`` exists so that can be checked.
    """
    probs = p.probs if isinstance(p, ProbDist) else np.asarray(p, dtype=np.float64)
    c = probs.size
    if np.all(probs == probs[0]):
        return 1.0
    nz = probs[probs > 0]
    log = np.log if base is None else (lambda x: np.log(x) / math.log(base))
    num = math.fsum(nz * log(nz))
    den = float(log(np.float64(1.0 / c)))
    # abs() folds the -0.0 a one-hot input produces
    return abs(min(max(num / den, 0.0), 1.0))


def stage1_check(p, cfg: ExitConfig) -> bool:
    return puzzlement(p) < cfg.delta


class ConfidenceWindow:
    """The newest ``size`` distributions, oldest first."""

    def __init__(self, size: int):
        self.size = size
        self._items: deque[ProbDist] = deque(maxlen=size)

    def push(self, p: ProbDist) -> None:
        if self._items and p.layer != self._items[-1].layer + 1:
            raise UsageError(
                f"expected layer {self._items[-1].layer + 1}, got {p.layer}"
            )
        self._items.append(p)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    @property
    def full(self) -> bool:
        return len(self._items) == self.size

    def labels(self) -> list[int]:
        return [p.label for p in self._items]

    def max_probs(self) -> np.ndarray:
        return np.array([p.max_prob for p in self._items])

    def class_trajectory(self, cls: int) -> np.ndarray:
        return np.array([p.probs[cls] for p in self._items])


def _is_monotone(seq: np.ndarray) -> bool:
    diffs = np.diff(seq)
    return bool(np.all(diffs >= 0) or np.all(diffs <= 0))


def stage2_check(window: ConfidenceWindow, cfg: ExitConfig) -> bool:
    if len(window) < cfg.window_size:
        return False
    items = list(window)[-cfg.window_size:]
    if cfg.criterion is Criterion.MONOTONE_PROB:
        cls = items[-1].label
        return _is_monotone(np.array([p.probs[cls] for p in items]))
    if cfg.criterion is Criterion.MAX_RANGE:
        maxes = np.array([p.max_prob for p in items])
        return bool(maxes.max() - maxes.min() < cfg.range_epsilon)
    labels = {p.label for p in items}
    return len(labels) == 1


class ExitEngine:
    """Feeds per-layer distributions through the two stages.

    One engine per input; it refuses further observations once it has fired.
    """

    def __init__(self, cfg: ExitConfig):
        self.cfg = cfg
        self.window = ConfidenceWindow(cfg.window_size)
        self.last_layer = 0
        self.decision: Optional[ExitDecision] = None

    def observe(self, p) -> ExitDecision:
        if self.decision is not None and self.decision.fired:
            raise UsageError("engine already fired; start a new one")
        if not isinstance(p, ProbDist):
            p = ProbDist(p, self.last_layer + 1)
        if p.layer != self.last_layer + 1:
            raise UsageError(f"expected layer {self.last_layer + 1}, got {p.layer}")
        self.window.push(p)
        self.last_layer = p.layer

        cfg = self.cfg
        if cfg.stage1_enabled and stage1_check(p, cfg):
            decision = ExitDecision(True, p.layer, ExitReason.STAGE1)
        elif cfg.stage2_enabled and stage2_check(self.window, cfg):
            decision = ExitDecision(True, p.layer, _STAGE2_REASON[cfg.criterion])
        else:
            decision = ExitDecision(False, p.layer, ExitReason.EXHAUSTED)
        self.decision = decision
        return decision


def run_policy(stream, cfg: ExitConfig) -> ExitDecision:
    """Replay a whole stream and return the first firing decision.

    If nothing fires, the decision for the last observed layer is returned.
    ``cfg.max_depth`` truncates the stream.
    """
    engine = ExitEngine(cfg)
    decision = None
    for i, p in enumerate(stream):
        if cfg.max_depth is not None and i >= cfg.max_depth:
            break
        decision = engine.observe(p)
        if decision.fired:
            break
    if decision is None:
        raise InputError("empty stream")
    return decision
