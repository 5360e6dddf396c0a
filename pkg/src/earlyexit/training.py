"""Joint training of every exit with learnable per-layer loss weights.

Each pass ``i`` contributes a cross-entropy loss ``L_i``.  Passes
``1..M-1`` are weighted by ``sigmoid(t_i)`` and the last pass takes the
remainder ``M - sum(sigmoid(t_i))`` so the weights always sum to ``M``.
The ``t_i`` are trained by the same optimizer as the model weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import EncodedDataset
from .errors import ConfigError, InputError, NumericError, UsageError
from .exit_policy import ProbDist
from .model import LayerTrace, SharedEncoderClassifier

logger = logging.getLogger(__name__)

LOSS_CEILING = 50.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 32
    epochs: int = 15
    seed: int = 0
    t_init: float = 4.0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


def exit_loss(p: ProbDist, gold: int) -> float:
    """Cross-entropy of one exit, capped at ``LOSS_CEILING``."""
    if not 0 <= gold < p.num_classes:
        raise InputError(f"label {gold} outside [0, {p.num_classes})")
    prob = p.probs[gold]
    if prob <= 0.0:
        return LOSS_CEILING
    return min(-math.log(prob), LOSS_CEILING)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def layer_weights(t, depth: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if depth < 1:
        raise ConfigError("depth must be >= 1")
    if t.size != depth - 1:
        raise InputError(f"expected {depth - 1} weight logits, got {t.size}")
    head = sigmoid(t)
    return np.append(head, depth - head.sum())


@dataclass
class LossReport:
    layer_losses: np.ndarray
    weights: np.ndarray
    total: float


def total_loss(trace: LayerTrace, gold: int, t, depth: int) -> LossReport:
    if len(trace) < depth:
        raise UsageError(f"trace has {len(trace)} layers, training needs {depth}")
    losses = np.array([exit_loss(p, gold) for p in trace.dists[:depth]])
    w = layer_weights(t, depth)
    return LossReport(losses, w, float(np.dot(w, losses)))


def torch_layer_weights(t: torch.Tensor, depth: int) -> torch.Tensor:
    head = torch.sigmoid(t)
    return torch.cat([head, (depth - head.sum()).reshape(1)])


def weighted_loss(logits: torch.Tensor, labels: torch.Tensor, t: torch.Tensor):
    """Differentiable batch loss.

    ``logits`` is (batch, depth, classes).  Returns the batch mean of the
    per-sample weighted total, the per-layer mean losses and the weights.
    """
    depth = logits.shape[1]
    logp = torch.log_softmax(logits, dim=-1)
    gold = labels.view(-1, 1, 1).expand(-1, depth, 1)
    per_sample = (-logp.gather(-1, gold).squeeze(-1)).clamp(max=LOSS_CEILING)
    layer_means = per_sample.mean(dim=0)
    w = torch_layer_weights(t, depth)
    return (w * layer_means).sum(), layer_means, w


@dataclass
class EpochMetrics:
    epoch: int
    total: float
    layer_losses: list
    weights: list

    def csv_line(self) -> str:
        values = [self.total, *self.layer_losses, *self.weights]
        return ",".join([str(self.epoch)] + [repr(float(v)) for v in values])


def metrics_header(depth: int) -> str:
    cols = ["epoch", "total"]
    cols += [f"loss_{i}" for i in range(1, depth + 1)]
    cols += [f"w_{i}" for i in range(1, depth + 1)]
    return ",".join(cols)


@dataclass
class TrainResult:
    params: SharedEncoderClassifier
    history: list = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [m.total for m in self.history]


def train(dataset: EncodedDataset, params: SharedEncoderClassifier, cfg: TrainConfig) -> TrainResult:
    """Train all exits jointly, in place.  Deterministic given ``cfg.seed``."""
    n = len(dataset)
    if n == 0:
        raise InputError("cannot train on an empty dataset")
    if dataset.num_classes != params.cfg.num_classes:
        raise ConfigError(
            f"dataset has {dataset.num_classes} classes, model has {params.cfg.num_classes}"
        )
    depth = params.cfg.depth
    ids = torch.as_tensor(dataset.ids)
    labels = torch.as_tensor(dataset.labels)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(params.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.adam_eps)
    result = TrainResult(params)

    params.train()
    try:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            for epoch in range(1, cfg.epochs + 1):
                order = rng.permutation(n)
                total_sum = 0.0
                layer_sum = torch.zeros(depth, dtype=torch.float64)
                for start in range(0, n, cfg.batch_size):
                    batch = torch.as_tensor(order[start:start + cfg.batch_size])
                    total, layer_means, _ = weighted_loss(params(ids[batch]), labels[batch], params.exit_logits)
                    if not torch.isfinite(total):
                        raise NumericError(f"non-finite loss in epoch {epoch}")
                    opt.zero_grad()
                    total.backward()
                    opt.step()
                    total_sum += total.item() * len(batch)
                    layer_sum += layer_means.detach().to(torch.float64) * len(batch)
                with torch.no_grad():
                    w = torch_layer_weights(params.exit_logits, depth).to(torch.float64)
                metrics = EpochMetrics(epoch, total_sum / n, (layer_sum / n).tolist(), w.tolist())
                logger.info("epoch %d loss %.5f", epoch, metrics.total)
                result.history.append(metrics)
    finally:
        params.eval()
    return result


@dataclass
class AuditReport:
    max_rel_error: float
    n_coords: int
    exit_logit_rel_error: float  # finite differences vs the closed form for t
    analytic: np.ndarray
    numeric: np.ndarray
    names: list


def _sample_loss(params, ids, label):
    logits = params(ids)
    return weighted_loss(logits, label, params.exit_logits)


def gradient_audit(
    params: SharedEncoderClassifier,
    token_ids,
    label: int,
    h: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
    floor: float = 1e-5,
) -> AuditReport:
    """Compare autograd gradients of the total loss with central differences.

    Every exit-weight logit is checked, plus random coordinates spread over
    all backbone tensors (embedding rows restricted to the tokens present).
    The exit-weight gradients are also compared against the closed form
    ``sigmoid'(t_i) * (L_i - L_M)``.

    Relative errors use ``max(|analytic|, |numeric|, floor)`` as the
    denominator: some gradients are exactly zero (a key bias shifts every
    attention score equally) and their finite-difference estimate is pure
    round-off.
    """
    if params.cfg.dtype != "float64":
        raise ConfigError("gradient audit needs a float64 model")
    if not 1e-6 <= h <= 1e-4:
        raise ConfigError("perturbation must lie in [1e-6, 1e-4]")
    was_training = params.training
    params.eval()
    ids = torch.as_tensor(np.asarray(token_ids), dtype=torch.long)[None]
    gold = torch.tensor([label])
    rng = np.random.default_rng(seed)

    named = dict(params.named_parameters())
    loss, layer_losses, _ = _sample_loss(params, ids, gold)
    grads = dict(zip(named, torch.autograd.grad(loss, list(named.values()))))

    coords = [("exit_logits", i) for i in range(named["exit_logits"].numel())]
    present = np.unique(ids.numpy())
    pools = []
    for name, p in named.items():
        if name == "exit_logits":
            continue
        if name == "word_embeddings":
            cols = p.shape[1]
            flat = (present[:, None] * cols + np.arange(cols)).ravel()
        else:
            flat = np.arange(p.numel())
        pools.append([(name, int(j)) for j in rng.permutation(flat)])
    # round-robin over tensors so small ones are covered too
    depth = 0
    while len(coords) < n_coords and any(depth < len(pool) for pool in pools):
        coords.extend(pool[depth] for pool in pools if depth < len(pool))
        depth += 1

    analytic, numeric = [], []
    with torch.no_grad():
        for name, j in coords:
            flat = named[name].view(-1)
            orig = flat[j].item()
            flat[j] = orig + h
            plus = _sample_loss(params, ids, gold)[0].item()
            flat[j] = orig - h
            minus = _sample_loss(params, ids, gold)[0].item()
            flat[j] = orig
            analytic.append(grads[name].view(-1)[j].item())
            numeric.append((plus - minus) / (2 * h))
    analytic, numeric = np.array(analytic), np.array(numeric)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)

    t = named["exit_logits"].detach().numpy()
    L = layer_losses.detach().numpy()
    s = sigmoid(t)
    closed = s * (1 - s) * (L[:-1] - L[-1])
    n_t = t.size
    t_num = numeric[:n_t]
    t_rel = np.abs(closed - t_num) / np.maximum(np.maximum(np.abs(closed), np.abs(t_num)), floor)

    params.train(was_training)
    return AuditReport(
        float(rel.max()),
        len(coords),
        float(t_rel.max()) if n_t else 0.0,
        analytic,
        numeric,
        [f"{n}[{j}]" for n, j in coords],
    )
