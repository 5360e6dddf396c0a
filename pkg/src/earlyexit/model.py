"""Parameter-shared transformer classifier with a classifier after every pass.

One post-LN encoder block is applied ``depth`` times.  The [cls] position
of each intermediate hidden state is fed to the same linear classifier, so
the model yields one distribution per pass without extra parameters
(apart from the scalar loss-weight logits used during training).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import CLS_ID, PAD_ID
from .errors import ConfigError, InputError, NumericError, UsageError
from .exit_policy import ExitConfig, ExitDecision, ExitEngine, ProbDist

_DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 6
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    vocab_size: int = 128
    max_seq_len: int = 24
    num_classes: int = 2
    embed_dim: int = 32
    dropout: float = 0.1
    dtype: str = "float64"
    layer_norm_eps: float = 1e-12
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("depth", "hidden_dim", "num_heads", "ffn_dim", "vocab_size", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hidden_dim % self.num_heads:
            raise ConfigError("hidden_dim must be divisible by num_heads")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.max_seq_len < 2:
            raise ConfigError("max_seq_len must be >= 2")
        if self.vocab_size <= CLS_ID:
            raise ConfigError("vocab_size must cover the reserved ids")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})


class SharedEncoderClassifier(nn.Module):
    """Embedding, one shared encoder block and a classifier head.

    Initialization draws from a generator seeded with ``seed`` in an order
    that does not depend on ``cfg.depth``, so two models differing only in
    depth share every weight.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, t_init: float = 4.0):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(seed)
        d, e, f, c = cfg.hidden_dim, cfg.embed_dim, cfg.ffn_dim, cfg.num_classes
        dt = cfg.torch_dtype

        def normal(*shape):
            t = torch.randn(*shape, generator=gen, dtype=torch.float64) * cfg.init_std
            return nn.Parameter(t.to(dt))

        def const(value, *shape):
            return nn.Parameter(torch.full(shape, float(value), dtype=dt))

        self.word_embeddings = normal(cfg.vocab_size, e)
        self.embedding_projection = normal(e, d)
        self.position_embeddings = normal(cfg.max_seq_len, d)
        self.query_weight, self.query_bias = normal(d, d), const(0, d)
        self.key_weight, self.key_bias = normal(d, d), const(0, d)
        self.value_weight, self.value_bias = normal(d, d), const(0, d)
        self.attn_out_weight, self.attn_out_bias = normal(d, d), const(0, d)
        self.attn_norm_gain, self.attn_norm_bias = const(1, d), const(0, d)
        self.ffn_in_weight, self.ffn_in_bias = normal(d, f), const(0, f)
        self.ffn_out_weight, self.ffn_out_bias = normal(f, d), const(0, d)
        self.ffn_norm_gain, self.ffn_norm_bias = const(1, d), const(0, d)
        self.classifier_weight, self.classifier_bias = normal(d, c), const(0, c)
        # loss-weight logits t_1..t_{M-1}; not used at inference
        self.exit_logits = const(t_init, cfg.depth - 1)
        self.eval()

    def backbone_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if n != "exit_logits"]

    # batched internals: x is (batch, seq, hidden), key_mask is (batch, seq)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        tok = self.word_embeddings[ids] @ self.embedding_projection
        return tok + self.position_embeddings[: ids.shape[-1]]

    def _block(self, x, key_mask, training=False):
        cfg = self.cfg
        b, n, d = x.shape
        heads = cfg.num_heads
        hd = d // heads
        p = cfg.dropout if training else 0.0

        def split(t):
            return t.view(b, n, heads, hd).transpose(1, 2)

        q = split(x @ self.query_weight + self.query_bias)
        k = split(x @ self.key_weight + self.key_bias)
        v = split(x @ self.value_weight + self.value_bias)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(hd)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = (F.dropout(attn, p, training) @ v).transpose(1, 2).reshape(b, n, d)
        out = F.dropout(ctx @ self.attn_out_weight + self.attn_out_bias, p, training)
        x = F.layer_norm(x + out, (d,), self.attn_norm_gain, self.attn_norm_bias, cfg.layer_norm_eps)
        ff = F.gelu(x @ self.ffn_in_weight + self.ffn_in_bias) @ self.ffn_out_weight
        ff = F.dropout(ff + self.ffn_out_bias, p, training)
        x = F.layer_norm(x + ff, (d,), self.ffn_norm_gain, self.ffn_norm_bias, cfg.layer_norm_eps)
        return x, attn

    def _classify(self, x):
        return x[..., 0, :] @ self.classifier_weight + self.classifier_bias

    def forward(self, ids: torch.Tensor, depth: Optional[int] = None) -> torch.Tensor:
        """Logits of every pass, shape (batch, depth, num_classes)."""
        depth = self.cfg.depth if depth is None else depth
        key_mask = ids != PAD_ID
        x = self._embed(ids)
        logits = []
        for _ in range(depth):
            x, _ = self._block(x, key_mask, self.training)
            logits.append(self._classify(x))
        return torch.stack(logits, dim=1)


def init_params(cfg: ModelConfig, seed: int = 0, t_init: float = 4.0) -> SharedEncoderClassifier:
    return SharedEncoderClassifier(cfg, seed=seed, t_init=t_init)


def parameter_count(params: SharedEncoderClassifier, include_exit_logits: bool = False) -> int:
    named = params.named_parameters() if include_exit_logits else params.backbone_parameters()
    return sum(p.numel() for _, p in named)


@dataclass
class HiddenState:
    values: torch.Tensor  # (seq, hidden)
    layer: int
    key_mask: torch.Tensor  # (seq,) bool, False on [pad]


@dataclass
class LayerTrace:
    token_ids: np.ndarray
    dists: list = field(default_factory=list)
    attentions: list = field(default_factory=list)  # each (heads, seq, seq)

    def __len__(self) -> int:
        return len(self.dists)

    @property
    def labels(self) -> list[int]:
        return [p.label for p in self.dists]

    @property
    def logits(self) -> np.ndarray:
        return np.stack([p.logits for p in self.dists])


def _check_ids(token_ids, cfg: ModelConfig) -> torch.Tensor:
    ids = np.asarray(token_ids)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("token_ids must be a non-empty 1-D sequence")
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError("token ids must be integers")
    if ids.size > cfg.max_seq_len:
        raise InputError(f"sequence length {ids.size} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(f"token id out of range [0, {cfg.vocab_size})")
    if ids[0] != CLS_ID:
        raise InputError("position 0 must hold the [cls] id")
    return torch.as_tensor(ids, dtype=torch.long)


@torch.no_grad()
def embed(token_ids, params: SharedEncoderClassifier) -> HiddenState:
    ids = _check_ids(token_ids, params.cfg)
    return HiddenState(params._embed(ids), 0, ids != PAD_ID)


@torch.no_grad()
def encoder_step(h: HiddenState, params: SharedEncoderClassifier) -> tuple[HiddenState, np.ndarray]:
    if h.layer >= params.cfg.depth:
        raise UsageError(f"layer {h.layer} is already the last of {params.cfg.depth}")
    x, attn = params._block(h.values[None], h.key_mask[None], training=False)
    layer = h.layer + 1
    if not torch.isfinite(x).all():
        raise NumericError("non-finite activations", layer)
    return HiddenState(x[0], layer, h.key_mask), attn[0].to(torch.float64).numpy()


@torch.no_grad()
def classify(h: HiddenState, params: SharedEncoderClassifier) -> ProbDist:
    logits = params._classify(h.values)
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite logits", h.layer)
    probs = torch.softmax(logits.to(torch.float64), dim=-1)
    return ProbDist(probs.numpy(), h.layer, logits=logits.to(torch.float64).numpy())


def forward_full(token_ids, params: SharedEncoderClassifier) -> LayerTrace:
    h = embed(token_ids, params)
    trace = LayerTrace(np.asarray(token_ids))
    for _ in range(params.cfg.depth):
        h, attn = encoder_step(h, params)
        trace.dists.append(classify(h, params))
        trace.attentions.append(attn)
    return trace


def forward_adaptive(
    token_ids, params: SharedEncoderClassifier, exit_cfg: ExitConfig
) -> tuple[int, ExitDecision, LayerTrace]:
    """Run encoder passes until the exit policy fires or depth runs out."""
    depth = params.cfg.depth
    if exit_cfg.max_depth is not None:
        depth = min(depth, exit_cfg.max_depth)
    engine = ExitEngine(exit_cfg)
    h = embed(token_ids, params)
    trace = LayerTrace(np.asarray(token_ids))
    decision = None
    for _ in range(depth):
        h, attn = encoder_step(h, params)
        p = classify(h, params)
        trace.dists.append(p)
        trace.attentions.append(attn)
        decision = engine.observe(p)
        if decision.fired:
            break
    return trace.dists[-1].label, decision, trace


@dataclass(frozen=True)
class FlopsEstimate:
    encoder: float  # multiply-accumulates per encoder pass
    classifier: float  # multiply-accumulates per classifier call

    @property
    def ratio(self) -> float:
        return self.classifier / self.encoder


def flops_estimate(cfg: ModelConfig, seq_len: Optional[int] = None) -> FlopsEstimate:
    """Multiply-accumulate counts of the matrix products in one pass.

    Bias adds, softmax, GELU and normalization are not counted.
    """
    n = cfg.max_seq_len if seq_len is None else seq_len
    d, f, c = cfg.hidden_dim, cfg.ffn_dim, cfg.num_classes
    projections = 4 * n * d * d  # q, k, v, output
    attention = 2 * n * n * d  # scores and weighted values
    ffn = 2 * n * d * f
    return FlopsEstimate(float(projections + attention + ffn), float(d * c))
