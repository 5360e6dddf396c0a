"""
Train a small shared-weight classifier and trade accuracy for depth
====================================================================

Negated sentences ("not good") need more passes than plain ones, which
shows up as later exits.  Takes a bit over a minute on one CPU and leaves
``desk.bin`` and ``vocab.txt`` behind for the attention demo.
"""

import numpy as np

from earlyexit import (
    ExitConfig,
    ModelConfig,
    SweepConfig,
    SynthSpec,
    TrainConfig,
    build_vocab,
    encode_dataset,
    format_table,
    generate_synthetic,
    init_params,
    sweep,
    train,
    truncated_baseline,
)
from earlyexit.bench import full_traces
from earlyexit.checkpoint import save_checkpoint
from earlyexit.exit_policy import run_policy

examples = generate_synthetic(SynthSpec(seed=7), 2500)
train_ex, test_ex = examples[:2000], examples[2000:]
print(test_ex[0].text, "->", test_ex[0].label)

vocab = build_vocab([e.text for e in train_ex], 128)
cfg = ModelConfig(depth=6, hidden_dim=64, num_heads=4, ffn_dim=128, embed_dim=32)
train_set = encode_dataset(train_ex, vocab, cfg.max_seq_len, 2)
test_set = encode_dataset(test_ex, vocab, cfg.max_seq_len, 2)

model = init_params(cfg, seed=7)
result = train(train_set, model, TrainConfig(seed=7))
print("loss per epoch", np.round(result.losses, 3))

traces = full_traces(model, test_set)
points = sweep(model, test_set, SweepConfig(), traces)
print(format_table(points))

for b in truncated_baseline(model, test_set, range(1, 7)):
    print(f"truncated to {b.depth} layers: accuracy {b.accuracy:.3f}")

layers = np.array([run_policy(t, ExitConfig(delta=0.1)).layer for t in traces])
hard = np.asarray(test_set.hard, dtype=bool)
print(f"mean exit layer, negated {layers[hard].mean():.2f} vs plain {layers[~hard].mean():.2f}")

save_checkpoint(model, "desk.bin")
vocab.save("vocab.txt")
