"""
Where does [cls] look?
======================

Cumulative [cls] attention per layer for one sentence, written as JSON and,
with matplotlib installed, as an SVG heat map.  Run 02_train_and_sweep.py
first; it leaves the trained model in the working directory.

The toy corpus has 5 to 20 words and exactly one sentiment keyword per
sentence, so inputs outside that shape get unreliable labels.
"""

import sys

from earlyexit import ExitConfig, Vocab, encode, forward_adaptive
from earlyexit.attnviz import cumulative_attention, export_profile, render_svg
from earlyexit.checkpoint import load_checkpoint

model = load_checkpoint("desk.bin")
vocab = Vocab.load("vocab.txt")

text = sys.argv[1] if len(sys.argv) > 1 else "the plot of the film was not dull at all"
n = 1 + len(text.split())
ids = encode(text, vocab, model.cfg.max_seq_len)[:n]
label, decision, trace = forward_adaptive(ids, model, ExitConfig(delta=0.1))
profile = cumulative_attention(trace, [vocab.token(i) for i in ids], decision)

print(f"label {label}, exit at layer {decision.layer} ({decision.reason.value})")
for layer, (scores, pred) in enumerate(zip(profile.cumulative, profile.predicted_labels), start=1):
    cells = " ".join(f"{t}:{s:.2f}" for t, s in zip(profile.tokens, scores))
    print(f"layer {layer} -> {pred} | {cells}")

export_profile(profile, "profile.json")
try:
    render_svg(profile, "profile.svg", label_names=["negative", "positive"])
except ImportError:
    pass
