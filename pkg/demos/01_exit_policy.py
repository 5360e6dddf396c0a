"""
Two-stage exit on hand-made probability streams
================================================

No model here, just per-layer class distributions fed to the exit engine.
"""

import numpy as np

from earlyexit import Criterion, ExitConfig, ExitEngine, puzzlement, run_policy

# puzzlement is normalized entropy: 0 for one-hot, 1 for uniform
for p in ([1.0, 0.0], [0.9, 0.1], [0.6, 0.4], [0.5, 0.5]):
    print(p, round(puzzlement(p), 4))

# a stream that sharpens slowly, layer by layer
stream = [[0.55, 0.45], [0.62, 0.38], [0.70, 0.30], [0.78, 0.22], [0.86, 0.14], [0.93, 0.07]]

# stage 1 alone: exit once puzzlement drops under delta
for delta in (0.2, 0.5, 0.8):
    d = run_policy(stream, ExitConfig(delta=delta, stage2_enabled=False))
    print(f"delta={delta}: layer {d.layer} ({d.reason.value})")

# stage 2 catches a steady trend even when stage 1 never fires
cfg = ExitConfig(delta=0.0, window_size=3, criterion=Criterion.MONOTONE_PROB)
engine = ExitEngine(cfg)
for p in stream:
    d = engine.observe(np.array(p))
    print(f"layer {d.layer}: fired={d.fired} reason={d.reason.value}")
    if d.fired:
        break
