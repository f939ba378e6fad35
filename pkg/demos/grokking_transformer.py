"""Delayed generalization of a small transformer on two-input addition mod 31.

Run: python demos/grokking_transformer.py [seed]
Takes several minutes on one CPU core.
"""

import sys
from dataclasses import replace

from fourier_circuits.analysis import attention_spectra
from fourier_circuits.io import load_config
from fourier_circuits.training import grokking_metrics, train

run = load_config("presets/grok_k2_p31.cfg")
cfg = run.train
if len(sys.argv) > 1:
    cfg = replace(cfg, seed=int(sys.argv[1]))


def show(r):
    print(f"step {r.step:5d}  train acc {r.train_acc:.3f}  val acc {r.val_acc:.3f}")


model, trace = train(cfg, progress=show)
gm = grokking_metrics(trace, run.grok.threshold)
print(f"train acc reached {run.grok.threshold} at step {gm.step_train}, validation at step {gm.step_val}")
if gm.reached:
    print(f"generalization lagged memorization by {gm.delay} steps")

# Trained attention matrices concentrate on a few 2-D frequencies.
for hs in attention_spectra(model):
    print(f"head {hs.head}: top-8 frequency bins hold {hs.top_share():.1%} of the non-constant power")
