"""Train the polynomial MLP on modular addition and watch Fourier features appear.

Run: python demos/train_mlp_fourier_features.py [steps]
Takes about a minute per 1000 steps on one CPU core.
"""

import sys
from dataclasses import replace

import numpy as np

from fourier_circuits.analysis import frequency_report
from fourier_circuits.io import load_config
from fourier_circuits.training import init_model, train

cfg = load_config("presets/mlp_k3_p11.cfg").train
if len(sys.argv) > 1:
    cfg = replace(cfg, steps=int(sys.argv[1]))

before = frequency_report(init_model(cfg))
print(f"at init: median single-frequency share {np.median(before.max_power):.3f}")

model, trace = train(cfg, progress=lambda r: print(f"step {r.step:5d}  loss {r.train_loss:.4f}  acc {r.train_acc:.3f}"))

after = frequency_report(model)
active = after.active
print(f"after training: {active.sum()} active neurons")
print(f"  share with >= 0.9 of power at one frequency: {after.fraction_single_frequency(0.9):.2%}")
print(f"  median single-frequency share: {np.median(after.max_power[active]):.3f}")
print(f"  neurons per frequency: {after.histogram}")
print(f"  frequencies nobody uses: {after.missing_frequencies or 'none'}")
