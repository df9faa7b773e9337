"""Watch the feedback loop refine a held-out subject step by step.

    python demos/feedback_steps.py CHECKPOINT [out_dir]

Prints source and target PSNR after each step and writes a grid: one row per
step, target ground truth on the left.
"""

import sys
from pathlib import Path

import numpy as np

from gomrecon.io import load_checkpoint, write_png
from gomrecon.reconstruct import reconstruct
from gomrecon.trainkit import EvalConfig, psnr, render_gom

store, meta = load_checkpoint(sys.argv[1])
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
k = int((meta.get("train") or {}).get("k", 2))

scene = EvalConfig(n_subjects=1, resolution=64).scenes()[0]
target = scene.targets[0]
res = reconstruct(scene.source_set(), scene.rig, 3, store, k, keep_states=True)
rows = []
for t, state in enumerate(res.states):
    gom = state.gom
    src = np.mean([psnr(np.clip(render_gom(gom, v.pose, v.camera)[0], 0, 1), v.image) for v in scene.sources])
    img = np.clip(render_gom(gom, target.pose, target.camera)[0], 0, 1)
    print(f"step {t}: source PSNR {src:.2f} dB, novel view+pose PSNR {psnr(img, target.image):.2f} dB")
    rows.append(np.concatenate([target.image, img], axis=1))
write_png(out / "feedback_steps.png", np.concatenate(rows, axis=0))
print("step times (ms):", " ".join(f"{ms:.0f}" for ms in res.step_ms))
