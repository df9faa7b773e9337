"""Training runs shared by the acceptance tests, cached by config digest.

Run ``python -m tests.cached_runs 2 0`` to populate the cache ahead of time.
An interrupted run resumes from its last periodic checkpoint.
"""

import os
import sys
from pathlib import Path

from gomrecon.io import load_checkpoint
from gomrecon.trainkit import TrainConfig, train

RUNS = Path(os.environ.get("GOMRECON_RUNS", "/root/runs"))


def desk_config(k: int = 2, **kw) -> TrainConfig:
    return TrainConfig(k=k, checkpoint_every=100, **kw)


def run_dir(cfg: TrainConfig) -> Path:
    return RUNS / f"k{cfg.k}_{cfg.digest()}"


def cached_run(cfg: TrainConfig, progress=None) -> Path:
    out = run_dir(cfg)
    ck = out / "checkpoint.lgom"
    store, start = None, 0
    if ck.exists():
        store, meta = load_checkpoint(ck)
        if meta.get("train") != cfg.to_json():
            raise RuntimeError(f"{ck}: cached run was trained with a different config")
        start = int(meta["iteration"])
        if start >= cfg.iterations:
            return ck
    train(cfg, out, store=store, start=start, progress=progress)
    return ck


if __name__ == "__main__":
    for k in map(int, sys.argv[1:] or ["2", "0"]):
        print(cached_run(desk_config(k)), flush=True)
