"""Reference training protocol: 3 seeds x {parametric, standard}, cached."""
import json, os, sys, time
sys.path.insert(0, "/root/pkg/src")
from dataclasses import replace
from event2vec.config import RunConfig
from event2vec.train import train

CACHE = os.path.dirname(os.path.abspath(__file__))

def run_one(mode, seed):
    tag = f"{mode}-s{seed}"
    run_dir = os.path.join(CACHE, tag)
    marker = os.path.join(run_dir, "done.json")
    if os.path.exists(marker):
        print(f"{tag}: cached", flush=True)
        return
    cfg = RunConfig(spatial_mode=mode, seed=seed, eval_every=20)
    t0 = time.time()
    summary = train(cfg, run_dir, log=lambda m: print(f"[{tag}] {m}", flush=True))
    wall = time.time() - t0
    with open(marker, "w") as fh:
        json.dump({"mode": mode, "seed": seed, "wall_s": wall, **summary}, fh)
    print(f"{tag}: acc {summary['test_accuracy']:.4f} in {wall/60:.1f} min", flush=True)

for seed in (0, 1, 2):
    for mode in ("parametric", "standard"):
        run_one(mode, seed)
print("all runs complete", flush=True)
