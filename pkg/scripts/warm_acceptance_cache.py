"""Pre-train the six reference runs the acceptance suite scores.

3 seeds x {parametric, standard} spatial modes, 20 epochs each, written
to .acceptance_cache/<mode>-s<seed>/ with a done.json marker recording
the summary and wall time.  tests/test_acceptance.py trains any missing
run itself; warming the cache here first just keeps pytest fast and lets
the runs happen in the background.  Finished runs are skipped, so the
script is safe to re-run after an interruption.
"""

import json
import os
import sys
import time

from event2vec.config import RunConfig
from event2vec.train import train

CACHE = os.environ.get(
    "ACCEPTANCE_CACHE",
    os.path.join(os.path.dirname(os.path.abspath(__file__)),
                 "..", ".acceptance_cache"),
)


def run_one(mode: str, seed: int) -> None:
    tag = f"{mode}-s{seed}"
    run_dir = os.path.join(CACHE, tag)
    marker = os.path.join(run_dir, "done.json")
    if os.path.exists(marker):
        print(f"{tag}: cached", flush=True)
        return
    cfg = RunConfig(spatial_mode=mode, seed=seed, eval_every=20)
    t0 = time.time()
    summary = train(cfg, run_dir,
                    log=lambda m: print(f"[{tag}] {m}", flush=True))
    wall = time.time() - t0
    with open(marker, "w", encoding="utf-8") as fh:
        json.dump({"mode": mode, "seed": seed, "wall_s": wall, **summary}, fh)
    print(f"{tag}: acc {summary['test_accuracy']:.4f} in {wall / 60:.1f} min",
          flush=True)


def main() -> int:
    for seed in (0, 1, 2):
        for mode in ("parametric", "standard"):
            run_one(mode, seed)
    print("all runs complete", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
