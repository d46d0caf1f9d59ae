"""Train every desk-scale Adult run behind acceptance criteria 7 to 10 and cache the results.

Usage: python scripts/fill_acceptance_cache.py [probe|compare|search ...]

Takes a few hours on one core; interrupted runs resume from the cache. The
acceptance tests call the same functions and then only replay.
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

import desk  # noqa: E402

T0 = time.perf_counter()


def progress(label):
    def report(done, total, *_):
        print(f"[{time.perf_counter() - T0:7.0f}s] {label} {done}/{total}", flush=True)

    return report


def main(stages):
    if "probe" in stages:
        res = desk.probe_result(progress("probe"))
        print(res.summary(), flush=True)
    if "compare" in stages:
        for h in desk.comparison(progress=progress("compare")).headlines():
            print(h, flush=True)
    if "search" in stages:
        for seed in range(5):
            for mode in ("multi", "random"):
                r = desk.search(mode, seed, progress(f"{mode} seed {seed}"))
                print(mode, seed, "hypervolume", r.hypervolume(), flush=True)
        r = desk.search("chained", 0, progress("chained seed 0"))
        print("chained hypervolume", r.hypervolume(), flush=True)


if __name__ == "__main__":
    main(sys.argv[1:] or ["probe", "compare", "search"])
