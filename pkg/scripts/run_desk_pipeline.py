"""Run every CLI stage on the desk-scale configuration and print the report.

    python3 scripts/run_desk_pipeline.py --out runs/desk
"""

import argparse
import sys
import time
from pathlib import Path

from ganmrf.cli import main

STAGES = [["grid"], ["simulate"], ["simulate", "--target", "synth"], ["train"], ["validate"], ["synth"], ["match"], ["report"]]


def run(config: str, out: str, seed: int, threads: int) -> int:
    for stage in STAGES:
        t0 = time.perf_counter()
        code = main(["--config", config, "--out", out, "--seed", str(seed), "--threads", str(threads), *stage])
        print(f"== {' '.join(stage)}: exit {code} ({time.perf_counter() - t0:.1f} s)", file=sys.stderr)
        if code:
            return code
    return 0


if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(root / "configs" / "desk.yaml"))
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    a = p.parse_args()
    sys.exit(run(a.config, a.out, a.seed, a.threads))
