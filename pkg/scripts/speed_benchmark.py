"""Wall-clock comparison: Bloch simulation vs generator synthesis of one dictionary.

Uses an untrained generator: synthesis cost does not depend on the weights.
"""

import argparse
import time

import numpy as np

from ganmrf.bloch import SimGrid, default_sequence, simulate_dictionary, sinc_profile
from ganmrf.core import PRESET_GRIDS, expand_grid
from ganmrf.gan import ConditionMap, GanModel, synthesize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--grid", default="coarse", choices=sorted(PRESET_GRIDS))
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--max-atoms", type=int, default=None, help="simulate only this many atoms and extrapolate")
    a = p.parse_args()

    seq = default_sequence(a.frames, 0)
    params = expand_grid(PRESET_GRIDS[a.grid])
    cmap = ConditionMap.fit([p_.t1_ms for p_ in params], [p_.t2_ms for p_ in params], seq)
    model = GanModel.create(a.frames, cmap, 1.0)
    rng = np.random.default_rng(0)
    model.generator.layers[-1].weights[:] = rng.normal(0, 0.01, model.generator.layers[-1].weights.shape)

    synthesize(model, params[:64], seq)  # warm-up
    t0 = time.perf_counter()
    synthesize(model, params, seq)
    t_syn = time.perf_counter() - t0

    sub = params if a.max_atoms is None else params[: a.max_atoms]
    d = simulate_dictionary(sub, seq, sinc_profile(21), SimGrid(21, 50), threads=a.threads)
    t_sim = d.meta["wall_seconds"] * len(params) / len(sub)
    note = "" if len(sub) == len(params) else f" (extrapolated from {len(sub)} atoms)"
    print(f"{len(params)} atoms x {a.frames} frames")
    print(f"bloch simulation : {t_sim:10.3f} s{note}")
    print(f"gan synthesis    : {t_syn:10.4f} s")
    print(f"speedup          : {t_sim / t_syn:10.0f}x")


if __name__ == "__main__":
    main()
