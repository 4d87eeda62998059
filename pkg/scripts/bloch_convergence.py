"""How fast the isochromat sum converges in slice positions P and dephasing states Q.

Prints the relative L2 distance of each (P, Q) fingerprint to a dense reference.
"""

import argparse

import numpy as np

from ganmrf.bloch import SimGrid, default_sequence, simulate_atoms, sinc_profile
from ganmrf.match import CSF, GRAY_MATTER, WHITE_MATTER


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--ref-p", type=int, default=63)
    p.add_argument("--ref-q", type=int, default=200)
    a = p.parse_args()

    seq = default_sequence(a.frames, 0)
    tissues = np.array([(1000.0, 100.0), WHITE_MATTER, GRAY_MATTER, CSF])
    ref_profile = sinc_profile(a.ref_p)
    ref = simulate_atoms(tissues[:, 0], tissues[:, 1], seq, ref_profile, SimGrid(a.ref_p, a.ref_q))
    print("P,Q," + ",".join(f"T1={t1:g}/T2={t2:g}" for t1, t2 in tissues))
    for P in (5, 11, 21, 41):
        for Q in (10, 25, 50, 100):
            fp = simulate_atoms(tissues[:, 0], tissues[:, 1], seq, sinc_profile(P), SimGrid(P, Q))
            err = np.linalg.norm(fp - ref, axis=1) / np.linalg.norm(ref, axis=1)
            print(f"{P},{Q}," + ",".join(f"{e:.2e}" for e in err))


if __name__ == "__main__":
    main()
