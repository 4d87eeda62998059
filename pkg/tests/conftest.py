import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from ganmrf.bloch import default_sequence, simulate_dictionary
from ganmrf.core import COARSE, expand_grid, normalize_atoms

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def desk_seq():
    return default_sequence(200, 0)


@pytest.fixture(scope="session")
def coarse_dict(desk_seq):
    """Bloch dictionary for the 297-atom coarse grid at 200 frames (un-normalized)."""
    return simulate_dictionary(expand_grid(COARSE), desk_seq)


@pytest.fixture(scope="session")
def coarse_unit(coarse_dict):
    """Same dictionary with unit-norm atoms, ready for matching."""
    return normalize_atoms(coarse_dict)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Full desk-scale CLI pipeline, one command per stage."""
    from ganmrf.cli import main

    out = tmp_path_factory.mktemp("desk")
    cfg = str(CONFIG_DIR / "desk.yaml")
    stages = [["grid"], ["simulate"], ["simulate", "--target", "synth"], ["train"], ["validate"],
              ["synth"], ["match"], ["report"]]
    codes, seconds = {}, {}
    for stage in stages:
        key = " ".join(stage)
        t0 = time.perf_counter()
        codes[key] = main(["--config", cfg, "--out", str(out), "--seed", "0", *stage])
        seconds[key] = time.perf_counter() - t0
    return out, codes, seconds


def rel_l2(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))
