"""Shared data model: tissue grids, sequences, dictionaries, splits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

GRID_TOL_MS = 1e-9
NORM_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid configuration or input specification (CLI exit code 2)."""


class DataError(ValueError):
    """Inconsistent data shapes or contents (CLI exit code 3)."""


class NumericError(ArithmeticError):
    """Non-finite values during simulation or training (CLI exit code 4)."""


class TissueParams(NamedTuple):
    t1_ms: float
    t2_ms: float

    def validate(self) -> "TissueParams":
        if not (self.t1_ms > 0 and self.t2_ms > 0):
            raise ConfigError(f"relaxation times must be positive, got {self}")
        if self.t2_ms > self.t1_ms + GRID_TOL_MS:
            raise ConfigError(f"T2 must not exceed T1, got {self}")
        return self


Segment = tuple[float, float, float]


@dataclass(frozen=True)
class GridSpec:
    """Piecewise (start, end, step) tables for T1 and T2, endpoints inclusive."""

    t1_segments: tuple[Segment, ...]
    t2_segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "t1_segments", tuple(tuple(map(float, s)) for s in self.t1_segments))
        object.__setattr__(self, "t2_segments", tuple(tuple(map(float, s)) for s in self.t2_segments))

    def validate(self) -> "GridSpec":
        for name, segs in (("t1", self.t1_segments), ("t2", self.t2_segments)):
            if not segs:
                raise ConfigError("empty grid")
            prev_end = -math.inf
            for i, seg in enumerate(segs):
                if len(seg) != 3:
                    raise ConfigError(f"{name}_segments[{i}] must be (start, end, step), got {seg}")
                start, end, step = seg
                label = f"{name}_segments[{i}] = [{start:g}, {end:g}] step {step:g}"
                if not step > 0:
                    raise ConfigError(f"{label}: step must be positive")
                if start > end:
                    raise ConfigError(f"{label}: start exceeds end")
                n = round((end - start) / step)
                if abs(start + n * step - end) > GRID_TOL_MS:
                    raise ConfigError(f"{label}: end is not reachable from start in whole steps")
                if start <= prev_end:
                    raise ConfigError(f"{label}: segments must be strictly ascending and non-overlapping")
                prev_end = end
        return self

    def values(self, which: str) -> np.ndarray:
        segs = self.t1_segments if which == "t1" else self.t2_segments
        out = []
        for start, end, step in segs:
            n = round((end - start) / step)
            out.append(start + step * np.arange(n + 1))
        return np.concatenate(out)


# Standard training grid: 153 T1 values x 44 T2 values -> 5970 pairs with T2 <= T1.
TABLE1 = GridSpec(
    t1_segments=((10, 85, 5), (90, 990, 10), (1000, 1480, 20), (1500, 2000, 50), (2050, 2950, 100)),
    t2_segments=((2, 8, 2), (10, 145, 5), (150, 190, 10), (200, 500, 50)),
)
COARSE = GridSpec(
    t1_segments=((50, 100, 50), (200, 1000, 100), (1200, 2000, 200), (2500, 3000, 500)),
    t2_segments=((10, 100, 10), (120, 200, 20), (300, 500, 100)),
)
FINE = GridSpec(
    t1_segments=((2, 100, 2), (105, 1000, 5), (1010, 2000, 10), (2025, 3000, 25)),
    t2_segments=((1, 200, 1), (202, 500, 2)),
)
PRESET_GRIDS = {"table1": TABLE1, "coarse": COARSE, "fine": FINE}


def expand_grid(spec: GridSpec) -> list[TissueParams]:
    """All (T1, T2) pairs of the grid with T2 <= T1, sorted by (T1, T2)."""
    spec.validate()
    t1 = np.unique(spec.values("t1"))
    t2 = np.unique(spec.values("t2"))
    return [TissueParams(float(a), float(b)) for a in t1 for b in t2 if b <= a + GRID_TOL_MS]


def params_to_arrays(params: Sequence[TissueParams]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(params, dtype=np.float64).reshape(-1, 2)
    return arr[:, 0].copy(), arr[:, 1].copy()


@dataclass(frozen=True)
class SequenceParams:
    flip_angles_deg: np.ndarray
    tr_ms: np.ndarray
    te_ms: float = 2.0
    inversion_enabled: bool = True
    ti_ms: float = 20.64

    def __post_init__(self):
        object.__setattr__(self, "flip_angles_deg", np.asarray(self.flip_angles_deg, dtype=np.float64))
        object.__setattr__(self, "tr_ms", np.asarray(self.tr_ms, dtype=np.float64))
        self.validate()

    @property
    def n_frames(self) -> int:
        return self.flip_angles_deg.shape[0]

    def validate(self):
        fa, tr = self.flip_angles_deg, self.tr_ms
        if fa.ndim != 1 or fa.shape != tr.shape or fa.size < 1:
            raise ConfigError(f"flip angle and TR arrays must share a length >= 1, got {fa.shape} and {tr.shape}")
        if not np.all((fa >= 0) & (fa <= 180)):
            raise ConfigError("flip angles must lie in [0, 180] degrees")
        if not self.te_ms > 0:
            raise ConfigError(f"te_ms must be positive, got {self.te_ms}")
        if not np.all(tr > self.te_ms):
            raise ConfigError(f"every TR must exceed TE = {self.te_ms} ms")
        if self.ti_ms < 0:
            raise ConfigError(f"ti_ms must be non-negative, got {self.ti_ms}")


@dataclass
class Dictionary:
    """Fingerprint matrix (frames x atoms) with the tissue parameters of each column."""

    atoms: np.ndarray
    t1_ms: np.ndarray
    t2_ms: np.ndarray
    normalized: bool = False
    train_scale: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms)
        self.t1_ms = np.asarray(self.t1_ms, dtype=np.float64).reshape(-1)
        self.t2_ms = np.asarray(self.t2_ms, dtype=np.float64).reshape(-1)
        if self.atoms.ndim != 2:
            raise DataError(f"atoms must be a 2-D (frames x atoms) array, got shape {self.atoms.shape}")
        if not (self.t1_ms.size == self.t2_ms.size == self.atoms.shape[1]):
            raise DataError(
                f"{self.atoms.shape[1]} atom columns but {self.t1_ms.size} T1 and {self.t2_ms.size} T2 values"
            )

    @classmethod
    def from_params(cls, atoms, params: Sequence[TissueParams], **kw) -> "Dictionary":
        t1, t2 = params_to_arrays(params)
        return cls(atoms, t1, t2, **kw)

    @property
    def n_frames(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @property
    def params(self) -> list[TissueParams]:
        return [TissueParams(float(a), float(b)) for a, b in zip(self.t1_ms, self.t2_ms)]

    def subset(self, idx) -> "Dictionary":
        idx = np.asarray(idx, dtype=np.intp)
        return replace(self, atoms=self.atoms[:, idx], t1_ms=self.t1_ms[idx], t2_ms=self.t2_ms[idx], meta={})


@dataclass(frozen=True)
class DatasetSplit:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_idx), len(self.val_idx), len(self.test_idx)


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [f * n for f in fractions]
    counts = [math.floor(q + 1e-9) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    # ties go to the earlier part
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(d: Dictionary, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetSplit:
    """Seeded random partition of the atom columns into train/val/test."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    n = d.n_atoms
    if n == 0:
        raise DataError("cannot split an empty dictionary")
    counts = largest_remainder(n, fractions)
    if min(counts) == 0:
        raise ConfigError(f"fractions {fractions} leave an empty part for {n} atoms (sizes {counts})")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = counts[0], counts[0] + counts[1]
    return DatasetSplit(perm[:a], perm[a:b], perm[b:])


def _column_norms(a: np.ndarray) -> np.ndarray:
    # rescale first so tiny columns do not underflow when squared
    peak = np.abs(a).max(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    return peak * np.linalg.norm(a / safe, axis=0)


def normalize_atoms(d: Dictionary) -> Dictionary:
    norms = _column_norms(d.atoms)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        j = zero[0]
        raise DataError(f"atom {j} (T1={d.t1_ms[j]:g} ms, T2={d.t2_ms[j]:g} ms) has zero norm")
    if d.normalized and np.all(np.abs(norms - 1) <= NORM_TOL):
        return replace(d, atoms=d.atoms.copy())
    return replace(d, atoms=d.atoms / norms, normalized=True)


def scale_for_training(d: Dictionary, headroom: float = 0.9) -> tuple[Dictionary, float]:
    """Scale a normalized set so max |value| equals ``headroom`` (inside the tanh range)."""
    if not d.normalized:
        raise DataError("training set must be normalized before scaling")
    peak = float(np.max(np.abs(d.atoms))) if d.atoms.size else 0.0
    if peak == 0:
        raise DataError("cannot scale an all-zero training set")
    scale = headroom / peak
    return replace(d, atoms=d.atoms * scale, train_scale=scale), scale


def unscale(d: Dictionary) -> Dictionary:
    if d.train_scale is None:
        return d
    return replace(d, atoms=d.atoms / d.train_scale, train_scale=None)
