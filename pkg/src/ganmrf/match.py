"""Pattern matching, synthetic phantoms and map comparison."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ganmrf.bloch import SimGrid, SliceProfile, simulate_atoms
from ganmrf.core import ConfigError, DataError, Dictionary, SequenceParams, TissueParams

# exemplar tissues: white matter, gray matter, CSF
WHITE_MATTER = TissueParams(950.0, 40.0)
GRAY_MATTER = TissueParams(1500.0, 60.0)
CSF = TissueParams(2950.0, 500.0)


@dataclass(frozen=True)
class Region:
    shape: str  # "rect" or "disc"
    geometry: tuple[float, ...]  # rect: (x0, y0, x1, y1) half-open; disc: (cx, cy, r)
    t1_ms: float
    t2_ms: float

    def mask(self, width: int, height: int) -> np.ndarray:
        yy, xx = np.mgrid[0:height, 0:width]
        if self.shape == "rect":
            if len(self.geometry) != 4:
                raise ConfigError(f"rect geometry needs (x0, y0, x1, y1), got {self.geometry}")
            x0, y0, x1, y1 = self.geometry
            m = (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
        elif self.shape == "disc":
            if len(self.geometry) != 3:
                raise ConfigError(f"disc geometry needs (cx, cy, r), got {self.geometry}")
            cx, cy, r = self.geometry
            m = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        else:
            raise ConfigError(f"unknown region shape {self.shape!r}")
        if not m.any():
            raise ConfigError(f"region {self} covers no pixels")
        return m


def default_regions(size: int = 48) -> list[Region]:
    c = (size - 1) / 2.0
    return [
        Region("disc", (c, c, 0.45 * size), *GRAY_MATTER),
        Region("disc", (c, c, 0.30 * size), *WHITE_MATTER),
        Region("rect", (c - 0.06 * size, c - 0.15 * size, c + 0.06 * size + 1, c + 0.15 * size + 1), *CSF),
    ]


@dataclass
class Phantom:
    width: int
    height: int
    t1_map: np.ndarray
    t2_map: np.ndarray
    regions: list[Region]

    @property
    def labels(self) -> np.ndarray:
        """0 for background, k for the k-th distinct foreground tissue."""
        lab = np.zeros(self.t1_map.shape, dtype=int)
        pairs = sorted({(a, b) for a, b in zip(self.t1_map.ravel(), self.t2_map.ravel()) if a > 0})
        for k, (a, b) in enumerate(pairs, start=1):
            lab[(self.t1_map == a) & (self.t2_map == b)] = k
        return lab


@dataclass
class ParameterMap:
    t1_map: np.ndarray
    t2_map: np.ndarray
    similarity_map: np.ndarray


def make_phantom(
    regions: Sequence[Region],
    seq: SequenceParams,
    profile: SliceProfile | None = None,
    grid: SimGrid | None = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
    width: int = 48,
    height: int = 48,
):
    """Rasterize regions (later ones win) and simulate noisy per-pixel signals.

    Returns (phantom, signals) with signals of shape (height, width, n_frames).
    Noise per frame has standard deviation noise_sigma * ||s|| / sqrt(n_frames).
    """
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    t1 = np.zeros((height, width))
    t2 = np.zeros((height, width))
    for r in regions:
        TissueParams(r.t1_ms, r.t2_ms).validate()
        m = r.mask(width, height)
        t1[m] = r.t1_ms
        t2[m] = r.t2_ms
    phantom = Phantom(width, height, t1, t2, list(regions))

    tissues = sorted({(a, b) for a, b in zip(t1.ravel(), t2.ravel()) if a > 0})
    signals = np.zeros((height, width, seq.n_frames))
    if tissues:
        arr = np.array(tissues)
        fps = simulate_atoms(arr[:, 0], arr[:, 1], seq, profile, grid)
        for (a, b), fp in zip(tissues, fps):
            signals[(t1 == a) & (t2 == b)] = fp
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        level = noise_sigma * np.linalg.norm(signals, axis=-1, keepdims=True) / np.sqrt(seq.n_frames)
        signals = signals + level * rng.standard_normal(signals.shape)
    return phantom, signals


def _require_normalized(d: Dictionary):
    if not d.normalized:
        raise DataError("matching needs a normalized dictionary")


def match_voxel(signal, d: Dictionary) -> tuple[TissueParams, float]:
    """Best atom by absolute normalized correlation; ties go to the lowest column."""
    _require_normalized(d)
    s = np.asarray(signal, dtype=np.float64)
    if s.shape != (d.n_frames,):
        raise DataError(f"signal has {s.size} frames, dictionary has {d.n_frames}")
    norm = np.linalg.norm(s)
    if norm == 0:
        raise DataError("cannot match a zero-norm signal")
    corr = np.abs(d.atoms.T @ (s / norm))
    j = int(np.argmax(corr))
    return TissueParams(float(d.t1_ms[j]), float(d.t2_ms[j])), float(min(corr[j], 1.0))


def match_indices(signals: np.ndarray, d: Dictionary, threads: int = 1, chunk: int = 1024):
    """Best column and similarity for each row of ``signals`` (n, n_frames); -1 for zero rows."""
    _require_normalized(d)
    if signals.shape[-1] != d.n_frames:
        raise DataError(f"signals have {signals.shape[-1]} frames, dictionary has {d.n_frames}")
    flat = signals.reshape(-1, d.n_frames)
    norms = np.linalg.norm(flat, axis=1)
    idx = np.full(flat.shape[0], -1)
    sim = np.zeros(flat.shape[0])
    starts = range(0, flat.shape[0], chunk)

    def run(s):
        block = flat[s : s + chunk]
        nb = norms[s : s + chunk]
        fg = nb > 0
        if fg.any():
            corr = np.abs((block[fg] / nb[fg, None]) @ d.atoms)
            best = np.argmax(corr, axis=1)
            j = np.flatnonzero(fg) + s
            idx[j] = best
            sim[j] = np.minimum(corr[np.arange(best.size), best], 1.0)

    # fixed chunking, so serial and threaded runs do identical arithmetic
    if threads == 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=threads if threads > 0 else None) as pool:
            list(pool.map(run, starts))
    return idx, sim


def match_volume(signals: np.ndarray, d: Dictionary, threads: int = 1) -> ParameterMap:
    shape = signals.shape[:-1]
    idx, sim = match_indices(signals, d, threads)
    fg = idx >= 0
    t1 = np.where(fg, d.t1_ms[np.maximum(idx, 0)], 0.0)
    t2 = np.where(fg, d.t2_ms[np.maximum(idx, 0)], 0.0)
    return ParameterMap(t1.reshape(shape), t2.reshape(shape), sim.reshape(shape))


def rel_rmse(map_a: np.ndarray, map_b: np.ndarray) -> float:
    """Percent relative RMSE of ``map_a`` against ``map_b`` over pixels where ``map_b`` is nonzero."""
    a, b = np.asarray(map_a, dtype=np.float64), np.asarray(map_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"map shapes differ: {a.shape} vs {b.shape}")
    fg = b != 0
    if not fg.any():
        raise DataError("benchmark map has no foreground pixels")
    return float(100.0 * np.linalg.norm(a[fg] - b[fg]) / np.linalg.norm(b[fg]))


def diff_map(map_a, map_b, scale: float = 10.0):
    """(a - b) * scale, with its (min, max) for the legend."""
    a, b = np.asarray(map_a, dtype=np.float64), np.asarray(map_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"map shapes differ: {a.shape} vs {b.shape}")
    img = (a - b) * scale
    return img, (float(img.min()), float(img.max()))
