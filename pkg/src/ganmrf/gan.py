"""Conditional GAN that learns to synthesize fingerprints from tissue parameters.

The generator maps ``[z, y]`` to a fingerprint through three 128-unit ReLU
layers and a tanh head; the discriminator scores ``[x, y]`` through the same
hidden stack and a sigmoid head. ``y`` holds log10(T1), log10(T2) scaled to
[-1, 1] over the training grid, optionally followed by a binned summary of
the flip-angle and TR trains.

Both networks minimize the negated objectives of the alternating scheme:
the discriminator's binary cross-entropy, and the generator's
non-saturating adversarial term plus ``lambda`` times the per-atom L1
distance to the paired Bloch fingerprint.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ganmrf.core import (
    ConfigError,
    DataError,
    Dictionary,
    NumericError,
    SequenceParams,
    TissueParams,
    params_to_arrays,
)
from ganmrf.nn import AdamState, Mlp, adam_step, backward, forward, init_mlp

log = logging.getLogger(__name__)

P_CLAMP = 1e-12
HIDDEN = (128, 128, 128)
DEFAULT_LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)


@dataclass(frozen=True)
class ConditionMap:
    """Affine maps from physical parameters to the generator's condition vector."""

    log_t1_range: tuple[float, float]
    log_t2_range: tuple[float, float]
    seq_bins: int = 16
    fa_range: tuple[float, float] = (0.0, 90.0)
    tr_range: tuple[float, float] = (10.0, 20.0)
    # binned sequence descriptor, already mapped to [-1, 1]; empty in tissue-only mode
    seq_descriptor: tuple[float, ...] = ()

    @classmethod
    def fit(cls, t1_ms, t2_ms, seq: SequenceParams | None = None, seq_bins: int = 16, **kw) -> "ConditionMap":
        l1 = np.log10(np.asarray(t1_ms, dtype=np.float64))
        l2 = np.log10(np.asarray(t2_ms, dtype=np.float64))
        cmap = cls((float(l1.min()), float(l1.max())), (float(l2.min()), float(l2.max())), seq_bins, **kw)
        if seq is not None:
            cmap = replace(cmap, seq_descriptor=tuple(cmap.describe_sequence(seq)))
        return cmap

    @property
    def y_dim(self) -> int:
        return 2 + len(self.seq_descriptor)

    def describe_sequence(self, seq: SequenceParams) -> np.ndarray:
        if seq.n_frames < self.seq_bins:
            raise ConfigError(f"need at least {self.seq_bins} frames for the sequence descriptor")
        parts = []
        for arr, (lo, hi) in ((seq.flip_angles_deg, self.fa_range), (seq.tr_ms, self.tr_range)):
            binned = np.array([b.mean() for b in np.array_split(arr, self.seq_bins)])
            parts.append(2.0 * (binned - lo) / (hi - lo) - 1.0)
        return np.concatenate(parts)

    def __call__(self, t1_ms, t2_ms, seq: SequenceParams | None = None) -> np.ndarray:
        """Condition rows, shape (n, y_dim)."""
        t1 = np.atleast_1d(np.asarray(t1_ms, dtype=np.float64))
        t2 = np.atleast_1d(np.asarray(t2_ms, dtype=np.float64))
        cols = [_to_unit(np.log10(t1), self.log_t1_range), _to_unit(np.log10(t2), self.log_t2_range)]
        y = np.stack(cols, axis=1)
        if self.seq_descriptor:
            desc = np.asarray(self.seq_descriptor) if seq is None else self.describe_sequence(seq)
            y = np.hstack([y, np.broadcast_to(desc, (y.shape[0], desc.size))])
        elif seq is not None:
            raise ConfigError("this model was trained without a sequence descriptor")
        return y


def _to_unit(v, rng):
    lo, hi = rng
    if hi == lo:
        return np.zeros_like(v)
    return 2.0 * (v - lo) / (hi - lo) - 1.0


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 100.0
    lr: float = 1e-5
    batch_size: int = 30
    iterations: int = 20000
    z_dim: int = 32
    seed: int = 0
    d_steps_per_g_step: int = 1
    eval_every: int | None = None
    use_sequence: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.batch_size < 1 or self.iterations < 0 or self.z_dim < 0 or self.d_steps_per_g_step < 1:
            raise ConfigError(f"invalid training configuration {self}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")

    @property
    def interval(self) -> int:
        return self.eval_every or max(1, self.iterations // 100)


@dataclass
class GanModel:
    generator: Mlp
    discriminator: Mlp
    z_dim: int
    conditions: ConditionMap
    train_scale: float
    g_opt: AdamState = None
    d_opt: AdamState = None

    def __post_init__(self):
        if self.g_opt is None:
            self.g_opt = AdamState.zeros_like(self.generator.params())
        if self.d_opt is None:
            self.d_opt = AdamState.zeros_like(self.discriminator.params())
        n_frames = self.generator.dims[-1]
        if self.generator.dims[0] != self.z_dim + self.y_dim:
            raise DataError(f"generator input {self.generator.dims[0]} != z_dim + y_dim = {self.z_dim + self.y_dim}")
        if self.discriminator.dims[0] != n_frames + self.y_dim or self.discriminator.dims[-1] != 1:
            raise DataError("discriminator must take n_frames + y_dim inputs and emit one probability")

    @property
    def y_dim(self) -> int:
        return self.conditions.y_dim

    @property
    def n_frames(self) -> int:
        return self.generator.dims[-1]

    @classmethod
    def create(cls, n_frames: int, conditions: ConditionMap, train_scale: float, z_dim: int = 32, seed: int = 0):
        y_dim = conditions.y_dim
        gen = init_mlp([z_dim + y_dim, *HIDDEN, n_frames], head="tanh", seed=seed)
        # Start from a generator that ignores z and outputs zeros: He-scaled noise
        # weights swamp the two tissue inputs and a He-scaled tanh head starts
        # saturated, and at lr=1e-5 neither recovers within a desk-scale budget.
        gen.layers[0].weights[:, :z_dim] = 0.0
        gen.layers[-1].weights[:] = 0.0
        disc = init_mlp([n_frames + y_dim, *HIDDEN, 1], head="sigmoid", seed=seed + 1)
        return cls(gen, disc, z_dim, conditions, train_scale)

    def generate(self, z, y) -> np.ndarray:
        out, _ = forward(self.generator, np.hstack([z, y]))
        return out

    def copy(self) -> "GanModel":
        return GanModel(
            self.generator.copy(), self.discriminator.copy(), self.z_dim, self.conditions, self.train_scale,
            _copy_adam(self.g_opt), _copy_adam(self.d_opt),
        )


def _copy_adam(s: AdamState) -> AdamState:
    return replace(s, m=[a.copy() for a in s.m], v=[a.copy() for a in s.v])


def _clamp(p):
    return np.clip(p, P_CLAMP, 1.0 - P_CLAMP)


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what}: {value}")
    return value


def d_loss(model: GanModel, real_x, real_y, fake_x, fake_y, grad: bool = False):
    """-mean log D(x|y) - mean log(1 - D(G(z|y)|y)).

    With ``grad=True`` also returns the discriminator parameter gradients.
    """
    disc = model.discriminator
    p_real, c_real = forward(disc, np.hstack([real_x, real_y]))
    p_fake, c_fake = forward(disc, np.hstack([fake_x, fake_y]))
    pr, pf = _clamp(p_real), _clamp(p_fake)
    loss = _finite(float(-np.mean(np.log(pr)) - np.mean(np.log(1.0 - pf))), "discriminator loss")
    if not grad:
        return loss
    n_r, n_f = p_real.shape[0], p_fake.shape[0]
    # clamping zeroes the gradient outside [P_CLAMP, 1 - P_CLAMP]
    g_real = np.where(pr == p_real, -1.0 / (n_r * pr), 0.0)
    g_fake = np.where(pf == p_fake, 1.0 / (n_f * (1.0 - pf)), 0.0)
    gr, _ = backward(disc, c_real, g_real)
    gf, _ = backward(disc, c_fake, g_fake)
    return loss, [a + b for a, b in zip(gr, gf)]


def g_loss(model: GanModel, z, y, paired_real, lam: float, grad: bool = False):
    """-mean log D(G(z|y)|y) + lam * mean_atoms sum_frames |x - G(z|y)|.

    With ``grad=True`` also returns the generator parameter gradients.
    """
    z, y, paired_real = np.atleast_2d(z), np.atleast_2d(y), np.atleast_2d(paired_real)
    if not (z.shape[0] == y.shape[0] == paired_real.shape[0]):
        raise DataError("z, conditions and paired fingerprints must have the same batch length")
    fake, c_gen = forward(model.generator, np.hstack([z, y]))
    p, c_disc = forward(model.discriminator, np.hstack([fake, y]))
    pc = _clamp(p)
    diff = fake - paired_real
    l1 = float(np.mean(np.sum(np.abs(diff), axis=1)))
    loss = _finite(float(-np.mean(np.log(pc))) + lam * l1, "generator loss")
    if not grad:
        return loss
    n = fake.shape[0]
    g_p = np.where(pc == p, -1.0 / (n * pc), 0.0)
    _, g_in = backward(model.discriminator, c_disc, g_p)
    g_fake = g_in[:, : model.n_frames] + (lam / n) * np.sign(diff)
    grads, _ = backward(model.generator, c_gen, g_fake)
    return loss, grads


def l1_term(model: GanModel, z, y, paired_real) -> float:
    fake = model.generate(np.atleast_2d(z), np.atleast_2d(y))
    return float(np.mean(np.sum(np.abs(paired_real - fake), axis=1)))


@dataclass
class EvalSet:
    """Benchmark fingerprints (unit-norm columns) with their conditions."""

    atoms: np.ndarray  # (n_frames, n_atoms)
    y: np.ndarray  # (n_atoms, y_dim)


@dataclass
class History:
    iteration: list[int] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)
    test_rmse: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.iteration)

    def rows(self):
        return list(zip(self.iteration, self.d_loss, self.g_loss, self.train_rmse, self.test_rmse))


def synthesize_atoms(model: GanModel, y: np.ndarray, z_policy: str = "zeros", seed: int = 0) -> np.ndarray:
    """Generator output for condition rows ``y``, unscaled and unit-normalized, shape (n_frames, n)."""
    n = y.shape[0]
    if y.shape[1] != model.y_dim:
        raise DataError(f"conditions have {y.shape[1]} columns but the model expects y_dim={model.y_dim}")
    if z_policy == "zeros":
        z = np.zeros((n, model.z_dim))
    elif z_policy == "random":
        z = np.random.default_rng(seed).standard_normal((n, model.z_dim))
    else:
        raise ConfigError(f"unknown z_policy {z_policy!r} (expected 'zeros' or 'random')")
    out = model.generate(z, y).T / model.train_scale
    norms = np.linalg.norm(out, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise NumericError("generator produced a zero or non-finite fingerprint")
    return out / norms


def rmse(synth: np.ndarray, bench: np.ndarray) -> float:
    return float(np.sqrt(np.mean((synth - bench) ** 2)))


def relative_error(synth: np.ndarray, bench: np.ndarray) -> float:
    """100 * ||synth - bench||_F / ||bench||_F."""
    return float(100.0 * np.linalg.norm(synth - bench) / np.linalg.norm(bench))


def train(
    training_set: Dictionary,
    config: TrainConfig,
    seq: SequenceParams | None = None,
    eval_sets: dict[str, EvalSet] | None = None,
    callback: Callable[[int, GanModel, History], None] | None = None,
    model: GanModel | None = None,
) -> tuple[GanModel, History]:
    """Alternating minibatch training of the conditional GAN.

    ``training_set`` must already be scaled with ``scale_for_training``.
    ``eval_sets`` may contain "train" and "test" benchmark sets for the
    learning curves; "train" defaults to the training set itself.
    """
    if training_set.train_scale is None:
        raise DataError("training set must be scaled with scale_for_training first")
    cfg = config
    if model is None:
        cmap = ConditionMap.fit(training_set.t1_ms, training_set.t2_ms, seq if cfg.use_sequence else None)
        model = GanModel.create(training_set.n_frames, cmap, training_set.train_scale, cfg.z_dim, cfg.seed)
    x_all = training_set.atoms.T  # (n_atoms, n_frames)
    y_all = model.conditions(training_set.t1_ms, training_set.t2_ms)
    n = x_all.shape[0]

    eval_sets = dict(eval_sets or {})
    if "train" not in eval_sets:
        bench = training_set.atoms / np.linalg.norm(training_set.atoms, axis=0)
        eval_sets["train"] = EvalSet(bench, y_all)
    hist = History()
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []

    def next_batch():
        nonlocal order
        if not order:
            perm = rng.permutation(n)
            order = [perm[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)][::-1]
        return order.pop()

    def evaluate(step, dl, gl):
        hist.iteration.append(step)
        hist.d_loss.append(dl)
        hist.g_loss.append(gl)
        for name, target in (("train", hist.train_rmse), ("test", hist.test_rmse)):
            es = eval_sets.get(name)
            target.append(rmse(synthesize_atoms(model, es.y), es.atoms) if es is not None else float("nan"))
        if callback is not None:
            callback(step, model, hist)

    g_params = model.generator.params()
    d_params = model.discriminator.params()
    for step in range(1, cfg.iterations + 1):
        try:
            for _ in range(cfg.d_steps_per_g_step):
                idx = next_batch()
                z = rng.standard_normal((idx.size, cfg.z_dim))
                fake = model.generate(z, y_all[idx])
                dl, grads = d_loss(model, x_all[idx], y_all[idx], fake, y_all[idx], grad=True)
                adam_step(d_params, grads, model.d_opt, cfg.lr)
                model.discriminator.touch()
            idx = next_batch()
            z = rng.standard_normal((idx.size, cfg.z_dim))
            gl, grads = g_loss(model, z, y_all[idx], x_all[idx], cfg.lam, grad=True)
            adam_step(g_params, grads, model.g_opt, cfg.lr)
            model.generator.touch()
        except NumericError as exc:
            raise NumericError(f"training diverged at step {step} (d_loss={locals().get('dl')}, "
                               f"g_loss={locals().get('gl')}): {exc}") from exc
        if step % cfg.interval == 0 or step == cfg.iterations:
            evaluate(step, dl, gl)
            if len(hist) % 10 == 0:
                log.info("step %d d_loss %.4f g_loss %.4f train_rmse %.3g", step, dl, gl, hist.train_rmse[-1])
    return model, hist


def validate_lambda(
    train_set: Dictionary,
    val_bench: Dictionary,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    config: TrainConfig = TrainConfig(),
    seq: SequenceParams | None = None,
):
    """Train one model per lambda with identical seeds and pick the lowest validation RMSE.

    ``val_bench`` holds unit-normalized validation fingerprints. Ties go to
    the larger lambda. Returns (rows, selected_lambda, models) where each
    row is (lambda, train_rmse, val_rmse).
    """
    if len(lambda_grid) == 0:
        raise ConfigError("lambda grid is empty")
    rows, models = [], {}
    for lam in lambda_grid:
        cfg = replace(config, lam=float(lam), eval_every=max(1, config.iterations))
        try:
            model, hist = train(train_set, cfg, seq)
        except NumericError as exc:
            raise NumericError(f"lambda={lam}: {exc}") from exc
        y_val = model.conditions(val_bench.t1_ms, val_bench.t2_ms)
        val = rmse(synthesize_atoms(model, y_val), val_bench.atoms)
        tr = hist.train_rmse[-1] if len(hist) else float("nan")
        rows.append((float(lam), tr, val))
        models[float(lam)] = model
    best = min(rows, key=lambda r: (r[2], -r[0]))
    return rows, best[0], models


def synthesize(
    model: GanModel,
    params: Sequence[TissueParams],
    seq: SequenceParams | None = None,
    z_policy: str = "zeros",
    seed: int = 0,
) -> Dictionary:
    """Fast dictionary synthesis with one generator pass per atom."""
    t1, t2 = params_to_arrays(params)
    t0 = time.perf_counter()
    y = model.conditions(t1, t2, seq)
    atoms = synthesize_atoms(model, y, z_policy, seed)
    wall = time.perf_counter() - t0
    return Dictionary(atoms, t1, t2, normalized=True, meta={"wall_seconds": wall})


def learning_curves(hist: History) -> list[tuple[int, float, float]]:
    if len(hist) == 0:
        raise DataError("empty training history")
    if any(b <= a for a, b in zip(hist.iteration, hist.iteration[1:])):
        raise DataError("history iterations must be strictly increasing")
    return list(zip(hist.iteration, hist.train_rmse, hist.test_rmse))
