"""Command-line pipeline: grid, simulate, train, validate, synth, match, report.

Exit codes: 0 success, 2 configuration error, 3 data/shape error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ganmrf import formats
from ganmrf.bloch import SimGrid, default_sequence, simulate_dictionary, sinc_profile
from ganmrf.core import (
    PRESET_GRIDS,
    ConfigError,
    DataError,
    NumericError,
    expand_grid,
    normalize_atoms,
    scale_for_training,
    split_dataset,
)
from ganmrf.gan import (
    DEFAULT_LAMBDA_GRID,
    ConditionMap,
    EvalSet,
    GanModel,
    TrainConfig,
    learning_curves,
    synthesize,
    train,
    validate_lambda,
)
from ganmrf.match import default_regions, diff_map, make_phantom, match_volume, rel_rmse

log = logging.getLogger("ganmrf")
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
_T_START = time.perf_counter()


@dataclass
class RunConfig:
    grid: str = "coarse"
    synth_grid: str | None = None
    sequence: str | None = None
    n_frames: int = 1000
    sequence_seed: int = 0
    te_ms: float = 2.0
    ti_ms: float = 20.64
    inversion: bool = True
    profile: str | None = None
    n_profile: int = 21
    n_dephase: int = 50
    dictionary: str | None = None
    checkpoint: str | None = None
    phantom: str | None = None
    phantom_size: int = 48
    noise_sigma: float = 0.02
    signals: str | None = None
    split: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    lambda_grid: list = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    validate_iterations: int | None = None
    z_policy: str = "zeros"
    match_dictionaries: dict | None = None
    train: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        data = formats.load_yaml(path)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        train_known = {f.name for f in fields(TrainConfig)} - {"seed"}
        bad = set(data.get("train") or {}) - train_known
        if bad:
            raise ConfigError(f"{path}: unknown train keys {sorted(bad)}")
        base = Path(path).parent
        for key in ("synth_grid", "grid", "sequence", "profile", "dictionary", "checkpoint", "phantom", "signals"):
            v = data.get(key)
            if isinstance(v, str) and v not in PRESET_GRIDS and not Path(v).is_absolute():
                data[key] = str(base / v)
        if data.get("match_dictionaries"):
            data["match_dictionaries"] = {
                k: v if Path(v).is_absolute() else str(base / v) for k, v in data["match_dictionaries"].items()
            }
        return cls(**data)


class Context:
    def __init__(self, cfg: RunConfig, seed: int, threads: int, out: Path):
        self.cfg = cfg
        self.seed = seed
        self.threads = threads if threads > 0 else (os.cpu_count() or 1)
        self.out = out
        out.mkdir(parents=True, exist_ok=True)

    def path(self, configured: str | None, default: str) -> Path:
        return Path(configured) if configured else self.out / default

    def require(self, *paths: Path):
        for p in paths:
            if not Path(p).is_file():
                raise ConfigError(f"missing required file: {p}")

    def grid_spec(self, which: str = "grid"):
        value = getattr(self.cfg, which) or self.cfg.grid
        if value in PRESET_GRIDS:
            return PRESET_GRIDS[value]
        self.require(Path(value))
        return formats.read_grid(value)

    def sequence(self):
        c = self.cfg
        if c.sequence:
            self.require(Path(c.sequence))
            return formats.read_sequence_csv(c.sequence, c.te_ms, c.inversion, c.ti_ms)
        return default_sequence(c.n_frames, c.sequence_seed, te_ms=c.te_ms, inversion_enabled=c.inversion, ti_ms=c.ti_ms)

    def profile_and_grid(self):
        c = self.cfg
        if c.profile:
            self.require(Path(c.profile))
            profile = formats.read_profile_csv(c.profile)
        else:
            profile = sinc_profile(c.n_profile)
        return profile, SimGrid(profile.n_positions, c.n_dephase)

    def train_config(self, **over) -> TrainConfig:
        casts = {"lam": float, "lr": float, "use_sequence": bool}
        try:
            given = {k: (None if v is None else casts.get(k, int)(v)) for k, v in self.cfg.train.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train settings {self.cfg.train}: {exc}") from exc
        return TrainConfig(**{**given, "seed": self.seed, **over})

    def splits(self, d):
        sp = split_dataset(d, tuple(self.cfg.split), self.seed)
        return sp, [normalize_atoms(d.subset(i)) for i in (sp.train_idx, sp.val_idx, sp.test_idx)]


def _write_timing(path: Path, n_atoms: int, n_frames: int, wall: float, cold: float):
    formats.write_rows(
        path,
        ["atoms", "frames", "wall_seconds", "cold_start_seconds", "seconds_per_atom"],
        [(n_atoms, n_frames, wall, cold, wall / n_atoms)],
    )


def cmd_grid(ctx: Context, args) -> int:
    params = expand_grid(ctx.grid_spec())
    if not params:
        raise ConfigError("empty grid")
    formats.write_params_csv(ctx.out / "params.csv", params)
    print(len(params))
    return 0


def cmd_simulate(ctx: Context, args) -> int:
    synth_target = args.target == "synth"
    params = expand_grid(ctx.grid_spec("synth_grid" if synth_target else "grid"))
    seq = ctx.sequence()
    profile, grid = ctx.profile_and_grid()
    cold = time.perf_counter() - _T_START
    d = simulate_dictionary(params, seq, profile, grid, threads=ctx.threads)
    name = "bench" if synth_target else "dictionary"
    formats.write_mrfd(ctx.out / f"{name}.mrfd", d)
    formats.write_sequence_csv(ctx.out / "sequence.csv", seq)
    timing = "bench_timing.csv" if synth_target else "timing.csv"
    _write_timing(ctx.out / timing, d.n_atoms, d.n_frames, d.meta["wall_seconds"], cold)
    print(f"simulated {d.n_atoms} atoms x {d.n_frames} frames in {d.meta['wall_seconds']:.3f} s")
    return 0


def _load_training_dictionary(ctx: Context):
    path = ctx.path(ctx.cfg.dictionary, "dictionary.mrfd")
    ctx.require(path)
    d = formats.read_mrfd(path)
    seq = ctx.sequence()
    if seq.n_frames != d.n_frames:
        raise DataError(f"{path} has {d.n_frames} frames but the sequence has {seq.n_frames}")
    return d, seq


def cmd_train(ctx: Context, args) -> int:
    d, seq = _load_training_dictionary(ctx)
    cfg = ctx.train_config()
    sp, (tr, _, te) = ctx.splits(d)
    trs, _ = scale_for_training(tr)
    cmap = ConditionMap.fit(trs.t1_ms, trs.t2_ms, seq if cfg.use_sequence else None)
    model = GanModel.create(trs.n_frames, cmap, trs.train_scale, cfg.z_dim, cfg.seed)
    evals = {"test": EvalSet(te.atoms, cmap(te.t1_ms, te.t2_ms))}
    model, hist = train(trs, cfg, seq, evals, model=model)
    formats.save_gan(ctx.path(ctx.cfg.checkpoint, "checkpoint.gmrf"), model)
    formats.write_rows(ctx.out / "history.csv", ["iteration", "d_loss", "g_loss", "train_rmse", "test_rmse"], hist.rows())
    if len(hist):
        formats.write_rows(ctx.out / "curves.csv", ["iteration", "train_rmse", "test_rmse"], learning_curves(hist))
    parts = [("train", sp.train_idx), ("val", sp.val_idx), ("test", sp.test_idx)]
    formats.write_rows(ctx.out / "split.csv", ["atom", "part"], sorted((int(i), name) for name, idx in parts for i in idx))
    if len(hist):
        print(f"trained {cfg.iterations} steps: train_rmse {hist.train_rmse[-1]:.4g}, test_rmse {hist.test_rmse[-1]:.4g}")
    return 0


def cmd_validate(ctx: Context, args) -> int:
    d, seq = _load_training_dictionary(ctx)
    over = {}
    if ctx.cfg.validate_iterations is not None:
        over["iterations"] = ctx.cfg.validate_iterations
    cfg = ctx.train_config(**over)
    _, (tr, val, _) = ctx.splits(d)
    trs, _ = scale_for_training(tr)
    rows, best, _ = validate_lambda(trs, val, ctx.cfg.lambda_grid, cfg, seq)
    formats.write_rows(
        ctx.out / "lambda_table.csv",
        ["lambda", "train_rmse", "val_rmse", "selected"],
        [(lam, a, b, int(lam == best)) for lam, a, b in rows],
    )
    print(f"selected lambda = {best:g}")
    return 0


def cmd_synth(ctx: Context, args) -> int:
    ckpt = ctx.path(ctx.cfg.checkpoint, "checkpoint.gmrf")
    ctx.require(ckpt)
    model = formats.load_gan(ckpt)
    params = expand_grid(ctx.grid_spec("synth_grid"))
    seq = ctx.sequence() if model.conditions.seq_descriptor else None
    if seq is not None and seq.n_frames != model.n_frames:
        raise DataError(f"checkpoint synthesizes {model.n_frames} frames but the sequence has {seq.n_frames}")
    cold = time.perf_counter() - _T_START
    synthesize(model, params[: min(len(params), 64)], seq)  # warm-up
    d = synthesize(model, params, seq, ctx.cfg.z_policy, ctx.seed)
    formats.write_mrfd(ctx.out / "synth.mrfd", d)
    _write_timing(ctx.out / "synth_timing.csv", d.n_atoms, d.n_frames, d.meta["wall_seconds"], cold)
    print(f"synthesized {d.n_atoms} atoms x {d.n_frames} frames in {d.meta['wall_seconds']:.4f} s")
    return 0


def cmd_match(ctx: Context, args) -> int:
    c = ctx.cfg
    dicts = c.match_dictionaries or {"bloch": str(ctx.out / "bench.mrfd"), "gan": str(ctx.out / "synth.mrfd")}
    ctx.require(*map(Path, dicts.values()))
    if c.phantom:
        ctx.require(Path(c.phantom))
        regions, width, height = formats.read_phantom_spec(c.phantom)
    else:
        regions, width, height = default_regions(c.phantom_size), c.phantom_size, c.phantom_size
    if c.signals:
        ctx.require(Path(c.signals))
        signals = np.load(c.signals)
        truth = None
    else:
        profile, grid = ctx.profile_and_grid()
        phantom, signals = make_phantom(
            regions, ctx.sequence(), profile, grid, c.noise_sigma, ctx.seed, width, height
        )
        truth = phantom
        formats.write_pgm16(ctx.out / "truth_t1.pgm", phantom.t1_map, "ground truth T1 (ms)")
        formats.write_pgm16(ctx.out / "truth_t2.pgm", phantom.t2_map, "ground truth T2 (ms)")

    maps = {}
    for name, path in dicts.items():
        d = normalize_atoms(formats.read_mrfd(path))
        if d.n_frames != signals.shape[-1]:
            raise DataError(f"{path} has {d.n_frames} frames but the signals have {signals.shape[-1]}")
        pm = match_volume(signals, d, threads=ctx.threads)
        maps[name] = pm
        formats.write_map_csv(ctx.out / f"maps_{name}.csv", pm)
        formats.write_pgm16(ctx.out / f"t1_{name}.pgm", pm.t1_map, f"T1 (ms) matched against {name}")
        formats.write_pgm16(ctx.out / f"t2_{name}.pgm", pm.t2_map, f"T2 (ms) matched against {name}")

    rows = []
    if truth is not None:
        for name, pm in maps.items():
            rows.append((f"t1_rel_rmse_{name}_vs_truth", rel_rmse(pm.t1_map, truth.t1_map)))
            rows.append((f"t2_rel_rmse_{name}_vs_truth", rel_rmse(pm.t2_map, truth.t2_map)))
    if "bloch" in maps and "gan" in maps:
        a, b = maps["gan"], maps["bloch"]
        rows.append(("t1_rel_rmse_gan_vs_bloch", rel_rmse(a.t1_map, b.t1_map)))
        rows.append(("t2_rel_rmse_gan_vs_bloch", rel_rmse(a.t2_map, b.t2_map)))
        for which in ("t1", "t2"):
            img, (lo, hi) = diff_map(getattr(a, f"{which}_map"), getattr(b, f"{which}_map"), 10.0)
            formats.write_pgm16(ctx.out / f"diff_{which}_x10.pgm", img, f"{which.upper()} difference (gan - bloch) x 10, ms")
    formats.write_rows(ctx.out / "match.csv", ["metric", "value"], rows)
    for k, v in rows:
        print(f"{k}: {v:.4f}%")
    return 0


def cmd_report(ctx: Context, args) -> int:
    needed = {n: ctx.out / n for n in ("bench_timing.csv", "synth_timing.csv", "match.csv", "curves.csv", "lambda_table.csv")}
    ctx.require(*needed.values())
    bench = formats.read_rows(needed["bench_timing.csv"])[0]
    synth = formats.read_rows(needed["synth_timing.csv"])[0]
    rows = [
        ("simulate_wall_seconds", float(bench["wall_seconds"])),
        ("simulate_cold_start_seconds", float(bench["cold_start_seconds"])),
        ("simulate_seconds_per_atom", float(bench["seconds_per_atom"])),
        ("synth_wall_seconds", float(synth["wall_seconds"])),
        ("synth_cold_start_seconds", float(synth["cold_start_seconds"])),
        ("synth_seconds_per_atom", float(synth["seconds_per_atom"])),
        ("speedup_factor", float(bench["wall_seconds"]) / float(synth["wall_seconds"])),
    ]
    rows += [(r["metric"], float(r["value"])) for r in formats.read_rows(needed["match.csv"])]
    curves = formats.read_rows(needed["curves.csv"])
    rows += [
        ("first_train_rmse", float(curves[0]["train_rmse"])),
        ("final_train_rmse", float(curves[-1]["train_rmse"])),
        ("first_test_rmse", float(curves[0]["test_rmse"])),
        ("final_test_rmse", float(curves[-1]["test_rmse"])),
    ]
    for r in formats.read_rows(needed["lambda_table.csv"]):
        rows.append((f"lambda_{float(r['lambda']):g}_val_rmse", float(r["val_rmse"])))
        if int(r["selected"]):
            rows.append(("selected_lambda", float(r["lambda"])))
    formats.write_rows(ctx.out / "report.csv", ["metric", "value"], rows)
    text = "\n".join(f"{k:>34s}  {v:.6g}" for k, v in rows)
    (ctx.out / "report.txt").write_text(text + "\n")
    print(text)
    return 0


COMMANDS = {
    "grid": cmd_grid,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "validate": cmd_validate,
    "synth": cmd_synth,
    "match": cmd_match,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ganmrf", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, default=0, help="seed for splits, training and noise")
    p.add_argument("--threads", type=int, default=1, help="worker threads (0 = auto)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "simulate":
            sp.add_argument("--target", choices=("train", "synth"), default="train",
                            help="simulate the training grid or the synthesis grid (benchmark)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        ctx = Context(cfg, args.seed, args.threads, Path(args.out))
        return COMMANDS[args.command](ctx, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
