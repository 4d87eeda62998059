"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line (visible in
``pytest -v`` output) before asserting, so the summary survives failures.
Criteria 6-9 share one desk-scale CLI run (``desk_run`` fixture, ~5 min).
"""

import math
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bloch_oracle import oracle_fingerprint
from conftest import rel_l2
from ganmrf.bloch import (
    EQUILIBRIUM,
    SimGrid,
    dephase,
    default_sequence,
    relax,
    rf_rotate,
    simulate_atoms,
    simulate_fingerprint,
    sinc_profile,
)
from ganmrf.core import COARSE, FINE, TABLE1, Dictionary, TissueParams, expand_grid, normalize_atoms, split_dataset
from ganmrf.formats import load_gan, read_mrfd, read_rows, write_mrfd
from ganmrf.gan import ConditionMap, GanModel, d_loss, g_loss, relative_error, synthesize, synthesize_atoms
from ganmrf.match import match_indices

many = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return report


def test_criterion_1_grid_exactness(verdict):
    t0 = time.perf_counter()
    counts = tuple(len(expand_grid(g)) for g in (TABLE1, COARSE, FINE))
    dt = time.perf_counter() - t0
    verdict(1, counts == (5970, 297, 106160) and dt < 1.0, f"counts={counts} runtime={dt:.3f}s")


def test_criterion_2_split_exactness(verdict):
    d = Dictionary.from_params(np.ones((1, 5970)), expand_grid(TABLE1))
    sizes = split_dataset(d, (0.6, 0.2, 0.2), seed=0).sizes
    verdict(2, sizes == (3582, 1194, 1194), f"sizes={sizes}")


@pytest.mark.slow
def test_criterion_3_bloch_oracle(verdict):
    t0 = time.perf_counter()
    seq = default_sequence(1000, 0)
    tissues = [TissueParams(1000, 100), TissueParams(950, 40), TissueParams(1500, 60)]
    dense = sinc_profile(63).fa_scale
    discrepancy = max(rel_l2(simulate_fingerprint(t, seq), oracle_fingerprint(t, seq, dense, 200)) for t in tissues)
    matched = max(
        np.max(np.abs(simulate_fingerprint(t, seq) - oracle_fingerprint(t, seq, sinc_profile(21).fa_scale, 50)))
        for t in tissues
    )
    dt = time.perf_counter() - t0
    ok = discrepancy <= 1e-3 and matched <= 1e-10 and dt < 300
    verdict(3, ok, f"dense rel L2={discrepancy:.2e} (<=1e-3), matched max abs={matched:.2e} (<=1e-10), runtime={dt:.1f}s")


def _fd_worst(net, loss_fn, seed, n_check=50, h=1e-6):
    _, grads = loss_fn(grad=True)
    params = net.params()
    sizes = [p.size for p in params]
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for f in np.random.default_rng(seed).choice(offsets[-1], n_check, replace=False):
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        idx = np.unravel_index(f - offsets[k], params[k].shape)
        old = params[k][idx]
        vals = []
        for x in (old + h, old - h):
            params[k][idx] = x
            net.touch()
            vals.append(loss_fn())
        params[k][idx] = old
        net.touch()
        num = (vals[0] - vals[1]) / (2 * h)
        an = grads[k][idx]
        worst = max(worst, abs(num - an) / max(abs(num), abs(an), 1e-7))
    return worst


def test_criterion_4_gradients(verdict, desk_seq):
    t0 = time.perf_counter()
    cmap = ConditionMap.fit([50, 3000], [10, 500], desk_seq)
    model = GanModel.create(200, cmap, 1.0, seed=0)
    rng = np.random.default_rng(1)
    for layer in model.generator.layers:  # leave the zero-initialized start
        layer.weights[:] = rng.normal(0, 0.1, layer.weights.shape)
    model.generator.touch()
    n = 30
    y = cmap(rng.uniform(50, 3000, n), rng.uniform(10, 500, n))
    z = rng.standard_normal((n, 32))
    x = rng.uniform(-0.5, 0.5, (n, 200))
    fake = model.generate(z, y)
    wd = _fd_worst(model.discriminator, lambda grad=False: d_loss(model, x, y, fake, y, grad=grad), seed=2)
    wg = _fd_worst(model.generator, lambda grad=False: g_loss(model, z, y, x, 100.0, grad=grad), seed=3)
    dt = time.perf_counter() - t0
    verdict(4, max(wd, wg) <= 1e-4 and dt < 60, f"max rel err D={wd:.2e} G={wg:.2e} (<=1e-4), runtime={dt:.1f}s")


def test_criterion_5_loss_spot_values(verdict, desk_seq):
    cmap = ConditionMap.fit([50, 3000], [10, 500], desk_seq)
    model = GanModel.create(200, cmap, 1.0, seed=0)  # generator starts at zero output
    model.discriminator.layers[-1].weights[:] = 0  # D = 0.5 everywhere
    rng = np.random.default_rng(0)
    y = cmap(rng.uniform(50, 3000, 8), rng.uniform(10, 500, 8))
    z = rng.standard_normal((8, 32))
    real = rng.uniform(-0.3, 0.3, (8, 200))
    fake = model.generate(z, y)
    dl = d_loss(model, real, y, fake, y)
    gl = g_loss(model, z, y, fake, 100.0)
    ok = abs(dl - 2 * math.log(2)) <= 1e-9 and abs(gl - math.log(2)) <= 1e-9
    verdict(5, ok, f"d_loss={dl:.12f} (2 log 2), g_loss={gl:.12f} (log 2)")


def _desk_artifacts(desk_run):
    out, codes, seconds = desk_run
    assert all(c == 0 for c in codes.values()), codes
    return out, seconds


@pytest.mark.slow
def test_criterion_6_desk_training(verdict, desk_run):
    out, seconds = _desk_artifacts(desk_run)
    model = load_gan(out / "checkpoint.gmrf")
    d = read_mrfd(out / "dictionary.mrfd")
    split = read_rows(out / "split.csv")
    errs = {}
    for part in ("train", "test"):
        idx = [int(r["atom"]) for r in split if r["part"] == part]
        bench = normalize_atoms(d.subset(idx))
        synth = synthesize_atoms(model, model.conditions(bench.t1_ms, bench.t2_ms))
        errs[part] = relative_error(synth, bench.atoms)
    curves = read_rows(out / "curves.csv")
    dec = all(float(curves[-1][k]) < float(curves[0][k]) for k in ("train_rmse", "test_rmse"))
    steps = int(curves[-1]["iteration"])
    ok = errs["train"] <= 5 and errs["test"] <= 10 and dec and steps <= 20000 and seconds["train"] <= 1800
    verdict(
        6,
        ok,
        f"train rel RMSE={errs['train']:.2f}% (<=5), test={errs['test']:.2f}% (<=10), "
        f"curves decreasing={dec}, steps={steps}, train time={seconds['train']:.0f}s",
    )


@pytest.mark.slow
def test_criterion_7_interpolation(verdict, desk_run):
    out, _ = _desk_artifacts(desk_run)
    model = load_gan(out / "checkpoint.gmrf")
    seq = default_sequence(200, 0)
    coarse = set(expand_grid(COARSE))
    pool = [p for p in expand_grid(FINE) if 50 <= p.t1_ms <= 3000 and 10 <= p.t2_ms <= 500 and p not in coarse]
    rng = np.random.default_rng(7)
    pick = [pool[i] for i in rng.choice(len(pool), 500, replace=False)]
    synth = synthesize(model, pick, seq)
    t1, t2 = np.array(pick).T
    bench = simulate_atoms(t1, t2, seq, sinc_profile(21), SimGrid(21, 50))
    bench /= np.linalg.norm(bench, axis=1, keepdims=True)
    per_atom = 100 * np.linalg.norm(synth.atoms.T - bench, axis=1)
    med = float(np.median(per_atom))
    verdict(7, med <= 10, f"median per-atom rel L2={med:.2f}% over 500 unseen points (<=10), 90th pct={np.percentile(per_atom, 90):.2f}%")


@pytest.mark.slow
def test_criterion_8_phantom_maps(verdict, desk_run):
    out, _ = _desk_artifacts(desk_run)
    m = {r["metric"]: float(r["value"]) for r in read_rows(out / "match.csv")}
    t1, t2 = m["t1_rel_rmse_gan_vs_bloch"], m["t2_rel_rmse_gan_vs_bloch"]
    verdict(8, t1 <= 5 and t2 <= 12, f"T1 rel RMSE={t1:.2f}% (<=5), T2={t2:.2f}% (<=12), noise_sigma=0.02")


@pytest.mark.slow
def test_criterion_9_speedup(verdict, desk_run):
    out, _ = _desk_artifacts(desk_run)
    m = {r["metric"]: float(r["value"]) for r in read_rows(out / "report.csv")}
    s = m["speedup_factor"]
    verdict(
        9,
        s >= 10,
        f"speedup={s:.0f}x (>=10): simulate {m['simulate_wall_seconds']:.2f}s vs synthesize {m['synth_wall_seconds']:.4f}s",
    )


# --- criterion 10: property suite, 1000 cases each --------------------------------

_C10 = {"t0": None, "passed": []}


def _c10(name):
    if _C10["t0"] is None:
        _C10["t0"] = time.perf_counter()
    _C10["passed"].append(name)


@many
@given(st.integers(0, 296), st.floats(1e-6, 1e6), st.booleans(), st.integers(0, 2**32 - 1))
def test_c10_matching_scale_invariance(coarse_unit, j, c, neg, seed):
    rng = np.random.default_rng(seed)
    s = coarse_unit.atoms[:, j] + 0.01 * rng.standard_normal(200)
    ref, _ = match_indices(s[None, :], coarse_unit)
    got, _ = match_indices((-c if neg else c) * s[None, :], coarse_unit)
    assert got[0] == ref[0]
    _c10("matching scale invariance")


@many
@given(st.lists(st.integers(0, 296), min_size=1, max_size=20))
def test_c10_matching_idempotent_on_own_atoms(coarse_unit, cols):
    idx, sim = match_indices(coarse_unit.atoms[:, cols].T, coarse_unit)
    assert idx.tolist() == cols
    assert np.all(sim > 1 - 1e-12)
    _c10("matching idempotence")


@many
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 8)), elements=st.floats(-1e3, 1e3)))
def test_c10_normalization_idempotent(atoms):
    atoms = atoms + 1e-3 * (np.abs(atoms).sum(axis=0) == 0)  # no zero columns
    d = Dictionary(atoms, np.full(atoms.shape[1], 1000.0), np.full(atoms.shape[1], 100.0))
    once = normalize_atoms(d)
    twice = normalize_atoms(once)
    np.testing.assert_allclose(twice.atoms, once.atoms, rtol=0, atol=1e-15)
    _c10("normalization idempotence")


op = st.one_of(
    st.tuples(st.just("rf"), st.floats(-720, 720), st.floats(-360, 360)),
    st.tuples(st.just("relax"), st.floats(0, 1e4), st.floats(1, 5000)),
    st.tuples(st.just("dephase"), st.floats(-10, 10), st.just(0.0)),
)


@many
@given(st.lists(op, max_size=40), st.floats(0.01, 1))
def test_c10_isochromat_norm_bound(ops, t2_frac):
    m = EQUILIBRIUM
    for kind, a, b in ops:
        if kind == "rf":
            m = rf_rotate(m, a, b)
        elif kind == "relax":
            m = relax(m, a, TissueParams(b, b * t2_frac))
        else:
            m = dephase(m, a)
        assert math.sqrt(m.mx**2 + m.my**2 + m.mz**2) <= 1 + 1e-12
    _c10("isochromat norm bound")


_SYNTH_MODEL = {}


def _synth_model(seq):
    if "m" not in _SYNTH_MODEL:
        cmap = ConditionMap.fit([50, 3000], [10, 500], seq)
        model = GanModel.create(200, cmap, 1.0, seed=5)
        rng = np.random.default_rng(5)
        for layer in model.generator.layers:
            layer.weights[:] = rng.normal(0, 0.1, layer.weights.shape)
        _SYNTH_MODEL["m"] = model
    return _SYNTH_MODEL["m"]


@many
@given(st.lists(st.tuples(st.floats(50, 3000), st.floats(10, 500)), min_size=1, max_size=10))
def test_c10_synthesis_determinism(desk_seq, pts):
    model = _synth_model(desk_seq)
    params = [TissueParams(a, min(b, a)) for a, b in pts]
    a = synthesize(model, params, desk_seq).atoms
    b = synthesize(model, params, desk_seq).atoms
    assert np.array_equal(a, b)
    _c10("synthesis determinism")


@many
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 6)), elements=st.floats(-1, 1)))
def test_c10_byte_identical_artifacts(tmp_path_factory, atoms):
    n = atoms.shape[1]
    d = Dictionary(atoms, np.linspace(100, 900, n), np.linspace(10, 90, n))
    base = tmp_path_factory.getbasetemp() / "c10"
    base.mkdir(exist_ok=True)
    write_mrfd(base / "a.mrfd", d)
    first = (base / "a.mrfd").read_bytes()
    write_mrfd(base / "a.mrfd", read_mrfd(base / "a.mrfd"))
    assert (base / "a.mrfd").read_bytes() == first
    _c10("byte-identical reruns")


def test_criterion_10_summary(verdict):
    names = _C10["passed"]
    if not names:
        pytest.skip("summarizes the test_c10_* properties; run it in the same session")
    kinds = sorted(set(names))
    dt = time.perf_counter() - (_C10["t0"] or time.perf_counter())
    counts = {k: names.count(k) for k in kinds}
    ok = len(kinds) == 6 and all(c >= 1000 for c in counts.values()) and dt < 120
    verdict(10, ok, f"{len(kinds)}/6 properties, min cases={min(counts.values(), default=0)}, runtime={dt:.1f}s")
