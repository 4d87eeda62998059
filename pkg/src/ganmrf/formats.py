"""Readers and writers for dictionaries, checkpoints, configs and maps.

Binary formats are little-endian.

MRFD (dictionary)::

    b"MRFD" | u32 version | u32 n_frames | u32 n_atoms | u32 flags (bit 0: normalized)
    f64 t1_ms[n_atoms] | f64 t2_ms[n_atoms] | f64 atoms[n_frames * n_atoms], column-major

GMRF (network checkpoint)::

    b"GMRF" | u32 version | u32 kind (0: single MLP, 1: GAN model)
    kind 1 only: model header (see ``_write_model_header``)
    u32 n_networks, then per network:
        u8 len + ascii hidden activation | u8 len + ascii output activation
        u32 n_layers | per layer: u32 in_dim | u32 out_dim | f64 weights (row-major) | f64 bias
        u64 t | f64 beta1 | f64 beta2 | f64 epsilon | f64 m (all params) | f64 v (all params)
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np
import yaml

from ganmrf.core import ConfigError, DataError, Dictionary, GridSpec, SequenceParams, TissueParams
from ganmrf.nn import AdamState, DenseLayer, Mlp

MRFD_MAGIC = b"MRFD"
GMRF_MAGIC = b"GMRF"
MRFD_VERSION = 1
GMRF_VERSION = 1
KIND_MLP, KIND_GAN = 0, 1


class _Reader:
    def __init__(self, data: bytes, path):
        self.buf = memoryview(data)
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError(f"{self.path}: truncated file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return bytes(out)

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        vals = struct.unpack("<" + fmt, self.take(size))
        return vals[0] if len(vals) == 1 else vals

    def f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def text(self) -> str:
        return self.take(self.unpack("B")).decode("ascii")


# --- dictionaries ---------------------------------------------------------------


def write_mrfd(path, d: Dictionary) -> None:
    out = io.BytesIO()
    out.write(MRFD_MAGIC)
    out.write(struct.pack("<IIII", MRFD_VERSION, d.n_frames, d.n_atoms, int(bool(d.normalized))))
    out.write(np.ascontiguousarray(d.t1_ms, dtype="<f8").tobytes())
    out.write(np.ascontiguousarray(d.t2_ms, dtype="<f8").tobytes())
    out.write(np.asarray(d.atoms, dtype="<f8").tobytes(order="F"))
    Path(path).write_bytes(out.getvalue())


def read_mrfd(path) -> Dictionary:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MRFD_MAGIC:
        raise DataError(f"{path}: not an MRFD dictionary file")
    version, n_frames, n_atoms, flags = r.unpack("IIII")
    if version != MRFD_VERSION:
        raise DataError(f"{path}: unsupported MRFD version {version}")
    t1 = r.f64(n_atoms)
    t2 = r.f64(n_atoms)
    atoms = r.f64(n_frames * n_atoms).reshape((n_frames, n_atoms), order="F")
    return Dictionary(np.ascontiguousarray(atoms), t1, t2, normalized=bool(flags & 1))


def write_dictionary_csv(path, d: Dictionary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t1_ms", "t2_ms"] + [f"frame_{i}" for i in range(d.n_frames)])
        for j in range(d.n_atoms):
            w.writerow([repr(float(d.t1_ms[j])), repr(float(d.t2_ms[j]))] + [repr(float(v)) for v in d.atoms[:, j]])


def read_dictionary_csv(path) -> Dictionary:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Dictionary(arr[:, 2:].T.copy(), arr[:, 0], arr[:, 1])


def write_params_csv(path, params) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t1_ms", "t2_ms"])
        for p in params:
            w.writerow([f"{p.t1_ms:g}", f"{p.t2_ms:g}"])


def read_params_csv(path) -> list[TissueParams]:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [TissueParams(float(a), float(b)) for a, b in arr]


# --- text configs ----------------------------------------------------------------


def load_yaml(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


def _segment(s) -> tuple[float, float, float]:
    """A segment is either {start, end, step} or a [start, end, step] list."""
    if isinstance(s, dict):
        return float(s["start"]), float(s["end"]), float(s["step"])
    start, end, step = s
    return float(start), float(end), float(step)


def grid_from_dict(data: dict, where: str = "grid spec") -> GridSpec:
    unknown = set(data) - {"t1_segments", "t2_segments"}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    segs = {}
    for key in ("t1_segments", "t2_segments"):
        items = data.get(key) or []
        try:
            segs[key] = tuple(_segment(s) for s in items)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {key} entries need numeric start, end and step") from exc
    return GridSpec(**segs).validate()


def grid_to_dict(spec: GridSpec) -> dict:
    return {
        key: [{"start": a, "end": b, "step": s} for a, b, s in getattr(spec, key)]
        for key in ("t1_segments", "t2_segments")
    }


def read_grid(path) -> GridSpec:
    return grid_from_dict(load_yaml(path), str(path))


def write_grid(path, spec: GridSpec) -> None:
    Path(path).write_text(yaml.safe_dump(grid_to_dict(spec), sort_keys=False))


def _read_two_column_csv(path, header: tuple[str, str]) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != header:
        raise ConfigError(f"{path}: expected header {','.join(header)}")
    try:
        return np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=np.float64).reshape(-1, 2)
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed row") from exc


def read_sequence_csv(path, te_ms: float = 2.0, inversion_enabled: bool = True, ti_ms: float = 20.64) -> SequenceParams:
    arr = _read_two_column_csv(path, ("flip_angle_deg", "tr_ms"))
    return SequenceParams(arr[:, 0], arr[:, 1], te_ms, inversion_enabled, ti_ms)


def write_sequence_csv(path, seq: SequenceParams) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flip_angle_deg", "tr_ms"])
        for a, t in zip(seq.flip_angles_deg, seq.tr_ms):
            w.writerow([repr(float(a)), repr(float(t))])


def read_profile_csv(path):
    from ganmrf.bloch import SliceProfile

    arr = _read_two_column_csv(path, ("position", "fa_scale"))
    return SliceProfile(arr[:, 0], arr[:, 1], f"file:{Path(path).name}")


def read_phantom_spec(path):
    from ganmrf.match import Region

    data = load_yaml(path)
    unknown = set(data) - {"width", "height", "regions"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    regions = []
    for i, r in enumerate(data.get("regions") or []):
        try:
            regions.append(Region(str(r["shape"]), tuple(float(g) for g in r["geometry"]), float(r["t1_ms"]), float(r["t2_ms"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: region {i} needs shape, geometry, t1_ms, t2_ms") from exc
    if not regions:
        raise ConfigError(f"{path}: no regions")
    return regions, int(data.get("width", 48)), int(data.get("height", 48))


# --- checkpoints -----------------------------------------------------------------


def _write_text(out, s: str):
    b = s.encode("ascii")
    out.write(struct.pack("<B", len(b)) + b)


def _write_mlp(out, mlp: Mlp, opt: AdamState | None):
    _write_text(out, mlp.hidden_activation)
    _write_text(out, mlp.output_activation)
    out.write(struct.pack("<I", len(mlp.layers)))
    for layer in mlp.layers:
        out.write(struct.pack("<II", layer.in_dim, layer.out_dim))
        out.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        out.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    opt = opt if opt is not None else AdamState.zeros_like(mlp.params())
    out.write(struct.pack("<Qddd", opt.t, opt.beta1, opt.beta2, opt.epsilon))
    for arr in [*opt.m, *opt.v]:
        out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_mlp(r: _Reader) -> tuple[Mlp, AdamState]:
    hidden, head = r.text(), r.text()
    layers = []
    for _ in range(r.unpack("I")):
        n_in, n_out = r.unpack("II")
        w = r.f64(n_in * n_out).reshape(n_out, n_in)
        layers.append(DenseLayer(w, r.f64(n_out)))
    mlp = Mlp(layers, hidden, head)
    t, b1, b2, eps = r.unpack("Qddd")
    shapes = [p.shape for p in mlp.params()]
    m = [r.f64(int(np.prod(s))).reshape(s) for s in shapes]
    v = [r.f64(int(np.prod(s))).reshape(s) for s in shapes]
    return mlp, AdamState(m, v, t, b1, b2, eps)


def save_mlp(path, mlp: Mlp, opt: AdamState | None = None) -> None:
    out = io.BytesIO()
    out.write(GMRF_MAGIC + struct.pack("<III", GMRF_VERSION, KIND_MLP, 1))
    _write_mlp(out, mlp, opt)
    Path(path).write_bytes(out.getvalue())


def _open_gmrf(path, kind: int) -> _Reader:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != GMRF_MAGIC:
        raise DataError(f"{path}: not a GMRF checkpoint")
    version, got = r.unpack("II")
    if version != GMRF_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    if got != kind:
        raise DataError(f"{path}: checkpoint kind {got}, expected {kind}")
    return r


def load_mlp(path) -> tuple[Mlp, AdamState]:
    r = _open_gmrf(path, KIND_MLP)
    if r.unpack("I") != 1:
        raise DataError(f"{path}: expected a single network")
    return _read_mlp(r)


def _write_model_header(out, model):
    c = model.conditions
    out.write(struct.pack("<IId", model.z_dim, model.y_dim, model.train_scale))
    out.write(struct.pack("<dddd", *c.log_t1_range, *c.log_t2_range))
    out.write(struct.pack("<Idddd", c.seq_bins, *c.fa_range, *c.tr_range))
    out.write(struct.pack("<I", len(c.seq_descriptor)))
    out.write(np.asarray(c.seq_descriptor, dtype="<f8").tobytes())


def save_gan(path, model) -> None:
    out = io.BytesIO()
    out.write(GMRF_MAGIC + struct.pack("<II", GMRF_VERSION, KIND_GAN))
    _write_model_header(out, model)
    out.write(struct.pack("<I", 2))
    _write_mlp(out, model.generator, model.g_opt)
    _write_mlp(out, model.discriminator, model.d_opt)
    Path(path).write_bytes(out.getvalue())


def load_gan(path):
    from ganmrf.gan import ConditionMap, GanModel

    r = _open_gmrf(path, KIND_GAN)
    z_dim, y_dim, train_scale = r.unpack("IId")
    l1lo, l1hi, l2lo, l2hi = r.unpack("dddd")
    bins, falo, fahi, trlo, trhi = r.unpack("Idddd")
    desc = tuple(float(v) for v in r.f64(r.unpack("I")))
    cmap = ConditionMap((l1lo, l1hi), (l2lo, l2hi), bins, (falo, fahi), (trlo, trhi), desc)
    if cmap.y_dim != y_dim:
        raise DataError(f"{path}: header y_dim {y_dim} disagrees with the stored condition map")
    if r.unpack("I") != 2:
        raise DataError(f"{path}: expected generator and discriminator")
    gen, g_opt = _read_mlp(r)
    disc, d_opt = _read_mlp(r)
    return GanModel(gen, disc, z_dim, cmap, train_scale, g_opt, d_opt)


# --- tables and images -----------------------------------------------------------


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_map_csv(path, pmap) -> None:
    h, w = pmap.t1_map.shape
    rows = (
        (x, y, float(pmap.t1_map[y, x]), float(pmap.t2_map[y, x]), float(pmap.similarity_map[y, x]))
        for y in range(h)
        for x in range(w)
    )
    write_rows(path, ["x", "y", "t1", "t2", "similarity"], rows)


def write_pgm16(path, image: np.ndarray, label: str = "") -> tuple[float, float]:
    """16-bit binary PGM with a ``.txt`` sidecar describing the gray-level scaling."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    gray = np.zeros(img.shape) if span == 0 else (img - lo) / span * 65535.0
    data = np.round(gray).astype(">u2")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + data.tobytes())
    Path(str(path) + ".txt").write_text(
        f"{label}\nmin_value={lo!r}\nmax_value={hi!r}\n"
        f"gray = round((value - min_value) / (max_value - min_value) * 65535)\n"
    )
    return lo, hi


def read_pgm16(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"65535":
        raise DataError(f"{path}: not a 16-bit binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(np.int64)
