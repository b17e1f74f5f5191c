"""Field files, CSV tables and checksums.

A field is stored as two files sharing a stem: ``stem.json`` holding
``{"dims", "lo", "hi", "kind"}`` and ``stem.bin`` holding little-endian
float64 values, node-major with the x-index fastest. Complex values are
interleaved (re, im); matrix values are 9 row-major floats per node.
"""
import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .mesh import BoxDomain, NodalField, build_mesh

KINDS = ("scalar", "complex", "matrix")


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def write_field(path, field):
    """Write a NodalField; returns (json_path, bin_path)."""
    stem = _stem(path)
    mesh = field.mesh
    kind = field.kind
    if kind not in KINDS:
        raise ParameterError(f"cannot store field of kind {kind!r}")
    if kind == "complex":
        z = field.as_complex()
        flat = np.stack([z.real, z.imag], axis=1).ravel()
    elif kind == "matrix":
        flat = np.asarray(field.values, dtype=float).reshape(mesh.n_nodes, -1).ravel()
    else:
        flat = np.asarray(field.values, dtype=float)
    meta = {"dims": list(mesh.dims), "lo": list(mesh.domain.lo), "hi": list(mesh.domain.hi), "kind": kind}
    jpath, bpath = stem.with_suffix(".json"), stem.with_suffix(".bin")
    jpath.write_text(json.dumps(meta) + "\n", encoding="utf-8")
    flat.astype("<f8").tofile(bpath)
    return jpath, bpath


def read_field(path, mesh=None):
    """Read a field written by write_field. A matching mesh is rebuilt if not supplied."""
    stem = _stem(path)
    meta = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    kind = meta["kind"]
    if kind not in KINDS:
        raise ParameterError(f"unknown field kind {kind!r}")
    dims = tuple(meta["dims"])
    if mesh is None:
        if len(set(dims)) != 1:
            raise ParameterError("only meshes with equal node counts per axis are supported")
        mesh = build_mesh(BoxDomain(tuple(meta["lo"]), tuple(meta["hi"])), dims[0])
    elif tuple(mesh.dims) != dims:
        raise ParameterError(f"mesh dims {mesh.dims} do not match file dims {dims}")
    flat = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    nn = int(np.prod(dims))
    if kind == "complex":
        pair = flat.reshape(nn, 2)
        return NodalField(mesh, pair[:, 0].copy(), pair[:, 1].copy())
    if kind == "matrix":
        n = len(dims)
        return NodalField(mesh, flat.reshape(nn, n, n).copy(), kind_hint="matrix")
    return NodalField(mesh, flat.copy())


def format_value(v):
    """Fixed 17-significant-digit text for floats so CSVs are byte-reproducible."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParameterError(f"{path}: empty CSV (header row missing)")
    return rows[0], rows[1:]


TELEMETRY_HEADER = ("run_id", "iter", "residual", "energy")


def write_telemetry(path, infos):
    rows = []
    for info in infos:
        rows.extend(info.rows())
    return write_csv(path, TELEMETRY_HEADER, rows)


def sha256(path):
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
