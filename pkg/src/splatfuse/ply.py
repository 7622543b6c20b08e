"""PLY export/import using the usual splat-viewer vertex layout.

Per vertex: ``x y z f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3``.
``f_rest`` is channel-major (all red coefficients, then green, then blue),
opacity is stored as a logit, scales as logs and rotations as wxyz.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import GaussianSet, sh_coeff_count
from .errors import MalformedFile


def ply_fields(sh_degree: int) -> list[str]:
    n_rest = 3 * (sh_coeff_count(sh_degree) - 1)
    return (
        ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
        + [f"f_rest_{i}" for i in range(n_rest)]
        + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    )


def _to_table(g: GaussianSet) -> np.ndarray:
    n = len(g)
    rest = g.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, -1)
    return np.concatenate(
        [g.mu, g.sh[:, 0, :], rest, g.opacity_logit[:, None], g.log_scale, g.quat], axis=1
    )


def _from_table(table: np.ndarray, sh_degree: int) -> GaussianSet:
    n = len(table)
    k = sh_coeff_count(sh_degree)
    n_rest = 3 * (k - 1)
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = table[:, 3:6]
    sh[:, 1:, :] = table[:, 6 : 6 + n_rest].reshape(n, 3, k - 1).transpose(0, 2, 1)
    o = 6 + n_rest
    return GaussianSet(table[:, 0:3], table[:, o + 4 : o + 8], table[:, o + 1 : o + 4], table[:, o], sh)


def export_ply(gaussians: GaussianSet, path, binary: bool = True) -> None:
    fields = ply_fields(gaussians.sh_degree)
    table = _to_table(gaussians) if len(gaussians) else np.zeros((0, len(fields)))
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(table)}"]
    header += [f"property float {f}" for f in fields]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        body = table.astype("<f4").tobytes()
    else:
        body = "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in table).encode("ascii")
    Path(path).write_bytes(head + body)


def read_ply_header(data: bytes) -> tuple[str, int, list[tuple[str, str]], int]:
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise MalformedFile("not a PLY file")
    lines = data[:end].decode("ascii").splitlines()
    fmt, count, props, in_vertex = None, None, [], False
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append((parts[1], parts[-1]))
    if fmt is None or count is None:
        raise MalformedFile("PLY header lacks format or vertex element")
    return fmt, count, props, end + len(b"end_header\n")


_PLY_TYPES = {"float": "f4", "float32": "f4", "double": "f8", "float64": "f8"}


def import_ply(path) -> GaussianSet:
    data = Path(path).read_bytes()
    fmt, count, props, offset = read_ply_header(data)
    names = [p[1] for p in props]
    try:
        dtype = np.dtype([(n, ("<" if fmt == "binary_little_endian" else ">") + _PLY_TYPES[t]) for t, n in props])
    except KeyError as exc:
        raise MalformedFile(f"unsupported PLY property type {exc}") from exc
    if fmt == "ascii":
        rows = np.loadtxt(data[offset:].decode("ascii").splitlines(), ndmin=2) if count else np.zeros((0, len(names)))
        cols = {n: rows[:, i] for i, n in enumerate(names)}
    elif fmt in ("binary_little_endian", "binary_big_endian"):
        if len(data) - offset < count * dtype.itemsize:
            raise MalformedFile("PLY body shorter than header implies")
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        cols = {n: rec[n].astype(np.float64) for n in names}
    else:
        raise MalformedFile(f"unknown PLY format {fmt}")
    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    degree = int(round(np.sqrt(n_rest / 3 + 1))) - 1
    expected = ply_fields(degree)
    missing = [f for f in expected if f not in cols]
    if missing or 3 * (sh_coeff_count(degree) - 1) != n_rest:
        raise MalformedFile(f"PLY is missing splat fields {missing[:4]}")
    table = np.stack([cols[f] for f in expected], axis=1) if count else np.zeros((0, len(expected)))
    return _from_table(table, degree)
