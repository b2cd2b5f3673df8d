"""Minimal PLY point-cloud reader and writer.

Supports ascii and binary_little_endian files with a ``vertex`` element
carrying x, y, z (float32 or float64) and optional nx, ny, nz. Unknown
scalar properties are skipped; other elements are skipped when possible.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import FormatError
from .geometry import PointCloud

_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_FLOAT_NAMES = {"f4": "float", "f8": "double"}


def save_ply(path, cloud: PointCloud, fmt="binary_little_endian",
             dtype="double", comments=()):
    """Write a cloud to PLY. ``dtype`` is ``"float"`` or ``"double"``;
    doubles round-trip float64 coordinates bit for bit."""
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY format {fmt!r}")
    if dtype not in ("float", "double"):
        raise ValueError("dtype must be 'float' or 'double'")
    np_type = "<f4" if dtype == "float" else "<f8"
    names = ["x", "y", "z"]
    columns = [cloud.points[:, k] for k in range(3)]
    if cloud.normals is not None:
        names += ["nx", "ny", "nz"]
        columns += [cloud.normals[:, k] for k in range(3)]

    header = ["ply", f"format {fmt} 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {len(cloud)}")
    header += [f"property {dtype} {name}" for name in names]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if fmt == "ascii":
            rows = np.column_stack(columns) if columns and len(cloud) else None
            if rows is not None:
                lines = [" ".join("%.17g" % v for v in row) for row in rows]
                fh.write(("\n".join(lines) + "\n").encode("ascii"))
        else:
            rec = np.empty(len(cloud), dtype=[(n, np_type) for n in names])
            for name, col in zip(names, columns):
                rec[name] = col
            fh.write(rec.tobytes())


def _parse_header(fh):
    """Returns (fmt, elements, comments, header_size). Each element is
    (name, count, [(prop_name, np_type) or (prop_name, count_type, item_type)])."""
    offset = 0
    line = fh.readline()
    offset += len(line)
    if line.strip() != b"ply":
        raise FormatError(f"bad magic at byte 0: expected 'ply', got {line[:16]!r}")
    fmt = None
    elements = []
    comments = []
    current = None
    while True:
        line = fh.readline()
        if not line:
            raise FormatError(f"truncated header at byte {offset}")
        offset += len(line)
        tokens = line.decode("ascii", "replace").split()
        if not tokens:
            continue
        keyword = tokens[0]
        if keyword == "comment" or keyword == "obj_info":
            comments.append(" ".join(tokens[1:]))
        elif keyword == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise FormatError(f"unsupported PLY format line at byte {offset}: {line!r}")
            fmt = tokens[1]
        elif keyword == "element":
            current = (tokens[1], int(tokens[2]), [])
            elements.append(current)
        elif keyword == "property":
            if current is None:
                raise FormatError(f"property before any element at byte {offset}")
            if tokens[1] == "list":
                count_t = _SCALAR_TYPES.get(tokens[2])
                item_t = _SCALAR_TYPES.get(tokens[3])
                if count_t is None or item_t is None:
                    raise FormatError(f"unknown list types in {line!r}")
                current[2].append((tokens[4], count_t, item_t))
            else:
                np_type = _SCALAR_TYPES.get(tokens[1])
                if np_type is None:
                    raise FormatError(f"unknown property type {tokens[1]!r}")
                current[2].append((tokens[2], np_type))
        elif keyword == "end_header":
            break
        else:
            raise FormatError(f"unexpected header keyword {keyword!r} at byte {offset}")
    if fmt is None:
        raise FormatError("header has no format line")
    return fmt, elements, comments, offset


def _vertex_cloud(table):
    for axis in ("x", "y", "z"):
        if axis not in table:
            raise FormatError(f"vertex element lacks property {axis!r}")
    pts = np.column_stack([table["x"], table["y"], table["z"]]).astype(np.float64)
    normals = None
    if all(n in table for n in ("nx", "ny", "nz")):
        normals = np.column_stack([table["nx"], table["ny"], table["nz"]]).astype(np.float64)
    return PointCloud(pts, normals)


def _read_binary(data, offset, elements):
    cloud = None
    for name, count, props in elements:
        if all(len(p) == 2 for p in props):
            dt = np.dtype([(pname, "<" + np_type) for (pname, np_type) in props])
            nbytes = dt.itemsize * count
            if len(data) - offset < nbytes:
                raise FormatError(
                    f"truncated payload for element {name!r} at byte {offset}: "
                    f"need {nbytes} bytes, have {len(data) - offset}")
            rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            offset += nbytes
            if name == "vertex":
                cloud = _vertex_cloud({p: rec[p] for (p, _) in props})
        else:
            if cloud is not None:
                break  # vertex already read; trailing list elements are ignored
            # walk variable-size rows to keep the offset honest
            for _ in range(count):
                for prop in props:
                    if len(prop) == 2:
                        size = np.dtype(prop[1]).itemsize
                        if len(data) - offset < size:
                            raise FormatError(f"truncated payload at byte {offset}")
                        offset += size
                    else:
                        _, count_t, item_t = prop
                        csize = np.dtype(count_t).itemsize
                        if len(data) - offset < csize:
                            raise FormatError(f"truncated payload at byte {offset}")
                        k = int(np.frombuffer(data, dtype="<" + count_t,
                                              count=1, offset=offset)[0])
                        offset += csize
                        size = np.dtype(item_t).itemsize * k
                        if len(data) - offset < size:
                            raise FormatError(f"truncated payload at byte {offset}")
                        offset += size
    if cloud is None:
        raise FormatError("file has no vertex element")
    return cloud


def _read_ascii(data, offset, elements):
    text = data[offset:].decode("ascii", "replace")
    rows = [line.split() for line in text.splitlines() if line.strip()]
    cursor = 0
    cloud = None
    for name, count, props in elements:
        if len(rows) - cursor < count:
            raise FormatError(
                f"truncated payload for element {name!r}: need {count} rows, "
                f"have {len(rows) - cursor}")
        if name == "vertex":
            table = {p[0]: np.empty(count, dtype=np.float64) for p in props if len(p) == 2}
            for r in range(count):
                tokens = rows[cursor + r]
                col = 0
                for prop in props:
                    if len(prop) == 2:
                        if col >= len(tokens):
                            raise FormatError(f"short vertex row {r}: {tokens}")
                        table[prop[0]][r] = float(tokens[col])
                        col += 1
                    else:
                        k = int(tokens[col])
                        col += 1 + k
            cloud = _vertex_cloud(table)
        cursor += count
    if cloud is None:
        raise FormatError("file has no vertex element")
    return cloud


def load_ply(path) -> PointCloud:
    """Read a PLY file into a PointCloud (normals included when present)."""
    with open(path, "rb") as fh:
        data = fh.read()
    fmt, elements, _, offset = _parse_header(io.BytesIO(data))
    if fmt == "ascii":
        return _read_ascii(data, offset, elements)
    return _read_binary(data, offset, elements)
