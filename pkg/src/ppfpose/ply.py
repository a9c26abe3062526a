"""Minimal PLY mesh/point-cloud reader and writer.

Supports ascii and binary_little_endian files with vertex positions,
optional normals, optional faces, and arbitrary extra scalar properties
(skipped). Errors carry the line (ascii header/body) or byte offset that
triggered them.
"""

from __future__ import annotations

import numpy as np


class PlyParseError(ValueError):
    def __init__(self, message, line=None, offset=None):
        loc = ""
        if line is not None:
            loc = f" (line {line})"
        elif offset is not None:
            loc = f" (byte offset {offset})"
        super().__init__(f"{message}{loc}")
        self.line = line
        self.offset = offset


_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.properties = []   # (name, type) or (name, count_type, item_type, "list")


def _parse_header(data: bytes):
    end = data.find(b"end_header")
    if end < 0:
        raise PlyParseError("missing end_header")
    end = data.find(b"\n", end)
    if end < 0:
        raise PlyParseError("end_header line is not terminated")
    header = data[:end].decode("ascii", errors="replace")
    lines = header.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("not a PLY file (missing 'ply' magic)", line=1)

    fmt = None
    elements = []
    for ln, raw in enumerate(lines[1:], start=2):
        tok = raw.strip().split()
        if not tok or tok[0] == "comment" or tok[0] == "obj_info":
            continue
        if tok[0] == "format":
            if len(tok) != 3:
                raise PlyParseError("malformed format line", line=ln)
            if tok[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported format {tok[1]!r}", line=ln)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise PlyParseError("malformed element line", line=ln)
            try:
                elements.append(_Element(tok[1], int(tok[2])))
            except ValueError:
                raise PlyParseError("element count is not an integer", line=ln)
        elif tok[0] == "property":
            if not elements:
                raise PlyParseError("property before any element", line=ln)
            if tok[1] == "list":
                if len(tok) != 5:
                    raise PlyParseError("malformed list property", line=ln)
                if tok[2] not in _TYPES or tok[3] not in _TYPES:
                    raise PlyParseError(f"unknown list property types {tok[2]}/{tok[3]}", line=ln)
                elements[-1].properties.append((tok[4], tok[2], tok[3], "list"))
            else:
                if len(tok) != 3:
                    raise PlyParseError("malformed property line", line=ln)
                if tok[1] not in _TYPES:
                    raise PlyParseError(f"unknown property type {tok[1]!r}", line=ln)
                elements[-1].properties.append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            break
        else:
            raise PlyParseError(f"unknown header keyword {tok[0]!r}", line=ln)
    if fmt is None:
        raise PlyParseError("header has no format line")
    return fmt, elements, end + 1, len(lines)


def _read_ascii_element(tokens, pos, elem, line0):
    scalar_names = [p[0] for p in elem.properties if len(p) == 2]
    rows = {n: [] for n in scalar_names}
    lists = {p[0]: [] for p in elem.properties if len(p) == 4}
    for i in range(elem.count):
        for p in elem.properties:
            if len(p) == 2:
                name, typ = p
                if pos >= len(tokens):
                    raise PlyParseError(f"truncated body in element {elem.name!r}",
                                        line=line0)
                rows[name].append(tokens[pos])
                pos += 1
            else:
                name = p[0]
                if pos >= len(tokens):
                    raise PlyParseError(f"truncated body in element {elem.name!r}",
                                        line=line0)
                n = int(tokens[pos])
                pos += 1
                if pos + n > len(tokens):
                    raise PlyParseError(f"truncated list in element {elem.name!r}",
                                        line=line0)
                lists[name].append([int(t) for t in tokens[pos:pos + n]])
                pos += n
    out = {}
    for name, vals in rows.items():
        out[name] = np.asarray(vals, dtype=np.float64)
    out.update(lists)
    return out, pos


def _read_binary_element(data, off, elem):
    has_list = any(len(p) == 4 for p in elem.properties)
    if not has_list:
        dtype = np.dtype([(p[0], "<" + _TYPES[p[1]]) for p in elem.properties])
        need = dtype.itemsize * elem.count
        if off + need > len(data):
            raise PlyParseError(f"truncated body in element {elem.name!r}", offset=off)
        rec = np.frombuffer(data, dtype=dtype, count=elem.count, offset=off)
        return {p[0]: rec[p[0]].astype(np.float64) for p in elem.properties}, off + need

    out = {p[0]: [] for p in elem.properties}
    for _ in range(elem.count):
        for p in elem.properties:
            if len(p) == 2:
                dt = np.dtype("<" + _TYPES[p[1]])
                if off + dt.itemsize > len(data):
                    raise PlyParseError(f"truncated body in element {elem.name!r}", offset=off)
                out[p[0]].append(float(np.frombuffer(data, dt, 1, off)[0]))
                off += dt.itemsize
            else:
                name, ct, it, _ = p
                cdt = np.dtype("<" + _TYPES[ct])
                if off + cdt.itemsize > len(data):
                    raise PlyParseError(f"truncated list count in {elem.name!r}", offset=off)
                n = int(np.frombuffer(data, cdt, 1, off)[0])
                off += cdt.itemsize
                idt = np.dtype("<" + _TYPES[it])
                if off + n * idt.itemsize > len(data):
                    raise PlyParseError(f"truncated list in {elem.name!r}", offset=off)
                out[name].append(np.frombuffer(data, idt, n, off).tolist())
                off += n * idt.itemsize
    for p in elem.properties:
        if len(p) == 2:
            out[p[0]] = np.asarray(out[p[0]], dtype=np.float64)
    return out, off


def _triangulate(polygons):
    tris = []
    for poly in polygons:
        if len(poly) < 3:
            raise PlyParseError(f"face with {len(poly)} vertices")
        for k in range(1, len(poly) - 1):
            tris.append((poly[0], poly[k], poly[k + 1]))
    return np.asarray(tris, dtype=np.int64) if tris else None


def load_ply(path):
    """Read a PLY file.

    Returns (vertices (n,3) f64, normals (n,3) f64 or None, faces (m,3) i64
    or None). Unknown vertex properties are skipped; polygon faces are
    fan-triangulated.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    fmt, elements, body_off, header_lines = _parse_header(data)

    vertex_data = None
    face_lists = None
    if fmt == "ascii":
        body = data[body_off:].decode("ascii", errors="replace")
        tokens = body.split()
        pos = 0
        for elem in elements:
            parsed, pos = _read_ascii_element(tokens, pos, elem, header_lines + 1)
            if elem.name == "vertex":
                vertex_data = parsed
            elif elem.name == "face":
                face_lists = parsed
    else:
        off = body_off
        for elem in elements:
            parsed, off = _read_binary_element(data, off, elem)
            if elem.name == "vertex":
                vertex_data = parsed
            elif elem.name == "face":
                face_lists = parsed

    if vertex_data is None:
        raise PlyParseError("file has no vertex element")
    for axis in ("x", "y", "z"):
        if axis not in vertex_data:
            raise PlyParseError(f"vertex element lacks property {axis!r}")
    vertices = np.column_stack([vertex_data["x"], vertex_data["y"], vertex_data["z"]])

    normals = None
    if all(k in vertex_data for k in ("nx", "ny", "nz")):
        normals = np.column_stack([vertex_data["nx"], vertex_data["ny"], vertex_data["nz"]])

    faces = None
    if face_lists is not None:
        key = next((k for k in ("vertex_indices", "vertex_index") if k in face_lists), None)
        if key is None:
            raise PlyParseError("face element lacks vertex_indices")
        faces = _triangulate(face_lists[key])
        if faces is not None and len(faces) and faces.max() >= len(vertices):
            raise PlyParseError("face index out of range")
    return vertices, normals, faces


def save_ply(path, vertices, normals=None, faces=None, binary=False):
    """Write vertices (+normals, +triangle faces) as ascii or binary LE PLY."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    n = len(vertices)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        header += ["property float nx", "property float ny", "property float nz"]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        header += [f"element face {len(faces)}",
                   "property list uchar int vertex_indices"]
    header.append("end_header")

    cols = np.hstack([vertices, normals]) if normals is not None else vertices
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(cols.astype("<f4").tobytes())
            if faces is not None:
                rec = np.empty(len(faces), dtype=[("n", "u1"), ("v", "<i4", 3)])
                rec["n"] = 3
                rec["v"] = faces
                fh.write(rec.tobytes())
        else:
            for row in cols:
                fh.write((" ".join(f"{v:.9g}" for v in row) + "\n").encode("ascii"))
            if faces is not None:
                for f in faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))
