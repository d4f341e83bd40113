"""Triangle mesh and label file readers and writers (OFF, OBJ, ASCII PLY)."""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from .errors import LengthMismatch, ParseError, UnknownColor, UnsupportedFormat
from .mesh import Mesh, convert_labels

FORMATS = (".off", ".obj", ".ply")
LABEL_LEVELS = ("vertex", "edge", "face")


class SkippedRecordsWarning(UserWarning):
    """A loader ignored records it does not interpret (texture coordinates, groups, ...)."""


def _lines(path: Path):
    with open(path, "r", encoding="utf-8", errors="strict") as fh:
        for no, raw in enumerate(fh, start=1):
            yield no, raw.split("#", 1)[0].strip()


def _triangle(idx: list[int], line: int) -> list[int]:
    if len(idx) != 3:
        raise ParseError(f"face with {len(idx)} vertices; only triangles are supported", line)
    return idx


def _floats(tokens, line: int, count: int) -> list[float]:
    if len(tokens) < count:
        raise ParseError(f"expected {count} numbers, got {len(tokens)}", line)
    try:
        return [float(t) for t in tokens[:count]]
    except ValueError as exc:
        raise ParseError(str(exc), line) from None


def _ints(tokens, line: int) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(str(exc), line) from None


def read_off(path) -> Mesh:
    it = ((no, ln) for no, ln in _lines(Path(path)) if ln)
    try:
        no, head = next(it)
    except StopIteration:
        raise ParseError("empty file", 1) from None
    tokens = head.split()
    if tokens[0] not in ("OFF", "COFF"):
        raise ParseError("missing OFF header", no)
    tokens = tokens[1:]
    if not tokens:
        try:
            no, ln = next(it)
        except StopIteration:
            raise ParseError("missing element counts", no) from None
        tokens = ln.split()
    counts = _ints(tokens[:3], no)
    if len(counts) < 2:
        raise ParseError("expected vertex and face counts", no)
    nv, nf = counts[0], counts[1]
    verts, faces = [], []
    for _ in range(nv):
        try:
            no, ln = next(it)
        except StopIteration:
            raise ParseError(f"file ends after {len(verts)} of {nv} vertices", no) from None
        verts.append(_floats(ln.split(), no, 3))
    for _ in range(nf):
        try:
            no, ln = next(it)
        except StopIteration:
            raise ParseError(f"file ends after {len(faces)} of {nf} faces", no) from None
        vals = _ints(ln.split(), no)
        k = vals[0]
        if len(vals) < k + 1:
            raise ParseError("face record shorter than its vertex count", no)
        faces.append(_triangle(vals[1 : k + 1], no))
    return _build(verts, faces, path, "off")


def read_obj(path) -> Mesh:
    verts, faces = [], []
    skipped = 0
    for no, ln in _lines(Path(path)):
        if not ln:
            continue
        tokens = ln.split()
        tag = tokens[0]
        if tag == "v":
            verts.append(_floats(tokens[1:], no, 3))
        elif tag == "f":
            idx = []
            for tok in tokens[1:]:
                head = tok.split("/", 1)[0]
                (i,) = _ints([head], no)
                # OBJ is 1-based; negative indices count back from the latest vertex
                idx.append(i - 1 if i > 0 else len(verts) + i)
                if i == 0:
                    raise ParseError("OBJ vertex index 0 is invalid", no)
            faces.append(_triangle(idx, no))
        else:
            skipped += 1
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} unsupported OBJ records", SkippedRecordsWarning, stacklevel=3)
    return _build(verts, faces, path, "obj")


def read_ply(path) -> tuple[Mesh, dict]:
    """ASCII PLY; returns the mesh plus extra per-face properties (e.g. colours)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
    if magic != b"ply":
        raise ParseError("missing ply magic", 1)
    it = _lines(path)
    next(it)
    elements: list[list] = []
    fmt = None
    no = 1
    for no, ln in it:
        tokens = ln.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            fmt = tokens[1] if len(tokens) > 1 else None
            if fmt != "ascii":
                raise UnsupportedFormat(f"PLY format {fmt!r}; only ascii is supported")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError("malformed element line", no)
            elements.append([tokens[1], _ints([tokens[2]], no)[0], []])
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before any element", no)
            elements[-1][2].append(tokens[1:])
        elif tokens[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header line {tokens[0]!r}", no)
    else:
        raise ParseError("missing end_header", no)
    if fmt is None:
        raise ParseError("missing format line", no)

    verts, faces, extras = [], [], {}
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            try:
                no, ln = next(it)
                while not ln:
                    no, ln = next(it)
            except StopIteration:
                raise ParseError(f"file ends inside element {name!r}", no) from None
            rows.append((no, ln.split()))
        if name == "vertex":
            names = [p[-1] for p in props]
            try:
                cols = [names.index(a) for a in ("x", "y", "z")]
            except ValueError:
                raise ParseError("vertex element lacks x/y/z", no) from None
            for rno, tok in rows:
                vals = _floats(tok, rno, len(names))
                verts.append([vals[c] for c in cols])
        elif name == "face":
            scalar_names = [p[-1] for p in props if p[0] != "list"]
            face_extra = {n: [] for n in scalar_names}
            for rno, tok in rows:
                pos = 0
                for p in props:
                    if p[0] == "list":
                        k = _ints([tok[pos]], rno)[0]
                        idx = _ints(tok[pos + 1 : pos + 1 + k], rno)
                        if len(idx) != k:
                            raise ParseError("face list shorter than its count", rno)
                        faces.append(_triangle(idx, rno))
                        pos += 1 + k
                    else:
                        if pos >= len(tok):
                            raise ParseError("face record is missing properties", rno)
                        face_extra[p[-1]].append(float(tok[pos]))
                        pos += 1
            extras.update({f"face_{k}": np.asarray(v) for k, v in face_extra.items()})
    return _build(verts, faces, path, "ply"), extras


def _build(verts, faces, path, kind) -> Mesh:
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise ParseError("face references a missing vertex", 0)
    return Mesh(v, f, provenance=f"{kind}:{Path(path).name}")


def load_mesh(path) -> Mesh:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".off":
        return read_off(path)
    if ext == ".obj":
        return read_obj(path)
    if ext == ".ply":
        return read_ply(path)[0]
    raise UnsupportedFormat(f"unsupported mesh format {ext!r}; expected one of {FORMATS}")


def _fmt(x: float) -> str:
    # repr gives the shortest string that round-trips exactly
    return repr(float(x))


def save_mesh(path, mesh: Mesh) -> Path:
    """Write OFF, OBJ or ASCII PLY; coordinates round-trip bit-exactly."""
    path = Path(path)
    ext = path.suffix.lower()
    vlines = [" ".join(_fmt(c) for c in row) for row in mesh.vertices]
    if ext == ".off":
        body = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0", *vlines]
        body += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    elif ext == ".obj":
        body = [f"v {ln}" for ln in vlines] + [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    elif ext == ".ply":
        body = [
            "ply",
            "format ascii 1.0",
            f"element vertex {mesh.n_vertices}",
            "property double x",
            "property double y",
            "property double z",
            f"element face {mesh.n_faces}",
            "property list uchar int vertex_indices",
            "end_header",
            *vlines,
        ]
        body += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    else:
        raise UnsupportedFormat(f"unsupported mesh format {ext!r}; expected one of {FORMATS}")
    path.write_text("\n".join(body) + "\n")
    return path


# -- labels ------------------------------------------------------------------------


def load_palette(path) -> dict[tuple[int, int, int], int]:
    """CSV rows ``r,g,b,class``; a non-numeric first row is treated as a header."""
    palette = {}
    for no, ln in _lines(Path(path)):
        if not ln:
            continue
        tokens = [t.strip() for t in ln.replace(",", " ").split()]
        if len(tokens) != 4:
            raise ParseError("palette rows need r,g,b,class", no)
        try:
            r, g, b, c = (int(float(t)) for t in tokens)
        except ValueError:
            if not palette and no == 1:
                continue
            raise ParseError("non-numeric palette row", no) from None
        palette[(r, g, b)] = c
    return palette


def decode_colors(colors: np.ndarray, palette: dict) -> np.ndarray:
    rgb = np.asarray(colors).reshape(-1, 3).round().astype(np.int64)
    out = np.empty(len(rgb), dtype=np.int64)
    missing = []
    for i, key in enumerate(map(tuple, rgb)):
        cls = palette.get(key)
        if cls is None:
            missing.append(key)
            out[i] = -1
        else:
            out[i] = cls
    if missing:
        raise UnknownColor(sorted(set(missing)))
    return out


def _read_label_rows(path: Path, width: int) -> np.ndarray:
    rows = []
    for no, ln in _lines(path):
        if not ln:
            continue
        tokens = ln.replace(",", " ").split()
        if len(tokens) != width:
            raise ParseError(f"expected {width} value(s) per line, got {len(tokens)}", no)
        try:
            rows.append([int(float(t)) if width == 3 else int(t) for t in tokens])
        except ValueError:
            raise ParseError("non-integer label", no) from None
    return np.asarray(rows, dtype=np.int64).reshape(-1, width)


def load_points(path) -> np.ndarray:
    rows = []
    for no, ln in _lines(Path(path)):
        if ln:
            rows.append(_floats(ln.replace(",", " ").split(), no, 3))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def load_labels(
    path,
    level: str,
    n_elements: int,
    palette: dict | None = None,
    points_path=None,
    mesh: Mesh | None = None,
) -> np.ndarray:
    """One integer per line, or one ``r g b`` colour per line decoded through ``palette``.

    When the row count differs from ``n_elements`` and ``points_path`` names a
    file of annotated points (one per label row), vertex labels are remapped
    from the nearest annotated point instead.
    """
    if level not in LABEL_LEVELS:
        raise ValueError(f"label level must be one of {LABEL_LEVELS}")
    path = Path(path)
    if palette is not None:
        labels = decode_colors(_read_label_rows(path, 3), palette)
    else:
        labels = _read_label_rows(path, 1).ravel()
    if len(labels) == n_elements:
        return labels
    if points_path is not None and level == "vertex":
        if mesh is None:
            raise ValueError("nearest-point remapping needs the mesh")
        points = load_points(points_path)
        if len(points) != len(labels):
            raise LengthMismatch(f"{len(points)} annotated points but {len(labels)} labels")
        return convert_labels(mesh, "nearest_point_remap", (points, labels))
    raise LengthMismatch(f"{path.name}: {len(labels)} labels for {n_elements} {level} elements")


def save_labels(path, labels) -> Path:
    path = Path(path)
    path.write_text("".join(f"{int(x)}\n" for x in np.asarray(labels).ravel()))
    return path
