"""File formats: OBJ meshes, binary PLY point sets, FMGD grids, layout secrets.

FMGD layout (little-endian): magic ``b"FMGD"``, ``u32`` version (1),
``u32`` nx, ny, nz, six ``f64`` for the bbox min then max corner, then
``nx * ny * nz`` ``f32`` samples with the x index varying fastest.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .field import GridField, ScalarField, Sphere, Torus, blob
from .partition import PartitionLayout, bits_to_hex
from .surface import TriangleMesh

FMGD_MAGIC = b"FMGD"
FMGD_VERSION = 1
_FMGD_HEADER = struct.Struct("<4sI3I6d")


# ------------------------------------------------------------------ OBJ


def write_obj(path, mesh: TriangleMesh):
    lines = [f"# {mesh.n_vertices} vertices, {mesh.n_faces} faces"]
    lines += ["v %.9g %.9g %.9g" % tuple(v) for v in mesh.vertices.tolist()]
    if mesh.normals is not None:
        lines += ["vn %.9g %.9g %.9g" % tuple(n) for n in mesh.normals.tolist()]
        lines += ["f {0}//{0} {1}//{1} {2}//{2}".format(*f) for f in (mesh.faces + 1).tolist()]
    else:
        lines += ["f %d %d %d" % tuple(f) for f in (mesh.faces + 1).tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def _obj_index(token, count, lineno):
    try:
        k = int(token)
    except ValueError:
        raise FormatError(f"line {lineno}: bad index {token!r}") from None
    if k < 0:
        k = count + k + 1
    if not 1 <= k <= count:
        raise FormatError(f"line {lineno}: index {token} out of range (have {count})")
    return k - 1


def read_obj(path) -> TriangleMesh:
    """Read ``v``, ``vn`` and ``f`` records; polygons are fan-triangulated.

    Normals are kept only when every face corner references a normal with
    the same index as its vertex (the layout :func:`write_obj` produces).
    """
    verts, norms, faces = [], [], []
    paired = True
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError
                elif tag == "vn":
                    norms.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError
            except ValueError:
                raise FormatError(f"line {lineno}: malformed {tag} record") from None
            if tag != "f":
                continue
            if len(parts) < 4:
                raise FormatError(f"line {lineno}: face needs at least 3 corners")
            idx = []
            for corner in parts[1:]:
                fields = corner.split("/")
                vi = _obj_index(fields[0], len(verts), lineno)
                if len(fields) == 3 and fields[2]:
                    ni = _obj_index(fields[2], len(norms), lineno)
                    paired &= ni == vi
                else:
                    paired = False
                idx.append(vi)
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
    V = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    normals = None
    if norms and paired and len(norms) == len(verts):
        n = np.asarray(norms, dtype=np.float64)
        normals = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    return TriangleMesh(V, F, normals)


# ------------------------------------------------------------------ PLY


def write_ply(path, points):
    P = np.ascontiguousarray(points, dtype="<f8").reshape(-1, 3)
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(P)}\n"
              "property double x\nproperty double y\nproperty double z\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(P.tobytes())


_PLY_TYPES = {"double": "<f8", "float64": "<f8", "float": "<f4", "float32": "<f4",
              "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
              "short": "<i2", "ushort": "<u2", "char": "i1", "uchar": "u1",
              "uint8": "u1", "int8": "i1", "int16": "<i2", "uint16": "<u2"}


def read_ply(path) -> np.ndarray:
    """Vertex positions of a binary little-endian PLY file."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii", "replace").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: only binary_little_endian PLY is supported")
    count, props, in_vertex = None, [], False
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count, in_vertex = int(parts[2]), True
        elif parts and parts[0] == "element":
            in_vertex = False
        elif in_vertex and parts[:1] == ["property"]:
            if parts[1] == "list" or parts[1] not in _PLY_TYPES:
                raise FormatError(f"{path}: unsupported vertex property {line!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    names = [p[0] for p in props]
    if count is None or not {"x", "y", "z"} <= set(names):
        raise FormatError(f"{path}: missing vertex x/y/z properties")
    dtype = np.dtype(props)
    body = data[end + len(b"end_header\n"):]
    need = count * dtype.itemsize
    if len(body) < need:
        raise FormatError(f"{path}: truncated vertex data, expected {need} bytes, got {len(body)}")
    rec = np.frombuffer(body[:need], dtype=dtype, count=count)
    return np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)


# ------------------------------------------------------------------ FMGD


def write_grid(path, grid: GridField):
    nx, ny, nz = grid.dims
    lo, hi = grid.bbox
    header = _FMGD_HEADER.pack(FMGD_MAGIC, FMGD_VERSION, nx, ny, nz, *lo, *hi)
    body = np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def read_grid(path) -> GridField:
    data = Path(path).read_bytes()
    if len(data) < _FMGD_HEADER.size:
        raise FormatError(
            f"{path}: truncated header, expected {_FMGD_HEADER.size} bytes, got {len(data)}")
    magic, version, nx, ny, nz, *box = _FMGD_HEADER.unpack_from(data)
    if magic != FMGD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FMGD_MAGIC!r}")
    if version != FMGD_VERSION:
        raise FormatError(f"{path}: unsupported FMGD version {version}")
    expected = _FMGD_HEADER.size + 4 * nx * ny * nz
    if len(data) != expected:
        raise FormatError(f"{path}: length mismatch, expected {expected} bytes, got {len(data)}")
    vals = np.frombuffer(data, dtype="<f4", offset=_FMGD_HEADER.size, count=nx * ny * nz)
    vals = vals.reshape((nx, ny, nz), order="F")
    return GridField(vals, (tuple(box[:3]), tuple(box[3:])))


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ------------------------------------------------------------------ primitives


def parse_primitive(text: str) -> ScalarField:
    """``sphere[:r[:cx,cy,cz]]``, ``torus[:R,r[:cx,cy,cz]]`` or ``blob``."""
    parts = text.strip().split(":")
    name = parts[0].lower()

    def nums(s, n):
        try:
            v = [float(x) for x in s.split(",")]
        except ValueError:
            raise InvalidArgumentError(f"bad primitive numbers {s!r}") from None
        if len(v) != n:
            raise InvalidArgumentError(f"primitive field {s!r} needs {n} numbers")
        return v

    center = tuple(nums(parts[2], 3)) if len(parts) > 2 else (0.0, 0.0, 0.0)
    if name == "sphere":
        r = nums(parts[1], 1)[0] if len(parts) > 1 else 0.5
        return Sphere(r, center)
    if name == "torus":
        R, r = nums(parts[1], 2) if len(parts) > 1 else (0.5, 0.2)
        return Torus(R, r, center)
    if name == "blob" and len(parts) == 1:
        return blob()
    raise InvalidArgumentError(f"unknown primitive {text!r}; use sphere, torus or blob")


# ------------------------------------------------------------------ secrets


@dataclass
class LayoutSecret:
    """Everything the verifier keeps private: the message layout plus the field identity."""

    n_s: int
    delta: float
    bits: list
    seed: int | None = None
    field_source: str = ""
    field_fingerprint: str = ""
    extra: dict = dc_field(default_factory=dict)

    @classmethod
    def from_layout(cls, layout: PartitionLayout, **kwargs):
        return cls(layout.n_s, layout.delta, list(layout.message), **kwargs)

    @property
    def layout(self):
        return PartitionLayout(tuple(self.bits), self.n_s, self.delta)

    def to_dict(self):
        d = asdict(self)
        d["hex"] = bits_to_hex(self.bits)
        return d

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad layout JSON ({exc})") from exc
        d.pop("hex", None)
        try:
            return cls(**d)
        except TypeError as exc:
            raise FormatError(f"{path}: unexpected layout fields ({exc})") from exc


def write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path in (None, "-"):
        print(text, end="")
    else:
        Path(path).write_text(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
