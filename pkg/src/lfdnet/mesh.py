"""Triangle mesh type, STL/OBJ parsing, and canonical normalization."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateMeshError, MeshFormatError

_STL_RECORD = np.dtype(
    [("normal", "<f4", 3), ("verts", "<f4", (3, 3)), ("attr", "<u2")]
)


@dataclass
class Mesh:
    """Indexed triangle soup: float64 vertices [V,3], int32 triangles [T,3]."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshFormatError("vertices must have shape [V, 3]")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshFormatError("triangles must have shape [T, 3]")
        if len(self.triangles) < 1:
            raise MeshFormatError("mesh has no triangles")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshFormatError("mesh has non-finite vertex coordinates")
        if len(self.vertices) == 0 or self.triangles.min() < 0 or (
            self.triangles.max() >= len(self.vertices)
        ):
            raise MeshFormatError("triangle index out of range")

    @property
    def triangle_coords(self) -> np.ndarray:
        """Per-triangle vertex coordinates, shape [T, 3, 3]."""
        return self.vertices[self.triangles]


class NormalizedMesh(Mesh):
    """A mesh centered on the origin with maximum vertex radius 1."""

    def __post_init__(self):
        super().__post_init__()
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        if np.abs(lo + hi).max() > 2e-9:
            raise MeshFormatError("normalized mesh is not centered")
        radius = np.sqrt((self.vertices**2).sum(axis=1).max())
        if abs(radius - 1.0) > 1e-9:
            raise MeshFormatError("normalized mesh max radius is not 1")


def normalize(mesh: Mesh) -> NormalizedMesh:
    """Translate the bounding-box center to the origin and scale the farthest
    vertex onto the unit sphere.

    Already-canonical meshes are returned unchanged (bitwise), which makes the
    operation idempotent.
    """
    v = mesh.vertices
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    center = (lo + hi) * 0.5
    shifted = v - center
    radius = np.sqrt((shifted**2).sum(axis=1).max())
    if radius == 0.0:
        raise DegenerateMeshError("mesh has zero spatial extent")
    scale = max(1.0, float(np.abs(v).max()))
    if np.abs(center).max() <= 1e-12 * scale and abs(radius - 1.0) <= 1e-12:
        return NormalizedMesh(v.copy(), mesh.triangles.copy())
    return NormalizedMesh(shifted / radius, mesh.triangles.copy())


def _dedup_vertices(coords: np.ndarray):
    # coords [N,3] -> unique rows + int32 index map, deterministic (sorted rows)
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    return uniq.astype(np.float64), inverse.astype(np.int32)


def _parse_stl_ascii(text: str) -> Mesh:
    coords = []
    in_facet = False
    facet_verts = 0
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        word = line.split(None, 1)[0].lower()
        if word == "facet":
            if in_facet:
                raise MeshFormatError("nested facet in ASCII STL")
            in_facet = True
            facet_verts = 0
        elif word == "endfacet":
            if not in_facet or facet_verts != 3:
                raise MeshFormatError("ASCII STL facet without exactly 3 vertices")
            in_facet = False
        elif word == "vertex":
            if not in_facet:
                raise MeshFormatError("vertex outside facet in ASCII STL")
            parts = line.split()
            if len(parts) != 4:
                raise MeshFormatError("malformed vertex line in ASCII STL")
            try:
                coords.append([float(p) for p in parts[1:]])
            except ValueError as exc:
                raise MeshFormatError(f"bad vertex coordinate: {exc}") from exc
            facet_verts += 1
    if in_facet:
        raise MeshFormatError("unterminated facet in ASCII STL")
    if not coords:
        raise MeshFormatError("ASCII STL declares zero facets")
    arr = np.array(coords, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise MeshFormatError("non-finite coordinates in ASCII STL")
    verts, inverse = _dedup_vertices(arr)
    return Mesh(verts, inverse.reshape(-1, 3))


def _parse_stl_binary(data: bytes) -> Mesh:
    if len(data) < 84:
        raise MeshFormatError("truncated binary STL (missing header)")
    (count,) = struct.unpack_from("<I", data, 80)
    if count == 0:
        raise MeshFormatError("binary STL declares zero facets")
    need = 84 + 50 * count
    if len(data) < need:
        raise MeshFormatError(
            f"truncated binary STL: {count} facets declared, "
            f"{(len(data) - 84) // 50} present"
        )
    records = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    coords = records["verts"].reshape(-1, 3).astype(np.float64)
    if not np.all(np.isfinite(coords)):
        raise MeshFormatError("non-finite coordinates in binary STL")
    verts, inverse = _dedup_vertices(coords)
    return Mesh(verts, inverse.reshape(-1, 3))


def parse_stl(data: bytes) -> Mesh:
    """Parse STL bytes; ASCII or binary is detected from the content.

    Stored facet normals are ignored.  Vertices with identical coordinates
    are merged into a single index.
    """
    head = data.lstrip()[:5].lower()
    if head == b"solid" and (b"facet" in data or b"endsolid" in data):
        try:
            return _parse_stl_ascii(data.decode("ascii", errors="replace"))
        except MeshFormatError:
            # binary files may open with the word "solid" in the header; keep
            # the ASCII diagnostic unless the bytes parse cleanly as binary
            if len(data) >= 84:
                try:
                    return _parse_stl_binary(data)
                except MeshFormatError:
                    pass
            raise
    return _parse_stl_binary(data)


def parse_obj(text: str) -> Mesh:
    """Parse a Wavefront OBJ string: v and f records, fan triangulation.

    Indices are 1-based; negative values count back from the vertices read
    so far.  Texture/normal references and unknown statements are ignored.
    """
    verts = []
    tris = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        if key == "v":
            if len(parts) < 4:
                raise MeshFormatError(f"line {lineno}: v record needs 3 coordinates")
            try:
                verts.append([float(p) for p in parts[1:4]])
            except ValueError as exc:
                raise MeshFormatError(f"line {lineno}: bad coordinate: {exc}") from exc
        elif key == "f":
            refs = parts[1:]
            if len(refs) < 3:
                raise MeshFormatError(f"line {lineno}: face needs at least 3 vertices")
            idx = []
            for ref in refs:
                tok = ref.split("/")[0]
                try:
                    i = int(tok)
                except ValueError as exc:
                    raise MeshFormatError(f"line {lineno}: bad face index {ref!r}") from exc
                if i == 0:
                    raise MeshFormatError(f"line {lineno}: face index 0 is invalid")
                if i < 0:
                    i = len(verts) + i
                else:
                    i = i - 1
                if not 0 <= i < len(verts):
                    raise MeshFormatError(f"line {lineno}: face index out of range")
                idx.append(i)
            for a, b in zip(idx[1:], idx[2:]):
                tris.append((idx[0], a, b))
    if not tris:
        raise MeshFormatError("OBJ contains no faces")
    arr = np.array(verts, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise MeshFormatError("non-finite coordinates in OBJ")
    return Mesh(arr, np.array(tris, dtype=np.int32))


def load_mesh(path) -> Mesh:
    """Load a mesh file, selecting the parser from the file suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return parse_obj(path.read_text())
    if suffix == ".stl":
        return parse_stl(path.read_bytes())
    raise MeshFormatError(f"unsupported mesh format: {path.name}")


def write_stl(mesh: Mesh, header: bytes = b"lfdnet binary STL") -> bytes:
    """Serialize a mesh as binary STL with computed facet normals."""
    tris = mesh.triangle_coords.astype("<f4")
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    n = np.cross(
        (b - a).astype(np.float64), (c - a).astype(np.float64)
    )
    length = np.sqrt((n**2).sum(axis=1, keepdims=True))
    with np.errstate(invalid="ignore"):
        n = np.where(length > 0, n / np.where(length == 0, 1, length), 0.0)
    records = np.zeros(len(tris), dtype=_STL_RECORD)
    records["normal"] = n.astype("<f4")
    records["verts"] = tris
    out = bytearray(header[:80].ljust(80, b"\0"))
    out += struct.pack("<I", len(tris))
    out += records.tobytes()
    return bytes(out)
