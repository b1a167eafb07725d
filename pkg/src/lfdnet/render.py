"""Light-field silhouette rendering.

A normalized mesh is projected orthographically from the 20 vertices of a
regular dodecahedron and rasterized into binary silhouette images.  Because
the vertex set is antipodally symmetric, opposite cameras share an up vector
and produce horizontally mirrored images.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ImageFormatError
from .kernels import fill_triangles
from .mesh import NormalizedMesh

VIEW_COUNT = 20


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 256
    fill_fraction: float = 0.9

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError("resolution must be at least 8")
        if not 0.0 < self.fill_fraction <= 1.0:
            raise ValueError("fill_fraction must be in (0, 1]")


@dataclass(frozen=True)
class CameraRig:
    """Orthographic camera set: unit view directions with per-camera frames."""

    directions: np.ndarray  # [N,3] unit vectors
    ups: np.ndarray  # [N,3] unit vectors, orthogonal to directions
    rights: np.ndarray = field(init=False)  # up x direction

    def __post_init__(self):
        object.__setattr__(self, "rights", np.cross(self.ups, self.directions))

    def __len__(self) -> int:
        return len(self.directions)


def _up_for(direction: np.ndarray) -> np.ndarray:
    """Project global +z onto the plane orthogonal to ``direction``.

    Falls back to +x for near-axial directions (|d.z| > 0.99).
    """
    ref = np.array([0.0, 0.0, 1.0])
    if abs(direction[2]) > 0.99:
        ref = np.array([1.0, 0.0, 0.0])
    up = ref - (ref @ direction) * direction
    return up / np.sqrt(up @ up)


def dodecahedron_rig() -> CameraRig:
    """The 20-camera rig at the vertices of a regular dodecahedron.

    Vertex set: (+-1, +-1, +-1), (0, +-1/phi, +-phi), (+-1/phi, +-phi, 0),
    (+-phi, 0, +-1/phi), ordered lexicographically by unnormalized
    coordinates, then normalized onto the unit sphere.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    inv = 1.0 / phi
    verts = []
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                verts.append((sx, sy, sz))
    for sy in (-1.0, 1.0):
        for sz in (-1.0, 1.0):
            verts.append((0.0, sy * inv, sz * phi))
            verts.append((sy * inv, sz * phi, 0.0))
            verts.append((sy * phi, 0.0, sz * inv))
    arr = np.array(verts, dtype=np.float64)
    order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))
    arr = arr[order]
    directions = arr / np.sqrt((arr**2).sum(axis=1, keepdims=True))
    ups = np.array([_up_for(d) for d in directions])
    return CameraRig(directions=directions, ups=ups)


@dataclass
class ViewImage:
    """Binary silhouette: uint8 pixels, 0 background / 255 foreground,
    row-major with the top row first."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width):
            raise ImageFormatError("pixel buffer does not match declared size")
        if not np.all((self.pixels == 0) | (self.pixels == 255)):
            raise ImageFormatError("silhouette pixels must be 0 or 255")


def rasterize_triangles(tris: np.ndarray, resolution: int) -> ViewImage:
    """Fill 2D triangles [T,3,2] (pixel coordinates) into a silhouette image.

    A pixel is covered when its center (x+0.5, y+0.5) is inside or on the
    boundary of any triangle; both windings are accepted and zero-area
    triangles contribute nothing.
    """
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    mask = fill_triangles(tris, resolution, resolution)
    return ViewImage(width=resolution, height=resolution, pixels=mask)


def render_views(mesh: NormalizedMesh, rig: CameraRig, config: RenderConfig):
    """Render one silhouette per rig camera; returns a list of ViewImage.

    Orthographic projection: screen x along the camera's right vector,
    screen y along its up vector (flipped into row order), scaled so the
    unit sphere's diameter covers ``fill_fraction`` of the image.
    """
    res = config.resolution
    scale = config.fill_fraction * res / 2.0
    center = res / 2.0
    verts = mesh.vertices
    images = []
    for i in range(len(rig)):
        px = verts @ rig.rights[i]
        py = verts @ rig.ups[i]
        xy = np.empty((len(verts), 2), dtype=np.float64)
        xy[:, 0] = center + scale * px
        xy[:, 1] = center - scale * py
        images.append(rasterize_triangles(xy[mesh.triangles], res))
    return images


def pgm_bytes(image: ViewImage) -> bytes:
    """Serialize as binary PGM (P5, maxval 255)."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


def write_pgm(image: ViewImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(image))


def parse_pgm(data: bytes) -> ViewImage:
    """Parse binary PGM bytes produced by :func:`pgm_bytes`.

    Tolerates arbitrary whitespace and # comments in the header; requires
    maxval 255 and a complete pixel payload.
    """
    if data[:2] != b"P5":
        raise ImageFormatError("not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise ImageFormatError("truncated PGM header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            token = data[start:pos]
            if not token.isdigit():
                raise ImageFormatError(f"bad PGM header token: {token!r}")
            fields.append(int(token))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace after PGM maxval")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval}")
    need = width * height
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise ImageFormatError(
            f"truncated PGM payload: expected {need} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return ViewImage(width=width, height=height, pixels=pixels.copy())


def read_pgm(path) -> ViewImage:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())
