"""Parametric generator for a synthetic CAD-style mesh corpus.

Nine shape families (boxes, plates, posts, tubes, pipe elbows, L blocks,
hex nuts, spoked wheels, gears) with declared parameter ranges.  A family
plus a parameter vector builds one mesh; a (corpus seed, family, model
index) triple deterministically samples the parameters, so regenerating a
corpus is byte-identical.

Every generated mesh is closed and consistently oriented: each directed
edge appears exactly once, and the enclosed volume is positive.  Vertices
are quantized to float32 so STL writes round-trip exactly.
"""

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mesh import Mesh, write_stl

# full circles are tessellated this finely unless a loop must match
# another loop's vertex count
CIRCLE_SEGMENTS = 24


class _MeshBuilder:
    def __init__(self):
        self._verts = []
        self._tris = []
        self._count = 0

    def ring(self, points) -> np.ndarray:
        """Append vertices, returning their indices."""
        pts = np.asarray(points, dtype=np.float64)
        idx = np.arange(self._count, self._count + len(pts))
        self._verts.append(pts)
        self._count += len(pts)
        return idx

    def tri(self, a, b, c, flip=False):
        if flip:
            b, c = c, b
        self._tris.append((int(a), int(b), int(c)))

    def wall(self, bottom, top, flip=False):
        """Quad strip between two equal-length closed loops."""
        n = len(bottom)
        for i in range(n):
            j = (i + 1) % n
            self.tri(bottom[i], bottom[j], top[j], flip)
            self.tri(bottom[i], top[j], top[i], flip)

    def polygon_cap(self, ring, flip=False):
        """Fan triangulation from the loop's first vertex."""
        for i in range(1, len(ring) - 1):
            self.tri(ring[0], ring[i], ring[i + 1], flip)

    def cap(self, ring, triangles, flip=False):
        for a, b, c in triangles:
            self.tri(ring[a], ring[b], ring[c], flip)

    def fan(self, center, ring, flip=False):
        n = len(ring)
        for i in range(n):
            j = (i + 1) % n
            self.tri(center, ring[i], ring[j], flip)

    def annulus(self, outer, inner, flip=False):
        """Cap strip between concentric equal-length loops."""
        n = len(outer)
        for i in range(n):
            j = (i + 1) % n
            self.tri(outer[i], outer[j], inner[j], flip)
            self.tri(outer[i], inner[j], inner[i], flip)

    def mesh(self) -> Mesh:
        verts = np.concatenate(self._verts, axis=0)
        verts = verts.astype(np.float32).astype(np.float64)
        return Mesh(verts, np.asarray(self._tris, dtype=np.int32))


def _with_z(loop2d, z: float) -> np.ndarray:
    loop2d = np.asarray(loop2d, dtype=np.float64)
    return np.column_stack([loop2d, np.full(len(loop2d), float(z))])


def _rect(w: float, d: float) -> np.ndarray:
    hw, hd = w / 2.0, d / 2.0
    return np.array([(-hw, -hd), (hw, -hd), (hw, hd), (-hw, hd)])


def _circle(r: float, n: int = CIRCLE_SEGMENTS) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


def _rotated(loop2d, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    loop2d = np.asarray(loop2d, dtype=np.float64)
    return loop2d @ np.array([[c, s], [-s, c]])


def _add_prism(b: _MeshBuilder, loop2d, z0: float, z1: float, cap_tris=None):
    """Extrude a counter-clockwise polygon along z, closing both caps."""
    bot = b.ring(_with_z(loop2d, z0))
    top = b.ring(_with_z(loop2d, z1))
    b.wall(bot, top)
    if cap_tris is None:
        b.polygon_cap(top)
        b.polygon_cap(bot, flip=True)
    else:
        b.cap(top, cap_tris)
        b.cap(bot, cap_tris, flip=True)


def _add_hollow_prism(b: _MeshBuilder, outer2d, inner2d, z0: float, z1: float):
    """Extrude an annular region; inner wall faces the hole."""
    bot_o = b.ring(_with_z(outer2d, z0))
    top_o = b.ring(_with_z(outer2d, z1))
    bot_i = b.ring(_with_z(inner2d, z0))
    top_i = b.ring(_with_z(inner2d, z1))
    b.wall(bot_o, top_o)
    b.wall(bot_i, top_i, flip=True)
    b.annulus(top_o, top_i)
    b.annulus(bot_o, bot_i, flip=True)


def _add_box(b: _MeshBuilder, x0, x1, y0, y1, z0, z1, angle=0.0):
    loop = np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], dtype=np.float64)
    if angle:
        loop = _rotated(loop, angle)
    _add_prism(b, loop, z0, z1)


def _build_cuboid(p) -> Mesh:
    b = _MeshBuilder()
    _add_prism(b, _rect(p["length"], p["width"]), -p["height"] / 2, p["height"] / 2)
    return b.mesh()


def _build_plate(p) -> Mesh:
    b = _MeshBuilder()
    _add_prism(b, _rect(p["length"], p["width"]), -p["thickness"] / 2, p["thickness"] / 2)
    return b.mesh()


def _build_post(p) -> Mesh:
    b = _MeshBuilder()
    _add_prism(b, _circle(p["radius"]), -p["height"] / 2, p["height"] / 2)
    return b.mesh()


def _build_tube(p) -> Mesh:
    r_out = p["outer_radius"]
    b = _MeshBuilder()
    _add_hollow_prism(
        b, _circle(r_out), _circle(r_out * p["bore_ratio"]), -p["height"] / 2, p["height"] / 2
    )
    return b.mesh()


def _build_elbow(p) -> Mesh:
    """Quarter-torus pipe bend with flat end caps."""
    bend = p["bend_radius"]
    r = bend * p["pipe_ratio"]
    steps, n = 12, CIRCLE_SEGMENTS
    b = _MeshBuilder()
    rings = []
    for k in range(steps + 1):
        theta = (np.pi / 2.0) * k / steps
        radial = np.array([np.cos(theta), np.sin(theta), 0.0])
        center = bend * radial
        phi = 2.0 * np.pi * np.arange(n) / n
        pts = center + r * (np.outer(np.cos(phi), radial) + np.outer(np.sin(phi), [0.0, 0.0, 1.0]))
        rings.append(b.ring(pts))
    for k in range(steps):
        b.wall(rings[k], rings[k + 1], flip=True)
    start_center = b.ring([[bend, 0.0, 0.0]])[0]
    end_center = b.ring([[0.0, bend, 0.0]])[0]
    b.fan(start_center, rings[0])
    b.fan(end_center, rings[-1], flip=True)
    return b.mesh()


# L cross-section is star-shaped around vertex 0, so a fixed fan closes it
_L_CAP = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 5)]


def _build_l_block(p) -> Mesh:
    leg_a, leg_b, t = p["leg_a"], p["leg_b"], p["thickness"]
    h = p["height"]
    loop = np.array(
        [(0, 0), (leg_a, 0), (leg_a, t), (t, t), (t, leg_b), (0, leg_b)],
        dtype=np.float64,
    )
    b = _MeshBuilder()
    _add_prism(b, loop, -h / 2, h / 2, cap_tris=_L_CAP)
    return b.mesh()


def _subdivided_hexagon(r: float, per_edge: int) -> np.ndarray:
    corners = _circle(r, 6)
    pts = []
    for k in range(6):
        a, c = corners[k], corners[(k + 1) % 6]
        for f in range(per_edge):
            pts.append(a + (c - a) * (f / per_edge))
    return np.asarray(pts)


def _build_hex_nut(p) -> Mesh:
    r_hex = p["width"]
    h = r_hex * p["thickness_ratio"]
    b = _MeshBuilder()
    # hexagon edges subdivided 4x so the outer loop matches the 24-point bore
    outer = _subdivided_hexagon(r_hex, CIRCLE_SEGMENTS // 6)
    _add_hollow_prism(b, outer, _circle(r_hex * p["bore_ratio"]), -h / 2, h / 2)
    return b.mesh()


def _build_wheel(p) -> Mesh:
    """Rim, hub, and radial spokes as disjoint closed components."""
    r_out = p["rim_radius"]
    r_in = r_out * p["rim_ratio"]
    h_rim = p["rim_height"]
    h_hub = h_rim * p["hub_height_ratio"]
    spokes = int(p["spokes"])
    w_s = p["spoke_width"]
    h_s = h_rim * p["spoke_height_ratio"]
    b = _MeshBuilder()
    _add_hollow_prism(b, _circle(r_out), _circle(r_in), -h_rim / 2, h_rim / 2)
    _add_prism(b, _circle(p["hub_radius"]), -h_hub / 2, h_hub / 2)
    x0, x1 = p["hub_radius"] * 0.5, (r_in + r_out) / 2.0
    for s in range(spokes):
        angle = 2.0 * np.pi * s / spokes
        _add_box(b, x0, x1, -w_s / 2, w_s / 2, -h_s / 2, h_s / 2, angle=angle)
    return b.mesh()


def _toothed_loop(teeth: int, r_root: float, r_tip: float) -> np.ndarray:
    # trapezoidal teeth: four angular stations per tooth period
    fractions = np.array([0.0, 0.25, 0.5, 0.75])
    radii = np.array([r_root, r_tip, r_tip, r_root])
    ang = 2.0 * np.pi * (np.arange(teeth)[:, None] + fractions[None, :]) / teeth
    rad = np.broadcast_to(radii, (teeth, 4))
    ang, rad = ang.ravel(), rad.ravel()
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def _build_gear(p) -> Mesh:
    teeth = int(p["teeth"])
    r_root = p["root_radius"]
    h = p["height"]
    b = _MeshBuilder()
    outer = _toothed_loop(teeth, r_root, r_root * p["tip_ratio"])
    # bore segment count matches the toothed loop so the cap strip closes
    bore = _circle(r_root * p["bore_ratio"], 4 * teeth)
    _add_hollow_prism(b, outer, bore, -h / 2, h / 2)
    return b.mesh()


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lo: float
    hi: float
    integer: bool = False


@dataclass(frozen=True)
class ParametricFamily:
    """A named shape class: declared parameter ranges plus a mesh builder."""

    name: str
    params: tuple
    builder: object

    def build(self, values) -> Mesh:
        got, want = set(values), {p.name for p in self.params}
        if got != want:
            raise ValueError(f"{self.name}: expected parameters {sorted(want)}, got {sorted(got)}")
        for p in self.params:
            v = values[p.name]
            if not p.lo <= v <= p.hi:
                raise ValueError(f"{self.name}: {p.name}={v!r} outside [{p.lo}, {p.hi}]")
            if p.integer and v != int(v):
                raise ValueError(f"{self.name}: {p.name}={v!r} must be an integer")
        return self.builder(values)

    def sample(self, rng) -> dict:
        """Draw one in-range value per parameter, in declaration order."""
        values = {}
        for p in self.params:
            if p.integer:
                values[p.name] = int(rng.integers(int(p.lo), int(p.hi) + 1))
            else:
                values[p.name] = float(rng.uniform(p.lo, p.hi))
        return values


_FAMILY_LIST = (
    ParametricFamily(
        "cuboid",
        (ParamSpec("length", 0.4, 1.6), ParamSpec("width", 0.4, 1.6), ParamSpec("height", 0.4, 1.6)),
        _build_cuboid,
    ),
    ParametricFamily(
        "plate",
        (ParamSpec("length", 1.0, 1.8), ParamSpec("width", 1.0, 1.8), ParamSpec("thickness", 0.02, 0.08)),
        _build_plate,
    ),
    ParametricFamily(
        "post",
        (ParamSpec("radius", 0.15, 0.35), ParamSpec("height", 1.2, 1.8)),
        _build_post,
    ),
    ParametricFamily(
        "tube",
        (ParamSpec("outer_radius", 0.5, 0.8), ParamSpec("bore_ratio", 0.55, 0.75), ParamSpec("height", 0.8, 1.6)),
        _build_tube,
    ),
    ParametricFamily(
        "elbow",
        (ParamSpec("bend_radius", 0.5, 0.9), ParamSpec("pipe_ratio", 0.2, 0.35)),
        _build_elbow,
    ),
    ParametricFamily(
        "l_block",
        (
            ParamSpec("leg_a", 0.8, 1.4),
            ParamSpec("leg_b", 0.8, 1.4),
            ParamSpec("thickness", 0.15, 0.35),
            ParamSpec("height", 0.3, 0.9),
        ),
        _build_l_block,
    ),
    ParametricFamily(
        "hex_nut",
        (ParamSpec("width", 0.6, 0.9), ParamSpec("bore_ratio", 0.4, 0.55), ParamSpec("thickness_ratio", 0.3, 0.5)),
        _build_hex_nut,
    ),
    ParametricFamily(
        "wheel",
        (
            ParamSpec("rim_radius", 0.85, 1.0),
            ParamSpec("rim_ratio", 0.78, 0.86),
            ParamSpec("rim_height", 0.16, 0.28),
            ParamSpec("hub_radius", 0.12, 0.2),
            ParamSpec("hub_height_ratio", 1.0, 1.4),
            ParamSpec("spokes", 4, 6, integer=True),
            ParamSpec("spoke_width", 0.06, 0.12),
            ParamSpec("spoke_height_ratio", 0.5, 0.9),
        ),
        _build_wheel,
    ),
    ParametricFamily(
        "gear",
        (
            ParamSpec("teeth", 8, 14, integer=True),
            ParamSpec("root_radius", 0.55, 0.75),
            ParamSpec("tip_ratio", 1.25, 1.45),
            ParamSpec("bore_ratio", 0.3, 0.5),
            ParamSpec("height", 0.15, 0.3),
        ),
        _build_gear,
    ),
)

FAMILIES = {f.name: f for f in _FAMILY_LIST}


def family_names(count=None):
    """All family names, or the first `count` of them."""
    names = [f.name for f in _FAMILY_LIST]
    if count is None:
        return names
    if not 1 <= count <= len(names):
        raise ConfigError(f"family count must be in [1, {len(names)}], got {count}")
    return names[:count]


def generate_model(family: str, seed: int, index: int) -> Mesh:
    """Build one model; (family, seed, index) determines it completely."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; known: {', '.join(FAMILIES)}")
    if index < 0 or seed < 0:
        raise ConfigError("seed and model index must be non-negative")
    fam = FAMILIES[family]
    # streams keyed by global family position, so model i of a family is
    # the same mesh no matter which subset of families is generated
    ss = np.random.SeedSequence((seed, list(FAMILIES).index(family), index))
    rng = np.random.Generator(np.random.PCG64(ss))
    return fam.build(fam.sample(rng))


def write_corpus(out_dir, counts, seed: int):
    """Generate and save counts[family] models per family.

    Returns (relative path, family) rows in generation order.
    """
    out_dir = Path(out_dir)
    rows = []
    for family, count in counts.items():
        if family not in FAMILIES:
            raise ConfigError(f"unknown family {family!r}")
        if count < 2:
            raise ConfigError(f"need at least 2 models per family, got {count} for {family}")
        fam_dir = out_dir / family
        fam_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            mesh = generate_model(family, seed, i)
            rel = f"{family}/{family}_{i:04d}.stl"
            (out_dir / rel).write_bytes(write_stl(mesh))
            rows.append((rel, family))
    return rows


def signed_volume(mesh: Mesh) -> float:
    """Volume enclosed by an oriented surface; positive = outward normals."""
    a, b, c = np.moveaxis(mesh.triangle_coords, 1, 0)
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def boundary_report(mesh: Mesh):
    """(duplicate directed edges, unmatched directed edges) counts.

    A closed, consistently oriented surface scores (0, 0): every directed
    edge appears once and its reverse appears once.
    """
    edges = Counter()
    for a, b, c in mesh.triangles:
        edges[int(a), int(b)] += 1
        edges[int(b), int(c)] += 1
        edges[int(c), int(a)] += 1
    duplicates = sum(n - 1 for n in edges.values() if n > 1)
    unmatched = sum(n for (u, v), n in edges.items() if edges.get((v, u), 0) == 0)
    return duplicates, unmatched


def is_watertight(mesh: Mesh) -> bool:
    return boundary_report(mesh) == (0, 0)
