"""
CAD Sequence Toolkit - Geometry Kernel
Tessellation, sampling-based CSG surface sampling, chamfer distance, normal
estimation, duplicate detection, model complexity and chamfer retrieval
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from cad_core import (
    EPS_CLOSE, BooleanOp, CadSequence, ExtentType, Extrusion, Loop, OpenLoopError,
    PrimitiveType, arc_geometry, circle_center_radius, infer_primitive_type, validate,
)
from utils import logger

CD_SCALE = 1000.0
DELTA_CSG = 1e-4
ARC_SEGMENTS = 64
DEFAULT_OVERSAMPLE = 8
DUPLICATE_THRESHOLD = 3e-4

_QUERY_CHUNK = 2048


class GeometryError(Exception):
    """Base class for geometry kernel errors"""


class EmptySolidError(GeometryError):
    pass


class InvalidSequenceError(GeometryError):
    pass


@dataclass
class PointCloud:
    """n oriented points; shapes produced by sample_surface are normalized into [-1,1]^3"""
    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise GeometryError("point cloud must hold at least one point")
        if self.points.shape != self.normals.shape:
            raise GeometryError(f"points {self.points.shape} and normals {self.normals.shape} differ")

    def __len__(self) -> int:
        return len(self.points)

    def copy(self) -> "PointCloud":
        return PointCloud(self.points.copy(), self.normals.copy())

    def subset(self, index: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[index], self.normals[index])


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_zyz(theta: float, phi: float, gamma: float) -> np.ndarray:
    return _rot_z(theta) @ _rot_y(phi) @ _rot_z(gamma)


@dataclass(frozen=True)
class Frame:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    @classmethod
    def from_extrusion(cls, ext: Extrusion) -> "Frame":
        """Normalized angles map to [-pi, pi] (0.5 is the identity); origin maps to [-1, 1]"""
        angles = [(2.0 * u - 1.0) * math.pi for u in ext.orientation]
        translation = np.array([2.0 * u - 1.0 for u in ext.origin], dtype=np.float64)
        scale = max(float(ext.scale), 1e-9)
        return cls(euler_zyz(*angles), translation, scale)

    @property
    def normal(self) -> np.ndarray:
        return self.rotation[:, 2]

    def sketch_to_plane(self, q: np.ndarray) -> np.ndarray:
        """Sketch coordinates in [0,1]^2 to in-plane coordinates"""
        return (np.asarray(q, dtype=np.float64) - 0.5) * (2.0 * self.scale)

    def plane_to_sketch(self, xy: np.ndarray) -> np.ndarray:
        return np.asarray(xy, dtype=np.float64) / (2.0 * self.scale) + 0.5

    def to_world(self, local: np.ndarray) -> np.ndarray:
        return local @ self.rotation.T + self.translation

    def to_local(self, world: np.ndarray) -> np.ndarray:
        return (world - self.translation) @ self.rotation


def extent_interval(ext: Extrusion) -> Tuple[float, float]:
    """Interval along the plane normal covered by the extrusion"""
    d1, d2 = 2.0 * ext.distances[0], 2.0 * ext.distances[1]
    if ext.extent_type is ExtentType.SYMMETRIC:
        return -d1 / 2.0, d1 / 2.0
    if ext.extent_type is ExtentType.TWO_SIDED:
        return -d2, d1
    return 0.0, d1


# ---------------------------------------------------------------------------
# Tessellation and 2D membership
# ---------------------------------------------------------------------------

def _tessellate(loop: Loop, arc_segments: int = ARC_SEGMENTS) -> Tuple[np.ndarray, np.ndarray]:
    """Polygon vertices plus, per edge i -> i+1, the arc center (NaN for straight edges)"""
    prims = loop.primitives
    step = 2.0 * math.pi / arc_segments
    verts: List[Tuple[float, float]] = []
    centers: List[Tuple[float, float]] = []
    nan = (math.nan, math.nan)
    for i, prim in enumerate(prims):
        kind = infer_primitive_type(prim)
        if kind is PrimitiveType.CIRCLE:
            if len(prims) != 1:
                raise OpenLoopError("circle must be the only primitive of its loop")
            center, radius = circle_center_radius(prim)
            a0 = math.atan2(prim.start[1] - center[1], prim.start[0] - center[0])
            for j in range(arc_segments):
                a = a0 + j * step
                verts.append((center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)))
                centers.append(center)
            continue
        nxt = prims[(i + 1) % len(prims)]
        if math.hypot(prim.end[0] - nxt.start[0], prim.end[1] - nxt.start[1]) > EPS_CLOSE:
            raise OpenLoopError(f"primitive {i} ends at {prim.end}, next starts at {nxt.start}")
        if kind is PrimitiveType.LINE:
            verts.append(tuple(prim.start))
            centers.append(nan)
            continue
        center, radius, a0, sweep = arc_geometry(prim)
        n_seg = max(1, int(math.ceil(abs(sweep) / step - 1e-9)))
        for j in range(n_seg):
            a = a0 + sweep * j / n_seg
            if j == 0:
                verts.append(tuple(prim.start))
            else:
                verts.append((center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)))
            centers.append(center)
    return np.array(verts, dtype=np.float64), np.array(centers, dtype=np.float64)


def tessellate_loop(loop: Loop, arc_segments: int = ARC_SEGMENTS) -> np.ndarray:
    """Closed polygon (first vertex not repeated); arcs subdivided at 2*pi/arc_segments or finer"""
    return _tessellate(loop, arc_segments)[0]


def _segment_distance(q: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each query (k,2) to each segment a->b (m,2); shape (k,m)"""
    ab = b - a
    denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    aq = q[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("kmj,mj->km", aq, ab) / denom, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(q[:, None, :] - closest, axis=-1)


def _crossings(q: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    qx, qy = q[:, 0:1], q[:, 1:2]
    straddle = (a[None, :, 1] > qy) != (b[None, :, 1] > qy)
    dy = b[:, 1] - a[:, 1]
    safe_dy = np.where(dy == 0.0, 1.0, dy)
    x_cross = a[None, :, 0] + (qy - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / safe_dy[None, :]
    return np.count_nonzero(straddle & (qx < x_cross), axis=1)


def region_contains(q: np.ndarray, polygons: Sequence[np.ndarray], eps: float = EPS_CLOSE) -> np.ndarray:
    """Even-odd membership over all loops of a sketch; boundary within eps counts as inside"""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    inside = np.zeros(len(q), dtype=bool)
    if not polygons:
        return inside
    seg_a = np.concatenate([p for p in polygons])
    seg_b = np.concatenate([np.roll(p, -1, axis=0) for p in polygons])
    for lo in range(0, len(q), _QUERY_CHUNK):
        chunk = q[lo:lo + _QUERY_CHUNK]
        parity = _crossings(chunk, seg_a, seg_b) % 2 == 1
        on_edge = _segment_distance(chunk, seg_a, seg_b).min(axis=1) <= eps
        inside[lo:lo + _QUERY_CHUNK] = parity | on_edge
    return inside


def point_in_loop(q, polygon: np.ndarray) -> bool:
    return bool(region_contains(np.asarray(q, dtype=np.float64).reshape(1, 2), [np.asarray(polygon)])[0])


def polygon_area(polygon: np.ndarray) -> float:
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def region_area(polygons: Sequence[np.ndarray]) -> float:
    """Even-odd area for non-crossing loops: nesting depth decides the sign"""
    total = 0.0
    for i, poly in enumerate(polygons):
        others = [p for j, p in enumerate(polygons) if j != i]
        depth = sum(int(region_contains(poly[:1], [p], eps=-1.0)[0]) for p in others)
        total += polygon_area(poly) * (1 if depth % 2 == 0 else -1)
    return max(total, 0.0)


# ---------------------------------------------------------------------------
# Solids and CSG membership
# ---------------------------------------------------------------------------

@dataclass
class Solid:
    polygons: List[np.ndarray]
    centers: List[np.ndarray]
    frame: Frame
    interval: Tuple[float, float]
    boolean_op: BooleanOp

    def contains(self, world: np.ndarray, eps: float = EPS_CLOSE) -> np.ndarray:
        local = self.frame.to_local(world)
        lo, hi = self.interval
        in_slab = (local[:, 2] >= lo - eps) & (local[:, 2] <= hi + eps)
        result = np.zeros(len(world), dtype=bool)
        if np.any(in_slab):
            q = self.frame.plane_to_sketch(local[in_slab, :2])
            result[in_slab] = region_contains(q, self.polygons, eps)
        return result


SolidSet = List[Solid]


def build_solids(seq: CadSequence, arc_segments: int = ARC_SEGMENTS) -> SolidSet:
    solids: SolidSet = []
    for step in seq.steps:
        if step.extrusion is None:
            continue
        tess = [_tessellate(loop, arc_segments) for loop in step.loops]
        solids.append(Solid(
            polygons=[t[0] for t in tess],
            centers=[t[1] for t in tess],
            frame=Frame.from_extrusion(step.extrusion),
            interval=extent_interval(step.extrusion),
            boolean_op=step.extrusion.boolean_op,
        ))
    return solids


def csg_contains(solids: SolidSet, world: np.ndarray) -> np.ndarray:
    """Fold membership over steps: New/Join union, Cut subtract, Intersect intersect"""
    result = np.zeros(len(world), dtype=bool)
    for solid in solids:
        inside = solid.contains(world)
        if solid.boolean_op in (BooleanOp.NEW, BooleanOp.JOIN):
            result |= inside
        elif solid.boolean_op is BooleanOp.CUT:
            result &= ~inside
        else:
            result &= inside
    return result


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------

def _sample_region(rng: np.random.Generator, polygons: List[np.ndarray], count: int) -> np.ndarray:
    """Uniform points inside the sketch region by rejection in its bounding box"""
    if count == 0:
        return np.zeros((0, 2))
    allv = np.concatenate(polygons)
    lo, hi = allv.min(axis=0), allv.max(axis=0)
    accepted: List[np.ndarray] = []
    have = 0
    rate = 0.5
    for _ in range(64):
        batch = int((count - have) / rate * 1.2) + 16
        q = rng.uniform(lo, hi, size=(batch, 2))
        keep = q[region_contains(q, polygons)]
        rate = max(len(keep) / batch, 0.01)
        accepted.append(keep)
        have += len(keep)
        if have >= count:
            return np.concatenate(accepted)[:count]
    raise EmptySolidError("sketch region has no interior to sample")


def _outward_2d(points2d: np.ndarray, normals2d: np.ndarray,
                polygons: List[np.ndarray], probe: float = 1e-4) -> np.ndarray:
    """Flip 2D edge normals that point into the region"""
    inward = region_contains(points2d + probe * normals2d, polygons, eps=0.0)
    normals2d = normals2d.copy()
    normals2d[inward] *= -1.0
    return normals2d


def _solid_candidates(rng: np.random.Generator, solid: Solid, density: float
                      ) -> Tuple[np.ndarray, np.ndarray]:
    frame = solid.frame
    lo, hi = solid.interval
    height = hi - lo
    plane_scale = 2.0 * frame.scale

    pts: List[np.ndarray] = []
    nrm: List[np.ndarray] = []

    cap_area = region_area(solid.polygons) * plane_scale ** 2
    for z, sign in ((hi, 1.0), (lo, -1.0)):
        count = int(rng.poisson(density * cap_area))
        q = _sample_region(rng, solid.polygons, count)
        local = np.column_stack([frame.sketch_to_plane(q), np.full(len(q), z)])
        pts.append(local)
        nrm.append(np.tile([0.0, 0.0, sign], (len(q), 1)))

    if height > 0:
        for poly, centers in zip(solid.polygons, solid.centers):
            a = poly
            b = np.roll(poly, -1, axis=0)
            lengths = np.linalg.norm(b - a, axis=1) * plane_scale
            counts = rng.poisson(density * lengths * height)
            total = int(counts.sum())
            if total == 0:
                continue
            seg = np.repeat(np.arange(len(poly)), counts)
            t = rng.uniform(0.0, 1.0, total)
            q = a[seg] + t[:, None] * (b[seg] - a[seg])
            edge = b[seg] - a[seg]
            n2 = np.column_stack([edge[:, 1], -edge[:, 0]])
            arc_center = centers[seg]
            is_arc = ~np.isnan(arc_center[:, 0])
            n2[is_arc] = q[is_arc] - arc_center[is_arc]
            n2 /= np.maximum(np.linalg.norm(n2, axis=1, keepdims=True), 1e-300)
            n2 = _outward_2d(q, n2, solid.polygons)
            h = rng.uniform(lo, hi, total)
            pts.append(np.column_stack([frame.sketch_to_plane(q), h]))
            nrm.append(np.column_stack([n2, np.zeros(total)]))

    local_pts = np.concatenate(pts) if pts else np.zeros((0, 3))
    local_nrm = np.concatenate(nrm) if nrm else np.zeros((0, 3))
    return frame.to_world(local_pts), local_nrm @ frame.rotation.T


def _surface_area(solid: Solid) -> float:
    plane_scale = 2.0 * solid.frame.scale
    lo, hi = solid.interval
    perimeter = sum(float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum()) for p in solid.polygons)
    return 2.0 * region_area(solid.polygons) * plane_scale ** 2 + perimeter * plane_scale * (hi - lo)


def csg_filter(solids: SolidSet, points: np.ndarray, normals: np.ndarray, tau: float
               ) -> Tuple[np.ndarray, np.ndarray]:
    """Keep candidates on the boundary of the combined solid; normals flipped outward"""
    inside_front = csg_contains(solids, points + tau * normals)
    inside_back = csg_contains(solids, points - tau * normals)
    keep = inside_front != inside_back
    flipped = normals.copy()
    flipped[inside_front] *= -1.0
    return points[keep], flipped[keep]


def normalize_to_unit_box(points: np.ndarray) -> np.ndarray:
    """Center the bounding box at the origin and scale it uniformly into [-1,1]^3"""
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = (lo + hi) / 2.0
    half = float(np.max(hi - lo)) / 2.0
    if half <= 0:
        return points - center
    return (points - center) / half


def sample_surface(seq: CadSequence, n: int = 4096, rng_seed: int = 0,
                   oversample: int = DEFAULT_OVERSAMPLE, delta_csg: float = DELTA_CSG,
                   arc_segments: int = ARC_SEGMENTS) -> PointCloud:
    """Oriented surface samples of the solid a sequence builds"""
    report = validate(seq)
    if not report.valid:
        raise InvalidSequenceError(f"cannot sample invalid sequence: {[c.value for c in report.failure_codes]}")

    solids = build_solids(seq, arc_segments)
    rng = np.random.default_rng(rng_seed)
    total_area = sum(_surface_area(s) for s in solids)
    if total_area <= 0:
        raise EmptySolidError("sequence has no surface area")

    kept_pts = np.zeros((0, 3))
    kept_nrm = np.zeros((0, 3))
    factor = oversample
    for attempt in range(3):
        density = n * factor / total_area
        cand = [_solid_candidates(rng, s, density) for s in solids]
        points = np.concatenate([c[0] for c in cand])
        normals = np.concatenate([c[1] for c in cand])
        if len(solids) > 1 and len(points):
            extent = float(np.max(points.max(axis=0) - points.min(axis=0))) / 2.0
            kept_pts, kept_nrm = csg_filter(solids, points, normals, delta_csg * max(extent, 1e-12))
        else:
            kept_pts, kept_nrm = points, normals
        if len(kept_pts) >= n:
            break
        factor *= 2
        logger(f"🔄 {len(kept_pts)} boundary points < {n}, resampling at {factor}x", "DEBUG")

    if len(kept_pts) == 0:
        raise EmptySolidError("no boundary points survived CSG filtering")

    if len(kept_pts) >= n:
        choice = rng.choice(len(kept_pts), n, replace=False)
    else:
        logger(f"⚠️ only {len(kept_pts)} boundary points for {n} requested, sampling with replacement",
               "WARNING")
        choice = rng.choice(len(kept_pts), n, replace=True)

    pts = normalize_to_unit_box(kept_pts[choice])
    nrm = kept_nrm[choice]
    nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm)


# ---------------------------------------------------------------------------
# Chamfer distance, complexity, duplicates, retrieval
# ---------------------------------------------------------------------------

CloudLike = Union[PointCloud, np.ndarray]


def _as_points(c: CloudLike) -> np.ndarray:
    pts = c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise GeometryError("chamfer distance needs non-empty clouds")
    return pts


def _directed(a: np.ndarray, b: np.ndarray, tree_b: cKDTree) -> float:
    _, idx = tree_b.query(a, k=1)
    return float(np.mean(np.sum((a - b[idx]) ** 2, axis=1)))


def chamfer_distance(a: CloudLike, b: CloudLike) -> float:
    """Raw symmetric chamfer distance with squared nearest-neighbor distances"""
    pa, pb = _as_points(a), _as_points(b)
    return _directed(pa, pb, cKDTree(pb)) + _directed(pb, pa, cKDTree(pa))


def chamfer_reported(a: CloudLike, b: CloudLike) -> float:
    return chamfer_distance(a, b) * CD_SCALE


def chamfer_distance_brute(a: CloudLike, b: CloudLike) -> float:
    """O(n*m) reference"""
    pa, pb = _as_points(a), _as_points(b)
    d2 = np.sum((pa[:, None, :] - pb[None, :, :]) ** 2, axis=-1)
    return float(np.mean(d2.min(axis=1))) + float(np.mean(d2.min(axis=0)))


class ChamferIndex:
    """k-d trees built once over a reference set of clouds"""

    def __init__(self, clouds: Sequence[CloudLike]):
        """Initialize the index"""
        if not clouds:
            raise GeometryError("reference set must not be empty")
        self.points = [_as_points(c) for c in clouds]
        self.trees = [cKDTree(p) for p in self.points]

    def distances(self, query: CloudLike) -> np.ndarray:
        q = _as_points(query)
        q_tree = cKDTree(q)
        return np.array([_directed(q, p, t) + _directed(p, q, q_tree)
                         for p, t in zip(self.points, self.trees)])


def model_complexity(test: CloudLike, train: Union[Sequence[CloudLike], ChamferIndex]) -> float:
    """Lowest raw chamfer distance from test to any train cloud"""
    index = train if isinstance(train, ChamferIndex) else ChamferIndex(train)
    return float(index.distances(test).min())


def find_duplicates(test: Sequence[CloudLike], train: Sequence[CloudLike],
                    threshold: float = DUPLICATE_THRESHOLD) -> List[bool]:
    index = ChamferIndex(train)
    return [model_complexity(t, index) < threshold for t in test]


def nearest_index(query: CloudLike, clouds: Union[Sequence[CloudLike], ChamferIndex]) -> int:
    """Index of the closest cloud; np.argmin breaks ties at the lowest index"""
    index = clouds if isinstance(clouds, ChamferIndex) else ChamferIndex(clouds)
    return int(np.argmin(index.distances(query)))


def retrieve_nearest(query: CloudLike, candidates: Sequence[Tuple[CadSequence, CloudLike]]) -> CadSequence:
    if not candidates:
        raise GeometryError("retrieval needs at least one candidate")
    return candidates[nearest_index(query, [c for _, c in candidates])][0]


# ---------------------------------------------------------------------------
# Normal estimation
# ---------------------------------------------------------------------------

def estimate_normals(points: np.ndarray, k: int = 30, tol: float = 1e-12
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """PCA normals over k nearest neighbors, oriented away from the centroid.

    Returns (normals, degenerate) where degenerate flags neighborhoods whose
    covariance has rank < 2; those keep an arbitrary unit eigenvector.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if k < 3 or len(points) <= k:
        raise GeometryError(f"normal estimation needs k >= 3 and more than k points (k={k}, n={len(points)})")
    _, idx = cKDTree(points).query(points, k=k)
    nbrs = points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    degenerate = evals[:, 1] <= tol * np.maximum(evals[:, 2], 1.0)

    outward = points - points.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    if np.any(degenerate):
        logger(f"⚠️ {int(degenerate.sum())} degenerate neighborhoods during normal estimation", "DEBUG")
    return normals, degenerate


# ---------------------------------------------------------------------------
# Point cloud IO
# ---------------------------------------------------------------------------

_PLY_DTYPE = np.dtype([(name, "<f4") for name in ("x", "y", "z", "nx", "ny", "nz")])


def write_ply(path, cloud: PointCloud) -> Path:
    """Binary little-endian PLY with float32 x,y,z,nx,ny,nz"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.empty(len(cloud), dtype=_PLY_DTYPE)
    for i, name in enumerate(("x", "y", "z")):
        data[name] = cloud.points[:, i]
    for i, name in enumerate(("nx", "ny", "nz")):
        data[name] = cloud.normals[:, i]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {name}" for name in _PLY_DTYPE.names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())
    return path


def read_ply(path) -> PointCloud:
    with open(path, "rb") as f:
        raw = f.read()
    marker = b"end_header\n"
    end = raw.find(marker)
    if not raw.startswith(b"ply") or end < 0:
        raise GeometryError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise GeometryError(f"{path}: only binary little-endian PLY is supported")
    count = None
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts[:1] == ["property"]:
            props.append(parts[-1])
    if count is None or tuple(props) != _PLY_DTYPE.names:
        raise GeometryError(f"{path}: expected vertex properties {_PLY_DTYPE.names}, got {props}")
    data = np.frombuffer(raw, dtype=_PLY_DTYPE, count=count, offset=end + len(marker))
    points = np.column_stack([data[n] for n in ("x", "y", "z")]).astype(np.float64)
    normals = np.column_stack([data[n] for n in ("nx", "ny", "nz")]).astype(np.float64)
    return PointCloud(points, normals)


def write_xyz(path, cloud: PointCloud) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.hstack([cloud.points, cloud.normals]), fmt="%.9g")
    return path


def read_xyz(path) -> PointCloud:
    data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if data.shape[1] != 6:
        raise GeometryError(f"{path}: expected 6 columns, got {data.shape[1]}")
    return PointCloud(data[:, :3], data[:, 3:])
