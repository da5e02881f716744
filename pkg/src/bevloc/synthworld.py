"""Procedural street-grid worlds with 3D structure and an analytic
raycasting renderer.

Worlds carry a polygonal semantic map (drivable / walkway / crossing /
building), per-category surface heights, and extruded building prisms.
The renderer produces, per camera, a semantic index image and a
height-above-ground image — exact oracles for the projection stages.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .geometry import CameraRig, EgoPose, transform_points
from .semantic_map import SemanticMap, points_in_polygon, polygon_area

logger = logging.getLogger(__name__)

CATEGORIES = ("drivable", "walkway", "crossing", "building")

# Crossings are painted on the road surface: a pixel rendered as crossing
# is also drivable. Used when lifting semantic indices to channel features.
CATEGORY_IMPLIES = {"crossing": ("drivable",)}

# Height bins for the soft height encoding (meters above ground).
DEFAULT_BINS = (-0.5, 0.0, 0.5, 1.0, 2.0, 3.0)

_RAY_EPS = 1e-9


class InvalidSpecError(ValueError):
    """A world spec that cannot produce a valid world."""


@dataclass(frozen=True)
class WorldSpec:
    """Parameters of a procedurally generated world.

    The same seed and spec always produce a bit-identical world.
    """

    seed: int = 0
    extent: float = 240.0
    road_density: float = 1.0  # roads per 100 m, per axis
    walkway_elevation: float = 0.15
    building_height_range: tuple[float, float] = (3.0, 10.0)
    crossing_frequency: float = 0.6
    road_width_range: tuple[float, float] = (7.0, 12.0)
    walkway_width: float = 2.5
    buildings_per_block: float = 1.0
    position_jitter: float = 0.35  # fraction of the road spacing

    def __post_init__(self):
        if self.extent <= 0:
            raise InvalidSpecError("extent must be positive")
        if self.road_density <= 0:
            raise InvalidSpecError("road density must be positive (no roads, no world)")
        if not (-0.5 <= self.walkway_elevation <= 3.0):
            raise InvalidSpecError("walkway elevation outside the supported [-0.5, 3] range")
        lo, hi = self.building_height_range
        if lo > hi or lo < 0:
            raise InvalidSpecError("building height range must be 0 <= lo <= hi")
        if not (0.0 <= self.crossing_frequency <= 1.0):
            raise InvalidSpecError("crossing frequency must be in [0, 1]")


@dataclass(frozen=True)
class Building:
    """Extruded prism: convex CCW footprint polygon and top height."""

    footprint: np.ndarray  # (V, 2)
    height: float

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=np.float64)
        if polygon_area(fp) < 0:
            fp = fp[::-1].copy()
        object.__setattr__(self, "footprint", fp)


@dataclass(frozen=True)
class World:
    smap: SemanticMap
    surface_heights: dict[str, float]  # flat categories only
    buildings: tuple[Building, ...]
    extent: float

    def transformed(self, pose: EgoPose) -> "World":
        """World with all geometry mapped through an SE(2) pose."""
        return World(
            self.smap.transformed(pose),
            dict(self.surface_heights),
            tuple(
                Building(transform_points(pose, b.footprint), b.height)
                for b in self.buildings
            ),
            self.extent,
        )

    def to_dict(self) -> dict:
        doc = self.smap.to_dict()
        doc["surface_heights"] = dict(self.surface_heights)
        doc["buildings"] = [
            {"footprint": b.footprint.tolist(), "height": b.height} for b in self.buildings
        ]
        doc["extent"] = self.extent
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "World":
        smap = SemanticMap.from_dict(doc)
        return World(
            smap,
            {k: float(v) for k, v in doc["surface_heights"].items()},
            tuple(
                Building(np.asarray(b["footprint"]), float(b["height"]))
                for b in doc["buildings"]
            ),
            float(doc["extent"]),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @staticmethod
    def from_json(path) -> "World":
        with open(path) as f:
            return World.from_dict(json.load(f))


def _rect(x0, x1, y0, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def _subtract_intervals(span: tuple[float, float], cuts: list[tuple[float, float]]):
    """Remove sorted-or-not cut intervals from a 1D span."""
    pieces = [span]
    for c0, c1 in cuts:
        nxt = []
        for p0, p1 in pieces:
            if c1 <= p0 or c0 >= p1:
                nxt.append((p0, p1))
                continue
            if c0 > p0:
                nxt.append((p0, c0))
            if c1 < p1:
                nxt.append((c1, p1))
        pieces = nxt
    return [(a, b) for a, b in pieces if b - a > 0.5]


def generate_world(spec: WorldSpec) -> World:
    """Deterministic street-grid world from a seeded spec.

    The grid always has at least one vertical and one horizontal road, so
    every world contains a junction.
    """
    rng = np.random.default_rng(spec.seed)
    half = spec.extent / 2.0
    spacing = 100.0 / spec.road_density
    n_per_axis = max(1, int(round(spec.extent / spacing)))

    def road_positions(n):
        base = np.array([-half + spec.extent * (i + 1) / (n + 1) for i in range(n)])
        jit = rng.uniform(-1.0, 1.0, size=n) * spec.position_jitter * spacing * 0.5
        return np.sort(base + jit)

    xs = road_positions(n_per_axis)
    wxs = rng.uniform(*spec.road_width_range, size=n_per_axis)
    ys = road_positions(n_per_axis)
    wys = rng.uniform(*spec.road_width_range, size=n_per_axis)

    ww = spec.walkway_width
    v_strips = [(x - w / 2, x + w / 2) for x, w in zip(xs, wxs)]  # road x-extents
    h_strips = [(y - w / 2, y + w / 2) for y, w in zip(ys, wys)]
    v_outer = [(a - ww, b + ww) for a, b in v_strips]  # road + walkways
    h_outer = [(a - ww, b + ww) for a, b in h_strips]

    drivable: list[np.ndarray] = []
    for a, b in v_strips:
        drivable.append(_rect(a, b, -half, half))
    for a, b in h_strips:
        # split at vertical roads so drivable polygons never overlap
        for p0, p1 in _subtract_intervals((-half, half), v_strips):
            drivable.append(_rect(p0, p1, a, b))

    walkway: list[np.ndarray] = []
    for a, b in v_strips:
        for lo, hi in ((a - ww, a), (b, b + ww)):
            for p0, p1 in _subtract_intervals((-half, half), h_strips):
                walkway.append(_rect(lo, hi, p0, p1))
    for a, b in h_strips:
        for lo, hi in ((a - ww, a), (b, b + ww)):
            for p0, p1 in _subtract_intervals((-half, half), v_outer):
                walkway.append(_rect(p0, p1, lo, hi))

    # Crossings: painted on the road just outside a junction, one arm at
    # most per junction.
    crossing: list[np.ndarray] = []
    cw = 3.0
    for i, (vx, vw) in enumerate(zip(xs, wxs)):
        for j, (hy, hw) in enumerate(zip(ys, wys)):
            if rng.uniform() >= spec.crossing_frequency:
                continue
            arm = rng.integers(0, 4)
            gap = 0.8
            if arm == 0:  # north arm, crossing the vertical road
                y0 = hy + hw / 2 + gap
                crossing.append(_rect(vx - vw / 2, vx + vw / 2, y0, y0 + cw))
            elif arm == 1:  # south arm
                y1 = hy - hw / 2 - gap
                crossing.append(_rect(vx - vw / 2, vx + vw / 2, y1 - cw, y1))
            elif arm == 2:  # east arm, crossing the horizontal road
                x0 = vx + vw / 2 + gap
                crossing.append(_rect(x0, x0 + cw, hy - hw / 2, hy + hw / 2))
            else:  # west arm
                x1 = vx - vw / 2 - gap
                crossing.append(_rect(x1 - cw, x1, hy - hw / 2, hy + hw / 2))

    # Buildings fill the blocks between walkway outer edges.
    buildings: list[Building] = []
    building_polys: list[np.ndarray] = []
    x_blocks = _subtract_intervals((-half, half), v_outer)
    y_blocks = _subtract_intervals((-half, half), h_outer)
    margin = 2.0
    for bx0, bx1 in x_blocks:
        for by0, by1 in y_blocks:
            if bx1 - bx0 < 14 or by1 - by0 < 14:
                continue
            if rng.uniform() >= min(1.0, spec.buildings_per_block):
                continue
            sx = rng.uniform(8.0, min(24.0, bx1 - bx0 - 2 * margin))
            sy = rng.uniform(8.0, min(24.0, by1 - by0 - 2 * margin))
            cx = rng.uniform(bx0 + margin + sx / 2, bx1 - margin - sx / 2)
            cy = rng.uniform(by0 + margin + sy / 2, by1 - margin - sy / 2)
            h = rng.uniform(*spec.building_height_range)
            fp = _rect(cx - sx / 2, cx + sx / 2, cy - sy / 2, cy + sy / 2)
            buildings.append(Building(fp, float(h)))
            building_polys.append(fp)

    smap = SemanticMap(
        CATEGORIES,
        {
            "drivable": drivable,
            "walkway": walkway,
            "crossing": crossing,
            "building": building_polys,
        },
    )
    heights = {"drivable": 0.0, "walkway": float(spec.walkway_elevation), "crossing": 0.0}
    return World(smap, heights, tuple(buildings), spec.extent)


def sample_pose(world: World, rng: np.random.Generator, margin: float = 60.0) -> EgoPose:
    """A random on-road pose with uniform heading, away from the world rim."""
    half = world.extent / 2.0
    lim = max(half - margin, 10.0)
    drivable = world.smap.polygons["drivable"]
    for _ in range(10_000):
        x = rng.uniform(-lim, lim)
        y = rng.uniform(-lim, lim)
        pt = np.array([x, y])
        if any(points_in_polygon(pt, p) for p in drivable):
            return EgoPose(x, y, rng.uniform(-math.pi, math.pi))
    raise RuntimeError("could not sample an on-road pose")


@dataclass(frozen=True)
class SurroundObservation:
    """Per-camera semantic index and height-above-ground images.

    Semantic index N (= number of categories) marks no-surface / sky;
    those pixels carry NaN height.
    """

    camera_names: tuple[str, ...]
    semantic: tuple[np.ndarray, ...]  # int16 (H, W)
    height: tuple[np.ndarray, ...]  # float64 (H, W), NaN where no surface
    n_categories: int

    def __post_init__(self):
        for name, sem, hgt in zip(self.camera_names, self.semantic, self.height):
            if sem.shape != hgt.shape:
                raise ValueError(f"{name}: semantic/height image shapes differ")
            none = sem == self.n_categories
            if not np.array_equal(none, np.isnan(hgt)):
                raise ValueError(f"{name}: no-surface pixels must carry the NaN sentinel")

    def save(self, out_dir, resolution: float = 1.0) -> None:
        """Dump per-camera one-hot semantics (.smr) and heights (.smf)
        plus a manifest."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, sem, hgt in zip(self.camera_names, self.semantic, self.height):
            onehot = np.stack(
                [(sem == i) for i in range(self.n_categories + 1)]
            ).astype(np.uint8)
            formats.write_bool_raster(out / f"{name}_sem.smr", onehot, resolution)
            formats.write_float_raster(out / f"{name}_hgt.smf", hgt[None], resolution)
            files[name] = {"semantic": f"{name}_sem.smr", "height": f"{name}_hgt.smf"}
        manifest = {
            "cameras": list(self.camera_names),
            "n_categories": self.n_categories,
            "files": files,
        }
        (out / "observation.json").write_text(json.dumps(manifest, indent=2) + "\n")

    @staticmethod
    def load(obs_dir) -> "SurroundObservation":
        obs_dir = Path(obs_dir)
        with open(obs_dir / "observation.json") as f:
            manifest = json.load(f)
        n_cat = int(manifest["n_categories"])
        names = tuple(manifest["cameras"])
        sems = []
        hgts = []
        for name in names:
            onehot, _, _ = formats.read_bool_raster(obs_dir / manifest["files"][name]["semantic"])
            sems.append(np.argmax(onehot, axis=0).astype(np.int16))
            h, _, _ = formats.read_float_raster(obs_dir / manifest["files"][name]["height"])
            hgts.append(h[0].astype(np.float64))
        return SurroundObservation(names, tuple(sems), tuple(hgts), n_cat)


def _prism_interval(origins, dirs, footprint, height):
    """Entry/exit ray parameters against a convex extruded footprint.

    origins (3,), dirs (M, 3). Returns (t_lo, t_hi) arrays; misses have
    t_lo > t_hi.
    """
    m = dirs.shape[0]
    t_lo = np.zeros(m)
    t_hi = np.full(m, np.inf)
    ox, oy, oz = origins
    n = footprint.shape[0]
    for e in range(n):
        ax, ay = footprint[e]
        bx, by = footprint[(e + 1) % n]
        # inward normal of a CCW edge
        nx, ny = -(by - ay), bx - ax
        a = nx * dirs[:, 0] + ny * dirs[:, 1]
        b = nx * (ox - ax) + ny * (oy - ay)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -b / a
        lower = a > 0
        upper = a < 0
        t_lo = np.where(lower, np.maximum(t_lo, t), t_lo)
        t_hi = np.where(upper, np.minimum(t_hi, t), t_hi)
        outside = (a == 0) & (b < 0)
        t_hi = np.where(outside, -np.inf, t_hi)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (0.0 - oz) / dz
        t1 = (height - oz) / dz
    lo_z = np.where(dz > 0, t0, np.where(dz < 0, t1, 0.0))
    hi_z = np.where(dz > 0, t1, np.where(dz < 0, t0, np.inf))
    flat_out = (dz == 0) & ((oz < 0) | (oz > height))
    t_lo = np.maximum(t_lo, lo_z)
    t_hi = np.minimum(t_hi, hi_z)
    t_hi = np.where(flat_out, -np.inf, t_hi)
    return t_lo, t_hi


def render_surround(world: World, rig: CameraRig, pose: EgoPose) -> SurroundObservation:
    """Raycast oracle images for every camera of the rig at an ego pose.

    Each pixel carries the category and height above ground of the first
    surface its center ray intersects: flat category surfaces at their
    height, building walls and roofs at the intersection height. Same-t
    ties between coplanar surfaces resolve to the higher category index
    (crossings paint over drivable).
    """
    cats = world.smap.categories
    n_cat = len(cats)
    cyaw, syaw = math.cos(pose.yaw), math.sin(pose.yaw)
    rz = np.array([[cyaw, -syaw, 0.0], [syaw, cyaw, 0.0], [0.0, 0.0, 1.0]])

    sems = []
    hgts = []
    for cam in rig:
        w, h = cam.intrinsics.width, cam.intrinsics.height
        us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        xn = (us - cam.intrinsics.cx) / cam.intrinsics.fx
        yn = (vs - cam.intrinsics.cy) / cam.intrinsics.fy
        d_cam = np.stack([xn.ravel(), yn.ravel(), np.ones(w * h)], axis=1)
        d_map = d_cam @ (rz @ cam.extrinsics.rotation.T).T

        c_ego = cam.extrinsics.center()
        c_map = rz @ c_ego + np.array([pose.x, pose.y, 0.0])

        best_t = np.full(w * h, np.inf)
        best_cat = np.full(w * h, n_cat, dtype=np.int16)
        best_pri = np.full(w * h, -1, dtype=np.int16)
        best_h = np.full(w * h, np.nan)

        dz = d_map[:, 2]
        for ci, cat in enumerate(cats):
            if cat not in world.surface_heights:
                continue
            z_s = world.surface_heights[cat]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (z_s - c_map[2]) / dz
            ahead = (dz != 0) & (t > _RAY_EPS)
            if not ahead.any():
                continue
            idx = np.nonzero(ahead)[0]
            pts = c_map[:2] + t[idx, None] * d_map[idx, :2]
            hit = np.zeros(idx.shape[0], dtype=bool)
            for poly in world.smap.polygons[cat]:
                hit |= points_in_polygon(pts, poly)
            if not hit.any():
                continue
            idx = idx[hit]
            tt = t[idx]
            better = (tt < best_t[idx]) | ((tt == best_t[idx]) & (ci > best_pri[idx]))
            idx = idx[better]
            best_t[idx] = t[idx]
            best_cat[idx] = ci
            best_pri[idx] = ci
            best_h[idx] = z_s

        bci = cats.index("building") if "building" in cats else None
        for b in world.buildings:
            t_lo, t_hi = _prism_interval(c_map, d_map, b.footprint, b.height)
            hit = (t_lo > _RAY_EPS) & (t_lo <= t_hi) & np.isfinite(t_lo)
            if not hit.any():
                continue
            idx = np.nonzero(hit)[0]
            tt = t_lo[idx]
            better = (tt < best_t[idx]) | ((tt == best_t[idx]) & (bci > best_pri[idx]))
            idx = idx[better]
            tt = t_lo[idx]
            best_t[idx] = tt
            best_cat[idx] = bci
            best_pri[idx] = bci
            best_h[idx] = c_map[2] + tt * dz[idx]

        sems.append(best_cat.reshape(h, w))
        hgts.append(best_h.reshape(h, w))

    return SurroundObservation(
        tuple(c.name for c in rig), tuple(sems), tuple(hgts), n_cat
    )


def height_to_distribution(height: np.ndarray, bins=DEFAULT_BINS) -> np.ndarray:
    """Soft assignment of heights over bins: (..., K) hat weights.

    Exact bin values one-hot; heights between adjacent bins split
    linearly; values outside the bin range clamp to the end bins. NaN
    (no surface) rows are all zero.
    """
    b = np.asarray(bins, dtype=np.float64)
    if b.ndim != 1 or b.size < 1 or (b.size > 1 and not np.all(np.diff(b) > 0)):
        raise ValueError("bins must be strictly increasing")
    h = np.asarray(height, dtype=np.float64)
    out = np.zeros(h.shape + (b.size,))
    finite = np.isfinite(h)
    if b.size == 1:
        out[finite, 0] = 1.0
        return out
    hc = np.clip(h[finite], b[0], b[-1])
    k = np.clip(np.searchsorted(b, hc, side="right") - 1, 0, b.size - 2)
    w = (hc - b[k]) / (b[k + 1] - b[k])
    flat = out[finite]
    rows = np.arange(hc.size)
    flat[rows, k] = 1.0 - w
    flat[rows, k + 1] += w
    out[finite] = flat
    return out


def expected_height(dist: np.ndarray, bins=DEFAULT_BINS) -> np.ndarray:
    """Per-pixel expected height: sum_k bins[k] * dist[..., k]."""
    b = np.asarray(bins, dtype=np.float64)
    return np.asarray(dist, dtype=np.float64) @ b
