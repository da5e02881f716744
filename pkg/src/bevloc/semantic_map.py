"""Polygonal semantic world model, N-channel boolean rasterization, and
prior-centered tile cropping.

Channel order always equals category order. Rasters follow the package
convention: index [channel, row, col] with row <-> y, col <-> x, and
`origin` the map-frame center of cell (0, 0).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels, formats
from .formats import FormatError, MagicMismatchError, TruncatedFileError  # noqa: F401
from .geometry import EgoPose, transform_points

logger = logging.getLogger(__name__)

__all__ = [
    "SemanticMap",
    "MapRaster",
    "MapTile",
    "polygon_area",
    "points_in_polygon",
    "points_in_polygon_inclusive",
    "rasterize",
    "rasterize_onto",
    "crop_tile",
    "save_raster",
    "load_raster",
]


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise winding)."""
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class SemanticMap:
    """Ordered categories and their simple polygons (map-frame meters)."""

    categories: tuple[str, ...]
    polygons: dict[str, list[np.ndarray]]

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        polys: dict[str, list[np.ndarray]] = {}
        for cat in self.categories:
            entries = []
            for p in self.polygons.get(cat, []):
                arr = np.asarray(p, dtype=np.float64)
                if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
                    raise ValueError(f"category {cat}: polygons need >= 3 (x, y) vertices")
                entries.append(arr)
            polys[cat] = entries
        unknown = set(self.polygons) - set(self.categories)
        if unknown:
            raise ValueError(f"polygons for unknown categories: {sorted(unknown)}")
        object.__setattr__(self, "polygons", polys)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def transformed(self, pose: EgoPose) -> "SemanticMap":
        """The same map with every vertex mapped through an SE(2) pose."""
        return SemanticMap(
            self.categories,
            {
                cat: [transform_points(pose, p) for p in polys]
                for cat, polys in self.polygons.items()
            },
        )

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "polygons": {
                cat: [p.tolist() for p in self.polygons[cat]] for cat in self.categories
            },
        }

    @staticmethod
    def from_dict(doc: dict) -> "SemanticMap":
        return SemanticMap(
            tuple(doc["categories"]),
            {cat: [np.asarray(p) for p in ps] for cat, ps in doc["polygons"].items()},
        )

    @staticmethod
    def from_json(path) -> "SemanticMap":
        with open(path) as f:
            return SemanticMap.from_dict(json.load(f))


@dataclass
class MapRaster:
    """N boolean channel planes over a regular cell grid."""

    channels: np.ndarray  # (N, H, W) bool
    resolution: float
    origin: tuple[float, float]
    categories: tuple[str, ...] | None = None
    degenerate_skipped: int = 0

    def __post_init__(self):
        if self.channels.ndim != 3:
            raise ValueError("channels must be (N, H, W)")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[1:]

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (self.origin[0] + col * self.resolution, self.origin[1] + row * self.resolution)


@dataclass
class MapTile:
    """A map raster cropped around a localization prior."""

    raster: MapRaster
    prior: EgoPose

    @property
    def side_cells(self) -> int:
        return self.raster.shape[0]


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd inclusion test for (..., 2) points; boundary unspecified."""
    pts = np.asarray(points, dtype=np.float64)
    px = pts[..., 0]
    py = pts[..., 1]
    inside = np.zeros(px.shape, dtype=bool)
    box = (
        (px >= poly[:, 0].min())
        & (px <= poly[:, 0].max())
        & (py >= poly[:, 1].min())
        & (py <= poly[:, 1].max())
    )
    if not box.any():
        return inside
    px = px[box]
    py = py[box]
    hit = np.zeros(px.shape, dtype=bool)
    n = poly.shape[0]
    for e in range(n):
        ax, ay = poly[e]
        bx, by = poly[(e + 1) % n]
        if ay == by:
            continue
        cond = ((ay <= py) & (py < by)) | ((by <= py) & (py < ay))
        xc = ax + (py - ay) * (bx - ax) / (by - ay)
        hit ^= cond & (px < xc)
    inside[box] = hit
    return inside


def points_in_polygon_inclusive(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd inclusion with points exactly on an edge counted inside.

    Matches the rasterizer's boundary tie-break, so cell-center queries
    agree with scanline fills.
    """
    pts = np.asarray(points, dtype=np.float64)
    px = pts[..., 0]
    py = pts[..., 1]
    out = np.zeros(px.shape, dtype=bool)
    box = (
        (px >= poly[:, 0].min())
        & (px <= poly[:, 0].max())
        & (py >= poly[:, 1].min())
        & (py <= poly[:, 1].max())
    )
    if not box.any():
        return out
    px = px[box]
    py = py[box]
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = poly.shape[0]
    for e in range(n):
        ax, ay = poly[e]
        bx, by = poly[(e + 1) % n]
        lox, hix = (ax, bx) if ax <= bx else (bx, ax)
        loy, hiy = (ay, by) if ay <= by else (by, ay)
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        on_edge |= (cross == 0.0) & (px >= lox) & (px <= hix) & (py >= loy) & (py <= hiy)
        if ay == by:
            continue
        cond = ((ay <= py) & (py < by)) | ((by <= py) & (py < ay))
        xc = ax + (py - ay) * (bx - ax) / (by - ay)
        # <= keeps the left member of each crossing pair inside, mirroring
        # the scanline's inclusive intervals; the right member is covered
        # by the exact on-edge test.
        inside ^= cond & (px <= xc)
    out[box] = inside | on_edge
    return out


def rasterize_onto(
    smap: SemanticMap,
    origin: tuple[float, float],
    shape: tuple[int, int],
    resolution: float,
) -> MapRaster:
    """Rasterize all categories onto a grid given by origin/shape/resolution.

    A cell is set iff its center is inside any polygon of the category
    (even-odd rule, boundary centers inside). Zero-area polygons are
    skipped and counted in `degenerate_skipped`.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    h, w = shape
    channels = np.zeros((smap.n_categories, h, w), dtype=np.uint8)
    skipped = 0
    for ci, cat in enumerate(smap.categories):
        for poly in smap.polygons[cat]:
            if polygon_area(poly) == 0.0:
                skipped += 1
                continue
            _kernels.fill_polygon(
                channels[ci], np.ascontiguousarray(poly), origin[0], origin[1], resolution
            )
    if skipped:
        logger.warning("rasterize: skipped %d degenerate polygon(s)", skipped)
    return MapRaster(
        channels.astype(bool),
        resolution,
        (float(origin[0]), float(origin[1])),
        categories=smap.categories,
        degenerate_skipped=skipped,
    )


def rasterize(smap: SemanticMap, bounds, resolution: float) -> MapRaster:
    """Rasterize within a (xmin, ymin, xmax, ymax) rectangle.

    Cell (0, 0) spans the rectangle corner; its center sits half a cell in.
    """
    xmin, ymin, xmax, ymax = bounds
    if xmax <= xmin or ymax <= ymin:
        raise ValueError("bounds must be a nonempty rectangle")
    w = int(round((xmax - xmin) / resolution))
    h = int(round((ymax - ymin) / resolution))
    if w < 1 or h < 1:
        raise ValueError("bounds smaller than one cell")
    origin = (xmin + resolution / 2.0, ymin + resolution / 2.0)
    return rasterize_onto(smap, origin, (h, w), resolution)


def crop_tile(smap: SemanticMap, prior: EgoPose, side: float, resolution: float) -> MapTile:
    """An axis-aligned L x L x N tile centered on the prior position.

    L = round(side / resolution); regions outside the map rasterize to
    zero. The tile center coincides with the prior within half a cell.
    """
    if side <= 0:
        raise ValueError("tile side must be positive")
    n = int(round(side / resolution))
    half = (n - 1) / 2.0 * resolution
    origin = (prior.x - half, prior.y - half)
    raster = rasterize_onto(smap, origin, (n, n), resolution)
    return MapTile(raster, prior)


def save_raster(raster: MapRaster, path) -> None:
    """Write a raster as .smr (categories are not persisted)."""
    formats.write_bool_raster(path, raster.channels, raster.resolution, raster.origin)


def load_raster(path) -> MapRaster:
    channels, res, origin = formats.read_bool_raster(path)
    return MapRaster(channels, res, origin)
