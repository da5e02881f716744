"""Height-layered BEV projection: splat per-camera features into an
occupancy volume via the plane-lifted inverse projective mapping, then
flatten to a single semantic grid.

BEV rasters are ego-centered: cell (r, c) sits at
``x = (c - (S-1)/2) * res`` (forward), ``y = (r - (S-1)/2) * res`` (left).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Camera, CameraRig, EgoPose, transform_points
from .semantic_map import points_in_polygon_inclusive
from .synthworld import (
    CATEGORIES,
    CATEGORY_IMPLIES,
    DEFAULT_BINS,
    SurroundObservation,
    World,
    height_to_distribution,
)

__all__ = [
    "BevSpec",
    "OccupancyVolume",
    "BevGrid",
    "project_to_volume",
    "flatten_volume",
    "observation_features",
    "build_bev",
    "oracle_bev",
]


@dataclass(frozen=True)
class BevSpec:
    """Geometry of the BEV grid and the height bins used for projection."""

    side: float = 100.0
    resolution: float = 0.5
    bins: tuple[float, ...] = DEFAULT_BINS

    def __post_init__(self):
        if self.resolution <= 0 or self.side <= 0:
            raise ValueError("side and resolution must be positive")
        n = self.side / self.resolution
        if abs(n - round(n)) > 1e-9:
            raise ValueError("side must be an integer number of cells")
        b = np.asarray(self.bins, dtype=np.float64)
        if b.size < 1 or (b.size > 1 and not np.all(np.diff(b) > 0)):
            raise ValueError("bins must be strictly increasing")
        object.__setattr__(self, "bins", tuple(float(x) for x in self.bins))

    @property
    def size(self) -> int:
        return int(round(self.side / self.resolution))

    @property
    def origin(self) -> float:
        """Ego coordinate of cell (0, 0) center (same for x and y)."""
        return -(self.size - 1) / 2.0 * self.resolution


@dataclass
class OccupancyVolume:
    """Accumulated feature mass and weights per cell and height bin."""

    feat: np.ndarray  # (S, S, K, C)
    weight: np.ndarray  # (S, S, K)
    spec: BevSpec


@dataclass
class BevGrid:
    """Flattened BEV scores with the camera-observability mask."""

    scores: np.ndarray  # (S, S, C)
    mask: np.ndarray  # (S, S) bool
    spec: BevSpec

    def __post_init__(self):
        if self.scores.shape[:2] != self.mask.shape:
            raise ValueError("scores and mask disagree on grid shape")


def _scaled_projection_matrices(cam: Camera, feat_shape, bins) -> np.ndarray:
    """Per-bin reduced 3x3 matrices mapping ego (x, y, 1) to feature-grid
    pixels, folding in any feature-vs-native resolution difference.

    A feature grid downsampled by block-averaging factor m has pixel j
    centered at native coordinate j*m + (m-1)/2, i.e. u_f = u/m - (m-1)/(2m).
    """
    hf, wf = feat_shape
    k = cam.intrinsics.matrix()
    su = wf / cam.intrinsics.width
    sv = hf / cam.intrinsics.height
    scale = np.array(
        [[su, 0.0, (su - 1.0) / 2.0], [0.0, sv, (sv - 1.0) / 2.0], [0.0, 0.0, 1.0]]
    )
    m = scale @ k @ cam.extrinsics.matrix()  # (3, 4)
    mats = np.empty((len(bins), 3, 3))
    for i, h in enumerate(bins):
        mats[i, :, 0] = m[:, 0]
        mats[i, :, 1] = m[:, 1]
        mats[i, :, 2] = m[:, 2] * h + m[:, 3]
    return mats


def project_to_volume(
    features,
    hdists,
    rig: CameraRig,
    spec: BevSpec,
    kernels=None,
) -> OccupancyVolume:
    """Splat per-camera features into the height-layered occupancy volume.

    For every cell center, bin height, and camera (in rig order), the cell
    is projected into the image; when it lands inside with positive depth,
    the bilinearly sampled feature weighted by the sampled height
    likelihood accumulates into the volume.

    Parameters
    ----------
    features : sequence of (H, W, C) arrays, one per camera in rig order.
        Dims may differ from the native image size (pyramid path); the
        intrinsics are rescaled accordingly.
    hdists : sequence of (H, W, K) height distributions, K = len(bins).
    kernels : optional backend module override (benchmarks/tests).
    """
    k = kernels if kernels is not None else _kernels
    if len(features) != len(rig) or len(hdists) != len(rig):
        raise ValueError("need one feature image and one height distribution per camera")
    s = spec.size
    n_bins = len(spec.bins)
    n_ch = features[0].shape[2]
    vol = np.zeros((s, s, n_bins, n_ch))
    wgt = np.zeros((s, s, n_bins))
    o = spec.origin
    for cam, feat, hd in zip(rig, features, hdists):
        feat = np.ascontiguousarray(feat, dtype=np.float64)
        hd = np.ascontiguousarray(hd, dtype=np.float64)
        if feat.shape[:2] != hd.shape[:2]:
            raise ValueError(f"{cam.name}: feature and height dims differ")
        if feat.shape[2] != n_ch or hd.shape[2] != n_bins:
            raise ValueError(f"{cam.name}: channel/bin counts differ across cameras")
        if feat.shape[0] < 2 or feat.shape[1] < 2:
            raise ValueError("feature images must be at least 2x2 for bilinear sampling")
        mats = _scaled_projection_matrices(cam, feat.shape[:2], spec.bins)
        k.splat_volume(vol, wgt, feat, hd, mats, o, o, spec.resolution)
    return OccupancyVolume(vol, wgt, spec)


def flatten_volume(vol: OccupancyVolume) -> BevGrid:
    """Weight-normalized reduction over the height bins.

    score(cell, ch) = sum_k feat / sum_k weight where any weight exists,
    else 0; the mask marks cells with nonzero accumulated weight.
    """
    wsum = vol.weight.sum(axis=2)
    fsum = vol.feat.sum(axis=2)
    mask = wsum > 0.0
    scores = np.zeros_like(fsum)
    np.divide(fsum, wsum[..., None], out=scores, where=mask[..., None])
    return BevGrid(scores, mask, vol.spec)


def observation_features(obs: SurroundObservation, bins=DEFAULT_BINS):
    """One-hot semantic features and height distributions from a rendered
    observation (the oracle stand-in for learned features).

    No-surface pixels get zero feature rows and zero height mass.
    Overlapping categories of the generated worlds (crossings lie on
    drivable surface) lift to multi-hot rows.
    """
    n = obs.n_categories
    lut = np.eye(n + 1, n)  # the none row is all zero
    if n == len(CATEGORIES):
        for src, dsts in CATEGORY_IMPLIES.items():
            for dst in dsts:
                lut[CATEGORIES.index(src), CATEGORIES.index(dst)] = 1.0
    feats = [lut[sem] for sem in obs.semantic]
    hds = [height_to_distribution(hgt, bins) for hgt in obs.height]
    return feats, hds


def build_bev(
    obs: SurroundObservation, rig: CameraRig, spec: BevSpec, kernels=None
) -> BevGrid:
    """Oracle-feature pipeline: observation -> volume -> flattened grid."""
    feats, hds = observation_features(obs, spec.bins)
    return flatten_volume(project_to_volume(feats, hds, rig, spec, kernels=kernels))


def oracle_bev(world: World, pose: EgoPose, spec: BevSpec) -> BevGrid:
    """Ground-truth BEV: top-down rasterization of the world's map in the
    ego frame at `pose`, observability mask all true.

    Computed by transforming cell centers into the map frame and running
    the inclusive point-in-polygon test per category (an independent route
    from the scanline rasterizer).
    """
    s = spec.size
    o = spec.origin
    coords = o + np.arange(s) * spec.resolution
    xx, yy = np.meshgrid(coords, coords)  # rows <-> y, cols <-> x
    pts_ego = np.stack([xx, yy], axis=-1)
    pts_map = transform_points(pose, pts_ego)
    n = world.smap.n_categories
    scores = np.zeros((s, s, n))
    for ci, cat in enumerate(world.smap.categories):
        acc = np.zeros((s, s), dtype=bool)
        for poly in world.smap.polygons[cat]:
            acc |= points_in_polygon_inclusive(pts_map, poly)
        scores[:, :, ci] = acc
    return BevGrid(scores, np.ones((s, s), dtype=bool), spec)
