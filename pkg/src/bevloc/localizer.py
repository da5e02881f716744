"""Template-matching relocalization: encode the BEV and a prior-centered
map tile, slide one over the other with masked cosine correlation, and
read out a continuous pose via softmax + soft-argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import ndimage

from . import _kernels
from .bev import BevGrid, BevSpec, build_bev
from .geometry import CameraRig, EgoPose
from .semantic_map import MapTile, SemanticMap, crop_tile
from .synthworld import SurroundObservation

__all__ = [
    "ENCODERS",
    "encode",
    "match_template",
    "softmax2d",
    "soft_argmax",
    "perturb",
    "align_bev_to_map",
    "LocalizeConfig",
    "LocalizationResult",
    "ProbabilityMap",
    "SimilarityMap",
    "localize",
]


# ---------------------------------------------------------------------------
# encoders


def _encode_identity(channels, cell_size):
    return channels.astype(np.float64, copy=True)


_PYRAMID_SIZES = (1, 3, 7)


def _encode_pyramid(channels, cell_size):
    """Box-filtered multi-scale stack; stride-2 block average."""
    levels = []
    for size in _PYRAMID_SIZES:
        if size == 1:
            levels.append(channels.astype(np.float64))
        else:
            levels.append(
                np.stack(
                    [ndimage.uniform_filter(ch, size, mode="nearest") for ch in channels]
                )
            )
    stack = np.concatenate(levels, axis=0)
    c, h, w = stack.shape
    h2, w2 = h // 2, w // 2
    pooled = stack[:, : h2 * 2, : w2 * 2].reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))
    return pooled


_DISTANCE_CLAMP = 10.0  # meters


def _encode_distance(channels, cell_size):
    """Per-channel signed distance (positive outside, negative inside),
    clamped to +-10 m. Empty channels saturate at +10."""
    out = np.empty_like(channels, dtype=np.float64)
    for i, ch in enumerate(channels):
        inside = ch >= 0.5
        if not inside.any():
            out[i] = _DISTANCE_CLAMP
            continue
        d_out = ndimage.distance_transform_edt(~inside) * cell_size
        d_in = ndimage.distance_transform_edt(inside) * cell_size
        out[i] = np.clip(d_out - d_in, -_DISTANCE_CLAMP, _DISTANCE_CLAMP)
    return out


# name -> (fn, stride)
ENCODERS = {
    "identity": (_encode_identity, 1),
    "pyramid": (_encode_pyramid, 2),
    "distance": (_encode_distance, 1),
}


def encode(channels: np.ndarray, mask: np.ndarray | None, name: str, cell_size: float = 1.0):
    """Apply a named deterministic raster encoder.

    Returns (features (C', H', W'), mask (H', W') or None, stride).
    Stride-s encoders pool the mask with "fully observed block" semantics.
    """
    if name not in ENCODERS:
        raise KeyError(f"unknown encoder {name!r}; choose from {sorted(ENCODERS)}")
    fn, stride = ENCODERS[name]
    ch = np.asarray(channels, dtype=np.float64)
    if ch.ndim != 3 or ch.shape[1] < 1 or ch.shape[2] < 1:
        raise ValueError("encoder input must be a nonempty (C, H, W) raster")
    feat = fn(ch, cell_size)
    out_mask = None
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if stride > 1:
            h2, w2 = m.shape[0] // stride, m.shape[1] // stride
            m = m[: h2 * stride, : w2 * stride]
            m = m.reshape(h2, stride, w2, stride).all(axis=(1, 3))
        out_mask = m
    return feat, out_mask, stride


# ---------------------------------------------------------------------------
# matching


@dataclass
class SimilarityMap:
    """Valid-mode masked cosine scores plus index -> map-frame metadata."""

    scores: np.ndarray  # (A, B), A along rows/y, B along cols/x
    stride: int = 1
    raw_resolution: float = 1.0
    tile_origin: tuple[float, float] = (0.0, 0.0)
    template_center: tuple[float, float] = (0.0, 0.0)  # raw tile cells (r, c)

    def offset_to_xy(self, i: float, j: float) -> tuple[float, float]:
        """Map a (possibly fractional) offset index to map-frame meters of
        the template center placed at that offset."""
        r = i * self.stride + self.template_center[0]
        c = j * self.stride + self.template_center[1]
        return (
            self.tile_origin[0] + c * self.raw_resolution,
            self.tile_origin[1] + r * self.raw_resolution,
        )


def match_template(
    bev_feat: np.ndarray,
    bev_mask: np.ndarray | None,
    tile_feat: np.ndarray,
    *,
    stride: int = 1,
    raw_resolution: float = 1.0,
    tile_origin: tuple[float, float] = (0.0, 0.0),
    template_center: tuple[float, float] = (0.0, 0.0),
) -> SimilarityMap:
    """Masked cosine similarity of the BEV against every valid tile window.

    score(i, j) = <bev * mask, window(i, j)> normalized by both masked
    norms; offsets with an empty norm score 0. Computed with FFT
    correlations (exhaustive over all valid offsets); the direct-sum
    kernel (`_kernels.masked_corr`) is its oracle twin.
    """
    bf = np.asarray(bev_feat, dtype=np.float64)
    tf = np.asarray(tile_feat, dtype=np.float64)
    if bf.ndim != 3 or tf.ndim != 3 or bf.shape[0] != tf.shape[0]:
        raise ValueError("feature grids must be (C, H, W) with matching channels")
    if bf.shape[1] > tf.shape[1] or bf.shape[2] > tf.shape[2]:
        raise ValueError("BEV feature grid is larger than the tile")
    mask = np.ones(bf.shape[1:]) if bev_mask is None else bev_mask.astype(np.float64)
    if mask.shape != bf.shape[1:]:
        raise ValueError("mask shape must match the BEV feature grid")
    scores = _kernels.masked_corr_fft(tf, bf, mask)
    return SimilarityMap(scores, stride, raw_resolution, tile_origin, template_center)


@dataclass
class ProbabilityMap:
    probs: np.ndarray
    temperature: float


def softmax2d(scores: np.ndarray, temperature: float = 1.0) -> ProbabilityMap:
    """Stabilized 2D softmax; the result sums to 1 within 1e-9."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = np.asarray(scores, dtype=np.float64)
    z = np.exp((s - s.max()) / temperature)
    return ProbabilityMap(z / z.sum(), temperature)


def soft_argmax(prob) -> tuple[float, float]:
    """Probability-weighted mean index (row, col) of a normalized map."""
    p = prob.probs if isinstance(prob, ProbabilityMap) else np.asarray(prob)
    rows = p.sum(axis=1) @ np.arange(p.shape[0], dtype=np.float64)
    cols = p.sum(axis=0) @ np.arange(p.shape[1], dtype=np.float64)
    return float(rows), float(cols)


def perturb(pose: EgoPose, rng: np.random.Generator, r_max: float = 100.0) -> EgoPose:
    """Offset a pose by a uniform direction and uniform [0, r_max] radius;
    heading is kept."""
    if r_max < 0:
        raise ValueError("r_max must be >= 0")
    theta = rng.uniform(0.0, math.tau)
    r = rng.uniform(0.0, r_max)
    return EgoPose(pose.x + r * math.cos(theta), pose.y + r * math.sin(theta), pose.yaw)


# ---------------------------------------------------------------------------
# full pipeline


def align_bev_to_map(bev: BevGrid, yaw: float, out_resolution: float):
    """Resample an ego-frame BEV into a map-axis-aligned raster.

    The output keeps the BEV's metric side (rotated corners that fall
    outside the source square become unobserved) and is sampled at the
    tile resolution so correlation offsets are tile cells.

    Returns (channels (C, S', S'), mask (S', S'), center_index).
    """
    sb = bev.spec.size
    s_out = int(math.floor(bev.spec.side / out_resolution + 1e-9))
    ctr = (s_out - 1) / 2.0
    c, s_ = math.cos(-yaw), math.sin(-yaw)
    idx = np.arange(s_out, dtype=np.float64)
    dx = (idx[None, :] - ctr) * out_resolution  # map-frame x offsets (cols)
    dy = (idx[:, None] - ctr) * out_resolution  # map-frame y offsets (rows)
    ex = c * dx - s_ * dy  # ego-frame offsets
    ey = s_ * dx + c * dy
    src_c = ex / bev.spec.resolution + (sb - 1) / 2.0
    src_r = ey / bev.spec.resolution + (sb - 1) / 2.0

    valid = (src_c >= 0) & (src_c <= sb - 1) & (src_r >= 0) & (src_r <= sb - 1)
    c0 = np.clip(np.floor(src_c), 0, sb - 2).astype(np.intp)
    r0 = np.clip(np.floor(src_r), 0, sb - 2).astype(np.intp)
    fc = np.clip(src_c - c0, 0.0, 1.0)
    fr = np.clip(src_r - r0, 0.0, 1.0)
    w00 = (1 - fc) * (1 - fr)
    w01 = fc * (1 - fr)
    w10 = (1 - fc) * fr
    w11 = fc * fr

    def sample(plane):
        return (
            w00 * plane[r0, c0]
            + w01 * plane[r0, c0 + 1]
            + w10 * plane[r0 + 1, c0]
            + w11 * plane[r0 + 1, c0 + 1]
        )

    n_ch = bev.scores.shape[2]
    out = np.zeros((n_ch, s_out, s_out))
    for ch in range(n_ch):
        out[ch] = np.where(valid, sample(bev.scores[:, :, ch]), 0.0)
    mfloat = sample(bev.mask.astype(np.float64))
    mask = valid & (mfloat >= 1.0 - 1e-9)
    out *= mask
    return out, mask, ctr


@dataclass(frozen=True)
class LocalizeConfig:
    """Knobs of the relocalization pipeline (JSON-configurable)."""

    encoder: str = "identity"
    temperature: float = 1.0
    tile_side: float = 300.0
    tile_resolution: float = 0.3
    bev: BevSpec = field(default_factory=BevSpec)
    rotation_sweep: bool = False
    sweep_half_range_deg: float = 3.0
    sweep_steps: int = 5
    keep_probability_map: bool = False

    @staticmethod
    def from_dict(doc: dict) -> "LocalizeConfig":
        doc = dict(doc)
        bev_doc = doc.pop("bev", None)
        known = {f.name for f in fields(LocalizeConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown localizer config keys: {sorted(unknown)}")
        cfg = LocalizeConfig(**doc)
        if bev_doc is not None:
            bev_known = {f.name for f in fields(BevSpec)}
            bad = set(bev_doc) - bev_known
            if bad:
                raise ValueError(f"unknown bev config keys: {sorted(bad)}")
            if "bins" in bev_doc:
                bev_doc = dict(bev_doc, bins=tuple(bev_doc["bins"]))
            cfg = replace(cfg, bev=BevSpec(**bev_doc))
        return cfg


@dataclass
class LocalizationResult:
    pose: EgoPose
    peak: tuple[float, float]  # continuous (row, col) in the similarity map
    peak_probability: float
    argmax: tuple[int, int]
    argmax_xy: tuple[float, float]
    prior: EgoPose
    probability_map: ProbabilityMap | None = None
    similarity: SimilarityMap | None = None


def _single_match(aligned, amask, tile, cfg):
    res = cfg.tile_resolution
    ctr_idx = (aligned.shape[1] - 1) / 2.0
    bev_f, bev_m, stride = encode(aligned, amask, cfg.encoder, cell_size=res)
    tile_f, _, _ = encode(tile.raster.channels.astype(np.float64), None, cfg.encoder, cell_size=res)
    if bev_f.shape[1] > tile_f.shape[1] or bev_f.shape[2] > tile_f.shape[2]:
        raise ValueError("encoded BEV is larger than the encoded map tile")
    return match_template(
        bev_f,
        bev_m,
        tile_f,
        stride=stride,
        raw_resolution=res,
        tile_origin=tile.raster.origin,
        template_center=(ctr_idx, ctr_idx),
    )


def localize(
    observation,
    smap: SemanticMap,
    prior,
    cfg: LocalizeConfig = LocalizeConfig(),
    rig: CameraRig | None = None,
    kernels=None,
) -> LocalizationResult:
    """One-shot relocalization of a BEV (or surround observation) against
    a semantic map around a pose prior.

    Pipeline: build/accept the BEV, rotate it into map-axis alignment by
    -prior.yaw, crop the tile, encode both, correlate, softmax,
    soft-argmax, and convert the continuous offset back to map meters.
    The prior heading is trusted unless the rotation sweep is enabled.
    """
    if not isinstance(prior, EgoPose):
        raise ValueError("prior must be an EgoPose with a heading")
    if isinstance(observation, SurroundObservation):
        if rig is None:
            raise ValueError("localizing from raw observations requires the camera rig")
        bev = build_bev(observation, rig, cfg.bev, kernels=kernels)
    elif isinstance(observation, BevGrid):
        bev = observation
    else:
        raise TypeError("observation must be a BevGrid or SurroundObservation")

    tile = crop_tile(smap, prior, cfg.tile_side, cfg.tile_resolution)

    if cfg.rotation_sweep and cfg.sweep_steps > 1:
        offsets = np.linspace(
            -math.radians(cfg.sweep_half_range_deg),
            math.radians(cfg.sweep_half_range_deg),
            cfg.sweep_steps,
        )
    else:
        offsets = np.array([0.0])

    best = None
    best_yaw = prior.yaw
    for dyaw in offsets:
        aligned, amask, _ = align_bev_to_map(bev, prior.yaw + dyaw, cfg.tile_resolution)
        sim = _single_match(aligned, amask, tile, cfg)
        if best is None or sim.scores.max() > best.scores.max():
            best = sim
            best_yaw = prior.yaw + dyaw

    prob = softmax2d(best.scores, cfg.temperature)
    pi, pj = soft_argmax(prob)
    x, y = best.offset_to_xy(pi, pj)
    ai, aj = np.unravel_index(int(np.argmax(best.scores)), best.scores.shape)
    return LocalizationResult(
        pose=EgoPose(x, y, best_yaw),
        peak=(pi, pj),
        peak_probability=float(prob.probs.max()),
        argmax=(int(ai), int(aj)),
        argmax_xy=best.offset_to_xy(int(ai), int(aj)),
        prior=prior,
        probability_map=prob if cfg.keep_probability_map else None,
        similarity=best if cfg.keep_probability_map else None,
    )
