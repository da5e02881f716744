"""Metrics (IoU, recall accuracy) and the seeded Monte Carlo
relocalization experiment harness.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bev import BevGrid, build_bev, oracle_bev
from .geometry import CameraRig, surround_rig
from .localizer import LocalizeConfig, localize, perturb
from .synthworld import WorldSpec, generate_world, render_surround, sample_pose

logger = logging.getLogger(__name__)

__all__ = [
    "IoUEntry",
    "IoUReport",
    "RecallReport",
    "ExperimentConfig",
    "TrialRecord",
    "ExperimentResult",
    "iou",
    "iou_report",
    "recall_accuracy",
    "run_experiment",
    "write_csv",
    "CSV_COLUMNS",
]


@dataclass(frozen=True)
class IoUEntry:
    category: str
    intersection: int
    union: int

    @property
    def iou(self) -> float | None:
        """None when the union is empty (undefined, excluded from means)."""
        return None if self.union == 0 else self.intersection / self.union


@dataclass
class IoUReport:
    entries: list[IoUEntry]
    mask_policy: str

    def mean(self) -> float | None:
        vals = [e.iou for e in self.entries if e.iou is not None]
        return None if not vals else float(np.mean(vals))

    def by_category(self) -> dict:
        return {e.category: e.iou for e in self.entries}


def iou(
    pred: BevGrid,
    gt: BevGrid,
    category: int,
    mask_policy: str = "observed",
    threshold: float = 0.5,
) -> IoUEntry:
    """Channel IoU of two grids, binarized at `threshold`.

    mask_policy "observed" restricts to pred's observability mask;
    "full" uses every cell.
    """
    if pred.scores.shape != gt.scores.shape:
        raise ValueError("prediction and ground truth shapes differ")
    if mask_policy not in ("observed", "full"):
        raise ValueError("mask policy must be 'observed' or 'full'")
    p = pred.scores[:, :, category] >= threshold
    g = gt.scores[:, :, category] >= threshold
    if mask_policy == "observed":
        m = pred.mask
        p = p & m
        g = g & m
    inter = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p | g))
    name = f"channel{category}"
    return IoUEntry(name, inter, union)


def iou_report(pred: BevGrid, gt: BevGrid, categories, mask_policy="observed", threshold=0.5) -> IoUReport:
    entries = []
    for ci, name in enumerate(categories):
        e = iou(pred, gt, ci, mask_policy, threshold)
        entries.append(IoUEntry(name, e.intersection, e.union))
    return IoUReport(entries, mask_policy)


@dataclass
class RecallReport:
    thresholds: tuple[float, ...]
    recall: tuple[float, ...]
    count: int
    quantiles: dict

    def as_dict(self) -> dict:
        return {
            "thresholds_m": list(self.thresholds),
            "recall": list(self.recall),
            "count": self.count,
            "error_quantiles_m": self.quantiles,
        }


def recall_accuracy(errors, thresholds=(1.0, 2.0, 5.0, 10.0)) -> RecallReport:
    """Fraction of errors at or below each threshold.

    Infinite errors (failed trials) count as misses at every threshold;
    negative or NaN errors are rejected.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("cannot compute recall from an empty error list")
    if np.any(np.isnan(e)) or np.any(e < 0):
        raise ValueError("errors must be nonnegative and not NaN")
    rec = tuple(float(np.count_nonzero(e <= t)) / e.size for t in thresholds)
    finite = e[np.isfinite(e)]
    qs = {}
    if finite.size:
        qs = {
            "p50": float(np.quantile(finite, 0.5)),
            "p90": float(np.quantile(finite, 0.9)),
            "max": float(finite.max()),
        }
    return RecallReport(tuple(thresholds), rec, int(e.size), qs)


@dataclass(frozen=True)
class ExperimentConfig:
    """A reproducible relocalization experiment.

    Every trial derives its own random stream from (master_seed, trial),
    so results do not depend on scheduling or thread count.
    """

    master_seed: int = 0
    trials: int = 20
    world: WorldSpec = field(default_factory=WorldSpec)
    localizer: LocalizeConfig = field(default_factory=LocalizeConfig)
    use_oracle_bev: bool = True
    rig: dict | None = None  # surround_rig kwargs when rendering
    r_max: float = 100.0
    thresholds: tuple[float, ...] = (1.0, 2.0, 5.0, 10.0)
    pose_margin: float = 60.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if not self.use_oracle_bev and self.rig is None:
            raise ValueError("rendering experiments need rig parameters")

    def build_rig(self) -> CameraRig | None:
        return None if self.rig is None else surround_rig(**self.rig)

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        if "world" in doc:
            wk = {f.name for f in fields(WorldSpec)}
            bad = set(doc["world"]) - wk
            if bad:
                raise ValueError(f"unknown world config keys: {sorted(bad)}")
            w = dict(doc["world"])
            for key in ("building_height_range", "road_width_range"):
                if key in w:
                    w[key] = tuple(w[key])
            doc["world"] = WorldSpec(**w)
        if "localizer" in doc:
            doc["localizer"] = LocalizeConfig.from_dict(doc["localizer"])
        if "thresholds" in doc:
            doc["thresholds"] = tuple(doc["thresholds"])
        return ExperimentConfig(**doc)


@dataclass
class TrialRecord:
    trial: int
    seed: int
    true_x: float
    true_y: float
    prior_x: float
    prior_y: float
    est_x: float
    est_y: float
    error_m: float
    peak_prob: float
    wall_ms: float
    ok: bool = True
    iou_by_category: dict | None = None


CSV_COLUMNS = (
    "trial",
    "seed",
    "true_x",
    "true_y",
    "prior_x",
    "prior_y",
    "est_x",
    "est_y",
    "error_m",
    "peak_prob",
    "wall_ms",
)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[TrialRecord]
    recall: RecallReport
    iou_means: dict | None

    def summary(self) -> dict:
        failures = sum(1 for r in self.records if not r.ok)
        walls = sorted(r.wall_ms for r in self.records)
        out = {
            "trials": len(self.records),
            "failures": failures,
            "recall_accuracy": self.recall.as_dict(),
            "median_wall_ms": walls[len(walls) // 2] if walls else None,
        }
        if self.iou_means is not None:
            out["iou_means"] = self.iou_means
        return out


def _run_trial(cfg: ExperimentConfig, rig, index: int) -> TrialRecord:
    ss = np.random.SeedSequence(entropy=cfg.master_seed, spawn_key=(index,))
    rng = np.random.default_rng(ss)
    world_seed = int(rng.integers(0, 2**31 - 1))
    world = generate_world(replace(cfg.world, seed=world_seed))
    pose = sample_pose(world, rng, margin=cfg.pose_margin)
    prior = perturb(pose, rng, cfg.r_max)

    t0 = time.perf_counter()
    iou_by_cat = None
    if cfg.use_oracle_bev:
        bev = oracle_bev(world, pose, cfg.localizer.bev)
    else:
        obs = render_surround(world, rig, pose)
        bev = build_bev(obs, rig, cfg.localizer.bev)
        gt = oracle_bev(world, pose, cfg.localizer.bev)
        rep = iou_report(bev, gt, world.smap.categories)
        iou_by_cat = rep.by_category()
    res = localize(bev, world.smap, prior, cfg.localizer)
    wall_ms = (time.perf_counter() - t0) * 1e3

    err = math.hypot(res.pose.x - pose.x, res.pose.y - pose.y)
    return TrialRecord(
        trial=index,
        seed=world_seed,
        true_x=pose.x,
        true_y=pose.y,
        prior_x=prior.x,
        prior_y=prior.y,
        est_x=res.pose.x,
        est_y=res.pose.y,
        error_m=err,
        peak_prob=res.peak_probability,
        wall_ms=wall_ms,
        iou_by_category=iou_by_cat,
    )


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> ExperimentResult:
    """Run all trials (optionally in parallel), aggregate metrics, and
    write per-trial CSV plus a summary JSON when out_dir is given.

    Failed trials are recorded with infinite error (counted as misses),
    never dropped.
    """
    rig = cfg.build_rig()

    def safe(index: int) -> TrialRecord:
        t0 = time.perf_counter()
        try:
            return _run_trial(cfg, rig, index)
        except Exception:
            logger.exception("trial %d failed", index)
            return TrialRecord(
                trial=index,
                seed=-1,
                true_x=math.nan,
                true_y=math.nan,
                prior_x=math.nan,
                prior_y=math.nan,
                est_x=math.nan,
                est_y=math.nan,
                error_m=math.inf,
                peak_prob=0.0,
                wall_ms=(time.perf_counter() - t0) * 1e3,
                ok=False,
            )

    indices = range(cfg.trials)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(safe, indices))
    else:
        records = [safe(i) for i in indices]

    recall = recall_accuracy([r.error_m for r in records], cfg.thresholds)
    iou_means = None
    per_cat: dict[str, list[float]] = {}
    for r in records:
        if r.iou_by_category:
            for cat, v in r.iou_by_category.items():
                if v is not None:
                    per_cat.setdefault(cat, []).append(v)
    if per_cat:
        iou_means = {cat: float(np.mean(vs)) for cat, vs in per_cat.items()}

    result = ExperimentResult(cfg, records, recall, iou_means)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(records, out / "trials.csv")
        (out / "summary.json").write_text(json.dumps(result.summary(), indent=2) + "\n")
    return result


def write_csv(records, path) -> None:
    """Per-trial CSV; floats use repr so reruns are textually identical."""
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        cells = []
        for col in CSV_COLUMNS:
            v = getattr(r, col)
            cells.append(str(v) if isinstance(v, int) else repr(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
