"""Experiment protocols and their reports.

Every protocol walks a suite of seeded scenes (:func:`fixture.fixture_suite`)
and produces one record per scene and arm (and per trial where an arm has
several).  A scene counts as attacked when the top-1 score of the patched
image is at most ``s_thr``.  Arms of one experiment always share the scene,
so comparisons between them are paired.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from ..aggreg import aggregation_map
from ..imgcore import compose_adversarial
from ..optim import CONVERGED, HISTORY_COLUMNS, run
from ..patchkit import binarize, connected_components, export_stencil, make_stencil
from ..pnm import write_pgm
from ..victim import generate_scene
from . import fixture
from .config import RunConfig
from .metrics import asr, compute_ap, iou

log = logging.getLogger(__name__)

SUCCESS_RULE = "attacked = top-1 score <= s_thr"

#: Shapes for the placement ablation, as gauge functions of the offset from
#: the patch centroid.  Ranking pixels by the gauge and keeping the first
#: ``area`` of them grows the shape to an exact pixel count.
CANONICAL_SHAPES: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "square": lambda dr, dc: np.maximum(np.abs(dr), np.abs(dc)),
    "horizontal_rectangle": lambda dr, dc: np.maximum(2.0 * np.abs(dr), np.abs(dc)),
    "vertical_rectangle": lambda dr, dc: np.maximum(np.abs(dr), 2.0 * np.abs(dc)),
    # apex up, base down; the three edge normals are 120 degrees apart
    "triangle": lambda dr, dc: np.maximum.reduce(
        [dr, -0.5 * dr + np.sqrt(0.75) * dc, -0.5 * dr - np.sqrt(0.75) * dc]
    ),
    "rhombus": lambda dr, dc: np.abs(dr) + np.abs(dc),
}


@dataclass(frozen=True)
class Record:
    scene_seed: int
    arm: str
    trial: int
    clean_score: float
    adv_score: float
    attacked: bool
    mask_l1: float
    agg_support: float
    agg_literal: float
    components: int
    iterations: int
    iou: float | None = None


RECORD_COLUMNS = tuple(f.name for f in fields(Record))


@dataclass
class ExperimentReport:
    command: str
    records: list[Record]
    arms: tuple[str, ...]
    extra: dict

    def __post_init__(self):
        order = {a: i for i, a in enumerate(self.arms)}
        self.records.sort(key=lambda r: (r.scene_seed, order[r.arm], r.trial))

    def arm_records(self, arm: str) -> list[Record]:
        return [r for r in self.records if r.arm == arm]

    def asr(self, arm: str) -> float:
        return asr(r.attacked for r in self.arm_records(arm))

    def mean(self, arm: str, column: str) -> float:
        vals = [getattr(r, column) for r in self.arm_records(arm)]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        out = {"command": self.command, "success_rule": SUCCESS_RULE}
        out["scenes"] = len({r.scene_seed for r in self.records})
        for arm in self.arms:
            out[f"{arm}.records"] = len(self.arm_records(arm))
            out[f"{arm}.asr"] = self.asr(arm)
        out.update(self.extra)
        return out

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in self.records:
            w.writerow(_fmt(v) for v in astuple(r))
        return buf.getvalue()

    def summary_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.summary().items())

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rec = out / f"{self.command}_records.csv"
        summ = out / f"{self.command}_summary.txt"
        rec.write_text(self.records_csv(), encoding="utf-8")
        summ.write_text(self.summary_text(), encoding="utf-8")
        return rec, summ


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


# ---------------------------------------------------------------- helpers


@dataclass
class Solved:
    x: np.ndarray
    obj: np.ndarray
    model: object
    clean_score: float
    m: np.ndarray
    x_adv: np.ndarray
    state: object


def solve(cfg: RunConfig, spec, **changes) -> Solved:
    """Generate the scene and run the optimizer on it."""
    image, obj = generate_scene(spec)
    x = np.asarray(image)
    model = cfg.model(obj > 0)
    opt = cfg.optim.replace(seed=spec.seed, **changes)
    m, x_adv, state = run(model, x, cfg["cover"], obj, opt, snapshot_every=cfg["snapshots"])
    return Solved(x, obj, model, model.score(x).top1_score, m, x_adv, state)


def _record(cfg, seed, arm, clean, adv, m, obj, comps, iters, trial=0, iou_=None) -> Record:
    agg = aggregation_map(m, obj > 0)
    return Record(
        scene_seed=seed,
        arm=arm,
        trial=trial,
        clean_score=clean,
        adv_score=adv,
        attacked=bool(adv <= cfg["s_thr"]),
        mask_l1=float(np.sum(m)),
        agg_support=agg.mean_support,
        agg_literal=agg.mean_literal,
        components=comps,
        iterations=iters,
        iou=iou_,
    )


def _ncomp(b) -> int:
    return len(connected_components(b))


def _workers(n: int) -> int:
    try:
        threads = int(os.environ.get("IRPATCH_THREADS", "1"))
    except ValueError:
        threads = 1
    return max(1, min(threads, n))


def _map_scenes(fn, cfg: RunConfig, specs) -> list:
    workers = _workers(len(specs))
    if workers == 1:
        return [fn(cfg, s) for s in specs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, [cfg] * len(specs), specs))


def suite(cfg: RunConfig, n_scenes: int | None = None):
    n = cfg["n_scenes"] if n_scenes is None else n_scenes
    return fixture.fixture_suite(n, cfg["seed"], cfg.scene, **cfg.jitter)


def shift_grid(grid: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Translate ``grid`` by ``(dr, dc)``, filling with zeros."""
    out = np.zeros_like(grid)
    h, w = grid.shape
    if abs(dr) >= h or abs(dc) >= w:
        return out
    src = grid[max(0, -dr) : h - max(0, dr), max(0, -dc) : w - max(0, dc)]
    out[max(0, dr) : max(0, dr) + src.shape[0], max(0, dc) : max(0, dc) + src.shape[1]] = src
    return out


def random_placements(patch, m_obj, n: int, rng: np.random.Generator, max_retries: int) -> list[np.ndarray]:
    """Up to ``n`` copies of ``patch`` moved to uniform random spots inside ``m_obj``.

    A candidate offset puts the patch's bounding box anywhere in the frame;
    it is kept only if every patch pixel lands on the object.  Each
    placement gets ``max_retries`` draws and is dropped if none fits.
    """
    patch = np.asarray(patch, dtype=np.float64)
    inside = np.asarray(m_obj) > 0
    rows, cols = np.nonzero(patch)
    if rows.size == 0:
        return [patch.copy() for _ in range(n)]
    r0, c0 = rows.min(), cols.min()
    h, w = rows.max() - r0 + 1, cols.max() - c0 + 1
    H, W = patch.shape
    out = []
    for k in range(n):
        for _ in range(max_retries):
            r = int(rng.integers(0, H - h + 1))
            c = int(rng.integers(0, W - w + 1))
            if inside[rows + r - r0, cols + c - c0].all():
                out.append(shift_grid(patch, int(r - r0), int(c - c0)))
                break
        else:
            log.info("placement %d: no fit inside the object after %d draws", k, max_retries)
    return out


def canonical_shape(name: str, area: int, center, m_obj) -> np.ndarray:
    """Binary shape of exactly ``area`` object pixels centred at ``center``."""
    inside = np.asarray(m_obj) > 0
    area = min(int(area), int(inside.sum()))
    r, c = np.indices(inside.shape)
    gauge = CANONICAL_SHAPES[name](r - center[0], c - center[1])
    flat = np.flatnonzero(inside)
    # stable sort keeps row-major order among equal gauge values
    chosen = flat[np.argsort(gauge.ravel()[flat], kind="stable")[:area]]
    out = np.zeros(inside.shape)
    out.ravel()[chosen] = 1.0
    return out


# ---------------------------------------------------------------- protocols

PLACEMENT_ARMS = ("optimized", "random_location", "canonical_shape", "no_patch")


def _placement_scene(cfg: RunConfig, spec) -> list[Record]:
    s = solve(cfg, spec)
    stencil = binarize(s.m, cfg.threshold)
    cover, iters = cfg["cover"], s.state.t
    score = lambda mask: s.model.score(compose_adversarial(s.x, cover, mask)).top1_score  # noqa: E731
    rec = lambda arm, mask, trial=0: _record(  # noqa: E731
        cfg, spec.seed, arm, s.clean_score, score(mask), mask, s.obj, _ncomp(mask), iters, trial
    )
    out = [rec("optimized", stencil)]
    rng = np.random.default_rng([spec.seed, 1])
    for k, moved in enumerate(random_placements(stencil, s.obj, cfg["n_random"], rng, cfg["max_retries"])):
        out.append(rec("random_location", moved, k))
    area = int(stencil.sum())
    rows, cols = np.nonzero(stencil)
    center = (rows.mean(), cols.mean()) if area else spec.blob_center
    for k, name in enumerate(CANONICAL_SHAPES):
        out.append(rec("canonical_shape", canonical_shape(name, area, center, s.obj), k))
    out.append(rec("no_patch", np.zeros_like(stencil)))
    return out


def ablate_placement(cfg: RunConfig, n_scenes: int | None = None) -> ExperimentReport:
    recs = [r for rs in _map_scenes(_placement_scene, cfg, suite(cfg, n_scenes)) for r in rs]
    extra = {"canonical_shapes": ",".join(CANONICAL_SHAPES), "n_random": cfg["n_random"]}
    return ExperimentReport("ablate-placement", recs, PLACEMENT_ARMS, extra)


LOSS_ARMS = ("attack_only", "attack_binary", "full")


def _loss_scene(cfg: RunConfig, spec) -> list[Record]:
    out = []
    for arm, changes in zip(LOSS_ARMS, ({"lambda1": 0.0, "lambda2": 0.0}, {"lambda2": 0.0}, {})):
        s = solve(cfg, spec, **changes)
        adv = s.model.score(s.x_adv).top1_score
        comps = _ncomp(binarize(s.m, cfg.threshold))
        out.append(_record(cfg, spec.seed, arm, s.clean_score, adv, s.m, s.obj, comps, s.state.t))
    return out


def ablate_losses(cfg: RunConfig, n_scenes: int | None = None) -> ExperimentReport:
    recs = [r for rs in _map_scenes(_loss_scene, cfg, suite(cfg, n_scenes)) for r in rs]
    report = ExperimentReport("ablate-losses", recs, LOSS_ARMS, {})
    for arm in LOSS_ARMS:
        report.extra[f"{arm}.agg_support"] = report.mean(arm, "agg_support")
        report.extra[f"{arm}.agg_literal"] = report.mean(arm, "agg_literal")
        report.extra[f"{arm}.components"] = report.mean(arm, "components")
    return report


DEFEND_ARMS = ("undefended", "smoothed")


def median_smooth(image, size: int) -> np.ndarray:
    return ndimage.median_filter(np.asarray(image, dtype=np.float64), size=size, mode="reflect")


def _defend_scene(cfg: RunConfig, spec) -> list[Record]:
    s = solve(cfg, spec)
    k = cfg["smooth_kernel"]
    comps = _ncomp(binarize(s.m, cfg.threshold))
    adv = s.model.score(s.x_adv).top1_score
    clean_s = s.model.score(median_smooth(s.x, k)).top1_score
    adv_s = s.model.score(median_smooth(s.x_adv, k)).top1_score
    return [
        _record(cfg, spec.seed, "undefended", s.clean_score, adv, s.m, s.obj, comps, s.state.t),
        _record(cfg, spec.seed, "smoothed", clean_s, adv_s, s.m, s.obj, comps, s.state.t),
    ]


def defend_smooth(cfg: RunConfig, n_scenes: int | None = None) -> ExperimentReport:
    recs = [r for rs in _map_scenes(_defend_scene, cfg, suite(cfg, n_scenes)) for r in rs]
    report = ExperimentReport("defend", recs, DEFEND_ARMS, {"smooth_kernel": cfg["smooth_kernel"]})
    smoothed = report.arm_records("smoothed")
    report.extra["clean_detection_rate_smoothed"] = asr(r.clean_score > cfg["s_thr"] for r in smoothed)
    return report


AP_ARMS = ("clean", "adversarial")


def _ap_scene(cfg: RunConfig, spec) -> list[Record]:
    s = solve(cfg, spec)
    gt = spec.blob_box()
    comps = _ncomp(binarize(s.m, cfg.threshold))
    out = []
    for arm, image, m in (("clean", s.x, np.zeros_like(s.m)), ("adversarial", s.x_adv, s.m)):
        dets = s.model.score(image)
        overlap = iou(dets.top1_box, gt)
        out.append(
            _record(cfg, spec.seed, arm, s.clean_score, dets.top1_score, m, s.obj, comps, s.state.t, iou_=overlap)
        )
    return out


def average_precision(records: list[Record], s_thr: float, iou_threshold: float) -> float | None:
    """AP of the top-1 detections, one ground-truth object per record.

    A detection exists when its score is above ``s_thr``; it is a true
    positive when it also overlaps the object box by ``iou_threshold``.
    """
    kept = [r for r in records if r.adv_score > s_thr]
    labels = [r.iou is not None and r.iou >= iou_threshold for r in kept]
    return compute_ap([r.adv_score for r in kept], labels, n_positives=len(records))


def eval_ap(cfg: RunConfig, n_scenes: int | None = None) -> ExperimentReport:
    recs = [r for rs in _map_scenes(_ap_scene, cfg, suite(cfg, n_scenes)) for r in rs]
    report = ExperimentReport("eval-ap", recs, AP_ARMS, {"iou_threshold": cfg["iou_threshold"]})
    for arm in AP_ARMS:
        report.extra[f"{arm}.ap"] = average_precision(report.arm_records(arm), cfg["s_thr"], cfg["iou_threshold"])
    return report


# ---------------------------------------------------------------- single run


def optimize(cfg: RunConfig, out_dir) -> tuple[Solved, dict]:
    """Run the optimizer on the configured scene and write every artifact."""
    spec = cfg.scene
    s = solve(cfg, spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "mask.pgm", s.m)
    write_pgm(out / "adv.pgm", s.x_adv)
    stencil = make_stencil(s.m, cfg.threshold, s.obj > 0)
    export_stencil(stencil, out / "stencil")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in s.state.history:
        w.writerow(_fmt(v) for v in row)
    (out / "history.csv").write_text(buf.getvalue(), encoding="utf-8")
    if s.state.snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for t, m in s.state.snapshots:
            write_pgm(snap_dir / f"iter_{t:05d}.pgm", m)
    last = s.state.history[-1]
    summary = {
        "command": "optimize",
        "stop_reason": s.state.stop_reason,
        "converged": s.state.stop_reason == CONVERGED,
        "iterations": s.state.t,
        "clean_score": s.clean_score,
        "adv_score": last.top1_score,
        "s_thr": cfg["s_thr"],
        "mask_l1": last.mask_l1,
        "epsilon_max": cfg.optim.budget(s.obj),
        "aggregation": last.aggregation,
        "stencil_area": stencil.total_area,
        "stencil_components": len(stencil.components),
        "stencil_aggregation": stencil.aggregation_final,
        "stencil_score": s.model.score(compose_adversarial(s.x, cfg["cover"], stencil.grid)).top1_score,
    }
    (out / "optimize_summary.txt").write_text(
        "".join(f"{k} = {_fmt(v)}\n" for k, v in summary.items()), encoding="utf-8"
    )
    return s, summary
