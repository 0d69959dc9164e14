"""End-to-end pipeline with resumable stages.

    gen-data (optional) -> train-detectors -> calibrate-delta -> train-router
        -> calibrate-threshold -> sweep -> reports

Every stage reads its inputs from the output directory and writes its
artifacts there. `run.db` remembers each stage's input hash and output
digests; a rerun skips stages whose inputs are unchanged and whose outputs
are intact.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

from .. import config as env
from ..detector.cascade import build_model
from ..detector.checkpoint import load_checkpoint, save_checkpoint
from ..detector.features import ArchConfig
from ..detector.router import RandomScorer, Router
from ..shapes.dataset import MANIFEST_NAME, Dataset, generate_dataset, load_dataset
from ..shapes.scene import SceneConfig
from . import ledger
from .ablation import AblationConfig, train_router_ablation
from .inference import score_scenes
from .studies import (difficulty_report, flops_summary, sweep_tradeoff, threshold_robustness, write_difficulty_csv,
                      write_robustness_csv, write_sweep_csv, write_threshold_csv)
from .train import (DETECTOR_DEFAULTS, DESK_ROUTER_DEFAULTS, DeltaOffset, TrainConfig, calibrate_delta, loss_curve_report,
                    router_samples, train_detectors_joint, train_router)

log = logging.getLogger("dydet.pipeline.run")

STAGES = ("gen-data", "train-detectors", "calibrate-delta", "train-router", "calibrate-threshold", "sweep", "reports")
SPLITS = ("train", "val", "test")
DEFAULT_K_LIST = tuple(round(0.1 * i, 1) for i in range(11))
DEFAULT_GENERATE = {"train": 2000, "val": 500, "test": 500}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on.

    Split paths left unset resolve to `<out_dir>/data/<split>`, where
    gen-data writes. The top-level seed overrides both phases' seeds.
    """

    out_dir: str = env.OUT_DIR
    seed: int = env.SEED
    train_path: Optional[str] = None
    val_path: Optional[str] = None
    test_path: Optional[str] = None
    generate: Optional[Dict[str, Any]] = None
    arch: ArchConfig = ArchConfig()
    detector_train: TrainConfig = DETECTOR_DEFAULTS
    router_train: TrainConfig = DESK_ROUTER_DEFAULTS
    strategy: str = "proposed"
    lam: Optional[float] = None
    k_list: Tuple[float, ...] = DEFAULT_K_LIST
    robustness_sizes: Tuple[int, ...] = (25, 50, 100, 200)
    robustness_k: float = 0.5
    robustness_resamples: int = 10
    n_extremes: int = 5
    conf_thresh: float = env.CONF_THRESH
    nms_iou: float = env.NMS_IOU
    measure_latency: bool = env.MEASURE_LATENCY
    workers: int = 1

    def __post_init__(self):
        ab = AblationConfig(self.strategy, self.lam)
        object.__setattr__(self, "strategy", ab.strategy)
        object.__setattr__(self, "detector_train", replace(self.detector_train, seed=self.seed))
        object.__setattr__(self, "router_train", replace(self.router_train, seed=self.seed))
        object.__setattr__(self, "k_list", tuple(float(k) for k in self.k_list))
        object.__setattr__(self, "robustness_sizes", tuple(int(s) for s in self.robustness_sizes))
        if not self.k_list or any(not 0.0 <= k <= 1.0 for k in self.k_list):
            raise ValueError(f"k_list must be non-empty with every k in [0, 1], got {self.k_list}")
        if not 0.0 <= self.robustness_k <= 1.0:
            raise ValueError(f"robustness_k must be in [0, 1], got {self.robustness_k}")
        if any(s < 1 for s in self.robustness_sizes):
            raise ValueError(f"robustness_sizes must be positive, got {self.robustness_sizes}")
        if self.robustness_resamples < 1:
            raise ValueError(f"robustness_resamples must be >= 1, got {self.robustness_resamples}")
        if self.n_extremes < 0:
            raise ValueError(f"n_extremes must be >= 0, got {self.n_extremes}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.generate is not None:
            for split in SPLITS:
                if int(self.generate.get(split, 0)) < 1:
                    raise ValueError(f"generate.{split} must be a positive scene count")
            SceneConfig.from_dict(self.generate.get("scene", {}))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["k_list"] = list(self.k_list)
        d["robustness_sizes"] = list(self.robustness_sizes)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        if isinstance(d.get("arch"), dict):
            d["arch"] = ArchConfig.from_dict(d["arch"])
        for key, base in (("detector_train", DETECTOR_DEFAULTS), ("router_train", DESK_ROUTER_DEFAULTS)):
            if isinstance(d.get(key), dict):
                d[key] = replace(base, **d[key])
        return cls(**d)

    def config_hash(self) -> str:
        """Digest of every setting except the output location."""
        d = self.to_dict()
        d.pop("out_dir")
        return _digest(d)


def load_run_config(path: Optional[str] = None, **overrides) -> RunConfig:
    """JSON file values over defaults, then non-None keyword overrides over both."""
    d: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"run config not found at {path}")
        with open(path) as f:
            d = json.load(f)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def _digest(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()


class RunContext:
    """Output-directory paths plus lazily loaded datasets."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = config.out_dir
        self._data: Dict[str, Dataset] = {}

    def path(self, rel: str) -> str:
        return os.path.join(self.out, *rel.split("/"))

    def split_path(self, split: str) -> str:
        explicit = getattr(self.config, f"{split}_path")
        if explicit and self.config.generate is None:
            return explicit
        return self.path(f"data/{split}")

    def dataset(self, split: str) -> Dataset:
        if split not in self._data:
            self._data[split] = load_dataset(self.split_path(split))
        return self._data[split]

    def data_hash(self, split: str) -> str:
        mpath = os.path.join(self.split_path(split), MANIFEST_NAME)
        return ledger.file_sha256(mpath) if os.path.exists(mpath) else ""

    def model(self, name: str):
        return load_checkpoint(self.path(f"checkpoints/{name}"))

    def scorer(self):
        c = self.config
        return RandomScorer(c.router_train.seed) if c.strategy == "random" else None


def _check_arch(arch: ArchConfig, ds: Dataset) -> None:
    cfg = ds.manifest["config"]
    if cfg["image_size"] != arch.image_size or cfg["num_classes"] != arch.num_classes:
        raise ValueError(f"{ds.path}: dataset has image_size={cfg['image_size']} num_classes={cfg['num_classes']}, "
                         f"architecture expects {arch.image_size} and {arch.num_classes}")


# stage bodies: each returns the output paths it wrote, relative to out_dir

def _gen_data(ctx: RunContext) -> List[str]:
    g = ctx.config.generate or DEFAULT_GENERATE
    scene_cfg = SceneConfig.from_dict(g.get("scene", {}))
    base = ctx.config.seed
    outs = []
    for split in SPLITS:
        n = int(g[split])
        # consecutive seed blocks keep the splits disjoint
        generate_dataset(scene_cfg, n, base, ctx.path(f"data/{split}"), workers=int(g.get("workers", ctx.config.workers)))
        base += n
        outs.append(f"data/{split}/{MANIFEST_NAME}")
    ctx._data.clear()
    return outs


def _train_detectors(ctx: RunContext) -> List[str]:
    c = ctx.config
    train = ctx.dataset("train")
    _check_arch(c.arch, train)
    model = build_model(c.arch, seed=c.seed)
    train_detectors_joint(model, train.scenes, c.detector_train, log_path=ctx.path("logs/detectors.csv"))
    save_checkpoint(model, ctx.path("checkpoints/detectors.ckpt"))
    return ["checkpoints/detectors.ckpt", "logs/detectors.csv"]


def _calibrate_delta(ctx: RunContext) -> List[str]:
    model = ctx.model("detectors.ckpt")
    train = ctx.dataset("train")
    samples = router_samples(model, train.scenes, ctx.config.workers)
    off = calibrate_delta(model, train.scenes, train.dataset_id, samples=samples)
    with open(ctx.path("delta.json"), "w") as f:
        json.dump(asdict(off), f, indent=2, sort_keys=True)
    save_checkpoint(model, ctx.path("checkpoints/calibrated.ckpt"))
    return ["delta.json", "checkpoints/calibrated.ckpt"]


def _train_router(ctx: RunContext) -> List[str]:
    c = ctx.config
    model = ctx.model("calibrated.ckpt")
    train = ctx.dataset("train")
    samples = router_samples(model, train.scenes, c.workers)
    log_path = ctx.path("logs/router.csv")
    if os.path.exists(log_path):
        os.remove(log_path)
    if c.strategy == "proposed":
        delta = DeltaOffset(model.delta, train.dataset_id, len(samples))
        train_router(model, delta, train.scenes, c.router_train, samples=samples, log_path=log_path)
    else:
        res = train_router_ablation(model, train.scenes, AblationConfig(c.strategy, c.lam), c.router_train,
                                    samples=samples, log_path=log_path)
        if isinstance(res.scorer, Router):
            model.router = res.scorer
    save_checkpoint(model, ctx.path("checkpoints/model.ckpt"))
    outs = ["checkpoints/model.ckpt"]
    if os.path.exists(log_path):
        outs.append("logs/router.csv")
    return outs


def _calibrate_threshold(ctx: RunContext) -> List[str]:
    model = ctx.model("model.ckpt")
    scores = score_scenes(model, ctx.dataset("val").scenes, ctx.scorer())
    write_threshold_csv(scores, ctx.config.k_list, ctx.path("thresholds.csv"))
    return ["thresholds.csv"]


def _sweep(ctx: RunContext) -> List[str]:
    c = ctx.config
    model = ctx.model("model.ckpt")
    test = ctx.dataset("test")
    _check_arch(model.arch, test)
    points = sweep_tradeoff(model, ctx.dataset("val").scenes, test.scenes, c.k_list, ctx.scorer(),
                            c.measure_latency, c.conf_thresh, c.nms_iou)
    write_sweep_csv(points, ctx.path("sweep.csv"))
    return ["sweep.csv"]


def write_loss_curve(ctx: RunContext) -> str:
    model = ctx.model("model.ckpt")
    if model.delta is None:
        raise ValueError("model.ckpt carries no delta; run calibrate-delta first")
    loss_curve_report(model, model.delta, ctx.dataset("train").scenes, ctx.path("loss_curve.csv"), ctx.scorer())
    return "loss_curve.csv"


def write_robustness(ctx: RunContext) -> str:
    c = ctx.config
    model = ctx.model("model.ckpt")
    pool = ctx.dataset("val").scenes
    sizes = [s for s in c.robustness_sizes if s <= len(pool)]
    if len(sizes) < len(c.robustness_sizes):
        log.warning("robustness_sizes_skipped", extra={"context": {
            "skipped": [s for s in c.robustness_sizes if s > len(pool)], "pool": len(pool)}})
    if not sizes:
        raise ValueError(f"every robustness size exceeds the validation pool of {len(pool)} scenes")
    rows = threshold_robustness(model, pool, sizes, c.robustness_k, ctx.dataset("test").scenes,
                                c.robustness_resamples, c.seed, ctx.scorer())
    write_robustness_csv(rows, ctx.path("robustness.csv"))
    return "robustness.csv"


def write_difficulty(ctx: RunContext) -> str:
    model = ctx.model("model.ckpt")
    rep = difficulty_report(model, ctx.dataset("test").scenes, ctx.config.n_extremes, ctx.scorer())
    for tag, rows in (("easiest", rep.easiest), ("hardest", rep.hardest)):
        for r in rows:
            log.info("difficulty_extreme", extra={"context": {"end": tag, **asdict(r)}})
    write_difficulty_csv(rep, ctx.path("difficulty.csv"))
    return "difficulty.csv"


def write_flops(ctx: RunContext) -> str:
    summary = flops_summary(ctx.model("model.ckpt"))
    with open(ctx.path("flops.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return "flops.json"


def _reports(ctx: RunContext) -> List[str]:
    return [write_loss_curve(ctx), write_robustness(ctx), write_difficulty(ctx), write_flops(ctx)]


STAGE_FUNCS: Dict[str, Callable[[RunContext], List[str]]] = {
    "gen-data": _gen_data,
    "train-detectors": _train_detectors,
    "calibrate-delta": _calibrate_delta,
    "train-router": _train_router,
    "calibrate-threshold": _calibrate_threshold,
    "sweep": _sweep,
    "reports": _reports,
}


def _input_hash(ctx: RunContext, name: str, up: Dict[str, str]) -> str:
    """What a stage's outputs depend on: settings plus upstream output digests."""
    c = ctx.config
    scorer_key = (c.strategy, c.router_train.seed)
    if name == "gen-data":
        return _digest(name, c.generate or DEFAULT_GENERATE, c.seed)
    if name == "train-detectors":
        return _digest(name, c.arch.to_dict(), c.detector_train.to_dict(), c.seed, ctx.data_hash("train"))
    if name == "calibrate-delta":
        return _digest(name, up.get("train-detectors", ""), ctx.data_hash("train"))
    if name == "train-router":
        return _digest(name, up.get("calibrate-delta", ""), c.router_train.to_dict(), c.strategy, c.lam,
                       ctx.data_hash("train"))
    if name == "calibrate-threshold":
        return _digest(name, up.get("train-router", ""), scorer_key, c.k_list, ctx.data_hash("val"))
    if name == "sweep":
        return _digest(name, up.get("train-router", ""), up.get("calibrate-threshold", ""), scorer_key, c.k_list,
                       c.conf_thresh, c.nms_iou, c.measure_latency, ctx.data_hash("val"), ctx.data_hash("test"))
    return _digest(name, up.get("train-router", ""), scorer_key, c.robustness_sizes, c.robustness_k,
                   c.robustness_resamples, c.n_extremes, c.seed,
                   [ctx.data_hash(s) for s in SPLITS])


def _execute(conn, ctx: RunContext, name: str, position: int, input_hash: str, force: bool = False) -> Dict[str, str]:
    if not force and ledger.stage_is_current(conn, ctx.out, name, input_hash):
        log.info("stage_skip", extra={"context": {"stage": name}})
        return ledger.stage_record(conn, name)["outputs"]
    log.info("stage_start", extra={"context": {"stage": name}})
    try:
        rels = STAGE_FUNCS[name](ctx)
    except Exception as e:
        log.error("stage_fail", extra={"context": {"stage": name, "error": str(e)}})
        raise StageError(name, e) from e
    outputs = ledger.record_stage(conn, ctx.out, name, position, input_hash, rels)
    log.info("stage_done", extra={"context": {"stage": name, "outputs": sorted(outputs)}})
    return outputs


def _stage_names(config: RunConfig) -> List[str]:
    return [s for s in STAGES if s != "gen-data" or config.generate is not None]


def _record_run(conn, ctx: RunContext) -> None:
    c = ctx.config
    d = c.to_dict()
    d.pop("out_dir")
    ledger.set_value(conn, "config", d)
    ledger.set_value(conn, "config_hash", c.config_hash())
    inputs = {}
    for split in SPLITS:
        if os.path.exists(os.path.join(ctx.split_path(split), MANIFEST_NAME)):
            inputs[split] = {"dataset_id": ctx.dataset(split).dataset_id, "manifest_sha256": ctx.data_hash(split)}
    ledger.set_value(conn, "inputs", inputs)


def run_pipeline(config: RunConfig) -> Dict[str, Any]:
    """Run every stage in order, skipping the ones already current; returns the manifest."""
    ctx = RunContext(config)
    if config.generate is None:
        for split in SPLITS:
            mpath = os.path.join(ctx.split_path(split), MANIFEST_NAME)
            if not os.path.exists(mpath):
                raise FileNotFoundError(f"{split} dataset not found at {mpath}. Run: python -m dydet gen-data")
    ledger.init_db(ctx.out)
    names = _stage_names(config)
    conn = ledger.get_conn(ctx.out)
    try:
        ledger.forget_stages(conn, names)
        up: Dict[str, str] = {}
        for name in names:
            outputs = _execute(conn, ctx, name, STAGES.index(name), _input_hash(ctx, name, up))
            up[name] = ledger.outputs_hash(ctx.out, outputs)
        _record_run(conn, ctx)
        manifest = ledger.export_manifest(conn, ctx.out)
    finally:
        conn.close()
    log.info("run_done", extra={"context": {"out_dir": ctx.out, "config_hash": manifest["config_hash"],
                                            "stages": len(manifest["stages"])}})
    return manifest


def run_stage(config: RunConfig, name: str) -> Dict[str, str]:
    """Run one stage unconditionally against whatever upstream artifacts exist."""
    if name not in STAGE_FUNCS:
        raise ValueError(f"unknown stage {name!r}; expected one of {STAGES}")
    ctx = RunContext(config)
    ledger.init_db(ctx.out)
    conn = ledger.get_conn(ctx.out)
    try:
        up = {}
        for prev in STAGES[:STAGES.index(name)]:
            rec = ledger.stage_record(conn, prev)
            if rec is not None:
                up[prev] = ledger.outputs_hash(ctx.out, rec["outputs"])
        outputs = _execute(conn, ctx, name, STAGES.index(name), _input_hash(ctx, name, up), force=True)
        _record_run(conn, ctx)
        ledger.export_manifest(conn, ctx.out)
    finally:
        conn.close()
    return outputs


def run_report(config: RunConfig, which: Callable[[RunContext], str], label: str) -> str:
    """One report outside the ledger (CLI use); failures surface as StageError(label)."""
    ctx = RunContext(config)
    try:
        return ctx.path(which(ctx))
    except Exception as e:
        log.error("stage_fail", extra={"context": {"stage": label, "error": str(e)}})
        raise StageError(label, e) from e
