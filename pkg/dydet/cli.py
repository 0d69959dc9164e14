"""Command-line surface: `python -m dydet <command>`.

Results go to stdout as JSON; logs go to stderr. Exit status is 0 on
success, 1 when a stage fails and 2 for usage or configuration errors.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

from .detector.cascade import build_model
from .detector.checkpoint import load_checkpoint
from .logging_utils import setup_logging
from .pipeline.ablation import STRATEGIES, STRATEGY_ALIASES
from .pipeline.evaluate import evaluate_ap
from .pipeline.inference import (calibrate_threshold, infer_dynamic, measure_route_latency, score_scenes,
                                 threshold_for_budget)
from .pipeline.run import (DEFAULT_GENERATE, RunContext, StageError, load_run_config, run_pipeline, run_report,
                           run_stage, write_difficulty, write_robustness)
from .pipeline.studies import flops_summary

log = logging.getLogger("dydet.cli")


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, default=str))


def _train_overrides(args):
    return {k: v for k, v in (("epochs", args.epochs), ("batch_size", args.batch_size), ("lr", args.lr))
            if v is not None}


def build_parser():
    ap = argparse.ArgumentParser(prog="dydet", description="Dynamic two-detector cascade with a learned router")
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("--seed", type=int, help="Global seed (overrides config and DYDET_SEED)")
    ap.add_argument("--out", help="Output directory (overrides config and DYDET_OUT_DIR)")
    ap.add_argument("--log-level", help="Logging level (default DYDET_LOG_LEVEL)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate train/val/test scene sets under <out>/data")
    for split in ("train", "val", "test"):
        p.add_argument(f"--{split}", type=int, help=f"Number of {split} scenes")
    p.add_argument("--workers", type=int)

    for name, helptext in (("train-detectors", "Jointly train both detectors and the connection"),
                           ("train-router", "Train the router with frozen detectors")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        if name == "train-router":
            p.add_argument("--strategy", choices=STRATEGIES + tuple(STRATEGY_ALIASES))
            p.add_argument("--lambda", dest="lam", type=float, help="Penalty weight for --strategy lambda")

    sub.add_parser("calibrate-delta", help="Fix the loss offset from the trained detectors")

    p = sub.add_parser("calibrate-threshold", help="Threshold table, or one tau for a hard fraction or latency budget")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--k", type=float, help="Target hard fraction in [0, 1]")
    g.add_argument("--target-latency", type=float,
                   help="Budget per image: MACs in flops mode, milliseconds in measured mode")
    p.add_argument("--latency-mode", choices=("flops", "measured"), default="flops")

    p = sub.add_parser("infer", help="Route and detect every scene of a split at a fixed tau")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("sweep", help="AP and cost across hard fractions")
    p.add_argument("--k-list", type=_floats)

    p = sub.add_parser("robustness", help="Threshold deviation versus validation-set size")
    p.add_argument("--sizes", type=_ints)
    p.add_argument("--k", type=float)
    p.add_argument("--resamples", type=int)

    p = sub.add_parser("difficulty-report", help="Scenes ranked by router score")
    p.add_argument("--n-extremes", type=int)

    sub.add_parser("flops", help="Analytic multiply-accumulate counts per route")
    sub.add_parser("run", help="Run every stage, resuming where possible")
    return ap


def _config(args, **overrides):
    return load_run_config(args.config, seed=args.seed, out_dir=args.out, **overrides)


def _cmd_gen_data(args):
    base = _config(args)
    g = dict(base.generate or DEFAULT_GENERATE)
    for key in ("train", "val", "test", "workers"):
        if getattr(args, key) is not None:
            g[key] = getattr(args, key)
    cfg = replace(base, generate=g)
    _emit({"stage": "gen-data", "outputs": run_stage(cfg, "gen-data")})


def _cmd_train(args):
    cfg = _config(args, strategy=getattr(args, "strategy", None), lam=getattr(args, "lam", None))
    key = "detector_train" if args.command == "train-detectors" else "router_train"
    cfg = replace(cfg, **{key: replace(getattr(cfg, key), **_train_overrides(args))})
    _emit({"stage": args.command, "outputs": run_stage(cfg, args.command)})


def _cmd_stage(args):
    overrides = {}
    if args.command == "sweep":
        overrides["k_list"] = args.k_list
    _emit({"stage": args.command, "outputs": run_stage(_config(args, **overrides), args.command)})


def _cmd_calibrate_threshold(args):
    cfg = _config(args)
    if args.k is None and args.target_latency is None:
        _emit({"stage": "calibrate-threshold", "outputs": run_stage(cfg, "calibrate-threshold")})
        return
    ctx = RunContext(cfg)
    try:
        model = ctx.model("model.ckpt")
        val = ctx.dataset("val").scenes
        scores = score_scenes(model, val, ctx.scorer())
        if args.k is not None:
            _emit({"k": args.k, "tau": calibrate_threshold(scores, args.k)})
            return
        if args.latency_mode == "flops":
            fl = flops_summary(model)
            lat1, lat2 = float(fl["easy"]), float(fl["hard"])
            target = args.target_latency
        else:
            lat1, lat2 = measure_route_latency(model, val)
            target = args.target_latency / 1e3
        cal = threshold_for_budget(scores, lat1, lat2, target, scores_source=ctx.dataset("val").dataset_id)
    except Exception as e:
        raise StageError("calibrate-threshold", e) from e
    _emit(asdict(cal))


def _cmd_infer(args):
    cfg = _config(args)
    ctx = RunContext(cfg)
    try:
        model = ctx.model("model.ckpt")
        scenes = ctx.dataset(args.split).scenes
    except Exception as e:
        raise StageError("infer", e) from e
    dets, hard = [], 0
    for s in scenes:
        d, decision = infer_dynamic(model, args.tau, s.image, ctx.scorer(), cfg.conf_thresh, cfg.nms_iou)
        dets.append(d)
        hard += decision.route == "hard"
        _emit({"scene_id": s.scene_id, "phi": decision.phi, "route": decision.route, "flops": decision.flops,
               "detections": [{"box": [float(v) for v in x.box], "cls": int(x.cls), "score": float(x.score)}
                              for x in d]})
    result = evaluate_ap(dets, scenes, model.arch.num_classes)
    log.info("infer_done", extra={"context": {"tau": args.tau, "scenes": len(scenes), "ap": result.ap,
                                              "hard_fraction": hard / max(len(scenes), 1)}})


def _cmd_robustness(args):
    overrides = {"robustness_sizes": args.sizes, "robustness_k": args.k, "robustness_resamples": args.resamples}
    path = run_report(_config(args, **overrides), write_robustness, "robustness")
    _emit({"report": "robustness", "path": path})


def _cmd_difficulty(args):
    path = run_report(_config(args, n_extremes=args.n_extremes), write_difficulty, "difficulty-report")
    _emit({"report": "difficulty-report", "path": path})


def _cmd_flops(args):
    cfg = _config(args)
    ckpt = RunContext(cfg).path("checkpoints/model.ckpt")
    # counts depend only on the architecture
    model = load_checkpoint(ckpt) if os.path.exists(ckpt) else build_model(cfg.arch)
    _emit(flops_summary(model))


def _cmd_run(args):
    manifest = run_pipeline(_config(args))
    _emit({"config_hash": manifest["config_hash"], "stages": [s["name"] for s in manifest["stages"]]})


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-detectors": _cmd_train,
    "calibrate-delta": _cmd_stage,
    "train-router": _cmd_train,
    "calibrate-threshold": _cmd_calibrate_threshold,
    "infer": _cmd_infer,
    "sweep": _cmd_stage,
    "robustness": _cmd_robustness,
    "difficulty-report": _cmd_difficulty,
    "flops": _cmd_flops,
    "run": _cmd_run,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        COMMANDS[args.command](args)
    except StageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except Exception as e:
        log.error("command_failed", extra={"context": {"command": args.command, "error": str(e)}})
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
