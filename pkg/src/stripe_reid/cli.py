"""``stripe-reid`` command line entry point.

Every command accepts ``--config FILE`` (a JSON object whose keys are the
flag names with underscores) and flags, which take precedence. The fully
resolved configuration is logged and embedded in every JSON output.

Exit codes: 0 success, 2 config/usage, 3 data reference, 4 numerical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import manifest as mf
from .errors import LookupFailure, MatchingError, NumericalError, StripeReidError, ValidationError
from .evaluation import detection as det
from .evaluation import pose as pose_eval
from .evaluation import reid as reid_eval
from .evaluation.reports import svg_plot, write_csv, write_json
from .evaluation.wild import wild_couple
from .geometry import DEFAULT_PART_MAP, PartMap, Skeleton
from .metric_learning import eset
from .metric_learning.losses import BatchSpec
from .metric_learning.model import (
    LossConfig,
    eval_embeddings,
    extract_inputs,
    forward,
    params_to_json,
)
from .metric_learning.training import TrainConfig, train_toy

log = logging.getLogger("stripe_reid")

EXIT_OK, EXIT_USAGE, EXIT_REFERENCE, EXIT_NUMERICAL = 0, 2, 3, 4

REQUIRED = object()

DEFAULTS = {
    "synth-gen": {
        "out": REQUIRED,
        "seed": REQUIRED,
        "n_entities": 20,
        "samples_per_entity": 10,
        "n_cameras": 3,
        "channels": 16,
        "grid_h": 16,
        "grid_w": 32,
        "deform_amplitude": 0.4,
        "noise_sigma": 0.5,
        "image_w": 256,
        "image_h": 128,
        "part_map": None,
    },
    "train-toy": {
        "data": REQUIRED,
        "out": REQUIRED,
        "seed": REQUIRED,
        "split_seed": None,
        "objective": "ppbm",
        "aggregation": "concat_a",
        "margin": 0.3,
        "lam": 1.0,
        "P": 4,
        "K": 4,
        "lr": 0.005,
        "epochs": 30,
        "batches_per_epoch": 16,
        "fixed_schedule": True,
        "embed_dim": 107,
        "part_dim": 32,
        "local_dim": 32,
        "n_columns": 8,
        "gate_hidden": 8,
        "image_w": 256,
        "image_h": 128,
        "part_map": None,
    },
    "eval-reid": {
        "manifest": REQUIRED,
        "embeddings": REQUIRED,
        "out": REQUIRED,
        "mode": "plain",
        "detections": None,
        "top_k": 10,
        "iou_threshold": 0.5,
        "max_rank": 20,
        "svg": False,
    },
    "eval-pose": {
        "manifest": REQUIRED,
        "predictions": REQUIRED,
        "out": REQUIRED,
        "thresholds": list(det.COCO_IOU_THRESHOLDS),
        "svg": False,
    },
    "eval-det": {
        "manifest": None,
        "detections": None,
        "out": REQUIRED,
        "thresholds": list(det.COCO_IOU_THRESHOLDS),
        "bflops": None,
        "map": None,
        "svg": False,
    },
}


class UsageError(StripeReidError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stripe-reid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with default values for the flags below")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        return p

    p = cmd("synth-gen", "write a seeded synthetic dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    for name in ("n-entities", "samples-per-entity", "n-cameras", "channels", "grid-h", "grid-w"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--deform-amplitude", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--image-w", type=int)
    p.add_argument("--image-h", type=int)

    p = cmd("train-toy", "train the toy embedder on a synthetic dataset")
    p.add_argument("--data", help="directory written by synth-gen")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", type=int, help="defaults to --seed")
    p.add_argument("--objective", choices=("trihard", "aligned", "ppbm", "ce"))
    p.add_argument("--aggregation", choices=("concat_a", "attention_b"))
    p.add_argument("--margin", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--P", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches-per-epoch", type=int)
    p.add_argument("--fixed-schedule", type=_bool)
    for name in ("embed-dim", "part-dim", "local-dim", "n-columns", "gate-hidden", "image-w", "image-h"):
        p.add_argument(f"--{name}", type=int)

    p = cmd("eval-reid", "re-ID mAP / top-k / CMC for an embedding file")
    p.add_argument("--manifest")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--mode", choices=(reid_eval.PLAIN, reid_eval.WILD))
    p.add_argument("--detections", help="detector output, required in wild mode")
    p.add_argument("--top-k", type=int)
    p.add_argument("--iou-threshold", type=float)
    p.add_argument("--max-rank", type=int)
    p.add_argument("--svg", action="store_true")

    p = cmd("eval-pose", "OKS keypoint AP/AR")
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--out")
    p.add_argument("--thresholds", type=float, nargs="+")
    p.add_argument("--svg", action="store_true")

    p = cmd("eval-det", "detection AP over IoU thresholds and PPF")
    p.add_argument("--manifest", help="ground-truth boxes")
    p.add_argument("--detections")
    p.add_argument("--out")
    p.add_argument("--thresholds", type=float, nargs="+")
    p.add_argument("--bflops", type=float, nargs="+")
    p.add_argument("--map", type=float, nargs="+", help="score PPF for given mAP values only")
    p.add_argument("--svg", action="store_true")
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """defaults < --config file < flags."""
    cfg = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    path = getattr(args, "config", None)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(doc)
    cfg.update(flags)
    missing = [k for k, v in cfg.items() if v is REQUIRED]
    if missing:
        raise UsageError(f"{command}: missing required settings: {', '.join(missing)}")
    return cfg


def _part_map(cfg) -> PartMap:
    return DEFAULT_PART_MAP if cfg["part_map"] is None else PartMap.from_json(cfg["part_map"])


def _existing(path, what) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- commands -------------------------------------------------------------------


def cmd_synth_gen(cfg: dict) -> None:
    out = _outdir(cfg["out"])
    synth = mf.SynthConfig(
        n_entities=cfg["n_entities"],
        samples_per_entity=cfg["samples_per_entity"],
        n_cameras=cfg["n_cameras"],
        grid_dims=(cfg["channels"], cfg["grid_h"], cfg["grid_w"]),
        deform_amplitude=cfg["deform_amplitude"],
        noise_sigma=cfg["noise_sigma"],
        seed=cfg["seed"],
        image_dims=(cfg["image_w"], cfg["image_h"]),
    )
    ds, grids = mf.synth_generate(synth, _part_map(cfg))
    mf.save_manifest(ds, out / "manifest.json")
    grid_dir = out / "grids"
    grid_dir.mkdir(exist_ok=True)
    for sid, g in grids.items():
        mf.write_grid(grid_dir / f"{sid}.fgrd", g)
    write_json(out / "synth.json", {"n_samples": len(ds.samples)}, cfg)
    log.info("wrote %d samples to %s", len(ds.samples), out)


def _load_grids(data: Path, ds) -> dict[str, np.ndarray]:
    grids = {}
    for s in ds.samples:
        path = data / "grids" / f"{s.sample_id}.fgrd"
        if not path.exists():
            raise LookupFailure(s.sample_id)
        grids[s.sample_id] = mf.read_grid(path)
    return grids


def cmd_train_toy(cfg: dict) -> None:
    data = _existing(cfg["data"], "dataset directory")
    ds = mf.load_manifest(_existing(data / "manifest.json", "dataset manifest"))
    split_seed = cfg["seed"] if cfg["split_seed"] is None else cfg["split_seed"]
    train, test = mf.split_entities(ds, split_seed)
    grids = _load_grids(data, mf.Dataset(train.samples + test.samples))
    tcfg = TrainConfig(
        objective=cfg["objective"],
        loss=LossConfig(margin=cfg["margin"], lam=cfg["lam"], aggregation=cfg["aggregation"]),
        batch=BatchSpec(cfg["P"], cfg["K"]),
        lr=cfg["lr"],
        epochs=cfg["epochs"],
        batches_per_epoch=cfg["batches_per_epoch"],
        fixed_schedule=cfg["fixed_schedule"],
        seed=cfg["seed"],
        embed_dim=cfg["embed_dim"],
        part_dim=cfg["part_dim"],
        local_dim=cfg["local_dim"],
        n_columns=cfg["n_columns"],
        gate_hidden=cfg["gate_hidden"],
    )
    dims = (cfg["image_w"], cfg["image_h"])
    part_map = _part_map(cfg)
    train_in = extract_inputs(train, grids, tcfg.n_columns, dims, part_map)
    if tcfg.objective == "ce" and int(train_in.classes.max()) >= tcfg.embed_dim:
        raise ValidationError("the ce objective needs embed_dim >= number of training entities")
    result = train_toy(train_in, tcfg)

    out = _outdir(cfg["out"])
    write_json(out / "params.json", params_to_json(result.params), cfg)
    write_csv(out / "loss_log.csv", ["epoch", "loss"], list(enumerate(result.loss_log)))
    mf.save_manifest(train, out / "train_manifest.json")
    mf.save_manifest(test, out / "test_manifest.json")

    test_in = extract_inputs(test, grids, tcfg.n_columns, dims, part_map)
    vecs = eval_embeddings(result.params, test_in, tcfg.objective)
    fw = forward(result.params, test_in)
    es = eset.from_model(test_in.ids, test_in.labels, test_in.meta, vecs, fw.y, test_in.vis)
    eset.write_eset(out / "embeddings.eset", es)
    log.info("trained %d epochs; final loss %s", tcfg.epochs, result.loss_log[-1] if result.loss_log else None)


def _cmc_rows(curve):
    return [(k + 1, float(v)) for k, v in enumerate(curve)]


def cmd_eval_reid(cfg: dict) -> None:
    test = mf.load_manifest(_existing(cfg["manifest"], "manifest"))
    es = eset.read_eset(_existing(cfg["embeddings"], "embedding file"))
    found = None
    extra = {}
    if cfg["mode"] == reid_eval.WILD:
        if cfg["detections"] is None:
            raise UsageError("wild mode requires --detections")
        dets = det.load_detections(_existing(cfg["detections"], "detections file"))
        assignment = wild_couple(dets, test, k=cfg["top_k"], iou_threshold=cfg["iou_threshold"])
        found = assignment.found
        extra["not_found"] = sorted(assignment.missed)
    report = reid_eval.evaluate_reid(test, es.globals(), cfg["mode"], found, cfg["max_rank"])

    out = _outdir(cfg["out"])
    write_json(out / "reid_report.json", {**report.to_json(), **extra}, cfg)
    series = {}
    for cat, rep in report.categories.items():
        if rep is None:
            continue
        write_csv(out / f"cmc_{cat}.csv", ["rank", "cmc"], _cmc_rows(rep.cmc))
        series[cat] = (list(range(1, len(rep.cmc) + 1)), rep.cmc)
    if cfg["svg"]:
        (out / "cmc.svg").write_text(svg_plot(series, f"CMC ({cfg['mode']})", "rank", "match rate"))
    overall = report[reid_eval.OVERALL]
    log.info("overall mAP %s", None if overall is None else overall.mAP)


def cmd_eval_pose(cfg: dict) -> None:
    gt = mf.load_manifest(_existing(cfg["manifest"], "manifest"))
    text = _existing(cfg["predictions"], "predictions file").read_text(encoding="utf-8")
    preds = pose_eval.parse_pose_predictions(text)
    gts, ps, scores = [], [], []
    for s in gt.samples:
        if s.keypoints is None or not s.keypoints.visible.any():
            continue
        if s.sample_id not in preds:
            raise MatchingError(f"no pose prediction for sample {s.sample_id!r}")
        kps, score = preds[s.sample_id]
        gts.append(s.keypoints)
        ps.append(Skeleton(kps, s.keypoints.scale_s))
        scores.append(score)
    oks_cfg = pose_eval.OksConfig(thresholds=tuple(cfg["thresholds"]))
    report = pose_eval.keypoint_ap_ar(ps, gts, oks_cfg, scores)

    out = _outdir(cfg["out"])
    write_json(out / "pose_report.json", report.to_json(), cfg)
    rows = list(zip(report.thresholds, report.ap, report.ar))
    write_csv(out / "pose_curve.csv", ["threshold", "ap", "ar"], rows)
    if cfg["svg"]:
        series = {"AP": (report.thresholds, report.ap), "AR": (report.thresholds, report.ar)}
        (out / "pose.svg").write_text(svg_plot(series, "keypoint AP / AR", "OKS threshold", "value"))


def _ppf_rows(maps, bflops):
    if len(maps) != len(bflops):
        raise UsageError("--map and --bflops need the same number of values")
    return [{"mAP": m, "bflops": b, "ppf": det.ppf(m, b)} for m, b in zip(maps, bflops)]


def cmd_eval_det(cfg: dict) -> None:
    out = _outdir(cfg["out"])
    payload = {}
    if cfg["map"] is not None:
        if cfg["bflops"] is None:
            raise UsageError("--map needs --bflops")
        payload["ppf"] = _ppf_rows(list(cfg["map"]), list(cfg["bflops"]))
    else:
        if cfg["manifest"] is None or cfg["detections"] is None:
            raise UsageError("eval-det needs --manifest and --detections (or --map with --bflops)")
        gt = mf.load_manifest(_existing(cfg["manifest"], "manifest"))
        dets = det.load_detections(_existing(cfg["detections"], "detections file"))
        report = det.detection_eval(dets, det.gt_boxes(gt), tuple(cfg["thresholds"]))
        payload.update(report.to_json())
        write_csv(out / "det_ap.csv", ["threshold", "ap"], list(zip(report.thresholds, report.ap)))
        for t, (rec, prec) in zip(report.thresholds, report.curves):
            write_csv(out / f"det_pr_{t:.2f}.csv", ["recall", "precision"], list(zip(rec, prec)))
        if cfg["bflops"] is not None:
            payload["ppf"] = _ppf_rows([report.mAP], list(cfg["bflops"]))
        if cfg["svg"]:
            series = {f"IoU {t:.2f}": c for t, c in zip(report.thresholds, report.curves)}
            (out / "det_pr.svg").write_text(svg_plot(series, "precision / recall", "recall", "precision"))
    if "ppf" in payload:
        rows = [(r["mAP"], r["bflops"], r["ppf"]) for r in payload["ppf"]]
        write_csv(out / "ppf.csv", ["mAP", "bflops", "ppf"], rows)
    write_json(out / "det_report.json", payload, cfg)


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train-toy": cmd_train_toy,
    "eval-reid": cmd_eval_reid,
    "eval-pose": cmd_eval_pose,
    "eval-det": cmd_eval_det,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args.command, args)
        log.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
        COMMANDS[args.command](cfg)
    except (LookupFailure, MatchingError) as exc:
        log.error("%s", exc)
        return EXIT_REFERENCE
    except NumericalError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except StripeReidError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
