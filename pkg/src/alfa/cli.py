"""Command-line entry point: ``alfa <command> ...``.

Exit codes: 0 on success, 1 on invalid input or configuration, 2 on I/O
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import presets
from .errors import AlfaError, ConfigError
from .evaluation import ApMode, format_results_table, mean_average_precision
from .fusion import BoxStrategy, Convention, FusionConfig, ScoreStrategy
from .io import (
    VOC_CLASSES,
    convert_voc,
    parse_config_text,
    read_detections,
    read_fused,
    read_ground_truth,
    write_config,
    write_detections,
    write_ground_truth,
    write_results,
)
from .pipeline import image_ids_of, per_image, run_alfa, run_nms, timing_summary
from .synth import REFERENCE_DETECTORS, REFERENCE_SEED, NoiseModel, generate_scenes, simulate_detector
from .tuning import parse_grid, tune

log = logging.getLogger("alfa")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

_CONVENTIONS = {"map-s": Convention.MAP_S, "map_s": Convention.MAP_S, "map": Convention.MAP}
_AP_MODES = {"all-points": ApMode.ALL_POINTS, "11-point": ApMode.ELEVEN_POINT}


def _load_detectors(paths):
    headers, outputs = [], []
    for i, path in enumerate(paths, start=1):
        header, dets = read_detections(path, detector_id=i)
        headers.append(header)
        outputs.append(dets)
    ks = {h.num_classes for h in headers}
    if len(ks) > 1:
        raise ConfigError(f"detection files disagree on the number of classes: {sorted(ks)}")
    return headers, outputs


def _add_config_args(p):
    p.add_argument("--method", choices=["alfa", "fast-alfa", "nms"], default="alfa")
    p.add_argument("--preset", choices=presets.PRESET_NAMES)
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--convention", choices=["map-s", "map"], default="map-s")
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--score-strategy", choices=[s.value for s in ScoreStrategy])
    p.add_argument("--box-strategy", choices=[b.value for b in BoxStrategy])
    p.add_argument("--no-low-confidence", action="store_true", help="skip padding for missed detectors")
    p.add_argument("--iou-only", action="store_true", help="cluster on box IoU alone")
    p.add_argument("--class-agnostic-nms", action="store_true")
    p.add_argument("--nms-iou", type=float, default=0.5)


def _build_config(args, n_detectors: int) -> FusionConfig:
    convention = _CONVENTIONS[args.convention]
    method = "fast_alfa" if args.method == "fast-alfa" else "alfa"
    if args.config is not None:
        values = parse_config_text(args.config.read_text(encoding="utf-8"), args.config)
        values.setdefault("theta", str(presets.thresholds()[method]))
        cfg = FusionConfig.from_mapping(values)
    elif args.preset is not None:
        cfg = presets.load_preset(args.preset, method)
    else:
        cfg = presets.default_config(n_detectors, convention, method)
    overrides = {
        "tau": args.tau,
        "gamma": args.gamma,
        "epsilon": args.epsilon,
        "theta": args.theta,
        "score_strategy": args.score_strategy,
        "box_strategy": args.box_strategy,
    }
    changes = {k: v for k, v in overrides.items() if v is not None}
    if args.no_low_confidence:
        changes["add_low_confidence"] = False
    if args.iou_only:
        changes["use_class_scores_in_metric"] = False
    if args.class_agnostic_nms:
        changes["class_agnostic_nms"] = True
    changes["final_nms_iou"] = args.nms_iou
    changes["n_detectors"] = n_detectors
    if args.preset is None and args.config is None:
        changes["convention"] = convention
    return FusionConfig.from_mapping({**cfg.to_mapping(), **changes})


def _print_timing(run, stream=None):
    summary = timing_summary(run.timings_ms)
    print(
        f"images={len(run.timings_ms)} detections_in={run.predictions_in} "
        f"detections_out={run.detections_out} "
        f"mean={summary['mean_ms']:.3f}ms median={summary['median_ms']:.3f}ms p99={summary['p99_ms']:.3f}ms",
        file=stream or sys.stdout,
    )
    return summary


def cmd_fuse(args) -> int:
    headers, outputs = _load_detectors(args.detections)
    k = headers[0].num_classes
    if args.method == "nms":
        theta = args.theta if args.theta is not None else presets.thresholds()["nms"]
        run = run_nms(outputs, theta, _CONVENTIONS[args.convention], args.nms_iou)
        name = "nms"
    else:
        cfg = _build_config(args, len(outputs))
        log.info("fusion config: %s", cfg.to_mapping())
        run = run_alfa(outputs, cfg)
        name = args.method
    write_detections(args.out, run.detections, name, k)
    _print_timing(run)
    return EXIT_OK


def cmd_eval(args) -> int:
    gts = read_ground_truth(args.gt)
    mode = _AP_MODES[args.ap_mode]
    conventions = [Convention.MAP_S, Convention.MAP] if args.convention == "both" else [_CONVENTIONS[args.convention]]
    rows, per_class = {}, {}
    for path in args.fused:
        header, dets = read_fused(path)
        name = header.detector_name
        if name in rows:
            name = f"{name} ({Path(path).name})"
        for image_id in gts.image_ids:
            dets.setdefault(image_id, [])
        rows[name] = {}
        for conv in conventions:
            res = mean_average_precision(dets, gts.objects, conv, mode, gts.num_classes)
            rows[name][conv.value] = res.map
            per_class[f"{name}/{conv.value}"] = {str(k): v for k, v in res.per_class_ap.items()}
    columns = tuple(c.value for c in conventions)
    print(format_results_table(rows, columns))
    if args.out is not None:
        write_results(args.out, rows, {"per_class_ap": per_class, "ap_mode": mode.value})
    return EXIT_OK


def cmd_tune(args) -> int:
    headers, outputs = _load_detectors(args.detections)
    gts = read_ground_truth(args.gt)
    convention = _CONVENTIONS[args.convention]
    method = "fast_alfa" if args.method == "fast-alfa" else "alfa"
    theta = args.theta if args.theta is not None else presets.thresholds()[method]
    result = tune(
        outputs,
        gts,
        folds=args.folds,
        grid=parse_grid(args.grid),
        convention=convention,
        seed=args.seed,
        theta=theta,
        mode=_AP_MODES[args.ap_mode],
        random_samples=args.random,
        jobs=args.jobs,
    )
    best = result.best
    print(
        f"best: score={best.score_strategy.value} box={best.box_strategy.value} "
        f"tau={best.tau} gamma={best.gamma} epsilon={best.epsilon} crossval_map={result.best_score:.4f}"
    )
    for i, (ids, score) in enumerate(zip(result.folds, result.fold_scores), start=1):
        print(f"fold {i}: images={len(ids)} map={score:.4f}")
    if args.out is not None:
        write_config(args.out, best)
        report = {
            "best": best.to_mapping(),
            "crossval_map": result.best_score,
            "fold_scores": result.fold_scores,
            "trials": len(result.trials),
        }
        Path(args.out).with_suffix(".json").write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def _parse_detector_spec(text: str) -> list[NoiseModel]:
    if text.strip().isdigit():
        n = int(text)
        if not 1 <= n <= len(REFERENCE_DETECTORS):
            raise ConfigError(f"between 1 and {len(REFERENCE_DETECTORS)} reference detectors available")
        return list(REFERENCE_DETECTORS[:n])
    aliases = {
        "sigma": "box_jitter_sigma",
        "miss": "miss_rate",
        "fp": "false_positive_rate",
        "sharpness": "score_sharpness",
        "seed": "seed",
    }
    models = []
    for i, chunk in enumerate(text.split(";")):
        values = {}
        for item in chunk.split(","):
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in aliases:
                raise ConfigError(f"bad detector spec item {item!r}; keys: {', '.join(aliases)}")
            values[aliases[key]] = int(value) if key == "seed" else float(value)
        values.setdefault("seed", 1000 + i)
        models.append(NoiseModel(**values))
    return models


def cmd_synth(args) -> int:
    models = _parse_detector_spec(args.detectors)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gts = generate_scenes(args.images, args.classes, (args.min_objects, args.max_objects), seed=args.seed)
    write_ground_truth(out_dir / "gt.txt", gts)
    for i, noise in enumerate(models, start=1):
        preds = simulate_detector(gts, noise, detector_id=i)
        write_detections(out_dir / f"det{i}.txt", preds, f"sim{i}", args.classes)
    print(f"wrote {len(gts.image_ids)} images, {len(gts.objects)} objects, {len(models)} detectors to {out_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .fusion import alfa_fuse

    if args.method == "nms":
        raise ConfigError("bench measures ALFA fusion; use --method alfa or fast-alfa")
    headers, outputs = _load_detectors(args.detections)
    cfg = _build_config(args, len(outputs))
    timings = []
    sizes = []
    for image_id in image_ids_of(outputs):
        inputs = per_image(outputs, image_id)
        sizes.append(sum(len(x) for x in inputs))
        for _ in range(args.repeat):
            start = time.perf_counter()
            alfa_fuse(inputs, cfg)
            timings.append(1e3 * (time.perf_counter() - start))
    summary = timing_summary(timings)
    summary.update(images=len(sizes), repeat=args.repeat, mean_predictions=sum(sizes) / max(len(sizes), 1))
    print(
        f"images={summary['images']} repeat={args.repeat} mean_predictions={summary['mean_predictions']:.1f} "
        f"mean={summary['mean_ms']:.3f}ms median={summary['median_ms']:.3f}ms "
        f"p99={summary['p99_ms']:.3f}ms max={summary['max_ms']:.3f}ms"
    )
    if args.json is not None:
        Path(args.json).write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_convert_voc(args) -> int:
    names = VOC_CLASSES
    if args.classes is not None:
        names = tuple(line.strip() for line in Path(args.classes).read_text().splitlines() if line.strip())
    gts = convert_voc(args.annotations, names)
    write_ground_truth(args.out, gts)
    print(f"converted {len(gts.image_ids)} images, {len(gts.objects)} objects")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alfa", description="Late fusion of object detector outputs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse detection files into one")
    p.add_argument("detections", nargs="+", type=Path)
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="evaluate detection files against ground truth")
    p.add_argument("fused", nargs="+", type=Path)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--convention", choices=["map-s", "map", "both"], default="both")
    p.add_argument("--ap-mode", choices=list(_AP_MODES), default="all-points")
    p.add_argument("--out", type=Path, help="results table path (JSON written alongside)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", help="cross-validated hyperparameter search")
    p.add_argument("detections", nargs="+", type=Path)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid", help="e.g. 'tau=0.4:0.8:0.05;gamma=0.2,0.3;score=average;box=all'")
    p.add_argument("--random", type=int, help="sample this many grid points instead of all")
    p.add_argument("--convention", choices=["map-s", "map"], default="map-s")
    p.add_argument("--ap-mode", choices=list(_AP_MODES), default="all-points")
    p.add_argument("--method", choices=["alfa", "fast-alfa"], default="alfa")
    p.add_argument("--theta", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, help="write the best config here (report as .json)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("synth", help="generate synthetic ground truth and detector outputs")
    p.add_argument("--images", type=int, default=500)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--max-objects", type=int, default=6)
    p.add_argument(
        "--detectors",
        default="3",
        help="number of reference detectors, or 'sigma=5,miss=0.2,fp=1,sharpness=6;...'",
    )
    p.add_argument("--seed", type=int, default=REFERENCE_SEED)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="per-image fusion latency")
    p.add_argument("detections", nargs="+", type=Path)
    _add_config_args(p)
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--json", type=Path)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("convert-voc", help="PASCAL VOC XML annotations to a ground-truth file")
    p.add_argument("annotations", type=Path)
    p.add_argument("--classes", type=Path, help="file with one class name per line")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_convert_voc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (AlfaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
