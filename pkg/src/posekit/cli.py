"""Command-line entry point.

Commands: synth, validate, augment, train, predict, eval, gradcheck, bench.
Every run echoes its resolved configuration for provenance. Exit codes:
0 success, 1 usage error, 2 data or config error, 3 runtime failure
(diverged training, corrupt checkpoint, failed gradient check).

Heavy imports happen after --threads is applied so BLAS thread limits take
effect; pass --threads 1 for bit-reproducible runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import CheckpointError, DataError, TrainingDivergedError

_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_limit(argv):
    """Set BLAS thread env vars before numpy loads; must run first."""
    threads = None
    for i, token in enumerate(argv):
        if token == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif token.startswith("--threads="):
            threads = token.split("=", 1)[1]
    if threads is not None and threads.isdigit() and int(threads) > 0:
        for var in _THREAD_ENV_VARS:
            os.environ[var] = threads


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _echo_config(resolved):
    print("config:", json.dumps(resolved, sort_keys=True, default=str))


def _load_json_file(path, what):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot open {what} file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc.msg})")
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a JSON object")
    return data


def build_parser():
    parser = _Parser(prog="posekit",
                     description="Pose keypoint regression: data, training, inference, metrics.")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count; 1 gives bit-reproducible runs")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--preset", default=None, help="generator preset (wide, narrow)")
    p.add_argument("--config", default=None, help="generator config JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=None, help="override sample count")
    p.add_argument("--format", choices=("png", "ppm"), default="png")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("validate", help="check annotation/detection files")
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", default=None)
    p.add_argument("--no-check-images", action="store_true",
                   help="skip verifying that referenced images exist")

    p = sub.add_parser("augment", help="dump augmented training crops for inspection")
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", default=None)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train or finetune a network")
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", default=None)
    p.add_argument("--preset", default="desk-64", help="network preset when not resuming")
    p.add_argument("--init", default=None, help="checkpoint to initialize/resume from")
    p.add_argument("--train-config", default=None, help="training config JSON file")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--val-annotations", default=None)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV path")

    p = sub.add_parser("predict", help="run the full per-frame pipeline")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--annotations", required=True,
                   help="frames to process (and oracle boxes when used)")
    p.add_argument("--detector", choices=("oracle", "file", "blob"), default="oracle")
    p.add_argument("--detections", default=None, help="detection JSONL for --detector file")
    p.add_argument("--blob-threshold", type=float, default=45.0)
    p.add_argument("--blob-min-area", type=int, default=30)
    p.add_argument("--out", required=True, help="output prediction JSONL")

    p = sub.add_parser("eval", help="score predictions with PCK")
    p.add_argument("--pred", required=True, help="prediction JSONL")
    p.add_argument("--gt", required=True, help="ground-truth annotation JSONL")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--curve", default=None,
                   help="comma-separated increasing alphas for a PCK curve")
    p.add_argument("--report-json", default=None)
    p.add_argument("--report-csv", default=None)
    p.add_argument("--curve-csv", default=None)

    p = sub.add_parser("gradcheck", help="verify gradients with finite differences")
    p.add_argument("--preset", default="desk-64")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--sample", type=int, default=None,
                   help="probe at most N parameters per tensor instead of all")

    p = sub.add_parser("bench", help="time single-image forward passes")
    p.add_argument("--preset", default="desk-64")
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_synth(args):
    from .synth import SynthConfig, preset_config, write_dataset

    if args.preset and args.config:
        raise DataError("--preset and --config are mutually exclusive")
    if args.config:
        config = SynthConfig.from_dict(_load_json_file(args.config, "generator config"))
    else:
        config = preset_config(args.preset or "wide")
    if args.count is not None:
        config = SynthConfig.from_dict({**config.to_dict(), "count": args.count})
    _echo_config({"command": "synth", "seed": args.seed, "out": args.out,
                  "format": args.format, "generator": config.to_dict()})
    ann_path = write_dataset(config, args.seed, args.out, image_format=args.format)
    print(f"wrote {config.count} samples under {args.out} (annotations: {ann_path})")
    return 0


def _cmd_validate(args):
    from .dataset import load_annotations, load_detections

    _echo_config({"command": "validate", "annotations": args.annotations,
                  "detections": args.detections, "check_images": not args.no_check_images})
    annotations = load_annotations(args.annotations, check_images=not args.no_check_images)
    joint_counts = [len(a.skeleton) for a in annotations]
    print(f"{args.annotations}: {len(annotations)} annotations, "
          f"joints per sample min={min(joint_counts, default=0)} "
          f"max={max(joint_counts, default=0)}")
    if args.detections:
        detections = load_detections(args.detections)
        total = sum(len(v) for v in detections.values())
        print(f"{args.detections}: {total} detections over {len(detections)} frames")
    print("ok")
    return 0


def _cmd_augment(args):
    import numpy as np

    from .dataset import load_annotations, load_detections, make_crops
    from .imageio import read_image, write_image

    _echo_config({"command": "augment", "annotations": args.annotations,
                  "detections": args.detections, "side": args.side, "out": args.out})
    annotations = load_annotations(args.annotations)
    detections = load_detections(args.detections) if args.detections else {}
    crop_dir = os.path.join(args.out, "crops")
    os.makedirs(crop_dir, exist_ok=True)
    index_path = os.path.join(args.out, "crops.jsonl")
    count = 0
    with open(index_path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            image = read_image(ann.image)
            for crop in make_crops(ann, detections.get(ann.image, []), args.side, image=image):
                tag = "flip" if crop.provenance.flipped else "orig"
                name = f"{count:06d}_{crop.provenance.box_origin.replace('-', '')}_{tag}.png"
                raw = np.clip(np.rint(crop.pixels * 128.0 + 127.0), 0, 255).astype(np.uint8)
                write_image(os.path.join(crop_dir, name), raw)
                fh.write(json.dumps({
                    "crop": f"crops/{name}",
                    "sample": crop.provenance.sample_id,
                    "origin": crop.provenance.box_origin,
                    "flipped": crop.provenance.flipped,
                    "target": crop.target.tolist(),
                    "weights": crop.weights.tolist(),
                }) + "\n")
                count += 1
    print(f"wrote {count} crops under {args.out}")
    return 0


def _build_val_fn(args, side):
    if not args.val_annotations:
        return None
    from .dataset import load_annotations
    from .pipeline import build_eval_set, evaluate_pck

    val_set = build_eval_set(load_annotations(args.val_annotations), side=side)

    def val_fn(params):
        return evaluate_pck(params, val_set).overall

    return val_fn


def _cmd_train(args):
    from .dataset import load_annotations, load_detections
    from .network import Checkpoint, init, load_checkpoint, preset_network, save_checkpoint
    from .pipeline import build_training_set
    from .training import TrainConfig, train, write_log_csv

    file_cfg = _load_json_file(args.train_config, "training config") if args.train_config else {}
    config = TrainConfig.from_dict(file_cfg, batch_size=args.batch, lr=args.lr,
                                   iterations=args.iterations, seed=args.seed,
                                   momentum=args.momentum, eval_every=args.eval_every)

    start_iteration = 0
    if args.init:
        checkpoint = load_checkpoint(args.init)
        params = checkpoint.params
        start_iteration = checkpoint.iteration
        net_desc = {"resumed_from": args.init, "network": checkpoint.config.to_dict()}
    else:
        net_config = preset_network(args.preset)
        params = init(net_config, config.seed)
        net_desc = {"preset": args.preset}
    _echo_config({"command": "train", "annotations": args.annotations,
                  "detections": args.detections, "out": args.out,
                  "training": config.to_dict(), **net_desc})

    annotations = load_annotations(args.annotations)
    detections = load_detections(args.detections) if args.detections else {}
    dataset = build_training_set(annotations, detections, side=params.config.input_side)
    print(f"training on {dataset[0].shape[0]} crops from {len(annotations)} samples")

    val_fn = _build_val_fn(args, params.config.input_side)
    checkpoint, rows = train(config, dataset, params, val_fn=val_fn,
                             start_iteration=start_iteration)
    save_checkpoint(checkpoint, args.out)
    if args.log:
        write_log_csv(rows, args.log)
    final_loss = rows[-1].loss if rows else float("nan")
    print(f"finished at iteration {checkpoint.iteration}, loss {final_loss:.6g}; "
          f"checkpoint: {args.out}")
    return 0


def _cmd_predict(args):
    from .dataset import load_annotations, load_detections
    from .imageio import read_image
    from .inference import (
        BlobDetector,
        FileDetector,
        OracleDetector,
        predict_frame,
        write_predictions,
    )
    from .network import load_checkpoint

    _echo_config({"command": "predict", "checkpoint": args.checkpoint,
                  "annotations": args.annotations, "detector": args.detector,
                  "detections": args.detections, "out": args.out})
    checkpoint = load_checkpoint(args.checkpoint)
    annotations = load_annotations(args.annotations)
    if args.detector == "oracle":
        detector = OracleDetector(annotations)
    elif args.detector == "file":
        if not args.detections:
            raise DataError("--detector file requires --detections")
        detector = FileDetector(load_detections(args.detections))
    else:
        detector = BlobDetector(threshold=args.blob_threshold, min_area=args.blob_min_area)

    frames = []
    seen = set()
    for ann in annotations:
        if ann.image in seen:
            continue
        seen.add(ann.image)
        image = read_image(ann.image)
        frames.append(predict_frame(checkpoint.params, detector, image, ref=ann.image))
    write_predictions(frames, args.out)
    people = sum(len(f.people) for f in frames)
    print(f"predicted {people} people over {len(frames)} frames -> {args.out}")
    return 0


def _cmd_eval(args):
    from .dataset import load_annotations
    from .evaluation import pck, pck_curve
    from .inference import align_predictions, load_predictions

    _echo_config({"command": "eval", "pred": args.pred, "gt": args.gt,
                  "alpha": args.alpha, "curve": args.curve})
    frames = load_predictions(args.pred)
    annotations = load_annotations(args.gt, check_images=False)
    preds = align_predictions(frames, annotations)
    gts = [ann.skeleton for ann in annotations]
    try:
        report = pck(preds, gts, alpha=args.alpha)
    except ValueError as exc:
        raise DataError(str(exc))
    for name, score in report.groups.items():
        print(f"{name:9s} {score.pck:6.1f}  ({score.correct}/{score.evaluated})")
    print(f"{'all':9s} {report.overall:6.1f}  "
          f"({report.correct}/{report.evaluated}, {report.excluded} samples excluded)")
    if args.report_json:
        with open(args.report_json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    if args.report_csv:
        with open(args.report_csv, "w", encoding="utf-8") as fh:
            fh.write(report.csv_header() + "\n" + report.to_csv_row() + "\n")
    if args.curve:
        try:
            alphas = [float(v) for v in args.curve.split(",") if v]
            curve = pck_curve(preds, gts, alphas)
        except ValueError as exc:
            raise DataError(f"invalid --curve: {exc}")
        print(curve.to_csv(), end="")
        if args.curve_csv:
            with open(args.curve_csv, "w", encoding="utf-8") as fh:
                fh.write(curve.to_csv())
    return 0


def _cmd_gradcheck(args):
    from .gradcheck import run_gradcheck
    from .network import preset_network

    _echo_config({"command": "gradcheck", "preset": args.preset, "seed": args.seed,
                  "batch": args.batch, "eps": args.eps, "sample": args.sample})
    result = run_gradcheck(preset_network(args.preset), args.seed, eps=args.eps,
                           batch_size=args.batch, limit_per_tensor=args.sample)
    print(f"checked {result.checked} parameters; max relative error {result.max_rel_err:.3e}")
    print(f"worst: {result.worst}")
    if result.passed:
        print("gradient check PASSED (tolerance 1e-4)")
        return 0
    print("gradient check FAILED (tolerance 1e-4)", file=sys.stderr)
    return 3


def _cmd_bench(args, parser):
    import time

    import numpy as np

    from .network import forward, init, preset_network

    if args.iterations < 1:
        parser.error("--iterations must be >= 1")
    _echo_config({"command": "bench", "preset": args.preset,
                  "iterations": args.iterations, "seed": args.seed})
    config = preset_network(args.preset)
    params = init(config, args.seed)
    rng = np.random.default_rng(args.seed)
    batch = rng.uniform(-1, 1, size=(1, config.input_side, config.input_side,
                                     config.input_channels)).astype(np.float32)
    forward(params, batch)  # warm-up
    times = []
    for _ in range(args.iterations):
        t0 = time.perf_counter()
        forward(params, batch)
        times.append((time.perf_counter() - t0) * 1000.0)
    times = np.asarray(times)
    print(f"{args.preset}: single-image forward over {args.iterations} runs: "
          f"mean {times.mean():.2f} ms, median {np.median(times):.2f} ms, "
          f"std {times.std():.2f} ms, min {times.min():.2f} ms")
    print(f"({params.num_params()} parameters; reference GPU forward time "
          "for the full-size network is 16 ms)")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_limit(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a command is required")
    handlers = {
        "synth": _cmd_synth,
        "validate": _cmd_validate,
        "augment": _cmd_augment,
        "train": _cmd_train,
        "predict": _cmd_predict,
        "eval": _cmd_eval,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        if args.command == "bench":
            return _cmd_bench(args, parser)
        return handlers[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
