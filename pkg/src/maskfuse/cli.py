"""``maskfuse`` command line.

Exit codes: 0 success, 1 validation failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from maskfuse.errors import ConfigError, InputError, MaskFuseError, ValidationError
from maskfuse.evaluation import EvalParams, evaluate
from maskfuse.io import dump_predictions, load_ground_truth, load_predictions, write_json
from maskfuse.nms import METHODS, OVERLAPS, NmsConfig, suppress
from maskfuse.pipeline import STAGES, load_config, run_pipeline, validate_inputs

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2


def _stage_list(text: str) -> list[str]:
    stages = [s.strip() for s in text.split(",") if s.strip()]
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown stage(s) {unknown}; choose from {list(STAGES)}")
    return stages


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured pipeline")
    run.add_argument("--config", required=True)
    run.add_argument("--jobs", type=int, default=1, help="datasets processed in parallel")
    run.add_argument("--stage-override", type=_stage_list, help="comma-separated stage list")

    validate = sub.add_parser("validate", help="check every input named by a config")
    validate.add_argument("--config", required=True)

    ev = sub.add_parser("eval", help="mask mAP/mAR of one prediction file")
    ev.add_argument("--gt", required=True)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--max-dets", type=int, default=100)
    ev.add_argument("--overlap", choices=("mask", "box"), default="mask")

    nms = sub.add_parser("nms", help="suppress one prediction file")
    nms.add_argument("--pred", required=True)
    nms.add_argument("--method", choices=METHODS, default="soft-linear")
    nms.add_argument("--overlap", choices=OVERLAPS, default="box-iou")
    nms.add_argument("--iou-threshold", type=float, default=0.3)
    nms.add_argument("--sigma", type=float, default=0.5)
    nms.add_argument("--prune-threshold", type=float, default=0.001)
    nms.add_argument("--out", help="output file (default: stdout)")
    return parser


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.stage_override:
        cfg = cfg.with_stages(args.stage_override)
    problems = validate_inputs(cfg)
    if problems:
        for line in problems:
            print(line, file=sys.stderr)
        return EXIT_INVALID
    report = run_pipeline(cfg, jobs=args.jobs)
    if report is not None:
        print(report.render_table())
    print(f"outputs written to {cfg.output_dir}")
    return EXIT_OK


def _validate(args) -> int:
    cfg = load_config(args.config)
    problems = validate_inputs(cfg)
    for line in problems:
        print(line)
    if problems:
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def _eval(args) -> int:
    gt = load_ground_truth(args.gt)
    preds = load_predictions(args.pred, gt)
    result = evaluate(preds, gt, EvalParams(max_detections=args.max_dets, overlap=args.overlap))
    print(json.dumps({"mAP": round(result.map, 2), "mAR": round(result.mar, 2)}))
    return EXIT_OK


def _nms(args) -> int:
    try:
        cfg = NmsConfig(args.method, args.overlap, args.iou_threshold, args.sigma, args.prune_threshold)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = dump_predictions(suppress(load_predictions(args.pred), cfg))
    if args.out:
        write_json(args.out, out)
    else:
        print(json.dumps(out, indent=1))
    return EXIT_OK


COMMANDS = {"run": _run, "validate": _validate, "eval": _eval, "nms": _nms}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        for line in exc.diagnostics:
            print(line, file=sys.stderr)
        return EXIT_INVALID
    except (InputError, MaskFuseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
