"""Command-line interface: synth / train / infer / nms / erf / eval.

Set AVLOC_LOG=debug|info|warning|error to control verbosity. The exit code
is 0 only when the requested subcommand fully succeeds. Flags that mirror
configuration fields override values loaded from --config files.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import core, dataio, evaluate, pipeline, postprocess, synthetic
from .heads import VideoLabel


def _setup_logging() -> None:
    level_name = os.environ.get("AVLOC_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> core.PipelineConfig:
    config = core.load_config(args.config) if getattr(args, "config", None) else core.PipelineConfig()
    overrides = dict(kv.split("=", 1) for kv in getattr(args, "opt", []) or [])
    if overrides:
        config = core.apply_overrides(config, overrides)
    return config


def _cmd_synth(args) -> int:
    spec = synthetic.SyntheticSpec.from_json(args.spec)
    manifest = synthetic.generate_synthetic_dataset(spec, args.out, split=args.split)
    print(f"wrote {len(manifest.entries)} videos under {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    manifest = dataio.load_manifest(args.manifest)
    records = pipeline.run_training(
        manifest, config, args.out, epochs=args.epochs, split=args.split
    )
    last = records[-1]
    print(
        f"trained {len(records)} epochs; final loss total={last.total:.6f} "
        f"frame={last.frame:.6f} boundary={last.boundary:.6f} contrastive={last.contrastive:.6f}"
    )
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    config = core.load_config(args.config) if args.config else None
    if config is not None and args.opt:
        config = core.apply_overrides(config, dict(kv.split("=", 1) for kv in args.opt))
    manifest = dataio.load_manifest(args.manifest)
    records = pipeline.run_inference(
        manifest, args.ckpt, args.out, config=config, top_k=args.top_k, split=args.split
    )
    print(f"wrote predictions for {len(records)} videos to {args.out}")
    return 0


def _rewrite_predictions(args, transform) -> int:
    records = dataio.load_predictions(args.infile)
    out = [transform(record) for record in records]
    target = args.out or args.infile
    dataio.save_predictions(target, out)
    print(f"wrote {len(out)} records to {target}")
    return 0


def _cmd_nms(args) -> int:
    def transform(record: dataio.PredictionRecord) -> dataio.PredictionRecord:
        plist = postprocess.ProposalList(record.video_id, record.duration, record.segments)
        suppressed = postprocess.soft_nms(plist, args.alpha, args.t1, args.t2)
        return dataio.PredictionRecord(
            record.video_id, record.duration, record.label, suppressed.proposals
        )

    return _rewrite_predictions(args, transform)


def _cmd_erf(args) -> int:
    config = _load_config(args)

    def transform(record: dataio.PredictionRecord) -> dataio.PredictionRecord:
        plist = postprocess.ProposalList(record.video_id, record.duration, record.segments)
        decision, final = postprocess.erf_decision(plist, record.duration, config)
        return dataio.PredictionRecord(
            record.video_id, record.duration, decision.label.value, final.proposals
        )

    return _rewrite_predictions(args, transform)


def _cmd_eval(args) -> int:
    budgets = tuple(int(x) for x in args.ar_budgets.split(","))
    thresholds = tuple(float(x) for x in args.ap_thresholds.split(","))
    report = evaluate.evaluate_run(
        args.pred,
        args.gt,
        ap_thresholds=thresholds,
        ar_budgets=budgets,
        gt_modality=args.gt_modality,
    )
    dataio.write_json(args.report, report.to_payload())
    print(report.format_table())
    print(f"report written to {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avloc",
        description="Audio-visual temporal forgery detection and localization pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="JSON file describing the synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="train", choices=dataio.SPLITS)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--out", required=True, help="checkpoint directory to write")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--split", default="train", choices=dataio.SPLITS)
    p.add_argument("--opt", action="append", metavar="KEY=VALUE",
                   help="configuration override; wins over --config")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="run the full pipeline and write predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--out", required=True, help="predictions JSON to write")
    p.add_argument("--config", help="optional config; must be checkpoint-compatible")
    p.add_argument("--top-k", type=int, default=pipeline.DEFAULT_PROPOSALS_PER_MODALITY)
    p.add_argument("--split", default=None, choices=dataio.SPLITS)
    p.add_argument("--opt", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("nms", help="apply soft-NMS to a predictions file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--t2", type=float, required=True)
    p.add_argument("--out", help="output file (default: rewrite input)")
    p.set_defaults(func=_cmd_nms)

    p = sub.add_parser("erf", help="apply the full-video rule set to a predictions file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", help="output file (default: rewrite input)")
    p.add_argument("--config")
    p.add_argument("--opt", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_erf)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="annotations JSON")
    p.add_argument("--report", required=True, help="report JSON to write")
    p.add_argument("--gt-modality", default="union", choices=("union", "visual", "audio"))
    p.add_argument("--ap-thresholds", default="0.5,0.75,0.95")
    p.add_argument("--ar-budgets", default="10,20,50,100")
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # argparse handles its own errors; we report ours
        print(f"error: {exc}", file=sys.stderr)
        logging.getLogger("avloc").debug("failure detail", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
