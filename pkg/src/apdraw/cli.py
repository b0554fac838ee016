"""Command-line entrypoint. One subcommand per pipeline stage.

Exit codes: 0 success, 1 validation error (bad flags, bad config, missing
or malformed inputs), 2 runtime error. Every subcommand honors --dry-run,
which validates inputs and prints the execution plan without side effects.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np
import torch

from . import config as config_mod
from .backbones import BackboneConfigError, load_backbones
from .config import ConfigError, load_config
from .corpus import ManifestError, NoFaceError, SyntheticFaceParser, load_manifest, preprocess
from .losses import LossConfigError
from .networks import (
    CheckpointError,
    DrawingGenerator,
    QualityModel,
    StyleClassifier,
    as_style_tensor,
    build_models,
    load_model,
    save_model,
)
from .ranking import (
    aggregate_scores,
    build_metric_dataset,
    normalize_scores,
    read_answer_log,
    read_metric_dataset,
    write_metric_dataset,
    write_score_csv,
)

VALIDATION_ERRORS = (
    ConfigError,
    ManifestError,
    NoFaceError,
    LossConfigError,
    BackboneConfigError,
    CheckpointError,
    FileNotFoundError,
    ValueError,
)

BASIS_STYLES = {
    "style1": (1.0, 0.0, 0.0),
    "style2": (0.0, 1.0, 0.0),
    "style3": (0.0, 0.0, 1.0),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract here is usage text, exit 1."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(parser: _Parser) -> None:
    parser.add_argument("--config", default=None, help="TOML config file")
    parser.add_argument("--profile", default=None, choices=["full", "toy"])
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key, e.g. train.epochs=2")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate inputs and print the plan without running")
    parser.add_argument("--seed", type=int, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="apdraw", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def cmd(name: str, help_text: str) -> _Parser:
        p = sub.add_parser(name, help=help_text)
        _common(p)
        return p

    p = cmd("train-classifier", "train the style classifier on tagged drawings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output checkpoint file")
    p.add_argument("--steps", type=int, default=None)

    p = cmd("train-metric", "fit the quality model to a scored-drawing dataset")
    p.add_argument("--dataset", required=True, help="tab-separated path/score rows")
    p.add_argument("--out", required=True, help="output checkpoint file")
    p.add_argument("--steps", type=int, default=None)

    p = cmd("train-gan", "run the adversarial training loop")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output checkpoint directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--log", default=None, help="JSON-lines step log path")
    p.add_argument("--metric-checkpoint", default=None, help="quality model to guide training")
    p.add_argument("--classifier-checkpoint", default=None)

    p = cmd("infer", "translate a photo into drawings")
    p.add_argument("--photo", required=True)
    p.add_argument("--checkpoint", required=True, help="generator checkpoint file or directory")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--style", default=None, metavar="A,B,C")
    group.add_argument("--styles", default=None, choices=["all"])
    p.add_argument("--out", required=True, help="output PNG path (or directory for --styles all)")

    p = cmd("rank", "aggregate preference answers into normalized scores")
    p.add_argument("--answers", required=True, help="JSON-lines answer log")
    p.add_argument("--out", required=True, help="output CSV path")

    p = cmd("metric-dataset", "build the (drawing, score) regression dataset")
    p.add_argument("--answers", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output TSV path")

    p = cmd("style-search", "optimize a style vector to match a target drawing")
    p.add_argument("--photo", required=True)
    p.add_argument("--target", required=True, help="target drawing image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)

    p = cmd("dissect", "label generator units against face regions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="photos to probe with")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--style", default="1,0,0", metavar="A,B,C")

    p = cmd("eval-fid", "Frechet distance between two image sets")
    p.add_argument("--generated", required=True, help="directory of images or manifest")
    p.add_argument("--reference", required=True)

    p = cmd("eval-quality", "mean predicted quality of an image set")
    p.add_argument("--images", required=True, help="directory of images or manifest")
    p.add_argument("--checkpoint", required=True, help="quality model checkpoint")

    p = cmd("serve", "run the study and generation HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)

    return parser


def _load_cfg(args) -> dict:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, profile=args.profile, overrides=overrides)


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _parse_style(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"style must be three comma-separated weights, got {text!r}")
    vec = np.array([float(x) for x in parts], dtype=np.float32)
    if (vec < 0).any() or abs(float(vec.sum()) - 1.0) > 1e-3:
        raise ValueError(f"style weights must be non-negative and sum to 1, got {text!r}")
    return vec


def _collect_images(spec_path: str, cfg: dict, kind: str) -> torch.Tensor:
    size = cfg["corpus"]["image_size"]
    if os.path.isdir(spec_path):
        files = sorted(
            f for pattern in ("*.png", "*.jpg", "*.jpeg")
            for f in glob.glob(os.path.join(spec_path, pattern))
        )
        if not files:
            raise ValueError(f"no images found under {spec_path}")
        return torch.stack([preprocess(f, size, kind=kind) for f in files])
    records = [r for r in load_manifest(spec_path) if r.kind == kind]
    if not records:
        raise ValueError(f"manifest {spec_path} has no {kind} records")
    return torch.stack([preprocess(r.path, size, kind=kind) for r in records])


def _load_generator(path: str, cfg: dict) -> DrawingGenerator:
    g = DrawingGenerator(
        base_channels=cfg["networks"]["base_channels"],
        n_resblocks=cfg["networks"]["n_resblocks"],
        use_style=not cfg["train"]["ablations"]["no_style_feature"],
    )
    file = os.path.join(path, "g.pt") if os.path.isdir(path) else path
    load_model(_require(file, "generator checkpoint"), g, cfg)
    g.eval()
    return g


def _plan(args, cfg: dict, **details) -> int:
    plan = {"command": args.command, "profile": cfg["profile"], "dry_run": True}
    plan.update(details)
    print(json.dumps(plan))
    return 0


def _cmd_train_classifier(args, cfg):
    from .trainer import train_classifier

    records = load_manifest(_require(args.manifest, "manifest"))
    if args.dry_run:
        return _plan(args, cfg, records=len(records), out=args.out)
    model = StyleClassifier(base_channels=max(8, cfg["networks"]["base_channels"] // 2))
    model, history = train_classifier(model, records, cfg, steps=args.steps, seed=cfg["seed"])
    save_model(args.out, model, cfg, "classifier")
    print(f"classifier saved to {args.out} (final loss {history[-1]:.6g})")
    return 0


def _cmd_train_metric(args, cfg):
    from .trainer import train_metric

    rows = read_metric_dataset(_require(args.dataset, "dataset"))
    if args.dry_run:
        return _plan(args, cfg, rows=len(rows), out=args.out)
    model = QualityModel(base_channels=max(8, cfg["networks"]["base_channels"] // 2))
    model, history = train_metric(model, rows, cfg, steps=args.steps, seed=cfg["seed"])
    save_model(args.out, model, cfg, "quality")
    print(f"quality model saved to {args.out} (final mse {history[-1]:.6g})")
    return 0


def _cmd_train_gan(args, cfg):
    from .trainer import checkpoint_save, train_gan

    records = load_manifest(_require(args.manifest, "manifest"))
    if args.epochs is not None:
        config_mod.set_by_path(cfg, "train.epochs", args.epochs)
        config_mod.validate_config(cfg)
    if args.dry_run:
        return _plan(args, cfg, records=len(records), epochs=cfg["train"]["epochs"], out=args.out)
    bb = load_backbones(cfg)
    models = build_models(cfg, seed=cfg["seed"])
    if args.classifier_checkpoint:
        load_model(_require(args.classifier_checkpoint, "classifier checkpoint"), models.classifier, cfg)
    if args.metric_checkpoint:
        load_model(_require(args.metric_checkpoint, "metric checkpoint"), models.quality, cfg)
    reports = train_gan(models, records, cfg, bb, out_dir=args.out, log_path=args.log)
    print(f"trained {len(reports)} epochs; final total loss {reports[-1].total:.6g}")
    return 0


def _cmd_infer(args, cfg):
    photo = preprocess(_require(args.photo, "photo"), cfg["corpus"]["image_size"], kind="photo")
    if args.styles == "all":
        styles = {name: np.array(vec, dtype=np.float32) for name, vec in BASIS_STYLES.items()}
    else:
        styles = {"out": _parse_style(args.style or "1,0,0")}
    if args.dry_run:
        return _plan(args, cfg, photo=args.photo, styles=sorted(styles), out=args.out)
    g = _load_generator(args.checkpoint, cfg)
    from .serve import _tensor_png

    multi = len(styles) > 1
    if multi:
        os.makedirs(args.out, exist_ok=True)
    for name, vec in styles.items():
        with torch.no_grad():
            s = as_style_tensor(vec, batch=1)
            drawing = g(photo[None], s)[0] if g.use_style else g(photo[None])[0]
        out = os.path.join(args.out, f"{name}.png") if multi else args.out
        with open(out, "wb") as fh:
            fh.write(_tensor_png(drawing))
        print(f"wrote {out}")
    return 0


def _cmd_rank(args, cfg):
    answers = read_answer_log(_require(args.answers, "answer log"))
    if args.dry_run:
        return _plan(args, cfg, answers=len(answers), out=args.out)
    table = normalize_scores(aggregate_scores(answers))
    write_score_csv(table, args.out)
    print(f"wrote {len(table.entries)} scores to {args.out}")
    return 0


def _cmd_metric_dataset(args, cfg):
    answers = read_answer_log(_require(args.answers, "answer log"))
    records = load_manifest(_require(args.manifest, "manifest"))
    if args.dry_run:
        return _plan(args, cfg, answers=len(answers), records=len(records), out=args.out)
    table = normalize_scores(aggregate_scores(answers))
    rows = build_metric_dataset(table, records)
    write_metric_dataset(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_style_search(args, cfg):
    from .styles import search_new_style, write_trace_csv

    size = cfg["corpus"]["image_size"]
    photo = preprocess(_require(args.photo, "photo"), size, kind="photo")
    target = preprocess(_require(args.target, "target drawing"), size, kind="drawing")
    steps = args.steps if args.steps is not None else cfg["styles"]["search_steps"]
    lr = args.lr if args.lr is not None else cfg["styles"]["search_lr"]
    if args.dry_run:
        return _plan(args, cfg, steps=steps, lr=lr, out=args.out)
    g = _load_generator(args.checkpoint, cfg)
    bb = load_backbones(cfg)
    state = search_new_style(
        g, photo[None], target[None], steps=steps, lr=lr, seed=cfg["seed"],
        features=bb.features, bins=cfg["styles"]["bins"],
        project=cfg["styles"]["project_simplex"],
    )
    write_trace_csv(state.trace, args.out)
    s = ",".join(f"{x:.6f}" for x in state.s)
    print(f"best style [{s}] loss {state.loss:.6g}; trace written to {args.out}")
    return 0


def _cmd_dissect(args, cfg):
    from .dissect import label_units, summarize_reports, write_report_csv

    records = [r for r in load_manifest(_require(args.manifest, "manifest")) if r.kind == "photo"]
    if not records:
        raise ValueError("manifest has no photos")
    style = _parse_style(args.style)
    if args.dry_run:
        return _plan(args, cfg, photos=len(records), out=args.out)
    g = _load_generator(args.checkpoint, cfg)
    size = cfg["corpus"]["image_size"]
    photos = [preprocess(r.path, size, kind="photo") for r in records]
    extra = None
    if g.use_style:
        extra = lambda x: (as_style_tensor(style, batch=x.shape[0]),)
    reports = label_units(
        g, photos, SyntheticFaceParser(),
        dilation_frac=cfg["corpus"]["dilation_frac"],
        iou_threshold=cfg["dissect"]["iou_threshold"],
        n_candidates=cfg["dissect"]["n_candidates"],
        extra_inputs=extra,
    )
    write_report_csv(reports, args.out)
    print(json.dumps(summarize_reports(reports)))
    return 0


def _cmd_eval_fid(args, cfg):
    from .trainer import evaluate_fid

    generated = _collect_images(_require(args.generated, "generated set"), cfg, "drawing")
    reference = _collect_images(_require(args.reference, "reference set"), cfg, "drawing")
    if args.dry_run:
        return _plan(args, cfg, generated=int(generated.shape[0]), reference=int(reference.shape[0]))
    bb = load_backbones(cfg)
    value = evaluate_fid(generated, reference, bb.fid)
    print(f"fid {value:.6g}")
    return 0


def _cmd_eval_quality(args, cfg):
    from .trainer import evaluate_quality

    images = _collect_images(_require(args.images, "image set"), cfg, "drawing")
    if args.dry_run:
        return _plan(args, cfg, images=int(images.shape[0]))
    model = QualityModel(base_channels=max(8, cfg["networks"]["base_channels"] // 2))
    load_model(_require(args.checkpoint, "quality checkpoint"), model, cfg)
    value = evaluate_quality(images, model)
    print(f"quality {value:.6g}")
    return 0


def _cmd_serve(args, cfg):
    if args.dry_run:
        from .serve import create_app

        app = create_app(cfg)
        routes = sorted(r.path for r in app.routes if r.path.startswith("/api"))
        return _plan(args, cfg, routes=routes, port=args.port or cfg["serve"]["port"])
    from .serve import run_server

    run_server(cfg, host=args.host, port=args.port)
    return 0


HANDLERS = {
    "train-classifier": _cmd_train_classifier,
    "train-metric": _cmd_train_metric,
    "train-gan": _cmd_train_gan,
    "infer": _cmd_infer,
    "rank": _cmd_rank,
    "metric-dataset": _cmd_metric_dataset,
    "style-search": _cmd_style_search,
    "dissect": _cmd_dissect,
    "eval-fid": _cmd_eval_fid,
    "eval-quality": _cmd_eval_quality,
    "serve": _cmd_serve,
}


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    if args.command is None:
        print(parser.format_usage(), file=sys.stderr)
        return 1
    try:
        cfg = _load_cfg(args)
        return HANDLERS[args.command](args, cfg)
    except VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as err:
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
