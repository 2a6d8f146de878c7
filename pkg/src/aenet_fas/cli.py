"""Command-line pipeline: synth -> split -> train -> score -> eval -> report.

Exit codes: 0 success, 2 invalid input or configuration, 3 undefined metric.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from aenet_fas import metrics
from aenet_fas.aenet import VARIANTS, ModelConfig, build_model, load_checkpoint, save_checkpoint
from aenet_fas.datamodel import (
    DEFAULT_REGISTRY,
    generate_synthetic,
    load_annotations,
    load_registry,
    save_annotations,
    save_registry,
)
from aenet_fas.errors import AenetError, UndefinedMetricError
from aenet_fas.scoring import load_scores, save_scores
from aenet_fas.splits import (
    Protocol,
    ProtocolSpec,
    apply_protocol,
    load_split,
    make_split,
    save_split,
)
from aenet_fas.training import score_dataset, train_model

log = logging.getLogger("aenet_fas")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNDEFINED_METRIC = 3


class InputError(AenetError):
    pass


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _existing(path, what: str) -> Path:
    if path is None:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        parser.read_string(_existing(path, "config").read_text(encoding="utf-8"))
    return parser


def _section(cfg: configparser.ConfigParser, name: str) -> dict:
    return dict(cfg[name]) if cfg.has_section(name) else {}


def resolve_model_config(args, cfg: configparser.ConfigParser) -> ModelConfig:
    model_section = _section(cfg, "model")
    variant = args.variant or model_section.pop("variant", None) or "aenet-csg"
    model_section.pop("variant", None)
    config = ModelConfig.for_variant(variant)
    config = config.with_overrides(model_section).with_overrides(_section(cfg, "train"))
    overrides = {}
    for flag, key in (("epochs", "epochs"), ("input_size", "input_size"),
                      ("backbone", "backbone_id"), ("batch_size", "batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    return config.with_overrides(overrides)


def resolve_protocol(args, cfg: configparser.ConfigParser) -> ProtocolSpec:
    section = _section(cfg, "protocol")
    if getattr(args, "protocol", None):
        section["protocol"] = args.protocol
    return ProtocolSpec.from_mapping(section)


def _registry(args):
    if getattr(args, "registry", None):
        return load_registry(_existing(args.registry, "registry"))
    return DEFAULT_REGISTRY


def _folds(args, cfg):
    dataset = load_annotations(_existing(args.dataset, "dataset"))
    split = load_split(_existing(args.split, "split"))
    spec = resolve_protocol(args, cfg)
    return apply_protocol(dataset, split, spec, _registry(args)), spec


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = read_config(args.config)
    section = _section(cfg, "synth")
    n_subjects = args.subjects or int(section.get("subjects", 50))
    per_subject = args.images_per_subject or int(section.get("images_per_subject", 4))
    live_ratio = args.live_ratio if args.live_ratio is not None else float(section.get("live_ratio", 0.25))
    dataset = generate_synthetic(n_subjects, per_subject, live_ratio, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_annotations(dataset, out)
    if args.registry_out:
        save_registry(DEFAULT_REGISTRY, args.registry_out)
    print(f"wrote {len(dataset)} samples ({dataset.count('live')} live) to {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = read_config(args.config)
    dataset = load_annotations(_existing(args.dataset, "dataset"))
    ratio = tuple(float(r) for r in args.ratio.split(","))
    split = make_split(dataset, ratio, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_split(split, out)
    print(f"wrote split of {len(split)} images to {out}")
    spec = resolve_protocol(args, cfg)
    for fold in apply_protocol(dataset, split, spec, _registry(args)):
        print(f"  {spec.protocol.value} fold {fold.name}: train {len(fold.train)}, test {len(fold.test)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    config = resolve_model_config(args, cfg)
    folds, spec = _folds(args, cfg)
    out = Path(args.out)
    summary = {"variant": config.variant, "protocol": spec.protocol.value, "seed": args.seed, "folds": {}}
    for fold in folds:
        fold_dir = out / fold.name
        fold_dir.mkdir(parents=True, exist_ok=True)
        model = build_model(config, seed=args.seed)
        history = train_model(model, fold.train, seed=args.seed)
        save_checkpoint(model, fold_dir / "model.pt", seed=args.seed, fold=fold.name)
        with open(fold_dir / "loss_log.jsonl", "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"seed": args.seed, "variant": config.variant, "fold": fold.name}) + "\n")
            for entry in history.steps:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        summary["folds"][fold.name] = {"epoch_losses": history.epoch_losses, "n_train": len(fold.train)}
        print(f"fold {fold.name}: epoch losses " + ", ".join(f"{v:.4f}" for v in history.epoch_losses))
    _dump_json(summary, out / "train_summary.json")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = read_config(args.config)
    folds, spec = _folds(args, cfg)
    model_dir = _existing(args.models, "models")
    records = []
    variant = None
    for fold in folds:
        model, _ = load_checkpoint(_existing(model_dir / fold.name / "model.pt", "checkpoint"))
        variant = model.config.variant
        records.extend(score_dataset(model, fold.test, fold=fold.name))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scores(records, out, seed=args.seed, variant=variant, protocol=spec.protocol.value)
    print(f"wrote {len(records)} scores to {out}")
    return EXIT_OK


def evaluate_score_file(path, source_path=None) -> dict:
    header, records = load_scores(path)
    folds: dict[str, list] = {}
    for r in records:
        folds.setdefault(r.fold or "all", []).append(r)
    result: dict = {
        "variant": header.get("variant"),
        "protocol": header.get("protocol"),
        "seed": header.get("seed"),
        "folds": {name: metrics.evaluate(recs).to_dict() for name, recs in folds.items()},
    }
    if len(folds) > 1:
        reports = [metrics.MetricReport.from_dict(d) for d in result["folds"].values()]
        result["aggregate"] = {k: list(v) for k, v in metrics.aggregate(reports).items()}
    if source_path is not None:
        _, source = load_scores(source_path)
        tau = metrics.eer(source).threshold
        result["hter"] = {"threshold": tau, "value": metrics.hter(records, tau)}
    return result


def cmd_eval(args) -> int:
    scores = _existing(args.scores, "scores")
    source = _existing(args.source_scores, "source-scores") if args.source_scores else None
    result = evaluate_score_file(scores, source)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(result, out)
    print(render_report(result))
    return EXIT_OK


def render_report(result: dict) -> str:
    rows: dict = {
        name: metrics.MetricReport.from_dict(d) for name, d in result["folds"].items()
    }
    if "aggregate" in result:
        rows["mean±std"] = {k: tuple(v) for k, v in result["aggregate"].items()}
    title = f"variant={result.get('variant')} protocol={result.get('protocol')}"
    parts = [title, metrics.format_table(rows)]
    if "hter" in result:
        parts.append(f"HTER {100 * result['hter']['value']:.2f}% at threshold {result['hter']['threshold']:.6g}")
    for name, rep in rows.items():
        if not isinstance(rep, metrics.MetricReport):
            continue
        if rep.apcer_per_spoof_type:
            parts.append(metrics.format_breakdown(rep.apcer_per_spoof_type, f"[{name}] APCER by spoof type"))
        if rep.bpcer_per_face_attribute:
            parts.append(metrics.format_breakdown(rep.bpcer_per_face_attribute, f"[{name}] BPCER by face attribute"))
    return "\n\n".join(parts)


def cmd_report(args) -> int:
    path = _existing(args.report, "report")
    try:
        result = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a report file ({exc.msg})") from None
    text = render_report(result)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file ([synth], [model], [train], [protocol])")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", help="annotation file")
    data.add_argument("--split", help="split file")
    data.add_argument("--protocol", choices=[p.value for p in Protocol])
    data.add_argument("--registry", help="sensor registry file (default: built-in)")

    parser = argparse.ArgumentParser(prog="aenet-fas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic annotation file")
    p.add_argument("--subjects", type=int)
    p.add_argument("--images-per-subject", type=int)
    p.add_argument("--live-ratio", type=float)
    p.add_argument("--registry-out")
    p.set_defaults(func=cmd_synth, out_required=True)

    p = sub.add_parser("split", parents=[common, data], help="subject-disjoint 8:1:1 split")
    p.add_argument("--ratio", default="8,1,1")
    p.set_defaults(func=cmd_split, out_required=True)

    p = sub.add_parser("train", parents=[common, data], help="train one model per protocol fold")
    p.add_argument("--variant", choices=list(VARIANTS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--input-size", type=int)
    p.add_argument("--backbone")
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_train, out_required=True)

    p = sub.add_parser("score", parents=[common, data], help="score protocol test sets")
    p.add_argument("--models", help="directory written by `train`")
    p.set_defaults(func=cmd_score, out_required=True)

    p = sub.add_parser("eval", parents=[common], help="metric report from a score file")
    p.add_argument("--scores", help="score file")
    p.add_argument("--source-scores", help="source-domain score file; adds HTER at its EER threshold")
    p.set_defaults(func=cmd_eval, out_required=True)

    p = sub.add_parser("report", parents=[common], help="render tables from an eval report")
    p.add_argument("--report", help="JSON written by `eval`")
    p.set_defaults(func=cmd_report, out_required=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.out_required and not args.out:
        print(f"error: {args.command} needs --out", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except UndefinedMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED_METRIC
    except (AenetError, ValueError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
