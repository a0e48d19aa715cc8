"""Command-line pipeline driver.

Subcommands: synth, perturb, pretrain, teacher, distill, finetune, eval,
report. Every command derives its randomness from --seed, writes exactly
one JSON manifest recording inputs (hashed), outputs, config, and seed,
and produces byte-identical outputs when re-run (the manifest's own
timestamp aside).

Exit codes: 0 success; 2 usage or input errors; 3 runtime or training
failures. Relative input paths are also tried against $CMKT_DATA_DIR.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Vocab, load_pairs
from .distillation import DistillSpec, TeacherSpec, distill, train_teacher
from .encoders import FeatureBank
from .errors import CmktError, ConfigError, TrainingError
from .evaluation import (
    FinetuneConfig,
    evaluate,
    finetune,
    load_mcqa,
    load_runs,
    low_resource_protocol,
    plot_series,
    report,
    save_runs,
    supervised_protocol,
)
from .perturbation import (
    FrequencyOracle,
    Lexicon,
    MockOracle,
    PosTagger,
    load_records,
    perturb_caption,
    save_records,
)
from .seeding import rng_for
from .synth import SynthConfig, generate_world, load_oracle_table, save_world
from .training import (
    METHOD_NAMES,
    PretrainConfig,
    TrainingData,
    config_from_dict,
    config_to_dict,
    pretrain,
    write_loss_log,
)

DATA_DIR_VAR = "CMKT_DATA_DIR"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _resolve_input(raw: str) -> Path:
    """Input paths are taken as given, falling back to $CMKT_DATA_DIR."""
    path = Path(raw)
    if path.exists() or path.is_absolute():
        return path
    root = os.environ.get(DATA_DIR_VAR)
    if root:
        candidate = Path(root) / path
        if candidate.exists():
            return candidate
    return path


def _require_file(raw: str, what: str) -> Path:
    path = _resolve_input(raw)
    if not path.exists():
        raise ConfigError(f"{what} not found: {raw}")
    return path


def _hash_path(path: Path) -> str:
    h = hashlib.blake2b(digest_size=16)
    if path.is_dir():
        for member in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(member.relative_to(path)).encode())
            h.update(member.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(
    manifest_path: Path,
    command: str,
    config: dict,
    inputs: dict[str, Path],
    outputs: list[Path],
    seed: int,
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {
            name: {"path": str(path), "blake2b": _hash_path(path)}
            for name, path in inputs.items()
        },
        "outputs": sorted(str(p) for p in outputs),
        "seed": seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_json_config(raw: str | None) -> dict:
    if raw is None:
        return {}
    path = _require_file(raw, "config file")
    try:
        loaded = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return loaded


def _pretrain_config(args) -> PretrainConfig:
    fields = _load_json_config(args.config)
    if args.seed is not None:
        fields["seed"] = args.seed
    base = config_to_dict(PretrainConfig())
    base.update(fields)
    return config_from_dict(base)


def _finetune_config(args) -> FinetuneConfig:
    fields = _load_json_config(args.config)
    unknown = set(fields) - {f.name for f in dataclasses.fields(FinetuneConfig)}
    if unknown:
        raise ConfigError(f"unknown fine-tune config fields: {sorted(unknown)}")
    if "learning_rates" in fields:
        fields["learning_rates"] = tuple(fields["learning_rates"])
    if args.seed is not None:
        fields["seed"] = args.seed
    return FinetuneConfig(**fields)


def _finetune_config_dict(config: FinetuneConfig) -> dict:
    return {
        "learning_rates": list(config.learning_rates),
        "max_epochs_low_resource": config.max_epochs_low_resource,
        "max_epochs_full": config.max_epochs_full,
        "batch_size": config.batch_size,
        "seed": config.seed,
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    fields = _load_json_config(args.config)
    if args.seed is not None:
        fields["seed"] = args.seed
    unknown = set(fields) - {f.name for f in dataclasses.fields(SynthConfig)}
    if unknown:
        raise ConfigError(f"unknown synth config fields: {sorted(unknown)}")
    config = SynthConfig(**fields)
    out = Path(args.out)
    artifacts = generate_world(config)
    paths = save_world(artifacts, out)
    _write_manifest(
        out / "manifest.json",
        "synth",
        {f.name: getattr(config, f.name) for f in dataclasses.fields(SynthConfig)},
        {},
        list(paths.values()),
        config.seed,
    )
    print(f"world written to {out} ({len(artifacts.pairs)} pairs)")
    return EXIT_OK


def cmd_perturb(args) -> int:
    seed = args.seed if args.seed is not None else 0
    pairs_path = _require_file(args.pairs, "pairs file")
    lexicon_path = _require_file(args.lexicon, "lexicon file")
    tags_path = _require_file(args.tags, "tag file")
    pairs = load_pairs(pairs_path)
    lexicon = Lexicon.load(lexicon_path)
    tagger = PosTagger.load(tags_path)
    inputs = {"pairs": pairs_path, "lexicon": lexicon_path, "tags": tags_path}
    if args.oracle == "table":
        if not args.oracle_table:
            raise ConfigError("--oracle table requires --oracle-table")
        table_path = _require_file(args.oracle_table, "oracle table")
        oracle = MockOracle(load_oracle_table(table_path))
        inputs["oracle_table"] = table_path
    else:
        oracle = FrequencyOracle([p.caption for p in pairs])

    records = []
    train = [p for p in pairs if p.split == "train"]
    for index, pair in enumerate(train):
        records.extend(
            perturb_caption(
                pair.caption, tagger, oracle, lexicon, rng_for(seed, "perturb", index)
            )
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_records(records, out)
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "perturb",
        {"oracle": args.oracle, "captions": len(train)},
        inputs,
        [out],
        seed,
    )
    print(f"{len(records)} perturbation records from {len(train)} captions -> {out}")
    return EXIT_OK


def _load_training_data(args) -> tuple[TrainingData, dict[str, Path]]:
    pairs_path = _require_file(args.pairs, "pairs file")
    vocab_path = _require_file(args.vocab, "vocab file")
    inputs = {"pairs": pairs_path, "vocab": vocab_path}
    bank = None
    if getattr(args, "bank", None):
        bank_path = _require_file(args.bank, "feature bank")
        bank = FeatureBank.load(bank_path)
        inputs["bank"] = bank_path
    perturbations = None
    if getattr(args, "perturbations", None):
        records_path = _require_file(args.perturbations, "perturbation file")
        perturbations = load_records(records_path)
        inputs["perturbations"] = records_path
    data = TrainingData(
        pairs=load_pairs(pairs_path),
        vocab=Vocab.load(vocab_path),
        bank=bank,
        perturbations=perturbations,
    )
    return data, inputs


def _write_pretrain_outputs(result, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for index, ckpt in enumerate(result.checkpoints, start=1):
        path = out / f"checkpoint-epoch-{index:03d}.ckpt"
        save_checkpoint(ckpt, path)
        outputs.append(path)
    final_path = out / "checkpoint-final.ckpt"
    save_checkpoint(result.final, final_path)
    outputs.append(final_path)
    loss_path = out / "loss.csv"
    write_loss_log(result.loss_rows, result.components, loss_path)
    outputs.append(loss_path)
    return outputs


def cmd_pretrain(args) -> int:
    config = _pretrain_config(args)
    data, inputs = _load_training_data(args)
    result = pretrain(args.method, data, config)
    out = Path(args.out)
    outputs = _write_pretrain_outputs(result, out)
    snapshot = config_to_dict(config)
    snapshot["method"] = args.method
    _write_manifest(out / "manifest.json", "pretrain", snapshot, inputs, outputs, config.seed)
    final_total = result.loss_rows[-1]["total"] if result.loss_rows else float("nan")
    print(f"{args.method}: {len(result.loss_rows)} steps, final loss {final_total:.4f} -> {out}")
    return EXIT_OK


def cmd_teacher(args) -> int:
    config = _pretrain_config(args)
    data, inputs = _load_training_data(args)
    result = train_teacher(TeacherSpec(objective=args.objective), data, config)
    out = Path(args.out)
    outputs = _write_pretrain_outputs(result, out)
    snapshot = config_to_dict(config)
    snapshot["objective"] = args.objective
    _write_manifest(out / "manifest.json", "teacher", snapshot, inputs, outputs, config.seed)
    print(f"teacher:{args.objective} trained -> {out}")
    return EXIT_OK


def cmd_distill(args) -> int:
    config = _pretrain_config(args)
    teacher_path = _require_file(args.teacher, "teacher checkpoint")
    data, inputs = _load_training_data(args)
    inputs["teacher"] = teacher_path
    teacher = load_checkpoint(teacher_path)
    spec = DistillSpec(mlm_weight=args.mlm_weight, nst_weight=args.nst_weight)
    result = distill(teacher, data, spec, config)
    out = Path(args.out)
    outputs = _write_pretrain_outputs(result, out)
    snapshot = config_to_dict(config)
    snapshot.update({"mlm_weight": spec.mlm_weight, "nst_weight": spec.nst_weight})
    _write_manifest(out / "manifest.json", "distill", snapshot, inputs, outputs, config.seed)
    print(f"distilled student -> {out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    config = _finetune_config(args)
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    dataset_path = _require_file(args.dataset, "dataset")
    checkpoint = load_checkpoint(ckpt_path)
    dataset = load_mcqa(dataset_path)
    train = dataset.split("train")
    if args.train_size == "full":
        subset = train
    else:
        size = int(args.train_size)
        if size > len(train):
            raise ConfigError(f"train split has {len(train)} items, cannot take {size}")
        from .evaluation import _subsample

        subset = _subsample(dataset, size, config.seed, 0)
    model = finetune(checkpoint, dataset, subset, args.learning_rate, config)
    test = dataset.split("test")
    if not test:
        raise ConfigError(f"dataset {dataset.name!r} has no test split")
    accuracy = evaluate(model, test)
    result = {
        "dataset": dataset.name,
        "method": str(checkpoint.meta.get("method", "unknown")),
        "train_size": args.train_size,
        "learning_rate": args.learning_rate,
        "test_accuracy": accuracy,
        "final_loss": model.loss_rows[-1]["loss"] if model.loss_rows else None,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "finetune",
        {**_finetune_config_dict(config), "learning_rate": args.learning_rate,
         "train_size": args.train_size},
        {"checkpoint": ckpt_path, "dataset": dataset_path},
        [out],
        config.seed,
    )
    print(f"test accuracy {accuracy:.3f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _finetune_config(args)
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    dataset_path = _require_file(args.dataset, "dataset")
    checkpoint = load_checkpoint(ckpt_path)
    dataset = load_mcqa(dataset_path)
    if args.protocol == "full":
        runs = [supervised_protocol(checkpoint, dataset, config, method=args.method)]
    else:
        size = 64 if args.protocol == "low64" else 128
        runs = low_resource_protocol(
            checkpoint, dataset, config, sizes=(size,), method=args.method
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_runs(runs, out)
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "eval",
        {**_finetune_config_dict(config), "protocol": args.protocol},
        {"checkpoint": ckpt_path, "dataset": dataset_path},
        [out],
        config.seed,
    )
    for run in runs:
        print(
            f"{run.method} {run.dataset} size={run.size}: "
            f"{100 * run.mean:.1f}±{100 * run.std:.1f} (lr={run.learning_rate})"
        )
    return EXIT_OK


def _plot_csv(series) -> str:
    lines = ["method,size,mean_accuracy"]
    for method, points in series:
        for size, mean in points:
            lines.append(f"{method},{size},{mean!r}")
    return "\n".join(lines) + "\n"


def _plot_svg(series) -> str:
    """Minimal line chart: accuracy against train size, one polyline per
    method."""
    width, height, margin = 480, 320, 48
    sizes = []
    for _, points in series:
        for size, _ in points:
            if size not in sizes:
                sizes.append(size)
    xs = {
        size: margin + i * (width - 2 * margin) / max(len(sizes) - 1, 1)
        for i, size in enumerate(sizes)
    }

    def y_of(acc):
        return height - margin - acc * (height - 2 * margin)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
    ]
    for size, x in xs.items():
        parts.append(
            f'<text x="{x:.1f}" y="{height - margin + 16}" font-size="11" '
            f'text-anchor="middle">{size}</text>'
        )
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{margin - 6}" y="{y_of(tick):.1f}" font-size="11" '
            f'text-anchor="end">{tick:.2f}</text>'
        )
    for index, (method, points) in enumerate(series):
        color = palette[index % len(palette)]
        coords = " ".join(f"{xs[s]:.1f},{y_of(a):.1f}" for s, a in points)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * index}" font-size="11" '
            f'fill="{color}">{method}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args) -> int:
    runs = []
    inputs = {}
    for index, raw in enumerate(args.runs):
        path = _require_file(raw, "runs file")
        inputs[f"runs{index}"] = path
        runs.extend(load_runs(path))
    result = report(runs, layout=args.layout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "report.txt", out / "report.csv"]
    outputs[0].write_text(result.text, encoding="utf-8")
    outputs[1].write_text(result.csv, encoding="utf-8")
    if args.plot_data or args.render:
        series = plot_series(runs)
        plot_path = out / "plot.csv"
        plot_path.write_text(_plot_csv(series), encoding="utf-8")
        outputs.append(plot_path)
        if args.render:
            svg_path = out / "plot.svg"
            svg_path.write_text(_plot_svg(series), encoding="utf-8")
            outputs.append(svg_path)
    _write_manifest(
        out / "manifest.json",
        "report",
        {"layout": args.layout, "plot_data": bool(args.plot_data),
         "render": bool(args.render)},
        inputs,
        outputs,
        args.seed if args.seed is not None else 0,
    )
    print(result.text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmkt",
        description="Visual-knowledge transfer pipeline: synthesize data, "
        "perturb captions, pre-train, distill, fine-tune, evaluate, report.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="master seed; overrides the config file")
    common.add_argument("--config", default=None,
                        help="JSON config file for the command")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate the synthetic grounded-language world")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("perturb", parents=[common],
                       help="generate caption perturbation records")
    p.add_argument("--pairs", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--tags", required=True)
    p.add_argument("--oracle", choices=("frequency", "table"), default="frequency")
    p.add_argument("--oracle-table", default=None)
    p.add_argument("--out", required=True, help="output records file")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("pretrain", parents=[common],
                       help="intermediate pre-training with a named method")
    p.add_argument("--method", required=True, choices=METHOD_NAMES)
    p.add_argument("--pairs", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--bank", default=None)
    p.add_argument("--perturbations", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("teacher", parents=[common],
                       help="train a cross-modal teacher for distillation")
    p.add_argument("--objective", choices=("cmcl", "hinge"), default="cmcl")
    p.add_argument("--pairs", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_teacher)

    p = sub.add_parser("distill", parents=[common],
                       help="distill a teacher checkpoint into a text-only student")
    p.add_argument("--teacher", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--mlm-weight", type=float, default=1.0)
    p.add_argument("--nst-weight", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("finetune", parents=[common],
                       help="one fine-tune run at a fixed learning rate")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--learning-rate", type=float, required=True)
    p.add_argument("--train-size", default="full",
                   help="subset size or 'full' (default full)")
    p.add_argument("--out", required=True, help="output JSON file")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", parents=[common],
                       help="run the low-resource or supervised protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--protocol", choices=("low64", "low128", "full"), required=True)
    p.add_argument("--method", default=None,
                   help="method label override for the report")
    p.add_argument("--out", required=True, help="output runs file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common],
                       help="render the result table, CSV, and plot data")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--layout", choices=("low_resource", "full"),
                   default="low_resource")
    p.add_argument("--plot-data", action="store_true",
                   help="also write accuracy-vs-size series CSV")
    p.add_argument("--render", action="store_true",
                   help="also render the series as a simple SVG chart")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CmktError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything unplanned is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
