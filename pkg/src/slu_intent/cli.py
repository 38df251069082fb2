"""Command-line entry point: ``slu-intent <command> ...``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

REPORT_FIELDS = ("intent_error", "slot_errors", "n_utterances", "constrained", "beam_width", "checkpoint",
                 "manifest", "seed", "unknown_labels")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def emit_report(metrics: dict, fmt: str = "json", path=None) -> str:
    """Render an evaluation report as JSON or one ``field: value`` line per field; write it if ``path``."""
    ordered = {k: metrics[k] for k in REPORT_FIELDS if k in metrics}
    ordered.update({k: v for k, v in metrics.items() if k not in ordered})
    if fmt == "json":
        text = json.dumps(ordered, indent=2) + "\n"
    elif fmt == "text":
        lines = []
        for key, value in ordered.items():
            if isinstance(value, dict):
                lines.extend(f"{key}.{k}: {v}" for k, v in value.items())
            else:
                lines.append(f"{key}: {value}")
        text = "\n".join(lines) + "\n"
    else:
        raise UsageError(f"unknown report format {fmt!r}")
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------------------
# commands


def cmd_featurize(args) -> int:
    from .data import parse_manifest
    from .features import load_features

    records = parse_manifest(args.manifest)
    feats = load_features([r.audio_path for r in records], args.cache_dir)
    frames = sum(len(f) for f in feats)
    print(f"featurized {len(feats)} utterances ({frames} frames) into {args.cache_dir}")
    return EXIT_OK


def cmd_augment(args) -> int:
    from .augment import AugmentConfig, augment_manifest
    from .data import parse_manifest, write_manifest

    records = parse_manifest(args.manifest)
    config = AugmentConfig(seed=args.seed, noise_dir=args.noise_dir)
    out = augment_manifest(records, args.out_dir, config)
    target = Path(args.out_dir) / "manifest.csv"
    write_manifest(out, target)
    print(f"{len(records)} -> {len(out)} records written to {target}")
    return EXIT_OK


def cmd_split(args) -> int:
    from .data import make_unseen_wording_split, parse_manifest, write_split

    if args.mode == "remove-k" and args.k is None:
        raise UsageError("--mode remove-k needs --k")
    records = parse_manifest(args.manifest)
    test = parse_manifest(args.test) if args.test else None
    split = make_unseen_wording_split(records, args.mode, k=args.k, seed=args.seed, test=test)
    write_split(split, args.out_dir)
    counts = split.summary()["counts"]
    print(f"removed {counts['removed_wordings']} wordings, {counts['train_wordings']} training wordings remain")
    print(json.dumps(counts))
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import RunConfig
    from .data import parse_manifest
    from .train import train_model

    run = RunConfig.load(args.config) if args.config else RunConfig.from_mapping({})
    if args.seed is not None:
        run.train.seed = args.seed
    paths = dict(run.paths)
    for key, value in (("train_manifest", args.train), ("valid_manifest", args.valid), ("cache_dir", args.cache_dir)):
        if value is not None:
            paths[key] = str(value)
    run.paths = paths
    if "train_manifest" not in paths:
        raise UsageError("no training manifest: pass --train or set train_manifest in the config")
    train_records = parse_manifest(paths["train_manifest"])
    valid_records = parse_manifest(paths["valid_manifest"]) if "valid_manifest" in paths else []
    best, state = train_model(train_records, valid_records, run, args.out_dir, cache_dir=paths.get("cache_dir"),
                              resume=args.resume)
    if valid_records:
        print(f"best validation intent error {100 * state.best_validation_error:.2f}% at epoch {state.best_epoch}")
    print(f"best checkpoint: {best}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import parse_manifest
    from .train import evaluate_model

    if args.beam_width < 1:
        raise UsageError("--beam-width must be >= 1")
    records = parse_manifest(args.manifest)
    report, predictions = evaluate_model(args.checkpoint, records, constrained=args.constrained,
                                         beam_width=args.beam_width, cache_dir=args.cache_dir,
                                         manifest_name=str(args.manifest))
    emit_report(report, args.format, args.report)
    if args.predictions:
        path = Path(args.predictions)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for row in predictions:
                fh.write(json.dumps(row) + "\n")
    print(f"intent error: {report['intent_error']:.2f}% ({report['n_utterances']} utterances)")
    if any(report["unknown_labels"].values()):
        print(f"labels unseen in training (scored as errors): {report['unknown_labels']}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .estimator import SLUIntentClassifier
    from .features import load_features

    clf = SLUIntentClassifier.load(args.checkpoint)
    X = load_features(args.wav)
    preds = clf.predict_intents(X, constrained=args.constrained, beam_width=args.beam_width)
    for path, p in zip(args.wav, preds):
        labels = clf.vocab_.decode(p.tuple)
        print(json.dumps({"id": str(path), "action": labels[0], "object": labels[1], "location": labels[2],
                          "log_prob": p.log_prob}))
    return EXIT_OK


def cmd_toy_gen(args) -> int:
    from .data import ToySpec, generate_toy_dataset

    spec = ToySpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    if args.seed is not None:
        spec.seed = args.seed
    records = generate_toy_dataset(spec, args.out_dir)
    print(f"wrote {len(records)} utterances for {len(spec.intents())} intents to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slu-intent", description="Spoken intent classification toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("featurize", help="compute and cache MFCC features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("augment", help="write four corrupted copies of every utterance")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-dir", help="folder of interference WAVs (noise/, music/, speech/ or flat)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="hold out whole wordings from a training manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["remove-k", "most-frequent"], required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test", help="separate test manifest to partition into seen/unseen wordings")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model and keep the best validation checkpoint")
    p.add_argument("--config")
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cache-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true", help="continue from last.slum and train_state.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--constrained", action="store_true", help="only predict intents seen in training")
    p.add_argument("--beam-width", type=int, default=1)
    p.add_argument("--cache-dir")
    p.add_argument("--report", help="write the report here")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--predictions", help="write per-utterance JSON lines here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict intents for WAV files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--beam-width", type=int, default=1)
    p.add_argument("wav", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("toy-gen", help="synthesize a toy corpus from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_toy_gen)
    return parser


def _data_errors() -> tuple:
    from .augment import AugmentError
    from .checkpoint import CheckpointFormatError
    from .data import ManifestRowError, ManifestSchemaError, SplitConstraintError, ToySpecError
    from .features import InvalidStateError, TooShortError, UnsupportedRateError, WavFormatError

    return (AugmentError, CheckpointFormatError, ManifestRowError, ManifestSchemaError, SplitConstraintError,
            ToySpecError, InvalidStateError, TooShortError, UnsupportedRateError, WavFormatError, OSError,
            UnicodeDecodeError, json.JSONDecodeError)


def main(argv=None) -> int:
    from .model import ConfigError
    from .nn import NumericalError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _data_errors() as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
