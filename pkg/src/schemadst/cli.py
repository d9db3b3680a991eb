"""Command line pipeline: synth -> preprocess -> train -> predict -> track -> evaluate.

Every command writes a `<command>_config.json` with its resolved arguments
next to its outputs. A JSON file passed via --config supplies argument
defaults (keys use underscores); explicit flags still win. Relative input
paths are also tried under $SCHEMADST_DATA_ROOT.

Exit codes: 0 success, 2 usage, 3 bad input (parse/validation/config),
4 runtime failure (e.g. diverged training).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, ParseError, SchemaDstError, ValidationError


def _resolve(path: str) -> Path:
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        root = os.environ.get("SCHEMADST_DATA_ROOT")
        if root and (Path(root) / p).exists():
            return Path(root) / p
    return p


def _write_resolved_config(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k != "func"
    }
    payload["_command"] = command
    payload["_version"] = __version__
    (out_dir / f"{command}_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _schema_texts(schemas) -> list[str]:
    texts = []
    for schema in schemas:
        texts.append(schema.description)
        for intent in schema.intents:
            texts.extend([intent.display_name, intent.description])
        for slot in schema.slots:
            texts.extend([slot.display_name, slot.description])
            texts.extend(slot.display_values)
    return texts


def _cmd_synth(args) -> int:
    from .synth import SynthConfig, generate, write_corpus

    config = SynthConfig(
        n_services=args.services,
        n_seen_services=args.seen_services,
        train_dialogues=args.train_dialogues,
        eval_dialogues=args.eval_dialogues,
        turns_per_dialogue=args.turns,
        seed=args.seed,
    )
    corpus = generate(config)
    out = Path(args.out)
    paths = write_corpus(corpus, out)
    _write_resolved_config(out, "synth", args)
    print(
        f"wrote {len(corpus.train_dialogues)} train / {len(corpus.eval_dialogues)} eval "
        f"dialogues over {config.n_services} services to {out}"
    )
    for k, v in sorted(paths.items()):
        print(f"  {k}: {v}")
    return 0


def _cmd_preprocess(args) -> int:
    from .data import load_dialogues, load_schemas, normalize_schema_names
    from .examples import BuilderConfig, build_corpus, compute_task_stats, save_examples_jsonl
    from .tokenization import SubwordTokenizer

    schemas = load_schemas(_resolve(args.schemas))
    dialogues = load_dialogues(_resolve(args.dialogues), schemas)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.vocab_in:
        tokenizer = SubwordTokenizer.from_vocab_file(_resolve(args.vocab_in))
    else:
        display_schemas = [normalize_schema_names(s, args.normalize_names) for s in schemas]
        texts = _schema_texts(display_schemas)
        for d in dialogues:
            for t in d.turns:
                texts.extend([t.system_utterance, t.user_utterance])
        tokenizer = SubwordTokenizer.build_from_texts(texts)
    tokenizer.save_vocab(out / "vocab.txt")

    config = BuilderConfig(
        max_seq_len=args.max_seq_len,
        normalize_names=args.normalize_names,
        balance=args.balance,
        seed=args.seed,
    )
    examples, counters = build_corpus(dialogues, schemas, tokenizer, config)
    save_examples_jsonl(examples, out / "examples.jsonl")
    stats = compute_task_stats(examples, counters)
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    _write_resolved_config(out, "preprocess", args)
    print(
        f"wrote {stats['total']} examples ({len(tokenizer)} vocab tokens) to {out}"
    )
    for name, row in stats["tasks"].items():
        ratio = "-" if row["negative_ratio"] is None else f"{row['negative_ratio']:.1f}%"
        print(f"  {name:<9} count={row['count']:<6} negatives={ratio}")
    return 0


def _split_dev(examples, dev_fraction: float, seed: int):
    import numpy as np

    ids = sorted({ex.dialogue_id for ex in examples})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_dev = max(1, int(len(ids) * dev_fraction)) if dev_fraction > 0 else 0
    dev_ids = {ids[i] for i in order[:n_dev]}
    train = [ex for ex in examples if ex.dialogue_id not in dev_ids]
    dev = [ex for ex in examples if ex.dialogue_id in dev_ids]
    return train, dev


def _cmd_train(args) -> int:
    from .examples import load_examples_jsonl
    from .model import ModelConfig, NluModel
    from .tokenization import SubwordTokenizer
    from .train import TrainConfig, train

    tokenizer = SubwordTokenizer.from_vocab_file(_resolve(args.vocab))
    examples = load_examples_jsonl(_resolve(args.examples))
    if args.dev_examples:
        dev = load_examples_jsonl(_resolve(args.dev_examples))
        train_ex = examples
    else:
        train_ex, dev = _split_dev(examples, args.dev_fraction, args.seed)

    model_config = ModelConfig(
        vocab_size=len(tokenizer),
        max_seq_len=args.max_seq_len,
        d_model=args.d_model,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        d_ff=args.d_ff,
        dropout=args.dropout,
        dtype=args.dtype,
        seed=args.seed,
    )
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        max_lr=args.max_lr,
        warmup_ratio=args.warmup_ratio,
        clip_norm=args.clip_norm,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = NluModel(model_config)
    result = train(
        model, tokenizer, train_ex, dev,
        train_config,
        checkpoint_path=out / "checkpoint.npz",
        log_path=out / "train_log.jsonl",
    )
    _write_resolved_config(out, "train", args)
    last = result.history[-1]["train_loss"] if result.history else math.nan
    best = result.best_dev_loss
    print(
        f"trained {result.steps} steps on {len(train_ex)} examples "
        f"(dev {len(dev)}); final train loss {last:.4f}, "
        f"best dev loss {'-' if math.isnan(best) else f'{best:.4f}'} "
        f"at epoch {result.best_epoch}"
    )
    print(f"checkpoint: {out / 'checkpoint.npz'}")
    return 0


def _iter_frame_predictions(dialogues, schemas_by_name, fn):
    """fn(turn, schema, prev_gold_state) for every frame, in corpus order."""
    for dlg in dialogues:
        prev: dict[str, dict] = {}
        for turn in dlg.turns:
            for frame in turn.frames:
                schema = schemas_by_name.get(frame.service)
                if schema is None:
                    raise ValidationError(
                        f"dialogue {dlg.dialogue_id}: unknown service {frame.service!r}"
                    )
                yield fn(turn, schema, prev.get(frame.service, {}))
                prev[frame.service] = frame.state_slot_values


def _cmd_predict(args) -> int:
    from .data import load_dialogues, load_schemas, normalize_schema_names
    from .examples import BuilderConfig
    from .predictions import (
        oracle_turn_predictions,
        predict_turn,
        save_predictions_jsonl,
    )

    schemas = load_schemas(_resolve(args.schemas))
    dialogues = load_dialogues(_resolve(args.dialogues), schemas)
    schemas_by_name = {
        s.service_name: normalize_schema_names(s, args.normalize_names) for s in schemas
    }

    if args.oracle:
        if not args.vocab:
            raise ConfigError("--oracle requires --vocab")
        from .tokenization import SubwordTokenizer

        tokenizer = SubwordTokenizer.from_vocab_file(_resolve(args.vocab))
        config = BuilderConfig(
            max_seq_len=args.max_seq_len, normalize_names=args.normalize_names,
            balance=False,
        )
        fn = lambda turn, schema, prev: oracle_turn_predictions(
            turn, schema, tokenizer, config, prev_state=prev
        )
    else:
        if not args.checkpoint:
            raise ConfigError("either --checkpoint or --oracle is required")
        from .model import load_checkpoint

        model, tokenizer, _ = load_checkpoint(_resolve(args.checkpoint))
        config = BuilderConfig(
            max_seq_len=model.config.max_seq_len,
            normalize_names=args.normalize_names,
            balance=False,
        )
        fn = lambda turn, schema, prev: predict_turn(model, tokenizer, turn, schema, config)

    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    jobs = list(_iter_frame_predictions(dialogues, schemas_by_name, lambda *a: a))
    if args.workers == 1:
        preds = [fn(*job) for job in jobs]
    else:
        # threads suffice: the heavy work happens in BLAS with the GIL released;
        # map() preserves submission order, keeping output deterministic
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            preds = list(pool.map(lambda job: fn(*job), jobs))
    out = Path(args.out)
    save_predictions_jsonl(preds, out)
    _write_resolved_config(out.parent, "predict", args)
    print(f"wrote {len(preds)} per-frame prediction bundles to {out}")
    return 0


def _cmd_track(args) -> int:
    from .data import load_dialogues, load_schemas
    from .predictions import load_predictions_jsonl
    from .tracker import TrackerThresholds, save_states_jsonl, track_from_predictions

    schemas = load_schemas(_resolve(args.schemas))
    dialogues = load_dialogues(_resolve(args.dialogues), schemas)
    predictions = load_predictions_jsonl(_resolve(args.predictions))
    thresholds = TrackerThresholds(
        intent=args.intent_threshold,
        requested=args.requested_threshold,
        max_answer_len=args.max_answer_len,
    )
    states = track_from_predictions(
        dialogues, {s.service_name: s for s in schemas}, predictions, thresholds
    )
    out = Path(args.out)
    save_states_jsonl(states, out)
    _write_resolved_config(out.parent, "track", args)
    print(f"wrote {len(states)} tracked frame states to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .data import load_dialogues, load_schemas, mark_seen_services
    from .metrics import evaluate
    from .tracker import load_states_jsonl

    schemas = load_schemas(_resolve(args.schemas))
    dialogues = load_dialogues(_resolve(args.dialogues), schemas)
    states = load_states_jsonl(_resolve(args.states))
    registry = None
    if args.train_schemas:
        registry = mark_seen_services(load_schemas(_resolve(args.train_schemas)), schemas)
    report = evaluate(dialogues, {s.service_name: s for s in schemas}, states, registry)
    out = Path(args.out) if args.out else None
    if out:
        out.write_text(report.to_json() + "\n")
        _write_resolved_config(out.parent, "evaluate", args)
    print(report.format_table("fuzzy" if args.fuzzy_match else "strict"))
    if out:
        print(f"report: {out}")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="schemadst",
        description="schema-guided dialogue state tracking pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = sub.add_parser("synth", help="generate a synthetic SGD-format corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--services", type=int, default=12)
    p.add_argument("--seen-services", type=int, default=9)
    p.add_argument("--train-dialogues", type=int, default=200)
    p.add_argument("--eval-dialogues", type=int, default=60)
    p.add_argument("--turns", type=int, default=4)
    p.set_defaults(func=_cmd_synth)
    commands["synth"] = p

    p = sub.add_parser("preprocess", help="build vocabulary and QA examples")
    p.add_argument("--schemas", required=True)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--vocab-in", default=None, help="reuse an existing vocab file")
    p.add_argument("--max-seq-len", type=int, default=128)
    p.add_argument("--normalize-names", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_preprocess)
    commands["preprocess"] = p

    p = sub.add_parser("train", help="train the NLU model on QA examples")
    p.add_argument("--examples", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--dev-examples", default=None)
    p.add_argument("--dev-fraction", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-lr", type=float, default=1e-4)
    p.add_argument("--warmup-ratio", type=float, default=0.1)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--max-seq-len", type=int, default=128)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=256)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)
    commands["train"] = p

    p = sub.add_parser("predict", help="write per-frame prediction bundles")
    p.add_argument("--schemas", required=True)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true", help="emit gold labels as predictions")
    p.add_argument("--vocab", default=None, help="vocab file (oracle mode)")
    p.add_argument("--max-seq-len", type=int, default=128)
    p.add_argument("--normalize-names", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--workers", type=int, default=1, help="parallel inference threads")
    p.set_defaults(func=_cmd_predict)
    commands["predict"] = p

    p = sub.add_parser("track", help="fold predictions into dialogue states")
    p.add_argument("--predictions", required=True)
    p.add_argument("--schemas", required=True)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--intent-threshold", type=float, default=0.5)
    p.add_argument("--requested-threshold", type=float, default=0.5)
    p.add_argument("--max-answer-len", type=int, default=30)
    p.set_defaults(func=_cmd_track)
    commands["track"] = p

    p = sub.add_parser("evaluate", help="score tracked states against gold")
    p.add_argument("--states", required=True)
    p.add_argument("--schemas", required=True)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--train-schemas", default=None, help="for seen/unseen buckets")
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument(
        "--fuzzy-match", action=argparse.BooleanOptionalAction, default=True,
        help="report fuzzy-matched goal accuracy in the table (JSON keeps both)",
    )
    p.set_defaults(func=_cmd_evaluate)
    commands["evaluate"] = p

    return parser, commands


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    if "--config" in argv:
        path = argv[argv.index("--config") + 1] if argv.index("--config") + 1 < len(argv) else None
        cmd = argv[0] if argv and not argv[0].startswith("-") else None
        if path and cmd in commands:
            try:
                defaults = json.loads(Path(_resolve(path)).read_text())
            except (OSError, json.JSONDecodeError) as e:
                print(f"error: cannot read config {path}: {e}", file=sys.stderr)
                return 3
            commands[cmd].set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except SchemaDstError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
